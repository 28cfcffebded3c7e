//! Pixel kernels backing the quality knobs: bilinear resize, colorspace
//! conversion, box blur, and frame differencing.
//!
//! Every kernel ships a sequential implementation and, with the `parallel`
//! feature (default), a rayon one that splits work over rows. Both produce
//! bit-identical output: per-pixel results do not depend on scheduling, and
//! reductions use integer sums. The unsuffixed entry points dispatch on the
//! feature; the `_seq`/`_par` variants stay public for the benchmark suite.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

// ---------------------------------------------------------------------------
// bilinear resize

fn resize_row(
    src: &[u8],
    w: usize,
    h: usize,
    ch: usize,
    ow: usize,
    oh: usize,
    oy: usize,
    row: &mut [u8],
) {
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;
    let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
    let y0 = fy.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let wy = fy - y0 as f64;
    for ox in 0..ow {
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
        let x0 = fx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let wx = fx - x0 as f64;
        for c in 0..ch {
            let p00 = src[(y0 * w + x0) * ch + c] as f64;
            let p01 = src[(y0 * w + x1) * ch + c] as f64;
            let p10 = src[(y1 * w + x0) * ch + c] as f64;
            let p11 = src[(y1 * w + x1) * ch + c] as f64;
            let top = p00 + (p01 - p00) * wx;
            let bot = p10 + (p11 - p10) * wx;
            let v = top + (bot - top) * wy;
            row[ox * ch + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
}

pub fn resize_bilinear_seq(
    src: &[u8],
    w: usize,
    h: usize,
    ch: usize,
    ow: usize,
    oh: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; ow * oh * ch];
    for (oy, row) in out.chunks_mut(ow * ch).enumerate() {
        resize_row(src, w, h, ch, ow, oh, oy, row);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn resize_bilinear_par(
    src: &[u8],
    w: usize,
    h: usize,
    ch: usize,
    ow: usize,
    oh: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; ow * oh * ch];
    out.par_chunks_mut(ow * ch)
        .enumerate()
        .for_each(|(oy, row)| {
            resize_row(src, w, h, ch, ow, oh, oy, row);
        });
    out
}

pub fn resize_bilinear(src: &[u8], w: usize, h: usize, ch: usize, ow: usize, oh: usize) -> Vec<u8> {
    #[cfg(feature = "parallel")]
    return resize_bilinear_par(src, w, h, ch, ow, oh);
    #[cfg(not(feature = "parallel"))]
    resize_bilinear_seq(src, w, h, ch, ow, oh)
}

// ---------------------------------------------------------------------------
// normalized box blur, replicate-edge padding

/// Horizontal window sums for one row. Window offsets are
/// `-(k/2) ..= k-1-k/2` (anchor at `k/2`, matching the usual box-filter
/// convention for even kernels).
fn blur_row_sums(src_row: &[u8], w: usize, ch: usize, k: usize, sums: &mut [u32]) {
    let a = k / 2;
    let b = k - 1 - a;
    let clamp = |i: isize| -> usize { i.clamp(0, w as isize - 1) as usize };
    for c in 0..ch {
        let mut acc: u32 = 0;
        for d in -(a as isize)..=(b as isize) {
            acc += src_row[clamp(d) * ch + c] as u32;
        }
        sums[c] = acc;
        for x in 1..w {
            let gone = clamp(x as isize - 1 - a as isize);
            let come = clamp(x as isize + b as isize);
            acc += src_row[come * ch + c] as u32;
            acc -= src_row[gone * ch + c] as u32;
            sums[x * ch + c] = acc;
        }
    }
}

fn blur_vertical_row(
    row_sums: &[u32],
    w: usize,
    h: usize,
    ch: usize,
    k: usize,
    y: usize,
    out_row: &mut [u8],
) {
    let a = k / 2;
    let b = k - 1 - a;
    let k2 = (k * k) as u32;
    let stride = w * ch;
    for i in 0..stride {
        let mut acc: u32 = 0;
        for d in -(a as isize)..=(b as isize) {
            let yy = (y as isize + d).clamp(0, h as isize - 1) as usize;
            acc += row_sums[yy * stride + i];
        }
        // mean of the k*k window, rounded half up
        out_row[i] = ((2 * acc + k2) / (2 * k2)) as u8;
    }
}

pub fn box_blur_seq(src: &[u8], w: usize, h: usize, ch: usize, k: usize) -> Vec<u8> {
    let stride = w * ch;
    let mut row_sums = vec![0u32; stride * h];
    for (y, sums) in row_sums.chunks_mut(stride).enumerate() {
        blur_row_sums(&src[y * stride..(y + 1) * stride], w, ch, k, sums);
    }
    let mut out = vec![0u8; src.len()];
    for (y, row) in out.chunks_mut(stride).enumerate() {
        blur_vertical_row(&row_sums, w, h, ch, k, y, row);
    }
    out
}

#[cfg(feature = "parallel")]
pub fn box_blur_par(src: &[u8], w: usize, h: usize, ch: usize, k: usize) -> Vec<u8> {
    let stride = w * ch;
    let mut row_sums = vec![0u32; stride * h];
    row_sums
        .par_chunks_mut(stride)
        .enumerate()
        .for_each(|(y, sums)| blur_row_sums(&src[y * stride..(y + 1) * stride], w, ch, k, sums));
    let mut out = vec![0u8; src.len()];
    out.par_chunks_mut(stride)
        .enumerate()
        .for_each(|(y, row)| blur_vertical_row(&row_sums, w, h, ch, k, y, row));
    out
}

pub fn box_blur(src: &[u8], w: usize, h: usize, ch: usize, k: usize) -> Vec<u8> {
    #[cfg(feature = "parallel")]
    return box_blur_par(src, w, h, ch, k);
    #[cfg(not(feature = "parallel"))]
    box_blur_seq(src, w, h, ch, k)
}

// ---------------------------------------------------------------------------
// colorspace conversions (input is always interleaved BGR)

/// ITU-R BT.601 luma, integer arithmetic, round half up.
#[inline]
fn luma(b: u8, g: u8, r: u8) -> u8 {
    ((114 * b as u32 + 587 * g as u32 + 299 * r as u32 + 500) / 1000) as u8
}

#[inline]
fn pixel_hsv(b: u8, g: u8, r: u8) -> [u8; 3] {
    let (bf, gf, rf) = (b as f64, g as f64, r as f64);
    let v = bf.max(gf).max(rf);
    let min = bf.min(gf).min(rf);
    let delta = v - min;
    let s = if v > 0.0 { 255.0 * delta / v } else { 0.0 };
    let h = if delta > 0.0 {
        let h = if v == rf {
            60.0 * (gf - bf) / delta
        } else if v == gf {
            120.0 + 60.0 * (bf - rf) / delta
        } else {
            240.0 + 60.0 * (rf - gf) / delta
        };
        if h < 0.0 {
            h + 360.0
        } else {
            h
        }
    } else {
        0.0
    };
    // 8-bit quantization: hue halved into [0, 180)
    [
        (h / 2.0).round().clamp(0.0, 255.0) as u8,
        s.round().clamp(0.0, 255.0) as u8,
        v as u8,
    ]
}

/// sRGB byte to linear-light, then CIE XYZ under D65.
#[inline]
fn xyz(b: u8, g: u8, r: u8) -> (f64, f64, f64) {
    #[inline]
    fn lin(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let (rl, gl, bl) = (lin(r), lin(g), lin(b));
    let x = 0.412453 * rl + 0.357580 * gl + 0.180423 * bl;
    let y = 0.212671 * rl + 0.715160 * gl + 0.072169 * bl;
    let z = 0.019334 * rl + 0.119193 * gl + 0.950227 * bl;
    (x, y, z)
}

const XN: f64 = 0.950456;
const ZN: f64 = 1.088754;

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > 0.008856 {
        t.cbrt()
    } else {
        7.787 * t + 16.0 / 116.0
    }
}

#[inline]
fn pixel_lab(b: u8, g: u8, r: u8) -> [u8; 3] {
    let (x, y, z) = xyz(b, g, r);
    let fx = lab_f(x / XN);
    let fy = lab_f(y);
    let fz = lab_f(z / ZN);
    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let bb = 200.0 * (fy - fz);
    [
        (l * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8,
        (a + 128.0).round().clamp(0.0, 255.0) as u8,
        (bb + 128.0).round().clamp(0.0, 255.0) as u8,
    ]
}

#[inline]
fn pixel_luv(b: u8, g: u8, r: u8) -> [u8; 3] {
    const UN: f64 = 0.19793943;
    const VN: f64 = 0.46831096;
    let (x, y, z) = xyz(b, g, r);
    let l = 116.0 * lab_f(y) - 16.0;
    let denom = x + 15.0 * y + 3.0 * z;
    let (up, vp) = if denom > 0.0 {
        (4.0 * x / denom, 9.0 * y / denom)
    } else {
        (UN, VN)
    };
    let u = 13.0 * l * (up - UN);
    let v = 13.0 * l * (vp - VN);
    // 8-bit quantization over u in [-134, 220], v in [-140, 122]
    [
        (l * 255.0 / 100.0).round().clamp(0.0, 255.0) as u8,
        ((u + 134.0) * 255.0 / 354.0).round().clamp(0.0, 255.0) as u8,
        ((v + 140.0) * 255.0 / 262.0).round().clamp(0.0, 255.0) as u8,
    ]
}

fn map_rows_seq<const OC: usize>(
    src: &[u8],
    w: usize,
    f: impl Fn(u8, u8, u8) -> [u8; OC] + Sync,
) -> Vec<u8> {
    let mut out = vec![0u8; src.len() / 3 * OC];
    for (orow, srow) in out.chunks_mut(w * OC).zip(src.chunks(w * 3)) {
        map_row(srow, orow, &f);
    }
    out
}

#[cfg(feature = "parallel")]
fn map_rows_par<const OC: usize>(
    src: &[u8],
    w: usize,
    f: impl Fn(u8, u8, u8) -> [u8; OC] + Sync,
) -> Vec<u8> {
    let mut out = vec![0u8; src.len() / 3 * OC];
    out.par_chunks_mut(w * OC)
        .zip(src.par_chunks(w * 3))
        .for_each(|(orow, srow)| map_row(srow, orow, &f));
    out
}

#[inline]
fn map_row<const OC: usize>(srow: &[u8], orow: &mut [u8], f: &impl Fn(u8, u8, u8) -> [u8; OC]) {
    for (o, s) in orow.chunks_mut(OC).zip(srow.chunks(3)) {
        o.copy_from_slice(&f(s[0], s[1], s[2]));
    }
}

macro_rules! convert_fns {
    ($seq:ident, $par:ident, $both:ident, $oc:expr, $pixel:expr) => {
        pub fn $seq(src: &[u8], w: usize) -> Vec<u8> {
            map_rows_seq::<$oc>(src, w, $pixel)
        }
        #[cfg(feature = "parallel")]
        pub fn $par(src: &[u8], w: usize) -> Vec<u8> {
            map_rows_par::<$oc>(src, w, $pixel)
        }
        pub fn $both(src: &[u8], w: usize) -> Vec<u8> {
            #[cfg(feature = "parallel")]
            return $par(src, w);
            #[cfg(not(feature = "parallel"))]
            $seq(src, w)
        }
    };
}

convert_fns!(
    bgr_to_gray_seq,
    bgr_to_gray_par,
    bgr_to_gray,
    1,
    |b, g, r| [luma(b, g, r)]
);
convert_fns!(bgr_to_hsv_seq, bgr_to_hsv_par, bgr_to_hsv, 3, pixel_hsv);
convert_fns!(bgr_to_lab_seq, bgr_to_lab_par, bgr_to_lab, 3, pixel_lab);
convert_fns!(bgr_to_luv_seq, bgr_to_luv_par, bgr_to_luv, 3, pixel_luv);

// ---------------------------------------------------------------------------
// frame differencing

pub fn abs_diff_sum_seq(a: &[u8], b: &[u8]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as i32 - *y as i32).unsigned_abs() as u64)
        .sum()
}

#[cfg(feature = "parallel")]
pub fn abs_diff_sum_par(a: &[u8], b: &[u8]) -> u64 {
    a.par_chunks(64 * 1024)
        .zip(b.par_chunks(64 * 1024))
        .map(|(ca, cb)| abs_diff_sum_seq(ca, cb))
        .sum()
}

pub fn abs_diff_sum(a: &[u8], b: &[u8]) -> u64 {
    #[cfg(feature = "parallel")]
    return abs_diff_sum_par(a, b);
    #[cfg(not(feature = "parallel"))]
    abs_diff_sum_seq(a, b)
}
