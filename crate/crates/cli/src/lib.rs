//! Library side of the framebus operator binaries: benchmark runner,
//! scenario files, frame sources, and the profile builder. The `framebus`
//! binary is a thin wrapper over these modules.

pub mod bench;
pub mod profilegen;
pub mod scenario;
pub mod sources;
