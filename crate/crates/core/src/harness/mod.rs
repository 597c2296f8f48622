//! Synthetic data, classification protocols, experiment drivers,
//! benchmarking and file formats.

pub mod bench;
pub mod classify;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod gradcheck;
pub mod synth;

pub use bench::{bench, bench_scaling, BenchConfig, BenchRow, ScalingReport};
pub use classify::{classify_group_energy, classify_min_objective, ClassModel, Coder};
pub use config::Config;
pub use gradcheck::{run_gradcheck, Architecture, GradcheckConfig, GradcheckReport};
pub use synth::{gen_synthetic, gen_with_dictionary, SynthData, SynthSpec};
