//! End-to-end orchestration: configuration, per-stage file operations,
//! phantoms and slice snapshots.

mod config;
mod phantom;
mod png;
mod run;

pub use config::{PipelineConfig, KEYS};
pub use phantom::{make_phantom, PhantomSpec};
pub use png::{export_png, quantize};
pub use run::{
    apply_file, evaluate_files, fuse_files, make_training_file, run_pipeline, train_file, upsample_file,
    sampler_seed, train_seed, write_manifest, PipelineOutcome, UpsampleInfo, BUILTIN_METHODS,
};
