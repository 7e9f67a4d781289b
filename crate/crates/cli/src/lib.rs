//! Library surface of the pipeline CLI: configuration, workdir layout,
//! stage runners and report writers. The binary in `main.rs` is a thin
//! argument parser over these.

pub mod config;
pub mod hash;
pub mod paths;
pub mod report;
pub mod stages;

pub use config::PipelineConfig;
pub use paths::Layout;
pub use stages::{
    cmd_build_records, cmd_eval, cmd_infer, cmd_synth, cmd_train_generator, cmd_train_segmentor, cmd_translate,
    StageContext, StageOutcome,
};
