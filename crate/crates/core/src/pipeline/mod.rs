//! End-to-end orchestration: configs, datasets, checkpoints and the stages
//! behind the `padsharp` commands.

mod checkpoint;
mod config;
mod dataset;
mod experiment;
mod export;
mod stages;

pub use checkpoint::{Checkpoint, Floats, Kind, ModelBlob, CHECKPOINT_VERSION};
pub use config::{DatasetSpec, EvalConfig, Profile, RunConfig, TrainOperator, CONFIG_VERSION};
pub use dataset::{synth_dataset, Dataset, Index, Observed, Split};
pub use experiment::{mean_of, run_ablation, run_experiment, AblationRow, ExperimentReport, VariantReport};
pub use export::{export_png, to_rgb8};
pub use stages::*;
