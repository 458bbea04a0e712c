//! Run configuration, training regimes, sweeps and result files.
//!
//! A run directory holds `record.csv` (one row per epoch, columns in
//! [`RunRecord::CSV_HEADER`] order), `record.json` (the full record with
//! config and CKA matrix) and `model.ckpt`. Every output carries the SHA-256
//! of the canonical config JSON.

mod ablate;
mod config;
mod eval;
mod export;
mod presets;
mod train;

pub use ablate::{cmd_ablate, run_sweep, write_table, AblationRow, AblationTable, DetachCell, Sweep};
pub use config::{
    DataConfig, DatasetSource, EvalConfig, NetConfig, OptimConfig, Regime, RunConfig, Schedule, TeacherConfig,
};
pub use eval::{cmd_eval, EvalReport, EvalRequest};
pub use export::{attention_image, decode_pgm, encode_pgm, export_attention};
pub use presets::{trend_data, trend_students, trend_teacher, TREND_STUDENT_SAMPLES};
pub use train::{
    alignment_pairs, cka_report, cmd_train, default_output_dir, evaluate, forward_collect, load_splits, load_teacher,
    train_run, write_outputs, CkaReport, EpochRow, EvalSummary, RunOutcome, RunPaths, RunRecord, Splits, Trainer,
};
