use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::DataConfig;
use super::export::export_attention;
use super::train::{cka_report, evaluate, load_splits, CkaReport, EvalSummary};
use crate::error::{Error, Result};
use crate::models::load_checkpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub checkpoint: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub teacher: Option<PathBuf>,
    pub batch_size: usize,
    /// Samples for the CKA matrix; 0 skips it.
    pub cka_samples: usize,
    /// Directory for attention PGMs; `None` skips the dump.
    #[serde(default)]
    pub attention_dir: Option<PathBuf>,
    #[serde(default)]
    pub attention_samples: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: EvalSummary,
    pub cka: Option<CkaReport>,
    pub attention_files: Vec<PathBuf>,
}

/// Evaluates a checkpoint on the validation split of `data`.
pub fn cmd_eval(req: &EvalRequest) -> Result<EvalReport> {
    let student = load_checkpoint(&req.checkpoint)?;
    let teacher = req.teacher.as_ref().map(load_checkpoint).transpose()?;
    let splits = load_splits(&req.data)?;
    let val = &splits.val;
    for (what, net) in std::iter::once(("checkpoint", &student)).chain(teacher.iter().map(|t| ("teacher", t))) {
        if net.num_classes() != val.num_classes {
            return Err(Error::ClassMismatch(format!(
                "{what} has {} classes, dataset has {}",
                net.num_classes(),
                val.num_classes
            )));
        }
    }
    let norm = req.data.normalization;
    let metrics = evaluate(&student, &Default::default(), &[], None, teacher.as_ref(), val, norm, req.batch_size.max(1))?;
    let cka = match &teacher {
        Some(t) if req.cka_samples > 1 => Some(cka_report(t, &student, val, norm, req.cka_samples, req.seed)?),
        _ => None,
    };
    let attention_files = match &req.attention_dir {
        Some(dir) => {
            let samples = if req.attention_samples.is_empty() { vec![0] } else { req.attention_samples.clone() };
            let units: Vec<usize> = (1..=student.depth()).collect();
            export_attention(&student, val, norm, &samples, &units, dir)?
        }
        None => Vec::new(),
    };
    Ok(EvalReport { metrics, cka, attention_files })
}
