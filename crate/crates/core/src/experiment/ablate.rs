use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Regime, RunConfig};
use super::train::{default_output_dir, load_splits, load_teacher, train_run, RunRecord, Splits};
use crate::error::{Error, Result};
use crate::models::{decode_checkpoint, encode_checkpoint};
use crate::ndam::NdamConfig;
use crate::sdm::PartitionPlan;

/// A detach-location cell: alignment units, and whether the gradient is cut
/// after each of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetachCell {
    pub detach: bool,
    pub locations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cells", rename_all = "kebab-case")]
pub enum Sweep {
    DetachLocations(Vec<DetachCell>),
    NdamGrid(Vec<NdamConfig>),
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Sweep::DetachLocations(c) => c.len(),
            Sweep::NdamGrid(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// No detach at `[3,6,9]`, then detach at `[3,6,9]`, `[2,5,9]`, `[1,4,9]`.
    pub fn detach_default() -> Self {
        let cell = |detach, locations: &[usize]| DetachCell { detach, locations: locations.to_vec() };
        Sweep::DetachLocations(vec![
            cell(false, &[3, 6, 9]),
            cell(true, &[3, 6, 9]),
            cell(true, &[2, 5, 9]),
            cell(true, &[1, 4, 9]),
        ])
    }

    /// Absolute value on/off at two pooling mixes, then weighting off.
    pub fn ndam_default() -> Self {
        Sweep::NdamGrid(vec![
            NdamConfig::new(0.5, 0.5, true),
            NdamConfig::new(0.5, 0.5, false),
            NdamConfig::new(0.25, 0.75, true),
            NdamConfig::new(0.25, 0.75, false),
            NdamConfig::DISABLED,
        ])
    }

    /// The configuration of cell `i`.
    pub fn cell_config(&self, base: &RunConfig, i: usize) -> RunConfig {
        let mut cfg = base.clone();
        cfg.regime = Regime::Lakd;
        match self {
            Sweep::DetachLocations(cells) => {
                let c = &cells[i];
                let mut plan = base.plan.clone().unwrap_or_else(PartitionPlan::end_to_end);
                let fresh = PartitionPlan::from_locations(&c.locations, c.detach, base.student.depth);
                plan.detach_after = fresh.detach_after;
                plan.align_at = fresh.align_at;
                cfg.plan = Some(plan);
            }
            Sweep::NdamGrid(cells) => {
                cfg.ndam = Some(cells[i]);
                if cfg.plan.is_none() {
                    cfg.plan = Some(PartitionPlan::from_locations(&[1, 4, 9], true, base.student.depth));
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub cell: usize,
    pub detach: Option<bool>,
    pub location: Option<Vec<usize>>,
    pub abs: Option<bool>,
    pub alpha_pool: Option<f64>,
    pub beta_pool: Option<f64>,
    pub ek: Option<f64>,
    pub top1: Option<f64>,
    /// Failure message; the other metric fields are empty when set.
    pub failed: Option<String>,
    pub config_hash: String,
    #[serde(skip)]
    pub record: Option<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub sweep: Sweep,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed.is_some()).count()
    }

    /// Detach sweeps: `detach,location,top1`. NDAM sweeps:
    /// `abs,alpha,beta,ek,top1`. A `status` column closes both.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let status = |r: &AblationRow| r.failed.as_ref().map_or("ok".to_string(), |m| format!("failed: {m}"));
        match &self.sweep {
            Sweep::DetachLocations(_) => {
                w.write_record(["detach", "location", "top1", "status"])?;
                for r in &self.rows {
                    let loc = r.location.as_ref().map(|l| format!("{l:?}")).unwrap_or_default();
                    let detach = if r.detach == Some(true) { "yes" } else { "no" };
                    w.write_record([detach.to_string(), loc, opt(r.top1), status(r)])?;
                }
            }
            Sweep::NdamGrid(_) => {
                w.write_record(["abs", "alpha", "beta", "ek", "top1", "status"])?;
                for r in &self.rows {
                    let abs = if r.abs == Some(true) { "yes" } else { "no" };
                    w.write_record([abs.to_string(), opt(r.alpha_pool), opt(r.beta_pool), opt(r.ek), opt(r.top1), status(r)])?;
                }
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn describe(sweep: &Sweep, i: usize, cfg: &RunConfig) -> AblationRow {
    let mut row = AblationRow {
        cell: i,
        detach: None,
        location: None,
        abs: None,
        alpha_pool: None,
        beta_pool: None,
        ek: None,
        top1: None,
        failed: None,
        config_hash: cfg.hash(),
        record: None,
    };
    match sweep {
        Sweep::DetachLocations(cells) => {
            row.detach = Some(cells[i].detach);
            row.location = Some(cells[i].locations.clone());
        }
        Sweep::NdamGrid(cells) => {
            row.abs = Some(cells[i].use_abs);
            row.alpha_pool = Some(cells[i].alpha_pool);
            row.beta_pool = Some(cells[i].beta_pool);
        }
    }
    row
}

/// Runs every cell on a worker pool. Each cell decodes its own teacher copy
/// from `teacher_bytes`; a failing cell is recorded and the sweep continues.
pub fn run_sweep(base: &RunConfig, sweep: &Sweep, splits: &Splits, teacher_bytes: Option<&[u8]>) -> Result<AblationTable> {
    if sweep.is_empty() {
        return Err(Error::Config("sweep: no cells".into()));
    }
    let rows = (0..sweep.len())
        .into_par_iter()
        .map(|i| {
            let cfg = sweep.cell_config(base, i);
            let mut row = describe(sweep, i, &cfg);
            let run = || -> Result<RunRecord> {
                cfg.validate_fields()?;
                let mut teacher = teacher_bytes.map(decode_checkpoint).transpose()?;
                teacher.iter_mut().for_each(|t| t.freeze());
                Ok(train_run(&cfg, splits, teacher.as_ref())?.record)
            };
            match run() {
                Ok(rec) => {
                    row.top1 = Some(rec.final_row().val_top1);
                    row.ek = rec.final_row().ek;
                    row.record = Some(rec);
                }
                Err(e) => row.failed = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(AblationTable { sweep: sweep.clone(), rows })
}

/// Loads data and teacher for `base`, runs the sweep, and writes
/// `ablation.csv`, `ablation.json` and one run directory per successful
/// cell under the output directory.
pub fn cmd_ablate(base: &RunConfig, sweep: &Sweep) -> Result<AblationTable> {
    sweep.cell_config(base, 0).validate()?;
    let splits = load_splits(&base.data)?;
    let ckpt = base
        .teacher
        .as_ref()
        .and_then(|t| t.checkpoint.as_ref())
        .ok_or_else(|| Error::Config("teacher.checkpoint: required for sweeps".into()))?;
    let teacher = load_teacher(ckpt, base, splits.train.num_classes)?;
    let bytes = encode_checkpoint(&teacher);
    let table = run_sweep(base, sweep, &splits, Some(&bytes))?;
    let dir = default_output_dir(base);
    write_table(&table, &dir)?;
    Ok(table)
}

pub fn write_table(table: &AblationTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("ablation.csv"), table.to_csv()?)?;
    std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(table)?)?;
    for row in &table.rows {
        if let Some(rec) = &row.record {
            let cell = dir.join(format!("cell{}", row.cell));
            std::fs::create_dir_all(&cell)?;
            std::fs::write(cell.join("record.csv"), rec.to_csv()?)?;
            std::fs::write(cell.join("record.json"), serde_json::to_string_pretty(rec)?)?;
        }
    }
    Ok(())
}
