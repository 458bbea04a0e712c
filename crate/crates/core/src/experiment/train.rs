use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, DatasetSource, Regime, RunConfig};
use crate::data::{batch_iter, eval_batches, load_cifar_files, synth_generate, Dataset, Normalization};
use crate::e2e::{EndToEnd, Objective};
use crate::error::{Error, Result};
use crate::losses::feature_loss;
use crate::metrics::{cka_linear, ek_metric, tap_matrix, topk_accuracy, PredictionLog, CKA_MAX_FEATURES};
use crate::ndam::NdamConfig;
use crate::models::{load_checkpoint, save_checkpoint, NetSpec, Projector, TapNet};
use crate::sdm::{aligned_student_tap, Distiller, StepInputs, StepReport, TeacherTargets, TermKind};
use crate::tensor::Tensor;

/// Training and validation data of one run.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
}

pub fn load_splits(cfg: &DataConfig) -> Result<Splits> {
    let (mut train, mut val) = match &cfg.source {
        DatasetSource::Synthetic { synth, val_samples } => {
            let all = synth_generate(synth)?;
            let cut = all.len().saturating_sub(*val_samples);
            (all.slice(0..cut), all.slice(cut..all.len()))
        }
        DatasetSource::Cifar10 { train, test } => (load_cifar_files(train)?, load_cifar_files(test)?),
    };
    if let Some(n) = cfg.train_limit {
        train = train.slice(0..n.min(train.len()));
    }
    if let Some(n) = cfg.val_limit {
        val = val.slice(0..n.min(val.len()));
    }
    Ok(Splits { train, val })
}

/// Loads a teacher checkpoint, freezes it, and checks it against the data
/// and any expected architecture.
pub fn load_teacher(path: &Path, cfg: &RunConfig, num_classes: usize) -> Result<TapNet> {
    let mut t = load_checkpoint(path)?;
    if let Some(tc) = &cfg.teacher {
        if tc.depth.is_some_and(|d| d != t.depth()) || tc.width.is_some_and(|w| w != t.spec().width) {
            return Err(Error::Checkpoint(format!(
                "{}: architecture depth {} width {} does not match teacher config",
                path.display(),
                t.depth(),
                t.spec().width
            )));
        }
    }
    if t.num_classes() != num_classes {
        return Err(Error::ClassMismatch(format!(
            "teacher {} has {} classes, dataset has {num_classes}",
            path.display(),
            t.num_classes()
        )));
    }
    t.freeze();
    Ok(t)
}

/// The regime-specific optimizer state around a student.
#[derive(Debug, Clone)]
pub enum Trainer {
    EndToEnd(EndToEnd),
    Local(Distiller),
}

impl Trainer {
    pub fn build(cfg: &RunConfig, num_classes: usize, input_hw: (usize, usize), teacher: Option<&TapNet>) -> Result<Self> {
        let spec = NetSpec { depth: cfg.student.depth, width: cfg.student.width, num_classes, input_hw, seed: cfg.seed };
        let student = TapNet::new(spec)?;
        let proj_seed = cfg.seed ^ 0x5DEE_CE66;
        let need_teacher = || teacher.map(|t| t.spec()).ok_or_else(|| Error::Config("teacher: required for this regime".into()));
        Ok(match cfg.regime {
            Regime::Scratch => Trainer::EndToEnd(EndToEnd::new(student, None, Objective::Hard, &[], cfg.optim.sgd(), proj_seed)?),
            Regime::TraditionalKd => Trainer::EndToEnd(EndToEnd::new(
                student,
                Some(need_teacher()?),
                Objective::Traditional,
                &cfg.kd_align,
                cfg.optim.sgd(),
                proj_seed,
            )?),
            Regime::Lakd => {
                let plan = cfg.plan.clone().ok_or_else(|| Error::Config("plan: required for regime lakd".into()))?;
                Trainer::Local(Distiller::new(student, need_teacher()?, plan, cfg.optim.sgd(), proj_seed)?)
            }
        })
    }

    pub fn student(&self) -> &TapNet {
        match self {
            Trainer::EndToEnd(e) => &e.student,
            Trainer::Local(d) => &d.student,
        }
    }

    pub fn projectors(&self) -> &BTreeMap<usize, Projector> {
        match self {
            Trainer::EndToEnd(e) => &e.projectors,
            Trainer::Local(d) => &d.projectors,
        }
    }

    pub fn required_teacher_taps(&self) -> Vec<usize> {
        match self {
            Trainer::EndToEnd(e) => e.required_teacher_taps(),
            Trainer::Local(d) => d.required_teacher_taps(),
        }
    }

    pub fn step(&mut self, batch: &Tensor, labels: &[usize], teacher: Option<&TeacherTargets>, cfg: &RunConfig, lr: f64) -> Result<StepReport> {
        match self {
            Trainer::EndToEnd(e) => e.step(batch, labels, teacher, &cfg.weights, lr),
            Trainer::Local(d) => {
                let teacher = teacher.ok_or_else(|| Error::Config("teacher: required for regime lakd".into()))?;
                let inputs = StepInputs { batch, labels, teacher, weights: &cfg.weights, ndam: cfg.ndam.as_ref() };
                d.sdm_step(&inputs, lr)
            }
        }
    }
}

/// Student alignment units with their teacher tap, in unit order.
pub fn alignment_pairs(student_depth: usize, teacher_depth: usize, units: impl IntoIterator<Item = usize>) -> Vec<(usize, usize)> {
    units.into_iter().map(|l| (l, crate::sdm::teacher_index(l, student_depth, teacher_depth))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Batch-mean value of each unweighted loss term.
    pub terms: BTreeMap<String, f64>,
    pub val_top1: f64,
    pub val_top5: f64,
    pub ek: Option<f64>,
    pub layer_l2: Vec<f64>,
    pub peak_retained: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkaReport {
    pub teacher_layers: Vec<usize>,
    pub student_layers: Vec<usize>,
    /// `matrix[i][j]` compares teacher layer `i` with student layer `j`;
    /// `None` where a layer's activations were degenerate.
    pub matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: RunConfig,
    /// Student units reported in `layer_l2`.
    pub align_layers: Vec<usize>,
    pub rows: Vec<EpochRow>,
    pub cka: Option<CkaReport>,
}

impl RunRecord {
    pub fn final_row(&self) -> &EpochRow {
        self.rows.last().expect("a record has at least one epoch")
    }

    pub const CSV_HEADER: [&'static str; 13] = [
        "epoch",
        "train_loss",
        "hard",
        "soft",
        "attention",
        "feature",
        "val_top1",
        "val_top5",
        "ek",
        "layer_l2",
        "peak_retained",
        "seconds",
        "config_hash",
    ];

    /// One row per epoch in [`RunRecord::CSV_HEADER`] order. `feature` sums
    /// every alignment term; `layer_l2` joins per-layer values with `;`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.rows {
            let term = |k: &str| r.terms.get(k).map(|v| v.to_string()).unwrap_or_default();
            let feature: f64 = r.terms.iter().filter(|(k, _)| k.starts_with("feature")).map(|(_, v)| v).sum();
            let l2: Vec<String> = r.layer_l2.iter().map(|v| v.to_string()).collect();
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                term("hard"),
                term("soft"),
                term("attention"),
                feature.to_string(),
                r.val_top1.to_string(),
                r.val_top5.to_string(),
                r.ek.map(|v| v.to_string()).unwrap_or_default(),
                l2.join(";"),
                r.peak_retained.to_string(),
                r.seconds.to_string(),
                self.config_hash.clone(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// The record with every wall-clock field zeroed, for comparing runs.
    pub fn without_timing(&self) -> RunRecord {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.seconds = 0.0);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub samples: usize,
    pub top1: f64,
    pub top5: f64,
    pub ek: Option<f64>,
    /// Why EK is missing, when a teacher was given.
    pub ek_note: Option<String>,
    pub layer_l2: Vec<f64>,
}

/// Untracked forward that also returns the outputs of `units`.
pub fn forward_collect(net: &TapNet, batch: &Tensor, units: &[usize]) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
    net.check_batch(batch)?;
    let mut h = batch.detach();
    let mut taps = BTreeMap::new();
    for u in 1..=net.depth() {
        h = net.unit_forward(u, &h, None)?.detach();
        if units.contains(&u) {
            taps.insert(u, h.clone());
        }
    }
    Ok((net.head(&h, None)?.detach(), taps))
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .values()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best }))
        .collect()
}

/// Top-1/top-5 on `data`, plus EK and per-layer L2 when a teacher is given.
/// The L2 compares teacher taps with the projected student taps, weighted
/// by `ndam` when set, exactly as the training loss sees them.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    student: &TapNet,
    projectors: &BTreeMap<usize, Projector>,
    pairs: &[(usize, usize)],
    ndam: Option<&NdamConfig>,
    teacher: Option<&TapNet>,
    data: &Dataset,
    norm: Normalization,
    batch_size: usize,
) -> Result<EvalSummary> {
    if student.num_classes() != data.num_classes {
        return Err(Error::ClassMismatch(format!(
            "network has {} classes, dataset has {}",
            student.num_classes(),
            data.num_classes
        )));
    }
    let k5 = 5.min(student.num_classes());
    let s_units: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let t_units: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let (mut hit1, mut hit5) = (0.0, 0.0);
    let mut l2 = vec![0.0; pairs.len()];
    let (mut s_pred, mut t_pred, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for b in eval_batches(data, batch_size, norm) {
        let n = b.labels.len() as f64;
        let (logits, s_taps) = forward_collect(student, &b.images, &s_units)?;
        hit1 += topk_accuracy(&logits, &b.labels, 1)? * n;
        hit5 += topk_accuracy(&logits, &b.labels, k5)? * n;
        s_pred.extend(argmax_rows(&logits));
        if let Some(t) = teacher {
            let (t_logits, t_taps) = forward_collect(t, &b.images, &t_units)?;
            t_pred.extend(argmax_rows(&t_logits));
            for (i, &(su, tu)) in pairs.iter().enumerate() {
                let s = aligned_student_tap(&s_taps[&su], &t_taps[&tu], projectors.get(&su), ndam, None)?;
                l2[i] += feature_loss(&t_taps[&tu], &s)?.item() * n;
            }
        }
        labels.extend(b.labels);
    }
    let total = data.len() as f64;
    let (ek, ek_note) = if teacher.is_some() {
        let log = PredictionLog::new(t_pred, s_pred, labels, student.num_classes())?;
        match ek_metric(&log) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    Ok(EvalSummary {
        samples: data.len(),
        top1: hit1 / total,
        top5: hit5 / total,
        ek,
        ek_note,
        layer_l2: if teacher.is_some() { l2.iter().map(|v| v / total).collect() } else { Vec::new() },
    })
}

/// Linear CKA between every teacher unit and every student unit on the first
/// `samples` images of `data`.
pub fn cka_report(teacher: &TapNet, student: &TapNet, data: &Dataset, norm: Normalization, samples: usize, seed: u64) -> Result<CkaReport> {
    let subset = data.slice(0..samples.min(data.len()));
    let t_layers: Vec<usize> = (1..=teacher.depth()).collect();
    let s_layers: Vec<usize> = (1..=student.depth()).collect();
    let mut t_cols: BTreeMap<usize, Vec<Tensor>> = BTreeMap::new();
    let mut s_cols: BTreeMap<usize, Vec<Tensor>> = BTreeMap::new();
    for b in eval_batches(&subset, subset.len(), norm) {
        let (_, tt) = forward_collect(teacher, &b.images, &t_layers)?;
        let (_, st) = forward_collect(student, &b.images, &s_layers)?;
        tt.into_iter().for_each(|(k, v)| t_cols.entry(k).or_default().push(v));
        st.into_iter().for_each(|(k, v)| s_cols.entry(k).or_default().push(v));
    }
    let mats = |cols: &BTreeMap<usize, Vec<Tensor>>| -> Result<Vec<_>> {
        cols.values()
            .map(|parts| {
                let refs: Vec<&Tensor> = parts.iter().collect();
                tap_matrix(&Tensor::concat(&refs, 0)?, CKA_MAX_FEATURES, seed)
            })
            .collect()
    };
    let (tm, sm) = (mats(&t_cols)?, mats(&s_cols)?);
    let matrix = tm
        .iter()
        .map(|x| sm.iter().map(|y| cka_linear(x, y).ok()).collect())
        .collect();
    Ok(CkaReport { teacher_layers: t_layers, student_layers: s_layers, matrix })
}

/// A finished run: the trained student, its projectors, and the record.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trainer: Trainer,
    pub record: RunRecord,
}

impl RunOutcome {
    pub fn student(&self) -> &TapNet {
        self.trainer.student()
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

/// Trains one configuration in memory. `teacher` must be frozen and is
/// required by the distillation regimes.
pub fn train_run(cfg: &RunConfig, splits: &Splits, teacher: Option<&TapNet>) -> Result<RunOutcome> {
    let data = &splits.train;
    if data.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("data: empty training or validation split".into()));
    }
    let teacher = if cfg.regime == Regime::Scratch { None } else { teacher };
    if let Some(t) = teacher {
        if t.num_classes() != data.num_classes {
            return Err(Error::ClassMismatch(format!(
                "teacher has {} classes, dataset has {}",
                t.num_classes(),
                data.num_classes
            )));
        }
    }
    let mut trainer = Trainer::build(cfg, data.num_classes, (data.height, data.width), teacher)?;
    let teacher_taps = trainer.required_teacher_taps();
    let align: Vec<usize> = match (cfg.regime, teacher) {
        (Regime::Scratch, _) | (_, None) => Vec::new(),
        _ => trainer.projectors().keys().copied().collect(),
    };
    let pairs = teacher.map_or_else(Vec::new, |t| alignment_pairs(cfg.student.depth, t.depth(), align.iter().copied()));

    let bs = cfg.optim.batch_size.min(data.len());
    let steps_per_epoch = data.len().div_ceil(bs);
    let total = steps_per_epoch * cfg.optim.epochs;
    let norm = cfg.data.normalization;
    let mut step = 0;
    let mut rows = Vec::with_capacity(cfg.optim.epochs);
    for epoch in 1..=cfg.optim.epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut term_sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut peak = 0;
        let mut batches = 0usize;
        for batch in batch_iter(data, bs, epoch_seed(cfg.seed, epoch), cfg.data.augment, norm)? {
            let targets = teacher.map(|t| TeacherTargets::compute(t, &batch.images, &teacher_taps)).transpose()?;
            let report = trainer.step(&batch.images, &batch.labels, targets.as_ref(), cfg, cfg.optim.lr_at(step, total))?;
            step += 1;
            batches += 1;
            loss_sum += report.block_losses.iter().sum::<f64>();
            for (k, v) in &report.terms {
                *term_sums.entry(term_key(k)).or_default() += v;
            }
            peak = peak.max(report.peak_retained);
        }
        let ndam = if cfg.regime == Regime::Lakd { cfg.ndam.as_ref() } else { None };
        let eval = evaluate(trainer.student(), trainer.projectors(), &pairs, ndam, teacher, &splits.val, norm, cfg.eval.batch_size)?;
        let b = batches as f64;
        rows.push(EpochRow {
            epoch,
            train_loss: loss_sum / b,
            terms: term_sums.into_iter().map(|(k, v)| (k, v / b)).collect(),
            val_top1: eval.top1,
            val_top5: eval.top5,
            ek: eval.ek,
            layer_l2: eval.layer_l2,
            peak_retained: peak,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let cka = match teacher {
        Some(t) if cfg.eval.cka_samples > 1 => {
            Some(cka_report(t, trainer.student(), &splits.val, norm, cfg.eval.cka_samples, cfg.seed)?)
        }
        _ => None,
    };
    let record = RunRecord { config_hash: cfg.hash(), config: cfg.clone(), align_layers: align, rows, cka };
    Ok(RunOutcome { trainer, record })
}

fn term_key(k: &TermKind) -> String {
    k.to_string()
}

/// Output locations of a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        RunPaths { csv: dir.join("record.csv"), json: dir.join("record.json"), checkpoint: dir.join("model.ckpt"), dir }
    }
}

/// Writes `record.csv`, `record.json` and `model.ckpt` into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<RunPaths> {
    let paths = RunPaths::new(dir);
    std::fs::create_dir_all(&paths.dir)?;
    std::fs::write(&paths.csv, outcome.record.to_csv()?)?;
    std::fs::write(&paths.json, serde_json::to_string_pretty(&outcome.record)?)?;
    save_checkpoint(outcome.student(), &paths.checkpoint)?;
    Ok(paths)
}

pub fn default_output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.hash()[..12]))
}

/// Validates, loads data and teacher, trains, and writes the run directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let splits = load_splits(&cfg.data)?;
    let teacher = match (cfg.regime, cfg.teacher.as_ref().and_then(|t| t.checkpoint.as_ref())) {
        (Regime::Scratch, _) | (_, None) => None,
        (_, Some(p)) => Some(load_teacher(p, cfg, splits.train.num_classes)?),
    };
    let outcome = train_run(cfg, &splits, teacher.as_ref())?;
    write_outputs(&outcome, &default_output_dir(cfg))?;
    Ok(outcome.record)
}
