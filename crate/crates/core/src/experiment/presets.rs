//! The small synthetic comparison used by the examples and the acceptance
//! suite: a 9x8 teacher trained on 2400 noisy low-contrast 8x8 images, and
//! 9x4 students trained on the first 300 of them.

use super::config::{DataConfig, DatasetSource, NetConfig, Regime, RunConfig};
use crate::data::{Normalization, SynthSpec};
use crate::losses::LossWeights;
use crate::ndam::NdamConfig;
use crate::sdm::{remap_alignment, AlignMode, PartitionPlan};

pub const TREND_STUDENT_SAMPLES: usize = 300;

/// 3000 images, the last 600 held out for validation.
pub fn trend_data() -> DataConfig {
    DataConfig {
        source: DatasetSource::Synthetic {
            synth: SynthSpec { num_classes: 3, samples: 3000, image_size: 8, noise: 0.6, contrast_min: 0.05, seed: 7 },
            val_samples: 600,
        },
        train_limit: None,
        val_limit: None,
        augment: false,
        normalization: Normalization::default(),
    }
}

/// Teacher run: scratch, depth 9, width 8, six epochs on the full train split.
pub fn trend_teacher() -> RunConfig {
    let mut cfg = RunConfig::synthetic_default(Regime::Scratch);
    cfg.data = trend_data();
    cfg.student = NetConfig { depth: 9, width: 8 };
    cfg.optim.epochs = 6;
    cfg.optim.clip_norm = None;
    cfg.eval.cka_samples = 0;
    cfg
}

/// Student arms of the detach comparison, in order: scratch, aligned at
/// `[3,6,9]` without detach, detached at `[3,6,9]`, and detached at the
/// forward-shifted `[1,4,9]`.
pub fn trend_students(seed: u64) -> Vec<(&'static str, RunConfig)> {
    let mut base = RunConfig::synthetic_default(Regime::Scratch);
    base.data = trend_data();
    base.data.train_limit = Some(TREND_STUDENT_SAMPLES);
    base.student = NetConfig { depth: 9, width: 4 };
    base.weights = LossWeights { alpha: 0.5, beta: 0.01, temperature: 4.0 };
    base.optim.epochs = 15;
    base.optim.lr = 0.05;
    base.optim.clip_norm = Some(5.0);
    base.eval.cka_samples = 0;
    base.seed = seed;

    let standard = [3, 6, 9];
    let shifted = remap_alignment(&standard, AlignMode::ForwardShifted).expect("valid base alignment");
    let lakd = |locations: &[usize], detach: bool| {
        let mut cfg = base.clone();
        cfg.regime = Regime::Lakd;
        let mut plan = PartitionPlan::from_locations(locations, detach, cfg.student.depth);
        plan.terminal_feature = false;
        cfg.plan = Some(plan);
        cfg.ndam = Some(NdamConfig::default());
        cfg
    };
    vec![
        ("scratch", base.clone()),
        ("no-detach", lakd(&standard, false)),
        ("detach-standard", lakd(&standard, true)),
        ("detach-shifted", lakd(&shifted, true)),
    ]
}
