//! Partitions a student into gradient-isolated local blocks, runs a few
//! local-learning steps against a teacher, and compares peak retained
//! activations with end-to-end training on the same batch.
//!
//! cargo run --release --example local_blocks

use lakd::data::{batch_iter, synth_generate, Normalization, SynthSpec};
use lakd::e2e::{EndToEnd, Objective};
use lakd::losses::LossWeights;
use lakd::metrics::memory_report;
use lakd::models::{NetSpec, TapNet};
use lakd::ndam::NdamConfig;
use lakd::optim::SgdConfig;
use lakd::sdm::{Distiller, PartitionPlan, StepInputs, TeacherTargets};
use lakd::Result;

fn main() -> Result<()> {
    let data = synth_generate(&SynthSpec { samples: 256, ..SynthSpec::default() })?;
    let net = |depth, width, seed| TapNet::new(NetSpec { depth, width, num_classes: 3, input_hw: (8, 8), seed });
    let mut teacher = net(9, 8, 100)?;
    teacher.freeze();

    let plan = PartitionPlan::from_locations(&[1, 4, 9], true, 9);
    let sgd = SgdConfig { clip_norm: Some(5.0), ..SgdConfig::default() };
    let mut local = Distiller::new(net(9, 4, 0)?, teacher.spec(), plan, sgd, 0)?;
    for b in &local.blocks {
        println!("block {}: units {:?}, aligned at {:?}, terminal {}", b.index, b.units, b.align_at, b.terminal);
    }

    let weights = LossWeights { alpha: 0.5, beta: 0.01, temperature: 4.0 };
    let ndam = NdamConfig::default();
    let mut first = None;
    for (step, batch) in batch_iter(&data, 32, 0, false, Normalization::default())?.enumerate() {
        let targets = TeacherTargets::compute(&teacher, &batch.images, &local.required_teacher_taps())?;
        let inputs = StepInputs { batch: &batch.images, labels: &batch.labels, teacher: &targets, weights: &weights, ndam: Some(&ndam) };
        let report = local.sdm_step(&inputs, 0.05)?;
        let losses: Vec<String> = report.block_losses.iter().map(|l| format!("{l:.2}")).collect();
        println!("step {step}: block losses [{}]", losses.join(", "));
        first.get_or_insert((batch, report.peak_retained));
    }

    let (batch, local_peak) = first.expect("at least one batch");
    let targets = TeacherTargets::compute(&teacher, &batch.images, &[9])?;
    let mut e2e = EndToEnd::new(net(9, 4, 0)?, Some(teacher.spec()), Objective::Attention, &[], sgd, 0)?;
    let e2e_peak = e2e.step(&batch.images, &batch.labels, Some(&targets), &weights, 0.05)?.peak_retained;
    let mem = memory_report(e2e_peak, local_peak);
    println!(
        "peak retained activations: end-to-end {}, local blocks {} ({:.1}% lower)",
        mem.baseline_peak, mem.candidate_peak, mem.reduction_pct
    );
    Ok(())
}
