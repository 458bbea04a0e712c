mod common;

use common::*;
use lakd::e2e::{EndToEnd, Objective};
use lakd::losses::LossWeights;
use lakd::ndam::NdamConfig;
use lakd::optim::SgdConfig;
use lakd::sdm::{combine, Distiller, PartitionPlan, StepInputs, TeacherTargets};
use lakd::Tape;

const W: LossWeights = LossWeights { alpha: 0.5, beta: 0.01, temperature: 4.0 };

fn distiller(plan: PartitionPlan, seed: u64) -> Distiller {
    let t = teacher(100);
    Distiller::new(net(9, 4, 3, seed), t.spec(), plan, SgdConfig::default(), seed).unwrap()
}

fn grad_is_zero(g: Option<Vec<f64>>) -> bool {
    g.is_none_or(|v| v.iter().all(|x| *x == 0.0))
}

#[test]
fn later_terms_never_reach_earlier_blocks() {
    let t = teacher(100);
    let mut r = rng(11);
    let ndam = NdamConfig::default();
    for trial in 0..6 {
        let plan = random_plan(&mut r, 9);
        let d = distiller(plan.clone(), trial);
        let (x, y) = batch(&mut r, 4);
        let targets = TeacherTargets::compute(&t, &x, &d.required_teacher_taps()).unwrap();
        let inputs = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &W, ndam: Some(&ndam) };
        let n_terms: Vec<usize> = d.block_losses(&inputs, &Tape::new()).unwrap().iter().map(|b| b.terms.len()).collect();
        for (owner, &count) in n_terms.iter().enumerate() {
            for k in 0..count {
                d.zero_grad();
                let outs = d.block_losses(&inputs, &Tape::new()).unwrap();
                outs[owner].terms[k].value.backward().unwrap();
                for b in 0..owner {
                    for (name, p) in d.block_params(b) {
                        assert!(grad_is_zero(p.grad()), "plan {plan:?}: {name} in block {b} touched by block {owner}");
                    }
                }
            }
        }
    }
}

#[test]
fn partitioned_forward_is_bitwise_unpartitioned() {
    let mut r = rng(12);
    for seed in 0..10 {
        let d = distiller(random_plan(&mut r, 9), seed);
        let (x, _) = batch(&mut r, 3);
        let a = d.partitioned_logits(&x, &Tape::new()).unwrap();
        let b = d.student.forward(&x, None).unwrap();
        assert_eq!(bits(a.values()), bits(b.values()));
    }
}

#[test]
fn single_block_without_features_follows_end_to_end() {
    let t = teacher(100);
    let weights = LossWeights { beta: 0.0, ..W };
    let sgd = SgdConfig::default();
    let plan = PartitionPlan::from_locations(&[3, 6, 9], false, 9);
    let mut local = Distiller::new(net(9, 4, 3, 5), t.spec(), plan, sgd, 5).unwrap();
    let mut e2e = EndToEnd::new(net(9, 4, 3, 5), Some(t.spec()), Objective::Attention, &[], sgd, 5).unwrap();
    let mut r = rng(13);
    for _ in 0..3 {
        let (x, y) = batch(&mut r, 4);
        let targets = TeacherTargets::compute(&t, &x, &[9]).unwrap();
        let inputs = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &weights, ndam: None };
        local.sdm_step(&inputs, 0.05).unwrap();
        e2e.step(&x, &y, Some(&targets), &weights, 0.05).unwrap();
        for ((na, a), (nb, b)) in local.student.params().zip(e2e.student.params()) {
            assert_eq!(na, nb);
            assert_eq!(bits(a.values()), bits(b.values()), "{na}");
        }
    }
}

#[test]
fn disabled_weighting_equals_bypassed_weighting() {
    let t = teacher(100);
    let plan = PartitionPlan::from_locations(&[1, 4, 9], true, 9);
    let mut a = distiller(plan.clone(), 3);
    let mut b = distiller(plan, 3);
    let mut r = rng(14);
    for _ in 0..2 {
        let (x, y) = batch(&mut r, 4);
        let targets = TeacherTargets::compute(&t, &x, &a.required_teacher_taps()).unwrap();
        let off = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &W, ndam: Some(&NdamConfig::DISABLED) };
        let none = StepInputs { ndam: None, ..off };
        let ra = a.sdm_step(&off, 0.01).unwrap();
        let rb = b.sdm_step(&none, 0.01).unwrap();
        assert_eq!(bits(&ra.block_losses), bits(&rb.block_losses));
    }
    for ((_, p), (_, q)) in a.student.params().zip(b.student.params()) {
        assert_eq!(bits(p.values()), bits(q.values()));
    }
}

#[test]
fn local_blocks_retain_fewer_activations() {
    let t = teacher(100);
    let mut r = rng(15);
    let (x, y) = batch(&mut r, 8);
    let mut local = distiller(PartitionPlan::from_locations(&[1, 4, 9], true, 9), 0);
    let targets = TeacherTargets::compute(&t, &x, &local.required_teacher_taps()).unwrap();
    let inputs = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &W, ndam: Some(&NdamConfig::default()) };
    let local_peak = local.sdm_step(&inputs, 0.01).unwrap().peak_retained;

    let mut e2e = EndToEnd::new(net(9, 4, 3, 0), Some(t.spec()), Objective::Attention, &[], SgdConfig::default(), 0).unwrap();
    let e2e_peak = e2e.step(&x, &y, Some(&targets), &W, 0.01).unwrap().peak_retained;
    assert!(local_peak < e2e_peak, "{local_peak} vs {e2e_peak}");
}

#[test]
fn teacher_tap_index_rounds_up() {
    let d = distiller(PartitionPlan::from_locations(&[1, 4, 9], true, 9), 0);
    assert_eq!(d.required_teacher_taps(), vec![1, 4, 9]);
    let t = teacher(0);
    let small = Distiller::new(net(4, 4, 3, 0), t.spec(), PartitionPlan::from_locations(&[1, 2, 4], true, 4), SgdConfig::default(), 0).unwrap();
    assert_eq!([1, 2, 4].map(|l| small.teacher_tap_for(l).unwrap()), [3, 5, 9]);
}

#[test]
fn first_block_gradient_is_the_local_loss_gradient() {
    let t = teacher(100);
    let plan = PartitionPlan::new(vec![1, 2], vec![1, 2, 4]);
    let mut d = Distiller::new(net(4, 4, 3, 2), t.spec(), plan, SgdConfig::default(), 2).unwrap();
    let (x, y) = batch(&mut rng(16), 3);
    let targets = TeacherTargets::compute(&t, &x, &d.required_teacher_taps()).unwrap();
    let ndam = NdamConfig::default();
    let weights = LossWeights { alpha: 0.5, beta: 0.05, temperature: 4.0 };
    let losses = |d: &Distiller| -> Vec<f64> {
        let inputs = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &weights, ndam: Some(&ndam) };
        d.block_losses(&inputs, &Tape::new()).unwrap().iter().map(|o| combine(&o.terms).unwrap().item()).collect()
    };
    let inputs = StepInputs { batch: &x, labels: &y, teacher: &targets, weights: &weights, ndam: Some(&ndam) };
    d.compute_gradients(&inputs, &Tape::new()).unwrap();
    let analytic = d.student.params_in(1..=1).next().unwrap().1.grad().unwrap();

    let eps = 1e-6;
    let mut differs = false;
    for (i, &a) in analytic.iter().enumerate() {
        let set = |d: &mut Distiller, v: f64| d.student.params_mut_in(1..=1).next().unwrap().1.values_mut()[i] = v;
        let orig = d.student.params_in(1..=1).next().unwrap().1.values()[i];
        set(&mut d, orig + eps);
        let plus = losses(&d);
        set(&mut d, orig - eps);
        let minus = losses(&d);
        set(&mut d, orig);
        let local = (plus[0] - minus[0]) / (2.0 * eps);
        let full = (plus.iter().sum::<f64>() - minus.iter().sum::<f64>()) / (2.0 * eps);
        assert!(close(a, local, 1e-5), "entry {i}: {a} vs local {local}");
        differs |= !close(a, full, 1e-3);
    }
    assert!(differs, "local and composite gradients coincide");
}
