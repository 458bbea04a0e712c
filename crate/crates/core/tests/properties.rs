mod common;

use common::*;
use lakd::data::{batch_iter, synth_generate, Normalization, SynthSpec};
use lakd::losses::{attention_loss, feature_loss, hard_loss, soft_loss, total_loss_lakd, LossWeights};
use lakd::metrics::{cka_linear, ek_metric, topk_accuracy, Matrix, PredictionLog};
use lakd::ndam::{apply_weighting, channel_sum, pool_combine, AttentionWeight, NdamConfig};
use lakd::optim::SgdConfig;
use lakd::sdm::{Distiller, PartitionPlan, StepInputs, TeacherTargets};
use lakd::{Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn cfg(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg(48))]

    #[test]
    fn detach_blocks_all_upstream_gradient(seed in any::<u64>(), n in 1usize..4, c in 1usize..4) {
        let mut r = rng(seed);
        let x = tensor(&mut r, &[n, c, 5, 5]);
        let (w1, w2) = (param(&mut r, &[c, c, 3, 3]), param(&mut r, &[2, c, 3, 3]));
        let tape = Tape::new();
        let h = x.conv2d(&tape.watch(&w1), 1, 1).unwrap().relu();
        let y = h.detach().conv2d(&tape.watch(&w2), 1, 1).unwrap().square().sum();
        y.backward().unwrap();
        prop_assert!(w1.grad().is_none_or(|g| g.iter().all(|&v| v == 0.0)));
        prop_assert!(w2.grad().is_some());
    }

    #[test]
    fn backward_calls_accumulate(seed in any::<u64>()) {
        let mut r = rng(seed);
        let w = param(&mut r, &[3, 4]);
        let (a, b) = (tensor(&mut r, &[2, 3]), tensor(&mut r, &[2, 3]));
        let grad_of = |x: &Tensor| {
            let p = Tensor::param(w.shape().to_vec(), w.values().to_vec()).unwrap();
            let tape = Tape::new();
            x.matmul(&tape.watch(&p)).unwrap().square().sum().backward().unwrap();
            p.grad().unwrap()
        };
        let tape = Tape::new();
        a.matmul(&tape.watch(&w)).unwrap().square().sum().backward().unwrap();
        let tape = Tape::new();
        b.matmul(&tape.watch(&w)).unwrap().relu().sum().backward().unwrap();
        let p = Tensor::param(w.shape().to_vec(), w.values().to_vec()).unwrap();
        let tape = Tape::new();
        b.matmul(&tape.watch(&p)).unwrap().relu().sum().backward().unwrap();
        let expected: Vec<f64> = grad_of(&a).iter().zip(p.grad().unwrap()).map(|(x, y)| x + y).collect();
        prop_assert_eq!(bits(&w.grad().unwrap()), bits(&expected));
    }

    #[test]
    fn retained_count_returns_to_baseline(seed in any::<u64>()) {
        let mut r = rng(seed);
        let student = net(4, 2, 3, seed);
        let (x, labels) = batch(&mut r, 2);
        let tape = Tape::new();
        let before = tape.retained_activation_count();
        let loss = hard_loss(&student.forward(&x, Some(&tape)).unwrap(), &labels).unwrap();
        prop_assert!(tape.retained_activation_count() > before);
        loss.backward().unwrap();
        prop_assert_eq!(tape.retained_activation_count(), before);
    }

    #[test]
    fn taps_equal_prefix_forward(seed in any::<u64>(), depth in 2usize..7) {
        let mut r = rng(seed);
        let taps: Vec<usize> = (1..=depth).collect();
        let student = net(depth, 2, 3, seed).with_taps(&taps).unwrap();
        let (x, _) = batch(&mut r, 2);
        let (logits, got) = student.forward_with_taps(&x, None).unwrap();
        for l in 1..=depth {
            let prefix = student.forward_range(1..=l, &x, None).unwrap();
            prop_assert_eq!(bits(got[&l].values()), bits(prefix.values()));
        }
        prop_assert_eq!(bits(logits.values()), bits(student.head(&got[&depth], None).unwrap().values()));
    }

    #[test]
    fn forward_backward_is_reproducible(seed in any::<u64>()) {
        let run = || {
            let mut r = rng(seed);
            let student = net(4, 2, 3, seed);
            let (x, labels) = batch(&mut r, 3);
            let tape = Tape::new();
            let logits = student.forward(&x, Some(&tape)).unwrap();
            hard_loss(&logits, &labels).unwrap().backward().unwrap();
            let grads: Vec<u64> = student.params().flat_map(|(_, p)| bits(&p.grad().unwrap())).collect();
            (bits(logits.values()), grads)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn losses_nonnegative_and_zero_at_identity(seed in any::<u64>(), temp in 0.5f64..8.0, scale in 0.1f64..10.0) {
        let mut r = rng(seed);
        let (a, b) = (tensor(&mut r, &[3, 4, 3, 3]), tensor(&mut r, &[3, 4, 3, 3]));
        let (s, t) = (tensor(&mut r, &[3, 5]), tensor(&mut r, &[3, 5]));
        prop_assert!(feature_loss(&a, &b).unwrap().item() >= 0.0);
        prop_assert_eq!(feature_loss(&a, &a).unwrap().item(), 0.0);
        prop_assert!(soft_loss(&s, &t, temp).unwrap().item() >= -1e-15);
        prop_assert!(soft_loss(&s, &s, temp).unwrap().item().abs() < 1e-14);
        prop_assert!(attention_loss(&a, &b).unwrap().item() >= 0.0);
        prop_assert!(attention_loss(&a, &a.mul_scalar(scale)).unwrap().item() < 1e-24);
        prop_assert!(hard_loss(&s, &[0, 1, 2]).unwrap().item() > 0.0);
    }

    #[test]
    fn feature_loss_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b) = (tensor(&mut r, &[2, 3, 4, 4]), tensor(&mut r, &[2, 3, 4, 4]));
        prop_assert_eq!(feature_loss(&a, &b).unwrap().item(), feature_loss(&b, &a).unwrap().item());
    }

    #[test]
    fn attention_loss_per_sample_scale_invariant(seed in any::<u64>(), s0 in 0.1f64..10.0, s1 in 0.1f64..10.0) {
        let mut r = rng(seed);
        let (t, s) = (tensor(&mut r, &[2, 3, 4, 4]), tensor(&mut r, &[2, 5, 4, 4]));
        let per_sample: Vec<f64> = (0..2 * 16 * 5).map(|i| if i < 80 { s0 } else { s1 }).collect();
        let scaled = s.mul(&Tensor::from_vec(vec![2, 5, 4, 4], per_sample).unwrap()).unwrap();
        let base = attention_loss(&t, &s).unwrap().item();
        prop_assert!(close(attention_loss(&t, &scaled).unwrap().item(), base, 1e-12));
        prop_assert!(close(attention_loss(&t.mul_scalar(s1), &s).unwrap().item(), base, 1e-12));
    }

    #[test]
    fn lakd_total_is_linear(seed in any::<u64>(), alpha in 0.0f64..1.0, beta in 0.0f64..5.0, k in 0.1f64..4.0) {
        let mut r = rng(seed);
        let v = uniform(&mut r, 6, 0.0, 3.0);
        let sc = |x: f64| Tensor::scalar(x);
        let w = LossWeights { alpha, beta, temperature: 4.0 };
        let f = |h: f64, a: f64, fe: f64| total_loss_lakd(&w, &sc(h), &sc(a), &sc(fe)).unwrap().item();
        prop_assert!(close(f(v[0] + v[3], v[1], v[2]), f(v[0], v[1], v[2]) + alpha * v[3], 1e-12));
        prop_assert!(close(f(v[0], v[1] + v[4], v[2]), f(v[0], v[1], v[2]) + (1.0 - alpha) * v[4], 1e-12));
        prop_assert!(close(f(v[0], v[1], k * v[2]), f(v[0], v[1], 0.0) + k * beta * v[2], 1e-12));
    }

    #[test]
    fn channel_sum_abs_is_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut r = rng(seed);
        let t = tensor(&mut r, &[2, 4, 3, 3]);
        let base = channel_sum(&t, true).unwrap();
        prop_assert!(base.values().iter().all(|&v| v >= 0.0));
        let scaled = channel_sum(&t.mul_scalar(c), true).unwrap();
        for (a, b) in scaled.values().iter().zip(base.values()) {
            prop_assert!(close(*a, c.abs() * b, 1e-12));
        }
    }

    #[test]
    fn pool_combine_linearity(seed in any::<u64>(), alpha in 0.0f64..2.0, beta in 0.0f64..2.0, k in 0.0f64..5.0) {
        let mut r = rng(seed);
        let (f, g) = (tensor(&mut r, &[2, 1, 4, 5]), tensor(&mut r, &[2, 1, 4, 5]));
        let sum = pool_combine(&f.add(&g).unwrap(), alpha, 0.0).unwrap();
        let parts = pool_combine(&f, alpha, 0.0).unwrap().add(&pool_combine(&g, alpha, 0.0).unwrap()).unwrap();
        for (a, b) in sum.values().iter().zip(parts.values()) {
            prop_assert!(close(*a, *b, 1e-12));
        }
        let scaled = pool_combine(&f.mul_scalar(k), 0.0, beta).unwrap();
        let base = pool_combine(&f, 0.0, beta).unwrap();
        for (a, b) in scaled.values().iter().zip(base.values()) {
            prop_assert!(close(*a, k * b, 1e-12));
        }
    }

    #[test]
    fn weighting_keeps_shape_and_disabled_is_identity(seed in any::<u64>(), a in 0.0f64..1.0, b in 0.0f64..1.0, abs in any::<bool>()) {
        let mut r = rng(seed);
        let (t, s) = (tensor(&mut r, &[2, 6, 4, 4]), tensor(&mut r, &[2, 3, 4, 4]));
        let w = AttentionWeight::from_teacher(&t, &NdamConfig::new(a, b, abs)).unwrap();
        let weighted = apply_weighting(&s, &w).unwrap();
        prop_assert_eq!(weighted.shape(), s.shape());
        let off = AttentionWeight::from_teacher(&t, &NdamConfig::DISABLED).unwrap();
        prop_assert_eq!(bits(apply_weighting(&s, &off).unwrap().values()), bits(s.values()));
    }

    #[test]
    fn ek_bounded_and_order_free(seed in any::<u64>(), n in 2usize..60) {
        let mut r = rng(seed);
        let draw = |r: &mut rand_chacha::ChaCha8Rng| (0..n).map(|_| rand::Rng::random_range(r, 0..3)).collect::<Vec<usize>>();
        let (t, s, y) = (draw(&mut r), draw(&mut r), draw(&mut r));
        let log = PredictionLog::new(t.clone(), s.clone(), y.clone(), 3).unwrap();
        if let Ok(v) = ek_metric(&log) {
            prop_assert!((0.0..=1.0).contains(&v));
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut r);
            let pick = |v: &[usize]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let shuffled = PredictionLog::new(pick(&t), pick(&s), pick(&y), 3).unwrap();
            prop_assert_eq!(ek_metric(&shuffled).unwrap(), v);
        }
    }

    #[test]
    fn cka_symmetric_and_scale_free(seed in any::<u64>(), c in prop_oneof![-9.0f64..-0.1, 0.1f64..9.0]) {
        let mut r = rng(seed);
        let x = Matrix::new(10, 4, uniform(&mut r, 40, -1.0, 1.0)).unwrap();
        let y = Matrix::new(10, 6, uniform(&mut r, 60, -1.0, 1.0)).unwrap();
        let xy = cka_linear(&x, &y).unwrap();
        prop_assert!(close(xy, cka_linear(&y, &x).unwrap(), 1e-12));
        let cy = Matrix::new(10, 6, y.data.iter().map(|v| c * v).collect()).unwrap();
        prop_assert!(close(xy, cka_linear(&x, &cy).unwrap(), 1e-10));
    }

    #[test]
    fn topk_monotone_in_k(seed in any::<u64>()) {
        let mut r = rng(seed);
        let logits = tensor(&mut r, &[8, 6]);
        let labels: Vec<usize> = (0..8).map(|_| rand::Rng::random_range(&mut r, 0..6)).collect();
        let acc: Vec<f64> = (1..=6).map(|k| topk_accuracy(&logits, &labels, k).unwrap()).collect();
        prop_assert!(acc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(acc[5], 1.0);
    }
}

proptest! {
    #![proptest_config(cfg(12))]

    #[test]
    fn batches_cover_epoch_once_and_normalize_exactly(seed in any::<u64>(), bs in 1usize..40, augment in any::<bool>()) {
        let data = synth_generate(&SynthSpec { samples: 90, seed, ..SynthSpec::default() }).unwrap();
        let norm = Normalization { mean: [0.1, 0.2, 0.3], std: [0.5, 0.25, 2.0] };
        let mut seen = Vec::new();
        for b in batch_iter(&data, bs, seed, augment, norm).unwrap() {
            if !augment {
                for (k, &i) in b.indices.iter().enumerate() {
                    for c in 0..3 {
                        for p in 0..64 {
                            let raw = data.pixel(i, c, p / 8, p % 8);
                            prop_assert!((0.0..=1.0).contains(&raw));
                            prop_assert_eq!(b.images.values()[(k * 3 + c) * 64 + p], (raw - norm.mean[c]) / norm.std[c]);
                        }
                    }
                }
            }
            seen.extend(b.indices);
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..90).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stream_is_deterministic(seed in any::<u64>(), epoch_seed in any::<u64>()) {
        let data = synth_generate(&SynthSpec { samples: 40, seed, ..SynthSpec::default() }).unwrap();
        let again = synth_generate(&SynthSpec { samples: 40, seed, ..SynthSpec::default() }).unwrap();
        prop_assert_eq!(&data, &again);
        let stream = |d| batch_iter(d, 16, epoch_seed, false, Normalization::default()).unwrap()
            .map(|b| (b.indices, bits(b.images.values()))).collect::<Vec<_>>();
        prop_assert_eq!(stream(&data), stream(&again));
    }

    #[test]
    fn frozen_teacher_never_changes(seed in any::<u64>()) {
        let mut r = rng(seed);
        let teacher = teacher(seed);
        let before: Vec<u64> = teacher.params().flat_map(|(_, p)| bits(p.values())).collect();
        let plan = PartitionPlan::from_locations(&[3, 6, 9], true, 9);
        let sgd = SgdConfig { clip_norm: Some(1.0), ..SgdConfig::default() };
        let mut d = Distiller::new(net(9, 4, 3, seed), teacher.spec(), plan, sgd, seed).unwrap();
        let w = LossWeights { alpha: 0.5, beta: 0.01, temperature: 4.0 };
        for _ in 0..3 {
            let (x, labels) = batch(&mut r, 4);
            let t = TeacherTargets::compute(&teacher, &x, &d.required_teacher_taps()).unwrap();
            let ndam = NdamConfig::default();
            let inputs = StepInputs { batch: &x, labels: &labels, teacher: &t, weights: &w, ndam: Some(&ndam) };
            d.sdm_step(&inputs, 0.01).unwrap();
        }
        let after: Vec<u64> = teacher.params().flat_map(|(_, p)| bits(p.values())).collect();
        prop_assert_eq!(before, after);
        prop_assert!(teacher.params().all(|(_, p)| p.grad().is_none()));
    }
}
