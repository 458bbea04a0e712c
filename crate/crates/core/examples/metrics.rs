//! Top-k accuracy, the teacher-error rescue rate (EK), and linear CKA with
//! its invariances.
//!
//! cargo run --release --example metrics

use lakd::metrics::{cka_linear, ek_metric, topk_accuracy, Matrix, PredictionLog};
use lakd::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let logits = Tensor::from_vec(vec![3, 4], vec![0.1, 0.9, 0.0, 0.0, 0.5, 0.2, 0.3, 0.0, 0.0, 0.0, 0.2, 0.1])?;
    let labels = [1, 2, 3];
    println!("top-1 {:.3}, top-2 {:.3}", topk_accuracy(&logits, &labels, 1)?, topk_accuracy(&logits, &labels, 2)?);

    let log = PredictionLog::new(vec![0, 1, 2, 2, 0], vec![0, 0, 2, 1, 1], vec![0, 0, 1, 1, 1], 3)?;
    println!("EK: student fixes {:.3} of the teacher's mistakes", ek_metric(&log)?);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, d) = (40, 6);
    let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noisy: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
    let unrelated: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    // rotate the first two feature columns and scale everything by 7
    let (c, s) = (0.6, 0.8);
    let rotated: Vec<f64> = x
        .chunks(d)
        .flat_map(|r| {
            let mut out = r.to_vec();
            out[0] = 7.0 * (c * r[0] - s * r[1]);
            out[1] = 7.0 * (s * r[0] + c * r[1]);
            out[2..].iter_mut().for_each(|v| *v *= 7.0);
            out
        })
        .collect();
    let m = |v: Vec<f64>| Matrix::new(n, d, v);
    let xm = m(x)?;
    println!("CKA(X, X)              {:.6}", cka_linear(&xm, &xm)?);
    println!("CKA(X, 7 X R)          {:.6}", cka_linear(&xm, &m(rotated)?)?);
    println!("CKA(X, X + noise)      {:.6}", cka_linear(&xm, &m(noisy)?)?);
    println!("CKA(X, independent)    {:.6}", cka_linear(&xm, &m(unrelated)?)?);
    Ok(())
}
