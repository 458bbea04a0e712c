//! Checks backward-pass gradients of a small conv/pool/linear net against
//! central finite differences.
//!
//! cargo run --release --example gradcheck

use lakd::gradcheck::check;
use lakd::{Result, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 3, 6, 6]).detach();
    let params = vec![random(&mut rng, &[4, 3, 3, 3]), random(&mut rng, &[4 * 3 * 3, 5]), random(&mut rng, &[1, 5])];

    // conv -> relu -> max pool -> flatten -> linear -> log-softmax -> mean
    let loss = |_: &Tape, p: &[Tensor]| -> Result<Tensor> {
        let h = x.conv2d(&p[0], 1, 1)?.relu().max_pool2d(2, 2, 0)?;
        let h = h.reshape(&[2, 4 * 3 * 3])?;
        Ok(h.matmul(&p[1])?.add(&p[2])?.log_softmax().mean())
    };
    let report = check(&loss, &params, 1e-6)?;
    println!(
        "checked {} gradient entries, max relative error {:.2e} (param {}, index {})",
        report.checked, report.max_relative_error, report.worst_param, report.worst_index
    );

    // tape bookkeeping: activations held for the backward pass
    let tape = Tape::new();
    let watched: Vec<Tensor> = params.iter().map(|p| tape.watch(p)).collect();
    let l = loss(&tape, &watched)?;
    println!("tape nodes {}, retained activations {}", tape.len(), tape.retained_activation_count());
    l.backward()?;
    println!("grad norm of conv kernel {:.4}", params[0].grad().unwrap().iter().map(|g| g * g).sum::<f64>().sqrt());
    Ok(())
}
