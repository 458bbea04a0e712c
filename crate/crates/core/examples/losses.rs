//! Every scalar objective on one random batch, and the two total-loss
//! compositions.
//!
//! cargo run --release --example losses

use lakd::losses::{
    attention_loss, feature_loss, hard_loss, soft_loss, total_loss_lakd, total_loss_traditional, LossWeights,
};
use lakd::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let labels = [0, 2, 1, 2];
    let (s_logits, t_logits) = (random(&mut rng, &[4, 3]), random(&mut rng, &[4, 3]));
    let (s_tap, t_tap) = (random(&mut rng, &[4, 16, 4, 4]), random(&mut rng, &[4, 16, 4, 4]));
    let narrow = random(&mut rng, &[4, 6, 4, 4]);

    let hard = hard_loss(&s_logits, &labels)?;
    let soft = soft_loss(&s_logits, &t_logits, 4.0)?;
    let feat = feature_loss(&t_tap, &s_tap)?;
    let att = attention_loss(&t_tap, &narrow)?;
    println!("hard {:.4}  soft {:.4}  feature {:.4}  attention {:.4}", hard.item(), soft.item(), feat.item(), att.item());
    println!("attention of a tap against a scaled copy: {:.2e}", attention_loss(&t_tap, &t_tap.mul_scalar(3.0))?.item());

    let w = LossWeights::new(0.5, 0.1, 4.0)?;
    let trad = total_loss_traditional(&w, &hard, &soft, std::slice::from_ref(&feat))?;
    let local = total_loss_lakd(&w, &hard, &att, &feat)?;
    println!("traditional total {:.4}, local-attention total {:.4}", trad.item(), local.item());
    Ok(())
}
