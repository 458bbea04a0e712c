//! Teacher-attention weighting of a student feature map: channel sum, the
//! pooled weight map, and its effect on the feature loss.
//!
//! cargo run --release --example ndam

use lakd::losses::feature_loss;
use lakd::ndam::{apply_weighting, channel_sum, pool_combine, AttentionWeight, NdamConfig};
use lakd::{Result, Tensor};

fn show(name: &str, t: &Tensor) {
    let w = t.shape()[3];
    println!("{name}:");
    for row in t.values().chunks(w).take(t.shape()[2]) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:6.2}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn main() -> Result<()> {
    // one sample, two channels, a bright spot in the corner
    let mut teacher = vec![0.1; 2 * 5 * 5];
    teacher[0] = 4.0;
    teacher[25 + 1] = -3.0;
    let teacher = Tensor::from_vec(vec![1, 2, 5, 5], teacher)?;
    let student = Tensor::full(&[1, 2, 5, 5], 1.0);

    let fsum = channel_sum(&teacher, true)?;
    show("channel sum of |T|", &fsum);
    show("0.25 avg + 0.75 max", &pool_combine(&fsum, 0.25, 0.75)?);

    for cfg in [NdamConfig::new(0.25, 0.75, true), NdamConfig::new(0.5, 0.5, false), NdamConfig::DISABLED] {
        let w = AttentionWeight::from_teacher(&teacher, &cfg)?;
        let weighted = apply_weighting(&student, &w)?;
        println!(
            "alpha {} beta {} abs {}: weighted feature loss {:.3}",
            cfg.alpha_pool,
            cfg.beta_pool,
            cfg.use_abs,
            feature_loss(&teacher, &weighted)?.item()
        );
    }
    Ok(())
}
