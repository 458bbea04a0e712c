//! Teacher, then four students on the synthetic task: scratch, aligned at
//! [3,6,9] without detach, detached at [3,6,9], detached at [1,4,9].
//!
//! cargo run --release --example distill_synthetic -- [seed]

use std::time::Instant;

use lakd::experiment::{load_splits, train_run, trend_students, trend_teacher};

fn main() -> lakd::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);

    let tcfg = trend_teacher();
    let t0 = Instant::now();
    let teacher = train_run(&tcfg, &load_splits(&tcfg.data)?, None)?;
    let mut teacher_net = teacher.student().clone();
    teacher_net.freeze();
    println!("teacher          top1 {:.4}  ({:.1}s)", teacher.record.final_row().val_top1, t0.elapsed().as_secs_f64());

    for (name, cfg) in trend_students(seed) {
        let splits = load_splits(&cfg.data)?;
        let t = Instant::now();
        let out = train_run(&cfg, &splits, Some(&teacher_net))?;
        let row = out.record.final_row();
        let ek = row.ek.map_or("-".to_string(), |v| format!("{v:.3}"));
        let l2: Vec<String> = row.layer_l2.iter().map(|v| format!("{v:.0}")).collect();
        println!(
            "{name:<16} top1 {:.4}  ek {ek}  l2 [{}]  ({:.1}s)",
            row.val_top1,
            l2.join(", "),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
