//! The NDAM sweep on the small synthetic task: five cells, each a full
//! local-block training run, reported as a table with EK and top-1.
//!
//! cargo run --release --example ablation

use lakd::experiment::{load_splits, run_sweep, train_run, trend_students, trend_teacher, Sweep};
use lakd::models::encode_checkpoint;

fn main() -> lakd::Result<()> {
    let tcfg = trend_teacher();
    let teacher = train_run(&tcfg, &load_splits(&tcfg.data)?, None)?;
    let mut net = teacher.student().clone();
    net.freeze();
    println!("teacher top-1 {:.4}", teacher.record.final_row().val_top1);

    let (_, base) = trend_students(0).pop().expect("shifted arm");
    let splits = load_splits(&base.data)?;
    let table = run_sweep(&base, &Sweep::ndam_default(), &splits, Some(&encode_checkpoint(&net)))?;
    print!("{}", table.to_csv()?);
    Ok(())
}
