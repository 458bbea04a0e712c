//! Builds a student and a teacher, prints per-unit tap shapes, projects a
//! student tap onto the teacher's shape, and round-trips a checkpoint.
//!
//! cargo run --release --example tapnet

use lakd::models::{build_tapnet, decode_checkpoint, encode_checkpoint, Projector};
use lakd::sdm::teacher_index;
use lakd::{Result, Tensor};

fn main() -> Result<()> {
    let student = build_tapnet(9, 4, 10, 1)?.with_taps(&[3, 6, 9])?;
    let mut teacher = build_tapnet(12, 8, 10, 2)?;
    teacher.freeze();

    for unit in student.units() {
        let shape = if unit.index <= student.depth() { format!("{:?}", student.spec().tap_shape(unit.index)) } else { "-".into() };
        println!("unit {:>2} {:<15} tap {shape}", unit.index, format!("{:?}", unit.kind));
    }
    println!("{} student parameters, {} teacher parameters", student.param_count(), teacher.param_count());

    let batch = Tensor::from_vec(vec![2, 3, 32, 32], (0..2 * 3 * 32 * 32).map(|i| ((i % 17) as f64 - 8.0) / 8.0).collect())?;
    let (logits, taps) = student.forward_with_taps(&batch, None)?;
    println!("logits {:?}, taps at {:?}", logits.shape(), taps.keys().collect::<Vec<_>>());

    let l = 6;
    let t = teacher_index(l, student.depth(), teacher.depth());
    let proj = Projector::new("proj6.weight", student.spec().tap_shape(l), teacher.spec().tap_shape(t), 0)?;
    let aligned = proj.forward(&taps[&l], None)?;
    println!("student unit {l} {:?} -> teacher unit {t} {:?} via {:?}", taps[&l].shape(), aligned.shape(), proj.spatial());

    let bytes = encode_checkpoint(&student);
    let back = decode_checkpoint(&bytes)?;
    assert_eq!(encode_checkpoint(&back), bytes);
    println!("checkpoint: {} bytes, re-encodes identically", bytes.len());
    Ok(())
}
