//! Writes a synthetic 32x32 dataset as CIFAR-10 binary records, reads it
//! back, trains a tiny student for one epoch, and dumps its attention maps
//! as PGM images.
//!
//! cargo run --release --example cifar_format -- [out_dir]

use std::path::PathBuf;

use lakd::data::{load_cifar_binary, save_cifar_binary, synth_generate, Normalization, SynthSpec};
use lakd::experiment::{export_attention, train_run, DataConfig, DatasetSource, NetConfig, Regime, RunConfig, Splits};
use lakd::Result;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("lakd-cifar-demo"));
    std::fs::create_dir_all(&out)?;

    let spec = SynthSpec { num_classes: 10, samples: 240, image_size: 32, noise: 0.1, contrast_min: 0.5, seed: 1 };
    let data = synth_generate(&spec)?;
    let (train_path, test_path) = (out.join("train.bin"), out.join("test.bin"));
    save_cifar_binary(&data.slice(0..200), &train_path)?;
    save_cifar_binary(&data.slice(200..240), &test_path)?;
    let back = load_cifar_binary(&train_path)?;
    assert_eq!(back, data.slice(0..200));
    println!("{} records, {} bytes each, label histogram {:?}", back.len(), lakd::data::CIFAR_RECORD, back.label_histogram());

    let mut cfg = RunConfig::synthetic_default(Regime::Scratch);
    cfg.data = DataConfig {
        source: DatasetSource::Cifar10 { train: vec![train_path], test: vec![test_path.clone()] },
        train_limit: None,
        val_limit: None,
        augment: true,
        normalization: Normalization::default(),
    };
    cfg.student = NetConfig { depth: 4, width: 4 };
    cfg.optim.epochs = 1;
    cfg.eval.cka_samples = 0;
    let splits = Splits { train: back, val: load_cifar_binary(&test_path)? };
    let run = train_run(&cfg, &splits, None)?;
    println!("one epoch: val top-1 {:.3}", run.record.final_row().val_top1);

    let files = export_attention(run.student(), &splits.val, cfg.data.normalization, &[0, 1], &[1, 2, 3, 4], &out.join("attention"))?;
    println!("wrote {} attention maps under {}", files.len(), out.join("attention").display());
    Ok(())
}
