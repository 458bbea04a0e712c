mod common;

use common::*;
use lakd::data::{load_cifar_binary, parse_cifar_binary, save_cifar_binary, synth_generate, SynthSpec, CIFAR_RECORD};
use lakd::experiment::{decode_pgm, encode_pgm};
use lakd::models::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NetSpec, TapNet};
use lakd::Error;

#[test]
fn checkpoint_file_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for (depth, width, classes, hw) in [(9, 4, 3, (8, 8)), (4, 8, 10, (32, 32)), (2, 2, 2, (6, 4))] {
        let net = TapNet::new(NetSpec { depth, width, num_classes: classes, input_hw: hw, seed: 42 }).unwrap();
        let path = dir.path().join(format!("d{depth}.ckpt"));
        save_checkpoint(&net, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.spec(), net.spec());
        for ((na, a), (nb, b)) in net.params().zip(back.params()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            assert_eq!(bits(a.values()), bits(b.values()));
        }
        assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn loaded_checkpoint_predicts_identically() {
    let net = net(9, 4, 3, 8);
    let back = decode_checkpoint(&encode_checkpoint(&net)).unwrap();
    let (x, _) = batch(&mut rng(1), 5);
    assert_eq!(bits(net.forward(&x, None).unwrap().values()), bits(back.forward(&x, None).unwrap().values()));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode_checkpoint(&net(4, 2, 3, 0));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    for b in [bad_magic, bad_version, bytes[..bytes.len() - 3].to_vec(), Vec::new()] {
        assert!(matches!(decode_checkpoint(&b), Err(Error::Checkpoint(_))));
    }
}

#[test]
fn synthetic_export_reloads_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_generate(&SynthSpec { num_classes: 10, samples: 40, image_size: 32, seed: 3, ..SynthSpec::default() }).unwrap();
    let path = dir.path().join("synthetic.bin");
    save_cifar_binary(&data, &path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 40 * CIFAR_RECORD);
    assert_eq!(load_cifar_binary(&path).unwrap(), data);
}

#[test]
fn hand_made_two_record_file() {
    let mut bytes = Vec::new();
    for (label, base) in [(7u8, 0usize), (2, 100)] {
        bytes.push(label);
        // red ramps, green constant, blue mirrors red
        bytes.extend((0..1024).map(|i| ((base + i) % 256) as u8));
        bytes.extend(std::iter::repeat_n(label * 10, 1024));
        bytes.extend((0..1024).map(|i| (255 - (base + i) % 256) as u8));
    }
    let d = parse_cifar_binary(&bytes).unwrap();
    assert_eq!(d.labels, vec![7, 2]);
    assert_eq!((d.height, d.width, d.num_classes), (32, 32, 10));
    assert_eq!(d.image(0)[0], 0);
    assert_eq!(d.image(0)[1023], 255);
    assert_eq!(d.image(1)[0], 100);
    assert_eq!(d.image(0)[1024], 70);
    assert_eq!(d.image(1)[2048 + 5], 255 - 105);
    assert_eq!(d.pixel(1, 1, 31, 31), 20.0 / 255.0);
    assert_eq!(d.pixel(0, 0, 1, 0), 32.0 / 255.0);

    assert!(matches!(parse_cifar_binary(&bytes[..CIFAR_RECORD + 10]), Err(Error::Format(_))));
    let mut bad_label = bytes.clone();
    bad_label[CIFAR_RECORD] = 10;
    assert!(matches!(parse_cifar_binary(&bad_label), Err(Error::Format(_))));
}

#[test]
fn pgm_round_trip() {
    let mut r = rng(4);
    for (h, w) in [(1, 1), (4, 4), (3, 7)] {
        let px: Vec<u8> = uniform(&mut r, h * w, 0.0, 256.0).into_iter().map(|v| v as u8).collect();
        let bytes = encode_pgm(h, w, &px);
        assert!(bytes.starts_with(b"P5\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), (h, w, px));
    }
    assert!(decode_pgm(b"P2\n1 1\n255\n\0").is_err());
    assert!(decode_pgm(b"P5\n2 2\n255\n\0").is_err());
}
