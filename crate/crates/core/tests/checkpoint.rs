use penh::enhance::{build_can, CanConfig};
use penh::quality::{build_tiny_nima, NimaConfig};
use penh::train::{Checkpoint, Dtype, ModelKind};
use penh::Error;

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("none.ckpt")), Err(Error::Io { .. })));
}

#[test]
fn damaged_files_are_rejected() {
    let model = build_can(CanConfig::with_depth(3, 4), 1).unwrap();
    let bytes = Checkpoint::from_can(&model, Dtype::F64).to_bytes();
    assert!(matches!(Checkpoint::from_bytes(b"PNG\x89 not a checkpoint"), Err(Error::VersionMismatch(_))));
    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Corrupt(_))), "cut at {cut}");
    }
    for pos in [12, bytes.len() / 3, bytes.len() - 2] {
        let mut flipped = bytes.clone();
        flipped[pos] ^= 0x10;
        assert!(Checkpoint::from_bytes(&flipped).is_err(), "flip at {pos}");
    }
}

#[test]
fn f32_storage_is_close_and_f64_is_exact() {
    let nima = build_tiny_nima(NimaConfig { channels: vec![4, 8], ..NimaConfig::default() }, 2).unwrap();
    let exact = Checkpoint::from_bytes(&Checkpoint::from_nima(&nima, Dtype::F64).to_bytes()).unwrap();
    assert_eq!(exact.kind, ModelKind::Nima);
    let back = exact.to_nima().unwrap();
    assert_eq!(back.params, nima.params);
    assert_eq!(back.config, nima.config);

    let narrow = Checkpoint::from_bytes(&Checkpoint::from_nima(&nima, Dtype::F32).to_bytes()).unwrap().to_nima().unwrap();
    for (name, t) in nima.params.iter() {
        let r = narrow.params.get(name).unwrap();
        for (a, b) in t.data().iter().zip(r.data()) {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-30));
        }
    }
}

#[test]
fn metadata_and_kind_are_preserved() {
    let can = build_can(CanConfig::with_depth(5, 4), 3).unwrap();
    let mut ckpt = Checkpoint::from_can(&can, Dtype::F32);
    ckpt.set_meta("steps", 42);
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    assert_eq!(back.meta("steps"), Some("42"));
    assert_eq!(back.to_can().unwrap().config, can.config);
    assert!(back.to_nima().is_err());
}
