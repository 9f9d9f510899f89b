use ltc::model::{ArchConfig, Model};
use ltc::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ltm"), dir.path().join("b.ltm"));
    let model = Model::init(ArchConfig::desk(6, false), 4).unwrap();
    model.save(&a).unwrap();
    Model::load(&a).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn empty_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.ltm");
    std::fs::write(&path, b"").unwrap();
    let err = Model::load(&path).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }));
    assert_eq!(err.kind(), "magic");
}

#[test]
fn checksum_tracks_parameters() {
    let a = Model::init(ArchConfig::desk(4, false), 1).unwrap();
    let mut b = a.clone();
    assert_eq!(a.checksum(), b.checksum());
    b.params.log_delta.data_mut()[0] = 0.25;
    assert_ne!(a.checksum(), b.checksum());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transforms_preserve_extent(rows in 1usize..5, cols in 1usize..5, end_norm: bool) {
        let model = Model::init(ArchConfig::desk(3, end_norm), 2).unwrap();
        let x = Tensor::full(&[1, 1, 16 * rows, 16 * cols], 90.0);
        let y = model.encode_transform(&x).unwrap();
        prop_assert_eq!(y.shape().to_vec(), vec![1, 3, rows, cols]);
        prop_assert_eq!(model.decode_transform(&y).unwrap().shape().to_vec(), x.shape().to_vec());
    }
}
