use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tssd::models::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Family, Mode, Model, ModelConfig, ModelError};
use tssd::nn::Tensor;
use tssd::training::AdamState;

fn trained_model(family: Family) -> Model<f32> {
    let mut cfg = ModelConfig::with_channels(family, vec![4, 4], 2);
    cfg.stem_channels = 4;
    cfg.input_length = 128;
    let mut m = Model::build(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    m.forward(&Tensor::from_fn(&[3, 1, 128], |i| (i as f32 * 0.3).sin())).unwrap();
    m
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for family in [Family::Res, Family::Inc] {
        let mut m = trained_model(family);
        m.set_mode(Mode::Eval);
        let adam = AdamState::new(&m, 1e-3).snapshot();
        let path = dir.path().join("m.tssd");
        save_checkpoint(&m, Some(&adam), &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.optimizer.as_ref(), Some(&adam));
        let x = Tensor::from_fn(&[2, 1, 128], |i| (i as f32 * 0.7).cos());
        let (a, b) = (m.infer(&x).unwrap(), ck.model.infer(&x).unwrap());
        assert_eq!(
            a.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(encode_checkpoint(&ck.model, ck.optimizer.as_ref()), std::fs::read(&path).unwrap());
    }
}

#[test]
fn full_model_reports_count_after_load() {
    let m: Model<f32> = Model::build(&ModelConfig::res(4).unwrap(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let ck = decode_checkpoint(&encode_checkpoint(&m, None)).unwrap();
    assert_eq!(ck.model.count_parameters(), 350_658);
    assert!(ck.optimizer.is_none());
}

#[test]
fn corrupt_files_rejected() {
    let m = trained_model(Family::Res);
    let bytes = encode_checkpoint(&m, None);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(ModelError::BadMagic)));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode_checkpoint(&bad), Err(ModelError::UnsupportedVersion(9))));
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
}
