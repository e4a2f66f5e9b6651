use fairsim_core::apl::{
    compile_query, compute_centers, manual_prototype, train_prototype, AplConfig, BypassEncoder, CenterRefresh,
    PrototypeTrainer, Prototype, TextEncoder, ToyEncoder,
};
use fairsim_core::embedstore::{split, SplitSpec, StoreView};
use fairsim_core::synth::{generate, SynthData, SynthSpec};
use fairsim_core::Error;

fn planted(sigma: f64) -> (SynthData, Vec<usize>, Vec<usize>) {
    let data = generate(&SynthSpec { n: 1200, noise_sigma: sigma, ..Default::default() }).unwrap();
    let s = split(&data.store, SplitSpec { train_fraction: 0.5, seed: 3 }).unwrap();
    (data, s.train_rows(), s.test_rows())
}

fn separation(p: &Prototype) -> f64 {
    p.centers.center_pos - p.centers.center_neg
}

#[test]
fn training_increases_separation_and_classifies_held_out_rows() {
    // targets planted at 0.6 over σ = 0.3: signal-to-noise 2
    let (data, train_rows, test_rows) = planted(0.3);
    let enc = ToyEncoder::new(data.spec.dim, data.spec.dim, 5, &data.vocab).unwrap();
    let train = StoreView::from_rows(&data.store, train_rows);
    let test = StoreView::from_rows(&data.store, test_rows);
    let before = data.store.to_parts();
    let vocab_before: Vec<Vec<f64>> = ["hat", "glasses"].iter().map(|w| enc.token(w).unwrap().to_vec()).collect();
    for attr in data.target_attributes() {
        let words = vec![attr.clone()];
        let trainer = PrototypeTrainer::new(&train, &attr, 1, &words, &AplConfig::default(), &enc).unwrap();
        let init = separation(trainer.prototype());
        let (proto, history) = train_prototype(&train, &attr, 1, &words, &AplConfig::default(), &enc).unwrap();
        assert!(separation(&proto) > init, "{attr}: {init} -> {}", separation(&proto));
        assert_eq!(history.epoch_loss.len(), AplConfig::default().epochs);
        let acc = proto.accuracy(&test).unwrap();
        assert!(acc >= 0.95, "{attr}: held-out accuracy {acc}");
    }
    assert_eq!(data.store.to_parts(), before);
    let vocab_after: Vec<Vec<f64>> = ["hat", "glasses"].iter().map(|w| enc.token(w).unwrap().to_vec()).collect();
    assert_eq!(vocab_before, vocab_after);
}

#[test]
fn trained_prototype_is_self_consistent_and_round_trips() {
    let (data, train_rows, _) = planted(0.5);
    let enc = ToyEncoder::new(data.spec.dim, data.spec.dim, 1, &data.vocab).unwrap();
    let train = StoreView::from_rows(&data.store, train_rows);
    let config = AplConfig { epochs: 5, batch: Some(64), center_refresh: CenterRefresh::Once, ..Default::default() };
    let (proto, _) = train_prototype(&train, "gender", -1, &["female".to_string()], &config, &enc).unwrap();
    assert_eq!(compile_query(&proto, &enc).unwrap(), proto.query_embedding);
    let c = proto.centers;
    assert_eq!(c.center_mid, 0.5 * (c.center_pos + c.center_neg));
    let recomputed = compute_centers(&train, "gender", -1, &proto.query_embedding).unwrap();
    assert!((c.center_pos - recomputed.center_pos).abs() < 1e-12);
    assert!((c.center_neg - recomputed.center_neg).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("female.json");
    proto.save(&path).unwrap();
    let back = Prototype::load(&path).unwrap();
    assert_eq!(back, proto);
    assert_eq!(compile_query(&back, &enc).unwrap(), proto.query_embedding);
}

#[test]
fn training_is_deterministic() {
    let (data, train_rows, _) = planted(0.5);
    let enc = ToyEncoder::new(data.spec.dim, data.spec.dim, 1, &data.vocab).unwrap();
    let train = StoreView::from_rows(&data.store, train_rows);
    let config = AplConfig { epochs: 4, batch: Some(50), ..Default::default() };
    let words = ["hat".to_string()];
    let a = train_prototype(&train, "hat", 1, &words, &config, &enc).unwrap();
    let b = train_prototype(&train, "hat", 1, &words, &config, &enc).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn bypass_encoder_learns_too() {
    let (data, train_rows, test_rows) = planted(0.3);
    let enc = BypassEncoder::new(data.spec.dim, data.vocab.clone()).unwrap();
    let train = StoreView::from_rows(&data.store, train_rows);
    let test = StoreView::from_rows(&data.store, test_rows);
    let words = ["glasses".to_string()];
    let manual = manual_prototype(&train, "glasses", 1, &words, &enc).unwrap();
    let config = AplConfig { lr: 0.5, ..Default::default() };
    let (learned, _) = train_prototype(&train, "glasses", 1, &words, &config, &enc).unwrap();
    assert!(learned.accuracy(&test).unwrap() >= manual.accuracy(&test).unwrap());
}

#[test]
fn config_and_input_errors() {
    let (data, train_rows, _) = planted(0.5);
    let enc = ToyEncoder::new(data.spec.dim, data.spec.dim, 1, &data.vocab).unwrap();
    let train = StoreView::from_rows(&data.store, train_rows);
    let words = ["hat".to_string()];
    let bad = AplConfig { n_prefix: 0, ..Default::default() };
    assert!(matches!(train_prototype(&train, "hat", 1, &words, &bad, &enc), Err(Error::InvalidConfig(_))));
    let unknown = ["zebra".to_string()];
    assert!(matches!(
        train_prototype(&train, "hat", 1, &unknown, &AplConfig::default(), &enc),
        Err(Error::UnknownToken(_))
    ));
    assert!(matches!(
        train_prototype(&train, "age", 1, &words, &AplConfig::default(), &enc),
        Err(Error::UnknownAttribute(_))
    ));
    for bad in [
        AplConfig { batch: Some(0), ..Default::default() },
        AplConfig { lr: f64::NAN, ..Default::default() },
        AplConfig { epochs: 0, ..Default::default() },
    ] {
        assert!(matches!(train_prototype(&train, "hat", 1, &words, &bad, &enc), Err(Error::InvalidConfig(_))));
    }
}
