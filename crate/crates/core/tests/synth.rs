use fairsim_core::embedstore::{Label, VectorSource};
use fairsim_core::simcore::{cosine, dot};
use fairsim_core::synth::{generate, template_tokens, SynthSpec, BIAS_ATTRIBUTE};
use fairsim_core::apl::{TextEncoder, BypassEncoder};
use fairsim_core::Error;

#[test]
fn planted_directions_are_orthonormal() {
    for seed in 0..5 {
        let data = generate(&SynthSpec { seed, n: 16, ..Default::default() }).unwrap();
        let t = &data.truth;
        let mut dirs = vec![&t.content_direction, &t.bias_direction];
        dirs.extend(t.target_directions.values());
        for (i, a) in dirs.iter().enumerate() {
            for (j, b) in dirs.iter().enumerate() {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expected).abs() < 1e-12, "seed {seed}: <{i},{j}> = {}", dot(a, b));
            }
        }
    }
}

#[test]
fn noiseless_similarities_match_the_closed_form() {
    let data = generate(&SynthSpec { n: 64, noise_sigma: 0.0, ..Default::default() }).unwrap();
    let store = data.store.view();
    let labels = store.labels(BIAS_ATTRIBUTE).unwrap();
    for q in &data.bias_queries {
        for (i, l) in labels.iter().enumerate() {
            let y = l.value().unwrap();
            let expected = data.truth.bias_word_similarity(y, &q.word).unwrap();
            // rows are stored in 32-bit precision
            assert!((cosine(&store.vector(i), &q.embedding).unwrap() - expected).abs() < 1e-6);
        }
    }
    assert!(data.truth.bias_word_similarity(1.0, "unknown").is_none());
}

#[test]
fn template_queries_encode_to_the_bias_queries() {
    let data = generate(&SynthSpec { n: 16, ..Default::default() }).unwrap();
    let enc = BypassEncoder::new(data.spec.dim, data.vocab.clone()).unwrap();
    for q in &data.bias_queries {
        let v = enc.encode_words(&template_tokens(&q.word)).unwrap();
        assert!((cosine(&v, &q.embedding).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let spec = SynthSpec { n: 100, ..Default::default() };
    let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    assert_eq!(a.store.to_parts(), b.store.to_parts());
    assert_eq!(a.texts.texts, b.texts.texts);
    let c = generate(&SynthSpec { seed: spec.seed + 1, ..spec }).unwrap();
    assert_ne!(a.store.to_parts(), c.store.to_parts());
}

#[test]
fn labels_follow_the_configured_balance() {
    let data = generate(&SynthSpec { n: 1024, bias_positive_fraction: 0.3, ..Default::default() }).unwrap();
    let labels = data.store.view().labels(BIAS_ATTRIBUTE).unwrap();
    assert_eq!(labels.iter().filter(|&&l| l == Label::Positive).count(), 307);
    for t in data.target_attributes() {
        let l = data.store.view().labels(&t).unwrap();
        assert_eq!(l.iter().filter(|&&l| l == Label::Positive).count(), 512);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(matches!(generate(&SynthSpec { dim: 4, ..Default::default() }), Err(Error::DimTooSmall { .. })));
    assert!(generate(&SynthSpec { n: 3, ..Default::default() }).is_err());
    assert!(generate(&SynthSpec { noise_sigma: -1.0, ..Default::default() }).is_err());
    let unknown: Result<SynthSpec, _> = serde_json::from_str("{\"n\": 10, \"colour\": 1}");
    assert!(unknown.is_err());
    let partial: SynthSpec = serde_json::from_str("{\"n\": 10}").unwrap();
    assert_eq!(partial, SynthSpec { n: 10, ..Default::default() });
}
