mod common;

use common::{oracle_ivector, random_model};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rawfe::gammatone::GammatoneConfig;
use rawfe::ivector::{
    extract_ivector, tile_ivector, IVectorExtractor, IVectorModel, CONTEXT_FRAMES, IVECTOR_DIM,
    LDA_DIM,
};
use rawfe::Waveform;

#[test]
fn matches_dense_oracle_on_small_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let (model, w, m, v, t) = random_model(&mut rng, 4, 3, 2);
        let frames = rng.gen_range(1..40);
        let feats = Array2::from_shape_fn((frames, 3), |_| rng.gen_range(-3.0..3.0));
        let stats = model.accumulate(feats.view()).unwrap();
        let got = model.solve(&stats).unwrap().values;
        let want = oracle_ivector(&feats, &w, &m, &v, &t);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "{got:?} vs {want:?}");
        }
        let iv = extract_ivector(feats.view(), &model, "u").unwrap();
        let norm = want.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in iv.values.iter().zip(&want) {
            assert!((a - b / norm).abs() < 1e-8);
        }
    }
}

#[test]
fn statistics_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (model, ..) = random_model(&mut rng, 6, 4, 3);
    let feats = Array2::from_shape_fn((50, 4), |_| rng.gen_range(-3.0..3.0));
    for x in feats.rows() {
        assert!((model.posteriors(x).sum() - 1.0).abs() < 1e-10);
    }
    let stats = model.accumulate(feats.view()).unwrap();
    assert!(stats.zeroth.iter().all(|&n| n >= 0.0));
    assert!((stats.zeroth.sum() - 50.0).abs() < 1e-10);

    let base = extract_ivector(feats.view(), &model, "u").unwrap();
    let mut order: Vec<usize> = (0..50).collect();
    order.shuffle(&mut rng);
    let permuted = Array2::from_shape_fn((50, 4), |(i, j)| feats[[order[i], j]]);
    let other = extract_ivector(permuted.view(), &model, "u").unwrap();
    for (a, b) in base.values.iter().zip(&other.values) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn unit_norm_over_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (model, ..) = random_model(&mut rng, 4, 3, 5);
    for _ in 0..100 {
        let frames = rng.gen_range(1..30);
        let feats = Array2::from_shape_fn((frames, 3), |_| rng.gen_range(-4.0..4.0));
        let iv = extract_ivector(feats.view(), &model, "u").unwrap();
        let norm = iv.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }
}

#[test]
fn waveform_pipeline_with_toy_model() {
    let model = IVectorModel::toy(7, 8, 50, CONTEXT_FRAMES, LDA_DIM, IVECTOR_DIM).unwrap();
    let extractor = IVectorExtractor::new(model, GammatoneConfig::default()).unwrap();
    assert_eq!(extractor.context(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut samples = vec![0.0; 4000];
    samples.extend((0..16000).map(|_| rng.gen_range(-0.3..0.3)));
    samples.extend(vec![0.0; 4000]);
    let w = Waveform::new(samples).unwrap();
    let feats = extractor.speech_features(&w).unwrap();
    // silence removed: 100 speech frames of 160 samples -> 94 Gammatone frames
    assert_eq!(feats.dim(), (94, LDA_DIM));
    let iv = extractor.extract(&w, "utt1").unwrap();
    assert_eq!(iv.dim(), IVECTOR_DIM);
    assert_eq!(iv.utterance_id, "utt1");
    let norm = iv.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    let tiled = tile_ivector(&iv, 94).unwrap();
    assert_eq!((tiled.num_frames(), tiled.dim()), (94, 200));

    let silent = Waveform::new(vec![0.0; 8000]).unwrap();
    assert!(matches!(extractor.extract(&silent, "s"), Err(rawfe::Error::AllSilent)));
}
