mod common;

use std::sync::Mutex;

use hyperaug::augment::{Augment, AugmentConfig, PcaAugmenter};
use hyperaug::pca::PcaModel;
use hyperaug::tta::{self, Classifier, TtaConfig};
use hyperaug::{Result, Spectrum};
use proptest::prelude::*;
use rand::{Rng, RngCore};

/// Scores class k by closeness of the first band to k / C.
struct Ruler {
    classes: usize,
}

impl Classifier for Ruler {
    fn classes(&self) -> usize {
        self.classes
    }

    fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>> {
        Ok(xs
            .iter()
            .map(|x| {
                let w: Vec<f64> = (1..=self.classes)
                    .map(|k| (-(x.values[0] - k as f64 / self.classes as f64).powi(2) * 50.0).exp())
                    .collect();
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            })
            .collect())
    }
}

struct Constant;

impl Classifier for Constant {
    fn classes(&self) -> usize {
        3
    }

    fn predict_proba_batch(&self, xs: &[Spectrum]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![vec![0.2, 0.5, 0.3]; xs.len()])
    }
}

/// Records the labels it is asked to augment.
struct Spy {
    seen: Mutex<Vec<Option<u16>>>,
}

impl Augment for Spy {
    fn synthesize(&self, x: &Spectrum, rng: &mut dyn RngCore) -> Result<Spectrum> {
        self.seen.lock().unwrap().push(x.label);
        let jitter = rng.gen_range(-0.05..0.05);
        Ok(x.with_values(x.values.iter().map(|v| v + jitter).collect()))
    }

    fn name(&self) -> &'static str {
        "spy"
    }
}

fn pca_augmenter() -> PcaAugmenter {
    let train = common::random_samples(&mut common::rng(1), 30, 3);
    PcaAugmenter::new(PcaModel::fit(&train).unwrap(), AugmentConfig::default()).unwrap()
}

fn test_set(n: usize, seed: u64) -> Vec<Spectrum> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|i| {
            let mut s = Spectrum::labeled((0..3).map(|_| rng.gen_range(0.0..1.0)).collect(), 1);
            s.coord = Some((i as u32 / 7, i as u32 % 7));
            s
        })
        .collect()
}

#[test]
fn vote_matches_reference() {
    assert_eq!(common::vote_mismatches(10_000, 12), 0);
}

#[test]
fn zero_augmentations_is_plain_prediction() {
    let model = Ruler { classes: 4 };
    let cfg = TtaConfig { augmentations: 0, seed: 0 };
    for x in test_set(20, 2) {
        let r = tta::tta_classify(&model, &pca_augmenter(), &x, &cfg, &mut hyperaug::seed::rng(0)).unwrap();
        let p = &model.predict_proba_batch(std::slice::from_ref(&x)).unwrap()[0];
        assert_eq!(r.label as usize, hyperaug::cnn::argmax(p) + 1);
        assert_eq!(r.votes.iter().sum::<usize>(), 1);
        assert_eq!(r.votes[r.label as usize - 1], 1);
    }
}

#[test]
fn result_independent_of_processing_order() {
    let model = Ruler { classes: 5 };
    let aug = pca_augmenter();
    let cfg = TtaConfig { augmentations: 4, seed: 77 };
    let set = test_set(60, 3);
    let forward = tta::tta_classify_set(&model, &aug, &set, &cfg).unwrap();
    let mut reversed = set.clone();
    reversed.reverse();
    let backward = tta::tta_classify_set(&model, &aug, &reversed, &cfg).unwrap();
    for (i, r) in forward.results.iter().enumerate() {
        assert_eq!(r, &backward.results[set.len() - 1 - i]);
    }
}

#[test]
fn constant_classifier_always_wins_unanimously() {
    let cfg = TtaConfig { augmentations: 4, seed: 1 };
    let out = tta::tta_classify_set(&Constant, &pca_augmenter(), &test_set(10, 4), &cfg).unwrap();
    for r in &out.results {
        assert_eq!(r.label, 2);
        assert_eq!(r.votes, vec![0, 5, 0]);
        assert!(!r.soft_vote_used);
    }
}

#[test]
fn true_label_is_hidden_from_augmenter() {
    let model = Constant;
    let spy = Spy { seen: Mutex::new(Vec::new()) };
    let mut x = Spectrum::labeled(vec![0.1, 0.2, 0.3], 3);
    x.coord = Some((0, 0));
    let cfg = TtaConfig { augmentations: 4, seed: 0 };
    tta::tta_classify(&model, &spy, &x, &cfg, &mut hyperaug::seed::rng(0)).unwrap();
    assert_eq!(*spy.seen.lock().unwrap(), vec![Some(2); 4]);
}

#[test]
fn empty_set() {
    let cfg = TtaConfig::default();
    let out = tta::tta_classify_set(&Constant, &pca_augmenter(), &[], &cfg).unwrap();
    assert!(out.results.is_empty());
    assert_eq!(out.total_seconds, 0.0);
    assert_eq!(out.per_sample_ms, 0.0);
}

#[test]
fn prediction_file_round_trip() {
    let set = test_set(5, 8);
    let cfg = TtaConfig { augmentations: 2, seed: 3 };
    let out = tta::tta_classify_set(&Ruler { classes: 3 }, &pca_augmenter(), &set, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("pred.csv");
    tta::write_predictions(&p, &set, &out.results).unwrap();
    let rows = tta::read_predictions(&p).unwrap();
    assert_eq!(rows.len(), 5);
    for ((row, x), r) in rows.iter().zip(&set).zip(&out.results) {
        assert_eq!(Some((row.row, row.col)), x.coord);
        assert_eq!(row.pred_label, r.label);
        assert_eq!(row.votes, r.votes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn vote_invariants(seed in any::<u64>(), members in 1usize..10, classes in 1usize..7, coarse in any::<bool>()) {
        let table = common::random_table(&mut common::rng(seed), members, classes, coarse);
        let r = tta::vote(&table).unwrap();
        prop_assert_eq!(r.votes.iter().sum::<usize>(), members);
        let top = *r.votes.iter().max().unwrap();
        let winner = r.votes[r.label as usize - 1];
        if r.soft_vote_used {
            prop_assert!(r.votes.iter().filter(|&&v| v == top).count() > 1);
            let best = r.mean_proba[r.label as usize - 1];
            prop_assert!(r.mean_proba.iter().all(|&m| m <= best));
        } else {
            prop_assert_eq!(winner, top);
            prop_assert!(r.votes.iter().enumerate().all(|(k, &v)| k + 1 == r.label as usize || v < winner));
        }
        prop_assert!((r.mean_proba.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
