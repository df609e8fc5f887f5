//! Synthetic point-set matching benchmark.
//!
//! Each pair holds `m` descriptors per side. Side two is a permuted, noisy copy
//! of side one, and edge features are elementwise squared differences.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::predict_matching;
use crate::sampler::derive_seed;
use crate::training::{train, InferenceMode, TrainConfig};
use crate::types::{log_weights, EdgeFeatureTensor, Matching, ModelParams, TrainingSet};

pub const MATCHPAIRS_VERSION: u32 = 1;
/// From this pair size on, `auto` inference in a sweep means the sampler.
pub const SWEEP_SAMPLER_MIN_M: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSetPair {
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
    truth: Matching,
}

impl PointSetPair {
    /// `truth(i)` is the right-side point matched to left point `i`.
    pub fn new(left: Vec<Vec<f64>>, right: Vec<Vec<f64>>, truth: Matching) -> Result<Self> {
        let m = left.len();
        if m == 0 {
            return Err(Error::validation("a point set pair needs at least one point"));
        }
        if right.len() != m || truth.len() != m {
            return Err(Error::validation(format!(
                "sides have {} and {} points, ground truth has {}",
                m,
                right.len(),
                truth.len()
            )));
        }
        let p = left[0].len();
        if p == 0 {
            return Err(Error::validation("descriptors must be non-empty"));
        }
        if left.iter().chain(&right).any(|v| v.len() != p) {
            return Err(Error::validation("descriptor dimensions differ"));
        }
        if left.iter().chain(&right).flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("descriptors must be finite"));
        }
        Ok(PointSetPair { left, right, truth })
    }

    pub fn m(&self) -> usize {
        self.left.len()
    }

    pub fn p(&self) -> usize {
        self.left[0].len()
    }

    pub fn left(&self) -> &[Vec<f64>] {
        &self.left
    }

    pub fn right(&self) -> &[Vec<f64>] {
        &self.right
    }

    pub fn truth(&self) -> &Matching {
        &self.truth
    }
}

/// `x_ij = (ψ_i − ψ'_j)²` componentwise, so `d = p`.
pub fn edge_features_matching(pair: &PointSetPair) -> EdgeFeatureTensor {
    EdgeFeatureTensor::from_fn(pair.m(), pair.p(), |i, j| {
        pair.left[i]
            .iter()
            .zip(&pair.right[j])
            .map(|(a, b)| (a - b) * (a - b))
            .collect()
    })
    .expect("pair invariants give a well-formed tensor")
}

/// Pairs with standard-normal left descriptors and right descriptors
/// `ψ'_{y(i)} = ψ_i + σ ε`. Pair `k` draws from its own seed stream.
pub fn generate_synthetic(n: usize, m: usize, p: usize, sigma: f64, seed: u64) -> Result<Vec<PointSetPair>> {
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::validation("n, m and p must be at least 1"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::validation("noise sigma must be finite and >= 0"));
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, 0x6d62));
            let left: Vec<Vec<f64>> = (0..m)
                .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut rng);
            let mut right = vec![Vec::new(); m];
            for (i, &j) in perm.iter().enumerate() {
                right[j] = left[i]
                    .iter()
                    .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
            }
            PointSetPair::new(left, right, Matching::new(perm)?)
        })
        .collect()
}

/// Fraction of positions where the two matchings disagree.
pub fn hamming_loss(y_pred: &Matching, y_true: &Matching) -> Result<f64> {
    if y_pred.len() != y_true.len() {
        return Err(Error::validation(format!(
            "matchings have lengths {} and {}",
            y_pred.len(),
            y_true.len()
        )));
    }
    if y_pred.is_empty() {
        return Ok(0.0);
    }
    let wrong = y_pred
        .as_slice()
        .iter()
        .zip(y_true.as_slice())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / y_pred.len() as f64)
}

/// Minimum total squared descriptor distance, i.e. prediction under `θ = −1`.
pub fn nearest_descriptor_matching(pair: &PointSetPair) -> Result<Matching> {
    let params = ModelParams::new(vec![-1.0; pair.p()], 0.0)?;
    predict_matching(&log_weights(&edge_features_matching(pair), &params)?)
}

pub fn to_training_set(pairs: &[PointSetPair]) -> Result<TrainingSet> {
    let d = pairs.first().map_or(0, PointSetPair::p);
    let examples = pairs
        .par_iter()
        .map(|pair| (edge_features_matching(pair), pair.truth.clone()))
        .collect();
    TrainingSet::new(d, examples)
}

/// Mean Hamming loss of the model's predictions.
pub fn mean_hamming_loss(pairs: &[PointSetPair], params: &ModelParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::validation("no pairs to evaluate"));
    }
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|pair| {
            let y = predict_matching(&log_weights(&edge_features_matching(pair), params)?)?;
            hamming_loss(&y, &pair.truth)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub m: usize,
    pub p: usize,
    pub sigma: f64,
    pub repeats: usize,
    pub test_pairs: usize,
    /// Pairs held out per split for choosing λ; unused with a single λ.
    pub validation_pairs: usize,
    pub lambda_grid: Vec<f64>,
    pub seed: u64,
    /// Optimizer and inference settings; `lambda` comes from the grid.
    pub train: TrainConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            m: 20,
            p: 5,
            sigma: 0.7,
            repeats: 5,
            test_pairs: 500,
            validation_pairs: 0,
            lambda_grid: vec![1e-3],
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub train_size: usize,
    pub repeat: usize,
    pub hamming_loss: f64,
    pub seconds: f64,
}

/// Trains on `pairs`; a stagnated line search still yields its last iterate.
pub fn fit_pairs(pairs: &[PointSetPair], lambda: f64, cfg: &TrainConfig) -> Result<ModelParams> {
    let ts = to_training_set(pairs)?;
    let tc = TrainConfig {
        lambda,
        ..cfg.clone()
    };
    let theta = match train(&ts, &tc) {
        Ok(report) => report.theta_final,
        Err(Error::Stagnation(report)) => {
            log::warn!("line search stagnated on {} pairs; using last iterate", pairs.len());
            report.theta_final
        }
        Err(e) => return Err(e),
    };
    ModelParams::new(theta, lambda)
}

/// Test loss against training-set size.
///
/// Each repeat fixes one test set; every size then trains on freshly drawn
/// pairs. With `auto` inference, pairs of [`SWEEP_SAMPLER_MIN_M`] or more
/// points use the sampler; otherwise `cfg.train.inference` applies.
pub fn sample_size_sweep(sizes: &[usize], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] >= w[1]) || sizes[0] == 0 {
        return Err(Error::validation("sizes must be positive and strictly ascending"));
    }
    if cfg.lambda_grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    if cfg.lambda_grid.len() > 1 && cfg.validation_pairs == 0 {
        return Err(Error::validation("choosing among several lambdas needs validation pairs"));
    }
    let mut train_cfg = cfg.train.clone();
    if cfg.train.inference == InferenceMode::Auto && cfg.m >= SWEEP_SAMPLER_MIN_M {
        train_cfg.inference = InferenceMode::Sample;
    }
    let mut rows = Vec::new();
    for repeat in 0..cfg.repeats {
        let test = generate_synthetic(cfg.test_pairs, cfg.m, cfg.p, cfg.sigma, derive_seed(cfg.seed, repeat as u64, 0))?;
        for &size in sizes {
            let start = Instant::now();
            let split_seed = derive_seed(cfg.seed, repeat as u64, size as u64);
            let pool = generate_synthetic(size + cfg.validation_pairs, cfg.m, cfg.p, cfg.sigma, split_seed)?;
            let (train_pairs, validation) = pool.split_at(size);
            let tc = TrainConfig {
                seed: split_seed,
                ..train_cfg.clone()
            };
            let mut best: Option<(f64, ModelParams)> = None;
            for &lambda in &cfg.lambda_grid {
                let params = fit_pairs(train_pairs, lambda, &tc)?;
                if cfg.lambda_grid.len() == 1 {
                    best = Some((0.0, params));
                    break;
                }
                let v = mean_hamming_loss(validation, &params)?;
                if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
                    best = Some((v, params));
                }
            }
            let (_, params) = best.expect("grid is non-empty");
            let hamming_loss = mean_hamming_loss(&test, &params)?;
            rows.push(SweepRow {
                train_size: size,
                repeat,
                hamming_loss,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(rows)
}

/// Average loss per training size, in order of first appearance.
pub fn mean_loss_by_size(rows: &[SweepRow]) -> Vec<(usize, f64)> {
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !sizes.contains(&r.train_size) {
            sizes.push(r.train_size);
        }
    }
    sizes
        .into_iter()
        .map(|s| {
            let v: Vec<f64> = rows.iter().filter(|r| r.train_size == s).map(|r| r.hamming_loss).collect();
            (s, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    left: Vec<Vec<f64>>,
    right: Vec<Vec<f64>>,
    /// 1-based right-side index per left point.
    truth: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatchPairsFile {
    version: u32,
    pairs: Vec<PairRecord>,
}

/// JSON document `{"version":1,"pairs":[{"left":…,"right":…,"truth":[1-based]}]}`.
pub fn serialize_pairs(pairs: &[PointSetPair]) -> String {
    let file = MatchPairsFile {
        version: MATCHPAIRS_VERSION,
        pairs: pairs
            .iter()
            .map(|p| PairRecord {
                left: p.left.clone(),
                right: p.right.clone(),
                truth: p.truth.to_one_based(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string(&file).expect("pairs serialize");
    s.push('\n');
    s
}

pub fn parse_pairs(text: &str) -> Result<Vec<PointSetPair>> {
    let file: MatchPairsFile =
        serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
    if file.version != MATCHPAIRS_VERSION {
        return Err(Error::parse(1, format!("unsupported matchpairs version {}", file.version)));
    }
    let pairs = file
        .pairs
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let truth = Matching::from_one_based(&r.truth)
                .map_err(|e| Error::validation(format!("pair {}: {e}", k + 1)))?;
            PointSetPair::new(r.left, r.right, truth).map_err(|e| Error::validation(format!("pair {}: {e}", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = pairs.first() {
        if pairs.iter().any(|p| p.p() != first.p()) {
            return Err(Error::validation("pairs have different descriptor dimensions"));
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(left: Vec<Vec<f64>>, right: Vec<Vec<f64>>) -> PointSetPair {
        let m = left.len();
        PointSetPair::new(left, right, Matching::identity(m)).unwrap()
    }

    #[test]
    fn edge_feature_examples() {
        let pr = pair(vec![vec![1.0, 2.0], vec![0.0, 4.0]], vec![vec![0.0, 4.0], vec![1.0, 2.0]]);
        let x = edge_features_matching(&pr);
        assert_eq!(x.edge(0, 0), &[1.0, 4.0]);
        assert_eq!(x.edge(1, 1), &[1.0, 4.0]);
        assert_eq!(x.edge(0, 1), &[0.0, 0.0]);
        assert_eq!(x.edge(1, 0), &[0.0, 0.0]);
    }

    #[test]
    fn pair_validation() {
        assert!(PointSetPair::new(vec![vec![1.0]], vec![vec![1.0, 2.0]], Matching::identity(1)).is_err());
        assert!(PointSetPair::new(vec![vec![1.0]], vec![], Matching::identity(1)).is_err());
        assert!(PointSetPair::new(vec![vec![f64::NAN]], vec![vec![1.0]], Matching::identity(1)).is_err());
    }

    #[test]
    fn hamming_examples() {
        let id = Matching::identity(4);
        assert_eq!(hamming_loss(&id, &id).unwrap(), 0.0);
        let swap = Matching::new(vec![1, 0]).unwrap();
        assert_eq!(hamming_loss(&swap, &Matching::identity(2)).unwrap(), 1.0);
        let cycle = Matching::new(vec![1, 2, 0, 3]).unwrap();
        assert_eq!(hamming_loss(&cycle, &id).unwrap(), 0.75);
        assert_eq!(hamming_loss(&id, &cycle).unwrap(), 0.75);
        assert!(hamming_loss(&id, &swap).is_err());
    }

    #[test]
    fn noise_free_pairs_are_recovered() {
        for pr in generate_synthetic(20, 12, 3, 0.0, 5).unwrap() {
            assert_eq!(&nearest_descriptor_matching(&pr).unwrap(), pr.truth());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(4, 6, 2, 0.3, 11).unwrap();
        assert_eq!(a, generate_synthetic(4, 6, 2, 0.3, 11).unwrap());
        assert_ne!(a, generate_synthetic(4, 6, 2, 0.3, 12).unwrap());
    }

    #[test]
    fn heavy_noise_approaches_random_matching() {
        let m = 10;
        let pairs = generate_synthetic(400, m, 3, 50.0, 2).unwrap();
        let mean: f64 = pairs
            .iter()
            .map(|pr| hamming_loss(&nearest_descriptor_matching(pr).unwrap(), pr.truth()).unwrap())
            .sum::<f64>()
            / pairs.len() as f64;
        // a uniformly random matching has expected loss (m − 1)/m
        let expect = (m - 1) as f64 / m as f64;
        assert!((mean - expect).abs() < 0.03, "{mean}");
    }

    #[test]
    fn matchpairs_round_trip() {
        let pairs = generate_synthetic(3, 4, 2, 0.1, 0).unwrap();
        let text = serialize_pairs(&pairs);
        assert_eq!(parse_pairs(&text).unwrap(), pairs);
        assert!(text.contains("\"truth\":["));
        assert!(parse_pairs("{\"version\":1,\"pairs\":[{\"left\":[[1]],\"right\":[[1]],\"truth\":[0]}]}").is_err());
        assert!(parse_pairs("{\"version\":2,\"pairs\":[]}").is_err());
    }

    #[test]
    fn small_noise_free_sweep() {
        let cfg = SweepConfig {
            m: 5,
            p: 2,
            sigma: 0.0,
            repeats: 1,
            test_pairs: 20,
            train: TrainConfig { max_iters: 50, ..TrainConfig::default() },
            ..SweepConfig::default()
        };
        let rows = sample_size_sweep(&[1], &cfg).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].hamming_loss < 0.05, "{:?}", rows[0]);
        assert!(sample_size_sweep(&[2, 1], &cfg).is_err());
    }
}
