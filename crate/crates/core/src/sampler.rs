//! Exact accept–reject sampling of perfect matchings from
//! `p(y | x; θ) = w(y) / Z`, and Monte-Carlo expectations built on it.
//!
//! The space of matchings is split by the column taken by the current row.
//! Branch `j` has mass `A_tj · U(A minor tj)`, where `U` is an upper bound on
//! the permanent. If the bound is super-additive,
//!
//! ```text
//! Σ_j A_tj · U(A minor tj) ≤ U(A)      (P1)
//! ```
//!
//! the branch masses divided by `U(A)` leave a nonnegative remainder, and
//! drawing that remainder rejects the attempt. If the bound is exact on a
//! single matching (P2), the accepted path probability telescopes to
//! `w(y) / U(A)`, so conditional on acceptance `y` has probability
//! `w(y) / Z` and the acceptance rate is `Z / U(A)`.
//!
//! Two bounds are provided:
//!
//! * [`BoundKind::RowSumProduct`]: `U(A) = Π_i r_i` with `r_i` the row sums.
//!   Expanding `Π_i (A_1j + Σ_{k≠j} A_ik)` shows P1 directly, and a `1 × 1`
//!   matrix gives back its entry. Acceptance decays like `m!/m^m` on flat
//!   matrices, so it is only practical for small `m`.
//! * [`BoundKind::HuberLaw`]: `U(A) = Π_j h(c_j) / e` over column sums `c_j`
//!   of a matrix with entries in `[0, 1]`, where
//!   `h(r) = r + ½ ln r + e − 1` for `r ≥ 1` and `h(r) = 1 + (e − 1) r` below.
//!   A `1 × 1` matrix is bounded by its entry. Before sampling, the weights
//!   are Sinkhorn-balanced and each column is divided by its maximum. Diagonal
//!   scaling multiplies every matching's weight by the same constant, so the
//!   target distribution does not change.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::permanent::LogWeightMatrix;
use crate::types::{log_weights, sufficient_statistics, EdgeFeatureTensor, Matching, ModelParams};

/// Per-sample attempt budget before giving up.
pub const DEFAULT_ATTEMPTS_PER_SAMPLE: u64 = 1_000_000;

/// Slack allowed on P1 before a bound is declared invalid.
const P1_SLACK: f64 = 1e-12;

const SINKHORN_MAX_ITERS: usize = 200;
const SINKHORN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundKind {
    RowSumProduct,
    #[default]
    HuberLaw,
}

impl BoundKind {
    pub fn name(&self) -> &'static str {
        match self {
            BoundKind::RowSumProduct => "row-sum",
            BoundKind::HuberLaw => "huber-law",
        }
    }

    /// `log U(A)` for a row-major nonnegative `m × m` matrix.
    ///
    /// The Huber–Law bound is only valid for entries in `[0, 1]`.
    pub fn log_bound(&self, m: usize, a: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), m * m);
        match m {
            0 => 0.0,
            1 => a[0].ln(),
            _ => match self {
                BoundKind::RowSumProduct => (0..m)
                    .map(|i| a[i * m..(i + 1) * m].iter().sum::<f64>().ln())
                    .sum(),
                BoundKind::HuberLaw => {
                    (0..m)
                        .map(|j| ln_h((0..m).map(|i| a[i * m + j]).sum()))
                        .sum::<f64>()
                        - m as f64
                }
            },
        }
    }
}

impl std::str::FromStr for BoundKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "row-sum" | "row_sum_product" => Ok(BoundKind::RowSumProduct),
            "huber-law" | "refined" => Ok(BoundKind::HuberLaw),
            other => Err(Error::validation(format!(
                "unknown bound `{other}` (expected row-sum or huber-law)"
            ))),
        }
    }
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[inline]
fn ln_h(r: f64) -> f64 {
    if r >= 1.0 {
        (r + 0.5 * r.ln() + E - 1.0).ln()
    } else {
        (1.0 + (E - 1.0) * r).ln()
    }
}

/// A diagonally rescaled copy `A` of `B = exp(W)` ready for sampling.
///
/// `log per(B) = log per(A) + log_scale`.
#[derive(Debug, Clone)]
pub struct PreparedMatrix {
    m: usize,
    a: Vec<f64>,
    log_scale: f64,
    bound: BoundKind,
    log_bound: f64,
    // col_suffix[t * m + j] = Σ_{i ≥ t} a_ij, with an extra zero row at t = m
    col_suffix: Vec<f64>,
}

impl PreparedMatrix {
    pub fn new(w: &LogWeightMatrix, bound: BoundKind) -> Result<Self> {
        let m = w.m();
        if m == 0 {
            return Err(Error::validation("cannot sample from an empty matrix"));
        }
        let (a, log_scale) = match bound {
            BoundKind::RowSumProduct => (w.scaled_linear(), w.total_shift()),
            BoundKind::HuberLaw => balance_for_huber_law(w)?,
        };
        Self::from_parts(m, a, log_scale, bound)
    }

    /// Uses `a` as given. For [`BoundKind::HuberLaw`] entries must lie in `[0, 1]`.
    pub fn from_entries(m: usize, a: Vec<f64>, bound: BoundKind) -> Result<Self> {
        if a.len() != m * m || m == 0 {
            return Err(Error::validation("prepared matrix must be m × m with m ≥ 1"));
        }
        if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation("prepared entries must be finite and nonnegative"));
        }
        Self::from_parts(m, a, 0.0, bound)
    }

    fn from_parts(m: usize, a: Vec<f64>, log_scale: f64, bound: BoundKind) -> Result<Self> {
        let log_bound = bound.log_bound(m, &a);
        if !(log_bound > f64::NEG_INFINITY) {
            return Err(Error::Numerical(
                "weight matrix has an empty row or column; no perfect matching exists".into(),
            ));
        }
        let mut col_suffix = vec![0.0; (m + 1) * m];
        for t in (0..m).rev() {
            for j in 0..m {
                col_suffix[t * m + j] = col_suffix[(t + 1) * m + j] + a[t * m + j];
            }
        }
        Ok(PreparedMatrix {
            m,
            a,
            log_scale,
            bound,
            log_bound,
            col_suffix,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entries(&self) -> &[f64] {
        &self.a
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn bound(&self) -> BoundKind {
        self.bound
    }

    /// `log U(A)` of the prepared matrix.
    pub fn log_bound(&self) -> f64 {
        self.log_bound
    }

    /// Expected acceptance rate `per(A) / U(A)` given `log per(B)`.
    pub fn acceptance_probability(&self, log_permanent_b: f64) -> f64 {
        (log_permanent_b - self.log_scale - self.log_bound).exp()
    }

    /// `log U` of the minors left after row `t` takes each column in `cols`.
    fn minor_log_bounds(&self, t: usize, cols: &[usize], out: &mut Vec<f64>) {
        let m = self.m;
        let n = cols.len();
        out.clear();
        if n == 1 {
            out.push(0.0);
            return;
        }
        if n == 2 {
            // the minor is 1 × 1: both bounds are exact there
            out.push(self.a[(t + 1) * m + cols[1]].ln());
            out.push(self.a[(t + 1) * m + cols[0]].ln());
            return;
        }
        match self.bound {
            BoundKind::RowSumProduct => {
                out.resize(n, 0.0);
                let mut prefix = vec![0.0; n + 1];
                for i in t + 1..m {
                    let row = &self.a[i * m..(i + 1) * m];
                    for (k, &c) in cols.iter().enumerate() {
                        prefix[k + 1] = prefix[k] + row[c];
                    }
                    // suffix sums accumulate on the fly
                    let mut suffix = 0.0;
                    for k in (0..n).rev() {
                        out[k] += (prefix[k] + suffix).ln();
                        suffix += row[cols[k]];
                    }
                }
            }
            BoundKind::HuberLaw => {
                let sums = &self.col_suffix[(t + 1) * m..(t + 2) * m];
                let logs: Vec<f64> = cols.iter().map(|&c| ln_h(sums[c])).collect();
                let total: f64 = logs.iter().sum();
                let dim = (n - 1) as f64;
                out.extend(logs.iter().map(|l| total - l - dim));
            }
        }
    }

    /// One accept–reject pass. `Ok(None)` is a rejection.
    pub fn sample_once<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Option<Matching>> {
        let m = self.m;
        let mut cols: Vec<usize> = (0..m).collect();
        let mut perm = Vec::with_capacity(m);
        let mut log_u = self.log_bound;
        let mut minor_bounds = Vec::with_capacity(m);
        let mut probs = Vec::with_capacity(m);
        for t in 0..m {
            self.minor_log_bounds(t, &cols, &mut minor_bounds);
            probs.clear();
            let row = &self.a[t * m..(t + 1) * m];
            let mut mass = 0.0;
            for (k, &c) in cols.iter().enumerate() {
                let p = if row[c] == 0.0 {
                    0.0
                } else {
                    row[c] * (minor_bounds[k] - log_u).exp()
                };
                mass += p;
                probs.push(p);
            }
            if mass > 1.0 + P1_SLACK {
                return Err(Error::BoundInvalid { mass });
            }
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = None;
            for (k, p) in probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    pick = Some(k);
                    break;
                }
            }
            let Some(k) = pick else {
                return Ok(None);
            };
            perm.push(cols.remove(k));
            log_u = minor_bounds[k];
        }
        Matching::new(perm).map(Some)
    }
}

/// Sinkhorn-balances `W` in log space, then scales each column to max 1.
fn balance_for_huber_law(w: &LogWeightMatrix) -> Result<(Vec<f64>, f64)> {
    let m = w.m();
    let mut la = w.log_entries().to_vec();
    let mut log_scale = 0.0;
    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    };
    for _ in 0..SINKHORN_MAX_ITERS {
        for i in 0..m {
            let s = lse(&mut la[i * m..(i + 1) * m].iter().copied());
            if s == f64::NEG_INFINITY {
                return Err(Error::Numerical(format!("row {i} has no positive weight")));
            }
            la[i * m..(i + 1) * m].iter_mut().for_each(|v| *v -= s);
            log_scale += s;
        }
        let mut worst: f64 = 0.0;
        for j in 0..m {
            let s = lse(&mut (0..m).map(|i| la[i * m + j]));
            if s == f64::NEG_INFINITY {
                return Err(Error::Numerical(format!("column {j} has no positive weight")));
            }
            (0..m).for_each(|i| la[i * m + j] -= s);
            log_scale += s;
            worst = worst.max(s.abs());
        }
        if worst < SINKHORN_TOL {
            break;
        }
    }
    for j in 0..m {
        let max = (0..m).map(|i| la[i * m + j]).fold(f64::NEG_INFINITY, f64::max);
        (0..m).for_each(|i| la[i * m + j] -= max);
        log_scale += max;
    }
    Ok((la.iter().map(|v| v.exp()).collect(), log_scale))
}

/// Independent random stream for sample `index` under `seed`.
pub fn sample_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mixes a base seed with two counters (splitmix64 finalizer).
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single exact draw, or `None` on rejection.
pub fn sample_matching<R: Rng + ?Sized>(
    w: &LogWeightMatrix,
    bound: BoundKind,
    rng: &mut R,
) -> Result<Option<Matching>> {
    PreparedMatrix::new(w, bound)?.sample_once(rng)
}

/// `k` accepted samples and the number of attempts spent on them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub samples: Vec<Matching>,
    pub attempts: u64,
    pub seed: u64,
}

impl SampleBatch {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempts as f64
    }
}

pub fn sample_batch(w: &LogWeightMatrix, bound: BoundKind, k: usize, seed: u64) -> Result<SampleBatch> {
    let prepared = PreparedMatrix::new(w, bound)?;
    sample_prepared(&prepared, k, seed, DEFAULT_ATTEMPTS_PER_SAMPLE)
}

/// Draws `k` samples; sample `i` uses stream `i` of `seed`, so the batch does
/// not depend on how the work is scheduled.
pub fn sample_prepared(
    prepared: &PreparedMatrix,
    k: usize,
    seed: u64,
    attempts_per_sample: u64,
) -> Result<SampleBatch> {
    if k == 0 {
        return Err(Error::validation("sample count k must be >= 1"));
    }
    let draws: Vec<(Matching, u64)> = (0..k)
        .into_par_iter()
        .map(|idx| {
            let mut rng = sample_stream(seed, idx as u64);
            for attempt in 1..=attempts_per_sample {
                if let Some(y) = prepared.sample_once(&mut rng)? {
                    return Ok((y, attempt));
                }
            }
            Err(Error::AcceptanceTooLow {
                accepted: 0,
                attempts: attempts_per_sample,
                rate: 0.0,
            })
        })
        .collect::<Result<_>>()?;
    let attempts = draws.iter().map(|(_, a)| a).sum();
    Ok(SampleBatch {
        samples: draws.into_iter().map(|(y, _)| y).collect(),
        attempts,
        seed,
    })
}

/// `(1/K) Σ_k φ(x, y_k)` over `K` exact samples.
pub fn expectation_sampled(
    x: &EdgeFeatureTensor,
    params: &ModelParams,
    bound: BoundKind,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let w = log_weights(x, params)?;
    let batch = sample_batch(&w, bound, k, seed)?;
    mean_statistics(x, &batch.samples)
}

pub(crate) fn mean_statistics(x: &EdgeFeatureTensor, samples: &[Matching]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; x.d()];
    for y in samples {
        for (acc, v) in mean.iter_mut().zip(sufficient_statistics(x, y)?) {
            *acc += v;
        }
    }
    let k = samples.len() as f64;
    mean.iter_mut().for_each(|v| *v /= k);
    Ok(mean)
}
