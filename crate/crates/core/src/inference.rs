//! Prediction and exact expected sufficient statistics.

use crate::error::{Error, Result};
use crate::permanent::{
    for_each_permutation, match_marginals, permanent_ryser, LogSumExp, LogWeightMatrix,
    MARGINALS_MAX_M,
};
use crate::types::{log_weights, EdgeFeatureTensor, Matching, ModelParams};

mod hungarian;

pub use hungarian::max_weight_assignment;

/// Hard ceiling for full enumeration of matchings in expectations.
pub const ENUMERATE_MAX_M: usize = 8;

/// How `E_{y∼p(y|x;θ)}[φ(x, y)]` is computed exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectationStrategy {
    /// Visit every permutation.
    Enumerate,
    /// `Σ_ij P_ij x_ij` with marginals from minor permanents.
    Minors,
}

/// Size thresholds for automatic strategy selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceLimits {
    pub enumerate_max_m: usize,
    pub minors_max_m: usize,
}

impl Default for InferenceLimits {
    fn default() -> Self {
        InferenceLimits {
            enumerate_max_m: ENUMERATE_MAX_M,
            minors_max_m: MARGINALS_MAX_M,
        }
    }
}

impl InferenceLimits {
    /// `None` means exact inference is off the table and the sampler must be used.
    pub fn auto_strategy(&self, m: usize) -> Option<ExpectationStrategy> {
        if m <= self.enumerate_max_m.min(ENUMERATE_MAX_M) {
            Some(ExpectationStrategy::Enumerate)
        } else if m <= self.minors_max_m.min(MARGINALS_MAX_M) {
            Some(ExpectationStrategy::Minors)
        } else {
            None
        }
    }
}

/// The max-weight matching `argmax_y Σ_i w_{i y(i)}`.
///
/// Among tied optima the lexicographically smallest permutation is returned.
pub fn predict_matching(w: &LogWeightMatrix) -> Result<Matching> {
    if w.log_entries().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(
            "prediction needs finite log-weights",
        ));
    }
    let perm = max_weight_assignment(w.m(), w.log_entries());
    Matching::new(perm)
}

/// Exact `E_{y∼p(y|x;θ)}[φ(x, y)]`.
pub fn expectation_exact(
    x: &EdgeFeatureTensor,
    params: &ModelParams,
    strategy: ExpectationStrategy,
) -> Result<Vec<f64>> {
    let m = x.m();
    let w = log_weights(x, params)?;
    match strategy {
        ExpectationStrategy::Enumerate => {
            if m > ENUMERATE_MAX_M {
                return Err(Error::SizeLimit {
                    what: "expectation_exact(enumerate)",
                    m,
                    limit: ENUMERATE_MAX_M,
                });
            }
            expectation_by_enumeration(x, &w)
        }
        ExpectationStrategy::Minors => {
            if m > MARGINALS_MAX_M {
                return Err(Error::SizeLimit {
                    what: "expectation_exact(minors)",
                    m,
                    limit: MARGINALS_MAX_M,
                });
            }
            let p = match_marginals(&w)?;
            Ok(expectation_from_marginals(x, &p))
        }
    }
}

fn expectation_by_enumeration(x: &EdgeFeatureTensor, w: &LogWeightMatrix) -> Result<Vec<f64>> {
    let m = x.m();
    let mut perms: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut lse = LogSumExp::new();
    for_each_permutation(m, |perm| {
        let lw: f64 = perm.iter().enumerate().map(|(i, &j)| w.get(i, j)).sum();
        lse.add(lw);
        perms.push((perm.to_vec(), lw));
    });
    let log_z = lse.value();
    if log_z == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "every matching has zero weight".into(),
        ));
    }
    let mut e = vec![0.0; x.d()];
    for (perm, lw) in &perms {
        let p = (lw - log_z).exp();
        if p == 0.0 {
            continue;
        }
        for (i, &j) in perm.iter().enumerate() {
            for (acc, v) in e.iter_mut().zip(x.edge(i, j)) {
                *acc += p * v;
            }
        }
    }
    Ok(e)
}

pub(crate) fn expectation_from_marginals(x: &EdgeFeatureTensor, p: &[f64]) -> Vec<f64> {
    let m = x.m();
    let mut e = vec![0.0; x.d()];
    for i in 0..m {
        for j in 0..m {
            let pij = p[i * m + j];
            for (acc, v) in e.iter_mut().zip(x.edge(i, j)) {
                *acc += pij * v;
            }
        }
    }
    e
}

/// `g(x; θ) = log per(exp(⟨x_ij, θ⟩))`.
pub fn log_partition(x: &EdgeFeatureTensor, params: &ModelParams) -> Result<f64> {
    permanent_ryser(&log_weights(x, params)?)
}
