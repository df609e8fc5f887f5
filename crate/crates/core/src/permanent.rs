//! Permanents and matching marginals of `B = exp(W)` in log-scaled arithmetic.
//!
//! Entries are never exponentiated unscaled. Each row `i` is shifted by its
//! maximum `s_i` before `exp`, and the shift is added back in log space:
//! `log per(exp(W)) = log per(exp(W − s 1ᵀ)) + Σ_i s_i`. The permanent is
//! linear in every row.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Largest `m` accepted by [`permanent_brute_force`].
pub const BRUTE_FORCE_MAX_M: usize = 10;
/// Largest `m` accepted by [`permanent_ryser`].
pub const RYSER_MAX_M: usize = 30;
/// Largest `m` accepted by [`match_marginals`].
pub const MARGINALS_MAX_M: usize = 20;

/// An `m × m` matrix of log-weights, with per-row maxima cached.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeightMatrix {
    m: usize,
    w: Vec<f64>,
    row_shift: Vec<f64>,
}

impl LogWeightMatrix {
    /// Entries may be `-inf` (a zero weight) but never NaN or `+inf`.
    pub fn from_log(m: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != m * m {
            return Err(Error::validation(format!(
                "log-weight matrix has {} entries, expected {}",
                w.len(),
                m * m
            )));
        }
        if w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::validation("log-weight matrix contains NaN or +inf"));
        }
        let row_shift = (0..m)
            .map(|i| {
                w[i * m..(i + 1) * m]
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        Ok(LogWeightMatrix { m, w, row_shift })
    }

    /// Takes a nonnegative linear-domain matrix `B` (row-major).
    pub fn from_linear(m: usize, b: &[f64]) -> Result<Self> {
        if b.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::validation(
                "linear weights must be finite and nonnegative",
            ));
        }
        Self::from_log(m, b.iter().map(|v| v.ln()).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::validation("log-weight matrix must be square"));
        }
        Self::from_log(m, rows.concat())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn log_entries(&self) -> &[f64] {
        &self.w
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.m + j]
    }

    pub fn row_shift(&self) -> &[f64] {
        &self.row_shift
    }

    /// `w_ij − s_i`; `-inf` for rows with no finite entry.
    #[inline]
    pub fn scaled(&self, i: usize, j: usize) -> f64 {
        let s = self.row_shift[i];
        if s == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.get(i, j) - s
        }
    }

    /// `exp(w_ij − s_i)`, every entry in `[0, 1]`, row-major.
    pub fn scaled_linear(&self) -> Vec<f64> {
        (0..self.m * self.m)
            .map(|e| self.scaled(e / self.m, e % self.m).exp())
            .collect()
    }

    pub fn total_shift(&self) -> f64 {
        self.row_shift.iter().sum()
    }

    /// The matrix with row `row` and column `col` removed.
    pub fn minor(&self, row: usize, col: usize) -> LogWeightMatrix {
        let m = self.m;
        let mut w = Vec::with_capacity((m - 1) * (m - 1));
        for i in (0..m).filter(|&i| i != row) {
            for j in (0..m).filter(|&j| j != col) {
                w.push(self.get(i, j));
            }
        }
        LogWeightMatrix::from_log(m - 1, w).expect("minor of a valid matrix is valid")
    }

    /// Adds `c` to every entry of row `row`.
    pub fn shift_row(&self, row: usize, c: f64) -> Result<LogWeightMatrix> {
        let mut w = self.w.clone();
        for v in &mut w[row * self.m..(row + 1) * self.m] {
            *v += c;
        }
        LogWeightMatrix::from_log(self.m, w)
    }
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogSumExp {
    max: f64,
    sum: f64,
}

impl LogSumExp {
    pub(crate) fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Calls `f` with every permutation of `0..m` in lexicographic order.
pub(crate) fn for_each_permutation<F: FnMut(&[usize])>(m: usize, mut f: F) {
    let mut perm: Vec<usize> = (0..m).collect();
    loop {
        f(&perm);
        // next lexicographic permutation
        let Some(pivot) = (1..m).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return;
        };
        let pivot = pivot - 1;
        let succ = (pivot + 1..m).rev().find(|&j| perm[j] > perm[pivot]).unwrap();
        perm.swap(pivot, succ);
        perm[pivot + 1..].reverse();
    }
}

/// `log Σ_y Π_i exp(w_{i y(i)})` by visiting all `m!` permutations.
pub fn permanent_brute_force(w: &LogWeightMatrix) -> Result<f64> {
    let m = w.m();
    if m > BRUTE_FORCE_MAX_M {
        return Err(Error::SizeLimit {
            what: "permanent_brute_force",
            m,
            limit: BRUTE_FORCE_MAX_M,
        });
    }
    let mut acc = LogSumExp::new();
    for_each_permutation(m, |perm| {
        acc.add(perm.iter().enumerate().map(|(i, &j)| w.scaled(i, j)).sum());
    });
    Ok(acc.value() + w.total_shift())
}

/// Log-permanent by Ryser's inclusion–exclusion formula in `O(m · 2^m)`.
///
/// Column subsets are visited in Gray-code order so each step adds or removes
/// a single column from the running row sums. The signed sum is accumulated
/// on the row-scaled matrix, whose entries lie in `[0, 1]`.
pub fn permanent_ryser(w: &LogWeightMatrix) -> Result<f64> {
    let m = w.m();
    if m > RYSER_MAX_M {
        return Err(Error::SizeLimit {
            what: "permanent_ryser",
            m,
            limit: RYSER_MAX_M,
        });
    }
    if m == 0 {
        return Ok(0.0);
    }
    if w.row_shift().iter().any(|s| *s == f64::NEG_INFINITY) {
        return Ok(f64::NEG_INFINITY);
    }
    let a = w.scaled_linear();
    if m == 1 {
        return Ok(a[0].ln() + w.total_shift());
    }
    let per = ryser_linear(m, &a);

    // Every inclusion–exclusion term is bounded by the product of full row sums.
    let full: f64 = (0..m).map(|i| a[i * m..(i + 1) * m].iter().sum::<f64>()).product();
    let noise = full * f64::EPSILON * (m as f64) * (1u64 << m) as f64;
    if per > 0.0 {
        Ok(per.ln() + w.total_shift())
    } else if -per <= noise {
        Ok(f64::NEG_INFINITY)
    } else {
        Err(Error::Numerical(format!(
            "Ryser sum is negative ({per:e}) beyond rounding noise ({noise:e})"
        )))
    }
}

/// Linear-domain Ryser on a row-major nonnegative matrix.
fn ryser_linear(m: usize, a: &[f64]) -> f64 {
    const RESYNC_EVERY: u64 = 1 << 12;

    // column-major copy of `a`
    let mut cols = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            cols[j * m + i] = a[i * m + j];
        }
    }
    let mut row_sums = vec![0.0f64; m];
    let mut in_set = vec![false; m];
    let mut set_size = 0usize;
    let mut total = 0.0f64;
    let subsets = 1u64 << m;
    for k in 1..subsets {
        let col = k.trailing_zeros() as usize;
        let column = &cols[col * m..(col + 1) * m];
        if in_set[col] {
            in_set[col] = false;
            set_size -= 1;
            row_sums.iter_mut().zip(column).for_each(|(r, v)| *r -= v);
        } else {
            in_set[col] = true;
            set_size += 1;
            row_sums.iter_mut().zip(column).for_each(|(r, v)| *r += v);
        }
        if k % RESYNC_EVERY == 0 {
            // resync the running sums
            for (i, r) in row_sums.iter_mut().enumerate() {
                *r = (0..m).filter(|&j| in_set[j]).map(|j| a[i * m + j]).sum();
            }
        }
        let prod = product(&row_sums);
        if (m - set_size) % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    total
}

/// Product over four interleaved accumulators.
#[inline]
fn product(v: &[f64]) -> f64 {
    let mut acc = [1.0f64; 4];
    let mut chunks = v.chunks_exact(4);
    for c in &mut chunks {
        acc[0] *= c[0];
        acc[1] *= c[1];
        acc[2] *= c[2];
        acc[3] *= c[3];
    }
    let tail: f64 = chunks.remainder().iter().product();
    (acc[0] * acc[1]) * (acc[2] * acc[3]) * tail
}

/// `P_ij = p(y(i) = j)`, as `B_ij · per(B minor ij) / per(B)`.
///
/// Returns a row-major `m × m` matrix. The `m²` minor permanents are evaluated
/// in parallel; the output does not depend on scheduling.
pub fn match_marginals(w: &LogWeightMatrix) -> Result<Vec<f64>> {
    let m = w.m();
    if m > MARGINALS_MAX_M {
        return Err(Error::SizeLimit {
            what: "match_marginals",
            m,
            limit: MARGINALS_MAX_M,
        });
    }
    let log_z = permanent_ryser(w)?;
    if log_z == f64::NEG_INFINITY {
        return Err(Error::Numerical(
            "matrix has no perfect matching of positive weight".into(),
        ));
    }
    (0..m * m)
        .into_par_iter()
        .map(|e| {
            let (i, j) = (e / m, e % m);
            let wij = w.get(i, j);
            if wij == f64::NEG_INFINITY {
                return Ok(0.0);
            }
            let log_minor = permanent_ryser(&w.minor(i, j))?;
            Ok((wij + log_minor - log_z).exp())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ln_factorial(m: usize) -> f64 {
        (1..=m).map(|k| (k as f64).ln()).sum()
    }

    fn random_log_matrix(rng: &mut ChaCha8Rng, m: usize) -> LogWeightMatrix {
        let w = (0..m * m).map(|_| rng.random_range(-3.0..3.0)).collect();
        LogWeightMatrix::from_log(m, w).unwrap()
    }

    #[test]
    fn brute_force_examples() {
        let ident =
            LogWeightMatrix::from_rows(&[vec![0.0, f64::NEG_INFINITY], vec![f64::NEG_INFINITY, 0.0]])
                .unwrap();
        assert_eq!(permanent_brute_force(&ident).unwrap(), 0.0);

        for m in 1..=6 {
            let ones = LogWeightMatrix::from_log(m, vec![0.0; m * m]).unwrap();
            let got = permanent_brute_force(&ones).unwrap();
            assert!((got - ln_factorial(m)).abs() < 1e-12, "m={m}");
        }

        let b = LogWeightMatrix::from_linear(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((permanent_brute_force(&b).unwrap() - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn brute_force_size_guard() {
        let big = LogWeightMatrix::from_log(11, vec![0.0; 121]).unwrap();
        assert!(matches!(
            permanent_brute_force(&big),
            Err(Error::SizeLimit { limit: 10, .. })
        ));
    }

    #[test]
    fn ryser_examples() {
        let one = LogWeightMatrix::from_linear(1, &[2.5]).unwrap();
        assert!((permanent_ryser(&one).unwrap() - 2.5f64.ln()).abs() < 1e-15);

        let ones = LogWeightMatrix::from_log(5, vec![0.0; 25]).unwrap();
        assert!((permanent_ryser(&ones).unwrap() - 120f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b: Vec<f64> = (0..49).map(|_| rng.random_range(0.1..2.0)).collect();
        let w = LogWeightMatrix::from_linear(7, &b).unwrap();
        let exact = permanent_brute_force(&w).unwrap();
        let fast = permanent_ryser(&w).unwrap();
        assert!(((fast - exact).exp() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn ryser_size_guard_and_zero_rows() {
        let big = LogWeightMatrix::from_log(31, vec![0.0; 31 * 31]).unwrap();
        assert!(matches!(
            permanent_ryser(&big),
            Err(Error::SizeLimit { limit: 30, .. })
        ));
        let mut w = vec![0.0; 9];
        w[3..6].fill(f64::NEG_INFINITY);
        let zero_row = LogWeightMatrix::from_log(3, w).unwrap();
        assert_eq!(permanent_ryser(&zero_row).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn ryser_handles_large_log_weights() {
        // exp(800) overflows f64
        let w = LogWeightMatrix::from_rows(&[vec![800.0, 799.0], vec![801.0, 800.0]]).unwrap();
        let exact = permanent_brute_force(&w).unwrap();
        let fast = permanent_ryser(&w).unwrap();
        assert!(exact.is_finite());
        assert!((fast - exact).abs() < 1e-12);
    }

    #[test]
    fn ryser_exact_at_moderate_size() {
        let ones = LogWeightMatrix::from_log(16, vec![0.0; 256]).unwrap();
        let got = permanent_ryser(&ones).unwrap();
        assert!((got - ln_factorial(16)).abs() < 1e-9);
    }

    #[test]
    fn marginals_examples() {
        let uniform = LogWeightMatrix::from_log(4, vec![1.3; 16]).unwrap();
        for p in match_marginals(&uniform).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        let single = LogWeightMatrix::from_log(1, vec![-4.0]).unwrap();
        assert_eq!(match_marginals(&single).unwrap(), vec![1.0]);
        let big = LogWeightMatrix::from_log(21, vec![0.0; 441]).unwrap();
        assert!(matches!(
            match_marginals(&big),
            Err(Error::SizeLimit { limit: 20, .. })
        ));
    }

    #[test]
    fn marginals_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let w = random_log_matrix(&mut rng, 4);
            let p = match_marginals(&w).unwrap();
            let mut brute = vec![0.0; 16];
            let log_z = permanent_brute_force(&w).unwrap();
            for_each_permutation(4, |perm| {
                let lw: f64 = perm.iter().enumerate().map(|(i, &j)| w.get(i, j)).sum();
                let prob = (lw - log_z).exp();
                for (i, &j) in perm.iter().enumerate() {
                    brute[i * 4 + j] += prob;
                }
            });
            for (a, b) in p.iter().zip(&brute) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn row_shift_scales_permanent_and_preserves_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 2..=6 {
            let w = random_log_matrix(&mut rng, m);
            let c = rng.random_range(-50.0..50.0);
            let shifted = w.shift_row(m / 2, c).unwrap();
            let a = permanent_ryser(&w).unwrap();
            let b = permanent_ryser(&shifted).unwrap();
            assert!((b - a - c).abs() < 1e-9);
            let pa = match_marginals(&w).unwrap();
            let pb = match_marginals(&shifted).unwrap();
            for (x, y) in pa.iter().zip(&pb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn marginals_are_doubly_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 1..=9 {
            let w = random_log_matrix(&mut rng, m);
            let p = match_marginals(&w).unwrap();
            for i in 0..m {
                let row: f64 = (0..m).map(|j| p[i * m + j]).sum();
                let col: f64 = (0..m).map(|j| p[j * m + i]).sum();
                assert!((row - 1.0).abs() < 1e-9);
                assert!((col - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scaling_invariant_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_log_matrix(&mut rng, 5);
        for i in 0..5 {
            let max = (0..5).map(|j| w.scaled(i, j)).fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(max, 0.0);
        }
    }

    #[test]
    fn permutation_enumeration_counts() {
        let mut count = 0;
        for_each_permutation(5, |_| count += 1);
        assert_eq!(count, 120);
        let mut zero = 0;
        for_each_permutation(0, |p| {
            assert!(p.is_empty());
            zero += 1
        });
        assert_eq!(zero, 1);
    }
}
