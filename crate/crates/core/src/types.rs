//! Domain types shared across the crate.
//!
//! Everything here is validated on construction and immutable afterwards, so
//! values can be shared freely between worker threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permanent::LogWeightMatrix;

/// An `m × m` grid of `d`-dimensional edge feature vectors `x_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureTensor {
    m: usize,
    d: usize,
    // row-major: ((i * m) + j) * d + k
    data: Vec<f64>,
}

impl EdgeFeatureTensor {
    /// Builds a tensor from a flat row-major buffer of length `m * m * d`.
    pub fn new(m: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::validation(format!(
                "edge tensor needs m >= 1 and d >= 1 (got m={m}, d={d})"
            )));
        }
        if data.len() != m * m * d {
            return Err(Error::validation(format!(
                "edge tensor buffer has {} values, expected {}",
                data.len(),
                m * m * d
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "edge feature at flat index {pos} is not finite"
            )));
        }
        Ok(EdgeFeatureTensor { m, d, data })
    }

    /// Builds a tensor from nested vectors `x[i][j] = x_ij`.
    pub fn from_nested(x: &[Vec<Vec<f64>>]) -> Result<Self> {
        let m = x.len();
        let d = x.first().and_then(|r| r.first()).map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * m * d);
        for (i, row) in x.iter().enumerate() {
            if row.len() != m {
                return Err(Error::validation(format!(
                    "row {i} has {} edges, expected {m}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if v.len() != d {
                    return Err(Error::validation(format!(
                        "x[{i}][{j}] has length {}, expected {d}",
                        v.len()
                    )));
                }
                data.extend_from_slice(v);
            }
        }
        Self::new(m, d, data)
    }

    /// Builds a tensor by evaluating `f(i, j)` for every edge.
    pub fn from_fn<F>(m: usize, d: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity(m * m * d);
        for i in 0..m {
            for j in 0..m {
                let v = f(i, j);
                if v.len() != d {
                    return Err(Error::validation(format!(
                        "x[{i}][{j}] has length {}, expected {d}",
                        v.len()
                    )));
                }
                data.extend(v);
            }
        }
        Self::new(m, d, data)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn edge(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.m + j) * self.d;
        &self.data[start..start + self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Reorders rows so that new row `i` is old row `rows[i]`.
    pub fn permute_rows(&self, rows: &[usize]) -> Result<Self> {
        Matching::new(rows.to_vec())?;
        if rows.len() != self.m {
            return Err(Error::validation("row permutation has the wrong length"));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &r in rows {
            for j in 0..self.m {
                data.extend_from_slice(self.edge(r, j));
            }
        }
        Self::new(self.m, self.d, data)
    }
}

/// A perfect matching `y`, stored as `perm[i] = y(i)` with 0-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Matching(Vec<usize>);

impl Matching {
    /// Rejects anything that is not a bijection on `0..perm.len()`.
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let m = perm.len();
        let mut seen = vec![false; m];
        for (i, &p) in perm.iter().enumerate() {
            if p >= m {
                return Err(Error::validation(format!(
                    "matching entry {i} maps to {p}, outside 0..{m}"
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::validation(format!(
                    "matching maps two nodes onto {p}"
                )));
            }
        }
        Ok(Matching(perm))
    }

    pub fn identity(m: usize) -> Self {
        Matching((0..m).collect())
    }

    /// Parses 1-based positions, as used in every file format.
    pub fn from_one_based(perm: &[usize]) -> Result<Self> {
        let zero = perm
            .iter()
            .map(|&p| {
                p.checked_sub(1)
                    .ok_or_else(|| Error::validation("1-based matching contains 0"))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(zero)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|p| p + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn inverse(&self) -> Matching {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Matching(inv)
    }
}

impl TryFrom<Vec<usize>> for Matching {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Matching::new(v)
    }
}

impl From<Matching> for Vec<usize> {
    fn from(m: Matching) -> Self {
        m.0
    }
}

/// Parameter vector `θ` together with the regularization constant `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    theta: Vec<f64>,
    lambda: f64,
}

impl ModelParams {
    pub fn new(theta: Vec<f64>, lambda: f64) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::validation("theta must have at least one component"));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("theta contains a non-finite value"));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::validation(format!(
                "lambda must be finite and >= 0 (got {lambda})"
            )));
        }
        Ok(ModelParams { theta, lambda })
    }

    pub fn zeros(d: usize, lambda: f64) -> Result<Self> {
        Self::new(vec![0.0; d], lambda)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d(&self) -> usize {
        self.theta.len()
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(theta, self.lambda)
    }
}

/// Labelled graphs `{(xⁿ, yⁿ)}` sharing one feature dimension.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    d: usize,
    examples: Vec<(EdgeFeatureTensor, Matching)>,
}

impl TrainingSet {
    pub fn new(d: usize, examples: Vec<(EdgeFeatureTensor, Matching)>) -> Result<Self> {
        if d == 0 {
            return Err(Error::validation("training set feature dimension must be >= 1"));
        }
        for (n, (x, y)) in examples.iter().enumerate() {
            if x.d() != d {
                return Err(Error::validation(format!(
                    "example {n} has d = {}, expected {d}",
                    x.d()
                )));
            }
            if y.len() != x.m() {
                return Err(Error::validation(format!(
                    "example {n}: matching length {} differs from m = {}",
                    y.len(),
                    x.m()
                )));
            }
        }
        Ok(TrainingSet { d, examples })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[(EdgeFeatureTensor, Matching)] {
        &self.examples
    }

    pub fn max_m(&self) -> usize {
        self.examples.iter().map(|(x, _)| x.m()).max().unwrap_or(0)
    }
}

/// One document of a query: feature vector, editor rating and identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub psi: Vec<f64>,
    pub rating: u32,
    pub doc_id: String,
}

/// The documents retrieved for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    query_id: String,
    docs: Vec<Document>,
}

impl QuerySet {
    /// `levels` is the number of rating levels `R`; ratings must lie in `0..R`.
    pub fn new(query_id: impl Into<String>, docs: Vec<Document>, levels: u32) -> Result<Self> {
        let query_id = query_id.into();
        let d = docs.first().map_or(0, |doc| doc.psi.len());
        for doc in &docs {
            if doc.psi.len() != d {
                return Err(Error::validation(format!(
                    "query {query_id}: document {} has {} features, expected {d}",
                    doc.doc_id,
                    doc.psi.len()
                )));
            }
            if doc.rating >= levels {
                return Err(Error::validation(format!(
                    "query {query_id}: rating {} outside 0..{levels}",
                    doc.rating
                )));
            }
            if doc.psi.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "query {query_id}: document {} has a non-finite feature",
                    doc.doc_id
                )));
            }
        }
        Ok(QuerySet { query_id, docs })
    }

    pub fn query_id(&self) -> &str {
        &self.query_id
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn d(&self) -> usize {
        self.docs.first().map_or(0, |doc| doc.psi.len())
    }
}

/// `φ(x, y) = Σ_i x_{i y(i)}`.
pub fn sufficient_statistics(x: &EdgeFeatureTensor, y: &Matching) -> Result<Vec<f64>> {
    if y.len() != x.m() {
        return Err(Error::validation(format!(
            "matching length {} differs from graph size {}",
            y.len(),
            x.m()
        )));
    }
    let mut phi = vec![0.0; x.d()];
    for i in 0..x.m() {
        for (acc, v) in phi.iter_mut().zip(x.edge(i, y.get(i))) {
            *acc += v;
        }
    }
    Ok(phi)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Edge log-weights `W_ij = ⟨x_ij, θ⟩`.
pub fn log_weights(x: &EdgeFeatureTensor, params: &ModelParams) -> Result<LogWeightMatrix> {
    if params.d() != x.d() {
        return Err(Error::validation(format!(
            "theta has length {}, features have d = {}",
            params.d(),
            x.d()
        )));
    }
    let m = x.m();
    let theta = params.theta();
    let w = (0..m * m)
        .map(|e| dot(x.edge(e / m, e % m), theta))
        .collect();
    LogWeightMatrix::from_log(m, w)
}
