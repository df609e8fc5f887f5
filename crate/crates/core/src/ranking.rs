//! Learning to rank as bipartite matching of documents onto rank positions.
//!
//! A query with documents `ψ_i` becomes a graph with edge features
//! `x_ij = ψ_i c_j`, where `c_j = M − j` for rank positions `j = 1..M`. Because
//! `c` is non-increasing, the max-weight matching just sorts documents by the
//! score `⟨ψ_i, θ⟩` (rearrangement inequality), so prediction costs a sort.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::sampler::derive_seed;
use crate::training::{train, TrainConfig};
use crate::types::{dot, Document, EdgeFeatureTensor, Matching, ModelParams, QuerySet, TrainingSet};

pub const NUM_FOLDS: u8 = 5;
/// NDCG cutoffs reported by evaluation and cross-validation.
pub const MAX_CUTOFF: usize = 10;

/// Non-increasing scores for rank positions `1..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSchedule {
    values: Vec<f64>,
}

impl PositionSchedule {
    /// `c_j = M − j` for `j = 1..=M`, i.e. `M−1, …, 0`.
    pub fn linear(m: usize) -> Self {
        PositionSchedule {
            values: (1..=m).map(|j| (m - j) as f64).collect(),
        }
    }

    /// Score of 0-based position `j`.
    pub fn get(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `x_ij = ψ_i c_j` for the documents listed in `docs`.
pub fn ranking_features(psi: &[&[f64]], schedule: &PositionSchedule) -> Result<EdgeFeatureTensor> {
    let m = psi.len();
    if schedule.len() != m {
        return Err(Error::validation("schedule length differs from document count"));
    }
    let d = psi.first().map_or(0, |p| p.len());
    EdgeFeatureTensor::from_fn(m, d, |i, j| psi[i].iter().map(|v| v * schedule.get(j)).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingDataset {
    pub queries: Vec<QuerySet>,
    pub d: usize,
    /// Number of rating levels `R`; ratings lie in `0..R`.
    pub levels: u32,
    /// Fold in `1..=5` for each query id.
    pub folds: HashMap<String, u8>,
    /// Feature ids absent from a line and filled with 0.0.
    pub missing_features: usize,
}

impl RankingDataset {
    pub fn fold_of(&self, query_id: &str) -> Option<u8> {
        self.folds.get(query_id).copied()
    }

    /// Folds `1, 2, …, 5, 1, …` in query order.
    pub fn assign_round_robin_folds(&mut self) {
        self.folds = self
            .queries
            .iter()
            .enumerate()
            .map(|(i, q)| (q.query_id().to_string(), (i % NUM_FOLDS as usize) as u8 + 1))
            .collect();
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LetorOptions {
    /// Declared feature dimension; ids above it are an error.
    pub d: Option<usize>,
    /// Declared number of rating levels; inferred as `max rating + 1` otherwise.
    pub levels: Option<u32>,
}

struct RawLine {
    line: usize,
    rating: u32,
    qid: String,
    features: Vec<(usize, f64)>,
    doc_id: Option<String>,
}

/// Parses `<rating> qid:<q> <fid>:<val> … #<comment>` lines.
///
/// Feature ids are 1-based and may appear in any order. The dimension is the
/// largest id in the file unless declared. Ids missing from a line read as 0.0
/// and are counted in `missing_features`. Queries keep first-appearance order.
pub fn parse_letor(text: &str, opts: LetorOptions) -> Result<RankingDataset> {
    let mut raw = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let (body, comment) = match line.find('#') {
            Some(p) => (&line[..p], Some(line[p + 1..].trim())),
            None => (line, None),
        };
        let mut tokens = body.split_whitespace();
        let Some(rating_tok) = tokens.next() else {
            continue;
        };
        let rating: u32 = rating_tok
            .parse()
            .map_err(|_| Error::parse(lineno, format!("rating `{rating_tok}` is not a nonnegative integer")))?;
        let qid_tok = tokens
            .next()
            .ok_or_else(|| Error::parse(lineno, "missing qid"))?;
        let qid = qid_tok
            .strip_prefix("qid:")
            .ok_or_else(|| Error::parse(lineno, format!("expected qid:<id>, got `{qid_tok}`")))?
            .to_string();
        let mut features: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (fid, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("malformed feature `{tok}`")))?;
            let fid: usize = fid
                .parse()
                .ok()
                .filter(|&f| f >= 1)
                .ok_or_else(|| Error::parse(lineno, format!("bad feature id in `{tok}`")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(lineno, format!("bad feature value in `{tok}`")))?;
            if features.iter().any(|(f, _)| *f == fid) {
                return Err(Error::parse(lineno, format!("duplicate feature id {fid}")));
            }
            features.push((fid, val));
        }
        if let Some(d) = opts.d {
            if let Some((fid, _)) = features.iter().find(|(f, _)| *f > d) {
                return Err(Error::parse(
                    lineno,
                    format!("feature id {fid} exceeds the declared dimension {d}"),
                ));
            }
        }
        raw.push(RawLine {
            line: lineno,
            rating,
            qid,
            features,
            doc_id: comment.and_then(doc_id_from_comment),
        });
    }

    let d = opts
        .d
        .unwrap_or_else(|| raw.iter().flat_map(|r| r.features.iter().map(|f| f.0)).max().unwrap_or(0));
    if d == 0 {
        return Err(Error::parse(0, "no features found"));
    }
    let max_rating = raw.iter().map(|r| r.rating).max().unwrap_or(0);
    let levels = match opts.levels {
        Some(l) => {
            if let Some(r) = raw.iter().find(|r| r.rating >= l) {
                return Err(Error::parse(
                    r.line,
                    format!("rating {} outside the declared {l} levels", r.rating),
                ));
            }
            l
        }
        None => max_rating + 1,
    };

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Document>> = HashMap::new();
    let mut missing = 0usize;
    for r in raw {
        let mut psi = vec![0.0; d];
        for &(fid, val) in &r.features {
            psi[fid - 1] = val;
        }
        missing += d - r.features.len();
        let docs = grouped.entry(r.qid.clone()).or_insert_with(|| {
            order.push(r.qid.clone());
            Vec::new()
        });
        let doc_id = r
            .doc_id
            .unwrap_or_else(|| format!("{}-{}", r.qid, docs.len() + 1));
        docs.push(Document {
            psi,
            rating: r.rating,
            doc_id,
        });
    }
    if missing > 0 {
        log::warn!("{missing} missing LETOR feature values defaulted to 0.0");
    }
    let queries = order
        .into_iter()
        .map(|qid| {
            let docs = grouped.remove(&qid).unwrap_or_default();
            QuerySet::new(qid, docs, levels)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = RankingDataset {
        queries,
        d,
        levels,
        folds: HashMap::new(),
        missing_features: missing,
    };
    ds.assign_round_robin_folds();
    Ok(ds)
}

fn doc_id_from_comment(comment: &str) -> Option<String> {
    if comment.is_empty() {
        return None;
    }
    for part in comment.split(|c: char| c == ',' || c == ';') {
        if let Some((key, val)) = part.split_once('=') {
            let key = key.trim().to_ascii_lowercase();
            if key == "docid" || key == "doc" || key == "doc_id" {
                return Some(val.split_whitespace().next().unwrap_or("").to_string());
            }
        }
    }
    Some(comment.to_string())
}

/// Reads `<qid> <fold>` lines; blank lines and `#` comments are skipped.
pub fn parse_folds(text: &str) -> Result<HashMap<String, u8>> {
    let mut folds = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(qid), Some(fold), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(idx + 1, "expected `<qid> <fold>`"));
        };
        let fold: u8 = fold
            .parse()
            .ok()
            .filter(|f| (1..=NUM_FOLDS).contains(f))
            .ok_or_else(|| Error::parse(idx + 1, format!("fold `{fold}` is not in 1..=5")))?;
        folds.insert(qid.to_string(), fold);
    }
    Ok(folds)
}

/// Number of bootstrap subsets drawn for a query of `docs` documents.
pub fn subset_count(fraction: f64, docs: usize, m: usize) -> usize {
    (fraction * docs as f64 * m as f64).round() as usize
}

/// Size-`m` resamples of a query, each holding every rating level.
///
/// Every subset starts with one uniformly drawn document per rating level,
/// followed by `m − R` documents drawn uniformly with replacement. Its label
/// sends documents, by rating descending and then subset index, to positions
/// `1..m`. Returns `None` (skip) when the query lacks some rating level.
pub fn bootstrap_subsets(
    q: &QuerySet,
    m: usize,
    levels: u32,
    fraction: f64,
    seed: u64,
) -> Result<Option<Vec<(EdgeFeatureTensor, Matching)>>> {
    if m < levels as usize {
        return Err(Error::validation(format!(
            "subset size m = {m} must be at least the number of rating levels {levels}"
        )));
    }
    if !(fraction.is_finite() && fraction >= 0.0) {
        return Err(Error::validation("bootstrap fraction must be finite and >= 0"));
    }
    let by_level: Vec<Vec<usize>> = (0..levels)
        .map(|r| (0..q.len()).filter(|&i| q.docs()[i].rating == r).collect())
        .collect();
    if by_level.iter().any(Vec::is_empty) {
        return Ok(None);
    }
    let schedule = PositionSchedule::linear(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = subset_count(fraction, q.len(), m);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut picks: Vec<usize> = by_level
            .iter()
            .rev()
            .map(|docs| *docs.choose(&mut rng).expect("non-empty level"))
            .collect();
        picks.extend((levels as usize..m).map(|_| rng.random_range(0..q.len())));
        let psi: Vec<&[f64]> = picks.iter().map(|&i| q.docs()[i].psi.as_slice()).collect();
        let x = ranking_features(&psi, &schedule)?;
        let ratings: Vec<u32> = picks.iter().map(|&i| q.docs()[i].rating).collect();
        out.push((x, label_by_rating(&ratings)));
    }
    Ok(Some(out))
}

/// `y(i)` = rank position of node `i` when sorted by rating descending, ties by index.
pub fn label_by_rating(ratings: &[u32]) -> Matching {
    let mut order: Vec<usize> = (0..ratings.len()).collect();
    order.sort_by(|&a, &b| ratings[b].cmp(&ratings[a]).then(a.cmp(&b)));
    Matching::new(order)
        .expect("sorted indices form a permutation")
        .inverse()
}

/// Bootstraps every query in `queries` into one training set.
///
/// Query `i` (position in `queries`) uses seed `derive_seed(seed, i, 0)`.
/// Returns the training set and the number of skipped queries.
pub fn build_training_set(
    queries: &[&QuerySet],
    d: usize,
    m: usize,
    levels: u32,
    fraction: f64,
    seed: u64,
) -> Result<(TrainingSet, usize)> {
    let mut examples = Vec::new();
    let mut skipped = 0;
    for (i, q) in queries.iter().enumerate() {
        match bootstrap_subsets(q, m, levels, fraction, derive_seed(seed, i as u64, 0))? {
            Some(mut subsets) => examples.append(&mut subsets),
            None => {
                log::warn!("query {} lacks a rating level; skipped", q.query_id());
                skipped += 1;
            }
        }
    }
    Ok((TrainingSet::new(d, examples)?, skipped))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDoc {
    /// Position of the document in its query.
    pub index: usize,
    pub doc_id: String,
    pub score: f64,
    pub rating: u32,
}

/// Documents by score `⟨ψ_i, θ⟩` descending; ties keep document order.
pub fn rank_documents(q: &QuerySet, params: &ModelParams) -> Result<Vec<RankedDoc>> {
    if q.d() != params.d() && !q.is_empty() {
        return Err(Error::validation(format!(
            "query {} has d = {}, model has d = {}",
            q.query_id(),
            q.d(),
            params.d()
        )));
    }
    let mut ranked: Vec<RankedDoc> = q
        .docs()
        .iter()
        .enumerate()
        .map(|(index, doc)| RankedDoc {
            index,
            doc_id: doc.doc_id.clone(),
            score: dot(&doc.psi, params.theta()),
            rating: doc.rating,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(ranked)
}

fn dcg(ratings: &[u32], k: usize, log: impl Fn(f64) -> f64) -> f64 {
    ratings
        .iter()
        .take(k)
        .enumerate()
        .map(|(j, &r)| (2f64.powi(r as i32) - 1.0) / log(j as f64 + 2.0))
        .sum()
}

/// NDCG@k with discount `log_base(1 + j)`; the base cancels in the ratio.
pub fn ndcg_at_k_base(ranked_ratings: &[u32], k: usize, base: f64) -> f64 {
    let log = |v: f64| v.log(base);
    let mut ideal = ranked_ratings.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(&ideal, k, log);
    if z == 0.0 {
        return 1.0;
    }
    dcg(ranked_ratings, k, log) / z
}

/// `(1/Z) Σ_{j ≤ k} (2^{r(j)} − 1) / ln(1 + j)`, with `Z` from the ideal order.
/// A list without any positive rating scores 1.
pub fn ndcg_at_k(ranked_ratings: &[u32], k: usize) -> f64 {
    let mut ideal = ranked_ratings.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let z = dcg(&ideal, k, f64::ln);
    if z == 0.0 {
        return 1.0;
    }
    dcg(ranked_ratings, k, f64::ln) / z
}

/// NDCG@1..=10 of the model's ranking of one query.
pub fn evaluate_query(q: &QuerySet, params: &ModelParams) -> Result<[f64; MAX_CUTOFF]> {
    let ratings: Vec<u32> = rank_documents(q, params)?.iter().map(|r| r.rating).collect();
    let mut out = [0.0; MAX_CUTOFF];
    for (k, v) in out.iter_mut().enumerate() {
        *v = ndcg_at_k(&ratings, k + 1);
    }
    Ok(out)
}

/// Mean NDCG@1..=10 over queries.
pub fn evaluate_queries(queries: &[&QuerySet], params: &ModelParams) -> Result<[f64; MAX_CUTOFF]> {
    let mut total = [0.0; MAX_CUTOFF];
    for q in queries {
        for (acc, v) in total.iter_mut().zip(evaluate_query(q, params)?) {
            *acc += v;
        }
    }
    let n = queries.len().max(1) as f64;
    total.iter_mut().for_each(|v| *v /= n);
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub m: usize,
    pub fraction: f64,
    pub seed: u64,
    /// Optimizer settings; `lambda` is replaced by each grid value.
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            m: 3,
            fraction: 0.4,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvRow {
    pub lambda: f64,
    pub fold: u8,
    pub ndcg: [f64; MAX_CUTOFF],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub rows: Vec<CvRow>,
    /// Fold-averaged NDCG@1..=10 per λ, in grid order.
    pub means: Vec<(f64, [f64; MAX_CUTOFF])>,
    pub selected_lambda: f64,
    pub training_runs: usize,
    pub skipped_queries: usize,
}

/// Trains on a query set; a stagnated line search still yields its last iterate.
pub fn fit_queries(
    queries: &[&QuerySet],
    d: usize,
    levels: u32,
    lambda: f64,
    cfg: &CvConfig,
) -> Result<(ModelParams, usize)> {
    let (ts, skipped) = build_training_set(queries, d, cfg.m, levels, cfg.fraction, cfg.seed)?;
    let tc = TrainConfig {
        lambda,
        ..cfg.train.clone()
    };
    let theta = match train(&ts, &tc) {
        Ok(report) => report.theta_final,
        Err(Error::Stagnation(report)) => {
            log::warn!("line search stagnated for lambda = {lambda}; using last iterate");
            report.theta_final
        }
        Err(e) => return Err(e),
    };
    Ok((ModelParams::new(theta, lambda)?, skipped))
}

/// Per-λ five-fold cross-validation; selects the λ with the best mean NDCG@10
/// (the smaller λ on ties). Folds without held-out queries are not run.
pub fn cross_validate(ds: &RankingDataset, lambda_grid: &[f64], cfg: &CvConfig) -> Result<CvResult> {
    if lambda_grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    let mut rows = Vec::new();
    let mut means = Vec::new();
    let mut training_runs = 0;
    let mut skipped_queries = 0;
    for &lambda in lambda_grid {
        let mut sum = [0.0; MAX_CUTOFF];
        let mut folds_run = 0;
        for fold in 1..=NUM_FOLDS {
            let (held, rest): (Vec<&QuerySet>, Vec<&QuerySet>) = ds
                .queries
                .iter()
                .partition(|q| ds.fold_of(q.query_id()) == Some(fold));
            if held.is_empty() {
                continue;
            }
            let (params, skipped) = fit_queries(&rest, ds.d, ds.levels, lambda, cfg)?;
            training_runs += 1;
            skipped_queries += skipped;
            let ndcg = evaluate_queries(&held, &params)?;
            for (acc, v) in sum.iter_mut().zip(ndcg) {
                *acc += v;
            }
            folds_run += 1;
            rows.push(CvRow { lambda, fold, ndcg });
        }
        sum.iter_mut().for_each(|v| *v /= folds_run.max(1) as f64);
        means.push((lambda, sum));
    }
    let selected_lambda = means
        .iter()
        .fold(None::<(f64, f64)>, |best, &(lambda, ndcg)| {
            let score = ndcg[MAX_CUTOFF - 1];
            match best {
                Some((bl, bs)) if bs > score || (bs == score && bl <= lambda) => Some((bl, bs)),
                _ => Some((lambda, score)),
            }
        })
        .map(|(l, _)| l)
        .expect("grid is non-empty");
    Ok(CvResult {
        rows,
        means,
        selected_lambda,
        training_runs,
        skipped_queries,
    })
}

/// Queries whose ratings come from a planted linear scorer.
///
/// Each query has `docs` standard-normal documents. Sorted by `⟨ψ, θ*⟩`, they
/// are cut into `levels` near-equal bands and rated `levels − 1` down to 0.
pub fn generate_planted(
    queries: usize,
    docs: usize,
    theta_star: &[f64],
    levels: u32,
    seed: u64,
) -> Result<RankingDataset> {
    if docs < levels as usize {
        return Err(Error::validation("need at least one document per rating level"));
    }
    let d = theta_star.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(queries);
    for qi in 0..queries {
        let psis: Vec<Vec<f64>> = (0..docs)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let mut order: Vec<usize> = (0..docs).collect();
        order.sort_by(|&a, &b| dot(&psis[b], theta_star).total_cmp(&dot(&psis[a], theta_star)));
        let mut ratings = vec![0u32; docs];
        for (rank, &i) in order.iter().enumerate() {
            ratings[i] = levels - 1 - (rank * levels as usize / docs) as u32;
        }
        let documents = psis
            .into_iter()
            .zip(ratings)
            .enumerate()
            .map(|(i, (psi, rating))| Document {
                psi,
                rating,
                doc_id: format!("q{}-d{}", qi + 1, i + 1),
            })
            .collect();
        out.push(QuerySet::new(format!("q{}", qi + 1), documents, levels)?);
    }
    let mut ds = RankingDataset {
        queries: out,
        d,
        levels,
        folds: HashMap::new(),
        missing_features: 0,
    };
    ds.assign_round_robin_folds();
    Ok(ds)
}

/// Standard-normal `θ*` of length `d` for [`generate_planted`].
pub fn planted_theta(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x7468, 0));
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// Writes a dataset back out in LETOR layout.
pub fn to_letor(ds: &RankingDataset) -> String {
    let mut out = String::new();
    for q in &ds.queries {
        for doc in q.docs() {
            out.push_str(&format!("{} qid:{}", doc.rating, q.query_id()));
            for (k, v) in doc.psi.iter().enumerate() {
                out.push_str(&format!(" {}:{}", k + 1, v));
            }
            out.push_str(&format!(" #docid = {}\n", doc.doc_id));
        }
    }
    out
}
