//! Regularized negative log-likelihood, its gradient, and BFGS training.
//!
//! ```text
//! ℓ(θ) = (λ/2)‖θ‖² + (1/N) Σ_n [ g(xⁿ; θ) − ⟨φ(xⁿ, yⁿ), θ⟩ ]
//! ∇ℓ(θ) = λθ + (1/N) Σ_n [ E_{y∼p(y|xⁿ;θ)} φ(xⁿ, y) − φ(xⁿ, yⁿ) ]
//! ```

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inference::{expectation_exact, log_partition, InferenceLimits};
use crate::sampler::{derive_seed, expectation_sampled, BoundKind};
use crate::types::{dot, sufficient_statistics, ModelParams, TrainingSet};

/// How expected sufficient statistics are obtained during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InferenceMode {
    /// Enumerate, minors or sampler by graph size.
    #[default]
    Auto,
    Enumerate,
    Minors,
    Sample,
}

impl InferenceMode {
    pub fn name(&self) -> &'static str {
        match self {
            InferenceMode::Auto => "auto",
            InferenceMode::Enumerate => "enumerate",
            InferenceMode::Minors => "minors",
            InferenceMode::Sample => "sample",
        }
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(InferenceMode::Auto),
            "enumerate" => Ok(InferenceMode::Enumerate),
            "minors" => Ok(InferenceMode::Minors),
            "sample" => Ok(InferenceMode::Sample),
            other => Err(Error::validation(format!("unknown inference mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once `‖∇ℓ‖∞` falls to this value.
    pub grad_tol: f64,
    pub inference: InferenceMode,
    pub limits: InferenceLimits,
    /// Samples per example per gradient evaluation in sample mode.
    pub k_samples: usize,
    pub bound: BoundKind,
    pub seed: u64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            max_iters: 500,
            grad_tol: 1e-5,
            inference: InferenceMode::Auto,
            limits: InferenceLimits::default(),
            k_samples: 100,
            bound: BoundKind::HuberLaw,
            seed: 0,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 60,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::validation("lambda must be finite and >= 0"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::validation("backtrack_factor must lie in (0, 1)"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 <= 0.5) {
            return Err(Error::validation("armijo_c1 must lie in (0, 0.5]"));
        }
        if self.k_samples == 0 {
            return Err(Error::validation("k_samples must be >= 1"));
        }
        if !(self.grad_tol >= 0.0) {
            return Err(Error::validation("grad_tol must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub theta_final: Vec<f64>,
    /// Objective at each accepted iterate, starting from `θ = 0`.
    pub loss_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    /// Accepted step length per iterate (0 for the starting point).
    pub step_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `ℓ(θ)` with exact log-partition functions (Ryser, so `m ≤ 30`).
pub fn loss(ts: &TrainingSet, params: &ModelParams) -> Result<f64> {
    check_dims(ts, params)?;
    let terms: Vec<f64> = ts
        .examples()
        .par_iter()
        .map(|(x, y)| {
            let g = log_partition(x, params)?;
            let phi = sufficient_statistics(x, y)?;
            Ok(g - dot(&phi, params.theta()))
        })
        .collect::<Result<_>>()?;
    let reg = 0.5 * params.lambda() * dot(params.theta(), params.theta());
    Ok(reg + mean(&terms))
}

/// `∇ℓ(θ)` with expectations computed per `cfg.inference`.
pub fn loss_gradient(ts: &TrainingSet, params: &ModelParams, cfg: &TrainConfig) -> Result<Vec<f64>> {
    gradient_at(ts, params, cfg, 0)
}

/// Sampled expectations for evaluation `eval` draw from streams keyed by
/// `(cfg.seed, eval, example)`.
fn gradient_at(
    ts: &TrainingSet,
    params: &ModelParams,
    cfg: &TrainConfig,
    eval: u64,
) -> Result<Vec<f64>> {
    check_dims(ts, params)?;
    let d = ts.d();
    let terms: Vec<Vec<f64>> = ts
        .examples()
        .par_iter()
        .enumerate()
        .map(|(n, (x, y))| {
            let strategy = match cfg.inference {
                InferenceMode::Auto => cfg.limits.auto_strategy(x.m()),
                InferenceMode::Enumerate => Some(crate::ExpectationStrategy::Enumerate),
                InferenceMode::Minors => Some(crate::ExpectationStrategy::Minors),
                InferenceMode::Sample => None,
            };
            let mut e = match strategy {
                Some(s) => expectation_exact(x, params, s)?,
                None => {
                    let seed = derive_seed(cfg.seed, eval, n as u64);
                    expectation_sampled(x, params, cfg.bound, cfg.k_samples, seed)?
                }
            };
            for (acc, v) in e.iter_mut().zip(sufficient_statistics(x, y)?) {
                *acc -= v;
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let n = terms.len().max(1) as f64;
    let mut grad: Vec<f64> = params.theta().iter().map(|t| params.lambda() * t).collect();
    for k in 0..d {
        let s: f64 = terms.iter().map(|t| t[k]).sum();
        grad[k] += s / n;
    }
    Ok(grad)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn check_dims(ts: &TrainingSet, params: &ModelParams) -> Result<()> {
    if ts.d() != params.d() {
        return Err(Error::validation(format!(
            "theta has length {}, training set has d = {}",
            params.d(),
            ts.d()
        )));
    }
    Ok(())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Minimizes `ℓ` by BFGS with Armijo backtracking, starting from `θ = 0`.
///
/// In sample mode every gradient evaluation gets a fresh, index-keyed seed, and
/// the line search compares exact objective values.
pub fn train(ts: &TrainingSet, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let d = ts.d();
    let params_of = |theta: &[f64]| ModelParams::new(theta.to_vec(), cfg.lambda);

    let mut theta = vec![0.0; d];
    let mut eval = 0u64;
    let mut f = loss(ts, &params_of(&theta)?)?;
    let mut g = gradient_at(ts, &params_of(&theta)?, cfg, eval)?;
    let mut h = identity(d);
    let mut first_update = true;

    let mut report = TrainReport {
        theta_final: theta.clone(),
        loss_trace: vec![f],
        grad_norm_trace: vec![inf_norm(&g)],
        step_trace: vec![0.0],
        iterations: 0,
        converged: false,
    };

    for iter in 0..cfg.max_iters {
        if inf_norm(&g) <= cfg.grad_tol {
            report.converged = true;
            break;
        }
        let mut p = mat_vec_neg(&h, &g);
        let mut slope = dot(&g, &p);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            h = identity(d);
            p = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = theta.iter().zip(&p).map(|(t, s)| t + alpha * s).collect();
            if let Ok(params) = params_of(&trial) {
                let ft = loss(ts, &params)?;
                if ft.is_finite() && ft <= f + cfg.armijo_c1 * alpha * slope {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            alpha *= cfg.backtrack_factor;
        }
        let Some((next, f_next)) = accepted else {
            report.theta_final = theta;
            report.iterations = iter;
            return Err(Error::Stagnation(Box::new(report)));
        };

        eval += 1;
        let g_next = gradient_at(ts, &params_of(&next)?, cfg, eval)?;
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first_update {
                let scale = sy / dot(&y, &y);
                h = identity(d);
                h.iter_mut().for_each(|row| row.iter_mut().for_each(|v| *v *= scale));
                first_update = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        theta = next;
        f = f_next;
        g = g_next;
        report.loss_trace.push(f);
        report.grad_norm_trace.push(inf_norm(&g));
        report.step_trace.push(alpha);
        report.iterations = iter + 1;
    }
    if !report.converged && inf_norm(&g) <= cfg.grad_tol {
        report.converged = true;
    }
    report.theta_final = theta;
    Ok(report)
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec_neg(h: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    h.iter().map(|row| -dot(row, g)).collect()
}

/// Inverse-Hessian update `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = h.iter().map(|row| dot(row, y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..d {
        for j in 0..d {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
