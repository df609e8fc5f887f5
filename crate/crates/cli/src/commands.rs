use std::path::{Path, PathBuf};

use permatch::matchbench::{
    edge_features_matching, generate_synthetic, hamming_loss, parse_pairs, sample_size_sweep, serialize_pairs,
    to_training_set, SweepConfig,
};
use permatch::model_file::{parse_model, serialize_model};
use permatch::permanent::{match_marginals, permanent_brute_force, permanent_ryser};
use permatch::ranking::{
    build_training_set, cross_validate, evaluate_query, generate_planted, parse_folds, parse_letor, planted_theta,
    rank_documents, to_letor, CvConfig, LetorOptions, RankingDataset, MAX_CUTOFF,
};
use permatch::sampler::{sample_prepared, PreparedMatrix};
use permatch::training::train;
use permatch::{log_weights, predict_matching, CFn, Error, ModelParams, QuerySet, TrainConfig, TrainReport};

use crate::args::*;
use crate::error::{CliError, Status};
use crate::io::{csv_bytes, parse_matrix, write_output};
use crate::manifest::{manifest_path, InputLog, RunManifest, MANIFEST_VERSION};

/// Invocation details recorded in every manifest.
pub struct Context {
    pub argv: Vec<String>,
    pub options: serde_json::Value,
    pub subcommand: &'static str,
}

impl Context {
    fn finish(
        &self,
        explicit: Option<&Path>,
        seed: Option<u64>,
        inputs: InputLog,
        outputs: Vec<PathBuf>,
    ) -> Result<(), CliError> {
        let primary = outputs.first().cloned().unwrap_or_else(|| PathBuf::from("-"));
        let manifest = RunManifest {
            manifest_version: MANIFEST_VERSION,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.subcommand.to_string(),
            argv: self.argv.clone(),
            options: self.options.clone(),
            seed,
            inputs: inputs.inputs,
            outputs,
        };
        manifest.write(&manifest_path(explicit, &primary, self.subcommand))
    }
}

fn train_config(o: &OptimArgs, lambda: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda,
        max_iters: o.max_iters,
        grad_tol: o.grad_tol,
        inference: o.inference.into(),
        k_samples: o.k_samples,
        bound: o.bound.into(),
        seed,
        max_backtracks: o.max_backtracks,
        ..TrainConfig::default()
    }
}

fn require_m(m: Option<usize>) -> Result<usize, CliError> {
    m.ok_or_else(|| CliError::Usage("--m is required with LETOR data".into()))
}

fn read_model(inputs: &mut InputLog, path: &Path) -> Result<(ModelParams, permatch::ModelFile), CliError> {
    let text = inputs.read(path)?;
    let file = parse_model(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok((file.params()?, file))
}

fn read_letor(inputs: &mut InputLog, path: &Path, levels: Option<u32>) -> Result<RankingDataset, CliError> {
    let text = inputs.read(path)?;
    let ds = parse_letor(&text, LetorOptions { d: None, levels })
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    if ds.missing_features > 0 {
        eprintln!(
            "warning: {} missing feature values in {} read as 0.0",
            ds.missing_features,
            path.display()
        );
    }
    Ok(ds)
}

fn read_pairs(inputs: &mut InputLog, path: &Path) -> Result<Vec<permatch::matchbench::PointSetPair>, CliError> {
    let text = inputs.read(path)?;
    parse_pairs(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "-".into())
}

fn trace_csv(report: &TrainReport) -> Vec<u8> {
    let rows = (0..report.loss_trace.len()).map(|i| {
        vec![
            i.to_string(),
            report.loss_trace[i].to_string(),
            report.grad_norm_trace[i].to_string(),
            report.step_trace[i].to_string(),
        ]
    });
    csv_bytes(&["iter", "loss", "grad_norm", "step_size"], rows, b',')
}

pub fn cmd_train(a: &TrainArgs, ctx: &Context) -> Result<Status, CliError> {
    let mut inputs = InputLog::default();
    let cfg = train_config(&a.optim, a.lambda, a.seed);
    cfg.validate()?;
    let (ts, c_fn, m) = match a.format {
        Format::Letor => {
            let m = require_m(a.m)?;
            let ds = read_letor(&mut inputs, &a.data, a.levels)?;
            let queries: Vec<&QuerySet> = ds.queries.iter().collect();
            let (ts, skipped) = build_training_set(&queries, ds.d, m, ds.levels, a.fraction, a.seed)?;
            if skipped > 0 {
                eprintln!("warning: {skipped} queries lack a rating level and were skipped");
            }
            (ts, CFn::Linear, Some(m))
        }
        Format::Matchpairs => {
            let pairs = read_pairs(&mut inputs, &a.data)?;
            let first = pairs
                .first()
                .map(|p| p.m())
                .ok_or_else(|| CliError::Input(format!("{}: no pairs", a.data.display())))?;
            let uniform = pairs.iter().all(|p| p.m() == first);
            if let Some(m) = a.m {
                if !uniform || m != first {
                    return Err(CliError::Input(format!("--m {m} does not match the pair sizes in the data")));
                }
            }
            (to_training_set(&pairs)?, CFn::None, uniform.then_some(first))
        }
        Format::Matrix => return Err(CliError::Usage("train reads --format letor or matchpairs".into())),
    };
    if ts.is_empty() {
        return Err(CliError::Input("no training examples".into()));
    }

    let (report, status) = match train(&ts, &cfg) {
        Ok(r) => (r, Status::Ok),
        Err(Error::Stagnation(r)) => {
            eprintln!("warning: line search stagnated after {} iterations", r.iterations);
            (*r, Status::Stagnated)
        }
        Err(e) => return Err(e.into()),
    };
    if status == Status::Ok && !report.converged {
        eprintln!("warning: stopped at --max-iters {} before reaching --grad-tol", a.optim.max_iters);
    }
    let params = ModelParams::new(report.theta_final.clone(), a.lambda)?;
    write_output(&a.out, serialize_model(&params, c_fn, m).as_bytes())?;
    let mut outputs = vec![a.out.clone()];
    if let Some(trace) = &a.trace {
        write_output(trace, &trace_csv(&report))?;
        outputs.push(trace.clone());
    }
    ctx.finish(a.manifest.as_deref(), Some(a.seed), inputs, outputs)?;
    Ok(status)
}

pub fn cmd_predict(a: &PredictArgs, ctx: &Context) -> Result<Status, CliError> {
    let mut inputs = InputLog::default();
    let (params, _) = read_model(&mut inputs, &a.model)?;
    let bytes = match a.format {
        Format::Letor => {
            let ds = read_letor(&mut inputs, &a.data, None)?;
            let mut rows = Vec::new();
            for q in &ds.queries {
                for (rank, doc) in rank_documents(q, &params)?.into_iter().enumerate() {
                    rows.push(vec![
                        q.query_id().to_string(),
                        (rank + 1).to_string(),
                        doc.doc_id,
                        doc.score.to_string(),
                    ]);
                }
            }
            csv_bytes(&["qid", "rank", "doc_id", "score"], rows, b'\t')
        }
        Format::Matchpairs => {
            let pairs = read_pairs(&mut inputs, &a.data)?;
            let mut rows = Vec::new();
            for (k, pair) in pairs.iter().enumerate() {
                let y = predict_matching(&log_weights(&edge_features_matching(pair), &params)?)?;
                for (i, j) in y.to_one_based().into_iter().enumerate() {
                    rows.push(vec![(k + 1).to_string(), (i + 1).to_string(), j.to_string()]);
                }
            }
            csv_bytes(&["pair", "left", "right"], rows, b'\t')
        }
        Format::Matrix => return Err(CliError::Usage("predict reads --format letor or matchpairs".into())),
    };
    write_output(&a.out, &bytes)?;
    ctx.finish(a.manifest.as_deref(), None, inputs, vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_evaluate(a: &EvaluateArgs, ctx: &Context) -> Result<Status, CliError> {
    let mut inputs = InputLog::default();
    let (params, _) = read_model(&mut inputs, &a.model)?;
    let bytes = match a.format {
        Format::Letor => {
            let mut ds = read_letor(&mut inputs, &a.data, None)?;
            if let Some(path) = &a.folds {
                let text = inputs.read(path)?;
                ds.folds = parse_folds(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            }
            let queries: Vec<&QuerySet> = ds
                .queries
                .iter()
                .filter(|q| a.fold.is_none() || ds.fold_of(q.query_id()) == a.fold)
                .collect();
            if queries.is_empty() {
                return Err(CliError::Input("no queries to evaluate".into()));
            }
            let name = dataset_name(&a.data);
            let fold = a.fold.map_or_else(|| "all".to_string(), |f| f.to_string());
            let lambda = params.lambda().to_string();
            let mut rows = Vec::new();
            let mut mean_at_cutoff = 0.0;
            for q in &queries {
                let ndcg = evaluate_query(q, &params)?;
                mean_at_cutoff += ndcg[MAX_CUTOFF - 1];
                for (k, v) in ndcg.iter().enumerate() {
                    rows.push(vec![
                        name.clone(),
                        fold.clone(),
                        lambda.clone(),
                        q.query_id().to_string(),
                        (k + 1).to_string(),
                        v.to_string(),
                    ]);
                }
            }
            rows.push(vec![
                name,
                fold,
                lambda,
                "mean".into(),
                MAX_CUTOFF.to_string(),
                (mean_at_cutoff / queries.len() as f64).to_string(),
            ]);
            csv_bytes(&["dataset", "fold", "lambda", "qid", "k", "ndcg"], rows, b',')
        }
        Format::Matchpairs => {
            let pairs = read_pairs(&mut inputs, &a.data)?;
            if pairs.is_empty() {
                return Err(CliError::Input("no pairs to evaluate".into()));
            }
            let mut rows = Vec::new();
            let mut total = 0.0;
            for (k, pair) in pairs.iter().enumerate() {
                let y = predict_matching(&log_weights(&edge_features_matching(pair), &params)?)?;
                let loss = hamming_loss(&y, pair.truth())?;
                total += loss;
                rows.push(vec![(k + 1).to_string(), loss.to_string()]);
            }
            rows.push(vec!["mean".into(), (total / pairs.len() as f64).to_string()]);
            csv_bytes(&["pair", "hamming_loss"], rows, b',')
        }
        Format::Matrix => return Err(CliError::Usage("evaluate reads --format letor or matchpairs".into())),
    };
    write_output(&a.out, &bytes)?;
    ctx.finish(a.manifest.as_deref(), None, inputs, vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_sample(a: &SampleArgs, ctx: &Context) -> Result<Status, CliError> {
    let mut inputs = InputLog::default();
    let w = parse_matrix(&inputs.read(&a.matrix)?, a.log_domain)?;
    let prepared = PreparedMatrix::new(&w, a.bound.into())?;
    let batch = sample_prepared(&prepared, a.k, a.seed, a.max_attempts)?;
    let mut text = String::new();
    for y in &batch.samples {
        let line: Vec<String> = y.to_one_based().iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    write_output(&a.out, text.as_bytes())?;
    eprintln!(
        "accepted {} of {} attempts (acceptance rate {:.6}, bound {})",
        batch.samples.len(),
        batch.attempts,
        batch.acceptance_rate(),
        prepared.bound()
    );
    ctx.finish(a.manifest.as_deref(), Some(a.seed), inputs, vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_permanent(a: &PermanentArgs, ctx: &Context) -> Result<Status, CliError> {
    let mut inputs = InputLog::default();
    let w = parse_matrix(&inputs.read(&a.matrix)?, a.log_domain)?;
    let log_per = match a.method {
        PermanentMethod::Ryser => permanent_ryser(&w)?,
        PermanentMethod::BruteForce => permanent_brute_force(&w)?,
    };
    let mut text = format!("log_permanent\t{log_per}\n");
    let per = log_per.exp();
    if per.is_finite() {
        text.push_str(&format!("permanent\t{per}\n"));
    } else {
        eprintln!("note: the permanent itself overflows f64");
    }
    if a.marginals {
        let p = match_marginals(&w)?;
        let m = w.m();
        text.push_str("marginals\n");
        for i in 0..m {
            let row: Vec<String> = p[i * m..(i + 1) * m].iter().map(|v| v.to_string()).collect();
            text.push_str(&row.join(" "));
            text.push('\n');
        }
    }
    write_output(&a.out, text.as_bytes())?;
    ctx.finish(a.manifest.as_deref(), None, inputs, vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_cv(a: &CvArgs, ctx: &Context) -> Result<Status, CliError> {
    let m = require_m(a.m)?;
    let mut inputs = InputLog::default();
    let mut ds = read_letor(&mut inputs, &a.data, a.levels)?;
    if let Some(path) = &a.folds {
        let text = inputs.read(path)?;
        ds.folds = parse_folds(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let cfg = CvConfig {
        m,
        fraction: a.fraction,
        seed: a.seed,
        train: train_config(&a.optim, 0.0, a.seed),
    };
    let res = cross_validate(&ds, &a.lambda_grid, &cfg)?;
    let name = dataset_name(&a.data);
    let mut rows = Vec::new();
    for r in &res.rows {
        for (k, v) in r.ndcg.iter().enumerate() {
            rows.push(vec![name.clone(), r.fold.to_string(), r.lambda.to_string(), (k + 1).to_string(), v.to_string()]);
        }
    }
    for (lambda, ndcg) in &res.means {
        for (k, v) in ndcg.iter().enumerate() {
            rows.push(vec![name.clone(), "mean".into(), lambda.to_string(), (k + 1).to_string(), v.to_string()]);
        }
    }
    write_output(&a.out, &csv_bytes(&["dataset", "fold", "lambda", "k", "ndcg"], rows, b','))?;
    eprintln!(
        "selected lambda {} after {} training runs",
        res.selected_lambda, res.training_runs
    );
    ctx.finish(a.manifest.as_deref(), Some(a.seed), inputs, vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_bench(a: &BenchArgs, ctx: &Context) -> Result<Status, CliError> {
    let cfg = SweepConfig {
        m: a.m,
        p: a.p,
        sigma: a.sigma,
        repeats: a.repeats,
        test_pairs: a.test_pairs,
        validation_pairs: a.validation_pairs,
        lambda_grid: a.lambda_grid.clone(),
        seed: a.seed,
        train: TrainConfig {
            inference: a.inference.into(),
            k_samples: a.k_samples,
            bound: a.bound.into(),
            max_iters: a.max_iters,
            max_backtracks: a.max_backtracks,
            ..TrainConfig::default()
        },
    };
    let rows = sample_size_sweep(&a.sizes, &cfg)?;
    let rows = rows.into_iter().map(|r| {
        vec![
            r.train_size.to_string(),
            r.repeat.to_string(),
            r.hamming_loss.to_string(),
            format!("{:.3}", r.seconds),
        ]
    });
    write_output(&a.out, &csv_bytes(&["train_size", "repeat", "hamming_loss", "seconds"], rows, b','))?;
    ctx.finish(a.manifest.as_deref(), Some(a.seed), InputLog::default(), vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_gen_pairs(a: &GenPairsArgs, ctx: &Context) -> Result<Status, CliError> {
    let pairs = generate_synthetic(a.n, a.m, a.p, a.sigma, a.seed)?;
    write_output(&a.out, serialize_pairs(&pairs).as_bytes())?;
    ctx.finish(a.manifest.as_deref(), Some(a.seed), InputLog::default(), vec![a.out.clone()])?;
    Ok(Status::Ok)
}

pub fn cmd_gen_letor(a: &GenLetorArgs, ctx: &Context) -> Result<Status, CliError> {
    let theta = planted_theta(a.d, a.seed);
    let ds = generate_planted(a.queries, a.docs, &theta, a.levels, a.seed)?;
    write_output(&a.out, to_letor(&ds).as_bytes())?;
    eprintln!("planted theta {}", serde_json::to_string(&theta).expect("floats serialize"));
    ctx.finish(a.manifest.as_deref(), Some(a.seed), InputLog::default(), vec![a.out.clone()])?;
    Ok(Status::Ok)
}
