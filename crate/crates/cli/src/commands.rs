//! Subcommand implementations. Results go to `out`; errors are returned to
//! the caller, which reports them on stderr.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fastweights::classify::{
    default_prior_count, evaluate_full, fit, run_episodes, EpisodeSpec, EvalReport, Method,
};
use fastweights::datasets::{
    generate_synthetic, load_csv, load_csv_labeled, load_fwkv, load_weights, save_fwkv,
    save_weights, with_label_noise, KvDataset, StoredWeights, SyntheticTaskSpec,
};
use fastweights::fast_weights::{
    compile, compile_detailed, interpolate_update, stats_accumulate, stats_solve, PriorHead,
    SufficientStats,
};
use fastweights::linalg::SpectralPolicy;
use fastweights::tensor::EmbeddingMatrix;
use fastweights::Error;
use serde::Serialize;
use serde_json::Value;

use crate::args::{
    BenchArgs, Command, CompileArgs, CsvArgs, EvalArgs, GenArgs, MethodArg, OutputFormat,
    UpdateArgs, VerifyArgs,
};
use crate::bench::{run_bench, BenchConfig};
use crate::verify::run_suite;

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

/// Whether the command reached its postcondition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Success,
    ChecksFailed,
}

pub fn run(command: &Command, out: &mut dyn Write) -> CliResult<Status> {
    match command {
        Command::Compile(a) => cmd_compile(a, out),
        Command::Update(a) => cmd_update(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Bench(a) => cmd_bench(a, out),
        Command::Verify(a) => cmd_verify(a, out),
        Command::Gen(a) => cmd_gen(a, out),
    }
}

/// Writes one record: a JSON line, or aligned `key value` lines.
pub fn emit(out: &mut dyn Write, format: OutputFormat, record: &impl Serialize) -> CliResult<()> {
    let value = serde_json::to_value(record)?;
    match format {
        OutputFormat::Structured => writeln!(out, "{}", serde_json::to_string(&value)?)?,
        OutputFormat::Table => {
            let Value::Object(map) = value else {
                writeln!(out, "{value}")?;
                return Ok(());
            };
            let width = map.keys().map(|k| k.len()).max().unwrap_or(0);
            for (k, v) in &map {
                let shown = match v {
                    Value::Null => "-".to_string(),
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                writeln!(out, "{k:<width$}  {shown}")?;
            }
        }
    }
    Ok(())
}

/// Reads a dataset from FWKV, or from CSV when the extension is `.csv`.
pub fn load_dataset(path: &Path, csv: &CsvArgs) -> CliResult<KvDataset> {
    let is_csv = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return Ok(load_fwkv(path)?);
    }
    let d_x = csv
        .d_x
        .ok_or_else(|| format!("{}: CSV input needs --d-x", path.display()))?;
    match (csv.d_y, csv.labeled) {
        (_, true) => Ok(load_csv_labeled(path, d_x)?),
        (Some(d_y), false) => Ok(load_csv(path, d_x, d_y)?),
        (None, false) => {
            Err(format!("{}: CSV input needs --d-y or --labeled", path.display()).into())
        }
    }
}

fn policy(alpha: f64, epsilon: Option<f64>) -> CliResult<SpectralPolicy> {
    let p = SpectralPolicy {
        alpha,
        explicit_epsilon: epsilon,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Serialize)]
struct CompileRecord<'a> {
    input: &'a str,
    output: &'a str,
    rows: usize,
    d_x: usize,
    d_y: usize,
    retained_rank: usize,
    epsilon: f64,
    count: f64,
    compile_seconds: f64,
}

fn cmd_compile(a: &CompileArgs, out: &mut dyn Write) -> CliResult<Status> {
    let ds = load_dataset(&a.input, &a.csv)?;
    let policy = a.spectral.policy()?;
    let values = ds.value_matrix()?;
    let start = Instant::now();
    let compiled = compile_detailed(ds.keys(), &values, &policy, None)?;
    let compile_seconds = start.elapsed().as_secs_f64();
    let stats = if a.stats {
        Some(SufficientStats::from_batch(ds.keys(), &values)?)
    } else {
        None
    };
    save_weights(
        &a.output,
        &StoredWeights {
            weights: compiled.weights.clone(),
            stats,
        },
    )?;
    emit(
        out,
        a.format,
        &CompileRecord {
            input: &a.input.to_string_lossy(),
            output: &a.output.to_string_lossy(),
            rows: ds.len(),
            d_x: ds.d_x(),
            d_y: ds.d_y(),
            retained_rank: compiled.retained_rank,
            epsilon: compiled.epsilon,
            count: compiled.weights.count(),
            compile_seconds,
        },
    )?;
    Ok(Status::Success)
}

#[derive(Serialize)]
struct UpdateRecord<'a> {
    weights: &'a str,
    batch_rows: usize,
    mode: &'static str,
    discount: f64,
    old_count: f64,
    new_count: f64,
}

fn cmd_update(a: &UpdateArgs, out: &mut dyn Write) -> CliResult<Status> {
    let stored = load_weights(&a.weights)?;
    let batch = load_dataset(&a.batch, &a.csv)?;
    let policy = a.spectral.policy()?;
    let old = &stored.weights;
    if (batch.d_x(), batch.d_y()) != (old.d_x(), old.d_y()) {
        return Err(format!(
            "{} is {}→{} but {} holds {}→{} weights",
            a.batch.display(),
            batch.d_x(),
            batch.d_y(),
            a.weights.display(),
            old.d_x(),
            old.d_y()
        )
        .into());
    }
    if !(a.discount > 0.0 && a.discount <= 1.0) {
        return Err(format!("discount {} outside (0, 1]", a.discount).into());
    }
    let values = batch.value_matrix()?;

    let running = match (&stored.stats, a.exact) {
        (Some(s), _) => Some(s.discounted(a.discount)?),
        (None, true) if old.count() == 0.0 => Some(SufficientStats::zeros(old.d_x(), old.d_y())),
        (None, true) => {
            return Err(format!(
                "{} has no sufficient statistics; compile it with --stats to use --exact",
                a.weights.display()
            )
            .into())
        }
        (None, false) => None,
    };
    let stats = running
        .map(|s| stats_accumulate(&s, batch.keys(), &values))
        .transpose()?;

    let weights = if a.exact {
        stats_solve(
            stats.as_ref().expect("exact path keeps statistics"),
            &policy,
        )?
    } else {
        let batch_weights = compile(batch.keys(), &values, &policy, None)?;
        interpolate_update(old, &batch_weights, a.discount)?
    };
    let record = UpdateRecord {
        weights: &a.weights.to_string_lossy(),
        batch_rows: batch.len(),
        mode: if a.exact { "exact" } else { "interpolate" },
        discount: a.discount,
        old_count: old.count(),
        new_count: weights.count(),
    };
    save_weights(&a.weights, &StoredWeights { weights, stats })?;
    emit(out, a.format, &record)?;
    Ok(Status::Success)
}

/// Resolved evaluation settings.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub method: Method,
    pub alpha: f64,
    pub epsilon: Option<f64>,
    pub temperature: f64,
    pub k: usize,
    pub prior_n0: f64,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_args(a: &EvalArgs, classes: usize) -> CliResult<Self> {
        let alpha = a.spectral.alpha.unwrap_or(if a.classification_defaults {
            SpectralPolicy::classification().alpha
        } else {
            SpectralPolicy::default().alpha
        });
        let prior_n0 = match (a.n0, a.classification_defaults) {
            (Some(n0), _) => n0,
            (None, true) => default_prior_count(classes),
            (None, false) => 0.0,
        };
        if !(prior_n0.is_finite() && prior_n0 >= 0.0) {
            return Err(format!("prior count {prior_n0} must be non-negative").into());
        }
        let method = match a.method {
            MethodArg::FastWeights => Method::FastWeights,
            MethodArg::Knn => Method::Knn { k: a.k },
            MethodArg::SoftmaxMemory => Method::SoftmaxMemory {
                temperature: a.temperature,
            },
            MethodArg::CenteredLinear => Method::CenteredLinear,
            MethodArg::Linear => Method::Linear,
        };
        Ok(Self {
            method,
            alpha,
            epsilon: a.spectral.epsilon,
            temperature: a.temperature,
            k: a.k,
            prior_n0,
            seed: a.seed,
        })
    }

    pub fn policy(&self) -> CliResult<SpectralPolicy> {
        policy(self.alpha, self.epsilon)
    }
}

#[derive(Serialize)]
struct EvalRecord {
    method: &'static str,
    way: usize,
    shot: Option<usize>,
    accuracy: f64,
    ci95: f64,
    episodes: usize,
    seed: u64,
    alpha: f64,
    epsilon: Option<f64>,
    n0: f64,
}

fn prior_head(a: &EvalArgs, n0: f64, d_x: usize, d_y: usize) -> CliResult<Option<PriorHead>> {
    if n0 == 0.0 {
        return Ok(None);
    }
    let w0 = match &a.prior {
        Some(path) => load_weights(path)?.weights.weights().clone(),
        None if d_x == d_y => EmbeddingMatrix::identity(d_x),
        None => {
            return Err(format!(
                "a prior with n0 > 0 needs --prior when d_x ({d_x}) differs from d_y ({d_y})"
            )
            .into())
        }
    };
    Ok(Some(PriorHead::new(w0, n0)?))
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult<Status> {
    let ds = load_dataset(&a.dataset, &a.csv)?;
    let (Some(labels), Some(head)) = (ds.labels(), ds.head()) else {
        return Err(format!("{} has no class labels", a.dataset.display()).into());
    };
    let cfg = RunConfig::from_args(a, head.len())?;
    let policy = cfg.policy()?;
    let prior = prior_head(a, cfg.prior_n0, ds.d_x(), ds.d_y())?;

    let episodic = a.way.is_some() || a.shot.is_some() || a.episodes.is_some();
    let (report, way, shot): (EvalReport, usize, Option<usize>) = if episodic {
        let spec = EpisodeSpec {
            way: a.way.ok_or("episodic evaluation needs --way")?,
            shot: a.shot.ok_or("episodic evaluation needs --shot")?,
            queries_per_class: a.queries,
            episodes: a.episodes.unwrap_or(600),
            seed: cfg.seed,
        };
        let report = run_episodes(
            ds.keys(),
            labels,
            head,
            &spec,
            cfg.method,
            &policy,
            prior.as_ref(),
        )?;
        (report, spec.way, Some(spec.shot))
    } else {
        let model = fit(cfg.method, ds.keys(), labels, head, &policy, prior.as_ref())?;
        let report = match &a.query {
            Some(path) => {
                let q = load_dataset(path, &a.csv)?;
                let q_labels = q
                    .labels()
                    .ok_or_else(|| format!("{} has no class labels", path.display()))?;
                if let Some(&bad) = q_labels.iter().find(|&&l| head.index_of(l).is_none()) {
                    return Err(Error::Label(bad).into());
                }
                evaluate_full(&model, q.keys(), q_labels)?
            }
            None => evaluate_full(&model, ds.keys(), labels)?,
        };
        (report, head.len(), None)
    };
    emit(
        out,
        a.format,
        &EvalRecord {
            method: cfg.method.name(),
            way,
            shot,
            accuracy: report.accuracy,
            ci95: report.ci95,
            episodes: report.episodes_run,
            seed: cfg.seed,
            alpha: cfg.alpha,
            epsilon: cfg.epsilon,
            n0: cfg.prior_n0,
        },
    )?;
    Ok(Status::Success)
}

fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> CliResult<Status> {
    let ds = load_dataset(&a.dataset, &a.csv)?;
    let policy = a.spectral.policy()?;
    let values = ds.value_matrix()?;
    if !(a.gd_tolerance > 0.0 && a.gd_tolerance < 1.0) {
        return Err(format!("gd tolerance {} outside (0, 1)", a.gd_tolerance).into());
    }
    let report = run_bench(
        ds.keys(),
        &values,
        &policy,
        &BenchConfig {
            repeats: a.repeats,
            relative_tolerance: a.gd_tolerance,
            max_steps: a.max_steps,
        },
    )?;
    emit(out, a.format, &report)?;
    Ok(Status::Success)
}

fn cmd_verify(a: &VerifyArgs, out: &mut dyn Write) -> CliResult<Status> {
    let checks = run_suite(a.suite)?;
    for c in &checks {
        match a.format {
            OutputFormat::Structured => emit(out, a.format, c)?,
            OutputFormat::Table => writeln!(
                out,
                "{}  {:<16}  {}  ({})",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.name,
                c.detail
            )?,
        }
    }
    Ok(if checks.iter().all(|c| c.passed) {
        Status::Success
    } else {
        Status::ChecksFailed
    })
}

#[derive(Serialize)]
struct GenRecord<'a> {
    output: &'a str,
    rows: usize,
    classes: usize,
    dim: usize,
    seed: u64,
}

fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> CliResult<Status> {
    let spec = SyntheticTaskSpec {
        classes: a.classes,
        dim: a.dim,
        samples_per_class: a.per_class,
        cluster_spread: a.spread,
        class_separation: a.separation,
        seed: a.seed,
        common_offset: a.common_offset,
    };
    let mut ds = generate_synthetic(&spec)?;
    if a.label_noise > 0.0 {
        ds = with_label_noise(&ds, a.label_noise, a.seed.wrapping_add(1))?;
    }
    save_fwkv(&a.output, &ds)?;
    emit(
        out,
        OutputFormat::Table,
        &GenRecord {
            output: &a.output.to_string_lossy(),
            rows: ds.len(),
            classes: a.classes,
            dim: a.dim,
            seed: a.seed,
        },
    )?;
    Ok(Status::Success)
}
