use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use gaussent::criterion::simon_criterion;
use gaussent::estimate::{from_dmatrix, verdict_from_estimate, Matrix4};
use gaussent::locc::{run_scheme, FiveGroupPlan, SchemeVariant};
use gaussent::sampler::substream;
use gaussent::stokes::{full_pipeline, StokesConfig};
use gaussent::symplectic::two_mode_squeezer;
use gaussent::twocopy::{run_twocopy, CMethod, TwoCopyConfig};
use gaussent::{Backend, GaussianState, SeparabilityReport, Verdict};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::config::{ExperimentConfig, Scheme, StateSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a scheme reports about one state.
#[derive(Debug, Clone, Serialize)]
pub struct SchemeOutcome {
    pub report: SeparabilityReport,
    pub margin_std_error: f64,
    /// Full covariance estimate, for the schemes that produce one.
    pub gamma_hat: Option<Matrix4>,
    pub shots_used: usize,
    /// The scheme's own result payload.
    pub detail: Value,
}

pub fn run_on(
    state: &GaussianState,
    scheme: Scheme,
    shots: usize,
    seed: u64,
    stokes: &StokesConfig,
    twocopy: &TwoCopyConfig,
) -> anyhow::Result<SchemeOutcome> {
    let backend = Backend::Sampled { shots, seed };
    let outcome = match scheme {
        Scheme::Analytic => SchemeOutcome {
            report: simon_criterion(state)?,
            margin_std_error: 0.0,
            gamma_hat: Some(from_dmatrix(state.cov())),
            shots_used: 0,
            detail: Value::Null,
        },
        Scheme::LoccI | Scheme::LoccIi => {
            let variant = if scheme == Scheme::LoccI {
                SchemeVariant::SchemeI
            } else {
                SchemeVariant::SchemeII
            };
            let out = run_scheme(state, &FiveGroupPlan::new(variant, shots), seed)?;
            let v = verdict_from_estimate(&out.estimate.gamma_hat, Some(&out.estimate.std_errors))?;
            SchemeOutcome {
                report: v.report,
                margin_std_error: v.margin_std_error,
                gamma_hat: Some(out.estimate.gamma_hat),
                shots_used: out.estimate.shots_used,
                detail: serde_json::to_value(&out)?,
            }
        }
        Scheme::Stokes => {
            let out = full_pipeline(state, stokes, &backend)?;
            SchemeOutcome {
                report: out.verdict.report.clone(),
                margin_std_error: out.verdict.margin_std_error,
                gamma_hat: Some(out.estimate.gamma_hat),
                shots_used: out.estimate.shots_used,
                detail: serde_json::to_value(&out)?,
            }
        }
        Scheme::TwocopyM1 | Scheme::TwocopyM2 | Scheme::TwocopyM3 => {
            let method = match scheme {
                Scheme::TwocopyM1 => CMethod::Method1,
                Scheme::TwocopyM2 => CMethod::Method2,
                _ => CMethod::Method3,
            };
            let out = run_twocopy(state, method, &backend, twocopy)?;
            SchemeOutcome {
                report: out.verdict.report.clone(),
                margin_std_error: out.verdict.margin_std_error,
                gamma_hat: None,
                shots_used: out.shots_used,
                detail: serde_json::to_value(&out)?,
            }
        }
    };
    Ok(outcome)
}

fn gamma_errors(gamma_hat: &Matrix4, state: &GaussianState) -> (Matrix4, f64) {
    let mut err = [[0.0; 4]; 4];
    let mut sq = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            err[i][j] = gamma_hat[i][j] - state.cov()[(i, j)];
            sq += err[i][j] * err[i][j];
        }
    }
    (err, (sq / 16.0).sqrt())
}

/// Everything persisted about one simulated run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub version: String,
    pub config: ExperimentConfig,
    pub truth: SeparabilityReport,
    pub estimated: SeparabilityReport,
    pub margin_std_error: f64,
    /// Estimated and true verdicts agree on separable versus entangled.
    pub verdict_matches: bool,
    /// `Γ̂ - Γ` entry by entry.
    pub gamma_errors: Option<Matrix4>,
    pub rms_gamma_error: Option<f64>,
    pub shots_used: usize,
    pub detail: Value,
    pub wall_time_s: f64,
}

pub fn simulate(config: &ExperimentConfig) -> anyhow::Result<RunRecord> {
    let start = Instant::now();
    let state = config.state.build()?;
    let truth = simon_criterion(&state)?;
    let out = run_on(&state, config.scheme, config.shots, config.seed, &config.stokes, &config.twocopy)?;
    let errs = out.gamma_hat.as_ref().map(|g| gamma_errors(g, &state));
    Ok(RunRecord {
        version: VERSION.to_string(),
        config: config.clone(),
        verdict_matches: truth.verdict.is_separable() == out.report.verdict.is_separable(),
        truth,
        estimated: out.report,
        margin_std_error: out.margin_std_error,
        gamma_errors: errs.map(|e| e.0),
        rms_gamma_error: errs.map(|e| e.1),
        shots_used: out.shots_used,
        detail: out.detail,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    name: &'a str,
    version: &'a str,
    scheme: &'static str,
    seed: u64,
    shots: usize,
    exact_margin: f64,
    margin: f64,
    margin_err: f64,
    exact_verdict: Verdict,
    verdict: Verdict,
    verdict_matches: bool,
    rms_gamma_error: Option<f64>,
    shots_used: usize,
    wall_time_s: f64,
}

/// Writes `<dir>/<name>.json` and appends a row to `<dir>/summary.csv`.
pub fn persist(record: &RunRecord, dir: &Path, name: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let json = dir.join(format!("{name}.json"));
    fs::write(&json, serde_json::to_string_pretty(record)? + "\n").with_context(|| format!("writing {}", json.display()))?;

    let csv_path = dir.join("summary.csv");
    let fresh = !csv_path.exists();
    let file = OpenOptions::new().create(true).append(true).open(&csv_path)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(SummaryRow {
        name,
        version: &record.version,
        scheme: record.config.scheme.name(),
        seed: record.config.seed,
        shots: record.config.shots,
        exact_margin: record.truth.margin,
        margin: record.estimated.margin,
        margin_err: record.margin_std_error,
        exact_verdict: record.truth.verdict,
        verdict: record.estimated.verdict,
        verdict_matches: record.verdict_matches,
        rms_gamma_error: record.rms_gamma_error,
        shots_used: record.shots_used,
        wall_time_s: record.wall_time_s,
    })?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Shots,
    Squeeze,
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "axis",
    "value",
    "margin",
    "margin_err",
    "exact_margin",
    "exact_verdict",
    "verdict_accuracy",
    "rms_gamma_error",
    "shots_used",
    "error",
];

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub axis: &'static str,
    pub value: f64,
    /// Means over the repeats.
    pub margin: Option<f64>,
    pub margin_err: Option<f64>,
    pub exact_margin: Option<f64>,
    pub exact_verdict: Option<Verdict>,
    /// Fraction of repeats whose verdict class matches the exact one.
    pub verdict_accuracy: Option<f64>,
    pub rms_gamma_error: Option<f64>,
    pub shots_used: Option<usize>,
    pub error: Option<String>,
}

/// Point `value` of the sweep: the shot count, or the squeezing `r` of a TMSV
/// template (other states get a two-mode squeezer of `r` applied).
fn sweep_point(template: &ExperimentConfig, axis: Axis, value: f64, index: usize, repeats: usize) -> anyhow::Result<SweepRow> {
    let mut config = template.clone();
    let state = match axis {
        Axis::Shots => {
            if value < 1.0 || value.fract() != 0.0 {
                anyhow::bail!("shot count {value} is not a positive integer");
            }
            config.shots = value as usize;
            config.state.build()?
        }
        Axis::Squeeze => match config.state {
            StateSpec::Tmsv { .. } => StateSpec::Tmsv { r: value }.build()?,
            _ => config.state.build()?.apply_transform(&two_mode_squeezer(value)?)?,
        },
    };
    let truth = simon_criterion(&state)?;
    let runs: Vec<SchemeOutcome> = (0..repeats)
        .map(|rep| {
            let seed = substream(config.seed, (index * repeats + rep) as u64);
            run_on(&state, config.scheme, config.shots, seed, &config.stokes, &config.twocopy)
        })
        .collect::<anyhow::Result<_>>()?;
    let n = repeats as f64;
    let mean = |f: &dyn Fn(&SchemeOutcome) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let rms = if runs.iter().all(|r| r.gamma_hat.is_some()) {
        Some(mean(&|r| gamma_errors(r.gamma_hat.as_ref().unwrap(), &state).1))
    } else {
        None
    };
    Ok(SweepRow {
        axis: axis_name(axis),
        value,
        margin: Some(mean(&|r| r.report.margin)),
        margin_err: Some(mean(&|r| r.margin_std_error)),
        exact_margin: Some(truth.margin),
        exact_verdict: Some(truth.verdict),
        verdict_accuracy: Some(mean(&|r| {
            f64::from(u8::from(r.report.verdict.is_separable() == truth.verdict.is_separable()))
        })),
        rms_gamma_error: rms,
        shots_used: Some(runs.iter().map(|r| r.shots_used).sum()),
        error: None,
    })
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Shots => "shots",
        Axis::Squeeze => "squeeze",
    }
}

/// One row per value, in input order; a failing point is recorded in its row.
pub fn sweep(template: &ExperimentConfig, axis: Axis, values: &[f64], repeats: usize) -> Vec<SweepRow> {
    values
        .par_iter()
        .enumerate()
        .map(|(i, &value)| {
            sweep_point(template, axis, value, i, repeats).unwrap_or_else(|e| SweepRow {
                axis: axis_name(axis),
                value,
                margin: None,
                margin_err: None,
                exact_margin: None,
                exact_verdict: None,
                verdict_accuracy: None,
                rms_gamma_error: None,
                shots_used: None,
                error: Some(format!("{e:#}")),
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SWEEP_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Default, Serialize, PartialEq, Eq)]
pub struct Confusion {
    pub separable_as_separable: usize,
    pub separable_as_entangled: usize,
    pub entangled_as_separable: usize,
    pub entangled_as_entangled: usize,
}

#[derive(Debug, Serialize)]
pub struct Disagreement {
    pub index: usize,
    pub state_seed: u64,
    pub exact_margin: f64,
    pub margin: f64,
    pub margin_std_error: f64,
    /// `|exact margin| < 5 × propagated error`.
    pub near_boundary: bool,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub index: usize,
    pub state_seed: u64,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct RandtestReport {
    pub version: String,
    pub scheme: Scheme,
    pub n_states: usize,
    pub shots: usize,
    pub seed: u64,
    pub max_squeeze: f64,
    pub max_thermal: f64,
    pub confusion: Confusion,
    pub agreement: usize,
    /// Over the states that ran; absent when none did.
    pub agreement_rate: Option<f64>,
    pub disagreements: Vec<Disagreement>,
    pub all_disagreements_near_boundary: bool,
    pub failures: Vec<Failure>,
}

pub struct RandtestArgs {
    pub n_states: usize,
    pub scheme: Scheme,
    pub shots: usize,
    pub seed: u64,
    pub max_squeeze: f64,
    pub max_thermal: f64,
}

/// Random states against the exact oracle. State `k` is drawn from sub-stream
/// `2k` of the seed and measured with sub-stream `2k + 1`.
pub fn randtest(args: &RandtestArgs) -> RandtestReport {
    let stokes = StokesConfig::default();
    let twocopy = TwoCopyConfig::default();
    let results: Vec<(u64, anyhow::Result<(SeparabilityReport, SchemeOutcome)>)> = (0..args.n_states)
        .into_par_iter()
        .map(|k| {
            let state_seed = substream(args.seed, 2 * k as u64);
            let run = || -> anyhow::Result<_> {
                let state = gaussent::factory::random_state(state_seed, args.max_squeeze, args.max_thermal)?;
                let truth = simon_criterion(&state)?;
                let out = run_on(&state, args.scheme, args.shots, substream(args.seed, 2 * k as u64 + 1), &stokes, &twocopy)?;
                Ok((truth, out))
            };
            (state_seed, run())
        })
        .collect();

    let mut confusion = Confusion::default();
    let mut disagreements = Vec::new();
    let mut failures = Vec::new();
    for (index, (state_seed, result)) in results.into_iter().enumerate() {
        let (truth, out) = match result {
            Ok(r) => r,
            Err(e) => {
                failures.push(Failure {
                    index,
                    state_seed,
                    error: format!("{e:#}"),
                });
                continue;
            }
        };
        let (exact_sep, est_sep) = (truth.verdict.is_separable(), out.report.verdict.is_separable());
        match (exact_sep, est_sep) {
            (true, true) => confusion.separable_as_separable += 1,
            (true, false) => confusion.separable_as_entangled += 1,
            (false, true) => confusion.entangled_as_separable += 1,
            (false, false) => confusion.entangled_as_entangled += 1,
        }
        if exact_sep != est_sep {
            disagreements.push(Disagreement {
                index,
                state_seed,
                exact_margin: truth.margin,
                margin: out.report.margin,
                margin_std_error: out.margin_std_error,
                near_boundary: truth.margin.abs() < 5.0 * out.margin_std_error,
            });
        }
    }
    let ran = args.n_states - failures.len();
    let agreement = confusion.separable_as_separable + confusion.entangled_as_entangled;
    RandtestReport {
        version: VERSION.to_string(),
        scheme: args.scheme,
        n_states: args.n_states,
        shots: args.shots,
        seed: args.seed,
        max_squeeze: args.max_squeeze,
        max_thermal: args.max_thermal,
        confusion,
        agreement,
        agreement_rate: (ran > 0).then(|| agreement as f64 / ran as f64),
        all_disagreements_near_boundary: disagreements.iter().all(|d| d.near_boundary),
        disagreements,
        failures,
    }
}
