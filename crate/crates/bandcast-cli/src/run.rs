//! Orchestration: estimation, forecasting under a scenario, and benchmark
//! runs, each returning output tables as strings so the process boundary
//! stays thin and testable.

use std::fmt::Write as _;

use bandcast::estimation::acp::{acp_draw_params, acp_posterior, optimize_shrinkage, AcpPrior};
use bandcast::estimation::niw::{gibbs_niw, NiwPrior};
use bandcast::estimation::PosteriorDraws;
use bandcast::forecast::{forecast_over_draws, ConstraintSet, ForecastDraws};
use bandcast::simlab::{equality_suite, inequality_suite, render_benchmark_table, run_benchmark};
use bandcast::var::{ReducedParams, SvarParams};
use bandcast::{Error, Result};
use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::scenario::{EstimationSettings, PriorChoice, ScenarioFile};

/// Reported percentiles, in emission order.
pub const QUANTILES: [f64; 5] = [5.0, 16.0, 50.0, 84.0, 95.0];

/// Forecast sampling uses its own seed stream, decoupled from the estimation
/// seed so the two stages never share generator state.
fn forecast_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(0x9E37_79B9)
}

/// Draw from the posterior chosen by the settings. Returns the draws and a
/// human-readable summary of what was run.
pub fn estimate_posterior(
    data: &DMatrix<f64>,
    p: usize,
    est: &EstimationSettings,
) -> Result<(PosteriorDraws, String)> {
    let n = data.ncols();
    let mut summary = String::new();
    let posterior = match est.prior {
        PriorChoice::Acp => {
            let template = AcpPrior::from_data(data, p, est.kappa1, est.kappa2)?;
            let (prior, note) = if est.optimize_kappa {
                let (k1, k2, log_ml) = optimize_shrinkage(data, p, &template)?;
                (
                    AcpPrior {
                        kappa1: k1,
                        kappa2: k2,
                        ..template
                    },
                    format!(
                        "kappa1 = {k1:.6e}\nkappa2 = {k2:.6e}\nlog_marginal_likelihood = {log_ml:.4}\n"
                    ),
                )
            } else {
                let log_ml = acp_posterior(data, p, &template)?.log_marginal_likelihood();
                (
                    template.clone(),
                    format!(
                        "kappa1 = {:.6e}\nkappa2 = {:.6e}\nlog_marginal_likelihood = {log_ml:.4}\n",
                        template.kappa1, template.kappa2
                    ),
                )
            };
            let _ = writeln!(summary, "prior = acp");
            summary.push_str(&note);
            let posterior = acp_posterior(data, p, &prior)?;
            acp_draw_params(&posterior, est.draws, est.seed)?
        }
        PriorChoice::Niw => {
            let _ = writeln!(summary, "prior = niw");
            let _ = writeln!(summary, "burn_in = {}", est.burn_in);
            gibbs_niw(
                data,
                p,
                &NiwPrior::default_loose(n, p),
                est.draws,
                est.burn_in,
                est.seed,
            )?
        }
    };
    let _ = writeln!(summary, "draws = {}", posterior.len());
    let _ = writeln!(summary, "seed = {}", est.seed);
    Ok((posterior, summary))
}

/// Reduced-form view of a structural draw: premultiplies by the inverse
/// impact matrix and rebuilds the innovation covariance from the shock
/// scales.
fn reduced_from(s: &SvarParams) -> Result<ReducedParams> {
    let n = s.n;
    let lu = s.a0.clone().lu();
    let solve = |m: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        lu.solve(m)
            .ok_or_else(|| Error::DimensionMismatch("impact matrix is singular".into()))
    };
    let b = lu
        .solve(&s.a)
        .ok_or_else(|| Error::DimensionMismatch("impact matrix is singular".into()))?;
    let mut b_lags = Vec::with_capacity(s.a_lags.len());
    for a in &s.a_lags {
        b_lags.push(solve(a)?);
    }
    let d = match &s.shock_scale {
        Some(scale) => DMatrix::from_diagonal(&scale.map(|v| v * v)),
        None => DMatrix::identity(n, n),
    };
    let a0_inv = solve(&DMatrix::identity(n, n))?;
    let sigma = &a0_inv * d * a0_inv.transpose();
    Ok(ReducedParams {
        n,
        p: s.p,
        b,
        b_lags,
        sigma,
    })
}

fn posterior_mean_reduced(posterior: &PosteriorDraws) -> Result<ReducedParams> {
    let reduced: Vec<ReducedParams> = match posterior {
        PosteriorDraws::Reduced { draws, .. } => draws.clone(),
        PosteriorDraws::Structural { draws, .. } => {
            draws.iter().map(reduced_from).collect::<Result<_>>()?
        }
    };
    let first = reduced.first().ok_or_else(|| {
        Error::InsufficientData("posterior holds no draws".into())
    })?;
    let (n, p) = (first.n, first.p);
    let m = reduced.len() as f64;
    let mut mean = ReducedParams {
        n,
        p,
        b: DVector::zeros(n),
        b_lags: vec![DMatrix::zeros(n, n); p],
        sigma: DMatrix::zeros(n, n),
    };
    for r in &reduced {
        mean.b += &r.b / m;
        mean.sigma += &r.sigma / m;
        for (acc, bl) in mean.b_lags.iter_mut().zip(&r.b_lags) {
            *acc += bl / m;
        }
    }
    Ok(mean)
}

/// Output tables of an `estimate` run.
pub struct EstimateOutputs {
    pub summary: String,
    /// Posterior means in long form: matrix, row, col, value.
    pub estimates_csv: String,
}

pub fn run_estimate(dataset: &Dataset, p: usize, est: &EstimationSettings) -> Result<EstimateOutputs> {
    let (posterior, summary) = estimate_posterior(&dataset.data, p, est)?;
    let mean = posterior_mean_reduced(&posterior)?;
    let mut csv = String::from("matrix,row,col,value\n");
    for (i, label) in dataset.labels.iter().enumerate() {
        let _ = writeln!(csv, "intercept,{label},,{:.6}", mean.b[i]);
    }
    for (l, bl) in mean.b_lags.iter().enumerate() {
        for (i, row_label) in dataset.labels.iter().enumerate() {
            for (j, col_label) in dataset.labels.iter().enumerate() {
                let _ = writeln!(csv, "lag{},{row_label},{col_label},{:.6}", l + 1, bl[(i, j)]);
            }
        }
    }
    for (i, row_label) in dataset.labels.iter().enumerate() {
        for (j, col_label) in dataset.labels.iter().enumerate() {
            let _ = writeln!(csv, "sigma,{row_label},{col_label},{:.6}", mean.sigma[(i, j)]);
        }
    }
    Ok(EstimateOutputs {
        summary,
        estimates_csv: csv,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForecastOptions {
    /// Also emit every raw forecast draw.
    pub emit_draws: bool,
    /// Also emit quantiles of conditional-minus-unconditional differences,
    /// paired by parameter draw.
    pub emit_difference: bool,
}

pub struct ForecastOutputs {
    pub summary: String,
    pub quantiles_csv: String,
    pub difference_csv: Option<String>,
    pub draws_csv: Option<String>,
    /// The paths behind the tables at full precision, conditional when the
    /// scenario carries constraints.
    pub path_draws: ForecastDraws,
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let m = sorted.len();
    debug_assert!(m > 0);
    if m == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (m - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let w = rank - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// One row per (variable, quarter): the requested percentiles of the given
/// draw matrix, variables grouped together with dates ascending.
fn quantile_table(draws: &DMatrix<f64>, scenario: &ScenarioFile, labels: &[String]) -> String {
    let n = labels.len();
    let h = scenario.horizon();
    let mut out = String::from("variable,date,q05,q16,q50,q84,q95\n");
    for (v, label) in labels.iter().enumerate() {
        let mut date = scenario.start;
        for t in 0..h {
            let col = draws.column(v + n * t);
            let mut vals: Vec<f64> = col.iter().cloned().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
            let _ = write!(out, "{label},{date}");
            for q in QUANTILES {
                let _ = write!(out, ",{:.6}", percentile(&vals, q));
            }
            out.push('\n');
            date = date.next();
        }
    }
    out
}

fn draws_table(draws: &ForecastDraws, scenario: &ScenarioFile, labels: &[String]) -> String {
    let n = labels.len();
    let h = scenario.horizon();
    let mut out = String::from("draw");
    for t in 0..h {
        let date = (0..t).fold(scenario.start, |d, _| d.next());
        for label in labels {
            let _ = write!(out, ",{label}@{date}");
        }
    }
    out.push('\n');
    for i in 0..draws.n_draws() {
        let _ = write!(out, "{i}");
        for t in 0..h {
            for v in 0..n {
                let _ = write!(out, ",{:.6}", draws.draws[(i, v + n * t)]);
            }
        }
        out.push('\n');
    }
    out
}

/// Full forecasting pipeline: estimate, draw unconditional forecasts,
/// resolve the scenario against the dataset labels (offsets against the
/// unconditional mean), draw conditional forecasts, and emit quantiles.
pub fn run_forecast(
    dataset: &Dataset,
    p: usize,
    scenario: &ScenarioFile,
    opts: ForecastOptions,
) -> Result<ForecastOutputs> {
    if dataset.t() <= p {
        return Err(Error::InsufficientData(format!(
            "{} observations cannot supply {p} lags of history",
            dataset.t()
        )));
    }
    let est = &scenario.estimation;
    let (posterior, mut summary) = estimate_posterior(&dataset.data, p, est)?;
    let history: Vec<DVector<f64>> = (dataset.t() - p..dataset.t())
        .map(|t| dataset.data.row(t).transpose())
        .collect();
    let h = scenario.horizon();
    let fs = forecast_seed(est.seed);

    let uncond = forecast_over_draws(
        &posterior,
        &history,
        &ConstraintSet::none(),
        h,
        est.forecasts_per_draw,
        fs,
    )?;
    let constraints = scenario.to_constraints(&dataset.labels, Some(&uncond.mean()))?;
    let conditional = if constraints.is_empty() {
        None
    } else {
        Some(forecast_over_draws(
            &posterior,
            &history,
            &constraints,
            h,
            est.forecasts_per_draw,
            fs,
        )?)
    };
    let final_draws = conditional.as_ref().unwrap_or(&uncond);

    let _ = writeln!(summary, "horizon = {h}");
    let _ = writeln!(summary, "forecast_draws = {}", final_draws.n_draws());
    let _ = writeln!(
        summary,
        "constraints = {}",
        if constraints.is_empty() { "none" } else { "scenario" }
    );

    let quantiles_csv = quantile_table(&final_draws.draws, scenario, &dataset.labels);
    let difference_csv = if opts.emit_difference {
        let diff = match &conditional {
            Some(c) => &c.draws - &uncond.draws,
            None => DMatrix::zeros(uncond.draws.nrows(), uncond.draws.ncols()),
        };
        Some(quantile_table(&diff, scenario, &dataset.labels))
    } else {
        None
    };
    let draws_csv = opts
        .emit_draws
        .then(|| draws_table(final_draws, scenario, &dataset.labels));

    let path_draws = conditional.unwrap_or(uncond);
    Ok(ForecastOutputs {
        summary,
        quantiles_csv,
        difference_csv,
        draws_csv,
        path_draws,
    })
}

/// Benchmark entry point: which grid to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchSuite {
    Equality,
    Inequality,
    Both,
}

impl BenchSuite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "equality" => Ok(BenchSuite::Equality),
            "inequality" => Ok(BenchSuite::Inequality),
            "both" => Ok(BenchSuite::Both),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown suite '{other}' (use equality, inequality, or both)"),
            }),
        }
    }
}

pub fn run_bench(suite: BenchSuite, n_draws: usize, timing_runs: usize) -> Result<String> {
    let mut cells = Vec::new();
    if matches!(suite, BenchSuite::Equality | BenchSuite::Both) {
        cells.extend(equality_suite());
    }
    if matches!(suite, BenchSuite::Inequality | BenchSuite::Both) {
        cells.extend(inequality_suite());
    }
    for c in &mut cells {
        c.timing_runs = timing_runs;
    }
    let results = run_benchmark(&cells, n_draws)?;
    Ok(render_benchmark_table(&results))
}
