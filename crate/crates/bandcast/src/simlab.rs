//! Simulation laboratory: a randomized VAR generator with a documented
//! parameter law, a dense reference for equality conditioning, and the
//! timing/violation benchmark harness comparing sampler backends.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::band::SelectionMatrix;
use crate::error::{Error, Result};
use crate::estimation::niw::draw_inverse_wishart;
use crate::forecast::{
    draw_conditional_equality, draw_conditional_inequality_with, IntervalSampler,
};
use crate::var::{build_forecast_system, reduced_to_structural, SvarParams};
use crate::var::ReducedParams;

/// Dense reference computations refuse systems beyond this stacked dimension.
pub const DENSE_GUARD_CAP: usize = 2_000;

const EXPLOSIVE_LIMIT: f64 = 1e8;
const MAX_REDRAWS: usize = 10;
const WARM_UP: usize = 100;

/// Law for randomized VAR parameters and a simulated sample.
///
/// First own-lag coefficients are uniform on `diag_range`, first cross-lag
/// coefficients uniform on `offdiag_range`, every higher-lag coefficient is
/// `N(0, (higher_lag_scale / p)^2)`, and the innovation covariance is
/// inverse-Wishart with `n + iw_dof_offset` degrees of freedom around the
/// scale `iw_identity_weight * I + iw_ones_weight * 1 1'`. Intercepts are a
/// constant vector. Simulation starts from zeros, discards a warm-up, and
/// redraws the parameters when a path explodes.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    pub t: usize,
    pub seed: u64,
    pub intercept: f64,
    pub diag_range: (f64, f64),
    pub offdiag_range: (f64, f64),
    pub higher_lag_scale: f64,
    pub iw_dof_offset: usize,
    pub iw_identity_weight: f64,
    pub iw_ones_weight: f64,
}

impl DgpSpec {
    /// The configuration used throughout the benchmark tables.
    pub fn table_defaults(n: usize, p: usize, t: usize, seed: u64) -> Self {
        DgpSpec {
            n,
            p,
            t,
            seed,
            intercept: 0.01,
            diag_range: (0.0, 0.5),
            offdiag_range: (-0.2, 0.2),
            higher_lag_scale: 0.05,
            iw_dof_offset: 10,
            iw_identity_weight: 0.07,
            iw_ones_weight: 0.03,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::InvalidPrior(
                "generator needs n >= 1 and p >= 1".into(),
            ));
        }
        if self.t <= self.n * self.p + 1 {
            return Err(Error::InsufficientData(format!(
                "sample length {} must exceed n p + 1 = {}",
                self.t,
                self.n * self.p + 1
            )));
        }
        if self.diag_range.0 >= self.diag_range.1 || self.offdiag_range.0 >= self.offdiag_range.1 {
            return Err(Error::InvalidPrior(
                "coefficient ranges must be nonempty intervals".into(),
            ));
        }
        if self.higher_lag_scale <= 0.0
            || self.iw_identity_weight <= 0.0
            || self.iw_ones_weight < 0.0
        {
            return Err(Error::InvalidPrior(
                "generator scales must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Draws VAR parameters from the law `spec` describes and simulates `t`
/// observations (rows are periods). Deterministic in `spec.seed`. Paths
/// whose magnitude passes 1e8 trigger a full parameter redraw, at most ten
/// times.
pub fn generate_dgp(spec: &DgpSpec) -> Result<(ReducedParams, DMatrix<f64>)> {
    spec.validate()?;
    let n = spec.n;
    let p = spec.p;
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let iw_scale = DMatrix::from_fn(n, n, |i, j| {
        spec.iw_identity_weight * f64::from(i == j) + spec.iw_ones_weight
    });

    for _attempt in 0..MAX_REDRAWS {
        let mut b_lags = Vec::with_capacity(p);
        let first = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                rng.gen_range(spec.diag_range.0..spec.diag_range.1)
            } else {
                rng.gen_range(spec.offdiag_range.0..spec.offdiag_range.1)
            }
        });
        b_lags.push(first);
        let sd = spec.higher_lag_scale / p as f64;
        for _ in 1..p {
            b_lags.push(DMatrix::from_fn(n, n, |_, _| {
                sd * rng.sample::<f64, _>(StandardNormal)
            }));
        }
        let sigma = draw_inverse_wishart(&iw_scale, (n + spec.iw_dof_offset) as f64, &mut rng)?;
        let params = ReducedParams {
            n,
            p,
            b: DVector::from_element(n, spec.intercept),
            b_lags,
            sigma,
        };

        let chol = nalgebra::Cholesky::new(params.sigma.clone())
            .ok_or(Error::NotPositiveDefinite {
                index: 0,
                value: f64::NAN,
            })?
            .l();
        let mut history: Vec<DVector<f64>> = vec![DVector::zeros(n); p];
        let mut data = DMatrix::zeros(spec.t, n);
        let mut exploded = false;
        for step in 0..WARM_UP + spec.t {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut y = &params.b + &chol * z;
            for (lag, bl) in params.b_lags.iter().enumerate() {
                y += bl * &history[history.len() - 1 - lag];
            }
            if y.amax() > EXPLOSIVE_LIMIT {
                exploded = true;
                break;
            }
            history.push(y.clone());
            history.remove(0);
            if step >= WARM_UP {
                data.row_mut(step - WARM_UP).copy_from(&y.transpose());
            }
        }
        if !exploded {
            return Ok((params, data));
        }
    }
    Err(Error::ExplosiveDraw {
        attempts: MAX_REDRAWS,
    })
}

/// Exact forecast moments under equality restrictions, computed densely and
/// independently of the banded machinery: the stacked system is materialized,
/// its covariance inverted with dense routines, and restricted coordinates
/// conditioned out by textbook partitioning. Returns the full stacked mean
/// and covariance; restricted coordinates carry their pinned values and zero
/// rows and columns. Refuses stacked dimensions beyond `DENSE_GUARD_CAP`.
pub fn dense_oracle_equality(
    params: &SvarParams,
    history: &[DVector<f64>],
    horizon: usize,
    rows: &SelectionMatrix,
    values: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = build_forecast_system(params, history, horizon)?;
    let nh = f.nh();
    if nh > DENSE_GUARD_CAP {
        return Err(Error::DenseGuard {
            dim: nh,
            cap: DENSE_GUARD_CAP,
        });
    }
    if rows.n_cols() != nh || rows.n_rows() != values.len() {
        return Err(Error::DimensionMismatch(format!(
            "restriction shape ({}, {}) does not match stacked dimension {nh} and {} values",
            rows.n_rows(),
            rows.n_cols(),
            values.len()
        )));
    }
    if !rows.is_injective() {
        return Err(Error::DimensionMismatch(
            "equality restriction pins a coordinate twice".into(),
        ));
    }

    let h_dense = f.h_mat().to_dense();
    let c = f.c().clone();
    let lu = h_dense.clone().lu();
    let mean = lu
        .solve(&c)
        .ok_or(Error::SingularDiagonal { index: 0 })?;
    let hth = h_dense.transpose() * &h_dense;
    let cov = hth
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })?
        .inverse();

    if rows.n_rows() == 0 {
        return Ok((mean, cov));
    }
    if rows.n_rows() == nh {
        let mut full = DVector::zeros(nh);
        for (r, &c) in rows.rows().iter().enumerate() {
            full[c] = values[r];
        }
        return Ok((full, DMatrix::zeros(nh, nh)));
    }

    let obs = rows.rows();
    let free = rows.complement_rows();
    let pick = |idx: &[usize], v: &DVector<f64>| DVector::from_fn(idx.len(), |i, _| v[idx[i]]);
    let block = |ri: &[usize], ci: &[usize]| {
        DMatrix::from_fn(ri.len(), ci.len(), |i, j| cov[(ri[i], ci[j])])
    };
    let sigma_oo = block(obs, obs);
    let sigma_uo = block(&free, obs);
    let sigma_uu = block(&free, &free);
    let oo_inv = sigma_oo
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            index: 0,
            value: f64::NAN,
        })?
        .inverse();
    let gain = &sigma_uo * &oo_inv;
    let mu_u = pick(&free, &mean) + &gain * (values - pick(obs, &mean));
    let cov_u = &sigma_uu - &gain * sigma_uo.transpose();

    let mut full_mean = DVector::zeros(nh);
    let mut full_cov = DMatrix::zeros(nh, nh);
    for (r, &c) in obs.iter().enumerate() {
        full_mean[c] = values[r];
    }
    for (i, &ci) in free.iter().enumerate() {
        full_mean[ci] = mu_u[i];
        for (j, &cj) in free.iter().enumerate() {
            full_cov[(ci, cj)] = cov_u[(i, j)];
        }
    }
    Ok((full_mean, full_cov))
}

/// Sampler backends the harness times against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    /// Banded-precision equality conditioning.
    Precision,
    /// Dense conditioning with a dense factor of the restricted covariance.
    Dense,
    /// Banded interval sampling, tilted accept-reject first stage.
    IntervalPrecision,
    /// Banded interval sampling, Gibbs first stage.
    IntervalGibbs,
    /// Banded interval sampling, plain accept-reject first stage.
    IntervalNaive,
}

impl BenchMethod {
    pub fn label(self) -> &'static str {
        match self {
            BenchMethod::Precision => "precision",
            BenchMethod::Dense => "dense",
            BenchMethod::IntervalPrecision => "interval_precision",
            BenchMethod::IntervalGibbs => "interval_gibbs",
            BenchMethod::IntervalNaive => "interval_naive",
        }
    }

    fn is_interval(self) -> bool {
        matches!(
            self,
            BenchMethod::IntervalPrecision | BenchMethod::IntervalGibbs | BenchMethod::IntervalNaive
        )
    }
}

/// One benchmark cell: a system size, a restriction block width, and the
/// methods to time on it. Equality cells pin the first `n_o` variables at
/// every forecast horizon to held-out simulated values; interval cells
/// confine the same coordinates to a band of `interval_halfwidth` around the
/// trailing `h`-period average of the estimation sample.
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub n_o: usize,
    pub methods: Vec<BenchMethod>,
    /// Rebuild and refactor the system for every draw, the accounting used
    /// when each retained parameter draw gets its own forecast draw. When
    /// false the factorization is shared across the batch.
    pub refactor_per_draw: bool,
    /// Timed repetitions; the median is reported, with one untimed warm-up
    /// run when greater than one.
    pub timing_runs: usize,
    pub interval_halfwidth: f64,
    /// Proposal budget per requested draw for the naive interval method.
    pub naive_budget: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(n: usize, p: usize, h: usize, n_o: usize, methods: Vec<BenchMethod>) -> Self {
        BenchConfig {
            n,
            p,
            h,
            n_o,
            methods,
            refactor_per_draw: false,
            timing_runs: 5,
            interval_halfwidth: 0.1,
            naive_budget: 100_000,
            seed: 0x5eed_0000 + (n * 1_000 + p * 100 + h * 10 + n_o) as u64,
        }
    }
}

/// One timed method on one cell.
#[derive(Debug, Clone)]
pub struct BenchResult {
    pub method: &'static str,
    pub n: usize,
    pub p: usize,
    pub h: usize,
    pub n_o: usize,
    pub seconds: f64,
    pub draws_per_sec: f64,
    pub violations: usize,
}

/// The equality-restriction grid: three system sizes crossed with lag orders
/// and restriction widths, banded against dense. Per-draw refactoring is on
/// except for the largest size, where a dense refactor per draw is out of
/// reach and both methods share their factorizations across the batch.
pub fn equality_suite() -> Vec<BenchConfig> {
    let mut out = Vec::new();
    for &(n, h) in &[(8usize, 5usize), (15, 20), (40, 30)] {
        for &p in &[2usize, 4] {
            for &n_o in &[1usize, 3, 5] {
                let mut cfg = BenchConfig::new(
                    n,
                    p,
                    h,
                    n_o,
                    vec![BenchMethod::Precision, BenchMethod::Dense],
                );
                cfg.refactor_per_draw = n < 40;
                out.push(cfg);
            }
        }
    }
    out
}

/// The interval-restriction grid: two system sizes at a long horizon, tilted
/// against Gibbs first stages. The plain accept-reject method is omitted; at
/// these block widths its acceptance probability is far too small to finish.
pub fn inequality_suite() -> Vec<BenchConfig> {
    let mut out = Vec::new();
    for &(n, h) in &[(8usize, 20usize), (15, 20)] {
        for &p in &[2usize, 4] {
            for &n_o in &[1usize, 3, 5] {
                out.push(BenchConfig::new(
                    n,
                    p,
                    h,
                    n_o,
                    vec![BenchMethod::IntervalPrecision, BenchMethod::IntervalGibbs],
                ));
            }
        }
    }
    out
}

struct BenchCell {
    params: SvarParams,
    history: Vec<DVector<f64>>,
    rows: SelectionMatrix,
    targets: DVector<f64>,
    lower: DVector<f64>,
    upper: DVector<f64>,
}

/// Simulated estimation sample plus held-out targets for one cell. The
/// estimation sample keeps 300 periods; the next `h` periods are held out as
/// equality targets. Interval bounds sit around the trailing-`h` average of
/// the estimation sample.
fn prepare_cell(cfg: &BenchConfig) -> Result<BenchCell> {
    const T_EST: usize = 300;
    if cfg.n_o > cfg.n {
        return Err(Error::DimensionMismatch(format!(
            "cannot restrict {} of {} variables",
            cfg.n_o, cfg.n
        )));
    }
    let spec = DgpSpec::table_defaults(cfg.n, cfg.p, T_EST + cfg.h, cfg.seed);
    let (reduced, data) = generate_dgp(&spec)?;
    let params = reduced_to_structural(&reduced)?;
    let history: Vec<DVector<f64>> = (T_EST - cfg.p..T_EST)
        .map(|t| data.row(t).transpose())
        .collect();

    let nh = cfg.n * cfg.h;
    let mut coords = Vec::with_capacity(cfg.n_o * cfg.h);
    let mut targets = Vec::with_capacity(cfg.n_o * cfg.h);
    for t in 0..cfg.h {
        for v in 0..cfg.n_o {
            coords.push(v + cfg.n * t);
            targets.push(data[(T_EST + t, v)]);
        }
    }
    let rows = SelectionMatrix::new(nh, coords)?;
    let targets = DVector::from_vec(targets);

    let trailing = DVector::from_fn(cfg.n_o, |v, _| {
        (T_EST - cfg.h..T_EST).map(|t| data[(t, v)]).sum::<f64>() / cfg.h as f64
    });
    let mut lower = DVector::zeros(rows.n_rows());
    let mut upper = DVector::zeros(rows.n_rows());
    for (r, &c) in rows.rows().iter().enumerate() {
        let v = c % cfg.n;
        lower[r] = trailing[v] - cfg.interval_halfwidth;
        upper[r] = trailing[v] + cfg.interval_halfwidth;
    }
    Ok(BenchCell {
        params,
        history,
        rows,
        targets,
        lower,
        upper,
    })
}

fn equality_precision_draws(
    cell: &BenchCell,
    cfg: &BenchConfig,
    n_draws: usize,
) -> Result<DMatrix<f64>> {
    if cfg.refactor_per_draw {
        let mut out = DMatrix::zeros(n_draws, cfg.n * cfg.h);
        for d in 0..n_draws {
            let f = build_forecast_system(&cell.params, &cell.history, cfg.h)?;
            let one = draw_conditional_equality(
                &f,
                &cell.rows,
                &cell.targets,
                1,
                cfg.seed.wrapping_add(1 + d as u64),
            )?;
            out.row_mut(d).copy_from(&one.draws.row(0));
        }
        Ok(out)
    } else {
        let f = build_forecast_system(&cell.params, &cell.history, cfg.h)?;
        let d = draw_conditional_equality(&f, &cell.rows, &cell.targets, n_draws, cfg.seed)?;
        Ok(d.draws)
    }
}

/// Dense counterpart: condition with `dense_oracle_equality`, factor the free
/// block densely, and sample with dense matrix-vector products.
fn equality_dense_draws(
    cell: &BenchCell,
    cfg: &BenchConfig,
    n_draws: usize,
) -> Result<DMatrix<f64>> {
    let nh = cfg.n * cfg.h;
    let free = cell.rows.complement_rows();
    let factorize = |mean: &DVector<f64>, cov: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut block = DMatrix::zeros(free.len(), free.len());
        for (i, &ci) in free.iter().enumerate() {
            for (j, &cj) in free.iter().enumerate() {
                block[(i, j)] = cov[(ci, cj)];
            }
        }
        let block = (block.clone() + block.transpose()) * 0.5;
        let _ = mean;
        block
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::NotPositiveDefinite {
                index: 0,
                value: f64::NAN,
            })
    };
    let draw_one = |mean: &DVector<f64>,
                    l: &DMatrix<f64>,
                    rng: &mut ChaCha12Rng|
     -> DVector<f64> {
        let z = DVector::from_fn(free.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let shift = l * z;
        let mut y = mean.clone();
        for (i, &c) in free.iter().enumerate() {
            y[c] += shift[i];
        }
        y
    };

    let mut out = DMatrix::zeros(n_draws, nh);
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    if cfg.refactor_per_draw {
        for d in 0..n_draws {
            let (mean, cov) = dense_oracle_equality(
                &cell.params,
                &cell.history,
                cfg.h,
                &cell.rows,
                &cell.targets,
            )?;
            let l = factorize(&mean, &cov)?;
            out.row_mut(d).copy_from(&draw_one(&mean, &l, &mut rng).transpose());
        }
    } else {
        let (mean, cov) = dense_oracle_equality(
            &cell.params,
            &cell.history,
            cfg.h,
            &cell.rows,
            &cell.targets,
        )?;
        let l = factorize(&mean, &cov)?;
        for d in 0..n_draws {
            out.row_mut(d).copy_from(&draw_one(&mean, &l, &mut rng).transpose());
        }
    }
    Ok(out)
}

fn interval_draws(
    cell: &BenchCell,
    cfg: &BenchConfig,
    n_draws: usize,
    sampler: IntervalSampler,
) -> Result<DMatrix<f64>> {
    if cfg.refactor_per_draw {
        let mut out = DMatrix::zeros(n_draws, cfg.n * cfg.h);
        for d in 0..n_draws {
            let f = build_forecast_system(&cell.params, &cell.history, cfg.h)?;
            let one = draw_conditional_inequality_with(
                &f,
                &cell.rows,
                &cell.lower,
                &cell.upper,
                1,
                cfg.seed.wrapping_add(1 + d as u64),
                sampler,
            )?;
            out.row_mut(d).copy_from(&one.draws.row(0));
        }
        Ok(out)
    } else {
        let f = build_forecast_system(&cell.params, &cell.history, cfg.h)?;
        let d = draw_conditional_inequality_with(
            &f,
            &cell.rows,
            &cell.lower,
            &cell.upper,
            n_draws,
            cfg.seed,
            sampler,
        )?;
        Ok(d.draws)
    }
}

fn count_equality_violations(
    draws: &DMatrix<f64>,
    rows: &SelectionMatrix,
    targets: &DVector<f64>,
) -> usize {
    (0..draws.nrows())
        .filter(|&i| {
            rows.rows().iter().enumerate().any(|(r, &c)| {
                (draws[(i, c)] - targets[r]).abs() > 1e-8 * (1.0 + targets[r].abs())
            })
        })
        .count()
}

fn count_interval_violations(
    draws: &DMatrix<f64>,
    rows: &SelectionMatrix,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> usize {
    (0..draws.nrows())
        .filter(|&i| {
            rows.rows()
                .iter()
                .enumerate()
                .any(|(r, &c)| draws[(i, c)] < lower[r] || draws[(i, c)] > upper[r])
        })
        .count()
}

/// Times every method of every cell on `n_draws` forecast draws. Parameter
/// generation stays outside the clock; system construction and factorization
/// are timed because they are per-forecast work. Reported seconds are the
/// median over `timing_runs` repetitions after a warm-up run.
pub fn run_benchmark(suite: &[BenchConfig], n_draws: usize) -> Result<Vec<BenchResult>> {
    if n_draws == 0 {
        return Err(Error::DimensionMismatch(
            "benchmark needs at least one draw".into(),
        ));
    }
    let mut results = Vec::new();
    for cfg in suite {
        let cell = prepare_cell(cfg)?;
        for &method in &cfg.methods {
            let run = || -> Result<DMatrix<f64>> {
                match method {
                    BenchMethod::Precision => equality_precision_draws(&cell, cfg, n_draws),
                    BenchMethod::Dense => equality_dense_draws(&cell, cfg, n_draws),
                    BenchMethod::IntervalPrecision => interval_draws(
                        &cell,
                        cfg,
                        n_draws,
                        IntervalSampler::TiltedWithGibbsFallback,
                    ),
                    BenchMethod::IntervalGibbs => {
                        interval_draws(&cell, cfg, n_draws, IntervalSampler::Gibbs { burn_in: 1_000 })
                    }
                    BenchMethod::IntervalNaive => interval_draws(
                        &cell,
                        cfg,
                        n_draws,
                        IntervalSampler::Naive {
                            max_proposals: cfg.naive_budget.saturating_mul(n_draws),
                        },
                    ),
                }
            };
            let runs = cfg.timing_runs.max(1);
            if runs > 1 {
                run()?;
            }
            let mut times = Vec::with_capacity(runs);
            let mut last = None;
            for _ in 0..runs {
                let t0 = Instant::now();
                let draws = run()?;
                times.push(t0.elapsed().as_secs_f64());
                last = Some(draws);
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
            let seconds = if runs % 2 == 1 {
                times[runs / 2]
            } else {
                0.5 * (times[runs / 2 - 1] + times[runs / 2])
            };
            let draws = last.expect("at least one timed run");
            let violations = if method.is_interval() {
                count_interval_violations(&draws, &cell.rows, &cell.lower, &cell.upper)
            } else {
                count_equality_violations(&draws, &cell.rows, &cell.targets)
            };
            results.push(BenchResult {
                method: method.label(),
                n: cfg.n,
                p: cfg.p,
                h: cfg.h,
                n_o: cfg.n_o,
                seconds,
                draws_per_sec: n_draws as f64 / seconds.max(f64::MIN_POSITIVE),
                violations,
            });
        }
    }
    Ok(results)
}

/// Delimiter-separated table with one row per timed method.
pub fn render_benchmark_table(results: &[BenchResult]) -> String {
    let mut out = String::from("method,n,p,h,n_o,seconds,draws_per_sec,violations\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{:.6},{:.1},{}\n",
            r.method, r.n, r.p, r.h, r.n_o, r.seconds, r.draws_per_sec, r.violations
        ));
    }
    out
}
