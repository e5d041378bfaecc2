//! Path-parallel Monte Carlo over the five-factor system.
//!
//! Every path is a pure function of `(seed, path index, config)`. Workers own
//! disjoint indices and results are reduced in index order, so estimates are
//! bit-identical for any worker count.

use rayon::prelude::*;

use crate::analytic::{longstaff_cb, zcb_price, LongstaffInputs};
use crate::dynamics::{
    regularity_drifts, ConvenienceMode, FiveFactorSystem, ModeFlags, ModelParams, RateThetaSystem, ShortRateMode,
    StateVector, CHI, D, P, S,
};
use crate::error::{EsgError, Result};
use crate::rng::PathStream;
use crate::schemes::{sample_v, IncrementBundle, SchemeKind, SdeSystem, Stepper, TimeGrid, MAX_DIM, MAX_DRIVERS};
use crate::stats::{lognormal_ci, mean_var, IntervalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StorePaths {
    TerminalOnly,
    FullPath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub scheme: SchemeKind,
    pub antithetic: bool,
    pub seed: u64,
    pub mode: ModeFlags,
    pub store_paths: StorePaths,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    /// Largest tolerated fraction of failed paths.
    pub max_failure_rate: f64,
}

impl SimulationConfig {
    pub fn new(grid: TimeGrid, n_paths: usize, scheme: SchemeKind, seed: u64) -> Self {
        Self {
            grid,
            n_paths,
            scheme,
            antithetic: false,
            seed,
            mode: ModeFlags::default(),
            store_paths: StorePaths::TerminalOnly,
            workers: None,
            max_failure_rate: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(EsgError::InvalidConfig(format!("n_paths must be at least 2, got {}", self.n_paths)));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            return Err(EsgError::InvalidConfig(format!("antithetic sampling needs an even n_paths, got {}", self.n_paths)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(EsgError::InvalidConfig("max_failure_rate must lie in [0, 1]".into()));
        }
        if self.workers == Some(0) {
            return Err(EsgError::InvalidConfig("workers must be positive".into()));
        }
        Ok(())
    }

    fn gaussian_stream(&self, path: usize) -> (u64, f64) {
        if self.antithetic {
            ((path / 2) as u64, if path % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (path as u64, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PathDiagnostics {
    /// Negative square-root arguments truncated to zero.
    pub truncations: u32,
    pub absorptions: u32,
    pub negative_d: bool,
    pub negative_chi: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFunctionals {
    pub index: usize,
    pub terminal: StateVector,
    pub d_t: f64,
    pub p_t: f64,
    pub s_t: f64,
    /// Trapezoid sums of `D` and `chi D` over the grid.
    pub int_d: f64,
    pub int_chi_d: f64,
    pub diagnostics: PathDiagnostics,
    /// States at every grid time when full paths are stored.
    pub path: Option<Vec<[f64; MAX_DIM]>>,
}

impl PathFunctionals {
    /// `D_T + c int D dt + (1 - omega) int chi D dt`.
    pub fn coupon_bond(&self, c: f64, omega: f64) -> f64 {
        self.d_t + c * self.int_d + (1.0 - omega) * self.int_chi_d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFailure {
    pub index: usize,
    pub step: usize,
    pub error: EsgError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    /// Surviving paths in index order.
    pub paths: Vec<PathFunctionals>,
    pub failures: Vec<PathFailure>,
    pub n_requested: usize,
    pub antithetic: bool,
}

impl SimulationOutput {
    pub fn n_effective(&self) -> usize {
        self.paths.len()
    }

    pub fn failure_rate(&self) -> f64 {
        self.failures.len() as f64 / self.n_requested as f64
    }

    pub fn theta_floor_hits(&self) -> usize {
        self.failures.iter().filter(|f| matches!(f.error, EsgError::ThetaUnderflow { .. })).count()
    }

    pub fn truncations(&self) -> u64 {
        self.paths.iter().map(|p| u64::from(p.diagnostics.truncations)).sum()
    }

    pub fn negative_d_paths(&self) -> usize {
        self.paths.iter().filter(|p| p.diagnostics.negative_d).count()
    }

    pub fn negative_chi_paths(&self) -> usize {
        self.paths.iter().filter(|p| p.diagnostics.negative_chi).count()
    }

    /// Estimate of `E[f]` over the first `n` requested paths.
    pub fn estimate_prefix(&self, n: usize, f: impl Fn(&PathFunctionals) -> f64) -> Result<PricingResult> {
        let head: Vec<(usize, f64)> = self.paths.iter().take_while(|p| p.index < n).map(|p| (p.index, f(p))).collect();
        summarize(&head, self.antithetic)
    }

    pub fn estimate(&self, f: impl Fn(&PathFunctionals) -> f64) -> Result<PricingResult> {
        self.estimate_prefix(self.n_requested, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingResult {
    pub estimate: f64,
    pub standard_error: f64,
    /// 95% Student-t interval on the mean.
    pub ci_low: f64,
    pub ci_high: f64,
    pub intervals: IntervalReport,
    pub analytic_reference: Option<f64>,
    pub n_effective: usize,
}

impl PricingResult {
    pub fn with_reference(mut self, reference: f64) -> Self {
        self.analytic_reference = Some(reference);
        self
    }

    /// Distance to the reference in units of the standard error.
    pub fn z_score(&self) -> Option<f64> {
        self.analytic_reference.map(|a| (self.estimate - a) / self.standard_error)
    }
}

/// Mean, standard error and intervals of per-path values. Antithetic pairs are
/// averaged first and a pair with a failed member is dropped.
pub fn summarize(values: &[(usize, f64)], antithetic: bool) -> Result<PricingResult> {
    let samples: Vec<f64> = if antithetic {
        values
            .windows(2)
            .filter(|w| w[0].0 % 2 == 0 && w[1].0 == w[0].0 + 1)
            .map(|w| 0.5 * (w[0].1 + w[1].1))
            .collect()
    } else {
        values.iter().map(|v| v.1).collect()
    };
    if samples.len() < 2 {
        return Err(EsgError::InvalidConfig("fewer than two usable samples".into()));
    }
    let report = lognormal_ci(&samples);
    let n_effective = if antithetic { 2 * samples.len() } else { samples.len() };
    Ok(PricingResult {
        estimate: report.mean,
        standard_error: report.var_of_mean.sqrt(),
        ci_low: report.clt.0,
        ci_high: report.clt.1,
        intervals: report,
        analytic_reference: None,
        n_effective,
    })
}

fn run_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| EsgError::InvalidConfig(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

fn simulate_path(
    sys: &FiveFactorSystem,
    stepper: &mut Stepper,
    config: &SimulationConfig,
    index: usize,
) -> std::result::Result<PathFunctionals, PathFailure> {
    let (stream, sign) = config.gaussian_stream(index);
    let mut gauss = PathStream::new(config.seed, stream);
    let mut aux = PathStream::auxiliary(config.seed, index as u64);
    let nd = sys.drivers();
    let grid = config.grid;
    let dt = grid.dt();
    let sq = dt.sqrt();
    let mut x = sys.params().initial_state().to_array();
    let mut diag = PathDiagnostics::default();
    let (mut int_d, mut int_chi_d) = (0.0, 0.0);
    let mut path = (config.store_paths == StorePaths::FullPath).then(|| {
        let mut v = Vec::with_capacity(grid.steps() + 1);
        v.push(x);
        v
    });
    let mut dw = [0.0; MAX_DRIVERS];
    for n in 0..grid.steps() {
        for w in dw.iter_mut().take(nd) {
            *w = sign * sq * gauss.normal();
        }
        let mut inc = IncrementBundle::new(&dw[..nd], dt);
        if config.scheme == SchemeKind::Milstein2 {
            inc.v = sample_v(nd, dt, &mut aux);
        }
        let (d0, c0) = (x[D], x[CHI] * x[D]);
        stepper
            .step(sys, config.scheme, grid.time(n), &mut x, &inc, dt)
            .map_err(|error| PathFailure { index, step: n, error })?;
        let c = stepper.coefficients();
        diag.truncations += c.truncations;
        diag.absorptions += c.absorptions;
        diag.negative_d |= x[D] < 0.0;
        diag.negative_chi |= x[CHI] < 0.0;
        int_d += 0.5 * (d0 + x[D]) * dt;
        int_chi_d += 0.5 * (c0 + x[CHI] * x[D]) * dt;
        if let Some(p) = path.as_mut() {
            p.push(x);
        }
    }
    let terminal = StateVector::from_array(grid.horizon(), &x);
    Ok(PathFunctionals {
        index,
        terminal,
        d_t: x[D],
        p_t: x[P],
        s_t: x[S],
        int_d,
        int_chi_d,
        diagnostics: diag,
        path,
    })
}

/// Simulates `config.n_paths` paths of the full system.
///
/// Paths that fail (theta floor, non-finite state) are reported and excluded; the run
/// fails when their fraction exceeds `config.max_failure_rate`.
pub fn simulate(config: &SimulationConfig, params: &ModelParams) -> Result<SimulationOutput> {
    config.validate()?;
    let sys = FiveFactorSystem::new(*params, config.mode)?;
    let results: Vec<std::result::Result<PathFunctionals, PathFailure>> = run_pool(config.workers, || {
        (0..config.n_paths)
            .into_par_iter()
            .map_init(|| Stepper::new(&sys), |stepper, i| simulate_path(&sys, stepper, config, i))
            .collect()
    })?;
    let mut paths = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => paths.push(p),
            Err(f) => failures.push(f),
        }
    }
    let out = SimulationOutput { paths, failures, n_requested: config.n_paths, antithetic: config.antithetic };
    if out.failure_rate() > config.max_failure_rate {
        return Err(EsgError::FailureRateExceeded {
            failed: out.failures.len(),
            total: config.n_paths,
            limit: config.max_failure_rate,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZcbPricing {
    /// `E[D_T]`.
    pub deflator: PricingResult,
    /// `E[D_T P_T]`.
    pub deflated_bond: PricingResult,
    pub analytic: f64,
}

fn zcb_from(out: &SimulationOutput, params: &ModelParams, n: usize) -> Result<ZcbPricing> {
    let analytic = zcb_price(&params.bond(), 0.0, params.bond_maturity, params.r0);
    Ok(ZcbPricing {
        deflator: out.estimate_prefix(n, |p| p.d_t)?.with_reference(analytic),
        deflated_bond: out.estimate_prefix(n, |p| p.d_t * p.p_t)?.with_reference(analytic),
        analytic,
    })
}

/// Zero-coupon bond maturing at the horizon, priced by `E[D_T]` and `E[D_T P_T]`.
pub fn price_zcb_mc(config: &SimulationConfig, params: &ModelParams) -> Result<ZcbPricing> {
    let out = simulate(config, params)?;
    zcb_from(&out, params, config.n_paths)
}

/// Zero-coupon estimates over the first `n` paths of an existing run.
pub fn zcb_prefix(out: &SimulationOutput, params: &ModelParams, n: usize) -> Result<ZcbPricing> {
    zcb_from(out, params, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutPricing {
    pub put: PricingResult,
    /// `E[D_T S_T]`, which equals `S0` for a martingale deflated stock.
    pub deflated_stock: PricingResult,
    pub deflator: PricingResult,
    pub strike: f64,
}

/// European put on `S_T` with strike `K`.
pub fn price_put_mc(config: &SimulationConfig, params: &ModelParams, strike: f64) -> Result<PutPricing> {
    if !(strike >= 0.0) || !strike.is_finite() {
        return Err(EsgError::InvalidParameter { name: "K", reason: format!("strike must be finite and >= 0, got {strike}") });
    }
    let out = simulate(config, params)?;
    put_from(&out, params, strike, config.n_paths)
}

pub fn put_from(out: &SimulationOutput, params: &ModelParams, strike: f64, n: usize) -> Result<PutPricing> {
    Ok(PutPricing {
        put: out.estimate_prefix(n, |p| p.d_t * (strike - p.s_t).max(0.0))?,
        deflated_stock: out.estimate_prefix(n, |p| p.d_t * p.s_t)?.with_reference(params.s0),
        deflator: out.estimate_prefix(n, |p| p.d_t)?,
        strike,
    })
}

/// Closed-form inputs matching a coupon-bond run, with `e_chi` frozen at time zero.
pub fn longstaff_inputs(params: &ModelParams, mode: &ModeFlags, c: f64, omega: f64) -> Result<LongstaffInputs> {
    let s0 = params.initial_state();
    let eta = match mode.convenience {
        ConvenienceMode::LongstaffIndependent { eta } => eta,
        ConvenienceMode::Regularity => regularity_drifts(&s0, params, mode)?.eta,
    };
    let e_chi = params.r0 * params.chi0
        + params.f * params.chi0
        + params.sigma_chi * params.correlation.rho_r_chi() * params.theta0 * params.chi0.max(0.0).sqrt();
    Ok(LongstaffInputs {
        c,
        omega,
        e_chi,
        f_chi: params.f,
        sigma_chi: params.sigma_chi,
        chi0: params.chi0,
        gamma0: params.gamma0,
        eta,
        r0: params.r0,
        intervals: 200,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouponBondPricing {
    pub price: PricingResult,
    /// Paths on which `chi` went negative.
    pub negative_chi_paths: usize,
}

/// Defaultable coupon bond `E[D_T] + c E[int D] + (1 - omega) E[int chi D]`.
pub fn price_cb_mc(config: &SimulationConfig, params: &ModelParams, c: f64, omega: f64) -> Result<CouponBondPricing> {
    if config.mode.short_rate != ShortRateMode::Composite {
        return Err(EsgError::InvalidConfig("coupon-bond pricing needs the composite short rate".into()));
    }
    let out = simulate(config, params)?;
    cb_from(&out, config, params, c, omega, config.n_paths)
}

pub fn cb_from(
    out: &SimulationOutput,
    config: &SimulationConfig,
    params: &ModelParams,
    c: f64,
    omega: f64,
    n: usize,
) -> Result<CouponBondPricing> {
    let mut price = out.estimate_prefix(n, |p| p.coupon_bond(c, omega))?;
    let inputs = longstaff_inputs(params, &config.mode, c, omega)?;
    if let Ok(reference) = longstaff_cb(&inputs, &params.bond(), config.grid.horizon()) {
        price = price.with_reference(reference);
    }
    Ok(CouponBondPricing { price, negative_chi_paths: out.negative_chi_paths() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioWeights {
    pub stock: f64,
    pub bond: f64,
    pub coupon_bond: f64,
}

impl PortfolioWeights {
    pub fn validate(&self) -> Result<()> {
        let sum = self.stock + self.bond + self.coupon_bond;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(EsgError::InvalidConfig(format!("portfolio weights sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn value(&self, p: &PathFunctionals, c: f64, omega: f64) -> f64 {
        self.stock * p.d_t * p.s_t + self.bond * p.d_t * p.p_t + self.coupon_bond * p.coupon_bond(c, omega)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSamples {
    /// Deflated portfolio values, one per surviving path.
    pub plain: Vec<f64>,
    pub antithetic: Vec<f64>,
    pub plain_estimate: PricingResult,
    pub antithetic_estimate: PricingResult,
}

/// Deflated portfolio values under plain and antithetic sampling with equal path budgets.
pub fn portfolio_samples(
    config: &SimulationConfig,
    params: &ModelParams,
    weights: PortfolioWeights,
    c: f64,
    omega: f64,
) -> Result<PortfolioSamples> {
    weights.validate()?;
    let run = |antithetic: bool| -> Result<(Vec<f64>, PricingResult)> {
        let cfg = SimulationConfig { antithetic, ..*config };
        let out = simulate(&cfg, params)?;
        let values: Vec<f64> = out.paths.iter().map(|p| weights.value(p, c, omega)).collect();
        let est = out.estimate(|p| weights.value(p, c, omega))?;
        Ok((values, est))
    };
    let (plain, plain_estimate) = run(false)?;
    let (antithetic, antithetic_estimate) = run(true)?;
    Ok(PortfolioSamples { plain, antithetic, plain_estimate, antithetic_estimate })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentComparison {
    pub empirical_mean: f64,
    pub empirical_var: f64,
    pub mean_se: f64,
    pub limit_mean: f64,
    pub limit_var: f64,
    /// Exact moments at the horizon for a pure CIR process.
    pub finite_mean: f64,
    pub finite_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticReport {
    pub horizon: f64,
    pub theta: MomentComparison,
    /// Reference values for `r` use the CIR formulas without the risk-premium term.
    pub r: MomentComparison,
    pub n_effective: usize,
}

/// CIR mean and variance at time `t` from `x0`.
pub fn cir_moments(a: f64, b: f64, sigma: f64, x0: f64, t: f64) -> (f64, f64) {
    let e1 = (-b * t).exp();
    let e2 = (-2.0 * b * t).exp();
    let mean = e1 * x0 + a / b * (1.0 - e1);
    let var = sigma * sigma / b * x0 * (e1 - e2) + a * sigma * sigma / (2.0 * b * b) * (1.0 - 2.0 * e1 + e2);
    (mean, var)
}

/// Cross-path moments of `(r, theta)` at `horizon` against the CIR formulas.
///
/// Only the `(r, theta)` block is simulated; the grid step of `config` is kept.
pub fn asymptotic_moments(config: &SimulationConfig, params: &ModelParams, horizon: f64) -> Result<AsymptoticReport> {
    config.validate()?;
    let grid = TimeGrid::with_dt(horizon, config.grid.dt())?;
    let sys = RateThetaSystem { params: *params };
    let dt = grid.dt();
    let sq = dt.sqrt();
    let results: Vec<Option<(f64, f64)>> = run_pool(config.workers, || {
        (0..config.n_paths)
            .into_par_iter()
            .map_init(
                || Stepper::new(&sys),
                |stepper, i| {
                    let (stream, sign) = config.gaussian_stream(i);
                    let mut gauss = PathStream::new(config.seed, stream);
                    let mut aux = PathStream::auxiliary(config.seed, i as u64);
                    let mut x = [0.0; MAX_DIM];
                    x[0] = params.r0;
                    x[1] = params.theta0;
                    for n in 0..grid.steps() {
                        let dw = [sign * sq * gauss.normal(), sign * sq * gauss.normal()];
                        let mut inc = IncrementBundle::new(&dw, dt);
                        if config.scheme == SchemeKind::Milstein2 {
                            inc.v = sample_v(2, dt, &mut aux);
                        }
                        stepper.step(&sys, config.scheme, grid.time(n), &mut x, &inc, dt).ok()?;
                    }
                    Some((x[0], x[1]))
                },
            )
            .collect()
    })?;
    let finished: Vec<(f64, f64)> = results.iter().flatten().copied().collect();
    let failed = results.len() - finished.len();
    if failed as f64 > config.max_failure_rate * config.n_paths as f64 {
        return Err(EsgError::FailureRateExceeded { failed, total: config.n_paths, limit: config.max_failure_rate });
    }
    let compare = |xs: Vec<f64>, a: f64, b: f64, sigma: f64, x0: f64| {
        let (m, v) = mean_var(&xs);
        let (fm, fv) = cir_moments(a, b, sigma, x0, grid.horizon());
        MomentComparison {
            empirical_mean: m,
            empirical_var: v,
            mean_se: (v / xs.len() as f64).sqrt(),
            limit_mean: a / b,
            limit_var: a * sigma * sigma / (2.0 * b * b),
            finite_mean: fm,
            finite_var: fv,
        }
    };
    let pm = params;
    Ok(AsymptoticReport {
        horizon: grid.horizon(),
        theta: compare(finished.iter().map(|v| v.1).collect(), pm.a_theta, pm.b_theta, pm.sigma_theta, pm.theta0),
        r: compare(finished.iter().map(|v| v.0).collect(), pm.a_r, pm.b_r, pm.sigma_r, pm.r0),
        n_effective: finished.len(),
    })
}
