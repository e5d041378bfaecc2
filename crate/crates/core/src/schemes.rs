//! One-step discretizations: Euler, Milstein and the simplified second Milstein scheme.
//!
//! A system exposes its drift `a_i` and diffusion `b_ik = v_i(t, x) * l_ik`, where `l_ik`
//! is a constant loading and `v_i` a scalar volatility. Every coefficient comes as a
//! [`Jet`] carrying hand-derived partials, which the operators `L^0` and `L^k` consume.

use crate::error::{EsgError, Result};
use crate::rng::PathStream;

pub const MAX_DIM: usize = 8;
pub const MAX_DRIVERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Euler,
    Milstein,
    Milstein2,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Euler, SchemeKind::Milstein, SchemeKind::Milstein2];

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Euler => "euler",
            SchemeKind::Milstein => "milstein",
            SchemeKind::Milstein2 => "milstein2",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn order(&self) -> Order {
        match self {
            SchemeKind::Euler => Order::Value,
            SchemeKind::Milstein => Order::First,
            SchemeKind::Milstein2 => Order::Second,
        }
    }
}

/// Uniform grid on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(EsgError::InvalidParameter {
                name: "grid",
                reason: format!("need steps >= 1 and horizon > 0, got {steps} and {horizon}"),
            });
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with the step closest to `dt`.
    pub fn with_dt(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(EsgError::InvalidParameter { name: "dt", reason: "must be positive".into() });
        }
        Self::new(horizon, (horizon / dt).round().max(1.0) as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }
}

/// How many partials a coefficient evaluation must supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    First,
    Second,
}

/// A coefficient with its time derivative, gradient and Hessian in the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dt: f64,
    pub grad: [f64; MAX_DIM],
    pub hess: [[f64; MAX_DIM]; MAX_DIM],
}

impl Default for Jet {
    fn default() -> Self {
        Self { value: 0.0, dt: 0.0, grad: [0.0; MAX_DIM], hess: [[0.0; MAX_DIM]; MAX_DIM] }
    }
}

impl Jet {
    /// Adds `v` at `(i, j)` and `(j, i)`; the diagonal therefore receives `2 v`.
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.hess[i][j] += v;
        self.hess[j][i] += v;
    }

    #[inline]
    pub fn add_diag(&mut self, i: usize, v: f64) {
        self.hess[i][i] += v;
    }
}

/// Coefficients of all rows at one `(t, x)`.
#[derive(Debug, Clone)]
pub struct Coefficients {
    pub drift: [Jet; MAX_DIM],
    pub vol: [Jet; MAX_DIM],
    /// Square-root arguments found negative and truncated to zero.
    pub truncations: u32,
    /// Square-root arguments found exactly at zero.
    pub absorptions: u32,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self { drift: [Jet::default(); MAX_DIM], vol: [Jet::default(); MAX_DIM], truncations: 0, absorptions: 0 }
    }
}

impl Coefficients {
    pub fn reset(&mut self, dim: usize) {
        for j in self.drift[..dim].iter_mut().chain(self.vol[..dim].iter_mut()) {
            *j = Jet::default();
        }
        self.truncations = 0;
        self.absorptions = 0;
    }
}

/// A diffusion with factorized coefficients and hand-coded partials.
pub trait SdeSystem: Sync {
    fn dim(&self) -> usize;
    fn drivers(&self) -> usize;
    /// Constant loading `l_ik` of row `i` on driver `k`.
    fn loading(&self, i: usize, k: usize) -> f64;
    /// Fills drift and volatility jets up to the requested order. `out` arrives zeroed.
    fn evaluate(&self, t: f64, x: &[f64; MAX_DIM], order: Order, out: &mut Coefficients) -> Result<()>;
}

/// `sqrt(max(x, 0))` with its first two derivatives, zeroed at or below the origin.
#[inline]
pub fn truncated_sqrt(x: f64) -> (f64, f64, f64) {
    if x > 0.0 {
        let s = x.sqrt();
        (s, 0.5 / s, -0.25 / (x * s))
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Normal increments and auxiliary two-point variables for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementBundle {
    pub drivers: usize,
    pub dw: [f64; MAX_DRIVERS],
    pub v: [[f64; MAX_DRIVERS]; MAX_DRIVERS],
}

impl IncrementBundle {
    pub fn new(dw: &[f64], dt: f64) -> Self {
        let mut b = Self { drivers: dw.len(), dw: [0.0; MAX_DRIVERS], v: [[0.0; MAX_DRIVERS]; MAX_DRIVERS] };
        b.dw[..dw.len()].copy_from_slice(dw);
        for j in 0..dw.len() {
            b.v[j][j] = dt;
        }
        b
    }
}

/// `V_jj = dt`, `V_jk = +-dt` with equal probability for `j < k`, `V_kj = -V_jk`.
pub fn sample_v(driver_count: usize, dt: f64, rng: &mut PathStream) -> [[f64; MAX_DRIVERS]; MAX_DRIVERS] {
    let mut v = [[0.0; MAX_DRIVERS]; MAX_DRIVERS];
    let bits = rng.bits();
    let mut n = 0;
    for j in 0..driver_count {
        v[j][j] = dt;
        for k in j + 1..driver_count {
            let s = if (bits >> n) & 1 == 1 { dt } else { -dt };
            v[j][k] = s;
            v[k][j] = -s;
            n += 1;
        }
    }
    v
}

/// Explicit drift and diffusion matrix at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftDiffusion {
    pub drift: Vec<f64>,
    /// Rows are state components, columns independent drivers.
    pub diffusion: Vec<Vec<f64>>,
}

/// `x + a dt + b dW`.
pub fn euler_step(x: &[f64], dd: &DriftDiffusion, inc: &IncrementBundle, dt: f64) -> Result<Vec<f64>> {
    if dd.drift.len() != x.len() {
        return Err(EsgError::DimensionMismatch { expected: x.len(), got: dd.drift.len() });
    }
    let out: Vec<f64> = x
        .iter()
        .zip(&dd.drift)
        .zip(&dd.diffusion)
        .map(|((xi, ai), bi)| xi + ai * dt + bi.iter().zip(&inc.dw).map(|(b, w)| b * w).sum::<f64>())
        .collect();
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(EsgError::NonFiniteState)
    }
}

/// Reusable per-worker state for stepping one system.
#[derive(Debug, Clone)]
pub struct Stepper {
    dim: usize,
    drivers: usize,
    ell: [[f64; MAX_DRIVERS]; MAX_DIM],
    rho: [[f64; MAX_DIM]; MAX_DIM],
    coeffs: Coefficients,
}

impl Stepper {
    pub fn new<S: SdeSystem + ?Sized>(sys: &S) -> Self {
        let (dim, drivers) = (sys.dim(), sys.drivers());
        assert!(dim <= MAX_DIM && drivers <= MAX_DRIVERS);
        let mut ell = [[0.0; MAX_DRIVERS]; MAX_DIM];
        for (i, row) in ell.iter_mut().enumerate().take(dim) {
            for (k, e) in row.iter_mut().enumerate().take(drivers) {
                *e = sys.loading(i, k);
            }
        }
        let mut rho = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in 0..dim {
                rho[i][j] = (0..drivers).map(|k| ell[i][k] * ell[j][k]).sum();
            }
        }
        Self { dim, drivers, ell, rho, coeffs: Coefficients::default() }
    }

    /// Coefficients from the most recent step.
    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    pub fn evaluate<S: SdeSystem + ?Sized>(
        &mut self,
        sys: &S,
        t: f64,
        x: &[f64; MAX_DIM],
        order: Order,
    ) -> Result<&Coefficients> {
        self.coeffs.reset(self.dim);
        sys.evaluate(t, x, order, &mut self.coeffs)?;
        Ok(&self.coeffs)
    }

    /// Instantaneous covariance `Sigma = b b^T` of the current coefficients.
    pub fn sigma(&self) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.dim {
            for j in 0..self.dim {
                s[i][j] = self.coeffs.vol[i].value * self.coeffs.vol[j].value * self.rho[i][j];
            }
        }
        s
    }

    /// `L^0 f = df/dt + sum a_i df/dx_i + 1/2 sum Sigma_ij d2f/dx_i dx_j`.
    pub fn l0(&self, f: &Jet) -> f64 {
        let c = &self.coeffs;
        let mut acc = f.dt;
        for i in 0..self.dim {
            acc += c.drift[i].value * f.grad[i];
        }
        let mut quad = 0.0;
        for i in 0..self.dim {
            let vi = c.vol[i].value;
            if vi == 0.0 {
                continue;
            }
            for j in 0..self.dim {
                let h = f.hess[i][j];
                if h != 0.0 {
                    quad += vi * c.vol[j].value * self.rho[i][j] * h;
                }
            }
        }
        acc + 0.5 * quad
    }

    /// `L^k f = sum_i b_ik df/dx_i`.
    pub fn lk(&self, k: usize, f: &Jet) -> f64 {
        (0..self.dim).map(|i| self.coeffs.vol[i].value * self.ell[i][k] * f.grad[i]).sum()
    }

    /// Advances `x` in place by one step of `scheme`.
    pub fn step<S: SdeSystem + ?Sized>(
        &mut self,
        sys: &S,
        scheme: SchemeKind,
        t: f64,
        x: &mut [f64; MAX_DIM],
        inc: &IncrementBundle,
        dt: f64,
    ) -> Result<()> {
        self.evaluate(sys, t, x, scheme.order())?;
        let mut dx = [0.0; MAX_DIM];
        let nd = self.drivers;
        let dw = &inc.dw;
        for (i, d) in dx.iter_mut().enumerate().take(self.dim) {
            let a = &self.coeffs.drift[i];
            let v = &self.coeffs.vol[i];
            let ell = &self.ell[i];
            let noise: f64 = (0..nd).map(|k| ell[k] * dw[k]).sum();
            *d = a.value * dt + v.value * noise;
            match scheme {
                SchemeKind::Euler => {}
                SchemeKind::Milstein => {
                    let corr: f64 = (0..nd).map(|k| ell[k] * ell[k] * (dw[k] * dw[k] - dt)).sum();
                    *d += 0.5 * v.value * v.grad[i] * corr;
                }
                SchemeKind::Milstein2 => {
                    *d += 0.5 * self.l0(a) * dt * dt;
                    let l0v = self.l0(v);
                    let mut lj_v = [0.0; MAX_DRIVERS];
                    for (j, l) in lj_v.iter_mut().enumerate().take(nd) {
                        *l = self.lk(j, v);
                    }
                    let mut mixed = 0.0;
                    let mut iterated = 0.0;
                    for k in 0..nd {
                        mixed += (self.lk(k, a) + ell[k] * l0v) * dw[k];
                        if ell[k] != 0.0 {
                            let s: f64 = (0..nd).map(|j| lj_v[j] * (dw[j] * dw[k] - inc.v[j][k])).sum();
                            iterated += ell[k] * s;
                        }
                    }
                    *d += 0.5 * mixed * dt + 0.5 * iterated;
                }
            }
        }
        for (xi, d) in x.iter_mut().zip(dx.iter()).take(self.dim) {
            *xi += d;
        }
        if x[..self.dim].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(EsgError::NonFiniteState)
        }
    }
}

/// Short rate and discount factor under the pricing measure, one driver.
///
/// State `(r, D)` with `dr = (a - b r) dt + sigma sqrt(r) dW` and `dD = -r D dt`, so
/// `E[D_T]` is the CIR zero-coupon price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirDiscountSystem {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl SdeSystem for CirDiscountSystem {
    fn dim(&self) -> usize {
        2
    }
    fn drivers(&self) -> usize {
        1
    }
    fn loading(&self, i: usize, _k: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            0.0
        }
    }
    fn evaluate(&self, _t: f64, x: &[f64; MAX_DIM], order: Order, out: &mut Coefficients) -> Result<()> {
        let (r, d) = (x[0], x[1]);
        let (sr, sr1, sr2) = truncated_sqrt(r);
        out.truncations += u32::from(r < 0.0);
        out.drift[0].value = self.a - self.b * r;
        out.vol[0].value = self.sigma * sr;
        out.drift[1].value = -r * d;
        if order >= Order::First {
            out.drift[0].grad[0] = -self.b;
            out.vol[0].grad[0] = self.sigma * sr1;
            out.drift[1].grad[0] = -d;
            out.drift[1].grad[1] = -r;
        }
        if order == Order::Second {
            out.vol[0].hess[0][0] = self.sigma * sr2;
            out.drift[1].add_sym(0, 1, -1.0);
        }
        Ok(())
    }
}

/// Bias of each scheme against a fine-grid reference on shared Brownian paths.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakOrderStudy {
    pub dts: Vec<f64>,
    pub reference_dt: f64,
    pub reference_mean: f64,
    pub reference_se: f64,
    /// `(scheme, bias per dt, standard error per dt, log-log slope)`.
    pub rows: Vec<(SchemeKind, Vec<f64>, Vec<f64>, f64)>,
}

/// Weak-order study on `E[D_T]` of [`CirDiscountSystem`].
///
/// Coarse increments are sums of the fine ones, so the Monte Carlo noise of the
/// bias estimates is the noise of pathwise differences only. `refine` is the number
/// of fine steps per coarsest step and must be divisible by every coarsening ratio.
pub fn weak_order_study(
    sys: &CirDiscountSystem,
    r0: f64,
    horizon: f64,
    dts: &[f64],
    refine: usize,
    n_paths: usize,
    seed: u64,
) -> Result<WeakOrderStudy> {
    use rayon::prelude::*;
    let coarsest = dts.iter().cloned().fold(f64::MIN, f64::max);
    let fine_dt = coarsest / refine as f64;
    let n_fine = (horizon / fine_dt).round() as usize;
    let ratios: Vec<usize> = dts.iter().map(|dt| (dt / fine_dt).round() as usize).collect();
    if ratios.iter().any(|&m| m == 0 || !n_fine.is_multiple_of(m)) {
        return Err(EsgError::InvalidParameter { name: "dts", reason: "not commensurate with the fine grid".into() });
    }
    let n_schemes = SchemeKind::ALL.len();
    let per_path: Vec<Result<(f64, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathStream::new(seed, p as u64);
            let sq = fine_dt.sqrt();
            let fine: Vec<f64> = (0..n_fine).map(|_| rng.normal() * sq).collect();
            let mut stepper = Stepper::new(sys);
            let run = |stepper: &mut Stepper, scheme: SchemeKind, m: usize| -> Result<f64> {
                let dt = fine_dt * m as f64;
                let mut x = [0.0; MAX_DIM];
                x[0] = r0;
                x[1] = 1.0;
                for (n, chunk) in fine.chunks(m).enumerate() {
                    let inc = IncrementBundle::new(&[chunk.iter().sum::<f64>()], dt);
                    stepper.step(sys, scheme, n as f64 * dt, &mut x, &inc, dt)?;
                }
                Ok(x[1])
            };
            let reference = run(&mut stepper, SchemeKind::Milstein2, 1)?;
            let mut diffs = Vec::with_capacity(n_schemes * ratios.len());
            for scheme in SchemeKind::ALL {
                for &m in &ratios {
                    diffs.push(run(&mut stepper, scheme, m)? - reference);
                }
            }
            Ok((reference, diffs))
        })
        .collect();
    let mut refs = Vec::with_capacity(n_paths);
    let mut diffs = Vec::with_capacity(n_paths);
    for r in per_path {
        let (a, b) = r?;
        refs.push(a);
        diffs.push(b);
    }
    let (reference_mean, reference_var) = crate::stats::mean_var(&refs);
    let mut rows = Vec::new();
    for (s, scheme) in SchemeKind::ALL.into_iter().enumerate() {
        let mut bias = Vec::new();
        let mut se = Vec::new();
        for d in 0..ratios.len() {
            let col: Vec<f64> = diffs.iter().map(|v| v[s * ratios.len() + d]).collect();
            let (m, var) = crate::stats::mean_var(&col);
            bias.push(m);
            se.push((var / n_paths as f64).sqrt());
        }
        let slope = crate::stats::loglog_slope(dts, &bias);
        rows.push((scheme, bias, se, slope));
    }
    Ok(WeakOrderStudy {
        dts: dts.to_vec(),
        reference_dt: fine_dt,
        reference_mean,
        reference_se: (reference_var / n_paths as f64).sqrt(),
        rows,
    })
}
