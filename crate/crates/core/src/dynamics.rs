//! The five-factor system under the physical measure.
//!
//! State layout is `(r, theta, B, P, S, chi, gamma, D)`. Drivers are the columns of the
//! loading matrix followed by an independent `W_theta`.

use crate::analytic::CirBond;
use crate::correlation::{
    cholesky_loadings, reduced_loadings, CorrelationSpec, LoadingMatrix, ROW_CHI, ROW_GAMMA, ROW_R, ROW_S,
};
use crate::error::{EsgError, Result};
use crate::schemes::{truncated_sqrt, Coefficients, DriftDiffusion, Jet, Order, SdeSystem, MAX_DIM};

pub const R: usize = 0;
pub const THETA: usize = 1;
pub const B: usize = 2;
pub const P: usize = 3;
pub const S: usize = 4;
pub const CHI: usize = 5;
pub const GAMMA: usize = 6;
pub const D: usize = 7;
pub const STATE_DIM: usize = 8;

pub const THETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortRateMode {
    /// Discount at `r`.
    Simple,
    /// Discount at `r + chi + gamma`.
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StockMode {
    FreeCorrelation,
    /// `rho_rS = 1` and `sigma_S = theta`.
    MartingaleConsistent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvenienceMode {
    /// `eta = -gamma R / (rho_rGamma theta)`.
    Regularity,
    /// `eta` is a fixed constant.
    LongstaffIndependent { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeFlags {
    pub short_rate: ShortRateMode,
    pub stock: StockMode,
    pub convenience: ConvenienceMode,
}

impl Default for ModeFlags {
    fn default() -> Self {
        Self {
            short_rate: ShortRateMode::Simple,
            stock: StockMode::FreeCorrelation,
            convenience: ConvenienceMode::Regularity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub a_r: f64,
    pub b_r: f64,
    pub sigma_r: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub sigma_theta: f64,
    pub sigma_s: f64,
    pub sigma_chi: f64,
    pub f: f64,
    pub r0: f64,
    pub theta0: f64,
    pub s0: f64,
    pub chi0: f64,
    pub gamma0: f64,
    pub bond_maturity: f64,
    pub correlation: CorrelationSpec,
}

impl ModelParams {
    /// Parameters of the worked numerical example.
    pub fn baseline() -> Self {
        Self {
            a_r: 0.02,
            b_r: 0.04,
            sigma_r: 0.01,
            a_theta: 0.05,
            b_theta: 0.01,
            sigma_theta: 0.01,
            sigma_s: 0.2,
            sigma_chi: 0.01,
            f: 0.1,
            r0: 0.02,
            theta0: 0.3,
            s0: 1.0,
            chi0: 0.05,
            gamma0: 0.01,
            bond_maturity: 1.0,
            correlation: CorrelationSpec::new(0.6, 0.7, 0.5, 0.1, 0.3, 0.1).expect("valid example spec"),
        }
    }

    /// Baseline with every correlation involving default or convenience set to zero.
    pub fn longstaff_baseline() -> Self {
        Self {
            correlation: CorrelationSpec::new(0.6, 0.0, 0.0, 0.0, 0.0, 0.0).expect("valid spec"),
            ..Self::baseline()
        }
    }

    /// `eta` frozen at the initial state with the baseline `rho_rGamma = 0.5`.
    pub fn longstaff_eta(&self) -> f64 {
        -self.gamma0 * self.r0 / (0.5 * self.theta0)
    }

    pub fn bond(&self) -> CirBond {
        CirBond { a: self.a_r, b: self.b_r, sigma: self.sigma_r }
    }

    pub fn initial_state(&self) -> StateVector {
        let p = crate::analytic::zcb_price(&self.bond(), 0.0, self.bond_maturity, self.r0);
        StateVector {
            t: 0.0,
            r: self.r0,
            theta: self.theta0,
            b: 1.0,
            p,
            s: self.s0,
            chi: self.chi0,
            gamma: self.gamma0,
            d: 1.0,
        }
    }

    pub fn validate(&self, mode: &ModeFlags) -> Result<()> {
        let nonneg = [
            ("a_r", self.a_r),
            ("sigma_r", self.sigma_r),
            ("a_theta", self.a_theta),
            ("sigma_theta", self.sigma_theta),
            ("sigma_S", self.sigma_s),
            ("sigma_chi", self.sigma_chi),
            ("r0", self.r0),
            ("theta0", self.theta0),
            ("chi0", self.chi0),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(EsgError::InvalidParameter { name, reason: format!("must be finite and >= 0, got {v}") });
            }
        }
        let positive = [("b_r", self.b_r), ("b_theta", self.b_theta), ("S0", self.s0), ("bond_maturity", self.bond_maturity)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(EsgError::InvalidParameter { name, reason: format!("must be finite and > 0, got {v}") });
            }
        }
        for (name, v) in [("f", self.f), ("gamma0", self.gamma0)] {
            if !v.is_finite() {
                return Err(EsgError::InvalidParameter { name, reason: "must be finite".into() });
            }
        }
        if mode.stock == StockMode::MartingaleConsistent && self.correlation.rho_r_s() != 1.0 {
            return Err(EsgError::InvalidParameter {
                name: "rho_rS",
                reason: "martingale-consistent stock mode needs rho_rS = 1".into(),
            });
        }
        if mode.convenience == ConvenienceMode::Regularity {
            if self.correlation.rho_r_gamma() == 0.0 && self.gamma0 != 0.0 {
                return Err(EsgError::ZeroRhoRGamma);
            }
            if self.theta0 <= THETA_FLOOR && self.gamma0 != 0.0 {
                return Err(EsgError::ThetaUnderflow { theta: self.theta0 });
            }
        }
        loadings_for(self, mode).map(|_| ())
    }
}

/// Ground-truth loadings for the selected stock mode.
pub fn loadings_for(params: &ModelParams, mode: &ModeFlags) -> Result<LoadingMatrix> {
    match mode.stock {
        StockMode::FreeCorrelation => cholesky_loadings(&params.correlation),
        StockMode::MartingaleConsistent => reduced_loadings(&params.correlation),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub t: f64,
    pub r: f64,
    pub theta: f64,
    pub b: f64,
    pub p: f64,
    pub s: f64,
    pub chi: f64,
    pub gamma: f64,
    pub d: f64,
}

impl StateVector {
    pub fn to_array(&self) -> [f64; MAX_DIM] {
        [self.r, self.theta, self.b, self.p, self.s, self.chi, self.gamma, self.d]
    }

    pub fn from_array(t: f64, x: &[f64; MAX_DIM]) -> Self {
        Self { t, r: x[R], theta: x[THETA], b: x[B], p: x[P], s: x[S], chi: x[CHI], gamma: x[GAMMA], d: x[D] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }

    /// Discount rate under the selected short-rate mode.
    pub fn short_rate(&self, mode: &ModeFlags) -> f64 {
        match mode.short_rate {
            ShortRateMode::Simple => self.r,
            ShortRateMode::Composite => self.r + self.chi + self.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityDrifts {
    pub mu_s: f64,
    pub e: f64,
    pub eta: f64,
}

fn sigma_s_of(state: &StateVector, params: &ModelParams, mode: &ModeFlags) -> f64 {
    match mode.stock {
        StockMode::FreeCorrelation => params.sigma_s,
        StockMode::MartingaleConsistent => state.theta,
    }
}

fn eta_of(state: &StateVector, params: &ModelParams, mode: &ModeFlags, rr: f64) -> Result<f64> {
    match mode.convenience {
        ConvenienceMode::LongstaffIndependent { eta } => Ok(eta),
        ConvenienceMode::Regularity => {
            if state.gamma == 0.0 {
                return Ok(0.0);
            }
            if state.theta <= THETA_FLOOR {
                return Err(EsgError::ThetaUnderflow { theta: state.theta });
            }
            let rho = params.correlation.rho_r_gamma();
            if rho == 0.0 {
                return Err(EsgError::ZeroRhoRGamma);
            }
            Ok(-state.gamma * rr / (rho * state.theta))
        }
    }
}

/// `(mu_S, e, eta)` making deflated prices martingales.
pub fn regularity_drifts(state: &StateVector, params: &ModelParams, mode: &ModeFlags) -> Result<RegularityDrifts> {
    let rr = state.short_rate(mode);
    let sigma_s = sigma_s_of(state, params, mode);
    let rho_rs = params.correlation.rho_r_s();
    let (sc, _, _) = truncated_sqrt(state.chi);
    let eta = eta_of(state, params, mode, rr)?;
    Ok(RegularityDrifts {
        mu_s: rr + state.theta * sigma_s * rho_rs,
        e: rr * state.chi + params.f * state.chi + params.sigma_chi * params.correlation.rho_r_chi() * state.theta * sc,
        eta,
    })
}

/// Drift vector and diffusion matrix at one state.
///
/// `bond_sensitivity` is `dP/dr` from the closed-form bond, which sets the bond
/// diffusion `P_r sigma_r sqrt(r)`. Rows follow the state layout.
pub fn assemble_system(
    state: &StateVector,
    params: &ModelParams,
    mode: &ModeFlags,
    loadings: &LoadingMatrix,
    bond_sensitivity: f64,
) -> Result<DriftDiffusion> {
    if !state.is_finite() {
        return Err(EsgError::NonFiniteState);
    }
    let reg = regularity_drifts(state, params, mode)?;
    let rr = state.short_rate(mode);
    let (sr, _, _) = truncated_sqrt(state.r);
    let (st, _, _) = truncated_sqrt(state.theta);
    let (sc, _, _) = truncated_sqrt(state.chi);
    let q = if state.t < params.bond_maturity { bond_sensitivity * params.sigma_r * sr } else { 0.0 };
    let vol = [
        params.sigma_r * sr,
        params.sigma_theta * st,
        0.0,
        q,
        state.s * sigma_s_of(state, params, mode),
        params.sigma_chi * sc,
        reg.eta,
        -state.d * state.theta,
    ];
    let drift = vec![
        params.a_r - params.b_r * state.r + state.theta * params.sigma_r * sr,
        params.a_theta - params.b_theta * state.theta,
        state.b * rr,
        if state.t < params.bond_maturity { state.p * rr + q * state.theta } else { 0.0 },
        state.s * reg.mu_s,
        reg.e - params.f * state.chi,
        0.0,
        -state.d * rr,
    ];
    let nd = loadings.cols() + 1;
    let mut diffusion = vec![vec![0.0; nd]; STATE_DIM];
    for (i, row) in diffusion.iter_mut().enumerate() {
        let ell = state_loading(loadings, i);
        for (k, b) in row.iter_mut().enumerate() {
            *b = vol[i] * ell[k];
        }
    }
    Ok(DriftDiffusion { drift, diffusion })
}

// Loading of state row `i` over the drivers `(L columns..., W_theta)`.
fn state_loading(l: &LoadingMatrix, i: usize) -> [f64; 5] {
    let mut out = [0.0; 5];
    let src = match i {
        R | P | D => ROW_R,
        S => ROW_S,
        CHI => ROW_CHI,
        GAMMA => ROW_GAMMA,
        THETA => {
            out[l.cols()] = 1.0;
            return out;
        }
        _ => return out,
    };
    out[..l.cols()].copy_from_slice(&l.row(src)[..l.cols()]);
    out
}

/// Residual deflator loadings; all zero under the regularity drifts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KResiduals {
    pub k_psi: f64,
    pub k_gamma: f64,
    pub k_i: f64,
    /// Largest magnitude among the summed terms, for relative comparisons.
    pub scale: f64,
}

pub fn residual_k_terms(state: &StateVector, params: &ModelParams, mode: &ModeFlags) -> Result<KResiduals> {
    let drifts = regularity_drifts(state, params, mode)?;
    residual_k_terms_with(state, params, mode, &drifts)
}

/// Residuals for arbitrary `(mu_S, e, eta)`.
pub fn residual_k_terms_with(
    state: &StateVector,
    params: &ModelParams,
    mode: &ModeFlags,
    drifts: &RegularityDrifts,
) -> Result<KResiduals> {
    let l = loadings_for(params, mode)?;
    let rr = state.short_rate(mode);
    let th = state.theta;
    let c = &params.correlation;
    let RegularityDrifts { mu_s, e, eta } = *drifts;
    let sig_chi = params.sigma_chi;
    let (sc, _, _) = truncated_sqrt(state.chi);
    let chi = state.chi;
    // (R chi - e + f chi) / (sigma_chi sqrt(chi)); at chi = 0 the regular limit is used.
    let chi_ratio = if sc > 0.0 {
        (rr * chi - e + params.f * chi) / (sig_chi * sc)
    } else {
        let e_reg = rr * chi + params.f * chi;
        if e == e_reg {
            -c.rho_r_chi() * th
        } else {
            return Err(EsgError::DegenerateResidual("chi = 0 with a non-regular e"));
        }
    };
    // R gamma / eta; at eta = 0 the regular limit is used.
    let gamma_ratio = if eta != 0.0 {
        rr * state.gamma / eta
    } else if rr * state.gamma == 0.0 {
        match mode.convenience {
            ConvenienceMode::Regularity => -c.rho_r_gamma() * th,
            ConvenienceMode::LongstaffIndependent { .. } => 0.0,
        }
    } else {
        return Err(EsgError::DegenerateResidual("eta = 0 with non-zero R gamma"));
    };
    match mode.stock {
        StockMode::FreeCorrelation => {
            let rs = c.rho_r_s();
            let sig_s = params.sigma_s;
            let root = (1.0 - rs * rs).sqrt();
            let sc1 = l.entry(ROW_CHI, 1);
            let cc1 = l.entry(ROW_CHI, 2);
            let sg2 = l.entry(ROW_GAMMA, 1);
            let cg2 = l.entry(ROW_GAMMA, 2);
            let gg2 = l.entry(ROW_GAMMA, 3);
            let mismatch = mu_s - rr - th * sig_s * rs;
            let psi_terms = [(rr + th * sig_s * rs - mu_s) / (sig_s * root)];
            let gamma_terms =
                [th * c.rho_r_chi() / cc1, chi_ratio / cc1, sc1 * mismatch / (cc1 * sig_s * root)];
            let i_terms = [
                c.rho_r_gamma() * th / gg2,
                gamma_ratio / gg2,
                -cg2 * c.rho_r_chi() * th / (gg2 * cc1),
                -cg2 * chi_ratio / (gg2 * cc1),
                (sg2 * cc1 - cg2 * sc1) * mismatch / (gg2 * cc1 * sig_s * root),
            ];
            Ok(collect(&psi_terms, &gamma_terms, &i_terms))
        }
        StockMode::MartingaleConsistent => {
            let sig_s = th;
            let cc1 = l.entry(ROW_CHI, 1);
            let cg1 = l.entry(ROW_GAMMA, 1);
            let gg1 = l.entry(ROW_GAMMA, 2);
            let psi_terms = [(rr + th * sig_s - mu_s) / sig_s];
            let gamma_terms = [th * c.rho_r_chi() / cc1, chi_ratio / cc1];
            let k_gamma: f64 = gamma_terms.iter().sum();
            let i_terms = [c.rho_r_gamma() * th / gg1, gamma_ratio / gg1, -cg1 * k_gamma / gg1];
            Ok(collect(&psi_terms, &gamma_terms, &i_terms))
        }
    }
}

fn collect(psi: &[f64], gamma: &[f64], i: &[f64]) -> KResiduals {
    let scale = psi.iter().chain(gamma).chain(i).fold(0.0f64, |m, v| m.max(v.abs()));
    KResiduals { k_psi: psi.iter().sum(), k_gamma: gamma.iter().sum(), k_i: i.iter().sum(), scale }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerCondition {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// True when the inequality depends on the state and was evaluated at `t = 0`.
    pub state_dependent: bool,
}

impl FellerCondition {
    fn new(lhs: f64, rhs: f64, state_dependent: bool) -> Self {
        Self { lhs, rhs, holds: lhs > rhs, state_dependent }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FellerReport {
    pub r: FellerCondition,
    pub theta: FellerCondition,
    pub chi: FellerCondition,
}

pub fn feller_check(params: &ModelParams, mode: &ModeFlags) -> FellerReport {
    let s0 = params.initial_state();
    let rr = s0.short_rate(mode);
    let chi_lhs = rr * params.chi0
        + params.f * params.chi0
        + params.sigma_chi * params.correlation.rho_r_chi() * params.theta0 * params.chi0.max(0.0).sqrt();
    FellerReport {
        r: FellerCondition::new(2.0 * params.a_r, params.sigma_r * params.sigma_r, false),
        theta: FellerCondition::new(2.0 * params.a_theta, params.sigma_theta * params.sigma_theta, false),
        chi: FellerCondition::new(chi_lhs, 0.5 * params.sigma_chi * params.sigma_chi, true),
    }
}

/// The full eight-row system with analytic partials for the higher-order schemes.
#[derive(Debug, Clone)]
pub struct FiveFactorSystem {
    params: ModelParams,
    mode: ModeFlags,
    loadings: LoadingMatrix,
    ell: [[f64; 5]; STATE_DIM],
    bond: CirBond,
}

impl FiveFactorSystem {
    pub fn new(params: ModelParams, mode: ModeFlags) -> Result<Self> {
        params.validate(&mode)?;
        let loadings = loadings_for(&params, &mode)?;
        let mut ell = [[0.0; 5]; STATE_DIM];
        for (i, row) in ell.iter_mut().enumerate() {
            *row = state_loading(&loadings, i);
        }
        Ok(Self { params, mode, loadings, ell, bond: params.bond() })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn mode(&self) -> &ModeFlags {
        &self.mode
    }
    pub fn loadings(&self) -> &LoadingMatrix {
        &self.loadings
    }
}

impl SdeSystem for FiveFactorSystem {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    fn drivers(&self) -> usize {
        self.loadings.cols() + 1
    }

    fn loading(&self, i: usize, k: usize) -> f64 {
        self.ell[i][k]
    }

    fn evaluate(&self, t: f64, x: &[f64; MAX_DIM], order: Order, out: &mut Coefficients) -> Result<()> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(EsgError::NonFiniteState);
        }
        let pm = &self.params;
        let [r, th, b, p, s, chi, g, d] = *x;
        let first = order >= Order::First;
        let second = order == Order::Second;
        let (sr, sr1, sr2) = truncated_sqrt(r);
        let (st, st1, st2) = truncated_sqrt(th);
        let (sc, sc1, sc2) = truncated_sqrt(chi);
        out.truncations += u32::from(r < 0.0) + u32::from(th < 0.0) + u32::from(chi < 0.0);
        out.absorptions += u32::from(chi == 0.0 && pm.sigma_chi > 0.0);
        let composite = self.mode.short_rate == ShortRateMode::Composite;
        let rr = if composite { r + chi + g } else { r };
        let rk: &[usize] = if composite { &[R, CHI, GAMMA] } else { &[R] };

        // Product `x_j * R` with R linear in the indices `rk`.
        let times_rate = |j: &mut Jet, idx: usize, val: f64, sign: f64| {
            j.value += sign * val * rr;
            if first {
                j.grad[idx] += sign * rr;
                for &k in rk {
                    j.grad[k] += sign * val;
                }
            }
            if second {
                for &k in rk {
                    j.add_sym(idx, k, sign);
                }
            }
        };

        // r
        {
            let j = &mut out.drift[R];
            j.value = pm.a_r - pm.b_r * r + pm.sigma_r * th * sr;
            if first {
                j.grad[R] = -pm.b_r + pm.sigma_r * th * sr1;
                j.grad[THETA] = pm.sigma_r * sr;
            }
            if second {
                j.hess[R][R] = pm.sigma_r * th * sr2;
                j.add_sym(R, THETA, pm.sigma_r * sr1);
            }
            let v = &mut out.vol[R];
            v.value = pm.sigma_r * sr;
            if first {
                v.grad[R] = pm.sigma_r * sr1;
            }
            if second {
                v.hess[R][R] = pm.sigma_r * sr2;
            }
        }
        // theta
        {
            let j = &mut out.drift[THETA];
            j.value = pm.a_theta - pm.b_theta * th;
            if first {
                j.grad[THETA] = -pm.b_theta;
            }
            let v = &mut out.vol[THETA];
            v.value = pm.sigma_theta * st;
            if first {
                v.grad[THETA] = pm.sigma_theta * st1;
            }
            if second {
                v.hess[THETA][THETA] = pm.sigma_theta * st2;
            }
        }
        // B
        times_rate(&mut out.drift[B], B, b, 1.0);
        // P, frozen after the bond matures.
        if t < pm.bond_maturity {
            let bj = self.bond.jet(t, pm.bond_maturity, r);
            let (c, u) = (bj.c, bj.price);
            let q = -pm.sigma_r * c * u * sr;
            let q_r = -pm.sigma_r * c * u * (-c * sr + sr1);
            let q_rr = -pm.sigma_r * c * u * (c * c * sr - 2.0 * c * sr1 + sr2);
            let q_t = -pm.sigma_r * sr * u * (c * (r * bj.c_tau + bj.a_tau) - bj.c_tau);
            let j = &mut out.drift[P];
            times_rate(j, P, p, 1.0);
            j.value += th * q;
            j.dt = th * q_t;
            if first {
                j.grad[R] += th * q_r;
                j.grad[THETA] += q;
            }
            if second {
                j.hess[R][R] += th * q_rr;
                j.add_sym(R, THETA, q_r);
            }
            let v = &mut out.vol[P];
            v.value = q;
            v.dt = q_t;
            if first {
                v.grad[R] = q_r;
            }
            if second {
                v.hess[R][R] = q_rr;
            }
        }
        // S
        {
            let j = &mut out.drift[S];
            times_rate(j, S, s, 1.0);
            let v = &mut out.vol[S];
            match self.mode.stock {
                StockMode::FreeCorrelation => {
                    let k = pm.sigma_s * pm.correlation.rho_r_s();
                    j.value += s * th * k;
                    if first {
                        j.grad[S] += th * k;
                        j.grad[THETA] += s * k;
                    }
                    if second {
                        j.add_sym(S, THETA, k);
                    }
                    v.value = s * pm.sigma_s;
                    if first {
                        v.grad[S] = pm.sigma_s;
                    }
                }
                StockMode::MartingaleConsistent => {
                    j.value += s * th * th;
                    if first {
                        j.grad[S] += th * th;
                        j.grad[THETA] += 2.0 * s * th;
                    }
                    if second {
                        j.add_sym(S, THETA, 2.0 * th);
                        j.add_diag(THETA, 2.0 * s);
                    }
                    v.value = s * th;
                    if first {
                        v.grad[S] = th;
                        v.grad[THETA] = s;
                    }
                    if second {
                        v.add_sym(S, THETA, 1.0);
                    }
                }
            }
        }
        // chi
        {
            let k = pm.sigma_chi * pm.correlation.rho_r_chi();
            let j = &mut out.drift[CHI];
            times_rate(j, CHI, chi, 1.0);
            j.value += k * th * sc;
            if first {
                j.grad[CHI] += k * th * sc1;
                j.grad[THETA] += k * sc;
            }
            if second {
                j.hess[CHI][CHI] += k * th * sc2;
                j.add_sym(CHI, THETA, k * sc1);
            }
            let v = &mut out.vol[CHI];
            v.value = pm.sigma_chi * sc;
            if first {
                v.grad[CHI] = pm.sigma_chi * sc1;
            }
            if second {
                v.hess[CHI][CHI] = pm.sigma_chi * sc2;
            }
        }
        // gamma: zero drift, volatility eta.
        match self.mode.convenience {
            ConvenienceMode::LongstaffIndependent { eta } => out.vol[GAMMA].value = eta,
            ConvenienceMode::Regularity => {
                let rho = pm.correlation.rho_r_gamma();
                if th <= THETA_FLOOR {
                    // gamma = 0 is absorbing with eta = 0; its partials never enter a step there.
                    if g != 0.0 {
                        return Err(EsgError::ThetaUnderflow { theta: th });
                    }
                } else if rho == 0.0 {
                    if g != 0.0 {
                        return Err(EsgError::ZeroRhoRGamma);
                    }
                } else {
                    // eta = c N / theta with N = gamma R.
                    let cst = -1.0 / rho;
                    let mut n = Jet::default();
                    times_rate(&mut n, GAMMA, g, 1.0);
                    let v = &mut out.vol[GAMMA];
                    v.value = cst * n.value / th;
                    if first {
                        for i in 0..STATE_DIM {
                            v.grad[i] = cst * n.grad[i] / th;
                        }
                        v.grad[THETA] = -cst * n.value / (th * th);
                    }
                    if second {
                        for i in 0..STATE_DIM {
                            for jx in 0..STATE_DIM {
                                v.hess[i][jx] = cst * n.hess[i][jx] / th;
                            }
                        }
                        for i in 0..STATE_DIM {
                            if i != THETA {
                                let m = -cst * n.grad[i] / (th * th);
                                v.hess[i][THETA] = m;
                                v.hess[THETA][i] = m;
                            }
                        }
                        v.hess[THETA][THETA] = 2.0 * cst * n.value / (th * th * th);
                    }
                }
            }
        }
        // D
        {
            times_rate(&mut out.drift[D], D, d, -1.0);
            let v = &mut out.vol[D];
            v.value = -d * th;
            if first {
                v.grad[D] = -th;
                v.grad[THETA] = -d;
            }
            if second {
                v.add_sym(D, THETA, -1.0);
            }
        }
        Ok(())
    }
}

/// Short rate and market price of risk only, for long-horizon diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateThetaSystem {
    pub params: ModelParams,
}

impl SdeSystem for RateThetaSystem {
    fn dim(&self) -> usize {
        2
    }
    fn drivers(&self) -> usize {
        2
    }
    fn loading(&self, i: usize, k: usize) -> f64 {
        f64::from(u8::from(i == k))
    }
    fn evaluate(&self, _t: f64, x: &[f64; MAX_DIM], order: Order, out: &mut Coefficients) -> Result<()> {
        let pm = &self.params;
        let (r, th) = (x[0], x[1]);
        let (sr, sr1, sr2) = truncated_sqrt(r);
        let (st, st1, st2) = truncated_sqrt(th);
        out.truncations += u32::from(r < 0.0) + u32::from(th < 0.0);
        let (a, v) = (&mut out.drift[0], &mut out.vol[0]);
        a.value = pm.a_r - pm.b_r * r + pm.sigma_r * th * sr;
        v.value = pm.sigma_r * sr;
        if order >= Order::First {
            a.grad[0] = -pm.b_r + pm.sigma_r * th * sr1;
            a.grad[1] = pm.sigma_r * sr;
            v.grad[0] = pm.sigma_r * sr1;
        }
        if order == Order::Second {
            a.hess[0][0] = pm.sigma_r * th * sr2;
            a.add_sym(0, 1, pm.sigma_r * sr1);
            v.hess[0][0] = pm.sigma_r * sr2;
        }
        let (a, v) = (&mut out.drift[1], &mut out.vol[1]);
        a.value = pm.a_theta - pm.b_theta * th;
        v.value = pm.sigma_theta * st;
        if order >= Order::First {
            a.grad[1] = -pm.b_theta;
            v.grad[1] = pm.sigma_theta * st1;
        }
        if order == Order::Second {
            v.hess[1][1] = pm.sigma_theta * st2;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
