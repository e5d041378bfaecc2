//! Closed-form reference prices.
//!
//! CIR zero-coupon bonds and their rate sensitivities, the Kim (2002) first-order
//! option expansion, and the Longstaff, Mithal and Neis coupon-bond formula.

use statrs::function::erf::erfc;

use crate::error::{EsgError, Result};

/// Standard normal cumulative distribution.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CIR short-rate coefficients `dr = (a - b r) dt + sigma sqrt(r) dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirBond {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// Bond price and the derivatives needed by the higher-order schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondJet {
    pub price: f64,
    /// `C_p`, so that `dP/dr = -C_p P`.
    pub c: f64,
    /// `dC_p/dtau` and `dA_p/dtau` with `tau = T - t`.
    pub c_tau: f64,
    pub a_tau: f64,
}

impl CirBond {
    pub fn new(a: f64, b: f64, sigma: f64) -> Result<Self> {
        let bond = Self { a, b, sigma };
        if !(bond.gamma() > 0.0) || !(sigma >= 0.0) || (sigma == 0.0 && b <= 0.0) {
            return Err(EsgError::InvalidParameter {
                name: "sigma_r",
                reason: "bond formula needs gamma_CIR > 0, and b_r > 0 when sigma_r = 0".into(),
            });
        }
        Ok(bond)
    }

    /// `gamma_CIR = sqrt(b^2 + 2 sigma^2) / 2`.
    pub fn gamma(&self) -> f64 {
        0.5 * (self.b * self.b + 2.0 * self.sigma * self.sigma).sqrt()
    }

    /// `(C_p, A_p)` for time to maturity `tau`.
    pub fn coefficients(&self, tau: f64) -> (f64, f64) {
        if tau == 0.0 {
            return (0.0, 0.0);
        }
        if self.sigma == 0.0 {
            // Deterministic limit.
            let c = -(-self.b * tau).exp_m1() / self.b;
            return (c, self.a * (tau - c) / self.b);
        }
        let g = self.gamma();
        let (sh, ch) = ((g * tau).sinh(), (g * tau).cosh());
        let den = g * ch + 0.5 * self.b * sh;
        let c = sh / den;
        let a = -2.0 * self.a / (self.sigma * self.sigma) * (g * (0.5 * self.b * tau).exp() / den).ln();
        (c, a)
    }

    pub fn jet(&self, t: f64, maturity: f64, r: f64) -> BondJet {
        let tau = maturity - t;
        let (c, a) = self.coefficients(tau);
        let c_tau = 1.0 - self.b * c - 0.5 * self.sigma * self.sigma * c * c;
        BondJet { price: (-r * c - a).exp(), c, c_tau, a_tau: self.a * c }
    }
}

pub fn zcb_price(bond: &CirBond, t: f64, maturity: f64, r: f64) -> f64 {
    let (c, a) = bond.coefficients(maturity - t);
    (-r * c - a).exp()
}

/// `dP/dr = -C_p P`.
pub fn zcb_dr(bond: &CirBond, t: f64, maturity: f64, r: f64) -> f64 {
    let (c, a) = bond.coefficients(maturity - t);
    -c * (-r * c - a).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KimInputs {
    pub s0: f64,
    pub strike: f64,
    pub maturity: f64,
    pub sigma_s: f64,
    pub rho_r_s: f64,
    pub r0: f64,
    pub bond: CirBond,
}

impl KimInputs {
    /// `(delta, kappa, theta)` of the rate dynamics under the pricing measure.
    pub fn kim_coefficients(&self) -> (f64, f64, f64) {
        let kappa = self.bond.b - self.bond.sigma;
        (self.bond.sigma, kappa, self.bond.a / kappa)
    }
}

pub fn kim_call(inputs: &KimInputs) -> Result<f64> {
    let KimInputs { s0, strike: k, maturity: t, sigma_s: sig, rho_r_s: rho, r0, .. } = *inputs;
    let (delta, kappa, theta) = inputs.kim_coefficients();
    if kappa == 0.0 || !kappa.is_finite() {
        return Err(EsgError::FormulaInapplicable("kappa_Kim = b_r - sigma_r vanishes".into()));
    }
    let ekt = (-kappa * t).exp();
    let int_r = (r0 - theta) / kappa * (1.0 - ekt) + theta * t;
    let disc = (-int_r).exp();
    let sq = sig * t.sqrt();
    let d1 = ((s0 / k).ln() + int_r + 0.5 * sig * sig * t) / sq;
    let d2 = d1 - sq;
    let leading = s0 * normal_cdf(d1) - k * disc * normal_cdf(d2);
    if delta == 0.0 {
        return Ok(leading);
    }
    let c0 = ((r0 - theta) * ((1.0 - ekt) / kappa - t * ekt) + theta * t * (1.0 - (1.0 - ekt) / kappa))
        / (kappa * sq);
    let rad = r0 - theta * (1.0 - ekt);
    if rad < 0.0 {
        return Err(EsgError::FormulaInapplicable(format!("C11 radicand {rad:e} is negative")));
    }
    let ek = (kappa * t).exp();
    let ek2 = (0.5 * kappa * t).exp();
    let psi = ((theta * (2.0 * ek - 1.0) + r0 + 2.0 * ek2 * (theta * theta * (ek - 1.0) + theta * r0).sqrt())
        / (r0.sqrt() + theta.sqrt()).powi(2))
    .ln();
    let c11 = (2.0 * theta.sqrt() * ((1.0 + 2.0 * ek) * r0.sqrt() - 3.0 * ek2 * rad.sqrt())
        + psi * (theta * (1.0 + 2.0 * ek) - r0))
        / (2.0 * ek * kappa * kappa * theta.sqrt());
    let c1 = -rho / (sig * t) * c11;
    let (p1, p2) = (normal_pdf(d1), normal_pdf(d2));
    let price = leading
        + delta * c0 * (s0 * p1 - k * disc * (p2 - sq * normal_cdf(d2)))
        + delta * c1 * (d2 * s0 * p1 - d1 * k * disc * p2);
    if !price.is_finite() {
        return Err(EsgError::FormulaInapplicable("non-finite call price".into()));
    }
    Ok(price)
}

/// Put by parity against the CIR bond.
pub fn kim_put(inputs: &KimInputs) -> Result<f64> {
    let call = kim_call(inputs)?;
    Ok(call + inputs.strike * zcb_price(&inputs.bond, 0.0, inputs.maturity, inputs.r0) - inputs.s0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongstaffInputs {
    pub c: f64,
    pub omega: f64,
    pub e_chi: f64,
    pub f_chi: f64,
    pub sigma_chi: f64,
    pub chi0: f64,
    pub gamma0: f64,
    pub eta: f64,
    pub r0: f64,
    /// Number of quadrature intervals on `[0, T]`; rounded up to even.
    pub intervals: usize,
}

/// The three terms of the coupon-bond price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongstaffTerms {
    pub coupon_annuity: f64,
    pub principal: f64,
    pub recovery: f64,
}

impl LongstaffTerms {
    pub fn price(&self, c: f64, omega: f64) -> f64 {
        c * self.coupon_annuity + self.principal + (1.0 - omega) * self.recovery
    }
}

struct CbKernel {
    e: f64,
    f: f64,
    s2: f64,
    phi: f64,
    kappa: f64,
    eta: f64,
}

impl CbKernel {
    fn ratio(&self, t: f64) -> f64 {
        (1.0 - self.kappa) / (1.0 - self.kappa * (self.phi * t).exp())
    }
    fn a(&self, t: f64) -> f64 {
        (self.e * (self.f + self.phi) / self.s2 * t).exp() * self.ratio(t).powf(2.0 * self.e / self.s2)
    }
    fn b(&self, t: f64) -> f64 {
        (self.f - self.phi) / self.s2 + 2.0 * self.phi / (self.s2 * (1.0 - self.kappa * (self.phi * t).exp()))
    }
    fn c(&self, t: f64) -> f64 {
        (self.eta * self.eta * t.powi(3) / 6.0).exp()
    }
    fn g(&self, t: f64) -> f64 {
        self.e / self.phi
            * ((self.phi * t).exp() - 1.0)
            * (self.e * (self.f + self.phi) / self.s2 * t).exp()
            * self.ratio(t).powf(2.0 * self.e / self.s2 + 1.0)
    }
    fn h(&self, t: f64) -> f64 {
        ((self.e * (self.f + self.phi) + self.phi * self.s2) / self.s2 * t).exp()
            * self.ratio(t).powf(2.0 * self.e / self.s2 + 2.0)
    }
}

pub fn longstaff_terms(inputs: &LongstaffInputs, bond: &CirBond, maturity: f64) -> Result<LongstaffTerms> {
    let s2 = inputs.sigma_chi * inputs.sigma_chi;
    let phi = (2.0 * s2 + inputs.f_chi * inputs.f_chi).sqrt();
    if inputs.f_chi == phi || s2 == 0.0 {
        return Err(EsgError::FormulaInapplicable("f_chi equals phi".into()));
    }
    let k = CbKernel {
        e: inputs.e_chi,
        f: inputs.f_chi,
        s2,
        phi,
        kappa: (inputs.f_chi + phi) / (inputs.f_chi - phi),
        eta: inputs.eta,
    };
    let (chi0, g0) = (inputs.chi0, inputs.gamma0);
    let common = |t: f64| (k.b(t) * chi0).exp() * k.c(t) * zcb_price(bond, 0.0, t, inputs.r0) * (-g0 * t).exp();
    let coupon = simpson(|t| k.a(t) * common(t), maturity, inputs.intervals);
    let recovery = simpson(|t| common(t) * (k.g(t) + k.h(t) * chi0), maturity, inputs.intervals);
    let principal = k.a(maturity) * common(maturity);
    let terms = LongstaffTerms { coupon_annuity: coupon, principal, recovery };
    if ![coupon, principal, recovery].iter().all(|x| x.is_finite()) {
        return Err(EsgError::FormulaInapplicable("C_CB or an integrand overflowed".into()));
    }
    Ok(terms)
}

pub fn longstaff_cb(inputs: &LongstaffInputs, bond: &CirBond, maturity: f64) -> Result<f64> {
    Ok(longstaff_terms(inputs, bond, maturity)?.price(inputs.c, inputs.omega))
}

/// Composite Simpson rule on `[0, upper]`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, upper: f64, intervals: usize) -> f64 {
    let n = intervals.max(2).div_ceil(2) * 2;
    let h = upper / n as f64;
    let mut acc = f(0.0) + f(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bond() -> CirBond {
        CirBond::new(0.02, 0.04, 0.01).unwrap()
    }

    fn kim(strike: f64) -> KimInputs {
        KimInputs { s0: 1.0, strike, maturity: 1.0, sigma_s: 0.2, rho_r_s: 0.6, r0: 0.02, bond: bond() }
    }

    pub(crate) fn longstaff_example() -> LongstaffInputs {
        LongstaffInputs {
            c: 0.1,
            omega: 0.5,
            e_chi: 0.02 * 0.05 + 0.1 * 0.05,
            f_chi: 0.1,
            sigma_chi: 0.01,
            chi0: 0.05,
            gamma0: 0.01,
            eta: 0.0,
            r0: 0.02,
            intervals: 100,
        }
    }

    #[test]
    fn table_one_bond_price() {
        assert!((zcb_price(&bond(), 0.0, 1.0, 0.02) - 0.970957220487724).abs() < 1e-12);
        assert_eq!(zcb_price(&bond(), 1.0, 1.0, 0.02), 1.0);
        assert_relative_eq!(bond().gamma(), 0.021_213_203_435_596_427, max_relative = 1e-15);
    }

    #[test]
    fn bond_derivative() {
        let b = bond();
        assert_eq!(zcb_dr(&b, 1.0, 1.0, 0.02), 0.0);
        let h = 1e-6;
        let fd = (zcb_price(&b, 0.0, 1.0, 0.02 + h) - zcb_price(&b, 0.0, 1.0, 0.02 - h)) / (2.0 * h);
        assert_relative_eq!(zcb_dr(&b, 0.0, 1.0, 0.02), fd, max_relative = 1e-9);
    }

    #[test]
    fn zero_volatility_limit() {
        let det = CirBond::new(0.02, 0.04, 0.0).unwrap();
        let near = CirBond::new(0.02, 0.04, 1e-4).unwrap();
        let (c0, a0) = det.coefficients(2.0);
        let (c1, a1) = near.coefficients(2.0);
        assert_relative_eq!(c0, c1, max_relative = 1e-7);
        assert_relative_eq!(a0, a1, max_relative = 1e-6);
    }

    #[test]
    fn bond_jet_time_derivatives() {
        let b = bond();
        let (t, m, r) = (0.3, 1.0, 0.025);
        let h = 1e-4;
        let j = b.jet(t, m, r);
        let (cp, ap) = b.coefficients(m - t + h);
        let (cm, am) = b.coefficients(m - t - h);
        assert_relative_eq!(j.c_tau, (cp - cm) / (2.0 * h), max_relative = 1e-8);
        assert_relative_eq!(j.a_tau, (ap - am) / (2.0 * h), max_relative = 1e-7);
    }

    #[test]
    fn kim_zero_rate_vol_is_black_scholes() {
        let b = CirBond { a: 0.02, b: 0.04, sigma: 0.0 };
        let inp = KimInputs { bond: b, ..kim(1.0) };
        let int_r = (0.02f64 - 0.5) / 0.04 * (1.0 - (-0.04f64).exp()) + 0.5;
        let d1 = (int_r + 0.02) / 0.2;
        let bs = normal_cdf(d1) - (-int_r).exp() * normal_cdf(d1 - 0.2);
        assert_relative_eq!(kim_call(&inp).unwrap(), bs, max_relative = 1e-14);
    }

    #[test]
    fn kim_parity_and_limits() {
        let inp = kim(1.0);
        let call = kim_call(&inp).unwrap();
        let put = kim_put(&inp).unwrap();
        let p = zcb_price(&inp.bond, 0.0, 1.0, 0.02);
        assert!((call - put - 1.0 + p).abs() < 1e-12);
        assert!((kim_call(&kim(1e-8)).unwrap() - 1.0).abs() < 1e-6);
        // Frozen from a 30-digit evaluation of the printed expansion. The first-order
        // correction dominates at these inputs, so the value exceeds the no-arbitrage bound.
        assert_relative_eq!(put, 1.463_944_265_491_058_6, max_relative = 1e-10);
    }

    #[test]
    fn kim_inapplicable_for_long_maturity() {
        let inp = KimInputs { maturity: 30.0, ..kim(1.0) };
        assert!(matches!(kim_call(&inp), Err(EsgError::FormulaInapplicable(_))));
    }

    #[test]
    fn longstaff_reduces_to_zero_bond() {
        let inp = LongstaffInputs { c: 0.0, omega: 1.0, e_chi: 0.0, chi0: 0.0, gamma0: 0.0, ..longstaff_example() };
        let cb = longstaff_cb(&inp, &bond(), 1.0).unwrap();
        assert!((cb - zcb_price(&bond(), 0.0, 1.0, 0.02)).abs() < 1e-12);
        let g = LongstaffInputs { gamma0: 0.01, ..inp };
        let cb = longstaff_cb(&g, &bond(), 1.0).unwrap();
        assert!((cb - zcb_price(&bond(), 0.0, 1.0, 0.02) * (-0.01f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn longstaff_terms_match_adaptive_quadrature() {
        // Adaptive quadrature values of the three terms.
        let t = longstaff_terms(&longstaff_example(), &bond(), 1.0).unwrap();
        assert_relative_eq!(t.coupon_annuity, 0.957_917_865_483_829_5, max_relative = 1e-10);
        assert_relative_eq!(t.principal, 0.913_971_551_621_483_8, max_relative = 1e-12);
        assert_relative_eq!(t.recovery, 0.048_351_723_464_324_74, max_relative = 1e-10);
    }

    #[test]
    fn longstaff_quadrature_refinement() {
        let base = longstaff_example();
        let fine = LongstaffInputs { intervals: 200, ..base };
        let a = longstaff_cb(&base, &bond(), 1.0).unwrap();
        let b = longstaff_cb(&fine, &bond(), 1.0).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn longstaff_overflow() {
        let inp = LongstaffInputs { eta: 50.0, ..longstaff_example() };
        assert!(longstaff_cb(&inp, &bond(), 3.0).is_err());
    }

    proptest! {
        #[test]
        fn bond_monotone(a in 0.001f64..0.1, b in 0.01f64..1.0, s in 0.001f64..0.3,
                         r in 0.001f64..0.2, tau in 0.1f64..20.0) {
            let bd = CirBond::new(a, b, s).unwrap();
            let p = zcb_price(&bd, 0.0, tau, r);
            prop_assert!(zcb_price(&bd, 0.0, tau, r * 1.1) < p);
            prop_assert!(zcb_price(&bd, 0.0, tau * 1.1, r) < p);
            let h = 1e-6 * r;
            let fd = (zcb_price(&bd, 0.0, tau, r + h) - zcb_price(&bd, 0.0, tau, r - h)) / (2.0 * h);
            let d = zcb_dr(&bd, 0.0, tau, r);
            prop_assert!(d <= 0.0);
            prop_assert!(((d - fd) / d).abs() < 1e-7);
        }
    }
}
