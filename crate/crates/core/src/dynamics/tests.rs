use super::*;
use crate::analytic::zcb_dr;
use crate::rng::PathStream;
use crate::schemes::Stepper;
use approx::assert_relative_eq;

fn all_modes() -> Vec<ModeFlags> {
    let mut out = Vec::new();
    for short_rate in [ShortRateMode::Simple, ShortRateMode::Composite] {
        for stock in [StockMode::FreeCorrelation, StockMode::MartingaleConsistent] {
            for convenience in [ConvenienceMode::Regularity, ConvenienceMode::LongstaffIndependent { eta: -0.004 }] {
                out.push(ModeFlags { short_rate, stock, convenience });
            }
        }
    }
    out
}

fn params_for(mode: &ModeFlags) -> ModelParams {
    let mut p = ModelParams::baseline();
    if mode.stock == StockMode::MartingaleConsistent {
        p.correlation = CorrelationSpec::stock_on_rate(0.7, 0.5, 0.1).unwrap();
    }
    p
}

fn random_state(rng: &mut PathStream) -> StateVector {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.uniform();
    StateVector {
        t: u(0.0, 0.9),
        r: u(0.005, 0.1),
        theta: u(0.1, 1.0),
        b: u(0.5, 2.0),
        p: u(0.5, 1.0),
        s: u(0.5, 2.0),
        chi: u(0.01, 0.1),
        gamma: u(-0.02, 0.05),
        d: u(0.5, 1.5),
    }
}

fn sensitivity(params: &ModelParams, st: &StateVector) -> f64 {
    zcb_dr(&params.bond(), st.t, params.bond_maturity, st.r)
}

#[test]
fn regularity_examples() {
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let st = p.initial_state();
    let reg = regularity_drifts(&st, &p, &mode).unwrap();
    assert_relative_eq!(reg.mu_s, 0.056, max_relative = 1e-15);
    let zero_gamma = StateVector { gamma: 0.0, theta: 0.0, ..st };
    assert_eq!(regularity_drifts(&zero_gamma, &p, &mode).unwrap().eta, 0.0);
    let low_theta = StateVector { theta: 1e-9, ..st };
    assert!(matches!(regularity_drifts(&low_theta, &p, &mode), Err(EsgError::ThetaUnderflow { .. })));
    let mut q = p;
    q.correlation = CorrelationSpec::new(0.6, 0.7, 0.0, 0.1, 0.3, 0.1).unwrap();
    assert_eq!(regularity_drifts(&st, &q, &mode), Err(EsgError::ZeroRhoRGamma));
}

#[test]
fn composite_reduces_to_simple() {
    let p = ModelParams::baseline();
    let st = StateVector { chi: 0.0, gamma: 0.0, ..p.initial_state() };
    let simple = ModeFlags::default();
    let composite = ModeFlags { short_rate: ShortRateMode::Composite, ..simple };
    assert_eq!(regularity_drifts(&st, &p, &simple), regularity_drifts(&st, &p, &composite));
    let l = loadings_for(&p, &simple).unwrap();
    let k = sensitivity(&p, &st);
    assert_eq!(
        assemble_system(&st, &p, &simple, &l, k).unwrap(),
        assemble_system(&st, &p, &composite, &l, k).unwrap()
    );
}

#[test]
fn assemble_at_origin() {
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let st = StateVector { t: 0.0, r: 0.0, theta: 0.0, b: 1.0, p: 1.0, s: 1.0, chi: 0.0, gamma: 0.0, d: 1.0 };
    let l = loadings_for(&p, &mode).unwrap();
    let dd = assemble_system(&st, &p, &mode, &l, sensitivity(&p, &st)).unwrap();
    for (i, a) in dd.drift.iter().enumerate() {
        let want = if i == THETA { p.a_theta } else if i == R { p.a_r } else { 0.0 };
        assert_eq!(*a, want, "row {i}");
    }
    assert!(dd.diffusion[D].iter().all(|b| *b == 0.0));
    assert!(dd.diffusion[B].iter().all(|b| *b == 0.0));
}

#[test]
fn assemble_at_initial_state() {
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let st = p.initial_state();
    let l = loadings_for(&p, &mode).unwrap();
    let dd = assemble_system(&st, &p, &mode, &l, sensitivity(&p, &st)).unwrap();
    assert_relative_eq!(dd.drift[D], -0.02, max_relative = 1e-15);
    assert_relative_eq!(dd.diffusion[D][0], -0.3, max_relative = 1e-15);
    assert_eq!(dd.diffusion[0].len(), 5);
    assert_eq!(dd.diffusion[THETA][4], p.sigma_theta * p.theta0.sqrt());
}

#[test]
fn martingale_consistent_stock_row() {
    let mode = ModeFlags { stock: StockMode::MartingaleConsistent, ..ModeFlags::default() };
    let p = params_for(&mode);
    let mut rng = PathStream::new(9, 0);
    let l = loadings_for(&p, &mode).unwrap();
    for _ in 0..100 {
        let st = random_state(&mut rng);
        let dd = assemble_system(&st, &p, &mode, &l, sensitivity(&p, &st)).unwrap();
        assert_relative_eq!(dd.drift[S], st.s * (st.r + st.theta * st.theta), max_relative = 1e-14);
        assert_eq!(dd.diffusion[S].len(), 4);
        assert_relative_eq!(dd.diffusion[S][0], st.s * st.theta, max_relative = 1e-15);
        assert!(dd.diffusion[S][1..].iter().all(|b| *b == 0.0));
        // Log-drifts and log-diffusions of S and D offset each other.
        let log_drift = |i: usize, x: f64| {
            let q: f64 = dd.diffusion[i].iter().map(|b| b * b).sum();
            dd.drift[i] / x - 0.5 * q / (x * x)
        };
        assert!((log_drift(S, st.s) + log_drift(D, st.d)).abs() < 1e-14);
        for k in 0..4 {
            assert!((dd.diffusion[S][k] / st.s + dd.diffusion[D][k] / st.d).abs() < 1e-15);
        }
    }
}

#[test]
fn instantaneous_covariances_match_spec() {
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let l = loadings_for(&p, &mode).unwrap();
    let c = p.correlation.matrix();
    let spec_row = |i: usize| match i {
        R | P | D => Some(0),
        S => Some(1),
        CHI => Some(2),
        GAMMA => Some(3),
        _ => None,
    };
    let mut rng = PathStream::new(4, 0);
    for _ in 0..50 {
        let st = random_state(&mut rng);
        let dd = assemble_system(&st, &p, &mode, &l, sensitivity(&p, &st)).unwrap();
        // Signed scalar volatility: the projection of each row onto its own unit loading.
        let vol = |i: usize| {
            let ell = l.row(spec_row(i).unwrap());
            dd.diffusion[i].iter().zip(ell.iter()).map(|(b, e)| b * e).sum::<f64>()
        };
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                let (Some(a), Some(b)) = (spec_row(i), spec_row(j)) else { continue };
                let cov: f64 = dd.diffusion[i].iter().zip(&dd.diffusion[j]).map(|(x, y)| x * y).sum();
                let want = vol(i) * vol(j) * c[a][b];
                assert!((cov - want).abs() <= 1e-12 * (1.0 + want.abs()), "({i},{j}) {cov} {want}");
            }
        }
    }
}

// Independent oracle: solve sum_k K_k l_Xk = (R X - a_X) / v_X + theta l_X0 by forward substitution.
fn triangular_oracle(st: &StateVector, p: &ModelParams, mode: &ModeFlags, drifts: &RegularityDrifts) -> Vec<f64> {
    let l = loadings_for(p, mode).unwrap();
    let rr = st.short_rate(mode);
    let sig_s = match mode.stock {
        StockMode::FreeCorrelation => p.sigma_s,
        StockMode::MartingaleConsistent => st.theta,
    };
    let sc = st.chi.sqrt();
    let rhs = [
        (rr - drifts.mu_s) / sig_s + st.theta * l.entry(1, 0),
        (rr * st.chi - (drifts.e - p.f * st.chi)) / (p.sigma_chi * sc) + st.theta * l.entry(2, 0),
        rr * st.gamma / drifts.eta + st.theta * l.entry(3, 0),
    ];
    let rows: Vec<usize> = match mode.stock {
        StockMode::FreeCorrelation => vec![1, 2, 3],
        StockMode::MartingaleConsistent => vec![2, 3],
    };
    let rhs: Vec<f64> = match mode.stock {
        StockMode::FreeCorrelation => rhs.to_vec(),
        StockMode::MartingaleConsistent => rhs[1..].to_vec(),
    };
    let mut k = vec![0.0; rows.len()];
    for (n, &row) in rows.iter().enumerate() {
        let mut acc = rhs[n];
        for m in 0..n {
            acc -= k[m] * l.entry(row, m + 1);
        }
        k[n] = acc / l.entry(row, n + 1);
    }
    k
}

#[test]
fn residuals_vanish_under_regularity() {
    let mut rng = PathStream::new(77, 0);
    for mode in all_modes() {
        let p = params_for(&mode);
        for _ in 0..10_000 {
            let mut st = random_state(&mut rng);
            if mode.convenience != ConvenienceMode::Regularity {
                continue;
            }
            if st.gamma == 0.0 {
                st.gamma = 0.01;
            }
            let k = residual_k_terms(&st, &p, &mode).unwrap();
            let tol = 1e-12 * k.scale.max(1.0);
            assert!(k.k_psi.abs() <= tol && k.k_gamma.abs() <= tol && k.k_i.abs() <= tol, "{mode:?} {k:?}");
        }
    }
}

#[test]
fn residuals_match_triangular_solve() {
    let mut rng = PathStream::new(78, 0);
    for mode in all_modes() {
        let p = params_for(&mode);
        for _ in 0..200 {
            let st = random_state(&mut rng);
            let mut drifts = regularity_drifts(&st, &p, &mode).unwrap();
            drifts.mu_s += 0.01 * rng.normal();
            drifts.e += 0.001 * rng.normal();
            drifts.eta = 0.003 + 0.01 * rng.uniform();
            let k = residual_k_terms_with(&st, &p, &mode, &drifts).unwrap();
            let oracle = triangular_oracle(&st, &p, &mode, &drifts);
            let got: Vec<f64> = match mode.stock {
                StockMode::FreeCorrelation => vec![k.k_psi, k.k_gamma, k.k_i],
                StockMode::MartingaleConsistent => vec![k.k_gamma, k.k_i],
            };
            for (a, b) in got.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{mode:?} {a} {b}");
            }
        }
    }
}

#[test]
fn perturbed_stock_drift() {
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let st = p.initial_state();
    let mut drifts = regularity_drifts(&st, &p, &mode).unwrap();
    drifts.mu_s += 0.01;
    let k = residual_k_terms_with(&st, &p, &mode, &drifts).unwrap();
    assert_relative_eq!(k.k_psi, -0.01 / (0.2 * 0.8), max_relative = 1e-12);
}

#[test]
fn zero_gamma_residual_cancels() {
    let mut rng = PathStream::new(79, 0);
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    for _ in 0..10 {
        let st = StateVector { gamma: 0.0, ..random_state(&mut rng) };
        let k = residual_k_terms(&st, &p, &mode).unwrap();
        assert!(k.k_i.abs() <= 1e-12 * k.scale.max(1.0));
    }
    let fixed = ModeFlags { convenience: ConvenienceMode::LongstaffIndependent { eta: 0.0 }, ..mode };
    let st = p.initial_state();
    let drifts = RegularityDrifts { eta: 0.0, ..regularity_drifts(&st, &p, &fixed).unwrap() };
    assert!(matches!(residual_k_terms_with(&st, &p, &fixed, &drifts), Err(EsgError::DegenerateResidual(_))));
}

#[test]
fn feller_examples() {
    let p = ModelParams::baseline();
    let rep = feller_check(&p, &ModeFlags::default());
    assert!(rep.theta.holds && rep.theta.lhs == 0.1 && rep.theta.rhs == 0.0001);
    assert!(rep.r.holds && rep.r.lhs == 0.04);
    assert!(rep.chi.holds && rep.chi.state_dependent);
    let loud = ModelParams { sigma_chi: 1.0, ..p };
    assert!(!feller_check(&loud, &ModeFlags::default()).chi.holds);
}

#[test]
fn validation_rejects_bad_inputs() {
    let mode = ModeFlags::default();
    let bad = ModelParams { b_r: 0.0, ..ModelParams::baseline() };
    assert!(bad.validate(&mode).is_err());
    let mc = ModeFlags { stock: StockMode::MartingaleConsistent, ..mode };
    assert!(ModelParams::baseline().validate(&mc).is_err());
    assert!(params_for(&mc).validate(&mc).is_ok());
}

#[test]
fn jets_agree_with_assembled_system() {
    let mut rng = PathStream::new(81, 0);
    for mode in all_modes() {
        let p = params_for(&mode);
        let sys = FiveFactorSystem::new(p, mode).unwrap();
        let mut stepper = Stepper::new(&sys);
        for _ in 0..50 {
            let st = random_state(&mut rng);
            let dd = assemble_system(&st, &p, &mode, sys.loadings(), sensitivity(&p, &st)).unwrap();
            let c = stepper.evaluate(&sys, st.t, &st.to_array(), Order::Second).unwrap().clone();
            for i in 0..STATE_DIM {
                assert!((c.drift[i].value - dd.drift[i]).abs() <= 1e-14 * (1.0 + dd.drift[i].abs()), "{mode:?} {i}");
                for k in 0..sys.drivers() {
                    let b = c.vol[i].value * sys.loading(i, k);
                    assert!((b - dd.diffusion[i][k]).abs() <= 1e-15, "{mode:?} {i} {k}");
                }
            }
        }
    }
}

#[test]
fn partials_match_finite_differences() {
    let mut rng = PathStream::new(82, 0);
    let h_rel = 1e-6;
    let close = |an: f64, fd: f64| (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()) + 1e-9;
    for mode in all_modes() {
        let p = params_for(&mode);
        let sys = FiveFactorSystem::new(p, mode).unwrap();
        let mut st = Stepper::new(&sys);
        for _ in 0..1000 / all_modes().len() + 1 {
            let s0 = random_state(&mut rng);
            let x = s0.to_array();
            let base = st.evaluate(&sys, s0.t, &x, Order::Second).unwrap().clone();
            let eval = |st: &mut Stepper, t: f64, x: &[f64; MAX_DIM]| st.evaluate(&sys, t, x, Order::Second).unwrap().clone();
            let ht = h_rel * s0.t.max(0.1);
            let (up, dn) = (eval(&mut st, s0.t + ht, &x), eval(&mut st, s0.t - ht, &x));
            for i in 0..STATE_DIM {
                for (jets, u, d) in [(&base.drift, &up.drift, &dn.drift), (&base.vol, &up.vol, &dn.vol)] {
                    let fd = (u[i].value - d[i].value) / (2.0 * ht);
                    assert!(close(jets[i].dt, fd), "{mode:?} dt row {i}: {} vs {fd}", jets[i].dt);
                }
            }
            for j in 0..STATE_DIM {
                let h = h_rel * x[j].abs().max(1e-2);
                let (mut xu, mut xd) = (x, x);
                xu[j] += h;
                xd[j] -= h;
                let (u, d) = (eval(&mut st, s0.t, &xu), eval(&mut st, s0.t, &xd));
                for i in 0..STATE_DIM {
                    for (jets, uj, dj) in [(&base.drift, &u.drift, &d.drift), (&base.vol, &u.vol, &d.vol)] {
                        let fd = (uj[i].value - dj[i].value) / (2.0 * h);
                        assert!(close(jets[i].grad[j], fd), "{mode:?} grad ({i},{j}): {} vs {fd}", jets[i].grad[j]);
                        for k in 0..STATE_DIM {
                            let fd2 = (uj[i].grad[k] - dj[i].grad[k]) / (2.0 * h);
                            assert!(
                                close(jets[i].hess[k][j], fd2),
                                "{mode:?} hess {i} ({k},{j}): {} vs {fd2}",
                                jets[i].hess[k][j]
                            );
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn l0_matches_worked_example() {
    let p = ModelParams::baseline();
    let sys = FiveFactorSystem::new(p, ModeFlags::default()).unwrap();
    let mut st = Stepper::new(&sys);
    let s = StateVector { r: 0.03, theta: 0.4, ..p.initial_state() };
    let c = st.evaluate(&sys, 0.2, &s.to_array(), Order::Second).unwrap().clone();
    let (r, th, sig) = (s.r, s.theta, p.sigma_r);
    let a1 = c.drift[R].value;
    let a2 = c.drift[THETA].value;
    let sigma11 = sig * sig * r;
    let want = a1 * (-p.b_r + 0.5 * th * sig / r.sqrt()) + a2 * sig * r.sqrt() - sigma11 * sig * th / (8.0 * r.powf(1.5));
    assert_relative_eq!(st.l0(&c.drift[R]), want, max_relative = 1e-13);
    for k in 0..sys.drivers() {
        let want = c.vol[R].value * sys.loading(R, k) * (-p.b_r + 0.5 * th * sig / r.sqrt())
            + c.vol[THETA].value * sys.loading(THETA, k) * sig * r.sqrt();
        assert_relative_eq!(st.lk(k, &c.drift[R]), want, max_relative = 1e-13, epsilon = 1e-18);
    }
}

#[test]
fn milstein_diagonal_corrections() {
    // Corrections of the Milstein step per row against hand formulas.
    let p = ModelParams::baseline();
    let mode = ModeFlags::default();
    let sys = FiveFactorSystem::new(p, mode).unwrap();
    let mut st = Stepper::new(&sys);
    let s = p.initial_state();
    let dt = 0.01;
    let dw = [0.13, -0.05, 0.2, 0.07, -0.11];
    let inc = crate::schemes::IncrementBundle::new(&dw, dt);
    let (mut e, mut m) = (s.to_array(), s.to_array());
    st.step(&sys, crate::schemes::SchemeKind::Euler, 0.0, &mut e, &inc, dt).unwrap();
    st.step(&sys, crate::schemes::SchemeKind::Milstein, 0.0, &mut m, &inc, dt).unwrap();
    let l = sys.loadings();
    let sq = |k: usize| dw[k] * dw[k] - dt;
    assert_relative_eq!(m[R] - e[R], 0.25 * p.sigma_r * p.sigma_r * sq(0), max_relative = 1e-9);
    assert_relative_eq!(m[THETA] - e[THETA], 0.25 * p.sigma_theta * p.sigma_theta * sq(4), max_relative = 1e-9);
    assert_eq!(m[B], e[B]);
    assert!((m[P] - e[P]).abs() < 1e-15);
    let s_corr: f64 = (0..4).map(|k| l.entry(1, k).powi(2) * sq(k)).sum::<f64>() * 0.5 * s.s * p.sigma_s * p.sigma_s;
    assert_relative_eq!(m[S] - e[S], s_corr, max_relative = 1e-9);
    let c_corr: f64 = (0..4).map(|k| l.entry(2, k).powi(2) * sq(k)).sum::<f64>() * 0.25 * p.sigma_chi * p.sigma_chi;
    assert_relative_eq!(m[CHI] - e[CHI], c_corr, max_relative = 1e-9);
    let rho = p.correlation.rho_r_gamma();
    let g_corr: f64 = (0..4).map(|k| l.entry(3, k).powi(2) * sq(k)).sum::<f64>()
        * 0.5
        * s.gamma
        * (s.r / (rho * s.theta)).powi(2);
    assert_relative_eq!(m[GAMMA] - e[GAMMA], g_corr, max_relative = 1e-9);
    assert_relative_eq!(m[D] - e[D], 0.5 * s.d * s.theta * s.theta * sq(0), max_relative = 1e-9);
}

#[test]
fn bond_row_frozen_after_maturity() {
    let p = ModelParams { bond_maturity: 0.5, ..ModelParams::baseline() };
    let sys = FiveFactorSystem::new(p, ModeFlags::default()).unwrap();
    let mut st = Stepper::new(&sys);
    let c = st.evaluate(&sys, 0.5, &p.initial_state().to_array(), Order::Second).unwrap();
    assert_eq!(c.drift[P].value, 0.0);
    assert_eq!(c.vol[P].value, 0.0);
}
