//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key may appear once and
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use esg_core::correlation::CorrelationSpec;
use esg_core::dynamics::{ConvenienceMode, ModeFlags, ModelParams, ShortRateMode, StockMode};
use esg_core::engine::{PortfolioWeights, SimulationConfig, StorePaths};
use esg_core::schemes::{SchemeKind, TimeGrid};

use crate::output::fmt17;

/// Keys that must be present in every file.
pub const REQUIRED: &[&str] = &[
    "a_r",
    "b_r",
    "sigma_r",
    "a_theta",
    "b_theta",
    "sigma_theta",
    "sigma_S",
    "sigma_chi",
    "f",
    "r0",
    "theta0",
    "S0",
    "chi0",
    "gamma0",
    "rho_rS",
    "rho_rChi",
    "rho_rGamma",
    "rho_SChi",
    "rho_SGamma",
    "rho_ChiGamma",
    "n_paths",
    "seed",
];

/// Keys with defaults or only needed by some subcommands.
pub const OPTIONAL: &[&str] = &[
    "T",
    "dt",
    "bond_maturity",
    "scheme",
    "antithetic",
    "store_paths",
    "workers",
    "max_failure_rate",
    "short_rate",
    "stock",
    "convenience",
    "eta",
    "K",
    "c",
    "omega",
    "w_S",
    "w_P",
    "w_CB",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub diagnostics: Vec<Diagnostic>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for d in &self.diagnostics {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

impl ConfigError {
    fn single(key: &str, message: impl Into<String>) -> Self {
        Self { diagnostics: vec![Diagnostic { line: None, key: key.into(), message: message.into() }] }
    }
}

/// Instrument inputs; each is required only by the subcommand that prices it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Instruments {
    pub strike: Option<f64>,
    pub coupon: Option<f64>,
    pub omega: Option<f64>,
    pub weights: Option<PortfolioWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub simulation: SimulationConfig,
    /// Grid inputs as written, so the file round-trips.
    pub horizon: f64,
    pub dt: f64,
    pub instruments: Instruments,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn strike(&self) -> Result<f64, ConfigError> {
        self.instruments.strike.ok_or_else(|| ConfigError::single("K", "required for put pricing"))
    }

    pub fn coupon_terms(&self) -> Result<(f64, f64), ConfigError> {
        match (self.instruments.coupon, self.instruments.omega) {
            (Some(c), Some(w)) => Ok((c, w)),
            _ => Err(ConfigError::single("c, omega", "both required for coupon-bond pricing")),
        }
    }

    pub fn weights(&self) -> Result<PortfolioWeights, ConfigError> {
        self.instruments.weights.ok_or_else(|| ConfigError::single("w_S, w_P, w_CB", "required for the portfolio"))
    }

    /// Serializes back to the flat format; numbers keep 17 significant digits.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Every set key with its value as written by [`RunConfig::to_text`].
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.params;
        let c = &p.correlation;
        let s = &self.simulation;
        let mut out = vec![
            ("a_r", fmt17(p.a_r)),
            ("b_r", fmt17(p.b_r)),
            ("sigma_r", fmt17(p.sigma_r)),
            ("a_theta", fmt17(p.a_theta)),
            ("b_theta", fmt17(p.b_theta)),
            ("sigma_theta", fmt17(p.sigma_theta)),
            ("sigma_S", fmt17(p.sigma_s)),
            ("sigma_chi", fmt17(p.sigma_chi)),
            ("f", fmt17(p.f)),
            ("r0", fmt17(p.r0)),
            ("theta0", fmt17(p.theta0)),
            ("S0", fmt17(p.s0)),
            ("chi0", fmt17(p.chi0)),
            ("gamma0", fmt17(p.gamma0)),
            ("bond_maturity", fmt17(p.bond_maturity)),
            ("rho_rS", fmt17(c.rho_r_s())),
            ("rho_rChi", fmt17(c.rho_r_chi())),
            ("rho_rGamma", fmt17(c.rho_r_gamma())),
            ("rho_SChi", fmt17(c.rho_s_chi())),
            ("rho_SGamma", fmt17(c.rho_s_gamma())),
            ("rho_ChiGamma", fmt17(c.rho_chi_gamma())),
            ("T", fmt17(self.horizon)),
            ("dt", fmt17(self.dt)),
            ("n_paths", s.n_paths.to_string()),
            ("seed", s.seed.to_string()),
            ("scheme", s.scheme.name().to_string()),
            ("antithetic", if s.antithetic { "on" } else { "off" }.to_string()),
            (
                "store_paths",
                match s.store_paths {
                    StorePaths::TerminalOnly => "terminal",
                    StorePaths::FullPath => "full",
                }
                .to_string(),
            ),
            ("max_failure_rate", fmt17(s.max_failure_rate)),
            (
                "short_rate",
                match s.mode.short_rate {
                    ShortRateMode::Simple => "simple",
                    ShortRateMode::Composite => "composite",
                }
                .to_string(),
            ),
            (
                "stock",
                match s.mode.stock {
                    StockMode::FreeCorrelation => "free",
                    StockMode::MartingaleConsistent => "martingale",
                }
                .to_string(),
            ),
        ];
        match s.mode.convenience {
            ConvenienceMode::Regularity => out.push(("convenience", "regularity".into())),
            ConvenienceMode::LongstaffIndependent { eta } => {
                out.push(("convenience", "longstaff".into()));
                out.push(("eta", fmt17(eta)));
            }
        }
        if let Some(w) = s.workers {
            out.push(("workers", w.to_string()));
        }
        let i = &self.instruments;
        for (k, v) in [("K", i.strike), ("c", i.coupon), ("omega", i.omega)] {
            if let Some(v) = v {
                out.push((k, fmt17(v)));
            }
        }
        if let Some(w) = i.weights {
            out.push(("w_S", fmt17(w.stock)));
            out.push(("w_P", fmt17(w.bond)));
            out.push(("w_CB", fmt17(w.coupon_bond)));
        }
        if let Some(d) = &self.out_dir {
            out.push(("out_dir", d.display().to_string()));
        }
        out
    }
}

struct Raw {
    values: BTreeMap<String, (usize, String)>,
    errors: Vec<Diagnostic>,
}

impl Raw {
    fn err(&mut self, key: &str, message: impl Into<String>) {
        let line = self.values.get(key).map(|v| v.0);
        self.errors.push(Diagnostic { line, key: key.into(), message: message.into() });
    }

    fn text(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|v| v.1.as_str())
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        let text = self.text(key)?.to_string();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.err(key, format!("expected a finite number, got {text:?}"));
                None
            }
        }
    }

    fn float_or(&mut self, key: &str, default: f64) -> Option<f64> {
        if self.values.contains_key(key) {
            self.float(key)
        } else {
            Some(default)
        }
    }

    fn integer<T: std::str::FromStr>(&mut self, key: &str) -> Option<T> {
        let text = self.text(key)?.to_string();
        match text.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(key, format!("expected a non-negative integer, got {text:?}"));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> Option<T> {
        let Some(text) = self.text(key).map(str::to_string) else {
            return Some(default);
        };
        match options.iter().find(|o| o.0 == text) {
            Some(o) => Some(o.1),
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.err(key, format!("expected one of {}, got {text:?}", names.join(", ")));
                None
            }
        }
    }

    fn correlation(&mut self, key: &str) -> Option<f64> {
        let v = self.float(key)?;
        if !(-1.0..=1.0).contains(&v) {
            self.err(key, format!("correlation {v} is outside [-1, 1]"));
            return None;
        }
        Some(v)
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut raw = Raw { values: BTreeMap::new(), errors: Vec::new() };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((k, v)) = content.split_once('=') else {
            raw.errors.push(Diagnostic { line: Some(line_no), key: content.into(), message: "expected key = value".into() });
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !REQUIRED.contains(&k) && !OPTIONAL.contains(&k) {
            raw.errors.push(Diagnostic { line: Some(line_no), key: k.into(), message: "unknown key".into() });
            continue;
        }
        if let Some((first, _)) = raw.values.get(k) {
            raw.errors.push(Diagnostic {
                line: Some(line_no),
                key: k.into(),
                message: format!("duplicate key, first set on line {first}"),
            });
            continue;
        }
        raw.values.insert(k.to_string(), (line_no, v.to_string()));
    }
    for key in REQUIRED {
        if !raw.values.contains_key(*key) {
            raw.errors.push(Diagnostic { line: None, key: (*key).into(), message: "missing required key".into() });
        }
    }
    if !raw.errors.is_empty() {
        return Err(ConfigError { diagnostics: raw.errors });
    }
    build(&mut raw).ok_or(ConfigError { diagnostics: raw.errors })
}

fn build(raw: &mut Raw) -> Option<RunConfig> {
    let mut f = |k: &str| raw.float(k);
    let nums = [
        f("a_r"),
        f("b_r"),
        f("sigma_r"),
        f("a_theta"),
        f("b_theta"),
        f("sigma_theta"),
        f("sigma_S"),
        f("sigma_chi"),
        f("f"),
        f("r0"),
        f("theta0"),
        f("S0"),
        f("chi0"),
        f("gamma0"),
    ];
    let rho_keys = ["rho_rS", "rho_rChi", "rho_rGamma", "rho_SChi", "rho_SGamma", "rho_ChiGamma"];
    let rhos: Vec<Option<f64>> = rho_keys.iter().map(|k| raw.correlation(k)).collect();
    let horizon = raw.float_or("T", 1.0);
    let dt = raw.float_or("dt", 0.01);
    let bond_maturity = match raw.text("bond_maturity") {
        Some(_) => raw.float("bond_maturity"),
        None => horizon,
    };
    let n_paths = raw.integer::<usize>("n_paths");
    let seed = raw.integer::<u64>("seed");
    let workers = if raw.values.contains_key("workers") { raw.integer::<usize>("workers").map(Some) } else { Some(None) };
    let max_failure_rate = raw.float_or("max_failure_rate", 1e-3);
    let scheme = raw.choice(
        "scheme",
        SchemeKind::Milstein2,
        &[("euler", SchemeKind::Euler), ("milstein", SchemeKind::Milstein), ("milstein2", SchemeKind::Milstein2)],
    );
    let antithetic = raw.choice("antithetic", true, &[("on", true), ("off", false), ("true", true), ("false", false)]);
    let store_paths =
        raw.choice("store_paths", StorePaths::TerminalOnly, &[("terminal", StorePaths::TerminalOnly), ("full", StorePaths::FullPath)]);
    let short_rate = raw.choice(
        "short_rate",
        ShortRateMode::Simple,
        &[("simple", ShortRateMode::Simple), ("composite", ShortRateMode::Composite)],
    );
    let stock = raw.choice(
        "stock",
        StockMode::FreeCorrelation,
        &[("free", StockMode::FreeCorrelation), ("martingale", StockMode::MartingaleConsistent)],
    );
    let convenience_kind = raw.choice("convenience", false, &[("regularity", false), ("longstaff", true)]);
    let eta = if raw.values.contains_key("eta") { raw.float("eta").map(Some) } else { Some(None) };
    let mut optional = |k: &str| if raw.values.contains_key(k) { raw.float(k).map(Some) } else { Some(None) };
    let strike = optional("K");
    let coupon = optional("c");
    let omega = optional("omega");
    let w = [optional("w_S"), optional("w_P"), optional("w_CB")];
    let out_dir = raw.text("out_dir").map(PathBuf::from);

    let convenience = match (convenience_kind?, eta?) {
        (false, None) => ConvenienceMode::Regularity,
        (false, Some(_)) => {
            raw.err("eta", "only used with convenience = longstaff");
            return None;
        }
        (true, Some(eta)) => ConvenienceMode::LongstaffIndependent { eta },
        (true, None) => {
            raw.err("eta", "required with convenience = longstaff");
            return None;
        }
    };
    let weights = match w {
        [Some(None), Some(None), Some(None)] => None,
        [Some(Some(stock)), Some(Some(bond)), Some(Some(coupon_bond))] => {
            let pw = PortfolioWeights { stock, bond, coupon_bond };
            if pw.validate().is_err() {
                raw.err("w_S", "portfolio weights must sum to 1");
                return None;
            }
            Some(pw)
        }
        _ => {
            raw.err("w_S", "set all of w_S, w_P and w_CB or none");
            return None;
        }
    };
    let [a_r, b_r, sigma_r, a_theta, b_theta, sigma_theta, sigma_s, sigma_chi, f, r0, theta0, s0, chi0, gamma0] = nums;
    let (horizon, dt) = (horizon?, dt?);
    if !(horizon > 0.0) {
        raw.err("T", "must be positive");
    }
    if !(dt > 0.0) || dt > horizon {
        raw.err("dt", "must be positive and at most T");
    }
    if let Some(strike) = strike? {
        if strike < 0.0 {
            raw.err("K", "must be >= 0");
        }
    }
    let rhos: Vec<f64> = rhos.into_iter().collect::<Option<_>>()?;
    let correlation = match CorrelationSpec::new(rhos[0], rhos[1], rhos[2], rhos[3], rhos[4], rhos[5]) {
        Ok(c) => c,
        Err(e) => {
            raw.err("rho_*", e.to_string());
            return None;
        }
    };
    let params = ModelParams {
        a_r: a_r?,
        b_r: b_r?,
        sigma_r: sigma_r?,
        a_theta: a_theta?,
        b_theta: b_theta?,
        sigma_theta: sigma_theta?,
        sigma_s: sigma_s?,
        sigma_chi: sigma_chi?,
        f: f?,
        r0: r0?,
        theta0: theta0?,
        s0: s0?,
        chi0: chi0?,
        gamma0: gamma0?,
        bond_maturity: bond_maturity?,
        correlation,
    };
    let mode = ModeFlags { short_rate: short_rate?, stock: stock?, convenience };
    if let Err(e) = params.validate(&mode) {
        let key = match &e {
            esg_core::EsgError::InvalidParameter { name, .. } => (*name).to_string(),
            esg_core::EsgError::ZeroRhoRGamma => "rho_rGamma".into(),
            esg_core::EsgError::ThetaUnderflow { .. } => "theta0".into(),
            _ => "parameters".into(),
        };
        raw.err(&key, e.to_string());
    }
    let grid = TimeGrid::with_dt(horizon, dt).ok()?;
    let simulation = SimulationConfig {
        grid,
        n_paths: n_paths?,
        scheme: scheme?,
        antithetic: antithetic?,
        seed: seed?,
        mode,
        store_paths: store_paths?,
        workers: workers?,
        max_failure_rate: max_failure_rate?,
    };
    if let Err(e) = simulation.validate() {
        raw.err("n_paths", e.to_string());
    }
    if !raw.errors.is_empty() {
        return None;
    }
    Some(RunConfig {
        params,
        simulation,
        horizon,
        dt,
        instruments: Instruments { strike: strike?, coupon: coupon?, omega: omega?, weights },
        out_dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const EXAMPLE: &str = "\
# worked example
a_r = 0.02
b_r = 0.04
sigma_r = 0.01
a_theta = 0.05
b_theta = 0.01
sigma_theta = 0.01
sigma_S = 0.2
sigma_chi = 0.01
f = 0.1
r0 = 0.02
theta0 = 0.3
S0 = 1
chi0 = 0.05
gamma0 = 0.01
rho_rS = 0.6
rho_rChi = 0.7
rho_rGamma = 0.5
rho_SChi = 0.1
rho_SGamma = 0.3
rho_ChiGamma = 0.1
n_paths = 2500
seed = 42
";

    #[test]
    fn example_matches_worked_parameters() {
        let cfg = parse_config(EXAMPLE).unwrap();
        assert_eq!(cfg.params, ModelParams::baseline());
        assert_eq!(cfg.simulation.grid.steps(), 100);
        assert_eq!(cfg.simulation.scheme, SchemeKind::Milstein2);
        assert!(cfg.simulation.antithetic);
        assert_eq!((cfg.horizon, cfg.dt), (1.0, 0.01));
        assert_eq!(cfg.simulation.mode, ModeFlags::default());
    }

    #[test]
    fn empty_file_lists_required_keys() {
        let err = parse_config("").unwrap_err();
        let keys: Vec<&str> = err.diagnostics.iter().map(|d| d.key.as_str()).collect();
        assert_eq!(keys, REQUIRED);
    }

    #[test]
    fn out_of_range_correlation_names_the_key() {
        let text = EXAMPLE.replace("rho_rS = 0.6", "rho_rS = 1.5");
        let err = parse_config(&text).unwrap_err();
        assert_eq!(err.diagnostics.len(), 1);
        assert_eq!(err.diagnostics[0].key, "rho_rS");
        assert_eq!(err.diagnostics[0].line, Some(16));
    }

    #[test]
    fn unknown_and_duplicate_keys_carry_lines() {
        let text = format!("{EXAMPLE}colour = blue\nseed = 3\n");
        let err = parse_config(&text).unwrap_err();
        let lines: Vec<Option<usize>> = err.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, [Some(24), Some(25)]);
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn mode_and_instrument_checks() {
        let text = format!("{EXAMPLE}convenience = longstaff\n");
        assert_eq!(parse_config(&text).unwrap_err().diagnostics[0].key, "eta");
        let text = format!("{EXAMPLE}w_S = 0.5\n");
        assert!(parse_config(&text).is_err());
        let text = format!("{EXAMPLE}stock = martingale\n");
        assert_eq!(parse_config(&text).unwrap_err().diagnostics[0].key, "rho_rS");
        let text = format!("{EXAMPLE}antithetic = off\nn_paths = 3\n").replace("n_paths = 2500\n", "");
        assert!(!parse_config(&text).unwrap().simulation.antithetic);
    }

    #[test]
    fn written_config_parses_back() {
        let mut cfg = parse_config(EXAMPLE).unwrap();
        cfg.instruments = Instruments {
            strike: Some(1.0),
            coupon: Some(0.1),
            omega: Some(0.5),
            weights: Some(PortfolioWeights { stock: 0.15, bond: 0.65, coupon_bond: 0.2 }),
        };
        assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }

    proptest! {
        #[test]
        fn round_trip(
            a_r in 0.0f64..0.1, sigma_r in 0.0f64..0.1, theta0 in 0.01f64..1.0, dt in 0.001f64..0.5,
            seed in any::<u64>(), n in 2usize..100_000, composite in any::<bool>(), eta in -0.1f64..0.1,
        ) {
            let mut text = EXAMPLE
                .replace("a_r = 0.02", &format!("a_r = {a_r}"))
                .replace("sigma_r = 0.01", &format!("sigma_r = {sigma_r}"))
                .replace("theta0 = 0.3", &format!("theta0 = {theta0}"))
                .replace("seed = 42", &format!("seed = {seed}"))
                .replace("n_paths = 2500", &format!("n_paths = {}", 2 * n));
            text.push_str(&format!("dt = {dt}\n"));
            if composite {
                text.push_str(&format!("short_rate = composite\nconvenience = longstaff\neta = {eta}\n"));
            }
            let first = parse_config(&text).unwrap();
            let again = parse_config(&first.to_text()).unwrap();
            prop_assert_eq!(again, first);
        }
    }
}
