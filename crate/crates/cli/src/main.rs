//! `esg`: command-line driver for the scenario generator.
//!
//! Exit status is 0 on success, 2 for configuration errors and 3 for numerical
//! failures such as an exceeded path-failure rate.

mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use esg_core::analytic::{kim_put, longstaff_cb, zcb_price, KimInputs};
use esg_core::dynamics::{feller_check, ShortRateMode};
use esg_core::engine::{
    asymptotic_moments, cb_from, longstaff_inputs, portfolio_samples, put_from, simulate, zcb_prefix, PricingResult,
    SimulationConfig, SimulationOutput, StorePaths,
};
use esg_core::schemes::SchemeKind;
use esg_core::EsgError;

use config::{parse_config, ConfigError, RunConfig};
use output::{histogram, write_atomic, Cell, Table};

#[derive(Parser, Debug)]
#[command(name = "esg", version, about = "Five-factor economic scenario generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Directory for all outputs; overrides `out_dir` in the file.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Instrument {
    Zcb,
    Cb,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a configuration, then report the Feller conditions.
    Validate(Common),
    /// Simulate paths and write per-path functionals.
    Simulate(Common),
    /// Zero-coupon bond by E[D_T] and E[D_T P_T].
    PriceZcb {
        #[command(flatten)]
        common: Common,
        /// Closed form only.
        #[arg(long)]
        analytic: bool,
    },
    /// European put on the stock, with the deflated-stock martingale check.
    PricePut {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        analytic: bool,
    },
    /// Defaultable coupon bond.
    PriceCb {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        analytic: bool,
    },
    /// Estimates over a doubling ladder of path counts for several schemes.
    Converge {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "euler,milstein,milstein2")]
        schemes: Vec<String>,
        #[arg(long, default_value_t = 1_000_000)]
        max_paths: usize,
        #[arg(long, value_enum, default_value_t = Instrument::Zcb)]
        instrument: Instrument,
    },
    /// Long-horizon moments of r and theta.
    Asymptotics {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 500.0)]
        horizon: f64,
    },
    /// Portfolio histogram under plain and antithetic sampling.
    Portfolio(Common),
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Engine(#[from] EsgError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Engine(e) => match e {
                EsgError::FailureRateExceeded { .. }
                | EsgError::NonFiniteState
                | EsgError::ThetaUnderflow { .. }
                | EsgError::DegenerateResidual(_)
                | EsgError::FormulaInapplicable(_) => 3,
                _ => 2,
            },
            CliError::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Timings and counters collected for the manifest.
struct Run {
    subcommand: &'static str,
    config: RunConfig,
    out_dir: PathBuf,
    started: Instant,
    phases: Vec<(String, f64)>,
    n_effective: Option<usize>,
    diagnostics: serde_json::Value,
    outputs: Vec<String>,
}

impl Run {
    fn phase<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.phases.push((name.to_string(), t.elapsed().as_secs_f64()));
        out
    }

    fn record(&mut self, out: &SimulationOutput) {
        self.n_effective = Some(self.n_effective.unwrap_or(0) + out.n_effective());
        let d = json!({
            "failed_paths": out.failures.len(),
            "theta_floor_hits": out.theta_floor_hits(),
            "truncations": out.truncations(),
            "negative_d_paths": out.negative_d_paths(),
            "negative_chi_paths": out.negative_chi_paths(),
        });
        match &mut self.diagnostics {
            serde_json::Value::Array(v) => v.push(d),
            _ => self.diagnostics = json!([d]),
        }
    }

    fn write_table(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let path = self.out_dir.join(name);
        table.write(&path).map_err(io_err(format!("writing {}", path.display())))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(self) -> Result<(), CliError> {
        let entries: serde_json::Map<String, serde_json::Value> =
            self.config.entries().into_iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() - self.started.elapsed().as_secs_f64())
            .unwrap_or(0.0);
        let manifest = json!({
            "artifact": "esg",
            "artifact_version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "seed": self.config.simulation.seed,
            "config": entries,
            "started_unix": started_unix,
            "wall_clock_seconds": self.started.elapsed().as_secs_f64(),
            "phases": self.phases.iter().map(|(n, s)| json!({"name": n, "seconds": s})).collect::<Vec<_>>(),
            "n_effective": self.n_effective,
            "diagnostics": self.diagnostics,
            "outputs": self.outputs,
        });
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&path, text.as_bytes()).map_err(io_err(format!("writing {}", path.display())))
    }
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&common.config).map_err(|source| {
        CliError::Config(ConfigError {
            diagnostics: vec![config::Diagnostic {
                line: None,
                key: common.config.display().to_string(),
                message: format!("cannot read: {source}"),
            }],
        })
    })?;
    let mut cfg = parse_config(&text)?;
    if let Ok(v) = std::env::var("ESG_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => cfg.simulation.workers = Some(n),
            _ => {
                return Err(CliError::Config(ConfigError {
                    diagnostics: vec![config::Diagnostic {
                        line: None,
                        key: "ESG_THREADS".into(),
                        message: format!("expected a positive integer, got {v:?}"),
                    }],
                }))
            }
        }
    }
    Ok(cfg)
}

fn start(subcommand: &'static str, common: &Common) -> Result<Run, CliError> {
    let config = load(common)?;
    let out_dir = common.out_dir.clone().or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    Ok(Run {
        subcommand,
        config,
        out_dir,
        started: Instant::now(),
        phases: Vec::new(),
        n_effective: None,
        diagnostics: serde_json::Value::Null,
        outputs: Vec::new(),
    })
}

fn opt(x: Option<f64>) -> Cell {
    Cell::Num(x.unwrap_or(f64::NAN))
}

fn cmd_validate(common: &Common) -> Result<(), CliError> {
    let cfg = load(common)?;
    let feller = feller_check(&cfg.params, &cfg.simulation.mode);
    println!("configuration ok: {} paths, {} steps of {}", cfg.simulation.n_paths, cfg.simulation.grid.steps(), cfg.simulation.grid.dt());
    for (name, c) in [("r", feller.r), ("theta", feller.theta), ("chi", feller.chi)] {
        let at = if c.state_dependent { " (at t = 0)" } else { "" };
        println!("feller {name}: {} > {} is {}{at}", c.lhs, c.rhs, c.holds);
    }
    Ok(())
}

fn cmd_simulate(common: &Common) -> Result<(), CliError> {
    let mut run = start("simulate", common)?;
    let (sim, params) = (run.config.simulation, run.config.params);
    let out = run.phase("simulate", || simulate(&sim, &params))?;
    run.record(&out);
    let mut t = Table::new(&[
        "path", "r", "theta", "B", "P", "S", "chi", "gamma", "D", "int_D", "int_chiD", "truncations", "negative_D",
    ]);
    for p in &out.paths {
        let s = p.terminal;
        t.push(vec![
            p.index.into(),
            s.r.into(),
            s.theta.into(),
            s.b.into(),
            s.p.into(),
            s.s.into(),
            s.chi.into(),
            s.gamma.into(),
            s.d.into(),
            p.int_d.into(),
            p.int_chi_d.into(),
            (p.diagnostics.truncations as usize).into(),
            usize::from(p.diagnostics.negative_d).into(),
        ]);
    }
    run.write_table("paths.csv", &t)?;
    if sim.store_paths == StorePaths::FullPath {
        let mut f = Table::new(&["path", "step", "t", "r", "theta", "B", "P", "S", "chi", "gamma", "D"]);
        for p in &out.paths {
            for (n, x) in p.path.iter().flatten().enumerate() {
                let mut row: Vec<Cell> = vec![p.index.into(), n.into(), sim.grid.time(n).into()];
                row.extend(x.iter().map(|v| Cell::Num(*v)));
                f.push(row);
            }
        }
        run.write_table("full_paths.csv", &f)?;
    }
    println!("simulated {} of {} paths", out.n_effective(), out.n_requested);
    run.finish()
}

fn zcb_header() -> Table {
    Table::new(&["n_paths", "E_D", "E_DP", "analytic", "diff_D", "diff_DP", "se", "ci_low", "ci_high"])
}

fn zcb_row(n: usize, d: &PricingResult, dp: &PricingResult, analytic: f64) -> Vec<Cell> {
    vec![
        n.into(),
        d.estimate.into(),
        dp.estimate.into(),
        analytic.into(),
        (d.estimate - analytic).into(),
        (dp.estimate - analytic).into(),
        d.standard_error.into(),
        d.ci_low.into(),
        d.ci_high.into(),
    ]
}

fn cmd_price_zcb(common: &Common, analytic_only: bool) -> Result<(), CliError> {
    let mut run = start("price-zcb", common)?;
    let (sim, params) = (run.config.simulation, run.config.params);
    let analytic = zcb_price(&params.bond(), 0.0, params.bond_maturity, params.r0);
    if analytic_only {
        let mut t = Table::new(&["maturity", "r0", "analytic"]);
        t.push(vec![params.bond_maturity.into(), params.r0.into(), analytic.into()]);
        run.write_table("price_zcb_analytic.csv", &t)?;
        println!("P(0, {}) = {}", params.bond_maturity, output::fmt17(analytic));
        return run.finish();
    }
    let out = run.phase("simulate", || simulate(&sim, &params))?;
    run.record(&out);
    let z = zcb_prefix(&out, &params, sim.n_paths)?;
    let mut t = zcb_header();
    t.push(zcb_row(sim.n_paths, &z.deflator, &z.deflated_bond, analytic));
    run.write_table("price_zcb.csv", &t)?;
    println!(
        "E[D] = {} E[DP] = {} analytic = {}",
        output::fmt17(z.deflator.estimate),
        output::fmt17(z.deflated_bond.estimate),
        output::fmt17(analytic)
    );
    run.finish()
}

fn kim_reference(cfg: &RunConfig, strike: f64) -> Option<f64> {
    let p = &cfg.params;
    let inputs = KimInputs {
        s0: p.s0,
        strike,
        maturity: cfg.horizon,
        sigma_s: p.sigma_s,
        rho_r_s: p.correlation.rho_r_s(),
        r0: p.r0,
        bond: p.bond(),
    };
    kim_put(&inputs).ok()
}

fn cmd_price_put(common: &Common, analytic_only: bool) -> Result<(), CliError> {
    let mut run = start("price-put", common)?;
    let strike = run.config.strike()?;
    let kim = kim_reference(&run.config, strike);
    if analytic_only {
        let mut t = Table::new(&["strike", "kim_reference"]);
        t.push(vec![strike.into(), opt(kim)]);
        run.write_table("price_put_analytic.csv", &t)?;
        return run.finish();
    }
    let (sim, params) = (run.config.simulation, run.config.params);
    let out = run.phase("simulate", || simulate(&sim, &params))?;
    run.record(&out);
    let r = put_from(&out, &params, strike, sim.n_paths)?;
    let mut t = Table::new(&[
        "n_paths", "strike", "put", "se", "ci_low", "ci_high", "eq21_low", "eq21_high", "E_DS", "se_DS", "kim_reference",
    ]);
    t.push(vec![
        sim.n_paths.into(),
        strike.into(),
        r.put.estimate.into(),
        r.put.standard_error.into(),
        r.put.ci_low.into(),
        r.put.ci_high.into(),
        r.put.intervals.literal.0.into(),
        r.put.intervals.literal.1.into(),
        r.deflated_stock.estimate.into(),
        r.deflated_stock.standard_error.into(),
        opt(kim),
    ]);
    run.write_table("price_put.csv", &t)?;
    println!("put = {} E[DS] = {}", output::fmt17(r.put.estimate), output::fmt17(r.deflated_stock.estimate));
    run.finish()
}

fn cb_analytic(cfg: &RunConfig, c: f64, omega: f64) -> Result<f64, CliError> {
    let inputs = longstaff_inputs(&cfg.params, &cfg.simulation.mode, c, omega)?;
    Ok(longstaff_cb(&inputs, &cfg.params.bond(), cfg.horizon)?)
}

fn require_composite(sim: &SimulationConfig) -> Result<(), CliError> {
    if sim.mode.short_rate != ShortRateMode::Composite {
        return Err(CliError::Config(ConfigError {
            diagnostics: vec![config::Diagnostic {
                line: None,
                key: "short_rate".into(),
                message: "coupon-bond pricing needs short_rate = composite".into(),
            }],
        }));
    }
    Ok(())
}

fn cmd_price_cb(common: &Common, analytic_only: bool) -> Result<(), CliError> {
    let mut run = start("price-cb", common)?;
    let (c, omega) = run.config.coupon_terms()?;
    if analytic_only {
        let a = cb_analytic(&run.config, c, omega)?;
        let mut t = Table::new(&["c", "omega", "analytic"]);
        t.push(vec![c.into(), omega.into(), a.into()]);
        run.write_table("price_cb_analytic.csv", &t)?;
        println!("CB = {}", output::fmt17(a));
        return run.finish();
    }
    let (sim, params) = (run.config.simulation, run.config.params);
    require_composite(&sim)?;
    let out = run.phase("simulate", || simulate(&sim, &params))?;
    run.record(&out);
    let cb = cb_from(&out, &sim, &params, c, omega, sim.n_paths)?;
    if cb.negative_chi_paths > 0 {
        eprintln!("warning: chi went negative on {} paths", cb.negative_chi_paths);
    }
    let mut t = Table::new(&["n_paths", "c", "omega", "CB", "analytic", "diff", "se", "ci_low", "ci_high", "negative_chi_paths"]);
    let a = cb.price.analytic_reference;
    t.push(vec![
        sim.n_paths.into(),
        c.into(),
        omega.into(),
        cb.price.estimate.into(),
        opt(a),
        opt(a.map(|a| cb.price.estimate - a)),
        cb.price.standard_error.into(),
        cb.price.ci_low.into(),
        cb.price.ci_high.into(),
        cb.negative_chi_paths.into(),
    ]);
    run.write_table("price_cb.csv", &t)?;
    println!("CB = {}", output::fmt17(cb.price.estimate));
    run.finish()
}

/// `2500, 5000, ...` up to `max`, or just `max` when it is smaller.
fn ladder(max: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut n = 2500;
    while n <= max {
        v.push(n);
        n *= 2;
    }
    if v.is_empty() {
        v.push(max);
    }
    v
}

fn cmd_converge(common: &Common, schemes: &[String], max_paths: usize, instrument: Instrument) -> Result<(), CliError> {
    let mut run = start("converge", common)?;
    let mut kinds = Vec::new();
    for s in schemes {
        let k = SchemeKind::parse(s.trim()).ok_or_else(|| {
            CliError::Config(ConfigError {
                diagnostics: vec![config::Diagnostic {
                    line: None,
                    key: "--schemes".into(),
                    message: format!("unknown scheme {s:?}"),
                }],
            })
        })?;
        kinds.push(k);
    }
    let params = run.config.params;
    let rungs = ladder(max_paths);
    let top = *rungs.last().expect("non-empty ladder");
    let (mut t, cb_terms) = match instrument {
        Instrument::Zcb => {
            let mut t = zcb_header();
            t.header.insert(0, "scheme".into());
            (t, None)
        }
        Instrument::Cb => {
            require_composite(&run.config.simulation)?;
            let t = Table::new(&["scheme", "n_paths", "CB", "analytic", "diff", "se", "ci_low", "ci_high"]);
            (t, Some(run.config.coupon_terms()?))
        }
    };
    for kind in kinds {
        let sim = SimulationConfig { scheme: kind, n_paths: top, ..run.config.simulation };
        sim.validate()?;
        let out = run.phase(&format!("simulate {}", kind.name()), || simulate(&sim, &params))?;
        run.record(&out);
        for &n in &rungs {
            let mut row: Vec<Cell> = vec![kind.name().into()];
            match cb_terms {
                None => {
                    let z = zcb_prefix(&out, &params, n)?;
                    row.extend(zcb_row(n, &z.deflator, &z.deflated_bond, z.analytic));
                }
                Some((c, omega)) => {
                    let cb = cb_from(&out, &sim, &params, c, omega, n)?;
                    let a = cb.price.analytic_reference;
                    row.extend([
                        n.into(),
                        cb.price.estimate.into(),
                        opt(a),
                        opt(a.map(|a| cb.price.estimate - a)),
                        cb.price.standard_error.into(),
                        cb.price.ci_low.into(),
                        cb.price.ci_high.into(),
                    ]);
                }
            }
            t.push(row);
        }
    }
    run.write_table("converge.csv", &t)?;
    println!("wrote {} rows", t.rows.len());
    run.finish()
}

fn cmd_asymptotics(common: &Common, horizon: f64) -> Result<(), CliError> {
    let mut run = start("asymptotics", common)?;
    if !(horizon > 0.0) {
        return Err(CliError::Config(ConfigError {
            diagnostics: vec![config::Diagnostic { line: None, key: "--horizon".into(), message: "must be positive".into() }],
        }));
    }
    let (sim, params) = (run.config.simulation, run.config.params);
    let rep = run.phase("simulate", || asymptotic_moments(&sim, &params, horizon))?;
    run.n_effective = Some(rep.n_effective);
    let mut t = Table::new(&[
        "variable", "horizon", "empirical_mean", "empirical_var", "mean_se", "limit_mean", "limit_var", "finite_mean",
        "finite_var",
    ]);
    for (name, m) in [("theta", rep.theta), ("r", rep.r)] {
        t.push(vec![
            name.into(),
            rep.horizon.into(),
            m.empirical_mean.into(),
            m.empirical_var.into(),
            m.mean_se.into(),
            m.limit_mean.into(),
            m.limit_var.into(),
            m.finite_mean.into(),
            m.finite_var.into(),
        ]);
    }
    run.write_table("asymptotics.csv", &t)?;
    println!(
        "theta at t = {}: mean {} (limit {}), variance {} (limit {})",
        rep.horizon, rep.theta.empirical_mean, rep.theta.limit_mean, rep.theta.empirical_var, rep.theta.limit_var
    );
    run.finish()
}

fn cmd_portfolio(common: &Common) -> Result<(), CliError> {
    let mut run = start("portfolio", common)?;
    let weights = run.config.weights()?;
    let (c, omega) = if weights.coupon_bond != 0.0 { run.config.coupon_terms()? } else { (0.0, 1.0) };
    let (sim, params) = (run.config.simulation, run.config.params);
    let s = run.phase("simulate", || portfolio_samples(&sim, &params, weights, c, omega))?;
    run.n_effective = Some(s.plain.len() + s.antithetic.len());
    let h = histogram(&s.plain, &s.antithetic).map_err(|m| CliError::Engine(EsgError::InvalidConfig(m)))?;
    run.write_table("histogram.csv", &h.table())?;
    let mut t = Table::new(&["sampling", "n_effective", "mean", "se", "variance_of_mean"]);
    for (name, r) in [("plain", s.plain_estimate), ("antithetic", s.antithetic_estimate)] {
        t.push(vec![
            name.into(),
            r.n_effective.into(),
            r.estimate.into(),
            r.standard_error.into(),
            r.intervals.var_of_mean.into(),
        ]);
    }
    run.write_table("portfolio.csv", &t)?;
    println!(
        "portfolio mean plain {} (se {}), antithetic {} (se {})",
        s.plain_estimate.estimate,
        s.plain_estimate.standard_error,
        s.antithetic_estimate.estimate,
        s.antithetic_estimate.standard_error
    );
    run.finish()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate(c) => cmd_validate(c),
        Command::Simulate(c) => cmd_simulate(c),
        Command::PriceZcb { common, analytic } => cmd_price_zcb(common, *analytic),
        Command::PricePut { common, analytic } => cmd_price_put(common, *analytic),
        Command::PriceCb { common, analytic } => cmd_price_cb(common, *analytic),
        Command::Converge { common, schemes, max_paths, instrument } => {
            cmd_converge(common, schemes, *max_paths, *instrument)
        }
        Command::Asymptotics { common, horizon } => cmd_asymptotics(common, *horizon),
        Command::Portfolio(c) => cmd_portfolio(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
