//! Batch front end for the small-endowment expansion pipeline.
//!
//! Reads an INI-style configuration (`[market]` and `[numerics]`
//! sections), applies command-line overrides, runs one pipeline stage, and
//! writes machine-readable artifacts — CSV for tables and path matrices,
//! JSON for scalar summaries — into the output directory. Every artifact
//! embeds the configuration digest and seed.
//!
//! Commands:
//!
//! - `validate`: check the configuration and print derived quantities.
//! - `simulate`: dump the simulated ensemble, one CSV matrix per field.
//! - `project`: run a projection backend and dump its per-path components.
//! - `moments`: estimate terminal moments, write `moments.json`.
//! - `expand`: write the value / certainty-equivalent table.
//! - `price`: write the certainty-equivalent (price) table.
//! - `verify`: run the full primal/dual sandwich and residual analysis;
//!   `--cross-backend` additionally requires the regression backend to
//!   reproduce the closed-form moments on the same paths.
//!
//! Exit status: 0 on success (and on a passing `verify`), 1 on
//! configuration, validation, i/o, or numerical errors, 2 when `verify`
//! ran to completion but the residual analysis or the cross-backend
//! comparison failed.
//!
//! The output directory is `--out` when given, else the `EPSLOG_OUT`
//! environment variable, else the current directory. With `--single-thread`
//! (or `parallel = false` in the file) runs with the same configuration
//! and seed produce byte-identical artifacts; multi-threaded runs produce
//! the same numbers path for path by construction of the chunked
//! accumulators.

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use epslog_core::bounds::residual_analysis;
use epslog_core::kw::{closed_form_projection, regression_projection, RegressionBasis};
use epslog_core::model::{derive_numeraire, horizon_truncation, validate_spec};
use epslog_core::paths::{accumulate_endowment, simulate_paths, TimeGrid};
use epslog_core::pipeline::{stream_closed_form, stream_regression};
use epslog_core::{Error, Result};

use config::{parse_eps_grid, Overrides, RunConfig};
use report::{fmt_f, Meta};

/// Projection backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    /// Exact conditional expectations for the Ornstein-Uhlenbeck market.
    ClosedForm,
    /// Least-squares Monte Carlo on the span of the closed-form hedge
    /// rate; fits on the first half of the ensemble, evaluates on the
    /// second.
    Regression,
}

/// Encoding of tabular artifacts. Scalar summaries (`moments.json`,
/// `residual.json`) are always JSON; path matrices are always CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Comma-separated tables with a `#` identity comment.
    Csv,
    /// The same rows wrapped in a JSON envelope.
    Json,
}

#[derive(Parser)]
#[command(
    name = "epslog",
    version,
    about = "Quartic expansion of log-utility with a small income stream: \
             simulation, projection, bounds, and verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Configuration file with [market] and [numerics] sections.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the ensemble seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Override the number of simulated paths.
    #[arg(long, global = true, value_name = "N")]
    paths: Option<usize>,

    /// Override the time-step size.
    #[arg(long, global = true, value_name = "F")]
    dt: Option<f64>,

    /// Override the horizon-truncation tolerance.
    #[arg(long, global = true, value_name = "F")]
    horizon_tol: Option<f64>,

    /// Position sizes, comma-separated and strictly descending.
    #[arg(
        long,
        global = true,
        value_name = "LIST",
        default_value = "0.2,0.1,0.05,0.025"
    )]
    eps_grid: String,

    /// Projection backend for project/moments/expand/price.
    #[arg(long, global = true, value_enum, default_value_t = Backend::ClosedForm)]
    backend: Backend,

    /// Output directory (else $EPSLOG_OUT, else the current directory).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Encoding for tabular artifacts.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Admit |rho| = 1 and force the exactly-hedgeable degenerate market.
    #[arg(long, global = true)]
    complete_market_mode: bool,

    /// Disable path-level parallelism for byte-reproducible artifacts.
    #[arg(long, global = true)]
    single_thread: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the configuration and print derived market quantities.
    Validate,
    /// Simulate the ensemble and dump one CSV matrix per field.
    Simulate,
    /// Run a projection backend and dump its per-path components.
    Project,
    /// Estimate terminal moments and write the JSON summary.
    Moments,
    /// Evaluate the quartic value and certainty-equivalent table.
    Expand,
    /// Write the certainty-equivalent (price) table.
    Price,
    /// Run the primal/dual sandwich and the residual analysis.
    Verify {
        /// Also run the regression backend on the same ensemble and
        /// require its moments to match the closed-form reference within
        /// four joint standard errors.
        #[arg(long)]
        cross_backend: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(1)
        }
    }
}

/// Loads the configuration file (or the defaults) and applies flag
/// overrides.
fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::defaults(),
    };
    cfg.apply_overrides(&Overrides {
        seed: cli.seed,
        n_paths: cli.paths,
        dt: cli.dt,
        horizon_tol: cli.horizon_tol,
        complete_market_mode: cli.complete_market_mode,
        single_thread: cli.single_thread,
    });
    Ok(cfg)
}

/// Output directory: `--out`, else `$EPSLOG_OUT`, else `.`.
fn out_dir(cli: &Cli) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| std::env::var_os("EPSLOG_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Validates and reports warnings to stderr, returning the config
/// unchanged on success.
fn validate_and_warn(cfg: &RunConfig) -> Result<()> {
    let validated = validate_spec(&cfg.market, &cfg.numerics)?;
    for w in &validated.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// The regression backend's feature set: the span of the closed-form
/// hedge rate for this market. Richer bases are available through the
/// library API.
fn default_basis() -> RegressionBasis<f64> {
    RegressionBasis::linear_pair()
}

/// Writes one per-path matrix artifact and echoes its path.
fn dump_matrix<'a, F>(
    dir: &std::path::Path,
    file: &str,
    field: &str,
    n_rows: usize,
    row: F,
    grid: &TimeGrid<f64>,
    meta: &Meta,
) -> Result<()>
where
    F: Fn(usize) -> &'a [f64],
{
    let text = report::matrix_csv(field, n_rows, row, grid, meta);
    let path = report::write_artifact(dir, file, &text)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Guards the one backend configuration the estimator cannot honor:
/// antithetic pairing requires the held-out evaluation half to start on
/// an even path index.
fn check_regression_pairing(cfg: &RunConfig) -> Result<()> {
    if cfg.numerics.antithetic && (cfg.numerics.n_paths / 2) % 2 != 0 {
        return Err(Error::ConfigParseError {
            line: 0,
            reason: format!(
                "antithetic pairing with the regression backend needs an even fit half; \
                 n_paths = {} puts a pair boundary inside the split",
                cfg.numerics.n_paths
            ),
        });
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match cli.command {
        Command::Validate => cmd_validate(cli),
        Command::Simulate => cmd_simulate(cli),
        Command::Project => cmd_project(cli),
        Command::Moments => cmd_moments(cli),
        Command::Expand | Command::Price => cmd_table(cli),
        Command::Verify { cross_backend } => cmd_verify(cli, cross_backend),
    }
}

fn cmd_validate(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    validate_and_warn(&cfg)?;
    let num = derive_numeraire(&cfg.market);
    let t_max = horizon_truncation(&cfg.market, cfg.numerics.dt, cfg.numerics.horizon_tol)?;
    let grid = TimeGrid::new(cfg.numerics.dt, t_max);
    println!("config ok (hash {})", cfg.config_hash());
    println!(
        "pi_star = {}, mpr = {}, eta = {}",
        fmt_f(num.pi_star),
        fmt_f(num.mpr),
        fmt_f(num.eta)
    );
    println!(
        "t_max = {} ({} steps of dt = {}), n_paths = {}, seed = {}",
        fmt_f(grid.t_max()),
        grid.n_steps,
        fmt_f(grid.dt),
        cfg.numerics.n_paths,
        cfg.numerics.seed
    );
    Ok(true)
}

fn cmd_simulate(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    validate_and_warn(&cfg)?;
    let num = derive_numeraire(&cfg.market);
    let t_max = horizon_truncation(&cfg.market, cfg.numerics.dt, cfg.numerics.horizon_tol)?;
    let mut bundle = simulate_paths(&cfg.market, &num, &cfg.numerics, t_max)?;
    accumulate_endowment(&cfg.market, &mut bundle);

    let hash = cfg.config_hash();
    let meta = Meta {
        config_hash: &hash,
        seed: cfg.numerics.seed,
    };
    let dir = out_dir(cli);
    let n = bundle.n_paths;
    dump_matrix(&dir, "paths_w1.csv", "w1", n, |p| bundle.w1_row(p), &bundle.grid, &meta)?;
    dump_matrix(&dir, "paths_w2.csv", "w2", n, |p| bundle.w2_row(p), &bundle.grid, &meta)?;
    dump_matrix(&dir, "paths_z.csv", "z", n, |p| bundle.z_row(p), &bundle.grid, &meta)?;
    dump_matrix(&dir, "paths_s0.csv", "s0", n, |p| bundle.s0_row(p), &bundle.grid, &meta)?;
    dump_matrix(&dir, "paths_f.csv", "f", n, |p| bundle.f_row(p), &bundle.grid, &meta)?;
    println!(
        "simulated {} paths x {} steps (t_max = {})",
        bundle.n_paths,
        bundle.grid.n_steps,
        fmt_f(bundle.grid.t_max())
    );
    Ok(true)
}

fn cmd_project(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    validate_and_warn(&cfg)?;
    let num = derive_numeraire(&cfg.market);
    let t_max = horizon_truncation(&cfg.market, cfg.numerics.dt, cfg.numerics.horizon_tol)?;
    let mut bundle = simulate_paths(&cfg.market, &num, &cfg.numerics, t_max)?;
    accumulate_endowment(&cfg.market, &mut bundle);
    let kw = match cli.backend {
        Backend::ClosedForm => closed_form_projection(&cfg.market, &num, &bundle)?,
        Backend::Regression => {
            check_regression_pairing(&cfg)?;
            regression_projection(&cfg.market, &default_basis(), &bundle)?
        }
    };

    let hash = cfg.config_hash();
    let meta = Meta {
        config_hash: &hash,
        seed: cfg.numerics.seed,
    };
    let dir = out_dir(cli);
    let n = kw.n_paths;
    dump_matrix(&dir, "kw_delta.csv", "delta", n, |p| kw.delta_row(p), &kw.grid, &meta)?;
    dump_matrix(&dir, "kw_gamma.csv", "gamma", n, |p| kw.gamma_row(p), &kw.grid, &meta)?;
    dump_matrix(&dir, "kw_n.csv", "n", n, |p| kw.n_row(p), &kw.grid, &meta)?;
    dump_matrix(&dir, "kw_p.csv", "p", n, |p| kw.p_row(p), &kw.grid, &meta)?;
    dump_matrix(&dir, "kw_theta_delta.csv", "theta_delta", n, |p| kw.theta_delta_row(p), &kw.grid, &meta)?;
    dump_matrix(&dir, "kw_theta_gamma.csv", "theta_gamma", n, |p| kw.theta_gamma_row(p), &kw.grid, &meta)?;
    println!(
        "projected {} paths with the {} backend: n0 = {}, p0 = {}, eval paths = {}",
        kw.n_paths,
        kw.backend.label(),
        fmt_f(kw.n0),
        fmt_f(kw.p0),
        kw.n_eval()
    );
    Ok(true)
}

fn cmd_moments(cli: &Cli) -> Result<bool> {
    let mut cfg = load_config(cli)?;
    // Moment estimation defaults to antithetic pairing (halves the
    // variance of odd terminal functionals at equal cost) unless the
    // configuration chose explicitly; verification keeps plain ensembles.
    if !cfg.was_set("numerics.antithetic") {
        cfg.numerics.antithetic = true;
    }
    let eps_grid = parse_eps_grid(&cli.eps_grid)?;
    let hash = cfg.config_hash();
    let meta = Meta {
        config_hash: &hash,
        seed: cfg.numerics.seed,
    };
    let (moments, warnings) = match cli.backend {
        Backend::ClosedForm => {
            let s = stream_closed_form(&cfg.market, &cfg.numerics, &eps_grid, false)?;
            (s.moments, s.warnings)
        }
        Backend::Regression => {
            check_regression_pairing(&cfg)?;
            let s = stream_regression(&cfg.market, &cfg.numerics, &default_basis(), &eps_grid)?;
            (s.moments, s.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let path = report::write_artifact(&out_dir(cli), "moments.json", &report::moments_json(&moments, &meta))?;
    println!("wrote {}", path.display());
    println!(
        "a1 = {} (se {}), a2 = {} (se {}), g = {} (se {}) [{}]",
        fmt_f(moments.a1),
        fmt_f(moments.se_a1),
        fmt_f(moments.a2),
        fmt_f(moments.se_a2),
        fmt_f(moments.g),
        fmt_f(moments.se_g),
        moments.backend
    );
    Ok(true)
}

/// `expand` and `price` share one pipeline invocation and differ only in
/// the table they write.
fn cmd_table(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let eps_grid = parse_eps_grid(&cli.eps_grid)?;
    let hash = cfg.config_hash();
    let meta = Meta {
        config_hash: &hash,
        seed: cfg.numerics.seed,
    };
    let (expansion, warnings) = match cli.backend {
        Backend::ClosedForm => {
            let s = stream_closed_form(&cfg.market, &cfg.numerics, &eps_grid, false)?;
            (s.expansion(), s.warnings)
        }
        Backend::Regression => {
            check_regression_pairing(&cfg)?;
            let s = stream_regression(&cfg.market, &cfg.numerics, &default_basis(), &eps_grid)?;
            (s.expansion(), s.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let (name, text) = match (&cli.command, cli.format) {
        (Command::Price, Format::Csv) => ("price.csv", report::price_csv(&expansion, &meta)),
        (Command::Price, Format::Json) => ("price.json", report::price_json(&expansion, &meta)),
        (_, Format::Csv) => ("expansion.csv", report::expansion_csv(&expansion, &meta)),
        (_, Format::Json) => ("expansion.json", report::expansion_json(&expansion, &meta)),
    };
    let path = report::write_artifact(&out_dir(cli), name, &text)?;
    println!("wrote {}", path.display());
    for row in &expansion.rows {
        println!(
            "eps = {}: u_hat = {}, ce_hat = {}, violation_frac = {}",
            fmt_f(row.eps),
            fmt_f(row.u_hat),
            fmt_f(row.ce_hat),
            fmt_f(row.violation_frac)
        );
    }
    Ok(true)
}

/// Largest absolute deviation between two moment sets in units of the
/// joint standard error; exact agreement counts as zero even when both
/// error bars vanish.
fn max_joint_z(a: &epslog_core::Moments, b: &epslog_core::Moments) -> f64 {
    let pairs = [
        (a.a1 - b.a1, a.se_a1, b.se_a1),
        (a.a2 - b.a2, a.se_a2, b.se_a2),
        (a.a3 - b.a3, a.se_a3, b.se_a3),
        (a.a4 - b.a4, a.se_a4, b.se_a4),
        (a.g - b.g, a.se_g, b.se_g),
    ];
    let mut worst = 0.0_f64;
    for (d, se_a, se_b) in pairs {
        if d == 0.0 {
            continue;
        }
        let se = (se_a * se_a + se_b * se_b).sqrt();
        let z = if se > 0.0 { d.abs() / se } else { f64::INFINITY };
        worst = worst.max(z);
    }
    worst
}

fn cmd_verify(cli: &Cli, cross_backend: bool) -> Result<bool> {
    let cfg = load_config(cli)?;
    let eps_grid = parse_eps_grid(&cli.eps_grid)?;
    let hash = cfg.config_hash();
    let meta = Meta {
        config_hash: &hash,
        seed: cfg.numerics.seed,
    };
    let dir = out_dir(cli);

    let started = Instant::now();
    let s = stream_closed_form(&cfg.market, &cfg.numerics, &eps_grid, true)?;
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    let residual = residual_analysis(&s.bounds)?;

    let (bounds_name, bounds_text) = match cli.format {
        Format::Csv => ("bounds.csv", report::bounds_csv(&s.bounds, &meta)),
        Format::Json => ("bounds.json", report::bounds_json(&s.bounds, &meta)),
    };
    let expansion = s.expansion();
    let (exp_name, exp_text) = match cli.format {
        Format::Csv => ("expansion.csv", report::expansion_csv(&expansion, &meta)),
        Format::Json => ("expansion.json", report::expansion_json(&expansion, &meta)),
    };
    for (name, text) in [
        (bounds_name, bounds_text),
        (exp_name, exp_text),
        ("moments.json", report::moments_json(&s.moments, &meta)),
        ("residual.json", report::residual_json(&residual, &meta)),
    ] {
        let path = report::write_artifact(&dir, name, &text)?;
        println!("wrote {}", path.display());
    }

    for row in &s.bounds.rows {
        println!(
            "eps = {}: u_low = {} (se {}), u_up = {} (se {}), gap/eps^4 = {}, \
             stop_frac = {}, violation_frac = {}",
            fmt_f(row.eps),
            fmt_f(row.u_low),
            fmt_f(row.se_low),
            fmt_f(row.u_up),
            fmt_f(row.se_up),
            fmt_f(row.ratio_low + row.ratio_up),
            fmt_f(row.stop_frac),
            fmt_f(row.primal_violation_frac)
        );
    }
    println!(
        "orthogonality: z_n = {}, z_p = {}",
        fmt_f(s.orthogonality.z_n()),
        fmt_f(s.orthogonality.z_p())
    );
    println!(
        "residual analysis: {} (lower-ratio decreasing: {}, gap decreasing: {}, \
         final within half: {}, sandwich: {})",
        if residual.pass { "PASS" } else { "FAIL" },
        residual.ratio_low_decreasing,
        residual.gap_decreasing,
        residual.final_within_half,
        residual.sandwich_ok
    );
    let mut pass = residual.pass;

    if cross_backend {
        check_regression_pairing(&cfg)?;
        let r = stream_regression(&cfg.market, &cfg.numerics, &default_basis(), &eps_grid)?;
        for w in &r.warnings {
            eprintln!("warning: {w}");
        }
        let path = report::write_artifact(
            &dir,
            "moments_regression.json",
            &report::moments_json(&r.moments, &meta),
        )?;
        println!("wrote {}", path.display());
        let worst = max_joint_z(&r.moments, &r.reference_moments);
        let cross_ok = worst <= 4.0;
        println!(
            "cross-backend: {} (max moment deviation = {} joint se, theta rel-l2 = {}, \
             fit paths = {})",
            if cross_ok { "PASS" } else { "FAIL" },
            fmt_f(worst),
            fmt_f(r.theta_rel_l2),
            r.n_fit
        );
        pass = pass && cross_ok;
    }

    println!(
        "verify: {} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    Ok(pass)
}
