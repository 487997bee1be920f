//! Command-line front end: single probabilities, row/matrix tables,
//! g-function traces, Charlier tables, the master-equation oracle, Monte
//! Carlo simulation, and the three-way cross-validation report.
//!
//! Conventions shared by every subcommand:
//!
//! * the rate profile comes from a JSON config file
//!   `{"lambda": <rate>, "mu": <rate>, "horizon": <number>}`,
//! * floats print with 17 significant digits in lowercase scientific
//!   notation, so identical inputs give byte-identical output,
//! * output is built in full before anything is written; a failing run
//!   never leaves a partial table behind,
//! * exit codes: 0 success, 1 configuration error, 2 the requested method
//!   does not exist for the input, 3 numerical failure.
//!
//! The truncation tolerance defaults to 1e-12, overridable by the
//! `BD_DEFAULT_TOL` environment variable, and per run by `--tol`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bd_core::charlier::charlier_eval;
use bd_core::oracle::{master_integrate, mc_simulate, Distribution, OracleError, SimConfig};
use bd_core::rates::RateProfile;
use bd_core::transition::{
    charlier_sum_with_diagnostics, finite_sum, km_homogeneous_with_diagnostics,
    transition_probability, transition_row, Formula, Method, TransitionError,
    TruncationDiagnostics, TruncationPolicy,
};
use bd_core::weinorman::{solve_closed, GFunctions, SolverConfig, WeiNormanError};

#[derive(Parser)]
#[command(name = "bd-cli", version, about = "Immigration-death transition probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One transition probability P(n -> m; t), reported as JSON.
    Transition(TransitionArgs),
    /// Cross-validate the closed forms against the master-equation oracle.
    Validate(ValidateArgs),
    /// One row of the transition matrix as CSV.
    Matrix(MatrixArgs),
    /// The g-functions over a time grid as CSV.
    Gfuncs(GfuncsArgs),
    /// A Charlier polynomial table as CSV.
    Charlier(CharlierArgs),
    /// The master-equation distribution at time t as CSV.
    Oracle(OracleArgs),
    /// Monte Carlo estimate of the distribution at time t as CSV.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Spectral sum when it exists, finite sum otherwise.
    Auto,
    /// Finite binomial-Poisson sum.
    Expr1,
    /// Spectral (Charlier) sum.
    Expr2,
    /// Homogeneous spectral kernel; constant rates only.
    Km,
    /// Truncated master-equation integration.
    #[value(alias = "oracle")]
    Master,
}

#[derive(Args)]
struct TransitionArgs {
    /// Rate profile JSON file.
    #[arg(long)]
    config: PathBuf,
    /// Start state.
    #[arg(long)]
    n: u32,
    /// End state.
    #[arg(long)]
    m: u32,
    /// Elapsed time.
    #[arg(long)]
    t: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    /// Truncation tolerance (default 1e-12, env BD_DEFAULT_TOL).
    #[arg(long)]
    tol: Option<f64>,
    /// Write output here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 15)]
    n_max: u32,
    #[arg(long, default_value_t = 15)]
    m_max: u32,
    /// Time grid start:end:step.
    #[arg(long, default_value = "0.5:2:0.5")]
    t_grid: String,
    /// Agreement tolerance applied to every method pair (defaults are
    /// per-pair: 1e-9 between closed forms, 1e-8 against the oracle,
    /// 1e-10 against the homogeneous kernel).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    config: PathBuf,
    /// Start state.
    #[arg(long)]
    n: u32,
    #[arg(long)]
    t: f64,
    /// Largest end state; default sizes the row to capture all but ~1e-12
    /// of the mass.
    #[arg(long)]
    m_max: Option<u32>,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GfuncsArgs {
    #[arg(long)]
    config: PathBuf,
    /// Time grid start:end:step.
    #[arg(long)]
    t_grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CharlierArgs {
    /// Charlier parameter (any nonzero real).
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    n_max: u32,
    #[arg(long)]
    x_max: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    config: PathBuf,
    /// Start state.
    #[arg(long)]
    n0: u32,
    #[arg(long)]
    t: f64,
    /// Fixed state-space cap (default: grow until the leak is below tol).
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Start state.
    #[arg(long)]
    n0: u32,
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 100_000)]
    n_traj: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    /// Bad config file, arguments, or environment. Exit 1.
    Config(String),
    /// The requested method does not exist for this input. Exit 2.
    Degenerate(String),
    /// A computation started but could not finish reliably. Exit 3.
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Degenerate(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Degenerate(m) | CliError::Numerical(m) => m,
        }
    }
}

fn from_transition(e: TransitionError) -> CliError {
    match e {
        TransitionError::DegenerateSpectral
        | TransitionError::WeiNorman(WeiNormanError::DegenerateSpectral) => CliError::Degenerate(
            "the spectral series (expr2) does not exist here (g3 = 0, e.g. t = 0 or mu = 0); \
             use --method expr1"
                .into(),
        ),
        TransitionError::NotHomogeneous => CliError::Degenerate(
            "the km kernel needs constant rates; use --method expr1 or expr2".into(),
        ),
        TransitionError::NonPositiveRates { lambda, mu } => CliError::Degenerate(format!(
            "the km kernel needs strictly positive rates (lambda = {lambda}, mu = {mu}); \
             use --method expr1 for pure immigration"
        )),
        TransitionError::Rate(e) | TransitionError::WeiNorman(WeiNormanError::Rate(e)) => {
            CliError::Config(e.to_string())
        }
        TransitionError::Oracle(e) => from_oracle(e),
        other => CliError::Numerical(other.to_string()),
    }
}

fn from_oracle(e: OracleError) -> CliError {
    match e {
        OracleError::Rate(e) => CliError::Config(e.to_string()),
        other => CliError::Numerical(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests land here too; those exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Transition(args) => cmd_transition(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Matrix(args) => cmd_matrix(args),
        Command::Gfuncs(args) => cmd_gfuncs(args),
        Command::Charlier(args) => cmd_charlier(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

/// 17 significant digits, lowercase scientific: enough to round-trip any
/// f64, so reruns are byte-identical.
fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn load_profile(path: &PathBuf) -> Result<RateProfile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
}

/// --tol beats BD_DEFAULT_TOL beats 1e-12.
fn resolve_tol(flag: Option<f64>) -> Result<f64, CliError> {
    let tol = match flag {
        Some(t) => t,
        None => match std::env::var("BD_DEFAULT_TOL") {
            Ok(s) => s.parse::<f64>().map_err(|_| {
                CliError::Config(format!("BD_DEFAULT_TOL is not a number: {s:?}"))
            })?,
            Err(_) => 1e-12,
        },
    };
    if !tol.is_finite() || tol <= 0.0 {
        return Err(CliError::Config(format!(
            "tolerance must be a positive finite number, got {tol}"
        )));
    }
    Ok(tol)
}

/// "start:end:step" into an inclusive grid.
fn parse_t_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("t-grid must be start:end:step, got {spec:?}"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !step.is_finite() || step <= 0.0 || end < start || !start.is_finite() || !end.is_finite() {
        return Err(bad());
    }
    let mut ts = Vec::new();
    let mut k = 0u64;
    loop {
        let t = start + k as f64 * step;
        // Half-a-step slack so 0:2:0.1 ends at 2.0 despite rounding.
        if t > end + step * 0.5 {
            return Ok(ts);
        }
        ts.push(t.min(end));
        k += 1;
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json_g_functions(g: &GFunctions) -> String {
    format!(
        "{{\"t\": {}, \"g1\": {}, \"g2\": {}, \"g3\": {}, \"g4\": {}, \"p\": {}, \"nu\": {}}}",
        fmt17(g.t),
        fmt17(g.g1),
        fmt17(g.g2),
        fmt17(g.g3),
        fmt17(g.g4),
        fmt17(g.survival_p()),
        fmt17(g.nu()),
    )
}

fn json_diagnostics(d: &Option<TruncationDiagnostics>) -> String {
    match d {
        Some(d) => format!(
            "{{\"x_max_used\": {}, \"remainder_estimate\": {}}}",
            d.x_max_used,
            fmt17(d.remainder_estimate),
        ),
        None => "null".into(),
    }
}

fn cmd_transition(args: TransitionArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let tol = resolve_tol(args.tol)?;
    let policy = TruncationPolicy {
        abs_tol: tol,
        ..TruncationPolicy::default()
    };

    let g = solve_closed(&profile, args.t, &SolverConfig::default())
        .map_err(|e| from_transition(e.into()))?;
    let (probability, method, diagnostics) = match args.method {
        MethodArg::Auto => {
            let r = transition_probability(&profile, args.n, args.m, args.t, &policy)
                .map_err(from_transition)?;
            let name = match r.formula {
                Formula::FiniteSum => "expr1",
                Formula::CharlierSum => "expr2",
            };
            (r.probability, name, r.diagnostics)
        }
        MethodArg::Expr1 => {
            let p = finite_sum(args.n, args.m, &g).map_err(from_transition)?;
            (p, "expr1", None)
        }
        MethodArg::Expr2 => {
            let (p, d) = charlier_sum_with_diagnostics(args.n, args.m, &g, &policy)
                .map_err(from_transition)?;
            (p, "expr2", Some(d))
        }
        MethodArg::Km => {
            let (lambda, mu) = profile
                .lambda()
                .as_constant()
                .zip(profile.mu().as_constant())
                .ok_or(TransitionError::NotHomogeneous)
                .map_err(from_transition)?;
            let (p, d) =
                km_homogeneous_with_diagnostics(lambda, mu, args.t, args.n, args.m, &policy)
                    .map_err(from_transition)?;
            (p, "km", Some(d))
        }
        MethodArg::Master => {
            let dist =
                master_integrate(&profile, args.n, args.t, None, tol).map_err(from_oracle)?;
            (dist.prob(args.m as usize), "master", None)
        }
    };

    let alpha = match g.alpha_spectral() {
        Ok(a) => fmt17(a),
        Err(_) => "null".into(),
    };
    let text = format!(
        "{{\n  \"probability\": {},\n  \"method\": \"{}\",\n  \"g_functions\": {},\n  \
         \"alpha_spectral\": {},\n  \"truncation_diagnostics\": {}\n}}\n",
        fmt17(probability),
        method,
        json_g_functions(&g),
        alpha,
        json_diagnostics(&diagnostics),
    );
    emit(&args.out, &text)
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let ts = parse_t_grid(&args.t_grid)?;
    let trunc = resolve_tol(None)?;
    let policy = TruncationPolicy {
        abs_tol: trunc,
        ..TruncationPolicy::default()
    };
    let homogeneous = profile.lambda().as_constant().zip(profile.mu().as_constant());

    // Per-pair agreement budgets; --tol overrides all of them.
    let tol_pair = args.tol.unwrap_or(1e-9);
    let tol_oracle = args.tol.unwrap_or(1e-8);
    let tol_km = args.tol.unwrap_or(1e-10);

    let mut max_12 = 0.0f64;
    let mut max_1m = 0.0f64;
    let mut max_2m = 0.0f64;
    let mut max_2k = 0.0f64;
    let mut failures: Vec<String> = Vec::new();

    for &t in &ts {
        let g = match solve_closed(&profile, t, &SolverConfig::default()) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("g-functions at t={}: {e}", fmt17(t)));
                continue;
            }
        };
        for n in 0..=args.n_max {
            let oracle_row = match master_integrate(&profile, n, t, None, trunc) {
                Ok(d) => Some(d),
                Err(e) => {
                    failures.push(format!("master at n={n}, t={}: {e}", fmt17(t)));
                    None
                }
            };
            for m in 0..=args.m_max {
                let e1 = match finite_sum(n, m, &g) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        failures.push(format!("expr1 at n={n}, m={m}, t={}: {e}", fmt17(t)));
                        None
                    }
                };
                let e2 = match charlier_sum_with_diagnostics(n, m, &g, &policy) {
                    Ok((p, _)) => Some(p),
                    Err(e) => {
                        failures.push(format!("expr2 at n={n}, m={m}, t={}: {e}", fmt17(t)));
                        None
                    }
                };
                let or = oracle_row.as_ref().map(|d| d.prob(m as usize));
                if let (Some(a), Some(b)) = (e1, e2) {
                    max_12 = max_12.max((a - b).abs());
                }
                if let (Some(a), Some(b)) = (e1, or) {
                    max_1m = max_1m.max((a - b).abs());
                }
                if let (Some(a), Some(b)) = (e2, or) {
                    max_2m = max_2m.max((a - b).abs());
                }
                if let Some((lambda, mu)) = homogeneous {
                    match km_homogeneous_with_diagnostics(lambda, mu, t, n, m, &policy) {
                        Ok((k, _)) => {
                            if let Some(b) = e2 {
                                max_2k = max_2k.max((k - b).abs());
                            }
                        }
                        Err(e) => {
                            failures.push(format!("km at n={n}, m={m}, t={}: {e}", fmt17(t)))
                        }
                    }
                }
            }
        }
    }

    let mut pairs = vec![
        ("expr1-expr2", max_12, tol_pair),
        ("expr1-master", max_1m, tol_oracle),
        ("expr2-master", max_2m, tol_oracle),
    ];
    if homogeneous.is_some() {
        pairs.push(("expr2-km", max_2k, tol_km));
    }

    let mut text = String::from("pair,max_abs_diff,tol,pass\n");
    let mut all_pass = failures.is_empty();
    for (name, max, tol) in &pairs {
        let pass = max <= tol;
        all_pass &= pass;
        let _ = writeln!(text, "{name},{},{},{pass}", fmt17(*max), fmt17(*tol));
    }
    for f in &failures {
        let _ = writeln!(text, "# failure: {f}");
    }
    emit(&args.out, &text)?;

    if all_pass {
        Ok(())
    } else {
        let worst = pairs
            .iter()
            .filter(|(_, max, tol)| max > tol)
            .map(|(name, ..)| *name)
            .collect::<Vec<_>>()
            .join(", ");
        Err(CliError::Numerical(if failures.is_empty() {
            format!("validation failed: {worst} beyond tolerance")
        } else {
            format!("validation failed: {} method failures", failures.len())
        }))
    }
}

fn cmd_matrix(args: MatrixArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let tol = resolve_tol(args.tol)?;
    let policy = TruncationPolicy {
        abs_tol: tol,
        ..TruncationPolicy::default()
    };
    let method = match args.method {
        MethodArg::Auto => Method::Auto,
        MethodArg::Expr1 => Method::FiniteSum,
        MethodArg::Expr2 => Method::CharlierSum,
        MethodArg::Km => Method::Km,
        MethodArg::Master => Method::MasterEquation,
    };
    let row = transition_row(&profile, args.n, args.t, method, args.m_max, &policy)
        .map_err(from_transition)?;

    let mut text = String::from("m,probability\n");
    for (m, p) in row.probs().iter().enumerate() {
        let _ = writeln!(text, "{m},{}", fmt17(*p));
    }
    let _ = writeln!(text, "# total_mass = {}", fmt17(row.total_mass()));
    emit(&args.out, &text)
}

fn cmd_gfuncs(args: GfuncsArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let ts = parse_t_grid(&args.t_grid)?;

    let mut text = String::from("t,g1,g2,g3,g4,p,nu,alpha\n");
    for &t in &ts {
        let g = solve_closed(&profile, t, &SolverConfig::default())
            .map_err(|e| from_transition(e.into()))?;
        // alpha does not exist at g3 = 0 (t = 0 or vanished death rate);
        // the column records nan rather than failing the whole trace.
        let alpha = g.alpha_spectral().unwrap_or(f64::NAN);
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            fmt17(t),
            fmt17(g.g1),
            fmt17(g.g2),
            fmt17(g.g3),
            fmt17(g.g4),
            fmt17(g.survival_p()),
            fmt17(g.nu()),
            fmt17(alpha),
        );
    }
    emit(&args.out, &text)
}

fn cmd_charlier(args: CharlierArgs) -> Result<(), CliError> {
    let mut text = String::from("n,x,value\n");
    for n in 0..=args.n_max {
        for x in 0..=args.x_max {
            let v = charlier_eval(n, x as f64, args.alpha)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let _ = writeln!(text, "{n},{x},{}", fmt17(v));
        }
    }
    emit(&args.out, &text)
}

fn write_distribution_csv(header: &str, dist: &Distribution, stderr: Option<&[f64]>) -> String {
    let mut text = format!("{header}\n");
    for (state, p) in dist.probs().iter().enumerate() {
        match stderr {
            Some(se) => {
                let _ = writeln!(text, "{state},{},{}", fmt17(*p), fmt17(se[state]));
            }
            None => {
                let _ = writeln!(text, "{state},{}", fmt17(*p));
            }
        }
    }
    let _ = writeln!(text, "# leaked_mass = {}", fmt17(dist.leaked_mass()));
    text
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let tol = resolve_tol(args.tol)?;
    let dist =
        master_integrate(&profile, args.n0, args.t, args.cap, tol).map_err(from_oracle)?;
    emit(&args.out, &write_distribution_csv("state,prob", &dist, None))
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let profile = load_profile(&args.config)?;
    let config = SimConfig {
        n_traj: args.n_traj,
        seed: args.seed,
    };
    let emp = mc_simulate(&profile, args.n0, args.t, &config).map_err(from_oracle)?;
    emit(
        &args.out,
        &write_distribution_csv("state,prob,stderr", &emp.distribution, Some(&emp.stderr)),
    )
}
