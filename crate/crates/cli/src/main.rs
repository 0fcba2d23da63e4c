use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use unimech::constraints::{run_algorithm, ConstraintLedger, ConstraintPolicy, LedgerStatus, Provenance};
use unimech::dynamics::{conserved, integrate_numeric, project_onto, IntegratorSettings, NumericField, Space, Trajectory};
use unimech::jetcalc::LagrangianSystem;
use unimech::report::{
    AnalyzeReport, ConstraintsReport, EomReport, MomentaReport, Report, RunConfig, SimulationReport, UnifiedReport,
};
use unimech::symbolic::{parse_system, ChartSpec, SamplingPolicy, SystemSource, DEFAULT_SEED};
use unimech::unified::UnifiedSystem;
use unimech::Error;

#[derive(Parser, Debug)]
#[command(name = "unimech", version, about = "Higher-order Lagrangian mechanics in the unified formalism")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommandKind {
    Analyze,
    Momenta,
    Eom,
    Unified,
    Constraints,
    Simulate,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Momenta, energy, Hessian, unified coefficients and solved fields
    Analyze(Args),
    /// Ostrogradsky momenta and energy
    Momenta(Args),
    /// Euler-Lagrange equations
    Eom(Args),
    /// Unified-space data: coupling, H, Ω, ansatz and tangency conditions
    Unified(Args),
    /// Constraint algorithm ledger
    Constraints(Args),
    /// Integrate the dynamics on T^{2k-1}Q
    Simulate(Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args, Debug)]
struct Args {
    /// System description (.lag)
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Relative tolerance of numeric zero tests
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Sample points per numeric zero test
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    #[arg(long = "t-end", default_value_t = 10.0)]
    t_end: f64,
    /// Initial coordinates, e.g. q0=1,q1=0
    #[arg(long, value_parser = parse_bindings, default_value = "")]
    init: Bindings,
    /// Parameter values, e.g. w=1,g=1
    #[arg(long, value_parser = parse_bindings, default_value = "")]
    param: Bindings,
    /// Require the field to be a semispray of type 1
    #[arg(long)]
    semispray1: bool,
    /// Output format; csv is only available for simulate
    #[arg(long, value_enum)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
struct Bindings(BTreeMap<String, f64>);

fn parse_bindings(s: &str) -> Result<Bindings, String> {
    let mut m = BTreeMap::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("expected name=value, got `{part}`"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("`{}` is not a number", v.trim()))?;
        if m.insert(k.trim().to_string(), v).is_some() {
            return Err(format!("`{}` is bound twice", k.trim()));
        }
    }
    Ok(Bindings(m))
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Inconsistent(anyhow::Error),
    Numeric(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Inconsistent(_) => 3,
            Failure::Numeric(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Validation(e) | Failure::Inconsistent(e) | Failure::Numeric(e) | Failure::Other(e) => e,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_) | Error::Invalid(_) | Error::SingularHessian | Error::NotInvertible(_) => {
                Failure::Validation(e.into())
            }
            Error::Inconsistent(_) => Failure::Inconsistent(e.into()),
            Error::Eval(_) | Error::Sampling(_) | Error::Numeric(_) => Failure::Numeric(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (kind, args) = match cli.command {
        Command::Analyze(a) => (CommandKind::Analyze, a),
        Command::Momenta(a) => (CommandKind::Momenta, a),
        Command::Eom(a) => (CommandKind::Eom, a),
        Command::Unified(a) => (CommandKind::Unified, a),
        Command::Constraints(a) => (CommandKind::Constraints, a),
        Command::Simulate(a) => (CommandKind::Simulate, a),
    };
    let format = args.format.unwrap_or(if kind == CommandKind::Simulate { Format::Csv } else { Format::Json });
    if format == Format::Csv && kind != CommandKind::Simulate {
        return Err(Failure::Validation(anyhow!("csv output is only available for simulate")));
    }
    if !(args.tol > 0.0) || args.samples == 0 {
        return Err(Failure::Validation(anyhow!("--tol must be positive and --samples at least 1")));
    }
    let text = std::fs::read_to_string(&args.input)
        .with_context(|| format!("cannot read {}", args.input.display()))
        .map_err(Failure::Other)?;
    let source = parse_system(&text)
        .map_err(|e| Failure::Validation(anyhow::Error::new(e).context(args.input.display().to_string())))?;
    for name in args.param.0.keys() {
        if !source.chart.is_param(name) {
            return Err(Failure::Validation(anyhow!("`{name}` is not a declared parameter")));
        }
    }
    let sampling = SamplingPolicy { seed: args.seed, samples: args.samples, tol: args.tol, ..SamplingPolicy::default() };
    let config = RunConfig {
        input: args.input.display().to_string(),
        command: format!("{kind:?}").to_lowercase(),
        sampling: sampling.clone(),
        integrator: IntegratorSettings { h: args.h, t_end: args.t_end },
        init: args.init.0.clone(),
        params: source.chart.param_values(&args.param.0),
        semispray1: args.semispray1,
        format: format!("{format:?}").to_lowercase(),
    };
    let system = LagrangianSystem::new(source.chart.clone(), source.lagrangian.clone())?;
    let output = match kind {
        CommandKind::Momenta => Report::new(&config, MomentaReport::build(&system)).to_json(),
        CommandKind::Eom => Report::new(&config, EomReport::build(&system)?).to_json(),
        CommandKind::Analyze => {
            let unified = UnifiedSystem::new(&system);
            Report::new(&config, AnalyzeReport::build(&unified, &sampling)).to_json()
        }
        CommandKind::Unified => {
            let unified = UnifiedSystem::new(&system);
            Report::new(&config, UnifiedReport::build(&unified)).to_json()
        }
        CommandKind::Constraints => {
            let unified = UnifiedSystem::new(&system);
            let ledger = ledger(&unified, &source, &config)?;
            let json = Report::new(&config, ConstraintsReport { ledger: &ledger }).to_json();
            write_output(&args.out, &json)?;
            if ledger.status == LedgerStatus::Inconsistent {
                return Err(Failure::Inconsistent(anyhow!("constraint algorithm found an inconsistency: {}", ledger.notes.join("; "))));
            }
            return Ok(());
        }
        CommandKind::Simulate => return simulate(&system, &source, &config, format, &args.out),
    };
    write_output(&args.out, &output)
}

fn ledger(unified: &UnifiedSystem, source: &SystemSource, config: &RunConfig) -> Result<ConstraintLedger, Failure> {
    let policy = ConstraintPolicy { semispray1: config.semispray1, sampling: config.sampling.clone(), ..ConstraintPolicy::default() };
    Ok(run_algorithm(unified, &source.primary, &policy)?)
}

fn write_output(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(Failure::Other),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn initial_state(chart: &ChartSpec, init: &BTreeMap<String, f64>) -> anyhow::Result<Vec<f64>> {
    let coords = chart.lagrangian_coords();
    let names: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
    for k in init.keys() {
        if !names.contains(k) {
            bail!("`{k}` is not a coordinate of T^{}Q (expected one of {})", 2 * chart.k - 1, names.join(", "));
        }
    }
    Ok(names.iter().map(|n| init.get(n).copied().unwrap_or(0.0)).collect())
}

fn simulate(
    system: &LagrangianSystem,
    source: &SystemSource,
    config: &RunConfig,
    format: Format,
    out: &Option<PathBuf>,
) -> Result<(), Failure> {
    let chart = system.chart();
    let coords = chart.lagrangian_coords();
    for p in &chart.params {
        if !config.params.contains_key(&p.name) {
            return Err(Failure::Validation(anyhow!("parameter `{}` needs a value (use --param)", p.name)));
        }
    }
    let start = initial_state(chart, &config.init).map_err(Failure::Validation)?;
    let unified = UnifiedSystem::new(system);
    let hessian = system.hessian(&config.sampling);
    let mut constraint_exprs = BTreeMap::new();
    let (field, x0) = if hessian.is_regular() {
        let x = unified.solve_regular(&hessian)?;
        let xl = unified.recover_lagrangian_field(&x);
        (NumericField::new(&xl, &coords, &config.params)?, start)
    } else {
        let ledger = ledger(&unified, source, config)?;
        if ledger.status != LedgerStatus::Stabilized {
            return Err(Failure::Inconsistent(anyhow!("constraint algorithm ended with status {:?}", ledger.status)));
        }
        if ledger.compatible == Some(false) {
            return Err(Failure::Inconsistent(anyhow!("no tangent field exists on the final constraint surface")));
        }
        let graph = system.graph_substitution();
        for e in ledger.entries().filter(|e| e.provenance != Provenance::GraphPrimary) {
            constraint_exprs.insert(e.label.clone(), e.expr.substitute(&graph));
        }
        let xl = unified.recover_lagrangian_field(&ledger.field);
        let x0 = project_onto(&ledger.surface, &coords, &config.params, &start)?;
        (NumericField::with_equations(&xl, &coords, &config.params, &ledger.tangency_equations)?, x0)
    };
    let traj = integrate_numeric(&field, Space::Lagrangian, &coords, &config.params, x0, config.integrator)?;
    let text = match format {
        Format::Csv => traj.to_csv(),
        Format::Json => {
            let energy_drift = conserved(&traj, system.energy()).ok().map(|d| d.drift);
            let mut constraint_drift = BTreeMap::new();
            for (label, e) in &constraint_exprs {
                constraint_drift.insert(label.clone(), conserved(&traj, e)?.drift);
            }
            Report::new(config, SimulationReport { trajectory: &traj, energy_drift, constraint_drift }).to_json()
        }
    };
    write_output(out, &text)?;
    check_truncation(&traj)
}

fn check_truncation(traj: &Trajectory) -> Result<(), Failure> {
    match &traj.diagnostic {
        Some(d) => Err(Failure::Numeric(anyhow!("integration stopped early: {d}"))),
        None => Ok(()),
    }
}
