use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use bilinear_core::energy::{bound_reports, level_lower_bounds_hold};
use bilinear_core::experiments::{
    galerkin_convergence, load_model, random_bound_suite, reproduce_bounded, reproduce_unbounded,
    transition_pulse, write_galerkin_csv, write_trajectory_csv, ReproductionReport, RunConfig,
};
use bilinear_core::propagate::basis_state;
use bilinear_core::pulse::{
    design_pulse, ladder_plan, measure_plan, DesignOptions, PlanMode, GUARD_BAND,
};
use bilinear_core::{propagate, ControlSignal, Error, ErrorClass, OperatorTriple};

const EXIT_CONFIG: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_ASSERTION: u8 = 4;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(
    name = "bilinear",
    version,
    about = "Simulation and pulse design for bilinear quantum control systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Fixed,
    Peak,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => PlanMode::Fixed,
            ModeArg::Peak => PlanMode::Peak,
        }
    }
}

/// Flags shared by every command. Each one overrides the matching field of `--config`.
#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// rotor, oscillator, or a path to a JSON model table.
    #[arg(long)]
    model: Option<String>,
    /// Galerkin truncation N.
    #[arg(long = "trunc")]
    truncation: Option<usize>,
    /// Pulse scaling n (amplitude 1/n).
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    samples_per_period: Option<u32>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Record every m-th breakpoint of trajectories.
    #[arg(long)]
    record_every: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate a signal file and write the trajectory and bound checks.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Signal JSON (piecewise_constant or sine).
        #[arg(long)]
        signal: PathBuf,
        /// Initial eigenstate level.
        #[arg(long, default_value_t = 1)]
        initial: usize,
    },
    /// Design the resonant pulse for one transition.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Transition as j,k.
        #[arg(long, value_parser = parse_pair)]
        transition: Option<(usize, usize)>,
    },
    /// Climb from level 1 to a target level.
    Ladder {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        target: Option<usize>,
    },
    /// Linear growth of ‖Aψ‖ against total variation for bounded coupling.
    ReproduceBounded {
        #[command(flatten)]
        common: Common,
        /// Target levels, comma separated.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        #[arg(long)]
        slack: Option<f64>,
    },
    /// Exponential growth of ‖Aψ‖ against total variation for unbounded coupling.
    ReproduceUnbounded {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
    },
    /// Check the growth bounds on seeded random controls.
    RandomSuite {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Compare final states across truncation sizes.
    Galerkin {
        #[command(flatten)]
        common: Common,
        /// Truncation sizes, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Signal JSON; defaults to the pulse for --transition.
        #[arg(long)]
        signal: Option<PathBuf>,
        #[arg(long, value_parser = parse_pair)]
        transition: Option<(usize, usize)>,
    },
    /// Write the truncated model table and a validation report.
    ModelDump {
        #[command(flatten)]
        common: Common,
        /// Random vectors for the relative-bound check.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected j,k")?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

enum Failure {
    Core(Error),
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

type Outcome = Result<(), Failure>;

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut c = match &common.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if common.model.is_some() {
        c.model = common.model.clone();
    }
    if common.truncation.is_some() {
        c.truncation = common.truncation;
    }
    if let Some(n) = common.n {
        c.n = n;
    }
    if let Some(s) = common.samples_per_period {
        c.samples_per_period = s;
    }
    if let Some(o) = &common.out {
        c.out = o.clone();
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    if let Some(m) = common.mode {
        c.mode = m.into();
    }
    if let Some(r) = common.record_every {
        c.record_every = r;
    }
    Ok(c)
}

/// Loads the configured model, recording `fallback` in the config when unset.
fn load(config: &mut RunConfig, fallback: &str) -> Result<OperatorTriple, Failure> {
    let name = config.model.get_or_insert_with(|| fallback.to_owned());
    Ok(load_model(name)?)
}

fn create(dir: &Path, name: &str) -> std::io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Creates the output directory and the `run.json` sidecar.
fn prepare(command: &str, config: &RunConfig) -> Result<PathBuf, Failure> {
    fs::create_dir_all(&config.out)?;
    let sidecar = json!({
        "tool": "bilinear",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    });
    write_json(&config.out, "run.json", &sidecar)?;
    Ok(config.out.clone())
}

fn write_trajectory(
    dir: &Path,
    triple: &OperatorTriple,
    result: &bilinear_core::PropagationResult,
) -> Result<(), Failure> {
    let mut w = create(dir, "trajectory.csv")?;
    write_trajectory_csv(triple, result, &mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(common: &Common, signal: &Path, initial: usize) -> Outcome {
    let mut config = resolve(common)?;
    config.target = config.target.max(initial);
    config.validate(config.target)?;
    let triple = load(&mut config, "rotor")?;
    let signal = ControlSignal::from_json_file(signal)?;
    let n = config.truncation_for(config.target);
    if initial == 0 || initial > n {
        return Err(Error::InvalidIndex(format!("initial level {initial} outside 1..={n}")).into());
    }
    let result = propagate(
        &triple,
        n,
        &signal,
        &basis_state(n, initial),
        config.record_every,
    )?;
    let dir = prepare("simulate", &config)?;
    write_trajectory(&dir, &triple, &result)?;
    let reports = bound_reports(&triple, &result);
    let lower = result
        .states
        .iter()
        .all(|psi| level_lower_bounds_hold(&triple, psi));
    write_json(
        &dir,
        "bounds.json",
        &json!({ "reports": reports, "lower_bounds_held": lower }),
    )?;
    println!(
        "simulated {} pieces of duration {} at N = {n}; TV = {}",
        signal.len(),
        signal.duration(),
        signal.total_variation()
    );
    for r in &reports {
        println!(
            "bound ({}): final ‖Aψ‖ = {} ≤ {} : {}",
            r.constant_source, r.final_anorm, r.bound_value, r.satisfied
        );
    }
    Ok(())
}

fn synthesize(common: &Common, transition: Option<(usize, usize)>) -> Outcome {
    let mut config = resolve(common)?;
    if let Some(t) = transition {
        config.transition = t;
    }
    config.validate(config.transition.0.max(config.transition.1))?;
    let triple = load(&mut config, "rotor")?;
    let (j, k) = config.transition;
    let (design, signal) = design_pulse(
        &triple,
        j,
        k,
        config.n,
        config.sampling(),
        &DesignOptions::default(),
    )?;
    let dir = prepare("synthesize", &config)?;
    write_json(&dir, "design.json", &design)?;
    write_json(&dir, "signal.json", &signal.to_file_spec())?;
    let mut w = create(&dir, "signal.csv")?;
    signal.write_csv(&mut w)?;
    w.flush()?;
    println!(
        "pulse ({j}, {k}): amplitude {}, omega {}, duration {}, {} pieces, TV {} (limit {})",
        design.amplitude,
        design.omega,
        design.duration,
        signal.len(),
        signal.total_variation(),
        design.predicted_tv
    );
    Ok(())
}

fn ladder(common: &Common, target: Option<usize>) -> Outcome {
    let mut config = resolve(common)?;
    if let Some(t) = target {
        config.target = t;
    }
    config.validate(config.target)?;
    let triple = load(&mut config, "rotor")?;
    let n = config.truncation_for(config.target);
    let n_list = vec![config.n; config.target.saturating_sub(1)];
    let plan = ladder_plan(
        &triple,
        config.target,
        &n_list,
        config.sampling(),
        &DesignOptions::default(),
    )?;
    let m = measure_plan(&triple, n, &plan, config.mode, GUARD_BAND)?;
    let dir = prepare("ladder", &config)?;
    write_json(
        &dir,
        "ladder.json",
        &json!({
            "plan": plan.plan,
            "mode": m.mode,
            "truncation": m.truncation,
            "final_anorm": m.final_anorm,
            "measured_tv": m.measured_tv,
            "rungs": m.rungs,
            "lower_bounds_held": m.lower_bounds_held,
        }),
    )?;
    if let Some(signal) = &m.executed {
        write_json(&dir, "signal.json", &signal.to_file_spec())?;
        let result = propagate(&triple, n, signal, &basis_state(n, 1), config.record_every)?;
        write_trajectory(&dir, &triple, &result)?;
    }
    for r in &m.rungs {
        println!(
            "rung ({}, {}): duration {}, population {}, ‖Aψ‖ {}",
            r.j, r.k, r.duration, r.population, r.anorm
        );
    }
    println!("M = {}, TV = {}", m.final_anorm, m.measured_tv);
    Ok(())
}

fn finish_report(command: &str, config: &RunConfig, report: &ReproductionReport) -> Outcome {
    let dir = prepare(command, config)?;
    write_json(&dir, "report.json", report)?;
    let mut w = create(&dir, "report.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    println!("target  M  TV  bound  M/TV");
    for r in &report.rows {
        println!(
            "{}  {:.6}  {:.6}  {:.6}  {:.6}",
            r.target, r.measured_anorm, r.measured_tv, r.bound_value, r.ratio
        );
    }
    if let Some(f) = report.fit {
        println!(
            "log(M + 6) = {:.6}·TV + {:.6} (rms residual {:.3e})",
            f.slope, f.intercept, f.residual_rms
        );
    }
    let mut failed = Vec::new();
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
        if !c.passed {
            failed.push(c.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}

fn reproduce(
    common: &Common,
    levels: Option<Vec<usize>>,
    slack: Option<f64>,
    bounded: bool,
) -> Outcome {
    let mut config = resolve(common)?;
    if levels.is_some() {
        config.levels = levels;
    }
    if let Some(s) = slack {
        config.slack = s;
    }
    let default_levels: Vec<usize> = if bounded {
        (2..=5).collect()
    } else {
        (2..=6).collect()
    };
    let levels = config.levels.clone().unwrap_or(default_levels);
    let triple = load(&mut config, if bounded { "rotor" } else { "oscillator" })?;
    if bounded {
        let report = reproduce_bounded(&triple, &levels, &config)?;
        finish_report("reproduce-bounded", &config, &report)
    } else {
        let report = reproduce_unbounded(&triple, &levels, &config)?;
        for r in &report.rows {
            println!(
                "target {}: explicit bound 4exp(√(2/3)a·TV) - 6 = {:.4} holds {}; quoted TV 2log(N+1) = {:.4}",
                r.target,
                r.bound_value,
                r.bound_holds,
                r.quoted_tv.unwrap_or(f64::NAN)
            );
        }
        finish_report("reproduce-unbounded", &config, &report)
    }
}

fn random_suite(common: &Common, count: Option<usize>) -> Outcome {
    let mut config = resolve(common)?;
    if let Some(c) = count {
        config.count = c;
    }
    let triple = load(&mut config, "rotor")?;
    let n = config.truncation.unwrap_or(16);
    let summary = random_bound_suite(&triple, n, config.count, config.seed)?;
    let dir = prepare("random-suite", &config)?;
    write_json(&dir, "suite.json", &summary)?;
    println!(
        "{}: {} controls at N = {n}, seed {}: {} violations, worst margin {}",
        summary.model, summary.count, summary.seed, summary.violations, summary.worst_margin
    );
    if summary.passed() {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "{} bound violations",
            summary.violations
        )))
    }
}

fn galerkin(
    common: &Common,
    sizes: Option<Vec<usize>>,
    signal: Option<PathBuf>,
    transition: Option<(usize, usize)>,
) -> Outcome {
    let mut config = resolve(common)?;
    if let Some(s) = sizes {
        config.sizes = s;
    }
    if let Some(t) = transition {
        config.transition = t;
    }
    let triple = load(&mut config, "rotor")?;
    let signal = match signal {
        Some(p) => ControlSignal::from_json_file(p)?,
        None => transition_pulse(&triple, &config)?,
    };
    let study = galerkin_convergence(&triple, &signal, &config.sizes)?;
    let dir = prepare("galerkin", &config)?;
    let mut w = create(&dir, "galerkin.csv")?;
    write_galerkin_csv(&study, &mut w)?;
    w.flush()?;
    for r in &study.rows {
        println!(
            "({}, {}): discrepancy {:.3e}, tail mass {:.3e}",
            r.n, r.n_next, r.discrepancy, r.tail_mass
        );
    }
    Ok(())
}

fn model_dump(common: &Common, samples: usize) -> Outcome {
    let mut config = resolve(common)?;
    let triple = load(&mut config, "rotor")?;
    let n = config.truncation_for(config.target);
    let table = triple.to_json_table(n)?;
    let report = triple.validate(n, samples, config.seed)?;
    let dir = prepare("model-dump", &config)?;
    write_json(&dir, "model.json", &table)?;
    write_json(&dir, "validation.json", &report)?;
    let b_norm = triple.compress(n)?.b_operator_norm();
    println!(
        "{} at N = {n}: ‖B^(N)‖ = {b_norm}, amplitude limit {}, valid {}",
        triple.name(),
        triple.amplitude_limit(),
        report.is_valid()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate {
            common,
            signal,
            initial,
        } => simulate(&common, &signal, initial),
        Command::Synthesize { common, transition } => synthesize(&common, transition),
        Command::Ladder { common, target } => ladder(&common, target),
        Command::ReproduceBounded {
            common,
            levels,
            slack,
        } => reproduce(&common, levels, slack, true),
        Command::ReproduceUnbounded { common, levels } => reproduce(&common, levels, None, false),
        Command::RandomSuite { common, count } => random_suite(&common, count),
        Command::Galerkin {
            common,
            sizes,
            signal,
            transition,
        } => galerkin(&common, sizes, signal, transition),
        Command::ModelDump { common, samples } => model_dump(&common, samples),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Assertion(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ASSERTION)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => EXIT_CONFIG,
                ErrorClass::Precondition => EXIT_PRECONDITION,
                ErrorClass::Numerical => EXIT_OTHER,
            })
        }
    }
}
