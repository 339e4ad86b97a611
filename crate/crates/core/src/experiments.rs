//! Reproducible sweeps: ladder reproductions of the linear and exponential
//! growth regimes, random-control bound checks, Galerkin convergence, and the
//! CSV/JSON artifacts they emit.

use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{anorm, bound_reports, energy, BoundCase, BoundReport};
use crate::error::{Error, Result};
use crate::model::{make_oscillator, make_rotor, OperatorTriple};
use crate::propagate::{basis_state, galerkin_study, propagate, GalerkinStudy, PropagationResult};
use crate::pulse::{
    design_pulse, ladder_plan, measure_plan, DesignOptions, PlanMode, Sampling, GUARD_BAND,
};
use crate::signal::ControlSignal;

/// Control values of random suites for models without an amplitude limit are
/// drawn from `[-1, 1]`.
pub const UNLIMITED_RANDOM_AMPLITUDE: f64 = 1.0;

/// Offset `c₀` in the fit of `log(M + c₀)` against the total variation.
pub const LOG_FIT_OFFSET: f64 = 6.0;

/// Relative tolerance of the concavity check on total variation versus `M`.
pub const CONCAVITY_TOL: f64 = 0.05;

/// Resolved run configuration; mirrors the command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `rotor`, `oscillator`, or a path to a JSON model table. Commands pick
    /// their own default when unset.
    pub model: Option<String>,
    /// Galerkin truncation; defaults to the highest target plus the guard band.
    pub truncation: Option<usize>,
    /// Target level for single ladders.
    pub target: usize,
    /// Target levels for reproductions; defaults depend on the command.
    pub levels: Option<Vec<usize>>,
    /// Pulse scaling `n` for every rung.
    pub n: u32,
    pub samples_per_period: u32,
    pub out: PathBuf,
    pub seed: u64,
    pub mode: PlanMode,
    /// Allowed shortfall in `M ≥ (‖B‖/4)·TV` at finite `n`.
    pub slack: f64,
    /// Number of random controls.
    pub count: usize,
    /// Truncation sizes for Galerkin studies.
    pub sizes: Vec<usize>,
    /// Transition `(j, k)` for single-pulse commands.
    pub transition: (usize, usize),
    /// Record every m-th breakpoint in trajectories.
    pub record_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: None,
            truncation: None,
            target: 2,
            levels: None,
            n: 50,
            samples_per_period: 400,
            out: PathBuf::from("out"),
            seed: 7,
            mode: PlanMode::Peak,
            slack: 0.15,
            count: 100,
            sizes: vec![4, 6, 8, 12],
            transition: (1, 2),
            record_every: 1,
        }
    }
}

impl RunConfig {
    /// The configured model, or `fallback` when none is set.
    pub fn load_model_or(&self, fallback: &str) -> Result<OperatorTriple> {
        load_model(self.model.as_deref().unwrap_or(fallback))
    }

    pub fn sampling(&self) -> Sampling {
        Sampling::SamplesPerPeriod(self.samples_per_period)
    }

    /// Truncation for a run whose highest level of interest is `top`.
    pub fn truncation_for(&self, top: usize) -> usize {
        self.truncation.unwrap_or(top + GUARD_BAND)
    }

    /// Checks the invariants shared by all commands, with `top` the highest
    /// targeted level.
    pub fn validate(&self, top: usize) -> Result<()> {
        if self.samples_per_period < 16 {
            return Err(Error::InvalidParameter(format!(
                "samples per period {} below 16",
                self.samples_per_period
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter(
                "record_every must be positive".into(),
            ));
        }
        let trunc = self.truncation_for(top);
        if trunc < top + GUARD_BAND {
            return Err(Error::InvalidParameter(format!(
                "truncation {trunc} below target {top} plus guard band {GUARD_BAND}"
            )));
        }
        Ok(())
    }
}

pub fn load_model(spec: &str) -> Result<OperatorTriple> {
    match spec {
        "rotor" => Ok(make_rotor()),
        "oscillator" => Ok(make_oscillator()),
        path => OperatorTriple::from_json_file(path),
    }
}

/// Trajectory CSV: `t, u, re_1, im_1, …, re_N, im_N, pop_1..pop_N, anorm, energy`.
pub fn write_trajectory_csv<W: Write>(
    triple: &OperatorTriple,
    result: &PropagationResult,
    mut out: W,
) -> std::io::Result<()> {
    let n = result.truncation();
    let mut header = vec!["t".to_owned(), "u".to_owned()];
    for j in 1..=n {
        header.push(format!("re_{j}"));
        header.push(format!("im_{j}"));
    }
    header.extend((1..=n).map(|j| format!("pop_{j}")));
    header.push("anorm".into());
    header.push("energy".into());
    writeln!(out, "{}", header.join(","))?;
    let controls = result.recorded_controls();
    for ((t, psi), u) in result.times.iter().zip(&result.states).zip(controls) {
        let mut row = vec![t.to_string(), u.to_string()];
        for c in psi.iter() {
            row.push(c.re.to_string());
            row.push(c.im.to_string());
        }
        row.extend(psi.iter().map(|c| c.norm_sqr().to_string()));
        row.push(anorm(triple, psi).to_string());
        row.push(energy(triple, psi).to_string());
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// One target level of a ladder reproduction.
#[derive(Debug, Clone, Serialize)]
pub struct ReproductionRow {
    pub target: usize,
    pub truncation: usize,
    /// Final A-norm `M` of the ladder run from `φ_1`.
    pub measured_anorm: f64,
    /// Total variation of the executed control.
    pub measured_tv: f64,
    /// Sum of the per-rung limits `2ω_r/|b_r|`.
    pub predicted_tv: f64,
    /// Population of the target level at the end.
    pub target_population: f64,
    /// `M / TV`.
    pub ratio: f64,
    /// Right-hand side checked for this row (bounded: `(1 - slack)(‖B^(N)‖/4)TV`;
    /// unbounded: `4 exp(√(2/3) a TV) - 6`).
    pub bound_value: f64,
    pub bound_holds: bool,
    /// Closed form quoted for the limit of the total variation, when one
    /// exists for the model (`4N²` for the rotor, `2 log(N+1)` for the oscillator).
    pub quoted_tv: Option<f64>,
    /// `‖B^(N)‖` for bounded models.
    pub opnorm_b: Option<f64>,
    pub lower_bounds_held: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReproductionReport {
    pub model: String,
    pub case: BoundCase,
    pub n: u32,
    pub samples_per_period: u32,
    pub mode: PlanMode,
    pub rows: Vec<ReproductionRow>,
    pub fit: Option<LogFit>,
    pub checks: Vec<Check>,
}

impl ReproductionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Table with one line per row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "target,truncation,measured_anorm,measured_tv,predicted_tv,target_population,ratio,bound_value,bound_holds,quoted_tv"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.target,
                r.truncation,
                r.measured_anorm,
                r.measured_tv,
                r.predicted_tv,
                r.target_population,
                r.ratio,
                r.bound_value,
                r.bound_holds,
                r.quoted_tv.map_or(String::new(), |x| x.to_string())
            )?;
        }
        Ok(())
    }
}

struct LadderRun {
    target: usize,
    truncation: usize,
    anorm: f64,
    tv: f64,
    predicted_tv: f64,
    population: f64,
    lower_bounds_held: bool,
    opnorm_b: f64,
}

fn run_ladders(
    triple: &OperatorTriple,
    levels: &[usize],
    config: &RunConfig,
) -> Result<Vec<LadderRun>> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("no target levels given".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 2 {
        return Err(Error::InvalidParameter(
            "target levels must be increasing and at least 2".into(),
        ));
    }
    let top = *levels.last().unwrap();
    config.validate(top)?;
    let opts = DesignOptions::default();
    levels
        .par_iter()
        .map(|&target| {
            let truncation = config.truncation.unwrap_or(target + GUARD_BAND);
            let n_list = vec![config.n; target - 1];
            let ladder = ladder_plan(triple, target, &n_list, config.sampling(), &opts)?;
            let m = measure_plan(triple, truncation, &ladder, config.mode, GUARD_BAND)?;
            Ok(LadderRun {
                target,
                truncation,
                anorm: m.final_anorm,
                tv: m.measured_tv,
                predicted_tv: ladder.plan.total_predicted_tv,
                population: m.final_state[target - 1].norm_sqr(),
                lower_bounds_held: m.lower_bounds_held,
                opnorm_b: triple.compress(truncation)?.b_operator_norm(),
            })
        })
        .collect()
}

/// Ladders to each level of `levels` on a model with bounded coupling; checks
/// `M ≥ (1 - slack)(‖B^(N)‖/4)·TV` row by row.
pub fn reproduce_bounded(
    triple: &OperatorTriple,
    levels: &[usize],
    config: &RunConfig,
) -> Result<ReproductionReport> {
    if triple.is_unbounded() {
        return Err(Error::InvalidParameter(format!(
            "model '{}' has relatively bounded coupling; use the unbounded reproduction",
            triple.name()
        )));
    }
    let runs = run_ladders(triple, levels, config)?;
    let is_rotor = triple.name() == "rotor";
    let rows: Vec<ReproductionRow> = runs
        .iter()
        .map(|r| {
            let bound_value = (1.0 - config.slack) * r.opnorm_b / 4.0 * r.tv;
            ReproductionRow {
                target: r.target,
                truncation: r.truncation,
                measured_anorm: r.anorm,
                measured_tv: r.tv,
                predicted_tv: r.predicted_tv,
                target_population: r.population,
                ratio: r.anorm / r.tv,
                bound_value,
                bound_holds: r.anorm >= bound_value,
                quoted_tv: is_rotor.then(|| 4.0 * (r.target * r.target) as f64),
                opnorm_b: Some(r.opnorm_b),
                lower_bounds_held: r.lower_bounds_held,
            }
        })
        .collect();
    let checks = rows
        .iter()
        .map(|r| Check {
            name: format!("linear_growth_target_{}", r.target),
            passed: r.bound_holds,
            detail: format!(
                "M = {:.6} vs (1-{})·(‖B‖/4)·TV = {:.6} (TV {:.6}, ratio M/TV {:.4})",
                r.measured_anorm, config.slack, r.bound_value, r.measured_tv, r.ratio
            ),
        })
        .collect();
    Ok(ReproductionReport {
        model: triple.name().to_owned(),
        case: BoundCase::Bounded,
        n: config.n,
        samples_per_period: config.samples_per_period,
        mode: config.mode,
        rows,
        fit: None,
        checks,
    })
}

/// Least-squares line `y = slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LogFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let residual_rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    LogFit {
        slope,
        intercept,
        residual_rms,
    }
}

/// Ladders on a model with relatively bounded coupling. Checks that the total
/// variation grows with the target, that `log(M + 6)` has positive slope
/// against it, and that it grows sub-linearly in `M`. The explicit
/// `M ≥ 4 exp(√(2/3) a TV) - 6` is evaluated per row and reported only.
pub fn reproduce_unbounded(
    triple: &OperatorTriple,
    levels: &[usize],
    config: &RunConfig,
) -> Result<ReproductionReport> {
    if !triple.is_unbounded() {
        return Err(Error::InvalidParameter(format!(
            "model '{}' has bounded coupling; use the bounded reproduction",
            triple.name()
        )));
    }
    let runs = run_ladders(triple, levels, config)?;
    let a = triple.relative_bound().a;
    let is_oscillator = triple.name() == "oscillator";
    let rows: Vec<ReproductionRow> = runs
        .iter()
        .map(|r| {
            let bound_value = 4.0 * ((2.0f64 / 3.0).sqrt() * a * r.tv).exp() - 6.0;
            ReproductionRow {
                target: r.target,
                truncation: r.truncation,
                measured_anorm: r.anorm,
                measured_tv: r.tv,
                predicted_tv: r.predicted_tv,
                target_population: r.population,
                ratio: r.anorm / r.tv,
                bound_value,
                bound_holds: r.anorm >= bound_value,
                quoted_tv: is_oscillator.then(|| 2.0 * (r.target as f64 + 1.0).ln()),
                opnorm_b: None,
                lower_bounds_held: r.lower_bounds_held,
            }
        })
        .collect();

    let tv: Vec<f64> = rows.iter().map(|r| r.measured_tv).collect();
    let m: Vec<f64> = rows.iter().map(|r| r.measured_anorm).collect();
    let mut checks = Vec::new();
    let increasing = tv.windows(2).all(|w| w[1] > w[0]);
    checks.push(Check {
        name: "tv_increasing".into(),
        passed: increasing,
        detail: format!("TV by target: {tv:?}"),
    });
    let fit = (rows.len() >= 2).then(|| {
        let y: Vec<f64> = m.iter().map(|x| (x + LOG_FIT_OFFSET).ln()).collect();
        linear_fit(&tv, &y)
    });
    if let Some(f) = fit {
        checks.push(Check {
            name: "log_fit_slope_positive".into(),
            passed: f.slope > 0.0,
            detail: format!(
                "log(M + {LOG_FIT_OFFSET}) = {:.6}·TV + {:.6}",
                f.slope, f.intercept
            ),
        });
    }
    if rows.len() >= 3 {
        let slopes: Vec<Option<f64>> = tv
            .windows(2)
            .zip(m.windows(2))
            .map(|(t, mm)| (mm[1] > mm[0]).then(|| (t[1] - t[0]) / (mm[1] - mm[0])))
            .collect();
        let concave = slopes.iter().all(Option::is_some)
            && slopes
                .windows(2)
                .all(|s| s[1].unwrap() <= s[0].unwrap() * (1.0 + CONCAVITY_TOL));
        checks.push(Check {
            name: "tv_concave_in_m".into(),
            passed: concave,
            detail: format!("dTV/dM between consecutive targets: {slopes:?}"),
        });
    }
    Ok(ReproductionReport {
        model: triple.name().to_owned(),
        case: BoundCase::Unbounded,
        n: config.n,
        samples_per_period: config.samples_per_period,
        mode: config.mode,
        rows,
        fit,
        checks,
    })
}

/// Outcome for one random control.
#[derive(Debug, Clone, Serialize)]
pub struct RandomCase {
    pub index: usize,
    pub pieces: usize,
    pub duration: f64,
    pub max_abs: f64,
    /// The report the suite is judged on.
    pub primary: BoundReport,
    /// Reports with other constants (e.g. the model's offset `b`).
    pub secondary: Vec<BoundReport>,
    pub lower_bounds_held: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteSummary {
    pub model: String,
    pub truncation: usize,
    pub seed: u64,
    pub count: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub cases: Vec<RandomCase>,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.cases.iter().all(|c| c.lower_bounds_held)
    }
}

/// `count` random piecewise-constant controls: 10–200 pieces, total duration
/// in `[0.01, 1]`, values uniform within 80% of the amplitude limit.
pub fn random_controls(triple: &OperatorTriple, count: usize, seed: u64) -> Vec<ControlSignal> {
    let limit = triple.amplitude_limit();
    let amp = if limit.is_finite() {
        0.8 * limit
    } else {
        UNLIMITED_RANDOM_AMPLITUDE
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let pieces = rng.random_range(10..=200usize);
            let total = rng.random_range(0.01..=1.0);
            let weights: Vec<f64> = (0..pieces).map(|_| rng.random_range(0.1..1.0)).collect();
            let sum: f64 = weights.iter().sum();
            let durations: Vec<f64> = weights.iter().map(|w| total * w / sum).collect();
            let values = (0..pieces).map(|_| rng.random_range(-amp..=amp)).collect();
            ControlSignal::from_durations(&durations, values).expect("positive durations")
        })
        .collect()
}

/// Simulates each signal from `φ_1` and checks the applicable growth bound.
pub fn bound_suite(
    triple: &OperatorTriple,
    truncation: usize,
    signals: &[ControlSignal],
    seed: u64,
) -> Result<SuiteSummary> {
    let primary_source = if triple.is_unbounded() {
        "relative_bound_a"
    } else {
        "truncated_operator_norm"
    };
    let cases = signals
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let r = propagate(triple, truncation, s, &basis_state(truncation, 1), 1)?;
            let lower_bounds_held = r
                .states
                .iter()
                .all(|psi| crate::energy::level_lower_bounds_hold(triple, psi));
            let mut reports = bound_reports(triple, &r);
            let pos = reports
                .iter()
                .position(|b| b.constant_source == primary_source)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "no admissible bound for control {index} (max |u| = {})",
                        s.max_abs()
                    ))
                })?;
            let primary = reports.remove(pos);
            Ok(RandomCase {
                index,
                pieces: s.len(),
                duration: s.duration(),
                max_abs: s.max_abs(),
                primary,
                secondary: reports,
                lower_bounds_held,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteSummary {
        model: triple.name().to_owned(),
        truncation,
        seed,
        count: cases.len(),
        violations: cases.iter().filter(|c| !c.primary.satisfied).count(),
        worst_margin: cases
            .iter()
            .map(|c| c.primary.margin)
            .fold(f64::INFINITY, f64::min),
        cases,
    })
}

pub fn random_bound_suite(
    triple: &OperatorTriple,
    truncation: usize,
    count: usize,
    seed: u64,
) -> Result<SuiteSummary> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    bound_suite(
        triple,
        truncation,
        &random_controls(triple, count, seed),
        seed,
    )
}

/// Fixed-length pulse for `transition` at scaling `config.n`.
pub fn transition_pulse(triple: &OperatorTriple, config: &RunConfig) -> Result<ControlSignal> {
    let (j, k) = config.transition;
    let (_, signal) = design_pulse(
        triple,
        j,
        k,
        config.n,
        config.sampling(),
        &DesignOptions::default(),
    )?;
    Ok(signal)
}

/// Galerkin study of `signal` from `φ_1` over `sizes`.
pub fn galerkin_convergence(
    triple: &OperatorTriple,
    signal: &ControlSignal,
    sizes: &[usize],
) -> Result<GalerkinStudy> {
    galerkin_study(triple, signal, &basis_state(1, 1), sizes)
}

pub fn write_galerkin_csv<W: Write>(study: &GalerkinStudy, mut out: W) -> std::io::Result<()> {
    writeln!(out, "N,N_next,discrepancy,tail_mass")?;
    for r in &study.rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.n, r.n_next, r.discrepancy, r.tail_mass
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::default();
        assert!(c.validate(5).is_ok());
        let low = RunConfig {
            samples_per_period: 8,
            ..RunConfig::default()
        };
        assert!(low.validate(2).is_err());
        let tight = RunConfig {
            truncation: Some(4),
            ..RunConfig::default()
        };
        assert!(tight.validate(2).is_err());
        let parsed: RunConfig = serde_json::from_str(r#"{"model":"oscillator","n":20}"#).unwrap();
        assert_eq!(parsed.n, 20);
        assert_eq!(parsed.load_model_or("rotor").unwrap().name(), "oscillator");
        assert_eq!(c.load_model_or("rotor").unwrap().name(), "rotor");
        assert_eq!(parsed.samples_per_period, 400);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v - 1.0).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope - 0.5).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_controls_are_seeded_and_admissible() {
        let osc = make_oscillator();
        let a = random_controls(&osc, 20, 3);
        assert_eq!(a, random_controls(&osc, 20, 3));
        assert_ne!(a, random_controls(&osc, 20, 4));
        for s in &a {
            assert!((10..=200).contains(&s.len()));
            assert!(s.duration() >= 0.01 - 1e-12 && s.duration() <= 1.0 + 1e-12);
            assert!(s.max_abs() <= 0.8 * osc.amplitude_limit());
        }
    }

    #[test]
    fn zero_control_suite_has_zero_margin() {
        let rotor = make_rotor();
        let s = ControlSignal::zero(0.5).unwrap();
        let summary = bound_suite(&rotor, 8, &[s], 0).unwrap();
        assert_eq!(summary.worst_margin, 0.0);
        assert!(summary.passed());
    }

    #[test]
    fn empty_levels_refused() {
        let c = RunConfig::default();
        assert!(reproduce_unbounded(&make_oscillator(), &[], &c).is_err());
        assert!(reproduce_bounded(&make_oscillator(), &[2], &c).is_err());
    }

    #[test]
    fn trajectory_csv_layout() {
        let rotor = make_rotor();
        let s = ControlSignal::from_durations(&[0.5, 0.5], vec![0.2, -0.1]).unwrap();
        let r = propagate(&rotor, 2, &s, &basis_state(2, 1), 1).unwrap();
        let mut buf = Vec::new();
        write_trajectory_csv(&rotor, &r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,u,re_1,im_1,re_2,im_2,pop_1,pop_2,anorm,energy");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0.2,1,0,0,0,1,0,1,1"));
        assert!(lines[3].starts_with("1,-0.1,"));
    }
}
