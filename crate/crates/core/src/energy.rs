//! A-norm and energy along trajectories, and the two a priori growth bounds in
//! terms of the total variation of the control.
//!
//! In coefficient form, for `ψ = Σ c_j φ_j`:
//! - A-norm `‖Aψ‖ = sqrt(Σ λ_j² |c_j|²)`,
//! - energy `E(ψ) = Σ λ_j |c_j|²`,
//! - `dE/dt = 2u Im⟨Aψ, Bψ⟩` along `ψ' = (A + uB)ψ`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OperatorTriple;
use crate::propagate::{PropagationResult, State};
use crate::signal::ControlSignal;

pub fn anorm_sq(triple: &OperatorTriple, psi: &State) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, c)| anorm_term(triple.eigenvalue(i + 1), *c))
        .sum()
}

pub fn anorm(triple: &OperatorTriple, psi: &State) -> f64 {
    anorm_sq(triple, psi).sqrt()
}

#[inline]
fn anorm_term(lambda: f64, c: C64) -> f64 {
    lambda * lambda * c.norm_sqr()
}

pub fn energy(triple: &OperatorTriple, psi: &State) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, c)| triple.eigenvalue(i + 1) * c.norm_sqr())
        .sum()
}

/// Whether `‖Aψ‖ ≥ λ_k |⟨φ_k, ψ⟩|` holds for every level `k`.
///
/// Compared on squares with the same per-level term used in the sum, so the
/// comparison is exact in floating point.
pub fn level_lower_bounds_hold(triple: &OperatorTriple, psi: &State) -> bool {
    let total = anorm_sq(triple, psi);
    psi.iter()
        .enumerate()
        .all(|(i, c)| total >= anorm_term(triple.eigenvalue(i + 1), *c))
}

/// `2u Im⟨Aψ, Bψ⟩`, the time derivative of the energy.
pub fn energy_rate(triple: &OperatorTriple, psi: &State, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    let n = psi.len();
    let bw = triple.bandwidth();
    // ⟨Aψ, Bψ⟩ = Σ_j conj(-iλ_j c_j) (Bψ)_j = Σ_j iλ_j conj(c_j) (Bψ)_j.
    let mut inner = C64::new(0.0, 0.0);
    for j in 1..=n {
        let lo = j.saturating_sub(bw).max(1);
        let hi = (j + bw).min(n);
        let b_psi: C64 = (lo..=hi).map(|k| triple.coupling(j, k) * psi[k - 1]).sum();
        inner += C64::new(0.0, triple.eigenvalue(j)) * psi[j - 1].conj() * b_psi;
    }
    2.0 * u * inner.im
}

/// Bound for bounded `B`: `‖Aψ(0)‖ + 2‖B‖ TV`.
pub fn bounded_bound(opnorm_b: f64, tv: f64, initial_anorm: f64) -> f64 {
    initial_anorm + 2.0 * opnorm_b * tv
}

/// Bound for relatively bounded `B`: `e^{a TV/δ} ‖Aψ(0)‖`, valid when
/// `max|u| ≤ (1 - δ)/a`.
pub fn unbounded_bound(a_coeff: f64, delta: f64, tv: f64, initial_anorm: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta {delta} outside (0, 1)"
        )));
    }
    Ok((a_coeff * tv / delta).exp() * initial_anorm)
}

/// Tightest admissible `δ = 1 - a·max|u|`.
pub fn admissible_delta(a_coeff: f64, signal: &ControlSignal) -> f64 {
    1.0 - a_coeff * signal.max_abs()
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub anorm: Vec<f64>,
    pub energy: Vec<f64>,
    pub populations: Vec<Vec<f64>>,
}

pub fn trace(triple: &OperatorTriple, result: &PropagationResult) -> EnergyTrace {
    EnergyTrace {
        times: result.times.clone(),
        anorm: result.states.iter().map(|s| anorm(triple, s)).collect(),
        energy: result.states.iter().map(|s| energy(triple, s)).collect(),
        populations: result
            .states
            .iter()
            .map(crate::propagate::populations)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundCase {
    Bounded,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub case: BoundCase,
    /// Which constant was used for `‖B‖` or `‖B‖_A`.
    pub constant_source: String,
    pub constant: f64,
    /// `δ` for the unbounded case.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub tv: f64,
    pub initial_anorm: f64,
    pub final_anorm: f64,
    pub bound_value: f64,
    pub satisfied: bool,
    /// `bound_value - final_anorm`.
    pub margin: f64,
}

impl BoundReport {
    #[allow(clippy::too_many_arguments)]
    fn new(
        case: BoundCase,
        constant_source: &str,
        constant: f64,
        delta: Option<f64>,
        tv: f64,
        initial_anorm: f64,
        final_anorm: f64,
        bound_value: f64,
    ) -> Self {
        let margin = bound_value - final_anorm;
        BoundReport {
            case,
            constant_source: constant_source.to_owned(),
            constant,
            delta,
            tv,
            initial_anorm,
            final_anorm,
            bound_value,
            satisfied: margin >= 0.0,
            margin,
        }
    }
}

/// Evaluates the applicable growth bounds for a run of `signal` in the
/// truncation `result.pair`.
///
/// Bounded coupling (`a = 0`): two reports, one with the measured `‖B^(N)‖`
/// and one with the model's offset constant `b`. Relatively bounded coupling:
/// one report with `δ = 1 - a·max|u|` (just below 1 for the zero control);
/// none if that `δ` is not positive.
pub fn bound_reports(triple: &OperatorTriple, result: &PropagationResult) -> Vec<BoundReport> {
    let tv = result.signal.total_variation();
    let initial = anorm(triple, &result.states[0]);
    let fin = anorm(triple, result.final_state());
    let rb = triple.relative_bound();
    if triple.is_unbounded() {
        let delta = admissible_delta(rb.a, &result.signal).min(1.0 - f64::EPSILON);
        match unbounded_bound(rb.a, delta, tv, initial) {
            Ok(bound) => vec![BoundReport::new(
                BoundCase::Unbounded,
                "relative_bound_a",
                rb.a,
                Some(delta),
                tv,
                initial,
                fin,
                bound,
            )],
            Err(_) => Vec::new(),
        }
    } else {
        let measured = result.pair.b_operator_norm();
        vec![
            BoundReport::new(
                BoundCase::Bounded,
                "truncated_operator_norm",
                measured,
                None,
                tv,
                initial,
                fin,
                bounded_bound(measured, tv, initial),
            ),
            BoundReport::new(
                BoundCase::Bounded,
                "relative_bound_b",
                rb.b,
                None,
                tv,
                initial,
                fin,
                bounded_bound(rb.b, tv, initial),
            ),
        ]
    }
}
