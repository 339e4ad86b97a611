//! Piecewise-constant controls and their functionals.
//!
//! A signal takes the value `u_i` on `[t_{i-1}, t_i)` with `t_0 = 0`. It is
//! understood to be preceded by `u = 0`, so [`ControlSignal::total_variation`]
//! counts the initial jump `|u_1|`. No jump back to zero is added at the end.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// A sampled sine pulse `t ↦ amplitude · sin(omega · t)` on `[0, duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinePulseSpec {
    pub amplitude: f64,
    pub omega: f64,
    pub duration: f64,
    pub step: f64,
}

/// On-disk signal formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SignalFile {
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    Sine {
        amplitude: f64,
        omega: f64,
        duration: f64,
        step: f64,
    },
}

impl ControlSignal {
    /// `breakpoints` are `t_0 = 0 < t_1 < … < t_m`; `values` are `u_1..u_m`.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSignal("signal has no pieces".into()));
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidSignal(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidSignal("first breakpoint must be 0".into()));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSignal(format!(
                "breakpoints not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if breakpoints.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::InvalidSignal("non-finite entry".into()));
        }
        Ok(ControlSignal {
            breakpoints,
            values,
        })
    }

    /// Consecutive pieces of the given lengths.
    pub fn from_durations(durations: &[f64], values: Vec<f64>) -> Result<Self> {
        let mut breakpoints = Vec::with_capacity(durations.len() + 1);
        breakpoints.push(0.0);
        let mut t = 0.0;
        for d in durations {
            t += d;
            breakpoints.push(t);
        }
        Self::new(breakpoints, values)
    }

    pub fn constant(value: f64, duration: f64) -> Result<Self> {
        Self::new(vec![0.0, duration], vec![value])
    }

    pub fn zero(duration: f64) -> Result<Self> {
        Self::constant(0.0, duration)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration(&self) -> f64 {
        *self.breakpoints.last().expect("nonempty by construction")
    }

    /// Iterator over `(t_start, t_end, u)`.
    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, &u)| (w[0], w[1], u))
    }

    /// Index of the piece containing `t` (the last piece for `t ≥ duration`).
    pub fn piece_index(&self, t: f64) -> usize {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        i.saturating_sub(1).min(self.values.len() - 1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.values[self.piece_index(t)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    /// `|u_1| + Σ |u_{i+1} - u_i|`.
    pub fn total_variation(&self) -> f64 {
        self.values[0].abs() + self.internal_variation()
    }

    /// Variation without the initial jump from zero.
    pub fn internal_variation(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// `(Σ |u_i|^p (t_i - t_{i-1}))^{1/p}` for `p ≥ 1`.
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("L^p exponent {p} < 1")));
        }
        let integral: f64 = self
            .pieces()
            .map(|(a, b, u)| u.abs().powf(p) * (b - a))
            .sum();
        Ok(integral.powf(1.0 / p))
    }

    /// `∫_0^T u(τ) e^{i·gap·τ} dτ`, exact for piecewise-constant `u`.
    pub fn fourier_coefficient(&self, gap: f64) -> C64 {
        self.pieces()
            .map(|(a, b, u)| {
                let half = 0.5 * (b - a);
                let x = gap * half;
                let weight = if x.abs() < 1e-8 {
                    2.0 * half
                } else {
                    2.0 * x.sin() / gap
                };
                C64::from_polar(u * weight, gap * (a + half))
            })
            .sum()
    }

    pub fn scale(&self, c: f64) -> Self {
        ControlSignal {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|u| c * u).collect(),
        }
    }

    /// `other` shifted by `self.duration()` and appended; the joint breakpoint
    /// is dropped when the adjacent values coincide.
    pub fn concat(&self, other: &ControlSignal) -> Self {
        let offset = self.duration();
        let mut breakpoints = self.breakpoints.clone();
        let mut values = self.values.clone();
        let mut rest = other.pieces();
        if let Some((_, end, u)) = rest.next() {
            if values.last() == Some(&u) {
                *breakpoints.last_mut().unwrap() = offset + end;
            } else {
                breakpoints.push(offset + end);
                values.push(u);
            }
        }
        for (_, end, u) in rest {
            breakpoints.push(offset + end);
            values.push(u);
        }
        ControlSignal {
            breakpoints,
            values,
        }
    }

    /// The first `count` pieces.
    pub fn truncate_pieces(&self, count: usize) -> Result<Self> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidParameter(format!(
                "cannot keep {count} of {} pieces",
                self.len()
            )));
        }
        Ok(ControlSignal {
            breakpoints: self.breakpoints[..=count].to_vec(),
            values: self.values[..count].to_vec(),
        })
    }

    pub fn from_file_spec(spec: &SignalFile) -> Result<Self> {
        match spec {
            SignalFile::PiecewiseConstant {
                breakpoints,
                values,
            } => Self::new(breakpoints.clone(), values.clone()),
            SignalFile::Sine {
                amplitude,
                omega,
                duration,
                step,
            } => sample_sine(&SinePulseSpec {
                amplitude: *amplitude,
                omega: *omega,
                duration: *duration,
                step: *step,
            }),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_file_spec(&serde_json::from_str(text)?)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file_spec(&self) -> SignalFile {
        SignalFile::PiecewiseConstant {
            breakpoints: self.breakpoints.clone(),
            values: self.values.clone(),
        }
    }

    /// CSV with columns `t,u`, one row per piece start.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,u")?;
        for (t, _, u) in self.pieces() {
            writeln!(out, "{t},{u}")?;
        }
        Ok(())
    }
}

/// Midpoint sampling of a sine pulse: the piece `[t_{i-1}, t_i)` takes the
/// value `amplitude · sin(omega · (t_{i-1} + t_i)/2)`. The duration is rounded
/// to the nearest multiple of `step`.
pub fn sample_sine(spec: &SinePulseSpec) -> Result<ControlSignal> {
    let SinePulseSpec {
        amplitude,
        omega,
        duration,
        step,
    } = *spec;
    if !(step > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidSignal(format!(
            "sine pulse needs positive step and duration (step {step}, duration {duration})"
        )));
    }
    if !(omega > 0.0) || !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::InvalidSignal(format!(
            "sine pulse needs omega > 0 and amplitude ≥ 0 (omega {omega}, amplitude {amplitude})"
        )));
    }
    if !(step < PI / omega) {
        return Err(Error::InvalidSignal(format!(
            "step {step} leaves fewer than two samples per half-period of omega {omega}"
        )));
    }
    let count = ((duration / step).round() as usize).max(1);
    let breakpoints = (0..=count).map(|i| i as f64 * step).collect();
    let values = (0..count)
        .map(|i| amplitude * (omega * (i as f64 + 0.5) * step).sin())
        .collect();
    ControlSignal::new(breakpoints, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn sig(values: Vec<f64>) -> ControlSignal {
        let d = vec![1.0; values.len()];
        ControlSignal::from_durations(&d, values).unwrap()
    }

    #[test]
    fn tv_counts_initial_jump() {
        assert_eq!(sig(vec![1.0, -1.0, 1.0]).total_variation(), 5.0);
        assert_eq!(ControlSignal::zero(3.0).unwrap().total_variation(), 0.0);
    }

    #[test]
    fn lp_norm_examples() {
        let one = ControlSignal::constant(1.0, 4.0).unwrap();
        assert!((one.lp_norm(2.0).unwrap() - 2.0).abs() < 1e-15);
        let three = ControlSignal::constant(3.0, 1.0).unwrap();
        assert_eq!(three.lp_norm(1.0).unwrap(), 3.0);
        assert!(three.lp_norm(0.5).is_err());
    }

    #[test]
    fn invalid_signals_rejected() {
        assert!(ControlSignal::new(vec![0.0], vec![]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(ControlSignal::new(vec![0.5, 1.0], vec![1.0]).is_err());
        assert!(ControlSignal::new(vec![0.0, 1.0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn sine_one_period() {
        let omega = 3.0;
        let period = TAU / omega;
        let s = sample_sine(&SinePulseSpec {
            amplitude: 1.0,
            omega,
            duration: period,
            step: period / 1000.0,
        })
        .unwrap();
        assert_eq!(s.len(), 1000);
        assert!((s.total_variation() - 4.0).abs() / 4.0 < 5e-3);
        let l1 = s.lp_norm(1.0).unwrap();
        assert!((l1 - 4.0 / omega).abs() / (4.0 / omega) < 5e-3);
    }

    #[test]
    fn sine_zero_amplitude_and_bad_specs() {
        let z = sample_sine(&SinePulseSpec {
            amplitude: 0.0,
            omega: 1.0,
            duration: 1.0,
            step: 0.1,
        })
        .unwrap();
        assert_eq!(z.total_variation(), 0.0);
        let bad = |step: f64, duration: f64| {
            sample_sine(&SinePulseSpec {
                amplitude: 1.0,
                omega: 1.0,
                duration,
                step,
            })
        };
        assert!(bad(0.0, 1.0).is_err());
        assert!(bad(0.1, -1.0).is_err());
        assert!(bad(4.0, 10.0).is_err());
    }

    #[test]
    fn sine_tv_limit_over_long_pulse() {
        // sin(3t)/n on [0, 2πn]: TV → 2ω/|b| = 12 for |b| = 1/2.
        let n = 50.0;
        let period = TAU / 3.0;
        let s = sample_sine(&SinePulseSpec {
            amplitude: 1.0 / n,
            omega: 3.0,
            duration: TAU * n,
            step: period / 400.0,
        })
        .unwrap();
        assert!((s.total_variation() - 12.0).abs() / 12.0 < 1e-3);
    }

    #[test]
    fn fourier_coefficient_of_sine() {
        let omega = 2.0;
        let period = TAU / omega;
        let s = sample_sine(&SinePulseSpec {
            amplitude: 1.0,
            omega,
            duration: period,
            step: period / 2000.0,
        })
        .unwrap();
        let resonant = s.fourier_coefficient(omega);
        // ∫_0^T sin(ωτ) e^{iωτ} dτ = iT/2.
        assert!((resonant - C64::new(0.0, period / 2.0)).norm() < 1e-5);
        for m in [0.0, 2.0, 3.0, 4.0] {
            assert!(s.fourier_coefficient(m * omega).norm() < 1e-12);
        }
        assert_eq!(
            ControlSignal::zero(1.0).unwrap().fourier_coefficient(1.3),
            C64::new(0.0, 0.0)
        );
    }

    #[test]
    fn fourier_coefficient_matches_quadrature() {
        let s = sig(vec![0.3, -1.2, 2.0]);
        let gap = 1.7;
        // Composite midpoint rule on a fine grid, independent of the closed form.
        let n = 300_000;
        let h = s.duration() / n as f64;
        let quad: C64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                C64::from_polar(s.value_at(t) * h, gap * t)
            })
            .sum();
        assert!((quad - s.fourier_coefficient(gap)).norm() < 1e-9);
    }

    #[test]
    fn concat_merges_equal_values() {
        let a = sig(vec![1.0, 2.0]);
        let b = sig(vec![2.0, 0.5]);
        let c = a.concat(&b);
        assert_eq!(c.values(), &[1.0, 2.0, 0.5]);
        assert_eq!(c.breakpoints(), &[0.0, 1.0, 3.0, 4.0]);
        let zero = ControlSignal::zero(1.0).unwrap();
        let zz = zero.concat(&zero);
        assert_eq!(zz.values(), &[0.0]);
        assert_eq!(zz.duration(), 2.0);
    }

    #[test]
    fn concat_of_pulses_adds_tv() {
        let pulse = |omega: f64| {
            sample_sine(&SinePulseSpec {
                amplitude: 0.1,
                omega,
                duration: 5.0 * TAU / omega,
                step: TAU / omega / 400.0,
            })
            .unwrap()
        };
        let (p1, p2) = (pulse(3.0), pulse(5.0));
        let whole = p1.concat(&p2).total_variation();
        let sum = p1.total_variation() + p2.total_variation();
        assert!((whole - sum).abs() < 1e-2 * 0.1);
    }

    #[test]
    fn piece_lookup() {
        let s = sig(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.value_at(0.0), 1.0);
        assert_eq!(s.value_at(1.0), 2.0);
        assert_eq!(s.value_at(2.5), 3.0);
        assert_eq!(s.value_at(10.0), 3.0);
    }

    #[test]
    fn json_formats() {
        let pc = r#"{"type":"piecewise_constant","breakpoints":[0,1,2],"values":[0.5,-0.5]}"#;
        let s = ControlSignal::from_json_str(pc).unwrap();
        assert_eq!(s.total_variation(), 1.5);
        let sine = r#"{"type":"sine","amplitude":0.02,"omega":3,"duration":2.0943951023931953,"step":0.0052359877559829885}"#;
        let s = ControlSignal::from_json_str(sine).unwrap();
        assert_eq!(s.len(), 400);
        assert!(ControlSignal::from_json_str(r#"{"type":"square"}"#).is_err());
        let back = serde_json::to_string(&s.to_file_spec()).unwrap();
        assert_eq!(ControlSignal::from_json_str(&back).unwrap(), s);
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        sig(vec![1.0, -2.0]).write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,u\n0,1\n1,-2\n");
    }

    fn arb_signal() -> impl Strategy<Value = ControlSignal> {
        prop::collection::vec((0.01f64..2.0, -3.0f64..3.0), 1..40).prop_map(|pieces| {
            let (d, v): (Vec<f64>, Vec<f64>) = pieces.into_iter().unzip();
            ControlSignal::from_durations(&d, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn scaling_is_homogeneous(s in arb_signal(), c in -4.0f64..4.0, p in 1.0f64..4.0) {
            let scaled = s.scale(c);
            let tv = s.total_variation();
            prop_assert!((scaled.total_variation() - c.abs() * tv).abs() <= 1e-12 * (1.0 + tv));
            let lp = s.lp_norm(p).unwrap();
            prop_assert!((scaled.lp_norm(p).unwrap() - c.abs() * lp).abs() <= 1e-10 * (1.0 + lp));
        }

        #[test]
        fn refinement_leaves_functionals_unchanged(s in arb_signal(), p in 1.0f64..3.0) {
            // Split every piece in two without changing the value function.
            let mut bp = vec![0.0];
            let mut vals = Vec::new();
            for (a, b, u) in s.pieces() {
                bp.push(0.5 * (a + b));
                bp.push(b);
                vals.extend([u, u]);
            }
            let fine = ControlSignal::new(bp, vals).unwrap();
            prop_assert!((fine.total_variation() - s.total_variation()).abs() < 1e-12);
            let (x, y) = (fine.lp_norm(p).unwrap(), s.lp_norm(p).unwrap());
            prop_assert!((x - y).abs() <= 1e-10 * (1.0 + y));
        }

        #[test]
        fn concat_variation_unrolls(a in arb_signal(), b in arb_signal()) {
            let c = a.concat(&b);
            let expected = a.total_variation()
                + (b.values()[0] - a.values()[a.len() - 1]).abs()
                + b.internal_variation();
            prop_assert!((c.total_variation() - expected).abs() < 1e-10);
            prop_assert!(c.total_variation() + 1e-12 >= a.total_variation().max(b.internal_variation()));
            prop_assert!((c.duration() - a.duration() - b.duration()).abs() < 1e-12);
        }
    }
}
