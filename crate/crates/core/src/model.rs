//! Spectral description of a bilinear system `ψ' = Aψ + u(t)Bψ`.
//!
//! `A` is diagonal in the basis `φ_1, φ_2, …` with `Aφ_j = -iλ_j φ_j`, and `B`
//! is given by its matrix elements `b_jk = ⟨φ_j, Bφ_k⟩`. Levels are indexed
//! from 1. Built-in models evaluate their spectral data from closed-form
//! expressions, so any truncation size is available; user models are finite
//! tables loaded from JSON.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default absolute tolerance when comparing spectral gaps.
pub const DEFAULT_GAP_TOL: f64 = 1e-9;

/// Coefficients `(a, b)` of a relative bound `‖Bψ‖ ≤ a‖Aψ‖ + b‖ψ‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeBound {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Spectrum {
    /// Planar rotor: `λ_k = k²`, `b_{k,k±1} = -i/2`.
    Rotor,
    /// Perturbed harmonic oscillator restricted to odd Hermite functions;
    /// level `n` is the Hermite function of index `2n - 1`.
    Oscillator,
    Table {
        eigenvalues: Vec<f64>,
        coupling: BTreeMap<(usize, usize), C64>,
    },
}

/// The triple `(A, B, Φ)` in spectral form.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTriple {
    name: String,
    spectrum: Spectrum,
    bandwidth: usize,
    relative_bound: RelativeBound,
    eigenvalue_shift: f64,
}

/// Galerkin compression of `A` and `B` onto the first `N` levels.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedPair {
    eigenvalues: DVector<f64>,
    a_matrix: DMatrix<C64>,
    b_matrix: DMatrix<C64>,
}

/// One unordered pair of levels with its spectral gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralGap {
    pub l: usize,
    pub m: usize,
    pub gap: f64,
    pub coupled: bool,
}

/// Outcome of a non-degeneracy scan for a transition `(j, k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionCheck {
    pub j: usize,
    pub k: usize,
    pub coupled: bool,
    /// Coupled pairs `(l, m)`, `l ≤ m ≤ depth`, sharing a level with `(j, k)`
    /// and having the same gap within tolerance.
    pub witnesses: Vec<(usize, usize)>,
    pub depth: usize,
}

impl TransitionCheck {
    /// True when the transition is coupled and no witness was found up to the
    /// scan depth. Nothing is claimed about levels beyond `depth`.
    pub fn is_nondegenerate(&self) -> bool {
        self.coupled && self.witnesses.is_empty()
    }
}

/// Result of [`OperatorTriple::validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub truncation: usize,
    pub nonpositive_levels: Vec<usize>,
    pub skew_violations: Vec<(usize, usize)>,
    pub bandwidth_violations: Vec<(usize, usize)>,
    pub samples: usize,
    /// Minimum over samples of `a‖Ax‖ + b‖x‖ - ‖Bx‖`.
    pub relative_bound_margin: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.nonpositive_levels.is_empty()
            && self.skew_violations.is_empty()
            && self.bandwidth_violations.is_empty()
            && self.relative_bound_margin >= 0.0
    }
}

/// Planar rotor: `A = iΔ` on odd functions of the circle, `B` = multiplication by `cos θ`.
pub fn make_rotor() -> OperatorTriple {
    OperatorTriple {
        name: "rotor".to_owned(),
        spectrum: Spectrum::Rotor,
        bandwidth: 1,
        relative_bound: RelativeBound { a: 0.0, b: SQRT_2 },
        eigenvalue_shift: 0.0,
    }
}

/// Perturbed harmonic oscillator `(-Δ + x²) + (-Δ + x²)⁻¹` with `x²` coupling,
/// restricted to odd functions.
///
/// The offset `b = 1` of the relative bound is not known in closed form and is
/// only checked by sampling in [`OperatorTriple::validate`].
pub fn make_oscillator() -> OperatorTriple {
    OperatorTriple {
        name: "oscillator".to_owned(),
        spectrum: Spectrum::Oscillator,
        bandwidth: 1,
        relative_bound: RelativeBound {
            a: 6f64.sqrt() / 4.0,
            b: 1.0,
        },
        eigenvalue_shift: 0.0,
    }
}

#[derive(Deserialize, Serialize)]
struct TripleFile {
    #[serde(default)]
    name: Option<String>,
    eigenvalues: Vec<f64>,
    coupling: Vec<[f64; 4]>,
    relative_bound: [f64; 2],
}

fn level_from_json(x: f64) -> Result<usize> {
    if x.fract() != 0.0 || x < 1.0 {
        return Err(Error::InvalidIndex(format!(
            "coupling index {x} is not a positive integer"
        )));
    }
    Ok(x as usize)
}

impl OperatorTriple {
    /// Builds a finite table model. `coupling` maps 1-based `(j, k)` to `b_jk`;
    /// absent entries are zero.
    pub fn from_table(
        name: impl Into<String>,
        eigenvalues: Vec<f64>,
        coupling: BTreeMap<(usize, usize), C64>,
        relative_bound: RelativeBound,
    ) -> Result<Self> {
        let levels = eigenvalues.len();
        if levels == 0 {
            return Err(Error::InvalidParameter("model has no eigenvalues".into()));
        }
        if !(relative_bound.a >= 0.0 && relative_bound.b >= 0.0) {
            return Err(Error::InvalidParameter(
                "relative bound coefficients must be nonnegative".into(),
            ));
        }
        let mut bandwidth = 0;
        for &(j, k) in coupling.keys() {
            if j == 0 || k == 0 || j > levels || k > levels {
                return Err(Error::InvalidIndex(format!(
                    "coupling ({j}, {k}) outside levels 1..={levels}"
                )));
            }
            bandwidth = bandwidth.max(j.abs_diff(k));
        }
        Ok(OperatorTriple {
            name: name.into(),
            spectrum: Spectrum::Table {
                eigenvalues,
                coupling,
            },
            bandwidth,
            relative_bound,
            eigenvalue_shift: 0.0,
        })
    }

    /// Parses `{"eigenvalues": [..], "coupling": [[j,k,re,im],..], "relative_bound": [a,b]}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TripleFile = serde_json::from_str(text)?;
        let mut coupling = BTreeMap::new();
        for [j, k, re, im] in file.coupling {
            let key = (level_from_json(j)?, level_from_json(k)?);
            coupling.insert(key, C64::new(re, im));
        }
        Self::from_table(
            file.name.unwrap_or_else(|| "user".to_owned()),
            file.eigenvalues,
            coupling,
            RelativeBound {
                a: file.relative_bound[0],
                b: file.relative_bound[1],
            },
        )
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Exports the first `n` levels as a JSON table that [`from_json_str`](Self::from_json_str) reads back.
    pub fn to_json_table(&self, n: usize) -> Result<serde_json::Value> {
        self.check_truncation(n)?;
        let eigenvalues = (1..=n).map(|j| self.eigenvalue(j)).collect();
        let mut coupling = Vec::new();
        for j in 1..=n {
            for k in self.band(j, n) {
                let b = self.coupling(j, k);
                if b != C64::new(0.0, 0.0) {
                    coupling.push([j as f64, k as f64, b.re, b.im]);
                }
            }
        }
        let file = TripleFile {
            name: Some(self.name.clone()),
            eigenvalues,
            coupling,
            relative_bound: [self.relative_bound.a, self.relative_bound.b],
        };
        Ok(serde_json::to_value(file)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn relative_bound(&self) -> RelativeBound {
        self.relative_bound
    }

    /// Admissible bound on `|u|`: `1/a`, or infinity when `a = 0`.
    pub fn amplitude_limit(&self) -> f64 {
        if self.relative_bound.a > 0.0 {
            1.0 / self.relative_bound.a
        } else {
            f64::INFINITY
        }
    }

    /// Whether the coupling is relatively bounded only (`a > 0`).
    pub fn is_unbounded(&self) -> bool {
        self.relative_bound.a > 0.0
    }

    /// Number of levels, or `None` for closed-form models.
    pub fn max_level(&self) -> Option<usize> {
        match &self.spectrum {
            Spectrum::Table { eigenvalues, .. } => Some(eigenvalues.len()),
            _ => None,
        }
    }

    /// `λ_j` with `Aφ_j = -iλ_j φ_j`.
    ///
    /// # Panics
    /// If `j == 0` or `j` exceeds the levels of a table model.
    pub fn eigenvalue(&self, j: usize) -> f64 {
        assert!(j >= 1, "levels are indexed from 1");
        let base = match &self.spectrum {
            Spectrum::Rotor => (j * j) as f64,
            Spectrum::Oscillator => {
                let m = (4 * j - 1) as f64;
                m + 1.0 / m
            }
            Spectrum::Table { eigenvalues, .. } => eigenvalues[j - 1],
        };
        base + self.eigenvalue_shift
    }

    /// `b_jk = ⟨φ_j, Bφ_k⟩`; zero outside the band.
    ///
    /// # Panics
    /// If either index is zero.
    pub fn coupling(&self, j: usize, k: usize) -> C64 {
        assert!(j >= 1 && k >= 1, "levels are indexed from 1");
        if j.abs_diff(k) > self.bandwidth {
            return C64::new(0.0, 0.0);
        }
        match &self.spectrum {
            Spectrum::Rotor => {
                if j.abs_diff(k) == 1 {
                    C64::new(0.0, -0.5)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            Spectrum::Oscillator => {
                let n = j.min(k) as f64;
                if j == k {
                    C64::new(0.0, -(n - 0.5))
                } else {
                    C64::new(0.0, -(n * (n + 0.5)).sqrt())
                }
            }
            Spectrum::Table { coupling, .. } => {
                coupling.get(&(j, k)).copied().unwrap_or(C64::new(0.0, 0.0))
            }
        }
    }

    /// Same model with every `λ_j` replaced by `λ_j + shift`.
    pub fn with_shifted_spectrum(&self, shift: f64) -> Self {
        let mut shifted = self.clone();
        shifted.eigenvalue_shift += shift;
        shifted
    }

    fn band(&self, j: usize, n: usize) -> std::ops::RangeInclusive<usize> {
        j.saturating_sub(self.bandwidth).max(1)..=(j + self.bandwidth).min(n)
    }

    fn check_truncation(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "truncation must be at least 1".into(),
            ));
        }
        if let Some(levels) = self.max_level() {
            if n > levels {
                return Err(Error::TruncationTooLarge {
                    model: self.name.clone(),
                    requested: n,
                    available: levels,
                });
            }
        }
        Ok(())
    }

    fn check_level(&self, j: usize, depth: usize) -> Result<()> {
        if j == 0 || j > depth {
            return Err(Error::InvalidIndex(format!(
                "level {j} outside 1..={depth}"
            )));
        }
        Ok(())
    }

    /// Compressions `A^(N)` and `B^(N)` onto `span(φ_1..φ_N)`.
    pub fn compress(&self, n: usize) -> Result<CompressedPair> {
        self.check_truncation(n)?;
        let eigenvalues = DVector::from_fn(n, |i, _| self.eigenvalue(i + 1));
        let a_matrix = DMatrix::from_diagonal(&eigenvalues.map(|l| C64::new(0.0, -l)));
        let mut b_matrix = DMatrix::zeros(n, n);
        for j in 1..=n {
            for k in self.band(j, n) {
                b_matrix[(j - 1, k - 1)] = self.coupling(j, k);
            }
        }
        let scale = b_matrix.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for r in 0..n {
            for c in r..n {
                let deviation = (b_matrix[(r, c)] + b_matrix[(c, r)].conj()).norm();
                if deviation > 1e-12 * scale {
                    return Err(Error::NotSkewAdjoint {
                        row: r + 1,
                        col: c + 1,
                        deviation,
                    });
                }
            }
        }
        Ok(CompressedPair {
            eigenvalues,
            a_matrix,
            b_matrix,
        })
    }

    /// All pairs `l < m ≤ n` with their gap `|λ_l - λ_m|` and whether `b_lm ≠ 0`.
    pub fn spectral_gaps(&self, n: usize) -> Result<Vec<SpectralGap>> {
        self.check_truncation(n)?;
        let mut gaps = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for l in 1..=n {
            for m in l + 1..=n {
                gaps.push(SpectralGap {
                    l,
                    m,
                    gap: (self.eigenvalue(l) - self.eigenvalue(m)).abs(),
                    coupled: self.coupling(l, m).norm() > 0.0,
                });
            }
        }
        Ok(gaps)
    }

    /// Scans levels `1..=depth` for coupled pairs that share a level with
    /// `(j, k)` and have the same gap (absolute tolerance `tol`).
    ///
    /// Pairs are compared as unordered sets, so `(k, j)` is the same transition.
    /// Diagonal pairs `(l, l)` are included; they matter only for degenerate
    /// spectra.
    pub fn is_nondegenerate_transition(
        &self,
        j: usize,
        k: usize,
        depth: usize,
        tol: f64,
    ) -> Result<TransitionCheck> {
        if j == k {
            return Err(Error::InvalidIndex(format!(
                "transition ({j}, {k}) is diagonal"
            )));
        }
        self.check_truncation(depth)?;
        self.check_level(j, depth)?;
        self.check_level(k, depth)?;
        let gap = (self.eigenvalue(j) - self.eigenvalue(k)).abs();
        let coupled = self.coupling(j, k).norm() > 0.0;
        let same = |l: usize, m: usize| (l == j && m == k) || (l == k && m == j);
        let mut witnesses = Vec::new();
        for l in 1..=depth {
            for m in self.band(l, depth).filter(|&m| m >= l) {
                if same(l, m) || self.coupling(l, m).norm() == 0.0 {
                    continue;
                }
                let overlaps = l == j || l == k || m == j || m == k;
                if !overlaps {
                    continue;
                }
                let other = (self.eigenvalue(l) - self.eigenvalue(m)).abs();
                if (other - gap).abs() <= tol {
                    witnesses.push((l, m));
                }
            }
        }
        Ok(TransitionCheck {
            j,
            k,
            coupled,
            witnesses,
            depth,
        })
    }

    /// Checks positivity of `λ_j`, skew-adjointness and bandwidth of `B`, and
    /// samples the relative bound on `samples` random unit vectors of the
    /// `n`-level truncation.
    pub fn validate(&self, n: usize, samples: usize, seed: u64) -> Result<ValidationReport> {
        self.check_truncation(n)?;
        let nonpositive_levels = (1..=n).filter(|&j| !(self.eigenvalue(j) > 0.0)).collect();

        let mut skew_violations = Vec::new();
        let mut bandwidth_violations = Vec::new();
        let mut b = DMatrix::<C64>::zeros(n, n);
        for j in 1..=n {
            for k in 1..=n {
                b[(j - 1, k - 1)] = self.raw_coupling(j, k);
            }
        }
        let scale = b.iter().map(|z| z.norm()).fold(1.0, f64::max);
        for j in 1..=n {
            for k in j..=n {
                let bjk = b[(j - 1, k - 1)];
                let bkj = b[(k - 1, j - 1)];
                if (bjk + bkj.conj()).norm() > 1e-12 * scale {
                    skew_violations.push((j, k));
                }
                if j.abs_diff(k) > self.bandwidth && (bjk.norm() > 0.0 || bkj.norm() > 0.0) {
                    bandwidth_violations.push((j, k));
                }
            }
        }

        let a_diag: Vec<f64> = (1..=n).map(|j| self.eigenvalue(j)).collect();
        let RelativeBound { a, b: offset } = self.relative_bound;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut margin = f64::INFINITY;
        for _ in 0..samples {
            let mut x = DVector::from_fn(n, |_, _| {
                C64::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                )
            });
            let norm = x.norm();
            if norm == 0.0 {
                continue;
            }
            x /= C64::from(norm);
            let bx = (&b * &x).norm();
            let ax = x
                .iter()
                .zip(&a_diag)
                .map(|(c, l)| l * l * c.norm_sqr())
                .sum::<f64>()
                .sqrt();
            margin = margin.min(a * ax + offset - bx);
        }
        Ok(ValidationReport {
            truncation: n,
            nonpositive_levels,
            skew_violations,
            bandwidth_violations,
            samples,
            relative_bound_margin: margin,
        })
    }

    /// Coupling lookup that ignores the band; used to detect stray table entries.
    fn raw_coupling(&self, j: usize, k: usize) -> C64 {
        match &self.spectrum {
            Spectrum::Table { coupling, .. } => {
                coupling.get(&(j, k)).copied().unwrap_or(C64::new(0.0, 0.0))
            }
            _ => self.coupling(j, k),
        }
    }
}

impl fmt::Display for OperatorTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (bandwidth {}, |B|_A ≤ {}, offset {})",
            self.name, self.bandwidth, self.relative_bound.a, self.relative_bound.b
        )
    }
}

impl CompressedPair {
    pub fn size(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `λ_1..λ_N`.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn a_matrix(&self) -> &DMatrix<C64> {
        &self.a_matrix
    }

    pub fn b_matrix(&self) -> &DMatrix<C64> {
        &self.b_matrix
    }

    /// `A^(N) + u B^(N)`.
    pub fn generator(&self, u: f64) -> DMatrix<C64> {
        &self.a_matrix + &self.b_matrix * C64::from(u)
    }

    /// The Hermitian matrix `i(A^(N) + u B^(N))`.
    pub fn hamiltonian(&self, u: f64) -> DMatrix<C64> {
        self.generator(u) * C64::i()
    }

    /// Largest singular value of `B^(N)`.
    pub fn b_operator_norm(&self) -> f64 {
        self.b_matrix
            .clone()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }
}
