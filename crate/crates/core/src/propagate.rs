//! Galerkin propagators for piecewise-constant controls.
//!
//! On a piece where `u` is constant the truncated system is autonomous, and
//! its flow is `exp(dt (A^(N) + u B^(N)))`. With `H = i(A^(N) + u B^(N))`
//! Hermitian and `H = V diag(μ) V†`, the flow is `V diag(e^{-iμ dt}) V†`, which
//! is unitary up to rounding. The full propagator is the ordered product over
//! pieces.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CompressedPair, OperatorTriple};
use crate::signal::ControlSignal;

/// Coefficients of a state in the eigenbasis `φ_1..φ_N`.
pub type State = DVector<C64>;

/// Tolerance on `‖ψ‖ - 1` for states handed to the propagator.
pub const NORM_TOL: f64 = 1e-9;

const CACHE_CAPACITY: usize = 4096;

/// `φ_level` in an `n`-level truncation.
pub fn basis_state(n: usize, level: usize) -> State {
    assert!(level >= 1 && level <= n, "level {level} outside 1..={n}");
    let mut psi = State::zeros(n);
    psi[level - 1] = C64::new(1.0, 0.0);
    psi
}

/// `|c_j|²` for every level.
pub fn populations(psi: &State) -> Vec<f64> {
    psi.iter().map(|c| c.norm_sqr()).collect()
}

fn check_norm(psi: &State) -> Result<()> {
    let norm = psi.norm();
    if (norm - 1.0).abs() > NORM_TOL {
        return Err(Error::NotNormalized(norm));
    }
    Ok(())
}

fn check_dimension(pair: &CompressedPair, psi: &State) -> Result<()> {
    if psi.len() != pair.size() {
        return Err(Error::DimensionMismatch {
            expected: pair.size(),
            found: psi.len(),
        });
    }
    Ok(())
}

/// Eigendecomposition of one Hermitian generator.
#[derive(Debug, Clone)]
struct SpectralFactor {
    energies: DVector<f64>,
    vectors: DMatrix<C64>,
    adjoint: DMatrix<C64>,
}

impl SpectralFactor {
    fn new(h: DMatrix<C64>) -> Result<Self> {
        let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let deviation = (&h - h.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if deviation > 1e-12 * scale {
            return Err(Error::NonHermitian(deviation));
        }
        let (energies, vectors) = if h.iter().all(|z| z.im == 0.0) {
            let eig = h
                .map(|z| z.re)
                .try_symmetric_eigen(f64::EPSILON, 10_000)
                .ok_or(Error::EigenFailure)?;
            (eig.eigenvalues, eig.eigenvectors.map(C64::from))
        } else {
            let eig = h
                .try_symmetric_eigen(f64::EPSILON, 10_000)
                .ok_or(Error::EigenFailure)?;
            (eig.eigenvalues, eig.eigenvectors)
        };
        let adjoint = vectors.adjoint();
        Ok(SpectralFactor {
            energies,
            vectors,
            adjoint,
        })
    }

    fn apply(&self, dt: f64, psi: &State) -> State {
        let mut c = &self.adjoint * psi;
        for (cj, mu) in c.iter_mut().zip(self.energies.iter()) {
            *cj *= C64::from_polar(1.0, -mu * dt);
        }
        &self.vectors * c
    }
}

fn free_phases(pair: &CompressedPair, dt: f64, psi: &State) -> State {
    State::from_iterator(
        psi.len(),
        psi.iter()
            .zip(pair.eigenvalues().iter())
            .map(|(c, l)| c * C64::from_polar(1.0, -l * dt)),
    )
}

/// `exp(dt (A^(N) + u B^(N))) ψ` for a single constant piece.
pub fn step(pair: &CompressedPair, u: f64, dt: f64, psi: &State) -> Result<State> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "time step {dt} must be positive"
        )));
    }
    check_dimension(pair, psi)?;
    check_norm(psi)?;
    if u == 0.0 {
        return Ok(free_phases(pair, dt, psi));
    }
    Ok(SpectralFactor::new(pair.hamiltonian(u))?.apply(dt, psi))
}

/// Stateful stepping over a fixed compression, memoizing eigendecompositions
/// by the bit pattern of `u`. The cache lives only as long as the propagator.
pub struct Propagator {
    pair: CompressedPair,
    cache: HashMap<u64, SpectralFactor>,
}

impl Propagator {
    pub fn new(pair: CompressedPair) -> Self {
        Propagator {
            pair,
            cache: HashMap::new(),
        }
    }

    pub fn pair(&self) -> &CompressedPair {
        &self.pair
    }

    /// One piece; no precondition checks beyond those on the generator.
    pub fn advance(&mut self, u: f64, dt: f64, psi: &State) -> Result<State> {
        if u == 0.0 {
            return Ok(free_phases(&self.pair, dt, psi));
        }
        let key = u.to_bits();
        if !self.cache.contains_key(&key) {
            let factor = SpectralFactor::new(self.pair.hamiltonian(u))?;
            if self.cache.len() >= CACHE_CAPACITY {
                self.cache.clear();
            }
            self.cache.insert(key, factor);
        }
        Ok(self.cache[&key].apply(dt, psi))
    }

    /// Runs `signal` from `psi0`, calling `visit(i, t_i, ψ(t_i))` at every
    /// breakpoint `i = 0..=m`. Returns the final state.
    pub fn run<F>(&mut self, signal: &ControlSignal, psi0: &State, mut visit: F) -> Result<State>
    where
        F: FnMut(usize, f64, &State),
    {
        check_dimension(&self.pair, psi0)?;
        check_norm(psi0)?;
        let mut psi = psi0.clone();
        visit(0, 0.0, &psi);
        for (i, (a, b, u)) in signal.pieces().enumerate() {
            psi = self.advance(u, b - a, &psi)?;
            visit(i + 1, b, &psi);
        }
        Ok(psi)
    }
}

/// Trajectory recorded at a subset of the signal's breakpoints.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Breakpoint index of each recorded state.
    pub piece_indices: Vec<usize>,
    pub signal: ControlSignal,
    pub pair: CompressedPair,
}

impl PropagationResult {
    pub fn truncation(&self) -> usize {
        self.pair.size()
    }

    pub fn final_state(&self) -> &State {
        self.states
            .last()
            .expect("at least the initial state is recorded")
    }

    /// Control value in force from each recorded time on (the last value at
    /// the final time).
    pub fn recorded_controls(&self) -> Vec<f64> {
        let values = self.signal.values();
        self.piece_indices
            .iter()
            .map(|&i| values[i.min(values.len() - 1)])
            .collect()
    }

    /// State at an arbitrary time in `[0, duration]`, reconstructed from the
    /// nearest earlier record by stepping forward, with a partial last step.
    pub fn state_at(&self, t: f64) -> Result<State> {
        let duration = self.signal.duration();
        if !(0.0..=duration).contains(&t) {
            return Err(Error::InvalidParameter(format!(
                "time {t} outside [0, {duration}]"
            )));
        }
        let piece = self.signal.piece_index(t);
        let record = self.piece_indices.partition_point(|&i| i <= piece) - 1;
        let mut psi = self.states[record].clone();
        let bp = self.signal.breakpoints();
        let values = self.signal.values();
        let mut propagator = Propagator::new(self.pair.clone());
        for i in self.piece_indices[record]..piece {
            psi = propagator.advance(values[i], bp[i + 1] - bp[i], &psi)?;
        }
        let rest = t - bp[piece];
        if rest > 0.0 {
            psi = propagator.advance(values[piece], rest, &psi)?;
        }
        Ok(psi)
    }
}

/// Propagates `psi0` under `signal` in the `n`-level Galerkin truncation,
/// keeping every `record_every`-th breakpoint state plus the final one.
pub fn propagate(
    triple: &OperatorTriple,
    n: usize,
    signal: &ControlSignal,
    psi0: &State,
    record_every: usize,
) -> Result<PropagationResult> {
    if record_every == 0 {
        return Err(Error::InvalidParameter(
            "record_every must be at least 1".into(),
        ));
    }
    let limit = triple.amplitude_limit();
    let max_abs = signal.max_abs();
    if !(max_abs < limit) {
        return Err(Error::AmplitudeLimit { max_abs, limit });
    }
    let pieces = signal.len();
    let mut propagator = Propagator::new(triple.compress(n)?);
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut piece_indices = Vec::new();
    propagator.run(signal, psi0, |i, t, psi| {
        if i % record_every == 0 || i == pieces {
            times.push(t);
            states.push(psi.clone());
            piece_indices.push(i);
        }
    })?;
    Ok(PropagationResult {
        times,
        states,
        piece_indices,
        signal: signal.clone(),
        pair: propagator.pair,
    })
}

/// Classical fourth-order Runge–Kutta on `x' = (A^(N) + u B^(N)) x`, without
/// renormalization. Every piece must be an integer multiple of `dt_fine`.
/// Independent of the eigendecomposition path; meant for verification.
pub fn oracle_integrate(
    triple: &OperatorTriple,
    n: usize,
    signal: &ControlSignal,
    psi0: &State,
    dt_fine: f64,
) -> Result<State> {
    if !(dt_fine > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "dt_fine {dt_fine} must be positive"
        )));
    }
    let pair = triple.compress(n)?;
    check_dimension(&pair, psi0)?;
    let mut x = psi0.clone();
    for (a, b, u) in signal.pieces() {
        let len = b - a;
        let count = (len / dt_fine).round();
        if count < 1.0 || (count * dt_fine - len).abs() > 1e-6 * dt_fine {
            return Err(Error::InvalidParameter(format!(
                "piece of length {len} is not a multiple of dt_fine {dt_fine}"
            )));
        }
        let h = C64::from(len / count);
        let half = C64::from(0.5) * h;
        let m = pair.generator(u);
        for _ in 0..count as usize {
            let k1 = &m * &x;
            let k2 = &m * (&x + &k1 * half);
            let k3 = &m * (&x + &k2 * half);
            let k4 = &m * (&x + &k3 * h);
            x += (k1 + (k2 + k3) * C64::from(2.0) + k4) * (h / 6.0);
        }
    }
    Ok(x)
}

/// Final-state comparison between consecutive truncation sizes.
#[derive(Debug, Clone, Serialize)]
pub struct GalerkinRow {
    pub n: usize,
    pub n_next: usize,
    /// `‖(X_N ψ0 ⊕ 0) - X_{N'} ψ0‖` at the final time.
    pub discrepancy: f64,
    /// `Σ_{j > N/2} |c_j|²` of the smaller run's final state.
    pub tail_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GalerkinStudy {
    pub sizes: Vec<usize>,
    pub tail_mass: Vec<f64>,
    pub rows: Vec<GalerkinRow>,
}

fn tail_mass(psi: &State) -> f64 {
    psi.iter().skip(psi.len() / 2).map(|c| c.norm_sqr()).sum()
}

/// Runs `signal` at every truncation in `sizes` (strictly increasing, at least
/// two) and compares consecutive final states. `psi0` is zero-padded.
pub fn galerkin_study(
    triple: &OperatorTriple,
    signal: &ControlSignal,
    psi0: &State,
    sizes: &[usize],
) -> Result<GalerkinStudy> {
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter(
            "a Galerkin study needs at least two truncation sizes".into(),
        ));
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "sizes must be strictly increasing".into(),
        ));
    }
    if psi0.len() > sizes[0] {
        return Err(Error::DimensionMismatch {
            expected: sizes[0],
            found: psi0.len(),
        });
    }
    let finals = sizes
        .iter()
        .map(|&n| {
            let mut start = State::zeros(n);
            start.rows_mut(0, psi0.len()).copy_from(psi0);
            propagate(triple, n, signal, &start, usize::MAX).map(|r| r.final_state().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = sizes
        .windows(2)
        .zip(finals.windows(2))
        .map(|(ns, psis)| {
            let (small, large) = (&psis[0], &psis[1]);
            let mut padded = State::zeros(large.len());
            padded.rows_mut(0, small.len()).copy_from(small);
            GalerkinRow {
                n: ns[0],
                n_next: ns[1],
                discrepancy: (padded - large).norm(),
                tail_mass: tail_mass(small),
            }
        })
        .collect();
    Ok(GalerkinStudy {
        sizes: sizes.to_vec(),
        tail_mass: finals.iter().map(tail_mass).collect(),
        rows,
    })
}
