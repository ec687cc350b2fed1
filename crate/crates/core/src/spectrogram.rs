//! Phase-swept energy spectra: forward simulation, shot noise, likelihood.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::ladder::{interaction_block, padding_for, Coupling, DensityMatrix, EnergyWindow};

/// Model probabilities below this value are floored.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Number of sweep phases used when none is given.
pub const DEFAULT_PHASE_COUNT: usize = 100;

/// Strictly increasing sweep phases in `[0, 2π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    values: Vec<f64>,
}

impl PhaseGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("phase grid is empty".into()));
        }
        if values.iter().any(|v| !(0.0..TAU).contains(v)) {
            return Err(Error::InvalidArgument("phases must lie in [0, 2π)".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "phases must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `count` equally spaced phases `2πk/count`.
    pub fn uniform(count: usize) -> Result<Self> {
        Self::new((0..count).map(|k| TAU * k as f64 / count as f64).collect())
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
}

impl Default for PhaseGrid {
    fn default() -> Self {
        Self::uniform(DEFAULT_PHASE_COUNT).expect("non-empty grid")
    }
}

/// Counts (or probabilities) `S(φ, N)`: one row per phase, one column per
/// energy index of `window`.
///
/// When `total_per_phase` is declared, the stored rows are normalized
/// frequencies and the likelihood exponents are `counts × total_per_phase`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    window: EnergyWindow,
    phases: PhaseGrid,
    counts: DMatrix<f64>,
    coupling_magnitude: f64,
    total_per_phase: Option<f64>,
}

impl Spectrogram {
    pub fn new(
        window: EnergyWindow,
        phases: PhaseGrid,
        counts: DMatrix<f64>,
        coupling_magnitude: f64,
    ) -> Result<Self> {
        if counts.nrows() != phases.len() || counts.ncols() != window.dim() {
            return Err(Error::dimension(
                format!("{}x{}", phases.len(), window.dim()),
                format!("{}x{}", counts.nrows(), counts.ncols()),
            ));
        }
        if let Some(bad) = counts.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spectrogram counts must be finite and non-negative (found {bad})"
            )));
        }
        if !(coupling_magnitude >= 0.0) || !coupling_magnitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coupling magnitude must be non-negative (found {coupling_magnitude})"
            )));
        }
        Ok(Self {
            window,
            phases,
            counts,
            coupling_magnitude,
            total_per_phase: None,
        })
    }

    /// Declares the stored rows to be frequencies measured with `total`
    /// counts per phase.
    pub fn with_total_per_phase(mut self, total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "declared total per phase must be positive (found {total})"
            )));
        }
        self.total_per_phase = Some(total);
        Ok(self)
    }

    pub fn window(&self) -> EnergyWindow {
        self.window
    }

    pub fn phases(&self) -> &PhaseGrid {
        &self.phases
    }

    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    pub fn coupling_magnitude(&self) -> f64 {
        self.coupling_magnitude
    }

    pub fn total_per_phase(&self) -> Option<f64> {
        self.total_per_phase
    }

    /// Likelihood exponents: raw counts, scaled by the declared total if any.
    pub fn weights(&self) -> DMatrix<f64> {
        match self.total_per_phase {
            Some(t) => &self.counts * t,
            None => self.counts.clone(),
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.weights().sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.counts.row_iter().map(|r| r.sum()).collect()
    }

    /// Same data with the sweep phases relabelled `φ → φ + shift (mod 2π)`.
    pub fn phase_shifted(&self, shift: f64) -> Result<Self> {
        let mut rows: Vec<(f64, usize)> = self
            .phases
            .values
            .iter()
            .enumerate()
            .map(|(i, p)| ((p + shift).rem_euclid(TAU), i))
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let phases = PhaseGrid::new(rows.iter().map(|r| r.0).collect())?;
        let counts = DMatrix::from_fn(self.counts.nrows(), self.counts.ncols(), |i, j| {
            self.counts[(rows[i].1, j)]
        });
        Ok(Self {
            window: self.window,
            phases,
            counts,
            coupling_magnitude: self.coupling_magnitude,
            total_per_phase: self.total_per_phase,
        })
    }
}

/// Precomputed blocks `U_φ` (rows: data window, columns: state window) of
/// the sweep unitary for every phase of a spectrogram.
#[derive(Debug, Clone)]
pub struct Sweep {
    data_window: EnergyWindow,
    state_window: EnergyWindow,
    blocks: Vec<DMatrix<Complex64>>,
}

impl Sweep {
    pub fn new(
        coupling_magnitude: f64,
        phases: &PhaseGrid,
        data_window: EnergyWindow,
        state_window: EnergyWindow,
    ) -> Result<Self> {
        let base = Coupling::new(coupling_magnitude, 0.0)?;
        let blocks = phases
            .values()
            .iter()
            .map(|&phi| interaction_block(base.shifted(phi), data_window, state_window))
            .collect();
        Ok(Self {
            data_window,
            state_window,
            blocks,
        })
    }

    pub fn for_spectrogram(s: &Spectrogram, state_window: EnergyWindow) -> Result<Self> {
        Self::new(s.coupling_magnitude, &s.phases, s.window, state_window)
    }

    pub fn data_window(&self) -> EnergyWindow {
        self.data_window
    }

    pub fn state_window(&self) -> EnergyWindow {
        self.state_window
    }

    pub fn blocks(&self) -> &[DMatrix<Complex64>] {
        &self.blocks
    }

    /// `p(φ, N) = ⟨N|U_φ ρ U_φ†|N⟩` (unfloored) for a state-window matrix.
    pub fn probabilities(&self, rho: &DMatrix<Complex64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.blocks.len(), self.data_window.dim());
        for (row, u) in self.blocks.iter().enumerate() {
            let u_rho = u * rho;
            for n in 0..u.nrows() {
                let mut acc = 0.0;
                for j in 0..u.ncols() {
                    let a = u_rho[(n, j)];
                    let b = u[(n, j)];
                    // Re(a · conj(b))
                    acc += a.re * b.re + a.im * b.im;
                }
                out[(row, n)] = acc;
            }
        }
        out
    }

    /// `Σ_{φ,N} c(φ,N) U_φ†|N⟩⟨N|U_φ` on the state window.
    pub fn weighted_projector_sum(&self, coefficients: &DMatrix<f64>) -> DMatrix<Complex64> {
        let d = self.state_window.dim();
        let mut out = DMatrix::zeros(d, d);
        for (row, u) in self.blocks.iter().enumerate() {
            let mut scaled = u.clone();
            for n in 0..u.nrows() {
                let c = coefficients[(row, n)];
                scaled.row_mut(n).scale_mut(c);
            }
            out += u.adjoint() * scaled;
        }
        out
    }
}

pub(crate) fn check_state_window(data: EnergyWindow, state: EnergyWindow) -> Result<()> {
    if !data.contains_window(&state) {
        return Err(Error::dimension(
            format!("state window inside [{}, {}]", data.n_min(), data.n_max()),
            format!("[{}, {}]", state.n_min(), state.n_max()),
        ));
    }
    Ok(())
}

/// Expected spectrogram (probabilities) of `rho` for a sweep of magnitude
/// `coupling_magnitude` over `phases`.
///
/// The output window is the state window padded by `ceil(2|g|) + 10` on each
/// side, so every phase row sums to one up to the Bessel tail.
pub fn simulate_spectrogram(
    rho: &DensityMatrix,
    coupling_magnitude: f64,
    phases: &PhaseGrid,
) -> Result<Spectrogram> {
    let data_window = rho.window().padded(padding_for(coupling_magnitude));
    let sweep = Sweep::new(coupling_magnitude, phases, data_window, rho.window())?;
    let probs = sweep.probabilities(rho.entries()).map(|p| p.max(0.0));
    Spectrogram::new(data_window, phases.clone(), probs, coupling_magnitude)
}

fn check_normalized_rows(s: &Spectrogram) -> Result<()> {
    for (i, sum) in s.row_sums().iter().enumerate() {
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "phase row {i} sums to {sum}, expected probabilities"
            )));
        }
    }
    Ok(())
}

/// Noiseless counts `total × p`.
pub fn expected_counts(s: &Spectrogram, total_per_phase: u64) -> Result<Spectrogram> {
    if total_per_phase == 0 {
        return Err(Error::InvalidArgument("total per phase must be positive".into()));
    }
    check_normalized_rows(s)?;
    Spectrogram::new(
        s.window,
        s.phases.clone(),
        &s.counts * total_per_phase as f64,
        s.coupling_magnitude,
    )
}

/// Multinomial shot noise: each phase row is an independent draw of
/// `total_per_phase` electrons. Deterministic in `seed`.
pub fn sample_counts(s: &Spectrogram, total_per_phase: u64, seed: u64) -> Result<Spectrogram> {
    if total_per_phase == 0 {
        return Err(Error::InvalidArgument("total per phase must be positive".into()));
    }
    check_normalized_rows(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = DMatrix::zeros(s.counts.nrows(), s.counts.ncols());
    for (row, probs) in s.counts.row_iter().enumerate() {
        let mut remaining = total_per_phase;
        let mut mass_left: f64 = probs.sum();
        for (col, &p) in probs.iter().enumerate() {
            if remaining == 0 {
                break;
            }
            let draw = if col + 1 == probs.len() || mass_left <= p {
                remaining
            } else {
                let q = (p / mass_left).clamp(0.0, 1.0);
                Binomial::new(remaining, q)
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(&mut rng)
            };
            counts[(row, col)] = draw as f64;
            remaining -= draw;
            mass_left -= p;
        }
    }
    Spectrogram::new(s.window, s.phases.clone(), counts, s.coupling_magnitude)
}

/// `Σ w(φ,N) log max(p(φ,N), floor)`, skipping zero-weight bins.
pub(crate) fn log_likelihood_from(weights: &DMatrix<f64>, probs: &DMatrix<f64>) -> f64 {
    weights
        .iter()
        .zip(probs.iter())
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, p)| w * p.max(PROBABILITY_FLOOR).ln())
        .sum()
}

/// Log-likelihood of the data for state `rho`, which may live on any
/// sub-window of the data window.
pub fn log_likelihood(s: &Spectrogram, rho: &DensityMatrix) -> Result<f64> {
    check_state_window(s.window, rho.window())?;
    let sweep = Sweep::for_spectrogram(s, rho.window())?;
    Ok(log_likelihood_from(&s.weights(), &sweep.probabilities(rho.entries())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ladder::bessel_j;
    use crate::testing::random_density;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn phase_grid_validation() {
        assert!(PhaseGrid::new(vec![]).is_err());
        assert!(PhaseGrid::new(vec![0.5, 0.5]).is_err());
        assert!(PhaseGrid::new(vec![0.0, 7.0]).is_err());
        let g = PhaseGrid::default();
        assert_eq!(g.len(), 100);
        assert_eq!(g.values()[0], 0.0);
    }

    #[test]
    fn vacuum_spectrogram_is_bessel_squared() {
        let w = EnergyWindow::symmetric(0);
        let rho = DensityMatrix::basis_state(w, 0).unwrap();
        let phases = PhaseGrid::uniform(7).unwrap();
        let s = simulate_spectrogram(&rho, 1.1, &phases).unwrap();
        for (i, _) in phases.values().iter().enumerate() {
            for n in s.window().indices() {
                let expected = bessel_j(n, 2.2).powi(2);
                let got = s.counts()[(i, s.window().position(n).unwrap())];
                assert!((got - expected).abs() < 1e-14);
                // symmetric in N for real g
                let mirrored = s.counts()[(i, s.window().position(-n).unwrap())];
                assert!((got - mirrored).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_coupling_returns_populations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = EnergyWindow::new(-2, 1).unwrap();
        let rho = random_density(&mut rng, w, 4);
        let s = simulate_spectrogram(&rho, 0.0, &PhaseGrid::uniform(5).unwrap()).unwrap();
        for row in s.counts().row_iter() {
            for n in w.indices() {
                let got = row[s.window().position(n).unwrap()];
                assert!((got - rho.get(n, n).re).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(&mut rng, EnergyWindow::new(-3, 2).unwrap(), 6);
        let s = simulate_spectrogram(&rho, 1.7, &PhaseGrid::uniform(40).unwrap()).unwrap();
        for sum in s.row_sums() {
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_rotation_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = EnergyWindow::new(-2, 2).unwrap();
        let rho = random_density(&mut rng, w, 5);
        let g = 0.9;
        for k in 0..20 {
            let phi0 = 0.31 * k as f64;
            let rotated = DMatrix::from_fn(w.dim(), w.dim(), |i, j| {
                let dn = (w.index_at(i) - w.index_at(j)) as f64;
                rho.entries()[(i, j)] * Complex64::from_polar(1.0, -phi0 * dn)
            });
            let rotated = DensityMatrix::new(crate::ladder::ComplexMatrix::new(w, rotated).unwrap()).unwrap();
            let phi = 0.77;
            let shifted = PhaseGrid::new(vec![(phi + phi0).rem_euclid(TAU)]).unwrap();
            let at_phi = PhaseGrid::new(vec![phi]).unwrap();
            let a = simulate_spectrogram(&rotated, g, &at_phi).unwrap();
            let b = simulate_spectrogram(&rho, g, &shifted).unwrap();
            let diff = (a.counts() - b.counts()).abs().max();
            assert!(diff < 1e-12, "phi0={phi0}: {diff}");
        }
    }

    #[test]
    fn sampling_is_deterministic_and_totals_match() {
        let w = EnergyWindow::symmetric(1);
        let rho = DensityMatrix::maximally_mixed(w);
        let s = simulate_spectrogram(&rho, 0.6, &PhaseGrid::uniform(4).unwrap()).unwrap();
        let a = sample_counts(&s, 1000, 7).unwrap();
        let b = sample_counts(&s, 1000, 7).unwrap();
        let c = sample_counts(&s, 1000, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for sum in a.row_sums() {
            assert_eq!(sum, 1000.0);
        }
        assert!(sample_counts(&s, 0, 1).is_err());
        let exact = expected_counts(&s, 1000).unwrap();
        assert!((exact.counts() - s.counts() * 1000.0).abs().max() < 1e-12);
    }

    #[test]
    fn sampling_rejects_unnormalized_input() {
        let w = EnergyWindow::symmetric(0);
        let s = Spectrogram::new(
            w,
            PhaseGrid::uniform(1).unwrap(),
            DMatrix::from_element(1, 1, 3.0),
            0.0,
        )
        .unwrap();
        assert!(sample_counts(&s, 10, 0).is_err());
    }

    #[test]
    fn multinomial_frequencies_match_probabilities() {
        let w = EnergyWindow::symmetric(0);
        let rho = DensityMatrix::basis_state(w, 0).unwrap();
        let s = simulate_spectrogram(&rho, 0.8, &PhaseGrid::uniform(1).unwrap()).unwrap();
        let n_draws = 10_000u64;
        let mut acc = DMatrix::<f64>::zeros(1, s.window().dim());
        for seed in 0..n_draws {
            acc += sample_counts(&s, 1, seed).unwrap().counts();
        }
        for (freq, p) in acc.iter().zip(s.counts().iter()) {
            let f = freq / n_draws as f64;
            let band = 3.0 * (p * (1.0 - p) / n_draws as f64).sqrt();
            assert!((f - p).abs() <= band + 1e-12, "f={f} p={p}");
        }
    }

    #[test]
    fn likelihood_trivial_cases() {
        let w = EnergyWindow::symmetric(0);
        let rho = DensityMatrix::basis_state(w, 0).unwrap();
        let zero = Spectrogram::new(w, PhaseGrid::uniform(3).unwrap(), DMatrix::zeros(3, 1), 0.0).unwrap();
        assert_eq!(log_likelihood(&zero, &rho).unwrap(), 0.0);

        // one bin with count 1: log p
        let w2 = EnergyWindow::new(0, 1).unwrap();
        let rho2 = DensityMatrix::new_unchecked(
            w2,
            DMatrix::from_row_slice(2, 2, &[
                Complex64::new(0.3, 0.0), Complex64::new(0.0, 0.0),
                Complex64::new(0.0, 0.0), Complex64::new(0.7, 0.0),
            ]),
        );
        let one = Spectrogram::new(
            w2,
            PhaseGrid::uniform(1).unwrap(),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            0.0,
        )
        .unwrap();
        assert!((log_likelihood(&one, &rho2).unwrap() - 0.7f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn likelihood_is_maximal_at_the_generating_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = EnergyWindow::new(-1, 2).unwrap();
        let truth = random_density(&mut rng, w, 4);
        let s = simulate_spectrogram(&truth, 1.0, &PhaseGrid::uniform(30).unwrap()).unwrap();
        let best = log_likelihood(&s, &truth).unwrap();
        for _ in 0..100 {
            let other = random_density(&mut rng, w, 4);
            assert!(log_likelihood(&s, &other).unwrap() <= best + 1e-12);
        }
    }

    #[test]
    fn likelihood_invariant_under_joint_phase_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = EnergyWindow::new(-1, 1).unwrap();
        let truth = random_density(&mut rng, w, 3);
        let model = random_density(&mut rng, w, 3);
        let s = sample_counts(
            &simulate_spectrogram(&truth, 0.8, &PhaseGrid::uniform(16).unwrap()).unwrap(),
            500,
            1,
        )
        .unwrap();
        let shift = 0.9;
        let rotate = |rho: &DensityMatrix| {
            let m = DMatrix::from_fn(w.dim(), w.dim(), |i, j| {
                let dn = (w.index_at(i) - w.index_at(j)) as f64;
                rho.entries()[(i, j)] * Complex64::from_polar(1.0, -shift * dn)
            });
            DensityMatrix::new_unchecked(w, m)
        };
        // S'(φ) = S(φ + shift) pairs with the model rotated by the same shift
        let relabeled = s.phase_shifted(-shift).unwrap();
        let a = log_likelihood(&s, &model).unwrap();
        let b = log_likelihood(&relabeled, &rotate(&model)).unwrap();
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn declared_total_scales_exponents() {
        let w = EnergyWindow::symmetric(0);
        let rho = DensityMatrix::basis_state(w, 0).unwrap();
        let s = simulate_spectrogram(&rho, 0.5, &PhaseGrid::uniform(2).unwrap()).unwrap();
        let base = log_likelihood(&s, &rho).unwrap();
        let scaled = log_likelihood(&s.clone().with_total_per_phase(250.0).unwrap(), &rho).unwrap();
        assert!((scaled - 250.0 * base).abs() < 1e-9 * scaled.abs());
        assert!(s.with_total_per_phase(0.0).is_err());
    }
}
