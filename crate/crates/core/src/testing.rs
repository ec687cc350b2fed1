//! Random-state generators shared by unit tests, integration tests and the
//! acceptance suite.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ladder::{DensityMatrix, EnergyWindow};

pub fn random_amplitudes<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect()
}

/// Ginibre-distributed state `A A† / Tr(A A†)` with `A` of shape `d × rank`.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, window: EnergyWindow, rank: usize) -> DensityMatrix {
    let d = window.dim();
    let rank = rank.max(1);
    let a = DMatrix::from_vec(d, rank, random_amplitudes(rng, d * rank));
    let aa = &a * a.adjoint();
    let trace = aa.trace().re;
    DensityMatrix::new_unchecked(window, aa / Complex64::new(trace, 0.0))
}

/// Random window of dimension `d` containing `N = 0`.
pub fn random_window<R: Rng + ?Sized>(rng: &mut R, d: usize) -> EnergyWindow {
    let d = d.max(1) as i32;
    let n_min = -rng.random_range(0..d);
    EnergyWindow::new(n_min, n_min + d - 1).expect("window contains zero")
}
