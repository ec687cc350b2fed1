//! Phase-space analysis on ℤ × S¹: Wigner function, temporal density,
//! pulse width and coherence moments.
//!
//! Position eigenstates are normalized as `⟨x|N⟩ = e^{iNx}/√(2π)`, so
//! `∫dx ⟨x|ρ|x⟩ = 1`, `Σ_p W(x,p) = ⟨x|ρ|x⟩` and `∫dx W(x,p) = ⟨p|ρ|p⟩`.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use statrs::function::gamma::digamma;

use crate::error::{Error, Result};
use crate::ladder::{DensityMatrix, EnergyWindow};

pub const DEFAULT_GRID_POINTS: usize = 1024;
const MIN_GRID_POINTS: usize = 64;
/// Relative tolerance under which two maxima count as equal.
const PEAK_TIE_TOL: f64 = 1e-12;

/// Uniform grid `x_k = −π + 2πk/n` on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionGrid {
    n_points: usize,
}

impl PositionGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < MIN_GRID_POINTS {
            return Err(Error::InvalidArgument(format!(
                "position grid needs at least {MIN_GRID_POINTS} points, got {n_points}"
            )));
        }
        if !n_points.is_power_of_two() {
            log::debug!("position grid of {n_points} points is not a power of two");
        }
        Ok(Self { n_points })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.n_points as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        -PI + self.spacing() * k as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.value(k)).collect()
    }
}

impl Default for PositionGrid {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// `K(κ) = ∫_{−π}^{π} e^{iκy} dy` for integer or half-integer `κ`.
fn kernel(kappa: f64) -> f64 {
    if kappa == 0.0 {
        TAU
    } else if kappa.fract() == 0.0 {
        0.0
    } else {
        2.0 * (PI * kappa).sin() / kappa
    }
}

/// `Σ_{k≥0} (−1)^k / (k + z)` for `z > 0`.
fn alternating_tail(z: f64) -> f64 {
    0.5 * (digamma(0.5 * (z + 1.0)) - digamma(0.5 * z))
}

/// `Σ K(p − s/2)` over integer `p` outside `momenta`, for odd `s`.
fn kernel_tail(s: i32, momenta: EnergyWindow) -> f64 {
    let h = 0.5 * s as f64;
    // with κ = z + k, sin(πκ) = (−1)^k sin(πz); K is even in κ
    let side = |z: f64| 2.0 * (PI * z).sin() * alternating_tail(z);
    side(momenta.n_max() as f64 + 1.0 - h) + side(h - momenta.n_min() as f64 + 1.0)
}

#[derive(Debug, Clone)]
pub struct WignerTable {
    grid: PositionGrid,
    momenta: EnergyWindow,
    /// Row `k` is position `x_k`, column `j` is momentum `momenta.index_at(j)`.
    values: DMatrix<f64>,
    /// Per position, the contribution of momenta outside the table.
    tail: Vec<f64>,
    max_imaginary: f64,
}

impl WignerTable {
    pub fn grid(&self) -> PositionGrid {
        self.grid
    }

    pub fn momenta(&self) -> EnergyWindow {
        self.momenta
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, k: usize, p: i32) -> f64 {
        self.momenta.position(p).map_or(0.0, |j| self.values[(k, j)])
    }

    /// Largest imaginary part discarded while summing.
    pub fn max_imaginary(&self) -> f64 {
        self.max_imaginary
    }

    /// `Σ_p W(x_k, p)` over all integers `p`, the part outside the table
    /// evaluated in closed form.
    pub fn position_marginal(&self) -> Vec<f64> {
        self.values
            .row_iter()
            .zip(&self.tail)
            .map(|(row, t)| row.sum() + t)
            .collect()
    }

    /// `∫dx W(x, p)` for each tabulated `p`.
    pub fn momentum_marginal(&self) -> Vec<f64> {
        let dx = self.grid.spacing();
        self.values.column_iter().map(|c| c.sum() * dx).collect()
    }

    /// `∫dx Σ_p W(x, p)`.
    pub fn normalization(&self) -> f64 {
        self.position_marginal().iter().sum::<f64>() * self.grid.spacing()
    }
}

/// `c_s(x) = Σ_{N+M=s} ρ_NM e^{i(N−M)x}` for `s = 2n_min ..= 2n_max`.
fn anti_diagonal_sums(rho: &DensityMatrix, x: f64) -> Vec<Complex64> {
    let w = rho.window();
    let d = w.dim();
    let mut c = vec![Complex64::new(0.0, 0.0); 2 * d - 1];
    for i in 0..d {
        for j in 0..d {
            let diff = (i as i32 - j as i32) as f64;
            c[i + j] += rho.entries()[(i, j)] * Complex64::from_polar(1.0, diff * x);
        }
    }
    c
}

/// Closed-form Wigner table `W(x,p) = (2π)⁻² Σ ρ_NM e^{i(N−M)x} K(p − (N+M)/2)`
/// on the state's own momentum window.
pub fn wigner(rho: &DensityMatrix, grid: PositionGrid) -> WignerTable {
    let w = rho.window();
    let d = w.dim();
    let s_min = 2 * w.n_min();
    let norm = 1.0 / (TAU * TAU);
    let kernels = DMatrix::from_fn(d, 2 * d - 1, |j, si| {
        kernel(w.index_at(j) as f64 - 0.5 * (s_min + si as i32) as f64)
    });
    let tails: Vec<f64> = (0..2 * d - 1)
        .map(|si| {
            let s = s_min + si as i32;
            if s % 2 == 0 {
                0.0
            } else {
                kernel_tail(s, w)
            }
        })
        .collect();

    let rows: Vec<(Vec<f64>, f64, f64)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let c = anti_diagonal_sums(rho, grid.value(k));
            let mut imag = 0.0f64;
            let row = (0..d)
                .map(|j| {
                    let z: Complex64 = c.iter().enumerate().map(|(si, cs)| cs * kernels[(j, si)]).sum();
                    imag = imag.max(z.im.abs() * norm);
                    z.re * norm
                })
                .collect();
            let tail: Complex64 = c.iter().zip(&tails).map(|(cs, t)| cs * t).sum();
            (row, tail.re * norm, imag.max(tail.im.abs() * norm))
        })
        .collect();

    let values = DMatrix::from_fn(grid.len(), d, |k, j| rows[k].0[j]);
    WignerTable {
        grid,
        momenta: w,
        values,
        tail: rows.iter().map(|r| r.1).collect(),
        max_imaginary: rows.iter().map(|r| r.2).fold(0.0, f64::max),
    }
}

/// `⟨x|ρ|x⟩ = (1/2π) Σ ρ_NM e^{i(N−M)x}` on the grid.
pub fn temporal_density(rho: &DensityMatrix, grid: PositionGrid) -> Vec<f64> {
    let d = rho.dim();
    // only the sub-diagonal sums matter: ⟨x|ρ|x⟩ = (1/2π)(1 + 2 Re Σ_n ⟨bⁿ⟩ e^{inx})
    let moments: Vec<Complex64> = (1..d).map(|n| sub_diagonal_sum(rho, n)).collect();
    let trace: f64 = rho.populations().iter().sum();
    (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.value(k);
            let coh: f64 = moments
                .iter()
                .enumerate()
                .map(|(i, m)| (m * Complex64::from_polar(1.0, (i + 1) as f64 * x)).re)
                .sum();
            (trace + 2.0 * coh) / TAU
        })
        .collect()
}

fn sub_diagonal_sum(rho: &DensityMatrix, n: usize) -> Complex64 {
    (n..rho.dim()).map(|i| rho.entries()[(i, i - n)]).sum()
}

/// `⟨bⁿ⟩ = Σ_N ρ_{N,N−n}` for `n = 1..=n_max`.
pub fn coherence_moments(rho: &DensityMatrix, n_max: usize) -> Result<Vec<Complex64>> {
    if n_max >= rho.dim() {
        return Err(Error::InvalidArgument(format!(
            "n_max = {n_max} must be below the window dimension {}",
            rho.dim()
        )));
    }
    Ok((1..=n_max).map(|n| sub_diagonal_sum(rho, n)).collect())
}

/// Full width at half maximum of a periodic density, as a fraction of the period.
pub fn fwhm(density: &[f64]) -> Result<f64> {
    let n = density.len();
    if n < 3 || density.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("density needs at least 3 finite values".into()));
    }
    let max = density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = density.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > min) {
        return Err(Error::UndefinedWidth("constant density".into()));
    }
    let tie = PEAK_TIE_TOL * max.abs().max(f64::MIN_POSITIVE);
    let peaks: Vec<usize> = (0..n).filter(|&k| max - density[k] <= tie).collect();
    if peaks.len() > 1 {
        return Err(Error::AmbiguousPeak { peaks });
    }
    let peak = peaks[0];
    let half = 0.5 * max;
    let at = |k: isize| density[k.rem_euclid(n as isize) as usize];

    // walk outwards until the density drops to half maximum
    let crossing = |dir: isize| -> Result<f64> {
        let mut k = peak as isize;
        for _ in 0..n {
            let next = k + dir;
            if at(next) <= half {
                let frac = (at(k) - half) / (at(k) - at(next));
                return Ok(k as f64 + dir as f64 * frac);
            }
            k = next;
        }
        Err(Error::UndefinedWidth("density never falls to half maximum".into()))
    };
    let right = crossing(1)?;
    let left = crossing(-1)?;
    Ok((right - left) / n as f64)
}

/// Rotate a periodic density so that its maximum sits at `x = 0`
/// (grid index `n/2`). Returns the rotated vector and the index shift applied.
pub fn align_peak(density: &[f64]) -> (Vec<f64>, usize) {
    let n = density.len();
    let peak = density
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
        .0;
    let shift = (n / 2 + n - peak) % n;
    let mut out = vec![0.0; n];
    for (k, v) in density.iter().enumerate() {
        out[(k + shift) % n] = *v;
    }
    (out, shift)
}
