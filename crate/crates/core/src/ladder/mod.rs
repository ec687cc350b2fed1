//! Linear algebra on the ladder (photon-exchange) basis `{|N⟩}`.
//!
//! States live on a finite [`EnergyWindow`] of the bi-infinite basis. The
//! interaction unitary is evaluated entrywise from its Bessel closed form, so
//! any rectangular block of it is exact; truncation only decides which rows
//! are recorded.

mod bessel;

pub use bessel::{bessel_j, bessel_j_sequence};

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const EIGENVALUE_FLOOR: f64 = -1e-10;
pub const TRACE_TOL: f64 = 1e-10;

/// Extra indices added on each side of a window before applying the
/// interaction unitary with coupling magnitude `g_abs`.
pub fn padding_for(g_abs: f64) -> i32 {
    (2.0 * g_abs).ceil() as i32 + 10
}

/// Contiguous range of photon-exchange indices `n_min..=n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnergyWindow {
    n_min: i32,
    n_max: i32,
}

impl EnergyWindow {
    pub fn new(n_min: i32, n_max: i32) -> Result<Self> {
        if n_min > 0 || n_max < 0 {
            return Err(Error::InvalidArgument(format!(
                "energy window [{n_min}, {n_max}] must contain N = 0"
            )));
        }
        Ok(Self { n_min, n_max })
    }

    /// Symmetric window `[-half_width, half_width]`.
    pub fn symmetric(half_width: u32) -> Self {
        let h = half_width as i32;
        Self {
            n_min: -h,
            n_max: h,
        }
    }

    pub fn n_min(&self) -> i32 {
        self.n_min
    }

    pub fn n_max(&self) -> i32 {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        (self.n_max - self.n_min + 1) as usize
    }

    /// Row/column position of ladder index `n`, if inside the window.
    pub fn position(&self, n: i32) -> Option<usize> {
        (self.n_min..=self.n_max)
            .contains(&n)
            .then(|| (n - self.n_min) as usize)
    }

    pub fn index_at(&self, position: usize) -> i32 {
        self.n_min + position as i32
    }

    pub fn indices(&self) -> impl Iterator<Item = i32> + Clone {
        self.n_min..=self.n_max
    }

    pub fn contains_window(&self, other: &EnergyWindow) -> bool {
        self.n_min <= other.n_min && self.n_max >= other.n_max
    }

    pub fn padded(&self, by: i32) -> Self {
        let by = by.max(0);
        Self {
            n_min: self.n_min - by,
            n_max: self.n_max + by,
        }
    }
}

/// Complex coupling `g = |g| e^{i arg g}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coupling {
    magnitude: f64,
    phase: f64,
}

impl Coupling {
    pub fn new(magnitude: f64, phase: f64) -> Result<Self> {
        if !(magnitude >= 0.0) || !magnitude.is_finite() || !phase.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "coupling magnitude must be finite and non-negative, phase finite (got {magnitude}, {phase})"
            )));
        }
        Ok(Self {
            magnitude,
            phase: phase.rem_euclid(TAU),
        })
    }

    pub fn from_complex(g: Complex64) -> Result<Self> {
        Self::new(g.norm(), g.arg())
    }

    pub fn magnitude(&self) -> f64 {
        self.magnitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn to_complex(&self) -> Complex64 {
        Complex64::from_polar(self.magnitude, self.phase)
    }

    /// The phase-swept coupling `arg g → arg g + φ`.
    pub fn shifted(&self, phi: f64) -> Self {
        Self {
            magnitude: self.magnitude,
            phase: (self.phase + phi).rem_euclid(TAU),
        }
    }
}

/// Dense square complex matrix indexed by ladder indices of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    window: EnergyWindow,
    entries: DMatrix<Complex64>,
}

impl ComplexMatrix {
    pub fn new(window: EnergyWindow, entries: DMatrix<Complex64>) -> Result<Self> {
        let d = window.dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::dimension(
                format!("{d}x{d}"),
                format!("{}x{}", entries.nrows(), entries.ncols()),
            ));
        }
        Ok(Self { window, entries })
    }

    pub fn zeros(window: EnergyWindow) -> Self {
        let d = window.dim();
        Self {
            window,
            entries: DMatrix::zeros(d, d),
        }
    }

    pub fn identity(window: EnergyWindow) -> Self {
        let d = window.dim();
        Self {
            window,
            entries: DMatrix::identity(d, d),
        }
    }

    pub fn window(&self) -> EnergyWindow {
        self.window
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<Complex64> {
        self.entries
    }

    /// Entry `⟨N|M|M'⟩` by ladder index; zero outside the window.
    pub fn get(&self, n: i32, m: i32) -> Complex64 {
        match (self.window.position(n), self.window.position(m)) {
            (Some(i), Some(j)) => self.entries[(i, j)],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    pub fn max_hermitian_defect(&self) -> f64 {
        max_abs_diff(&self.entries, &self.entries.adjoint())
    }

    /// Copy onto a larger (or equal) window, zero-filling new entries.
    pub fn embed(&self, target: EnergyWindow) -> Result<Self> {
        if !target.contains_window(&self.window) {
            return Err(Error::dimension(
                format!("window containing [{}, {}]", self.window.n_min, self.window.n_max),
                format!("[{}, {}]", target.n_min, target.n_max),
            ));
        }
        let offset = (self.window.n_min - target.n_min) as usize;
        let d = self.window.dim();
        let mut out = DMatrix::zeros(target.dim(), target.dim());
        out.view_mut((offset, offset), (d, d)).copy_from(&self.entries);
        Ok(Self {
            window: target,
            entries: out,
        })
    }
}

/// Hermitian, positive-semidefinite, unit-trace matrix on a window.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: ComplexMatrix,
}

impl DensityMatrix {
    /// Validates the physicality invariants.
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let defect = matrix.max_hermitian_defect();
        if defect > HERMITIAN_TOL {
            return Err(Error::NotPhysical(format!(
                "Hermiticity defect {defect:e} exceeds {HERMITIAN_TOL:e}"
            )));
        }
        let trace = matrix.entries.trace();
        if (trace.re - 1.0).abs() > TRACE_TOL || trace.im.abs() > TRACE_TOL {
            return Err(Error::NotPhysical(format!("trace {trace} differs from 1")));
        }
        let min_eig = hermitian_part(&matrix.entries)
            .symmetric_eigenvalues()
            .min();
        if min_eig < EIGENVALUE_FLOOR {
            return Err(Error::NotPhysical(format!(
                "minimum eigenvalue {min_eig:e} below {EIGENVALUE_FLOOR:e}"
            )));
        }
        Ok(Self { matrix })
    }

    /// Wraps a matrix already known to be physical up to rounding. The
    /// Hermitian part is stored.
    pub(crate) fn new_unchecked(window: EnergyWindow, entries: DMatrix<Complex64>) -> Self {
        Self {
            matrix: ComplexMatrix {
                window,
                entries: hermitian_part(&entries),
            },
        }
    }

    /// `|N⟩⟨N|`.
    pub fn basis_state(window: EnergyWindow, n: i32) -> Result<Self> {
        let pos = window.position(n).ok_or_else(|| {
            Error::InvalidArgument(format!("index {n} outside window"))
        })?;
        let mut m = DMatrix::zeros(window.dim(), window.dim());
        m[(pos, pos)] = Complex64::new(1.0, 0.0);
        Ok(Self::new_unchecked(window, m))
    }

    pub fn maximally_mixed(window: EnergyWindow) -> Self {
        let d = window.dim();
        let m = DMatrix::identity(d, d) * Complex64::new(1.0 / d as f64, 0.0);
        Self::new_unchecked(window, m)
    }

    /// `|ψ⟩⟨ψ|/⟨ψ|ψ⟩` for amplitudes ordered by window position.
    pub fn pure(window: EnergyWindow, amplitudes: &[Complex64]) -> Result<Self> {
        if amplitudes.len() != window.dim() {
            return Err(Error::dimension(window.dim(), amplitudes.len()));
        }
        let psi = DVector::from_column_slice(amplitudes);
        let norm_sq = psi.norm_squared();
        if norm_sq == 0.0 || !norm_sq.is_finite() {
            return Err(Error::DegenerateInput("zero state vector".into()));
        }
        let rho = &psi * psi.adjoint() / Complex64::new(norm_sq, 0.0);
        Ok(Self::new_unchecked(window, rho))
    }

    pub fn window(&self) -> EnergyWindow {
        self.matrix.window
    }

    pub fn dim(&self) -> usize {
        self.matrix.window.dim()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn entries(&self) -> &DMatrix<Complex64> {
        &self.matrix.entries
    }

    pub fn get(&self, n: i32, m: i32) -> Complex64 {
        self.matrix.get(n, m)
    }

    /// Populations `ρ_NN` ordered by window position.
    pub fn populations(&self) -> Vec<f64> {
        self.matrix.entries.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.matrix.entries.clone().symmetric_eigenvalues().iter().copied().collect()
    }

    /// Zero-padded copy on a containing window.
    pub fn embed(&self, target: EnergyWindow) -> Result<Self> {
        Ok(Self {
            matrix: self.matrix.embed(target)?,
        })
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> Result<f64> {
        check_same_window(self.window(), other.window())?;
        Ok((self.entries() - other.entries()).norm())
    }
}

fn check_same_window(a: EnergyWindow, b: EnergyWindow) -> Result<()> {
    if a != b {
        return Err(Error::dimension(
            format!("window [{}, {}]", a.n_min, a.n_max),
            format!("window [{}, {}]", b.n_min, b.n_max),
        ));
    }
    Ok(())
}

pub(crate) fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

pub(crate) fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Block of the interaction unitary `exp(g b† − ḡ b)` with rows indexed by
/// `rows` and columns by `cols`: entry `(N, M) = J_{N−M}(2|g|) e^{i(N−M) arg g}`.
pub fn interaction_block(g: Coupling, rows: EnergyWindow, cols: EnergyWindow) -> DMatrix<Complex64> {
    let max_shift = (rows.n_max - cols.n_min)
        .abs()
        .max((rows.n_min - cols.n_max).abs()) as u32;
    let bessel = bessel_j_sequence(max_shift, 2.0 * g.magnitude);
    let amplitude = |k: i32| -> Complex64 {
        let j = bessel[k.unsigned_abs() as usize];
        let j = if k < 0 && k % 2 != 0 { -j } else { j };
        Complex64::from_polar(j, k as f64 * g.phase)
    };
    DMatrix::from_fn(rows.dim(), cols.dim(), |i, j| {
        amplitude(rows.index_at(i) - cols.index_at(j))
    })
}

/// Interaction unitary restricted to `window`.
///
/// Emits a warning when sidebands of the coupling are not contained in the
/// window (`J_{|k|}(2|g|) ≥ 1e-14` at `|k| = d/2`).
pub fn interaction_unitary(g: Coupling, window: EnergyWindow) -> ComplexMatrix {
    let half = (window.dim() / 2) as i32;
    if bessel_j(half + 1, 2.0 * g.magnitude).abs() >= 1e-14 {
        log::warn!(
            "window of dimension {} truncates sidebands of |g| = {}",
            window.dim(),
            g.magnitude
        );
    }
    ComplexMatrix {
        window,
        entries: interaction_block(g, window, window),
    }
}

/// Hermitian square root and eigen-spectrum helper: returns `V diag(f(λ)) V†`.
pub(crate) fn hermitian_map(m: &DMatrix<Complex64>, f: impl Fn(f64) -> f64) -> DMatrix<Complex64> {
    let eig = hermitian_part(m).symmetric_eigen();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * f(eig.eigenvalues[j]));
    scaled * v.adjoint()
}

/// Eigenvalues below this are rounding noise and treated as zero.
const SPECTRAL_CUTOFF: f64 = 1e-14;

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`, clamped to `[0, 1]`.
///
/// Evaluated as the squared trace norm of `√σ √ρ`, which avoids square roots
/// of nearly vanishing eigenvalues of `√ρ σ √ρ`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_same_window(rho.window(), sigma.window())?;
    let root = |m: &DMatrix<Complex64>| hermitian_map(m, |l| if l > SPECTRAL_CUTOFF { l.sqrt() } else { 0.0 });
    let product = root(sigma.entries()) * root(rho.entries());
    let trace_norm: f64 = product.singular_values().iter().sum();
    Ok((trace_norm * trace_norm).clamp(0.0, 1.0))
}

/// Nearest-physical projection: Hermitize, clip negative eigenvalues,
/// renormalize the trace.
pub fn project_physical(m: &ComplexMatrix) -> Result<DensityMatrix> {
    if m.entries.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::DegenerateInput("all-zero matrix".into()));
    }
    let eig = hermitian_part(&m.entries).symmetric_eigen();
    let kept: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if !(kept > 0.0) {
        return Err(Error::DegenerateInput(
            "no positive eigenvalues after Hermitization".into(),
        ));
    }
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| {
        v[(i, j)] * (eig.eigenvalues[j].max(0.0) / kept)
    });
    Ok(DensityMatrix::new_unchecked(m.window, scaled * v.adjoint()))
}
