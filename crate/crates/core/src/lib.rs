//! Reconstruction of the energy-ladder density matrix of a free-electron
//! wavefunction from sideband spectrograms.

pub mod bayes;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod io;
pub mod ladder;
pub mod mle;
pub mod phase_space;
pub mod spectrogram;

#[doc(hidden)]
pub mod testing;

pub use error::{Error, Result};
pub use ladder::{Coupling, DensityMatrix, EnergyWindow};
pub use spectrogram::{PhaseGrid, Spectrogram};
