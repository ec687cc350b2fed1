//! Golden-file round trips shared by the I/O tests and the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};

use fetomo::bayes::ChainRecord;
use fetomo::io;
use fetomo::{DensityMatrix, EnergyWindow, PhaseGrid, Spectrogram};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn golden_spectrogram() -> Spectrogram {
    let w = EnergyWindow::new(-1, 1).unwrap();
    let counts = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.0, 5.5, 0.001]);
    Spectrogram::new(w, PhaseGrid::new(vec![0.0, 3.0]).unwrap(), counts, 0.75)
        .unwrap()
        .with_total_per_phase(10000.0)
        .unwrap()
}

pub fn golden_density() -> DensityMatrix {
    let w = EnergyWindow::new(0, 1).unwrap();
    let m = DMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::new(0.5, 0.0),
            Complex64::new(0.25, -0.125),
            Complex64::new(0.25, 0.125),
            Complex64::new(0.5, 0.0),
        ],
    );
    DensityMatrix::new(fetomo::ladder::ComplexMatrix::new(w, m).unwrap()).unwrap()
}

pub fn golden_chain() -> ChainRecord {
    ChainRecord {
        samples: vec![
            DVector::from_vec(vec![1.0, -2.5]),
            DVector::from_vec(vec![0.1, 3.0]),
            DVector::from_vec(vec![0.5, -0.75]),
        ],
        acceptance_count: 12,
        proposal_count: 30,
        seed: 42,
        beta: 0.02,
        thinning: 10,
    }
}

/// Little-endian IEEE-754 encodings written out by hand.
pub const GOLDEN_PAYLOAD_PREFIX: [u8; 16] = [
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0xf0, 0x3f, // 1.0
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x04, 0xc0, // -2.5
];

/// Runs every golden comparison; returns a description of the first failure.
pub fn check_all() -> Result<(), String> {
    let dir = golden_dir();
    let text = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));

    // spectrogram
    let s = golden_spectrogram();
    if io::spectrogram_to_json(&s).map_err(|e| e.to_string())? != text("spectrogram.json")? {
        return Err("spectrogram serialization differs from golden file".into());
    }
    let back = io::read_spectrogram(&dir.join("spectrogram.json")).map_err(|e| e.to_string())?;
    if back != s {
        return Err("spectrogram golden file parses to a different value".into());
    }

    // density
    let rho = golden_density();
    if io::density_to_json(&rho).map_err(|e| e.to_string())? != text("density.json")? {
        return Err("density serialization differs from golden file".into());
    }
    let back = io::read_density(&dir.join("density.json")).map_err(|e| e.to_string())?;
    if (back.entries() - rho.entries()).iter().any(|z| z.norm() > 1e-15) {
        return Err("density golden file parses to a different value".into());
    }

    // chain
    let chain = golden_chain();
    let window = EnergyWindow::new(0, 0).unwrap();
    if io::chain_header_to_json(&chain, window).map_err(|e| e.to_string())? != text("chain.json")? {
        return Err("chain header differs from golden file".into());
    }
    let payload = fs::read(dir.join("chain.bin")).map_err(|e| e.to_string())?;
    if io::chain_payload(&chain) != payload {
        return Err("chain payload differs from golden file".into());
    }
    if payload[..16] != GOLDEN_PAYLOAD_PREFIX {
        return Err("golden payload is not little-endian f64".into());
    }
    let (back, w) = io::read_chain(&dir.join("chain.json")).map_err(|e| e.to_string())?;
    if w != Some(window) || io::chain_payload(&back) != payload || back.seed != 42 || back.thinning != 10 {
        return Err("chain golden file parses to a different value".into());
    }
    Ok(())
}
