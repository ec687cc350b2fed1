//! On-disk formats. JSON documents carry `"format": "fetomo/1"`; chain
//! samples live in a little-endian `f64` sidecar next to a JSON header.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::bayes::{param_len, ChainRecord, MapResult, ParamVector};
use crate::diagnostics::PosteriorSummary;
use crate::error::{Error, Result};
use crate::forward::ForwardParams;
use crate::ladder::{hermitian_part, DensityMatrix, EnergyWindow, EIGENVALUE_FLOOR, TRACE_TOL};
use crate::phase_space::{PositionGrid, WignerTable};
use crate::spectrogram::{PhaseGrid, Spectrogram};

pub const FORMAT_TAG: &str = "fetomo/1";
const HERMITIAN_FILE_TOL: f64 = 1e-9;
const TRACE_FILE_TOL: f64 = 1e-8;

type Object = Map<String, Value>;

fn parse_document(text: &str) -> Result<Object> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::parse("<document>", e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(Error::parse("<document>", "top level is not an object"));
    };
    match obj.get("format") {
        Some(Value::String(tag)) if tag == FORMAT_TAG => Ok(obj),
        Some(other) => Err(Error::parse("format", format!("unsupported format {other}"))),
        None => Err(Error::parse("format", "missing")),
    }
}

fn field<T: DeserializeOwned>(obj: &Object, key: &str) -> Result<T> {
    let v = obj.get(key).ok_or_else(|| Error::parse(key, "missing"))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::parse(key, e.to_string()))
}

fn optional_field<T: DeserializeOwned>(obj: &Object, key: &str) -> Result<Option<T>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(_) => field(obj, key).map(Some),
    }
}

fn window_fields(obj: &Object) -> Result<EnergyWindow> {
    let n_min: i32 = field(obj, "n_min")?;
    let n_max: i32 = field(obj, "n_max")?;
    EnergyWindow::new(n_min, n_max).map_err(|e| Error::parse("n_min", e.to_string()))
}

fn matrix_field(obj: &Object, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let data: Vec<Vec<f64>> = field(obj, key)?;
    if data.len() != rows || data.iter().any(|r| r.len() != cols) {
        return Err(Error::parse(key, format!("expected a {rows}x{cols} array")));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn to_text<T: Serialize>(doc: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(doc).map_err(|e| Error::parse("<document>", e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

// spectrogram ---------------------------------------------------------------

#[derive(Serialize)]
struct SpectrogramDoc<'a> {
    format: &'a str,
    g_abs: f64,
    phases: &'a [f64],
    n_min: i32,
    n_max: i32,
    counts: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    total_per_phase: Option<f64>,
}

fn spectrogram_doc(s: &Spectrogram) -> SpectrogramDoc<'_> {
    SpectrogramDoc {
        format: FORMAT_TAG,
        g_abs: s.coupling_magnitude(),
        phases: s.phases().values(),
        n_min: s.window().n_min(),
        n_max: s.window().n_max(),
        counts: rows_of(s.counts()),
        total_per_phase: s.total_per_phase(),
    }
}

pub fn spectrogram_to_json(s: &Spectrogram) -> Result<String> {
    to_text(&spectrogram_doc(s))
}

fn spectrogram_from_object(obj: &Object) -> Result<Spectrogram> {
    let g_abs: f64 = field(obj, "g_abs")?;
    let phases: Vec<f64> = field(obj, "phases")?;
    let window = window_fields(obj)?;
    let counts = matrix_field(obj, "counts", phases.len(), window.dim())?;
    if counts.iter().any(|c| *c < 0.0) {
        return Err(Error::parse("counts", "negative entry"));
    }
    let phases = PhaseGrid::new(phases).map_err(|e| Error::parse("phases", e.to_string()))?;
    let s = Spectrogram::new(window, phases, counts, g_abs).map_err(|e| Error::parse("g_abs", e.to_string()))?;
    match optional_field::<f64>(obj, "total_per_phase")? {
        Some(t) => s
            .with_total_per_phase(t)
            .map_err(|e| Error::parse("total_per_phase", e.to_string())),
        None => Ok(s),
    }
}

pub fn spectrogram_from_json(text: &str) -> Result<Spectrogram> {
    spectrogram_from_object(&parse_document(text)?)
}

pub fn write_spectrogram(path: &Path, s: &Spectrogram) -> Result<()> {
    write_text(path, &spectrogram_to_json(s)?)
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    spectrogram_from_json(&read_text(path)?)
}

// density -------------------------------------------------------------------

#[derive(Serialize)]
struct DensityDoc {
    format: &'static str,
    n_min: i32,
    n_max: i32,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

fn density_doc(rho: &DensityMatrix) -> DensityDoc {
    DensityDoc {
        format: FORMAT_TAG,
        n_min: rho.window().n_min(),
        n_max: rho.window().n_max(),
        re: rows_of(&rho.entries().map(|z| z.re)),
        im: rows_of(&rho.entries().map(|z| z.im)),
    }
}

pub fn density_to_json(rho: &DensityMatrix) -> Result<String> {
    to_text(&density_doc(rho))
}

fn density_from_object(obj: &Object) -> Result<DensityMatrix> {
    let window = window_fields(obj)?;
    let d = window.dim();
    let re = matrix_field(obj, "re", d, d)?;
    let im = matrix_field(obj, "im", d, d)?;
    if (&re - re.transpose()).amax() > HERMITIAN_FILE_TOL {
        return Err(Error::parse("re", "not symmetric"));
    }
    if (&im + im.transpose()).amax() > HERMITIAN_FILE_TOL {
        return Err(Error::parse("im", "not antisymmetric"));
    }
    if (re.trace() - 1.0).abs() > TRACE_FILE_TOL {
        return Err(Error::parse("re", format!("trace is {} instead of 1", re.trace())));
    }
    let mut entries = hermitian_part(&DMatrix::from_fn(d, d, |i, j| Complex64::new(re[(i, j)], im[(i, j)])));
    if (re.trace() - 1.0).abs() > TRACE_TOL {
        entries /= Complex64::new(re.trace(), 0.0);
    }
    let smallest = entries.clone().symmetric_eigenvalues().min();
    if smallest < EIGENVALUE_FLOOR {
        return Err(Error::parse("re", format!("negative eigenvalue {smallest}")));
    }
    Ok(DensityMatrix::new_unchecked(window, entries))
}

pub fn density_from_json(text: &str) -> Result<DensityMatrix> {
    density_from_object(&parse_document(text)?)
}

pub fn write_density(path: &Path, rho: &DensityMatrix) -> Result<()> {
    write_text(path, &density_to_json(rho)?)
}

pub fn read_density(path: &Path) -> Result<DensityMatrix> {
    density_from_json(&read_text(path)?)
}

// forward-model parameters ---------------------------------------------------

#[derive(Serialize)]
struct ForwardDoc {
    format: &'static str,
    g_lo: f64,
    g_hi: f64,
    chirp: f64,
    phase_noise: f64,
}

pub fn forward_params_to_json(p: &ForwardParams) -> Result<String> {
    to_text(&ForwardDoc {
        format: FORMAT_TAG,
        g_lo: p.g_lo,
        g_hi: p.g_hi,
        chirp: p.chirp,
        phase_noise: p.phase_noise,
    })
}

pub fn forward_params_from_json(text: &str) -> Result<ForwardParams> {
    let obj = parse_document(text)?;
    ForwardParams::new(
        field(&obj, "g_lo")?,
        field(&obj, "g_hi")?,
        field(&obj, "chirp")?,
        field(&obj, "phase_noise")?,
    )
    .map_err(|e| Error::parse("g_lo", e.to_string()))
}

pub fn write_forward_params(path: &Path, p: &ForwardParams) -> Result<()> {
    write_text(path, &forward_params_to_json(p)?)
}

pub fn read_forward_params(path: &Path) -> Result<ForwardParams> {
    forward_params_from_json(&read_text(path)?)
}

// MAP point ------------------------------------------------------------------

/// A MAP point bundled with the data it was computed from, so sampling can
/// start from a single file.
#[derive(Debug, Clone)]
pub struct MapFile {
    pub spectrogram: Spectrogram,
    pub state_window: EnergyWindow,
    pub map: MapResult,
}

#[derive(Serialize)]
struct MapDoc<'a> {
    format: &'static str,
    n_min: i32,
    n_max: i32,
    x_map: Vec<f64>,
    hessian: Vec<Vec<f64>>,
    log_posterior: f64,
    converged: bool,
    steps: usize,
    spectrogram: SpectrogramDoc<'a>,
}

pub fn write_map(path: &Path, file: &MapFile) -> Result<()> {
    let doc = MapDoc {
        format: FORMAT_TAG,
        n_min: file.state_window.n_min(),
        n_max: file.state_window.n_max(),
        x_map: file.map.x_map.components().iter().copied().collect(),
        hessian: rows_of(&file.map.hessian),
        log_posterior: file.map.log_posterior_at_map,
        converged: file.map.converged,
        steps: file.map.steps,
        spectrogram: spectrogram_doc(&file.spectrogram),
    };
    write_text(path, &to_text(&doc)?)
}

pub fn read_map(path: &Path) -> Result<MapFile> {
    let obj = parse_document(&read_text(path)?)?;
    let state_window = window_fields(&obj)?;
    let n = param_len(state_window.dim());
    let x: Vec<f64> = field(&obj, "x_map")?;
    if x.len() != n {
        return Err(Error::parse("x_map", format!("expected {n} components, found {}", x.len())));
    }
    let hessian = matrix_field(&obj, "hessian", n, n)?;
    let Some(Value::Object(data)) = obj.get("spectrogram") else {
        return Err(Error::parse("spectrogram", "missing or not an object"));
    };
    let mut data = data.clone();
    data.insert("format".into(), Value::String(FORMAT_TAG.into()));
    let spectrogram = spectrogram_from_object(&data)?;
    let x_map = ParamVector::from_vec(x).map_err(|e| Error::parse("x_map", e.to_string()))?;
    let mut map = MapResult::from_curvature(x_map, hessian, field(&obj, "log_posterior")?)
        .map_err(|e| Error::parse("hessian", e.to_string()))?;
    map.converged = field(&obj, "converged")?;
    map.steps = field(&obj, "steps")?;
    Ok(MapFile {
        spectrogram,
        state_window,
        map,
    })
}

// chains ---------------------------------------------------------------------

#[derive(Serialize)]
struct ChainHeader {
    format: &'static str,
    d: usize,
    n_min: i32,
    n_max: i32,
    beta: f64,
    seed: u64,
    thinning: usize,
    acceptance_count: u64,
    proposal_count: u64,
    n_samples: usize,
}

/// Path of the binary payload belonging to a chain header.
pub fn chain_payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

/// Little-endian bytes of the samples, one fixed-size record per sample.
pub fn chain_payload(record: &ChainRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * record.samples.len() * record.param_len());
    for sample in &record.samples {
        for v in sample.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn chain_header_to_json(record: &ChainRecord, window: EnergyWindow) -> Result<String> {
    let n = param_len(window.dim());
    if let Some(bad) = record.samples.iter().find(|s| s.len() != n) {
        return Err(Error::dimension(n, bad.len()));
    }
    to_text(&ChainHeader {
        format: FORMAT_TAG,
        d: window.dim(),
        n_min: window.n_min(),
        n_max: window.n_max(),
        beta: record.beta,
        seed: record.seed,
        thinning: record.thinning,
        acceptance_count: record.acceptance_count,
        proposal_count: record.proposal_count,
        n_samples: record.samples.len(),
    })
}

/// Writes the payload first and the header last, so a header on disk always
/// describes a complete payload.
pub fn write_chain(header_path: &Path, record: &ChainRecord, window: EnergyWindow) -> Result<()> {
    let header = chain_header_to_json(record, window)?;
    let mut payload = BufWriter::new(File::create(chain_payload_path(header_path))?);
    payload.write_all(&chain_payload(record))?;
    payload.flush()?;
    write_text(header_path, &header)
}

/// Reads a chain header and its payload. The window is returned when the
/// header records it.
pub fn read_chain(header_path: &Path) -> Result<(ChainRecord, Option<EnergyWindow>)> {
    let obj = parse_document(&read_text(header_path)?)?;
    let d: usize = field(&obj, "d")?;
    if d == 0 {
        return Err(Error::parse("d", "must be positive"));
    }
    let window = match (obj.get("n_min"), obj.get("n_max")) {
        (Some(_), Some(_)) => {
            let w = window_fields(&obj)?;
            if w.dim() != d {
                return Err(Error::parse("d", format!("window has dimension {}", w.dim())));
            }
            Some(w)
        }
        _ => None,
    };
    let beta: f64 = field(&obj, "beta")?;
    let thinning: usize = field(&obj, "thinning")?;
    if thinning == 0 {
        return Err(Error::parse("thinning", "must be positive"));
    }
    let acceptance_count: u64 = field(&obj, "acceptance_count")?;
    let proposal_count: u64 = field(&obj, "proposal_count")?;
    if acceptance_count > proposal_count {
        return Err(Error::parse("acceptance_count", "exceeds proposal_count"));
    }
    let n_samples: usize = field(&obj, "n_samples")?;

    let mut bytes = Vec::new();
    File::open(chain_payload_path(header_path))?.read_to_end(&mut bytes)?;
    let n = param_len(d);
    let expected = 8 * (n_samples as u64) * (n as u64);
    if bytes.len() as u64 != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::parse("payload", "non-finite sample"));
    }
    let samples = values.chunks_exact(n).map(DVector::from_column_slice).collect();
    Ok((
        ChainRecord {
            samples,
            acceptance_count,
            proposal_count,
            seed: field(&obj, "seed")?,
            beta,
            thinning,
        },
        window,
    ))
}

/// Chain headers (`*.json`) in a directory, sorted by file name.
pub fn chain_headers_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json") && chain_payload_path(p).exists())
        .collect();
    out.sort();
    Ok(out)
}

// posterior summary ----------------------------------------------------------

#[derive(Serialize)]
struct SummaryDoc<'a> {
    format: &'static str,
    n_min: i32,
    n_max: i32,
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
    std_re: Vec<Vec<f64>>,
    std_im: Vec<Vec<f64>>,
    retained: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    rhat: Option<&'a BTreeMap<String, f64>>,
}

/// Summary document. The mean density uses the density-file keys, so the
/// file can be read back with [`read_density`].
pub fn write_summary(path: &Path, summary: &PosteriorSummary, rhat: Option<&BTreeMap<String, f64>>) -> Result<()> {
    let mean = density_doc(&summary.mean_density);
    let doc = SummaryDoc {
        format: FORMAT_TAG,
        n_min: mean.n_min,
        n_max: mean.n_max,
        re: mean.re,
        im: mean.im,
        std_re: rows_of(&summary.std_re),
        std_im: rows_of(&summary.std_im),
        retained: summary.retained,
        rhat,
    };
    write_text(path, &to_text(&doc)?)
}

// CSV exports ----------------------------------------------------------------

pub fn temporal_csv(grid: PositionGrid, values: &[f64]) -> Result<String> {
    if values.len() != grid.len() {
        return Err(Error::dimension(grid.len(), values.len()));
    }
    let mut out = String::from("x,value\n");
    for (k, v) in values.iter().enumerate() {
        out.push_str(&format!("{},{}\n", grid.value(k), v));
    }
    Ok(out)
}

pub fn wigner_csv(table: &WignerTable) -> String {
    let grid = table.grid();
    let mut out = String::from("x,p,value\n");
    for k in 0..grid.len() {
        for (j, p) in table.momenta().indices().enumerate() {
            out.push_str(&format!("{},{},{}\n", grid.value(k), p, table.values()[(k, j)]));
        }
    }
    out
}
