//! Binary file formats for dense tensors (`MPBT`) and fitted models (`MPBM`).
//!
//! Tensor file: magic `MPBT`, version byte, `ndim` byte, `ndim` little-endian
//! `u64` dims, then the entries as little-endian `f64` in last-index-fastest
//! order. Model file: magic `MPBM`, version byte, little-endian `u64` header
//! length, a JSON header describing bases and shapes, then the coefficient
//! matrices (row-major) and the optional gridded mean as little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::basis::MarginalBasis;
use crate::error::{MpbError, Result};
use crate::model::{GriddedMean, MpbModel};
use crate::tensor::{DenseTensor, Matrix};

pub const TENSOR_MAGIC: &[u8; 4] = b"MPBT";
pub const MODEL_MAGIC: &[u8; 4] = b"MPBM";
pub const VERSION: u8 = 1;

/// Upper bound on the JSON header of a model file.
const MAX_HEADER: u64 = 1 << 30;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MpbError::Format(msg.into()))
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => MpbError::Format(format!("file truncated in {what}")),
        _ => MpbError::Io(e),
    })
}

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => MpbError::BadMagic,
        _ => MpbError::Io(e),
    })?;
    if &buf != magic {
        return Err(MpbError::BadMagic);
    }
    let mut version = [0u8; 1];
    read_exact_or(r, &mut version, "version")?;
    if version[0] != VERSION {
        return format_err(format!("unsupported version {} (expected {VERSION})", version[0]));
    }
    Ok(())
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact_or(r, &mut buf, what)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_f64s(w: &mut impl Write, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    let mut buf = [0u8; 8];
    for _ in 0..n {
        read_exact_or(r, &mut buf, what)?;
        let v = f64::from_le_bytes(buf);
        if !v.is_finite() {
            return Err(MpbError::NonFinite(what.into()));
        }
        out.push(v);
    }
    Ok(out)
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return format_err("trailing bytes after payload");
    }
    Ok(())
}

pub fn write_tensor(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    if !t.is_finite() {
        return Err(MpbError::NonFinite("tensor to be written".into()));
    }
    let ndim = u8::try_from(t.ndim()).map_err(|_| MpbError::Format("more than 255 modes".into()))?;
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[VERSION, ndim])?;
    for &d in t.dims() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64s(w, t.data().iter().copied())
}

/// Reads a tensor and requires the stream to end right after the payload.
pub fn read_tensor(r: &mut impl Read) -> Result<DenseTensor> {
    read_magic(r, TENSOR_MAGIC)?;
    let mut ndim = [0u8; 1];
    read_exact_or(r, &mut ndim, "ndim")?;
    if ndim[0] == 0 {
        return format_err("ndim must be at least 1");
    }
    let mut dims = Vec::with_capacity(ndim[0] as usize);
    let mut len: usize = 1;
    for d in 0..ndim[0] {
        let n = read_u64(r, "dims")?;
        let n = usize::try_from(n).map_err(|_| MpbError::Format(format!("dim {d} = {n} is too large")))?;
        if n == 0 {
            return format_err(format!("dim {d} is zero"));
        }
        len = len
            .checked_mul(n)
            .ok_or_else(|| MpbError::Format("product of dims overflows".into()))?;
        dims.push(n);
    }
    let data = read_f64s(r, len, "tensor payload")?;
    expect_eof(r)?;
    DenseTensor::new(dims, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    bases: Vec<MarginalBasis>,
    rank: usize,
    subjects: usize,
    mean_grid: Option<Vec<Vec<f64>>>,
}

pub fn write_model(w: &mut impl Write, model: &MpbModel) -> Result<()> {
    let header = ModelHeader {
        bases: model.bases().to_vec(),
        rank: model.rank(),
        subjects: model.n_subjects(),
        mean_grid: model.mean().map(|m| m.grid.clone()),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for c in model.coefs().iter().chain([model.subject_coefs()]) {
        write_f64s(w, c.transpose().iter().copied())?;
    }
    if let Some(mean) = model.mean() {
        write_f64s(w, mean.values.data().iter().copied())?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<MpbModel> {
    read_magic(r, MODEL_MAGIC)?;
    let len = read_u64(r, "header length")?;
    if len > MAX_HEADER {
        return format_err(format!("header length {len} is implausible"));
    }
    let mut json = vec![0u8; len as usize];
    read_exact_or(r, &mut json, "header")?;
    let header: ModelHeader = serde_json::from_slice(&json)?;
    let k = header.rank;
    let mut read_matrix = |rows: usize, what: &str| -> Result<Matrix> {
        let n = rows
            .checked_mul(k)
            .ok_or_else(|| MpbError::Format(format!("{what} size overflows")))?;
        Ok(Matrix::from_row_slice(rows, k, &read_f64s(r, n, what)?))
    };
    let coefs = header
        .bases
        .iter()
        .map(|b| read_matrix(b.rank(), "marginal coefficients"))
        .collect::<Result<Vec<_>>>()?;
    let subject_coefs = read_matrix(header.subjects, "subject coefficients")?;
    let mut model = MpbModel::new(header.bases, coefs, subject_coefs)?;
    if let Some(grid) = header.mean_grid {
        let dims: Vec<usize> = grid.iter().map(|g| g.len()).collect();
        let n = dims.iter().product();
        let values = DenseTensor::new(dims, read_f64s(r, n, "mean values")?)?;
        model = model.with_mean(GriddedMean { grid, values })?;
    }
    expect_eof(r)?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &MpbModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MpbModel> {
    read_model(&mut BufReader::new(File::open(path)?))
}
