//! Self-describing model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "GASROM01" (format version 1)
//! u32           method tag length L, then L bytes of UTF-8
//! u32 x 4       n, r, m, p
//! u8            dynamics tag: 0 = raw, 1 = stable
//! u8            output tag:   0 = identity, 1 = linear C (p x n trailer)
//! f64 payloads  phi (n*r), psi (n*r),
//!               raw:    A (r*r), H (r*r*r), B (r*m)
//!               stable: K, R, Q (r*r each), S (r*r*r), B (r*m)
//!               then C (p*n) when output tag = 1
//! ```
//!
//! Matrices are column-major; tensors use the first-index-fastest layout.
//! A CSV twin (`<stem>.csv`, long format `tensor,i,j,k,value`) is written
//! next to the binary for human inspection.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::Path;

use gasnitrom::numerics::{spectral_abscissa, DenseMatrix, Tensor3};
use gasnitrom::rom::{LatentDynamics, OutputMap, ProjectionPair, RomModel};
use gasnitrom::stability::StableLatentParams;

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"GASROM01";

fn push_matrix(buf: &mut Vec<u8>, m: &DenseMatrix) {
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_tensor(buf: &mut Vec<u8>, t: &Tensor3) {
    for v in t.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_model(path: &Path, model: &RomModel, method: &str) -> CliResult<()> {
    let n = model.full_dim() as u32;
    let r = model.latent_dim() as u32;
    let m = model.input_dim() as u32;
    let p = model.output_dim() as u32;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(method.len() as u32).to_le_bytes());
    buf.extend_from_slice(method.as_bytes());
    for d in [n, r, m, p] {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let (dyn_tag, out_tag) = (
        match model.dynamics {
            LatentDynamics::Raw { .. } => 0u8,
            LatentDynamics::Stable(_) => 1u8,
        },
        match model.output {
            OutputMap::Identity => 0u8,
            OutputMap::Linear(_) => 1u8,
        },
    );
    buf.push(dyn_tag);
    buf.push(out_tag);
    push_matrix(&mut buf, model.projection.phi());
    push_matrix(&mut buf, model.projection.psi());
    match &model.dynamics {
        LatentDynamics::Raw { a, h, b } => {
            push_matrix(&mut buf, a);
            push_tensor(&mut buf, h);
            push_matrix(&mut buf, b);
        }
        LatentDynamics::Stable(s) => {
            push_matrix(&mut buf, &s.k);
            push_matrix(&mut buf, &s.r);
            push_matrix(&mut buf, &s.q);
            push_tensor(&mut buf, &s.s);
            push_matrix(&mut buf, &s.b);
        }
    }
    if let OutputMap::Linear(c) = &model.output {
        push_matrix(&mut buf, c);
    }
    fs::write(path, &buf).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))?;
    write_csv_twin(path, model, method)?;
    Ok(())
}

fn csv_matrix(out: &mut String, name: &str, m: &DenseMatrix) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let _ = writeln!(out, "{name},{i},{j},,{:.16e}", m[(i, j)]);
        }
    }
}

fn csv_tensor(out: &mut String, name: &str, t: &Tensor3) {
    let (d1, d2, d3) = t.dims();
    for k in 0..d3 {
        for j in 0..d2 {
            for i in 0..d1 {
                let _ = writeln!(out, "{name},{i},{j},{k},{:.16e}", t.get(i, j, k));
            }
        }
    }
}

fn write_csv_twin(bin_path: &Path, model: &RomModel, method: &str) -> CliResult<()> {
    let csv_path = bin_path.with_extension("csv");
    let mut out = String::from("tensor,i,j,k,value\n");
    csv_matrix(&mut out, "phi", model.projection.phi());
    csv_matrix(&mut out, "psi", model.projection.psi());
    match &model.dynamics {
        LatentDynamics::Raw { a, h, b } => {
            csv_matrix(&mut out, "A", a);
            csv_matrix(&mut out, "B", b);
            csv_tensor(&mut out, "H", h);
        }
        LatentDynamics::Stable(s) => {
            csv_matrix(&mut out, "K", &s.k);
            csv_matrix(&mut out, "R", &s.r);
            csv_matrix(&mut out, "Q", &s.q);
            csv_matrix(&mut out, "B", &s.b);
            csv_tensor(&mut out, "S", &s.s);
        }
    }
    if let OutputMap::Linear(c) = &model.output {
        csv_matrix(&mut out, "C", c);
    }
    let _ = writeln!(out, "# method = {method}");
    fs::write(&csv_path, out).map_err(|e| CliError::Data(format!("writing {}: {e}", csv_path.display())))
}

struct Reader {
    buf: Vec<u8>,
    pos: usize,
    path: String,
}

impl Reader {
    fn take(&mut self, len: usize) -> CliResult<&[u8]> {
        if self.pos + len > self.buf.len() {
            return Err(CliError::Data(format!("{}: truncated model file", self.path)));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> CliResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> CliResult<DenseMatrix> {
        let raw = self.take(rows * cols * 8)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("{}: non-finite tensor entry", self.path)));
        }
        Ok(DenseMatrix::from_vec(rows, cols, vals))
    }

    fn tensor(&mut self, d: usize) -> CliResult<Tensor3> {
        let raw = self.take(d * d * d * 8)?;
        let vals: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!("{}: non-finite tensor entry", self.path)));
        }
        Tensor3::from_vec(d, d, d, vals).map_err(|e| CliError::Data(e.to_string()))
    }
}

/// Load a model file; stable parameterizations are assembled and verified
/// Hurwitz on load.
pub fn load_model(path: &Path) -> CliResult<(RomModel, String)> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| CliError::Data(format!("opening {}: {e}", path.display())))?
        .read_to_end(&mut buf)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
    let mut r = Reader {
        buf,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(8)? != MAGIC {
        return Err(CliError::Data(format!("{}: bad magic (not a model file)", path.display())));
    }
    let mlen = r.u32()? as usize;
    let method = String::from_utf8(r.take(mlen)?.to_vec())
        .map_err(|_| CliError::Data(format!("{}: method tag is not UTF-8", path.display())))?;
    let n = r.u32()? as usize;
    let rr = r.u32()? as usize;
    let m = r.u32()? as usize;
    let p = r.u32()? as usize;
    let dyn_tag = r.u8()?;
    let out_tag = r.u8()?;
    let phi = r.matrix(n, rr)?;
    let psi = r.matrix(n, rr)?;
    let dynamics = match dyn_tag {
        0 => LatentDynamics::Raw {
            a: r.matrix(rr, rr)?,
            h: r.tensor(rr)?,
            b: r.matrix(rr, m)?,
        },
        1 => LatentDynamics::Stable(StableLatentParams {
            k: r.matrix(rr, rr)?,
            r: r.matrix(rr, rr)?,
            q: r.matrix(rr, rr)?,
            s: r.tensor(rr)?,
            b: r.matrix(rr, m)?,
        }),
        other => return Err(CliError::Data(format!("{}: unknown dynamics tag {other}", path.display()))),
    };
    let output = match out_tag {
        0 => OutputMap::Identity,
        1 => OutputMap::Linear(r.matrix(p, n)?),
        other => return Err(CliError::Data(format!("{}: unknown output tag {other}", path.display()))),
    };
    let pair = ProjectionPair::new(phi, psi).map_err(CliError::from)?;
    let model = RomModel::new(pair, dynamics, output).map_err(CliError::from)?;
    if let LatentDynamics::Stable(_) = &model.dynamics {
        let abscissa = spectral_abscissa(&model.compiled().a);
        if !(abscissa < 0.0) {
            return Err(CliError::Numerical(format!(
                "{}: stable-tagged model assembles to non-Hurwitz A (abscissa {abscissa:.3e})",
                path.display()
            )));
        }
    }
    Ok((model, method))
}
