//! Dataset directory layout.
//!
//! `meta.txt` is a plain-text key/value schema:
//!
//! ```text
//! schema_version = 1
//! format = csv | bin
//! n = <state dim>      m = <input dim>      p = <output dim>
//! trajectories = <count>
//! samples = <count>
//! weight_convention = steady-state-output | time-averaged-energy | unit
//! grid = t0,t1,...            (17 significant digits each)
//! weight_<j> = <alpha_j>      (one line per trajectory)
//! ```
//!
//! Each trajectory is `traj_<k>.csv` with header `t,x_1..x_n,u_1..u_m,
//! y_1..y_p` and values printed with 17 significant digits (bit-faithful
//! round-trip for 64-bit floats), or the binary twin `traj_<k>.bin`:
//! little-endian f64 records `(t, x[n], u[m], y[p])` back to back, record
//! `i` at byte offset `i * 8 * (1 + n + m + p)`, no header.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fom::InputSignal;
use crate::numerics::DenseMatrix;
use crate::training::{SnapshotDataset, Trajectory, WeightConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Binary,
}

impl FileFormat {
    fn as_str(&self) -> &'static str {
        match self {
            FileFormat::Csv => "csv",
            FileFormat::Binary => "bin",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(FileFormat::Csv),
            "bin" => Ok(FileFormat::Binary),
            other => Err(Error::Config(format!("unknown dataset format '{other}'"))),
        }
    }
}

/// 17-significant-digit decimal rendering; round-trips every finite f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn schema_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Write a dataset directory (created if missing).
pub fn write_dataset(dir: &Path, data: &SnapshotDataset, format: FileFormat) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let n = data.state_dim();
    let m = data.input_dim();
    let p = data.output_dim();
    let num = data.num_samples();

    let mut meta = String::new();
    let _ = writeln!(meta, "schema_version = 1");
    let _ = writeln!(meta, "format = {}", format.as_str());
    let _ = writeln!(meta, "n = {n}");
    let _ = writeln!(meta, "m = {m}");
    let _ = writeln!(meta, "p = {p}");
    let _ = writeln!(meta, "trajectories = {}", data.num_trajectories());
    let _ = writeln!(meta, "samples = {num}");
    let _ = writeln!(meta, "weight_convention = {}", data.convention().as_str());
    let grid: Vec<String> = data.times().iter().map(|t| format_f64(*t)).collect();
    let _ = writeln!(meta, "grid = {}", grid.join(","));
    for (j, traj) in data.trajectories().iter().enumerate() {
        let _ = writeln!(meta, "weight_{j} = {}", format_f64(traj.weight));
    }
    let meta_path = dir.join("meta.txt");
    fs::write(&meta_path, meta).map_err(|e| io_err(&meta_path, e))?;

    for (j, traj) in data.trajectories().iter().enumerate() {
        match format {
            FileFormat::Csv => {
                let path = dir.join(format!("traj_{j}.csv"));
                let mut out = String::new();
                let mut header: Vec<String> = vec!["t".into()];
                header.extend((1..=n).map(|i| format!("x_{i}")));
                header.extend((1..=m).map(|i| format!("u_{i}")));
                header.extend((1..=p).map(|i| format!("y_{i}")));
                let _ = writeln!(out, "{}", header.join(","));
                for i in 0..num {
                    let mut row: Vec<String> = Vec::with_capacity(1 + n + m + p);
                    row.push(format_f64(data.times()[i]));
                    for k in 0..n {
                        row.push(format_f64(traj.states[(k, i)]));
                    }
                    for k in 0..m {
                        row.push(format_f64(traj.inputs[(k, i)]));
                    }
                    for k in 0..p {
                        row.push(format_f64(traj.outputs[(k, i)]));
                    }
                    let _ = writeln!(out, "{}", row.join(","));
                }
                fs::write(&path, out).map_err(|e| io_err(&path, e))?;
            }
            FileFormat::Binary => {
                let path = dir.join(format!("traj_{j}.bin"));
                let mut buf: Vec<u8> = Vec::with_capacity(num * (1 + n + m + p) * 8);
                for i in 0..num {
                    buf.extend_from_slice(&data.times()[i].to_le_bytes());
                    for k in 0..n {
                        buf.extend_from_slice(&traj.states[(k, i)].to_le_bytes());
                    }
                    for k in 0..m {
                        buf.extend_from_slice(&traj.inputs[(k, i)].to_le_bytes());
                    }
                    for k in 0..p {
                        buf.extend_from_slice(&traj.outputs[(k, i)].to_le_bytes());
                    }
                }
                let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                f.write_all(&buf).map_err(|e| io_err(&path, e))?;
            }
        }
    }
    Ok(())
}

fn parse_meta(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut map = std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(schema_err(path, format!("line {}: expected 'key = value'", lineno + 1)));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn meta_usize(map: &std::collections::BTreeMap<String, String>, path: &Path, key: &str) -> Result<usize> {
    map.get(key)
        .ok_or_else(|| schema_err(path, format!("missing field '{key}'")))?
        .parse()
        .map_err(|_| schema_err(path, format!("field '{key}' is not an integer")))
}

/// Read a dataset directory written by [`write_dataset`]. Ingested
/// trajectories carry sampled input signals (linear interpolation).
pub fn read_dataset(dir: &Path) -> Result<SnapshotDataset> {
    let meta_path = dir.join("meta.txt");
    let map = parse_meta(&meta_path)?;
    let version = meta_usize(&map, &meta_path, "schema_version")?;
    if version != 1 {
        return Err(schema_err(&meta_path, format!("unsupported schema_version {version}")));
    }
    let format = FileFormat::parse(
        map.get("format")
            .ok_or_else(|| schema_err(&meta_path, "missing field 'format'"))?,
    )?;
    let n = meta_usize(&map, &meta_path, "n")?;
    let m = meta_usize(&map, &meta_path, "m")?;
    let p = meta_usize(&map, &meta_path, "p")?;
    let n_traj = meta_usize(&map, &meta_path, "trajectories")?;
    let num = meta_usize(&map, &meta_path, "samples")?;
    if n_traj == 0 {
        return Err(schema_err(&meta_path, "no trajectories"));
    }
    let convention = WeightConvention::parse(
        map.get("weight_convention")
            .ok_or_else(|| schema_err(&meta_path, "missing field 'weight_convention'"))?,
    )?;
    let grid_text = map
        .get("grid")
        .ok_or_else(|| schema_err(&meta_path, "missing field 'grid'"))?;
    let times: Vec<f64> = grid_text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| schema_err(&meta_path, "field 'grid' has a non-numeric entry"))?;
    if times.len() != num {
        return Err(schema_err(
            &meta_path,
            format!("grid has {} entries but samples = {num}", times.len()),
        ));
    }
    let mut weights = Vec::with_capacity(n_traj);
    for j in 0..n_traj {
        let key = format!("weight_{j}");
        let w: f64 = map
            .get(&key)
            .ok_or_else(|| schema_err(&meta_path, format!("missing field '{key}'")))?
            .parse()
            .map_err(|_| schema_err(&meta_path, format!("field '{key}' is not a number")))?;
        weights.push(w);
    }

    let mut trajectories = Vec::with_capacity(n_traj);
    let mut first_grid: Option<Vec<f64>> = None;
    for j in 0..n_traj {
        let (grid_j, states, inputs, outputs) = match format {
            FileFormat::Csv => read_traj_csv(&dir.join(format!("traj_{j}.csv")), n, m, p, num)?,
            FileFormat::Binary => read_traj_bin(&dir.join(format!("traj_{j}.bin")), n, m, p, num)?,
        };
        match &first_grid {
            None => {
                // The first trajectory's grid must also match the meta grid.
                for (a, b) in grid_j.iter().zip(&times) {
                    if a != b {
                        return Err(schema_err(
                            &meta_path,
                            format!("grid mismatch between meta.txt and traj_{j}"),
                        ));
                    }
                }
                first_grid = Some(grid_j);
            }
            Some(g0) => {
                if g0.iter().zip(&grid_j).any(|(a, b)| a != b) {
                    return Err(schema_err(
                        &dir.join(format!("traj_{j}.{}", format.as_str())),
                        format!("sample grid differs between traj_0 and traj_{j}"),
                    ));
                }
            }
        }
        trajectories.push(Trajectory {
            signal: InputSignal::Sampled {
                times: times.clone(),
                values: inputs.clone(),
            },
            states,
            inputs,
            outputs,
            weight: weights[j],
        });
    }
    SnapshotDataset::new(times, trajectories, convention)
}

type TrajParts = (Vec<f64>, DenseMatrix, DenseMatrix, DenseMatrix);

fn read_traj_csv(path: &Path, n: usize, m: usize, p: usize, num: usize) -> Result<TrajParts> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| schema_err(path, "empty file"))?;
    let expected_cols = 1 + n + m + p;
    if header.split(',').count() != expected_cols {
        return Err(schema_err(
            path,
            format!("header has {} columns, expected {expected_cols}", header.split(',').count()),
        ));
    }
    let mut times = Vec::with_capacity(num);
    let mut states = DenseMatrix::zeros(n, num);
    let mut inputs = DenseMatrix::zeros(m, num);
    let mut outputs = DenseMatrix::zeros(p, num);
    let mut row = 0usize;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if row >= num {
            return Err(schema_err(path, format!("more than {num} data rows")));
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| schema_err(path, format!("line {}: non-numeric value", lineno + 2)))?;
        if vals.len() != expected_cols {
            return Err(schema_err(
                path,
                format!("line {}: {} columns, expected {expected_cols}", lineno + 2, vals.len()),
            ));
        }
        times.push(vals[0]);
        for k in 0..n {
            states[(k, row)] = vals[1 + k];
        }
        for k in 0..m {
            inputs[(k, row)] = vals[1 + n + k];
        }
        for k in 0..p {
            outputs[(k, row)] = vals[1 + n + m + k];
        }
        row += 1;
    }
    if row != num {
        return Err(schema_err(path, format!("{row} data rows, expected {num}")));
    }
    Ok((times, states, inputs, outputs))
}

fn read_traj_bin(path: &Path, n: usize, m: usize, p: usize, num: usize) -> Result<TrajParts> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut buf)
        .map_err(|e| io_err(path, e))?;
    let record = (1 + n + m + p) * 8;
    if buf.len() != record * num {
        return Err(schema_err(
            path,
            format!("file is {} bytes, expected {}", buf.len(), record * num),
        ));
    }
    let mut times = Vec::with_capacity(num);
    let mut states = DenseMatrix::zeros(n, num);
    let mut inputs = DenseMatrix::zeros(m, num);
    let mut outputs = DenseMatrix::zeros(p, num);
    let take = |off: usize| f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
    for i in 0..num {
        let mut off = i * record;
        times.push(take(off));
        off += 8;
        for k in 0..n {
            states[(k, i)] = take(off);
            off += 8;
        }
        for k in 0..m {
            inputs[(k, i)] = take(off);
            off += 8;
        }
        for k in 0..p {
            outputs[(k, i)] = take(off);
            off += 8;
        }
    }
    Ok((times, states, inputs, outputs))
}

/// Optional ingest transform: re-express every state (and full-state output)
/// in the span of the leading `k` POD modes, shrinking the working dimension
/// to `k`. Requires full-state outputs (`p == n`).
pub fn preproject_dataset(data: &SnapshotDataset, k: usize) -> Result<(SnapshotDataset, DenseMatrix)> {
    if data.output_dim() != data.state_dim() {
        return Err(Error::Config(
            "pre-projection requires full-state outputs (p == n)".into(),
        ));
    }
    let weights: Vec<f64> = data.trajectories().iter().map(|t| t.weight).collect();
    let basis = crate::opinf::pod(data, k, &weights)?;
    let phi = basis.modes;
    let trajectories = data
        .trajectories()
        .iter()
        .map(|t| Trajectory {
            states: phi.transpose() * &t.states,
            inputs: t.inputs.clone(),
            outputs: phi.transpose() * &t.outputs,
            weight: t.weight,
            signal: t.signal.clone(),
        })
        .collect();
    Ok((
        SnapshotDataset::new(data.times().to_vec(), trajectories, data.convention())?,
        phi,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fom::{make_training_set, toy_model, Protocol};
    use tempfile::tempdir;

    fn toy_ds() -> SnapshotDataset {
        make_training_set(
            &toy_model(20.0),
            Protocol::Step,
            &[0.1, 0.2],
            24,
            3.0,
            WeightConvention::SteadyStateOutput,
            8,
        )
        .unwrap()
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let d = toy_ds();
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &d, FileFormat::Csv).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(d.times(), back.times());
        assert_eq!(back.convention(), d.convention());
        for (a, b) in d.trajectories().iter().zip(back.trajectories()) {
            assert_eq!(a.states, b.states);
            assert_eq!(a.inputs, b.inputs);
            assert_eq!(a.outputs, b.outputs);
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let d = toy_ds();
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &d, FileFormat::Binary).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(d.times(), back.times());
        for (a, b) in d.trajectories().iter().zip(back.trajectories()) {
            assert_eq!(a.states, b.states);
            assert_eq!(a.weight, b.weight);
        }
    }

    #[test]
    fn double_round_trip_writes_identical_bytes() {
        let d = toy_ds();
        let dir1 = tempdir().unwrap();
        write_dataset(dir1.path(), &d, FileFormat::Csv).unwrap();
        let back = read_dataset(dir1.path()).unwrap();
        let dir2 = tempdir().unwrap();
        write_dataset(dir2.path(), &back, FileFormat::Csv).unwrap();
        for name in ["meta.txt", "traj_0.csv", "traj_1.csv"] {
            let a = fs::read(dir1.path().join(name)).unwrap();
            let b = fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs after round trip");
        }
    }

    #[test]
    fn empty_dataset_rejected_with_schema_error() {
        let dir = tempdir().unwrap();
        fs::write(
            dir.path().join("meta.txt"),
            "schema_version = 1\nformat = csv\nn = 1\nm = 1\np = 1\ntrajectories = 0\nsamples = 2\nweight_convention = unit\ngrid = 0,1\n",
        )
        .unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("no trajectories")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_grid_between_trajectories_is_rejected_naming_both() {
        let d = toy_ds();
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &d, FileFormat::Csv).unwrap();
        // Corrupt the second trajectory's time column.
        let path = dir.path().join("traj_1.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
        cells[0] = format_f64(999.0);
        lines[3] = cells.join(",");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Schema { path, message }) => {
                assert!(path.contains("traj_1"));
                assert!(message.contains("traj_0") && message.contains("traj_1"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_error_names_file_and_line() {
        let d = toy_ds();
        let dir = tempdir().unwrap();
        write_dataset(dir.path(), &d, FileFormat::Csv).unwrap();
        let path = dir.path().join("traj_0.csv");
        let mut text = fs::read_to_string(&path).unwrap();
        text = text.replacen("e0,", "oops,", 1);
        fs::write(&path, text).unwrap();
        match read_dataset(dir.path()) {
            Err(Error::Schema { path, message }) => {
                assert!(path.contains("traj_0.csv"));
                assert!(message.contains("line"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn preprojection_shrinks_dimension_and_preserves_energy() {
        let fom = toy_model(20.0);
        let mut d = make_training_set(&fom, Protocol::Step, &[0.1, 0.2], 24, 3.0, WeightConvention::Unit, 8).unwrap();
        // Make outputs the full state so pre-projection applies.
        let times = d.times().to_vec();
        let trajs: Vec<Trajectory> = d
            .trajectories()
            .iter()
            .map(|t| Trajectory {
                outputs: t.states.clone(),
                states: t.states.clone(),
                inputs: t.inputs.clone(),
                weight: t.weight,
                signal: t.signal.clone(),
            })
            .collect();
        d = SnapshotDataset::new(times, trajs, WeightConvention::Unit).unwrap();
        let (proj, phi) = preproject_dataset(&d, 2).unwrap();
        assert_eq!(proj.state_dim(), 2);
        assert_eq!(phi.shape(), (3, 2));
        // Projection must capture nearly all of this low-rank-ish data.
        let orig: f64 = d.trajectories()[0].states.norm_squared();
        let kept: f64 = proj.trajectories()[0].states.norm_squared();
        assert!(kept <= orig * (1.0 + 1e-12));
        assert!(kept >= 0.9 * orig, "kept {kept} of {orig}");
    }
}
