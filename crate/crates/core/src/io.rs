//! Output artifacts: CSV tables with unit headers, raw field snapshots with
//! JSON sidecars, and a metadata file that holds everything
//! non-deterministic (timestamps), so every other file is reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::EnergyReport;
use crate::error::{Error, Result};
use crate::experiments::{DataMatrix, SweepReport};
use crate::grid::Grid;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(format!("{}: {e}", path.display())))
}

/// Writes a header and rows; values use Rust's shortest round-trip format.
pub fn write_csv<R, I>(path: &Path, header: &[&str], rows: R) -> Result<()>
where
    R: IntoIterator<Item = I>,
    I: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_energy_csv(path: &Path, rep: &EnergyReport) -> Result<()> {
    let header = [
        "t [s]",
        "E [model units]",
        "D [model units]",
        "L_monitor [1]",
        "residual [model units/s]",
        "rhs1 [model units/s]",
        "rhs2 [model units/s]",
    ];
    let get = |v: &Vec<f64>, i: usize| v.get(i).copied().unwrap_or(f64::NAN);
    write_csv(
        path,
        &header,
        (0..rep.t.len()).map(|i| {
            [
                rep.t[i],
                get(&rep.energy, i),
                get(&rep.dissipation, i),
                get(&rep.l_monitor, i),
                get(&rep.residual, i),
                get(&rep.rhs1, i),
                get(&rep.rhs2, i),
            ]
            .map(num)
        }),
    )
}

/// Probe pressure traces, one column per probe.
pub fn write_probe_csv(path: &Path, times: &[f64], traces: &[Vec<f64>]) -> Result<()> {
    let mut header = vec!["t [s]".to_string()];
    header.extend((0..traces.len()).map(|i| format!("probe{i} [Pa]")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header,
        times.iter().enumerate().map(|(k, t)| {
            std::iter::once(num(*t)).chain(traces.iter().map(move |tr| num(tr[k])))
        }),
    )
}

/// Long format: one line per (source set, detector, time).
pub fn write_traces_csv(path: &Path, m: &DataMatrix) -> Result<()> {
    write_csv(
        path,
        &["source_set [-]", "detector [-]", "t [s]", "p [Pa]"],
        m.labels.iter().zip(&m.rows).flat_map(|((label, det), row)| {
            m.times
                .iter()
                .zip(row)
                .map(move |(t, p)| vec![label.clone(), det.to_string(), num(*t), num(*p)])
        }),
    )
}

pub fn write_singular_values_csv(path: &Path, raw: &[f64]) -> Result<()> {
    let top = raw.first().copied().unwrap_or(1.0);
    write_csv(
        path,
        &["index [-]", "value [Pa]", "normalized [1]"],
        raw.iter()
            .enumerate()
            .map(|(i, s)| vec![(i + 1).to_string(), num(*s), num(s / top)]),
    )
}

pub fn write_sweep_csv(path: &Path, rep: &SweepReport) -> Result<()> {
    let mut rows: Vec<Vec<String>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.mu),
                r.distance_to_next.map_or(String::new(), num),
                num(r.distance_to_inviscid),
                num(r.energy_sup),
            ]
        })
        .collect();
    rows.push(vec![num(0.0), String::new(), num(0.0), num(rep.inviscid_energy_sup)]);
    write_csv(
        path,
        &[
            "mu [Pa s]",
            "distance_to_next [model units]",
            "distance_to_inviscid [model units]",
            "energy_sup [model units]",
        ],
        rows,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SnapshotMeta {
    pub field: String,
    pub dims: Vec<usize>,
    pub spacing: Vec<f64>,
    pub time: f64,
    pub dtype: String,
    pub order: String,
}

/// `<name>.f64` (little-endian, row-major) plus `<name>.json`.
pub fn write_snapshot(dir: &Path, name: &str, field: &str, grid: &Grid, t: f64, values: &[f64]) -> Result<PathBuf> {
    if values.len() != grid.len() {
        return Err(Error::validation("snapshot does not match the grid"));
    }
    let bin = dir.join(format!("{name}.f64"));
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&bin, bytes).map_err(|e| io_err(&bin, e))?;
    let meta = SnapshotMeta {
        field: field.into(),
        dims: grid.dims().to_vec(),
        spacing: grid.spacing().to_vec(),
        time: t,
        dtype: "f64le".into(),
        order: "row-major".into(),
    };
    write_json(&dir.join(format!("{name}.json")), &meta)?;
    Ok(bin)
}

pub fn read_snapshot(bin: &Path) -> Result<(SnapshotMeta, Vec<f64>)> {
    let side = bin.with_extension("json");
    let text = fs::read_to_string(&side).map_err(|e| io_err(&side, e))?;
    let meta: SnapshotMeta = serde_json::from_str(&text).map_err(|e| io_err(&side, e))?;
    let bytes = fs::read(bin).map_err(|e| io_err(bin, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.len() != meta.dims.iter().product::<usize>() {
        return Err(io_err(bin, "size does not match the sidecar"));
    }
    Ok((meta, values))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Timestamps and tool version; the only non-reproducible file in a run directory.
pub fn write_metadata(dir: &Path, command: &str) -> Result<()> {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    write_json(
        &dir.join("metadata.json"),
        &serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": now,
        }),
    )
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(vec![3, 2], vec![0.5, 0.25]).unwrap();
        let v: Vec<f64> = (0..6).map(|i| i as f64 * 0.1 - 0.2).collect();
        let bin = write_snapshot(dir.path(), "sigma_0", "sigma", &g, 1.5e-6, &v).unwrap();
        assert_eq!(fs::metadata(&bin).unwrap().len(), 48);
        let raw = fs::read(&bin).unwrap();
        assert_eq!(&raw[8..16], &v[1].to_le_bytes());
        let (meta, back) = read_snapshot(&bin).unwrap();
        assert_eq!(back, v);
        assert_eq!(meta.dims, vec![3, 2]);
        assert_eq!(meta.time, 1.5e-6);
    }

    #[test]
    fn csv_headers_name_units() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let rep = EnergyReport {
            t: vec![0.0, 1.0],
            energy: vec![1.0, 2.0],
            dissipation: vec![0.0, 0.5],
            l_monitor: vec![0.1, 0.2],
            residual: vec![0.0, 1e-3],
            rhs1: vec![0.0, 0.0],
            rhs2: vec![0.0, 0.0],
        };
        write_energy_csv(&p, &rep).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.split(',').all(|h| h.contains('[')));
        assert_eq!(text.lines().count(), 3);
    }
}
