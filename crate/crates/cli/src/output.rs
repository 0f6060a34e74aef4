//! On-disk formats.
//!
//! Scalars go to CSV with Rust's shortest round-trip float formatting, so
//! equal runs give byte-equal files. Fields go to raw little-endian `f64`
//! files with `re, im` interleaved and a text sidecar describing the layout.
//! All quantities are in oscillator units.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use twomode::evolve::{Checkpoint, SimState};
use twomode::gpe::chemical_potential;
use twomode::grid::Grid;
use twomode::observables::{g1, n2};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TIMESERIES: &str = "timeseries.csv";
pub const AMPLITUDES: &str = "amplitudes.csv";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

/// Checkpoint file contents: the run settings plus the resumable state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub schema_version: i64,
    pub run: RunConfig,
    pub checkpoint: Checkpoint,
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

pub fn timeseries_header() -> String {
    "t,N2,E,tr_mu,inner_iterations,norm_residual\n".to_string()
}

pub fn amplitudes_header(n: usize) -> String {
    let j = (n / 2) as i64;
    let cols: Vec<String> = (-j..=j).map(|k| format!("p_{k}")).collect();
    format!("t,{}\n", cols.join(","))
}

/// One row of each CSV, after checking the observables' invariants.
pub fn rows(state: &SimState) -> Result<(String, String), CliError> {
    let b = &state.amplitudes;
    let p = b.probabilities();
    let norm: f64 = p.iter().sum();
    let occ = n2(b);
    let n = b.n() as f64;
    if (norm - 1.0).abs() > 1e-10 || !(occ >= -1e-10 && occ <= n + 1e-10) {
        return Err(CliError::Sim(twomode::Error::Numerical(format!(
            "state at t = {} violates the observables' invariants (norm {norm}, N2 {occ})",
            state.t
        ))));
    }
    let d = &state.diagnostics;
    let ts = format!(
        "{},{},{},{},{},{}\n",
        state.t,
        occ,
        state.energy,
        chemical_potential(&state.mu),
        d.inner_iterations,
        d.norm_residual
    );
    let mut amp = state.t.to_string();
    for x in p {
        amp.push(',');
        amp.push_str(&x.to_string());
    }
    amp.push('\n');
    Ok((ts, amp))
}

/// CSV destinations; in-memory buffers serve the determinism replay.
pub struct Tables {
    pub timeseries: Box<dyn Write>,
    pub amplitudes: Box<dyn Write>,
}

impl Tables {
    pub fn create(dir: &Path, n: usize) -> Result<Self, CliError> {
        let open = |name: &str, header: String| -> Result<Box<dyn Write>, CliError> {
            let path = dir.join(name);
            let mut w = BufWriter::new(File::create(&path).map_err(io_error(&path))?);
            w.write_all(header.as_bytes()).map_err(io_error(&path))?;
            Ok(Box::new(w))
        };
        Ok(Self { timeseries: open(TIMESERIES, timeseries_header())?, amplitudes: open(AMPLITUDES, amplitudes_header(n))? })
    }

    pub fn write(&mut self, state: &SimState) -> Result<(), CliError> {
        let (ts, amp) = rows(state)?;
        let fail = |source| CliError::Io { path: "csv output".into(), source };
        self.timeseries.write_all(ts.as_bytes()).map_err(fail)?;
        self.amplitudes.write_all(amp.as_bytes()).map_err(fail)
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        let fail = |source| CliError::Io { path: "csv output".into(), source };
        self.timeseries.flush().map_err(fail)?;
        self.amplitudes.flush().map_err(fail)
    }
}

fn write_complex(path: &Path, fields: &[&[C64]]) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_error(path))?);
    for f in fields {
        for z in f.iter() {
            w.write_all(&z.re.to_le_bytes()).map_err(io_error(path))?;
            w.write_all(&z.im.to_le_bytes()).map_err(io_error(path))?;
        }
    }
    w.flush().map_err(io_error(path))
}

fn sidecar(grid: &Grid, state: &SimState, content: &str, shape: &str) -> String {
    let mut s = String::new();
    s.push_str("format twomode-field 1\n");
    s.push_str("dtype f64 little-endian, re im interleaved\n");
    s.push_str(&format!("content {content}\n"));
    s.push_str(&format!("shape {shape}\n"));
    let names = ["x", "y", "z"];
    for (name, a) in names.iter().zip(grid.axes()) {
        s.push_str(&format!("axis {name} count {} min {} max {}\n", a.count, a.min, a.max));
    }
    s.push_str("order x slowest, z fastest; points at cell centres\n");
    s.push_str(&format!("step {}\nt {}\n", state.step, state.t));
    s
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_error(path))
}

/// Writes `modes_<step>.bin` and, when asked, `g1_<step>.bin` with sidecars.
pub fn write_snapshot(dir: &Path, grid: &Grid, state: &SimState, with_g1: bool) -> Result<(), CliError> {
    let snaps = dir.join("snapshots");
    fs::create_dir_all(&snaps).map_err(io_error(&snaps))?;
    let [nx, ny, nz] = grid.shape();
    let stem = format!("{:08}", state.step);

    let modes = snaps.join(format!("modes_{stem}.bin"));
    let phi = &state.modes.phi;
    write_complex(&modes, &[&phi[0], &phi[1]])?;
    let shape = format!("2 {nx} {ny} {nz}");
    write_text(&modes.with_extension("txt"), &sidecar(grid, state, "phi_1 then phi_2, each normalized to 1", &shape))?;

    if with_g1 {
        let field = g1(grid, &state.amplitudes, &state.modes).map_err(CliError::Sim)?;
        let path = snaps.join(format!("g1_{stem}.bin"));
        write_complex(&path, &[&field.values])?;
        let p = grid.len();
        let mut text = sidecar(grid, state, "G1(r, r') row-major in (r, r')", &format!("{p} {p}"));
        for w in &field.warnings {
            text.push_str(&format!("warning {w}\n"));
        }
        write_text(&path.with_extension("txt"), &text)?;
    }
    Ok(())
}

pub fn checkpoint_path(dir: &Path, step: Option<usize>) -> PathBuf {
    match step {
        Some(s) => dir.join("checkpoints").join(format!("step_{s:08}.json")),
        None => dir.join(CHECKPOINT),
    }
}

pub fn write_checkpoint(path: &Path, run: &RunConfig, checkpoint: Checkpoint) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    let file = CheckpointFile { schema_version: crate::config::SCHEMA_VERSION, run: run.clone(), checkpoint };
    let text = serde_json::to_string(&file).map_err(|e| CliError::Io { path: path.display().to_string(), source: e.into() })?;
    write_text(path, &text)
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| CliError::Config(vec![crate::config::Violation {
        key: path.display().to_string(),
        message: format!("not a checkpoint: {e}"),
    }]))?;
    if file.schema_version != crate::config::SCHEMA_VERSION {
        return Err(CliError::Config(vec![crate::config::Violation {
            key: "schema_version".into(),
            message: format!("checkpoint has version {}, this build reads {}", file.schema_version, crate::config::SCHEMA_VERSION),
        }]));
    }
    Ok(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use twomode::evolve::{SimConfig, Simulation};
    use twomode::trap::TrapSpec;

    fn state() -> (Grid, SimState) {
        let cfg = SimConfig::new(4, 0.1, 0.05, Grid::line(16, 5.0).unwrap(), TrapSpec::harmonic(1.0), 0.1);
        let sim = Simulation::new(cfg.clone()).unwrap();
        (cfg.grid, sim.state().clone())
    }

    #[test]
    fn headers_name_every_column() {
        assert_eq!(timeseries_header(), "t,N2,E,tr_mu,inner_iterations,norm_residual\n");
        assert_eq!(amplitudes_header(4), "t,p_-2,p_-1,p_0,p_1,p_2\n");
    }

    #[test]
    fn rows_round_trip_exactly() {
        let (_, s) = state();
        let (ts, amp) = rows(&s).unwrap();
        let fields: Vec<f64> = ts.trim().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(fields[0], s.t);
        assert_eq!(fields[2], s.energy);
        let p: Vec<f64> = amp.trim().split(',').skip(1).map(|x| x.parse().unwrap()).collect();
        assert_eq!(p, s.amplitudes.probabilities());
    }

    #[test]
    fn snapshot_layout_is_interleaved_little_endian() {
        let (grid, s) = state();
        let dir = tempfile::tempdir().unwrap();
        write_snapshot(dir.path(), &grid, &s, true).unwrap();
        let bytes = fs::read(dir.path().join("snapshots/modes_00000000.bin")).unwrap();
        assert_eq!(bytes.len(), 2 * 16 * 16);
        let value = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        let phi = &s.modes.phi;
        assert_eq!(value(2 * 3), phi[0][3].re);
        assert_eq!(value(2 * 3 + 1), phi[0][3].im);
        assert_eq!(value(2 * (16 + 5)), phi[1][5].re);
        let header = fs::read_to_string(dir.path().join("snapshots/modes_00000000.txt")).unwrap();
        assert!(header.contains("shape 2 1 1 16"));
        let g = fs::read(dir.path().join("snapshots/g1_00000000.bin")).unwrap();
        assert_eq!(g.len(), 16 * 16 * 16);
    }
}
