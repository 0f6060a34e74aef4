use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use twomode::evolve::{memory_estimate, Simulation};
use twomode::grid::Grid;
use twomode::observables::validity_check;
use twomode::spin_basis::{max_oracle_deviation, spin_matrices};
use twomode::trap::{hubbard_estimate, Regime};
use twomode::units::reduced_coupling;

use crate::config::{apply_override, parse_with_overrides, RunConfig, Violation};
use crate::error::CliError;
use crate::output::{self, io_error, Tables};

pub fn load_config(path: &Path, overrides: &[String], output: Option<&Path>) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_error(path))?;
    let mut cfg = parse_with_overrides(&text, overrides).map_err(CliError::Config)?;
    if let Some(dir) = output {
        cfg.output.directory = dir.display().to_string();
    }
    Ok(cfg)
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_error(dir))
}

/// Steps `sim` to the end, writing rows, snapshots and checkpoints.
/// `dir` is `None` for an in-memory replay that only fills `tables`.
fn drive(sim: &mut Simulation, run: &RunConfig, tables: &mut Tables, dir: Option<&Path>, first_row: bool) -> Result<(), CliError> {
    let out = &run.output;
    let grid = sim.config().grid.clone();
    let emit = |sim: &Simulation, tables: &mut Tables, row: bool| -> Result<(), CliError> {
        let s = sim.state();
        if row {
            tables.write(s)?;
        }
        if let Some(dir) = dir {
            if out.snapshot_every > 0 && s.step.is_multiple_of(out.snapshot_every) {
                output::write_snapshot(dir, &grid, s, out.emit_g1)?;
            }
        }
        Ok(())
    };
    if first_row {
        emit(sim, tables, true)?;
    }
    while !sim.is_finished() {
        sim.step()?;
        let step = sim.state().step;
        emit(sim, tables, step.is_multiple_of(out.every) || sim.is_finished())?;
        if let Some(dir) = dir {
            if out.checkpoint_every > 0 && step.is_multiple_of(out.checkpoint_every) && !sim.is_finished() {
                output::write_checkpoint(&output::checkpoint_path(dir, Some(step)), run, sim.checkpoint())?;
            }
        }
    }
    tables.flush()?;
    if let Some(dir) = dir {
        output::write_checkpoint(&output::checkpoint_path(dir, None), run, sim.checkpoint())?;
    }
    Ok(())
}

/// Runs `sim` again into memory and compares the CSVs with what was written.
fn replay_matches(mut sim: Simulation, run: &RunConfig, dir: &Path, first_row: bool) -> Result<(), CliError> {
    #[derive(Clone, Default)]
    struct Shared(std::rc::Rc<std::cell::RefCell<Vec<u8>>>);
    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
            self.0.borrow_mut().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let (ts, amp) = (Shared::default(), Shared::default());
    ts.clone().write_all(output::timeseries_header().as_bytes()).expect("memory write");
    amp.clone().write_all(output::amplitudes_header(run.atoms.n).as_bytes()).expect("memory write");
    let mut tables = Tables { timeseries: Box::new(ts.clone()), amplitudes: Box::new(amp.clone()) };
    drive(&mut sim, run, &mut tables, None, first_row)?;
    for (name, buf) in [(output::TIMESERIES, ts), (output::AMPLITUDES, amp)] {
        let path = dir.join(name);
        let written = fs::read(&path).map_err(io_error(&path))?;
        if written != *buf.0.borrow() {
            return Err(CliError::Nondeterministic(name.into()));
        }
    }
    Ok(())
}

pub fn run(cfg: &RunConfig, seedless: bool) -> Result<PathBuf, CliError> {
    let sim_cfg = cfg.sim_config()?;
    let dir = PathBuf::from(&cfg.output.directory);
    prepare_dir(&dir)?;
    let echo = dir.join(output::EFFECTIVE_CONFIG);
    fs::write(&echo, cfg.to_toml()).map_err(io_error(&echo))?;
    log::info!("{}: {} steps of {} on {} points", cfg.label, sim_cfg.steps(), sim_cfg.dt, sim_cfg.grid.len());

    let mut sim = Simulation::new(sim_cfg.clone())?;
    let mut tables = Tables::create(&dir, cfg.atoms.n)?;
    drive(&mut sim, cfg, &mut tables, Some(&dir), true)?;
    drop(tables);
    if seedless {
        replay_matches(Simulation::new(sim_cfg)?, cfg, &dir, true)?;
    }
    Ok(dir)
}

/// Continues from a checkpoint. Only `output.*` settings may be overridden,
/// since anything else would change the trajectory being continued.
pub fn resume(checkpoint: &Path, overrides: &[String], output_dir: Option<&Path>, seedless: bool) -> Result<PathBuf, CliError> {
    let file = output::read_checkpoint(checkpoint)?;
    let mut run = file.run;
    let mut violations = Vec::new();
    let mut doc: toml::Table = toml::from_str(&run.to_toml()).expect("config echo parses");
    for o in overrides {
        let key = o.split_once('=').map(|(k, _)| k.trim()).unwrap_or(o);
        if !key.starts_with("output.") {
            violations.push(Violation { key: key.into(), message: "only output.* settings can change on resume".into() });
        } else if let Err(v) = apply_override(&mut doc, o) {
            violations.push(v);
        }
    }
    if !violations.is_empty() {
        return Err(CliError::Config(violations));
    }
    if !overrides.is_empty() {
        run = crate::config::parse_config(&toml::to_string(&doc).expect("table serializes")).map_err(CliError::Config)?;
    }
    if let Some(dir) = output_dir {
        run.output.directory = dir.display().to_string();
    }
    let dir = PathBuf::from(&run.output.directory);
    prepare_dir(&dir)?;
    let start = file.checkpoint.clone();
    log::info!("{}: resuming at step {} of {}", run.label, start.state.step, start.config.steps());

    let mut sim = Simulation::from_checkpoint(file.checkpoint)?;
    let mut tables = Tables::create(&dir, run.atoms.n)?;
    drive(&mut sim, &run, &mut tables, Some(&dir), false)?;
    drop(tables);
    if seedless {
        replay_matches(Simulation::from_checkpoint(start)?, &run, &dir, false)?;
    }
    Ok(dir)
}

pub fn regime_name(r: Regime) -> &'static str {
    match r {
        Regime::Josephson => "josephson",
        Regime::Fock => "fock",
        Regime::Crossover => "crossover",
    }
}

/// Regime, validity and memory report; nothing is simulated.
pub fn estimate(cfg: &RunConfig) -> Result<String, CliError> {
    let u = cfg.units();
    let Some(separation) = cfg.trap.well_separation_m else {
        return Err(CliError::Config(vec![Violation {
            key: "trap.well_separation_m".into(),
            message: "the regime estimate needs the well separation".into(),
        }]));
    };
    let d = u.length(separation) / 2.0;
    let barrier = u.energy_hz(cfg.trap.barrier_height_hz);
    let a_s = u.length(cfg.atoms.scattering_length_m);
    // A dedicated line through both wells at a tenth of a0.
    let half = d + 10.0;
    let line = Grid::line((2.0 * half / 0.1).ceil() as usize, half)?;
    let g_line = reduced_coupling(4.0 * std::f64::consts::PI * a_s, 2, cfg.omega_perp());
    let h = hubbard_estimate(&line, d, barrier, g_line, a_s)?;
    let validity = validity_check(cfg.atoms.n, cfg.atoms.temperature_k, u.a0, cfg.atoms.scattering_length_m, u.omega0);
    let points: usize = cfg.grid.points.iter().product();
    let memory = memory_estimate(cfg.atoms.n, points, cfg.steps() + 1);

    let mut r = String::new();
    r.push_str(&format!("label: {}\n", cfg.label));
    r.push_str(&format!("oscillator length: {:.4e} m\n", u.a0));
    r.push_str(&format!("half separation d: {d:.4} a0\n"));
    r.push_str(&format!("barrier height: {barrier:.4} hbar w0\n"));
    r.push_str(&format!("J/U closed form: {:.3e}\n", h.ratio_closed_form));
    r.push_str(&format!("regime: {}\n", regime_name(Regime::classify(h.ratio_closed_form))));
    r.push_str(&format!("J quadrature: {:.4e} hbar w0\n", h.j));
    r.push_str(&format!("U quadrature: {:.4e} hbar w0\n", h.u));
    r.push_str(&format!("J/U quadrature: {:.3e} ({})\n", h.ratio(), regime_name(Regime::classify(h.ratio()))));
    if let Some(ro) = h.ratio_orthogonalized() {
        r.push_str(&format!("J/U orthogonalized: {ro:.3e}\n"));
    }
    match (validity.n_bound, validity.n_margin) {
        (Some(b), Some(m)) => r.push_str(&format!("N bound: {b:.4e}, N/bound {m:.3e}\n")),
        _ => r.push_str("N bound: none (no scattering)\n"),
    }
    r.push_str(&format!("T bound: {:.4} nK, T/bound {:.3e}\n", validity.t_bound * 1e9, validity.t_margin));
    r.push_str(&format!("memory simultaneous: {} values\n", memory.simultaneous));
    r.push_str(&format!("memory trajectory: {} values\n", memory.trajectory));
    Ok(r)
}

/// Closed-form coefficients against the Fock-space oracle and the spin
/// algebra, for every even `N ≤ max_n`.
pub fn verify(max_n: usize) -> Result<String, CliError> {
    let mut report = String::new();
    let mut worst: f64 = 0.0;
    for n in (2..=max_n).step_by(2) {
        let oracle = max_oracle_deviation(n)?;
        let s = spin_matrices(n)?;
        let i = C64::new(0.0, 1.0);
        let comm = &s.sx * &s.sy - &s.sy * &s.sx - &s.sz * i;
        let j = n as f64 / 2.0;
        let casimir = s.s_squared() - DMatrix::<C64>::identity(n + 1, n + 1) * C64::new(j * (j + 1.0), 0.0);
        let algebra = comm.iter().chain(casimir.iter()).map(|z| z.norm()).fold(0.0, f64::max);
        report.push_str(&format!("N={n}: oracle {oracle:.2e}, spin algebra {algebra:.2e}\n"));
        worst = worst.max(oracle).max(algebra);
    }
    if worst > 1e-12 {
        return Err(CliError::Oracle(format!("largest deviation {worst:.3e} exceeds 1e-12")));
    }
    report.push_str(&format!("PASS: largest deviation {worst:.2e}\n"));
    Ok(report)
}
