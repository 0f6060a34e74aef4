//! Run configuration: a versioned TOML document in SI units.
//!
//! Every key that carries a physical quantity names its unit in a suffix
//! (`_hz`, `_m`, `_s`, `_k`, `_kg`). Validation walks the whole document
//! and reports every violation, not just the first.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use twomode::evolve::{Integrator, SimConfig};
use twomode::gpe::SolveOptions;
use twomode::grid::{Axis, DerivativeScheme, Grid};
use twomode::trap::{Profile, RampShape, TrapSpec};
use twomode::units::{reduced_coupling, HBAR, RB87_MASS};

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub key: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    Constant,
    SineSquared,
    Trapezoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: i64,
    pub label: String,
    pub atoms: Atoms,
    pub trap: Trap,
    pub grid: GridSpec,
    pub time: Time,
    pub solver: Solver,
    pub output: Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atoms {
    pub n: usize,
    pub mass_kg: f64,
    pub scattering_length_m: f64,
    pub temperature_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trap {
    pub axial_frequency_hz: f64,
    pub transverse_frequency_hz: f64,
    /// Pins the length unit instead of deriving it from mass and frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oscillator_length_m: Option<f64>,
    /// Peak barrier height as `V_B / h`.
    pub barrier_height_hz: f64,
    pub barrier_width_m: f64,
    pub barrier_ramp: Ramp,
    /// Full well separation `2d`; only the regime estimate uses it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub well_separation_m: Option<f64>,
    /// Peak tilt `ε / h` per metre.
    pub tilt_hz_per_m: f64,
    pub tilt_ramp: Ramp,
    pub rise_fraction: f64,
    /// Defaults to the run duration.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ramp_duration_s: Option<f64>,
}

/// Axes in `x, y, z` order; an axis with one point is collapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points: [usize; 3],
    pub half_width_m: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Time {
    pub duration_s: f64,
    pub dt_s: f64,
    pub integrator: Integrator,
    /// Oscillator units.
    pub inner_tol: f64,
    pub inner_cap: usize,
    pub derivative: DerivativeScheme,
    pub referenced_phase: bool,
    pub frozen_modes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solver {
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub directory: String,
    /// Write a CSV row every this many steps.
    pub every: usize,
    /// Mode snapshots every this many steps; 0 disables them.
    pub snapshot_every: usize,
    /// Also write `G¹` at each snapshot.
    pub emit_g1: bool,
    /// Intermediate checkpoints every this many steps; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

/// Unit system derived from a config: lengths in `a0`, times in `1/w0`,
/// energies in `ħw0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Units {
    pub a0: f64,
    pub omega0: f64,
}

impl Units {
    pub fn length(&self, metres: f64) -> f64 {
        metres / self.a0
    }

    pub fn time(&self, seconds: f64) -> f64 {
        seconds * self.omega0
    }

    /// `E/h` in Hz to `ħw0`.
    pub fn energy_hz(&self, hz: f64) -> f64 {
        2.0 * PI * hz / self.omega0
    }
}

impl RunConfig {
    pub fn units(&self) -> Units {
        let omega0 = 2.0 * PI * self.trap.axial_frequency_hz;
        let a0 = self.trap.oscillator_length_m.unwrap_or_else(|| (HBAR / (self.atoms.mass_kg * omega0)).sqrt());
        Units { a0, omega0 }
    }

    pub fn omega_perp(&self) -> f64 {
        self.trap.transverse_frequency_hz / self.trap.axial_frequency_hz
    }

    pub fn grid(&self) -> twomode::Result<Grid> {
        let u = self.units();
        let axes: Vec<Axis> = (0..3)
            .map(|i| {
                if self.grid.points[i] <= 1 {
                    Axis::collapsed()
                } else {
                    let h = u.length(self.grid.half_width_m[i]);
                    Axis::new(self.grid.points[i], -h, h)
                }
            })
            .collect();
        Grid::new([axes[0], axes[1], axes[2]])
    }

    /// Contact coupling reduced onto the configured grid.
    pub fn coupling(&self) -> f64 {
        let u = self.units();
        let collapsed = self.grid.points.iter().filter(|&&p| p <= 1).count();
        reduced_coupling(4.0 * PI * u.length(self.atoms.scattering_length_m), collapsed, self.omega_perp())
    }

    pub fn trap_spec(&self) -> TrapSpec {
        let u = self.units();
        let shape = |r: Ramp| match r {
            Ramp::Constant => RampShape::Constant,
            Ramp::SineSquared => RampShape::SineSquared,
            Ramp::Trapezoid => RampShape::Trapezoid { rise_fraction: self.trap.rise_fraction },
        };
        let mut spec = TrapSpec::harmonic(self.omega_perp());
        spec.barrier_width = u.length(self.trap.barrier_width_m);
        spec.barrier = Profile::ramped(u.energy_hz(self.trap.barrier_height_hz), shape(self.trap.barrier_ramp));
        spec.half_separation = Profile::constant(u.length(self.trap.well_separation_m.unwrap_or(0.0)) / 2.0);
        // ε z with z in a0: energy per a0 is (ε/h per metre)·a0.
        spec.tilt = Profile::ramped(u.energy_hz(self.trap.tilt_hz_per_m * u.a0), shape(self.trap.tilt_ramp));
        spec.duration = u.time(self.trap.ramp_duration_s.unwrap_or(self.time.duration_s));
        spec
    }

    pub fn sim_config(&self) -> twomode::Result<SimConfig> {
        let u = self.units();
        let mut cfg = SimConfig::new(
            self.atoms.n,
            u.time(self.time.duration_s),
            u.time(self.time.dt_s),
            self.grid()?,
            self.trap_spec(),
            self.coupling(),
        );
        // Rounding in the SI conversion must not change the step count.
        cfg.duration = cfg.dt * (self.time.duration_s / self.time.dt_s).round();
        cfg.integrator = self.time.integrator;
        cfg.inner_tol = self.time.inner_tol;
        cfg.inner_cap = self.time.inner_cap;
        cfg.output_every = self.output.every;
        cfg.scheme = self.time.derivative;
        cfg.referenced_phase = self.time.referenced_phase;
        cfg.frozen_modes = self.time.frozen_modes;
        cfg.solve = SolveOptions { tol: self.solver.tol, max_iter: self.solver.max_iter, ..SolveOptions::default() };
        Ok(cfg)
    }

    pub fn steps(&self) -> usize {
        (self.time.duration_s / self.time.dt_s).round() as usize
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses and validates a config document.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<Violation>> {
    parse_with_overrides(text, &[])
}

/// As [`parse_config`], with `KEY=VALUE` overrides applied to the document
/// first. Dotted keys address sections; values are TOML literals, and a
/// value that does not parse as one is taken as a string.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<RunConfig, Vec<Violation>> {
    let mut doc: Table = text.parse().map_err(|e: toml::de::Error| {
        vec![Violation { key: "<document>".into(), message: e.message().to_string() }]
    })?;
    let mut errors = Vec::new();
    for o in overrides {
        if let Err(v) = apply_override(&mut doc, o) {
            errors.push(v);
        }
    }
    let cfg = Reader { errors: &mut errors }.read(&doc);
    if errors.is_empty() {
        Ok(cfg.expect("no violations implies a config"))
    } else {
        Err(errors)
    }
}

pub fn apply_override(doc: &mut Table, spec: &str) -> Result<(), Violation> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Violation { key: spec.into(), message: "override must have the form KEY=VALUE".into() })?;
    let key = key.trim();
    let path: Vec<&str> = key.split('.').collect();
    if key.is_empty() || path.iter().any(|p| p.is_empty()) {
        return Err(Violation { key: key.into(), message: "override key is empty".into() });
    }
    let value = format!("v = {}", raw.trim())
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    let mut table = doc;
    for part in &path[..path.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Violation { key: key.into(), message: format!("`{part}` is not a section") })?;
    }
    table.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

struct Reader<'a> {
    errors: &'a mut Vec<Violation>,
}

const SECTIONS: [(&str, &[&str]); 6] = [
    ("atoms", &["n", "mass_kg", "scattering_length_m", "temperature_k"]),
    (
        "trap",
        &[
            "axial_frequency_hz",
            "transverse_frequency_hz",
            "oscillator_length_m",
            "barrier_height_hz",
            "barrier_width_m",
            "barrier_ramp",
            "well_separation_m",
            "tilt_hz_per_m",
            "tilt_ramp",
            "rise_fraction",
            "ramp_duration_s",
        ],
    ),
    ("grid", &["points", "half_width_m"]),
    (
        "time",
        &["duration_s", "dt_s", "integrator", "inner_tol", "inner_cap", "derivative", "referenced_phase", "frozen_modes"],
    ),
    ("solver", &["tol", "max_iter"]),
    ("output", &["directory", "every", "snapshot_every", "emit_g1", "checkpoint_every"]),
];

const UNIT_SUFFIXES: [(&str, &str); 6] =
    [("_hz_per_m", "hertz per metre"), ("_hz", "hertz"), ("_m", "metres"), ("_s", "seconds"), ("_kg", "kilograms"), ("_k", "kelvin")];

impl Reader<'_> {
    fn fail(&mut self, key: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Violation { key: key.into(), message: message.into() });
    }

    fn check_keys(&mut self, table: &Table, prefix: &str, allowed: &[&str]) {
        for key in table.keys() {
            if allowed.contains(&key.as_str()) {
                continue;
            }
            let full = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            let hint = allowed.iter().find_map(|a| {
                UNIT_SUFFIXES.iter().find_map(|(suffix, unit)| {
                    let stem = a.strip_suffix(suffix)?;
                    let bare = key.rsplit_once('_').map(|(s, _)| s).unwrap_or(key);
                    (key == stem || bare == stem).then(|| format!("unit mismatch: `{a}` is given in {unit}"))
                })
            });
            self.fail(full, hint.unwrap_or_else(|| "unknown key".into()));
        }
    }

    fn section<'t>(&mut self, doc: &'t Table, name: &str) -> Option<&'t Table> {
        match doc.get(name) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.fail(name, "must be a section");
                None
            }
        }
    }

    fn float(&mut self, t: Option<&Table>, section: &str, key: &str) -> Option<f64> {
        let path = format!("{section}.{key}");
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(other) => {
                self.fail(path, format!("expected a number, found {}", other.type_str()));
                None
            }
        }
    }

    fn int(&mut self, t: Option<&Table>, section: &str, key: &str) -> Option<i64> {
        let path = format!("{section}.{key}");
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::Integer(i)) => Some(*i),
            Some(other) => {
                self.fail(path, format!("expected an integer, found {}", other.type_str()));
                None
            }
        }
    }

    fn boolean(&mut self, t: Option<&Table>, section: &str, key: &str, default: bool) -> bool {
        match t.and_then(|t| t.get(key)) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.fail(format!("{section}.{key}"), format!("expected a boolean, found {}", other.type_str()));
                default
            }
        }
    }

    fn string(&mut self, t: Option<&Table>, section: &str, key: &str) -> Option<String> {
        match t.and_then(|t| t.get(key)) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                self.fail(format!("{section}.{key}"), format!("expected a string, found {}", other.type_str()));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, t: Option<&Table>, section: &str, key: &str, options: &[(&str, T)], default: T) -> T {
        let Some(s) = self.string(t, section, key) else { return default };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                self.fail(format!("{section}.{key}"), format!("`{s}` is not one of {}", names.join(", ")));
                default
            }
        }
    }

    fn required<T>(&mut self, v: Option<T>, path: &str, present: bool) -> Option<T> {
        if v.is_none() && !present {
            self.fail(path, "missing required key");
        }
        v
    }

    fn positive(&mut self, v: f64, path: &str) -> f64 {
        if !(v > 0.0 && v.is_finite()) {
            self.fail(path, format!("must be positive and finite, got {v}"));
        }
        v
    }

    fn non_negative(&mut self, v: f64, path: &str) -> f64 {
        if !(v >= 0.0 && v.is_finite()) {
            self.fail(path, format!("must be non-negative and finite, got {v}"));
        }
        v
    }

    fn count(&mut self, v: Option<i64>, path: &str, min: i64, default: usize) -> usize {
        match v {
            None => default,
            Some(i) if i >= min => i as usize,
            Some(i) => {
                self.fail(path, format!("must be at least {min}, got {i}"));
                default
            }
        }
    }

    /// A scalar applies to `z` alone; a 3-array gives `x, y, z`.
    fn triple<T: Copy>(&mut self, t: Option<&Table>, key: &str, scalar: impl Fn(&Value) -> Option<T>, fill: T) -> Option<[T; 3]> {
        let path = format!("grid.{key}");
        let v = t.and_then(|t| t.get(key))?;
        if let Some(x) = scalar(v) {
            return Some([fill, fill, x]);
        }
        match v.as_array().map(|a| a.iter().map(&scalar).collect::<Option<Vec<T>>>()) {
            Some(Some(items)) if items.len() == 3 => Some([items[0], items[1], items[2]]),
            _ => {
                self.fail(path, "expected a number or an array of three numbers for x, y, z");
                None
            }
        }
    }

    fn read(mut self, doc: &Table) -> Option<RunConfig> {
        let names: Vec<&str> = ["schema_version", "label"].into_iter().chain(SECTIONS.iter().map(|(n, _)| *n)).collect();
        self.check_keys(doc, "", &names);
        for (name, keys) in SECTIONS {
            if let Some(t) = self.section(doc, name) {
                self.check_keys(t, name, keys);
            }
        }

        let version = match doc.get("schema_version") {
            None => {
                self.fail("schema_version", "missing required key");
                None
            }
            Some(Value::Integer(v)) => Some(*v),
            Some(other) => {
                self.fail("schema_version", format!("expected an integer, found {}", other.type_str()));
                None
            }
        };
        if let Some(v) = version.filter(|&v| v != SCHEMA_VERSION) {
            self.fail("schema_version", format!("unsupported version {v}; this build reads {SCHEMA_VERSION}"));
        }
        let label = match doc.get("label") {
            None => "run".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                self.fail("label", format!("expected a string, found {}", other.type_str()));
                String::new()
            }
        };

        let a = self.section(doc, "atoms");
        let n_raw = self.int(a, "atoms", "n");
        let n_present = a.is_some_and(|t| t.contains_key("n"));
        let n = self.required(n_raw, "atoms.n", n_present).and_then(|n| {
            if n <= 0 || n % 2 != 0 {
                self.fail("atoms.n", format!("boson number must be even and positive, got {n}"));
                None
            } else {
                Some(n as usize)
            }
        });
        let mass_kg = self.float(a, "atoms", "mass_kg").unwrap_or(RB87_MASS);
        self.positive(mass_kg, "atoms.mass_kg");
        let scattering_length_m = self.float(a, "atoms", "scattering_length_m").unwrap_or(5.0e-9);
        self.non_negative(scattering_length_m, "atoms.scattering_length_m");
        let temperature_k = self.float(a, "atoms", "temperature_k").unwrap_or(0.0);
        self.non_negative(temperature_k, "atoms.temperature_k");

        let t = self.section(doc, "trap");
        let present = |t: Option<&Table>, k: &str| t.is_some_and(|t| t.contains_key(k));
        let axial_raw = self.float(t, "trap", "axial_frequency_hz");
        let axial = self.required(axial_raw, "trap.axial_frequency_hz", present(t, "axial_frequency_hz"));
        if let Some(f) = axial {
            self.positive(f, "trap.axial_frequency_hz");
        }
        let transverse = self.float(t, "trap", "transverse_frequency_hz").or(axial).unwrap_or(1.0);
        self.positive(transverse, "trap.transverse_frequency_hz");
        let oscillator_length_m = self.float(t, "trap", "oscillator_length_m");
        if let Some(l) = oscillator_length_m {
            self.positive(l, "trap.oscillator_length_m");
        }
        let barrier_height_hz = self.float(t, "trap", "barrier_height_hz").unwrap_or(0.0);
        self.non_negative(barrier_height_hz, "trap.barrier_height_hz");
        let barrier_width_m = self.float(t, "trap", "barrier_width_m").unwrap_or(1e-6);
        self.positive(barrier_width_m, "trap.barrier_width_m");
        let ramps = [("constant", Ramp::Constant), ("sine_squared", Ramp::SineSquared), ("trapezoid", Ramp::Trapezoid)];
        let barrier_ramp = self.choice(t, "trap", "barrier_ramp", &ramps, Ramp::SineSquared);
        let well_separation_m = self.float(t, "trap", "well_separation_m");
        if let Some(s) = well_separation_m {
            self.non_negative(s, "trap.well_separation_m");
        }
        let tilt_hz_per_m = self.float(t, "trap", "tilt_hz_per_m").unwrap_or(0.0);
        if !tilt_hz_per_m.is_finite() {
            self.fail("trap.tilt_hz_per_m", "must be finite");
        }
        let tilt_ramp = self.choice(t, "trap", "tilt_ramp", &ramps, Ramp::Constant);
        let rise_fraction = self.float(t, "trap", "rise_fraction").unwrap_or(0.25);
        if !(rise_fraction > 0.0 && rise_fraction <= 0.5) {
            self.fail("trap.rise_fraction", format!("must lie in (0, 0.5], got {rise_fraction}"));
        }
        let ramp_duration_s = self.float(t, "trap", "ramp_duration_s");
        if let Some(d) = ramp_duration_s {
            self.non_negative(d, "trap.ramp_duration_s");
        }

        let g = self.section(doc, "grid");
        let points_raw = self.triple(g, "points", |v| v.as_integer(), 1);
        let points = self.required(points_raw, "grid.points", present(g, "points")).and_then(|p| {
            if p.iter().any(|&c| c < 1) {
                self.fail("grid.points", "every axis needs at least one point");
                None
            } else if p.iter().all(|&c| c <= 1) {
                self.fail("grid.points", "at least one axis needs more than one point");
                None
            } else {
                Some(p.map(|c| c as usize))
            }
        });
        let as_float = |v: &Value| v.as_float().or_else(|| v.as_integer().map(|i| i as f64));
        let widths_raw = self.triple(g, "half_width_m", as_float, 0.0);
        let half_width_m = self.required(widths_raw, "grid.half_width_m", present(g, "half_width_m"));
        if let (Some(p), Some(w)) = (points, half_width_m) {
            for i in 0..3 {
                if p[i] > 1 && !(w[i] > 0.0 && w[i].is_finite()) {
                    self.fail("grid.half_width_m", format!("axis {} has {} points but half width {}", ["x", "y", "z"][i], p[i], w[i]));
                }
            }
        }

        let tm = self.section(doc, "time");
        let duration_raw = self.float(tm, "time", "duration_s");
        let duration_s = self.required(duration_raw, "time.duration_s", present(tm, "duration_s"));
        if let Some(d) = duration_s {
            self.non_negative(d, "time.duration_s");
        }
        let dt_raw = self.float(tm, "time", "dt_s");
        let dt_s = self.required(dt_raw, "time.dt_s", present(tm, "dt_s"));
        if let Some(dt) = dt_s {
            self.positive(dt, "time.dt_s");
        }
        if let (Some(d), Some(dt)) = (duration_s, dt_s) {
            if dt > 0.0 && d >= 0.0 {
                let steps = (d / dt).round();
                if (steps * dt - d).abs() > 1e-9 * d.max(dt) {
                    self.fail("time.duration_s", format!("{d} s is not a whole number of {dt} s steps"));
                }
            }
        }
        let integrator = self.choice(tm, "time", "integrator", &[("euler", Integrator::Euler), ("rk4", Integrator::Rk4)], Integrator::Euler);
        let inner_tol = self.float(tm, "time", "inner_tol").unwrap_or(1e-8);
        self.positive(inner_tol, "time.inner_tol");
        let inner_cap_raw = self.int(tm, "time", "inner_cap");
        let inner_cap = self.count(inner_cap_raw, "time.inner_cap", 1, 20);
        let derivative = self.choice(
            tm,
            "time",
            "derivative",
            &[("forward", DerivativeScheme::Forward), ("centered", DerivativeScheme::Centered)],
            DerivativeScheme::Forward,
        );
        let referenced_phase = self.boolean(tm, "time", "referenced_phase", true);
        let frozen_modes = self.boolean(tm, "time", "frozen_modes", false);

        let s = self.section(doc, "solver");
        let defaults = SolveOptions::default();
        let tol = self.float(s, "solver", "tol").unwrap_or(defaults.tol);
        self.positive(tol, "solver.tol");
        let max_iter_raw = self.int(s, "solver", "max_iter");
        let max_iter = self.count(max_iter_raw, "solver.max_iter", 1, defaults.max_iter);

        let o = self.section(doc, "output");
        let directory = self.string(o, "output", "directory").unwrap_or_else(|| "output".into());
        let every_raw = self.int(o, "output", "every");
        let every = self.count(every_raw, "output.every", 1, 1);
        let snapshot_raw = self.int(o, "output", "snapshot_every");
        let snapshot_every = self.count(snapshot_raw, "output.snapshot_every", 0, 0);
        let emit_g1 = self.boolean(o, "output", "emit_g1", false);
        let checkpoint_raw = self.int(o, "output", "checkpoint_every");
        let checkpoint_every = self.count(checkpoint_raw, "output.checkpoint_every", 0, 0);

        if !self.errors.is_empty() {
            return None;
        }
        Some(RunConfig {
            schema_version: SCHEMA_VERSION,
            label,
            atoms: Atoms { n: n?, mass_kg, scattering_length_m, temperature_k },
            trap: Trap {
                axial_frequency_hz: axial?,
                transverse_frequency_hz: transverse,
                oscillator_length_m,
                barrier_height_hz,
                barrier_width_m,
                barrier_ramp,
                well_separation_m,
                tilt_hz_per_m,
                tilt_ramp,
                rise_fraction,
                ramp_duration_s,
            },
            grid: GridSpec { points: points?, half_width_m: half_width_m? },
            time: Time {
                duration_s: duration_s?,
                dt_s: dt_s?,
                integrator,
                inner_tol,
                inner_cap,
                derivative,
                referenced_phase,
                frozen_modes,
            },
            solver: Solver { tol, max_iter },
            output: Output { directory, every, snapshot_every, emit_g1, checkpoint_every },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[atoms]
n = 8
[trap]
axial_frequency_hz = 58.0
[grid]
points = 64
half_width_m = 8e-6
[time]
duration_s = 0.01
dt_s = 0.001
"#;

    fn keys(errors: &[Violation]) -> Vec<&str> {
        errors.iter().map(|v| v.key.as_str()).collect()
    }

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.label, "run");
        assert_eq!(cfg.grid.points, [1, 1, 64]);
        assert_eq!(cfg.atoms.mass_kg, RB87_MASS);
        assert_eq!(cfg.trap.transverse_frequency_hz, 58.0);
        assert_eq!(cfg.time.integrator, Integrator::Euler);
        assert_eq!(cfg.time.inner_cap, 20);
        assert_eq!(cfg.output.every, 1);
        assert_eq!(cfg.steps(), 10);

        let echo = cfg.to_toml();
        assert!(echo.contains("inner_tol = 1e-8") || echo.contains("inner_tol = 0.00000001"), "{echo}");
        assert!(echo.contains("directory = \"output\""));
        assert_eq!(parse_config(&echo).unwrap(), cfg);
    }

    #[test]
    fn odd_boson_number_is_rejected() {
        let errors = parse_config(&MINIMAL.replace("n = 8", "n = 5")).unwrap_err();
        assert_eq!(keys(&errors), ["atoms.n"]);
        assert!(errors[0].message.contains("even"));
    }

    #[test]
    fn zero_step_is_rejected() {
        let errors = parse_config(&MINIMAL.replace("dt_s = 0.001", "dt_s = 0.0")).unwrap_err();
        assert_eq!(keys(&errors), ["time.dt_s"]);
    }

    #[test]
    fn every_violation_is_reported() {
        let doc = MINIMAL
            .replace("n = 8", "n = 7")
            .replace("dt_s = 0.001", "dt_s = 0")
            .replace("axial_frequency_hz = 58.0", "axial_frequency = 58.0")
            .replace("schema_version = 1", "schema_version = 1\ncolour = \"blue\"");
        let errors = parse_config(&doc).unwrap_err();
        let k = keys(&errors);
        for want in ["colour", "trap.axial_frequency", "trap.axial_frequency_hz", "atoms.n", "time.dt_s"] {
            assert!(k.contains(&want), "{want} missing from {k:?}");
        }
        let unit = errors.iter().find(|v| v.key == "trap.axial_frequency").unwrap();
        assert!(unit.message.contains("unit mismatch"), "{}", unit.message);
        let missing = errors.iter().find(|v| v.key == "trap.axial_frequency_hz").unwrap();
        assert!(missing.message.contains("missing"));
    }

    #[test]
    fn mismatched_unit_suffix_is_named() {
        let errors = parse_config(&MINIMAL.replace("dt_s = 0.001", "dt_s = 0.001\ndt_ms = 1.0")).unwrap_err();
        assert_eq!(keys(&errors), ["time.dt_ms"]);
        assert!(errors[0].message.contains("`dt_s` is given in seconds"));
    }

    #[test]
    fn fractional_step_count_is_rejected() {
        let errors = parse_config(&MINIMAL.replace("duration_s = 0.01", "duration_s = 0.0105")).unwrap_err();
        assert_eq!(keys(&errors), ["time.duration_s"]);
    }

    #[test]
    fn overrides_apply_before_validation() {
        let cfg = parse_with_overrides(
            MINIMAL,
            &["atoms.n=4".into(), "time.integrator=\"rk4\"".into(), "output.directory=runs/a".into(), "label=probe".into()],
        )
        .unwrap();
        assert_eq!(cfg.atoms.n, 4);
        assert_eq!(cfg.time.integrator, Integrator::Rk4);
        assert_eq!(cfg.output.directory, "runs/a");
        assert_eq!(cfg.label, "probe");

        let errors = parse_with_overrides(MINIMAL, &["atoms.n".into(), "atoms.n=3".into()]).unwrap_err();
        assert_eq!(keys(&errors), ["atoms.n", "atoms.n"]);
    }

    #[test]
    fn si_values_convert_to_oscillator_units() {
        let doc = MINIMAL.replace("axial_frequency_hz = 58.0", "axial_frequency_hz = 58.0\noscillator_length_m = 1e-6\nbarrier_height_hz = 580.0");
        let cfg = parse_config(&doc).unwrap();
        let u = cfg.units();
        assert_eq!(u.a0, 1e-6);
        let sim = cfg.sim_config().unwrap();
        assert!((sim.dt - 2.0 * PI * 58.0 * 1e-3).abs() < 1e-12);
        assert_eq!(sim.steps(), 10);
        assert!((sim.trap.barrier.peak - 10.0).abs() < 1e-12);
        let z = sim.grid.axes()[2];
        assert!((z.max - 8.0).abs() < 1e-12);
        // a_s = 5 nm on a line: 4π a_s / (2π a_perp²) with a_perp = a0.
        assert!((sim.g - 2.0 * 5e-3).abs() < 1e-12);
    }

    #[test]
    fn derived_length_uses_mass_and_frequency() {
        let cfg = parse_config(MINIMAL).unwrap();
        let want = (HBAR / (RB87_MASS * 2.0 * PI * 58.0)).sqrt();
        assert!((cfg.units().a0 - want).abs() < 1e-18);
        assert!((cfg.units().a0 - 1.416e-6).abs() < 1e-9);
    }
}
