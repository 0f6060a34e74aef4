//! Physical constants and conversion to oscillator units.
//!
//! Internally lengths are measured in `a0 = sqrt(hbar / m w0)`, energies in
//! `hbar w0` and times in `1 / w0`, so `hbar = m = w0 = 1`.

use std::f64::consts::PI;

pub const HBAR: f64 = 1.054_571_817e-34;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of a rubidium-87 atom in kg.
pub const RB87_MASS: f64 = 86.909_180_527 * ATOMIC_MASS_UNIT;

/// SI description of the trapped species and the axial trap frequency that
/// sets the unit system.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Species {
    /// Boson mass in kg.
    pub mass: f64,
    /// Axial trap angular frequency `w0` in rad/s.
    pub omega0: f64,
    /// s-wave scattering length in m.
    pub scattering_length: f64,
}

impl Species {
    pub fn rb87(axial_frequency_hz: f64, scattering_length: f64) -> Self {
        Self { mass: RB87_MASS, omega0: 2.0 * PI * axial_frequency_hz, scattering_length }
    }

    /// Oscillator length `a0` in m.
    pub fn oscillator_length(&self) -> f64 {
        (HBAR / (self.mass * self.omega0)).sqrt()
    }

    /// `hbar w0` in J.
    pub fn energy_unit(&self) -> f64 {
        HBAR * self.omega0
    }

    /// Scattering length in units of `a0`.
    pub fn scattering_length_osc(&self) -> f64 {
        self.scattering_length / self.oscillator_length()
    }

    /// Three-dimensional contact coupling `g = 4 pi hbar^2 a_s / m` in
    /// oscillator units (`hbar w0 a0^3`).
    pub fn coupling_3d(&self) -> f64 {
        4.0 * PI * self.scattering_length_osc()
    }

    pub fn length_to_osc(&self, metres: f64) -> f64 {
        metres / self.oscillator_length()
    }

    pub fn time_to_osc(&self, seconds: f64) -> f64 {
        seconds * self.omega0
    }

    /// Energy given as a frequency `E/h` in Hz, converted to `hbar w0`.
    pub fn hz_to_osc(&self, hz: f64) -> f64 {
        2.0 * PI * hz / self.omega0
    }
}

/// Contact coupling reduced onto a grid whose collapsed axes are frozen in
/// their harmonic ground state. Each collapsed axis with frequency ratio
/// `w/w0` contributes a factor `1 / (sqrt(2 pi) a)` with `a = sqrt(w0/w)`;
/// two collapsed axes give `g / (2 pi a_perp^2)`.
pub fn reduced_coupling(g3d: f64, collapsed_axes: usize, omega_perp: f64) -> f64 {
    let a_perp = (1.0 / omega_perp).sqrt();
    g3d / ((2.0 * PI).sqrt() * a_perp).powi(collapsed_axes as i32)
}
