use num_complex::Complex64 as C64;
use proptest::prelude::*;

use twomode::amplitudes::AmplitudeVector;
use twomode::densities::{assemble_matrices, ModePair};
use twomode::evolve::{continue_run, Integrator, SimConfig, SimState, Simulation};
use twomode::gpe::{coupling_weights, solve_modes, ModeProblem, SolveOptions};
use twomode::grid::Grid;
use twomode::linalg::{hermitian_eigen, lowdin};
use twomode::observables::{density, g1, n2};
use twomode::spin_basis::FragBasis;
use twomode::trap::{lowest_modes, potential_on, Profile, RampShape, TrapSpec};

fn amplitudes(max_n: usize) -> impl Strategy<Value = AmplitudeVector> {
    (1..=max_n / 2).prop_flat_map(|half| {
        let n = 2 * half;
        prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n + 1)
            .prop_filter("nonzero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
            .prop_map(move |v| {
                let basis = FragBasis::new(n).unwrap();
                AmplitudeVector::normalized(basis, v.into_iter().map(|(a, b)| C64::new(a, b)).collect(), 0.0).unwrap()
            })
    })
}

fn random_modes(grid: &Grid, c: &[f64]) -> ModePair {
    let mut pair = vec![
        grid.sample_complex(|r| C64::from_polar((-(r[2] - c[0]).powi(2) / (0.5 + c[1].abs())).exp(), c[2] * r[2])),
        grid.sample_complex(|r| C64::from_polar((r[2] - c[3]) * (-(r[2] - c[4]).powi(2)).exp(), c[5] * r[2])),
    ];
    lowdin(grid, &mut pair).unwrap();
    ModePair::stationary([pair[0].clone(), pair[1].clone()], 0.0)
}

proptest! {
    #[test]
    fn mode_two_occupation_is_bounded(b in amplitudes(30)) {
        let v = n2(&b);
        prop_assert!(v >= -1e-12 && v <= b.n() as f64 + 1e-12);
    }

    #[test]
    fn weights_are_hermitian(b in amplitudes(20)) {
        let w = coupling_weights(&b);
        prop_assert!(w.hermiticity_error() < 1e-12);
        prop_assert!((w.trace() - b.n() as f64).abs() < 1e-10);
    }

    #[test]
    fn correlation_is_hermitian_with_trace_n(b in amplitudes(12), c in prop::collection::vec(-1.0..1.0f64, 6)) {
        let grid = Grid::line(48, 6.0).unwrap();
        let modes = random_modes(&grid, &c);
        let field = g1(&grid, &b, &modes).unwrap();
        prop_assert!(field.hermiticity_error() < 1e-12);
        prop_assert!((field.trace(&grid) - b.n() as f64).abs() < 1e-9);
        prop_assert!(field.warnings.is_empty());
    }

    #[test]
    fn density_is_nonnegative(b in amplitudes(12), c in prop::collection::vec(-1.0..1.0f64, 6)) {
        let grid = Grid::line(64, 6.0).unwrap();
        let modes = random_modes(&grid, &c);
        prop_assert!(density(&grid, &b, &modes).unwrap().iter().all(|&n| n >= -1e-10));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn chemical_potential_is_hermitian(b in amplitudes(8), g in 0.0..0.5f64) {
        let grid = Grid::line(64, 7.0).unwrap();
        let v = potential_on(&TrapSpec::harmonic(1.0), &grid, 0.0);
        let m = lowest_modes(&grid, &v, 2).unwrap();
        let seed = [m.modes[0].clone(), m.modes[1].clone()];
        let problem = ModeProblem { grid: &grid, potential: &v, g, time: 0.0 };
        let sol = solve_modes(&problem, &coupling_weights(&b), &seed, &SolveOptions::default()).unwrap();
        prop_assert!(sol.mu.hermiticity_error() < 1e-8 * (1.0 + sol.mu.mu[0][0].norm()));
    }
}

/// Self-consistent two-mode ground state at `t = 0`: alternately the
/// lowest eigenvector of the amplitude Hamiltonian and the modes it implies.
fn ground_state(cfg: &SimConfig) -> SimState {
    let mut st = Simulation::new(cfg.clone()).unwrap().state().clone();
    let v = potential_on(&cfg.trap, &cfg.grid, 0.0);
    let basis = st.amplitudes.basis();
    let problem = ModeProblem { grid: &cfg.grid, potential: &v, g: cfg.g, time: 0.0 };
    for _ in 0..40 {
        let still = ModePair::stationary(st.modes.phi.clone(), 0.0);
        let h = assemble_matrices(&cfg.grid, &basis, &still, &v, cfg.g, cfg.scheme).unwrap().h.to_dense();
        let (vals, vecs) = hermitian_eigen(&h);
        let low = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        st.amplitudes = AmplitudeVector::normalized(basis, vecs.column(low).iter().cloned().collect(), 0.0).unwrap();
        let sol = solve_modes(&problem, &coupling_weights(&st.amplitudes), &st.modes.phi, &cfg.solve).unwrap();
        st.modes = ModePair::stationary(sol.phi, 0.0);
        st.mu = sol.mu;
        st.energy = sol.energy;
    }
    st
}

fn split_n2(duration: f64, g: f64) -> f64 {
    let mut trap = TrapSpec::harmonic(1.0);
    trap.barrier = Profile::ramped(3.0, RampShape::SineSquared);
    trap.barrier_width = 0.5;
    trap.duration = duration;
    let mut cfg = SimConfig::new(8, duration, 0.02, Grid::line(128, 8.0).unwrap(), trap, g);
    // Forward Euler amplifies rounding over thousands of steps.
    cfg.integrator = Integrator::Rk4;
    let start = ground_state(&cfg);
    let mut sim = Simulation::from_state(cfg, start).unwrap();
    n2(&continue_run(&mut sim, &mut |_: &SimState| Ok(())).unwrap().amplitudes)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    /// From the ground state, slower splitting approaches the adiabatic
    /// limit: quadrupling the ramp time moves N2 less than doubling it did.
    #[test]
    fn slower_splitting_converges(g in 0.05..0.15f64) {
        let [a, b, c] = [32.0, 64.0, 128.0].map(|d| split_n2(d, g));
        prop_assert!((c - b).abs() < (b - a).abs(), "N2 = {a}, {b}, {c}");
    }
}
