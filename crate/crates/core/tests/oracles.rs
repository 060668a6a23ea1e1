mod common;

use common::*;
use dnlse::config::SimulationConfig;
use dnlse::ensemble::{run_ensemble, run_realization, EnsembleConfig};
use dnlse::model::{initial_wavepacket, make_disorder, DisorderRealization, ModelParams, WaveFunction};
use dnlse::observables::{energy, norm, second_moment};
use dnlse::propagator::{kinetic_step, potential_phase_step, Propagator, SplitScheme, StepSize};
use nalgebra::SymmetricEigen;
use proptest::prelude::*;

fn wave(amps: &[num_complex::Complex64]) -> WaveFunction {
    WaveFunction::from_amplitudes(amps.to_vec()).unwrap()
}

fn linear() -> ModelParams {
    ModelParams::new(0.0, 2.0, 4.0).unwrap()
}

fn free_ring(n: usize) -> DisorderRealization {
    make_disorder(0, n, 0.0).unwrap()
}

#[test]
fn kinetic_step_matches_dense_exponential() {
    let psi = random_state(8, 21);
    let hopping = ring_hamiltonian(&[0.0; 8]);
    for tau in [0.3, -0.3, 1.7] {
        let exact = apply(&dense_propagator(&hopping, tau), &psi);
        let spectral = kinetic_step(&wave(&psi), tau);
        assert!(max_deviation(spectral.amplitudes(), &exact) < 1e-10, "tau = {tau}");

        let disorder = free_ring(8);
        let mut prop = Propagator::new(&disorder, linear(), SplitScheme::saba2(), StepSize::new(0.1).unwrap()).unwrap();
        let mut inplace = psi.clone();
        prop.kinetic(&mut inplace, tau);
        assert!(max_deviation(&inplace, &exact) < 1e-10);
    }
}

#[test]
fn kinetic_step_on_odd_rings() {
    for n in [3, 5, 27, 31] {
        let psi = random_state(n, n as u64);
        let exact = apply(&dense_propagator(&ring_hamiltonian(&vec![0.0; n]), 0.45), &psi);
        assert!(max_deviation(kinetic_step(&wave(&psi), 0.45).amplitudes(), &exact) < 1e-10, "n = {n}");
    }
}

#[test]
fn potential_step_is_the_local_phase() {
    let n = 9;
    let psi = random_state(n, 5);
    let disorder = make_disorder(8, n, 4.0).unwrap();
    for (beta, p) in [(0.0, 2.0), (1.3, 2.0), (0.7, 0.5), (2.0, 3.0)] {
        let params = ModelParams::new(beta, p, 4.0).unwrap();
        let out = potential_phase_step(&wave(&psi), &disorder, &params, 0.37).unwrap();
        for (i, (z, w)) in psi.iter().zip(out.amplitudes()).enumerate() {
            let phase = (disorder.epsilons[i] + beta * z.norm().powf(p)) * 0.37;
            let expected = z * num_complex::Complex64::from_polar(1.0, -phase);
            assert!((w - expected).norm() < 1e-14);
        }
    }
}

fn linear_error(scheme: SplitScheme, dt: f64, t: f64) -> f64 {
    let n = 16;
    let disorder = make_disorder(1234, n, 4.0).unwrap();
    let psi0 = random_state(n, 99);
    let exact = eigen_evolve(&ring_hamiltonian(&disorder.epsilons), &psi0, t);
    let step = StepSize::new(dt).unwrap();
    let mut prop = Propagator::new(&disorder, linear(), scheme, step).unwrap();
    let mut psi = wave(&psi0);
    prop.advance(&mut psi, step.steps_to(t).unwrap()).unwrap();
    max_deviation(psi.amplitudes(), &exact)
}

#[test]
fn linear_saba2_matches_eigen_propagator_at_second_order() {
    let errs: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&dt| linear_error(SplitScheme::saba2(), dt, 10.0)).collect();
    assert!(errs[2] < 1e-3, "{errs:?}");
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "{errs:?}");
    }
    let order = (errs[0] / errs[2]).log2() / 2.0;
    assert!((1.8..=2.2).contains(&order), "order {order}");
}

#[test]
fn strang_is_second_order_and_less_accurate() {
    let strang: Vec<f64> = [0.02, 0.01].iter().map(|&dt| linear_error(SplitScheme::strang(), dt, 10.0)).collect();
    let ratio = strang[0] / strang[1];
    assert!((3.5..=4.5).contains(&ratio), "{strang:?}");
    assert!(linear_error(SplitScheme::saba2(), 0.01, 10.0) < strang[1]);
}

#[test]
fn free_lattice_follows_bessel_solution() {
    let cfg = SimulationConfig {
        beta: 0.0,
        width: 0.0,
        dt: Some(0.01),
        t_max: 10.0,
        half_width: 60,
        grid_points: 40,
        ..Default::default()
    };
    let series = run_realization(&cfg, 1).unwrap();
    let mut checked = 0;
    for r in series.records.iter().filter(|r| r.t > 0.0) {
        let oracle = free_lattice_m2(r.t, 60);
        assert!((r.m2 / oracle - 1.0).abs() < 1e-6, "t = {}: {} vs {}", r.t, r.m2, oracle);
        assert!((r.m2 / (2.0 * r.t * r.t) - 1.0).abs() < 0.01, "t = {}", r.t);
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn eigenvector_energy_is_its_eigenvalue() {
    let n = 15;
    let disorder = make_disorder(3, n, 4.0).unwrap();
    let eig = SymmetricEigen::new(ring_hamiltonian(&disorder.epsilons));
    for k in [0, 7, 14] {
        let v: Vec<_> = eig.eigenvectors.column(k).iter().map(|&x| c(x, 0.0)).collect();
        let e = energy(&wave(&v), &disorder, &linear()).unwrap();
        assert!((e - eig.eigenvalues[k]).abs() < 1e-12);

        let beta = 0.8;
        let quartic: f64 = v.iter().map(|z| z.norm_sqr().powi(2)).sum();
        let params = ModelParams::new(beta, 2.0, 4.0).unwrap();
        let e = energy(&wave(&v), &disorder, &params).unwrap();
        assert!((e - eig.eigenvalues[k] - beta * 0.5 * quartic).abs() < 1e-12);
    }
}

#[test]
fn uniform_energy_shift_is_a_global_phase() {
    let size = 81;
    let disorder = make_disorder(17, size, 4.0).unwrap();
    let mut shifted = disorder.clone();
    shifted.epsilons.iter_mut().for_each(|e| *e += 1.0);
    let params = ModelParams::new(1.0, 2.0, 4.0).unwrap();
    let psi0 = initial_wavepacket(size).unwrap();
    let step = StepSize::new(0.01).unwrap();
    let mut a = psi0.clone();
    let mut b = psi0.clone();
    Propagator::new(&disorder, params, SplitScheme::saba2(), step).unwrap().advance(&mut a, 2000).unwrap();
    Propagator::new(&shifted, params, SplitScheme::saba2(), step).unwrap().advance(&mut b, 2000).unwrap();
    assert!((second_moment(&a) - second_moment(&b)).abs() < 1e-10);
    let phase = num_complex::Complex64::from_polar(1.0, 20.0);
    let rotated: Vec<_> = b.amplitudes().iter().map(|z| z * phase).collect();
    assert!(max_deviation(a.amplitudes(), &rotated) < 1e-9);
}

#[test]
fn identical_configs_give_identical_runs() {
    let cfg = SimulationConfig {
        dt: Some(0.02),
        t_max: 50.0,
        half_width: 121,
        ..Default::default()
    };
    let a = run_realization(&cfg, 7).unwrap();
    let b = run_realization(&cfg, 7).unwrap();
    assert_eq!(a.records, b.records);
    let other = run_realization(&cfg, 8).unwrap();
    assert_ne!(a.records, other.records);
}

#[test]
fn ensemble_stderr_shrinks_as_inverse_root_of_r() {
    let sim = SimulationConfig {
        beta: 0.0,
        dt: Some(0.1),
        t_max: 1000.0,
        half_width: 187,
        grid_points: 20,
        ..Default::default()
    };
    let stderr = |r: usize, seed: u64| {
        let mut s = sim.clone();
        s.seed = seed;
        let res = run_ensemble(&EnsembleConfig::new(s, r)).unwrap();
        *res.stderr_m2.last().unwrap()
    };
    let e50 = stderr(50, 10_000);
    let e200 = stderr(200, 20_000);
    let e800 = stderr(800, 30_000);
    // each fourfold increase of R should halve the error, within 30%
    for (ratio, label) in [(e50 / e200, "50/200"), (e200 / e800, "200/800")] {
        assert!((1.4..=2.6).contains(&ratio), "{label}: {ratio}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn norm_is_conserved_for_any_nonlinearity(
        beta in 0.0f64..3.0,
        p in 0.0f64..6.0,
        seed in 0u64..1000,
        dt in 0.005f64..0.1,
    ) {
        let size = 33;
        let disorder = make_disorder(seed, size, 4.0).unwrap();
        let params = ModelParams::new(beta, p, 4.0).unwrap();
        let mut psi = wave(&random_state(size, seed + 1));
        let mut prop = Propagator::new(&disorder, params, SplitScheme::saba2(), StepSize::new(dt).unwrap()).unwrap();
        prop.advance(&mut psi, 300).unwrap();
        prop_assert!((norm(&psi) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn short_runs_reverse(beta in 0.0f64..2.0, p in 0.5f64..4.0, seed in 0u64..1000) {
        let size = 41;
        let disorder = make_disorder(seed, size, 4.0).unwrap();
        let params = ModelParams::new(beta, p, 4.0).unwrap();
        let psi = wave(&random_state(size, seed));
        let mut prop = Propagator::new(&disorder, params, SplitScheme::saba2(), StepSize::new(0.01).unwrap()).unwrap();
        let mut x = psi.clone();
        prop.advance(&mut x, 500).unwrap();
        prop.retreat(&mut x, 500).unwrap();
        prop_assert!(max_deviation(x.amplitudes(), psi.amplitudes()) < 1e-9);
    }
}
