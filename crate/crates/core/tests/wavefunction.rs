mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relax::wavefunction::{eigenfunction, eigenfunction_derivative, Point2, SuperpositionSpec};
use relax::{Point, Superposition, WaveError};
use std::f64::consts::{PI, TAU};

#[test]
fn phi2_matches_closed_form() {
    // phi_2(x) = pi^{-1/4} 8^{-1/2} (4x^2 - 2) e^{-x^2/2}
    let x: f64 = 1.3;
    let exact = (4.0 * x * x - 2.0) * (-0.5 * x * x).exp() / (8.0 * PI.sqrt()).sqrt();
    let got = eigenfunction(2, x).unwrap();
    assert!((got - exact).abs() < 1e-14, "{got} vs {exact}");
}

#[test]
fn eigenfunctions_match_hermite_oracle() {
    for n in 0..=25 {
        for i in 0..=40 {
            let x = -6.0 + 0.3 * i as f64;
            let got = eigenfunction(n, x).unwrap();
            let want = hermite_phi(n, x);
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "n={n} x={x}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn derivative_matches_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-4;
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-5.0..5.0);
        for m in 0..=25 {
            let fd = (-eigenfunction(m, x + 2.0 * h).unwrap() + 8.0 * eigenfunction(m, x + h).unwrap()
                - 8.0 * eigenfunction(m, x - h).unwrap()
                + eigenfunction(m, x - 2.0 * h).unwrap())
                / (12.0 * h);
            let d = eigenfunction_derivative(m, x).unwrap();
            assert!((d - fd).abs() < 1e-8, "m={m} x={x}: {d} vs {fd}");
        }
    }
}

#[test]
fn order_limit_is_enforced() {
    assert!(matches!(eigenfunction(65, 0.0), Err(WaveError::OrderTooLarge { .. })));
    assert!(eigenfunction(64, 0.0).is_ok());
}

#[test]
fn psi_matches_direct_sum() {
    let spec = Superposition::reference_m4();
    let phases = reference_phases();
    let got = spec.psi(Point::new(0.5, -0.5), 1.0);
    let want = psi_oracle(&phases, 0.5, -0.5, 1.0);
    assert!((got - want).norm() < 1e-14, "{got} vs {want}");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m25 = Superposition::random(5, 42).unwrap();
    let phases25: Vec<Vec<f64>> = (0..5).map(|m| (0..5).map(|n| m25.phase(m, n)).collect()).collect();
    for _ in 0..200 {
        let (q1, q2, t) = (
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(0.0..TAU),
        );
        let got = m25.psi(Point::new(q1, q2), t);
        let want = psi_oracle(&phases25, q1, q2, t);
        assert!((got - want).norm() < 1e-12);
    }
}

#[test]
fn norm_is_one_at_several_times() {
    for spec in [
        Superposition::reference_m4(),
        Superposition::alternate_m4(),
        Superposition::random(5, 9).unwrap(),
    ] {
        for t in [0.0, 1.0, PI] {
            let norm = trapezoid_norm(|a, b| spec.rho_qt(Point::new(a, b), t), 9.0, 360);
            assert!((norm - 1.0).abs() < 1e-6, "t={t}: {norm}");
        }
    }
}

#[test]
fn psi_is_periodic() {
    let spec = Superposition::random(5, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let p = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        assert!((spec.psi(p, TAU) - spec.psi(p, 0.0)).norm() <= 1e-12);
    }
}

#[test]
fn velocity_matches_finite_difference_of_oracle() {
    let spec = Superposition::reference_m4();
    let phases = reference_phases();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    while checked < 100 {
        let (q1, q2, t) = (
            rng.gen_range(-3.5..3.5),
            rng.gen_range(-3.5..3.5),
            rng.gen_range(0.0..TAU),
        );
        if rho_oracle(&phases, q1, q2, t) <= 1e-6 {
            continue;
        }
        let (v1, v2) = spec.velocity(Point::new(q1, q2), t).unwrap();
        let (f1, f2) = fd_velocity(&phases, q1, q2, t, 1e-3);
        let err = ((v1 - f1).powi(2) + (v2 - f2).powi(2)).sqrt();
        let scale = (v1 * v1 + v2 * v2).sqrt().max(1e-3);
        assert!(err / scale <= 1e-6, "({q1},{q2},{t}): {err} / {scale}");
        checked += 1;
    }
}

#[test]
fn transposed_phases_mirror_the_dynamics() {
    let spec = Superposition::reference_m4();
    let t_phases = {
        let p = reference_phases();
        vec![vec![p[0][0], p[1][0]], vec![p[0][1], p[1][1]]]
    };
    let transposed = Superposition::new(t_phases).unwrap();
    let (v1, v2) = spec.velocity(Point::new(0.3, -1.1), 0.7).unwrap();
    let (w1, w2) = transposed.velocity(Point::new(-1.1, 0.3), 0.7).unwrap();
    assert!((v1 - w2).abs() < 1e-13 && (v2 - w1).abs() < 1e-13);
}

#[test]
fn single_precision_tracks_double() {
    let spec64 = Superposition::reference_m4();
    let spec32 = SuperpositionSpec::<f32>::new(vec![vec![0.5442, 2.3099], vec![5.6703, 4.5333]]).unwrap();
    let p64 = spec64.rho_qt(Point::new(0.4, 0.9), 2.0);
    let p32 = spec32.rho_qt(Point2::new(0.4f32, 0.9), 2.0);
    assert!((p64 - p32 as f64).abs() < 1e-5);
}

proptest! {
    #[test]
    fn norm_is_phase_independent(phases in proptest::collection::vec(0.0..TAU, 4)) {
        let spec = Superposition::new(vec![phases[..2].to_vec(), phases[2..].to_vec()]).unwrap();
        let norm = trapezoid_norm(|a, b| spec.rho_qt(Point::new(a, b), 0.3), 7.0, 140);
        prop_assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn density_is_nonnegative_and_finite(q1 in -8.0..8.0f64, q2 in -8.0..8.0f64, t in 0.0..TAU) {
        let spec = Superposition::reference_m4();
        let rho = spec.rho_qt(Point::new(q1, q2), t);
        prop_assert!(rho >= 0.0 && rho.is_finite());
    }

    #[test]
    fn velocity_is_periodic(q1 in -3.0..3.0f64, q2 in -3.0..3.0f64, t in 0.0..TAU) {
        let spec = Superposition::reference_m4();
        let p = Point::new(q1, q2);
        if let (Ok(a), Ok(b)) = (spec.velocity(p, t), spec.velocity(p, t + TAU)) {
            let scale = 1.0 + a.0.abs() + a.1.abs();
            prop_assert!((a.0 - b.0).abs() < 1e-9 * scale && (a.1 - b.1).abs() < 1e-9 * scale);
        }
    }
}
