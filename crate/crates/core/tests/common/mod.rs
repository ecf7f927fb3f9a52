//! Independent reference computations shared by the integration tests.
//! None of these go through the library's recurrences or integrator.

#![allow(dead_code)]

use num_complex::Complex64;
use std::f64::consts::PI;

/// `phi_n(x)` from the physicists' Hermite polynomial, `H_{n+1} = 2x H_n - 2n H_{n-1}`,
/// normalized explicitly by `(2^n n! sqrt(pi))^{-1/2}`.
pub fn hermite_phi(n: usize, x: f64) -> f64 {
    let mut h_prev = 1.0;
    let mut h = 2.0 * x;
    if n == 0 {
        h = 1.0;
    }
    for k in 1..n {
        let next = 2.0 * x * h - 2.0 * k as f64 * h_prev;
        h_prev = h;
        h = next;
    }
    let mut log_norm = 0.5 * PI.ln();
    for k in 1..=n {
        log_norm += (2.0 * k as f64).ln();
    }
    h * (-0.5 * x * x - 0.5 * log_norm).exp()
}

/// `psi` summed term by term with `e^{-i E t}` for `E = m + n + 1`.
pub fn psi_oracle(phases: &[Vec<f64>], q1: f64, q2: f64, t: f64) -> Complex64 {
    let k = phases.len();
    let mut sum = Complex64::new(0.0, 0.0);
    for (m, row) in phases.iter().enumerate() {
        for (n, &theta) in row.iter().enumerate() {
            let energy = (m + n + 1) as f64;
            sum += Complex64::from_polar(1.0, theta - energy * t) * hermite_phi(m, q1) * hermite_phi(n, q2);
        }
    }
    sum / ((k * k) as f64).sqrt()
}

pub fn rho_oracle(phases: &[Vec<f64>], q1: f64, q2: f64, t: f64) -> f64 {
    psi_oracle(phases, q1, q2, t).norm_sqr()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Mean of `f` over the square `[a1, a1 + side] x [a2, a2 + side]`.
pub fn cell_mean(f: impl Fn(f64, f64) -> f64, a1: f64, a2: f64, side: f64, rule: &[(f64, f64)]) -> f64 {
    let half = 0.5 * side;
    let mut acc = 0.0;
    for &(x1, w1) in rule {
        for &(x2, w2) in rule {
            acc += w1 * w2 * f(a1 + half * (1.0 + x1), a2 + half * (1.0 + x2));
        }
    }
    acc / 4.0
}

/// Coarse-grained H-function with cell means from Gauss-Legendre quadrature:
/// `sum rho_bar ln(rho_bar / rho_bar_QT) * side^2` over the 16 x 16 cells of the
/// `[-5, 5]^2` box.
pub fn hbar_oracle(rho: impl Fn(f64, f64) -> f64, rho_qt: impl Fn(f64, f64) -> f64, nodes: usize) -> f64 {
    let rule = gauss_legendre(nodes);
    let cells = 16;
    let side = 10.0 / cells as f64;
    let mut total = 0.0;
    for i1 in 0..cells {
        for i2 in 0..cells {
            let a1 = -5.0 + i1 as f64 * side;
            let a2 = -5.0 + i2 as f64 * side;
            let r = cell_mean(&rho, a1, a2, side, &rule);
            let q = cell_mean(&rho_qt, a1, a2, side, &rule);
            if r > 0.0 {
                total += r * (r / q).ln() * side * side;
            }
        }
    }
    total
}

/// Trapezoid rule for `int |psi|^2` over `[-l, l]^2` with `n` intervals per axis.
pub fn trapezoid_norm(rho: impl Fn(f64, f64) -> f64, l: f64, n: usize) -> f64 {
    let h = 2.0 * l / n as f64;
    let mut acc = 0.0;
    for i in 0..=n {
        let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
        for j in 0..=n {
            let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
            acc += wi * wj * rho(-l + i as f64 * h, -l + j as f64 * h);
        }
    }
    acc * h * h
}

/// `Im(grad psi / psi)` by fourth-order central differences of the oracle.
pub fn fd_velocity(phases: &[Vec<f64>], q1: f64, q2: f64, t: f64, h: f64) -> (f64, f64) {
    let psi = psi_oracle(phases, q1, q2, t);
    let d = |f: &dyn Fn(f64) -> Complex64| (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
    let d1 = d(&|s| psi_oracle(phases, q1 + s, q2, t));
    let d2 = d(&|s| psi_oracle(phases, q1, q2 + s, t));
    ((d1 / psi).im, (d2 / psi).im)
}

/// Classical fixed-step RK4 for `dq/dt = v(q, t)`.
pub fn rk4_fixed(
    v: impl Fn(f64, f64, f64) -> (f64, f64),
    start: (f64, f64),
    t0: f64,
    t1: f64,
    steps: usize,
) -> (f64, f64) {
    let h = (t1 - t0) / steps as f64;
    let (mut x, mut y) = start;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = v(x, y, t);
        let k2 = v(x + 0.5 * h * k1.0, y + 0.5 * h * k1.1, t + 0.5 * h);
        let k3 = v(x + 0.5 * h * k2.0, y + 0.5 * h * k2.1, t + 0.5 * h);
        let k4 = v(x + h * k3.0, y + h * k3.1, t + h);
        x += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        y += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (x, y)
}

pub fn reference_phases() -> Vec<Vec<f64>> {
    vec![vec![0.5442, 2.3099], vec![5.6703, 4.5333]]
}

pub fn alternate_phases() -> Vec<Vec<f64>> {
    vec![vec![0.0, 2.0865], vec![6.2782, 0.2582]]
}
