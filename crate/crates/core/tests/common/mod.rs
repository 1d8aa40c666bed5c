//! Reference values computed without the solver.

use std::f64::consts::PI;

/// Lane–Emden right-hand side for `u'' + (2/r) u' + u^3 = 0`.
fn lane_emden_rhs(r: f64, y: [f64; 2]) -> [f64; 2] {
    [y[1], -2.0 / r * y[1] - y[0].powi(3)]
}

fn rk4_step(r: f64, y: [f64; 2], h: f64) -> [f64; 2] {
    let add = |y: [f64; 2], k: [f64; 2], s: f64| [y[0] + s * k[0], y[1] + s * k[1]];
    let k1 = lane_emden_rhs(r, y);
    let k2 = lane_emden_rhs(r + h / 2.0, add(y, k1, h / 2.0));
    let k3 = lane_emden_rhs(r + h / 2.0, add(y, k2, h / 2.0));
    let k4 = lane_emden_rhs(r + h, add(y, k3, h));
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// First zero of the fixed-step RK4 solution with step `h`, started from the
/// series `1 - r^2/6 + r^4/40` at `r = h`. The zero inside the last step is
/// found by secant iteration on partial RK4 steps.
fn lane_emden_zero_rk4(h: f64) -> f64 {
    let mut r = h;
    let mut y = [1.0 - r * r / 6.0 + r.powi(4) / 40.0, -r / 3.0 + r.powi(3) / 10.0];
    loop {
        let y1 = rk4_step(r, y, h);
        if y1[0] <= 0.0 {
            let (mut a, mut fa) = (0.0, y[0]);
            let (mut b, mut fb) = (h, y1[0]);
            for _ in 0..60 {
                let s = b - fb * (b - a) / (fb - fa);
                let fs = rk4_step(r, y, s)[0];
                (a, fa, b, fb) = (b, fb, s, fs);
                if fs.abs() < 1e-15 || (b - a).abs() < 1e-15 {
                    break;
                }
            }
            return r + b;
        }
        r += h;
        y = y1;
    }
}

/// First zero of the Lane–Emden solution with `N = 3`, `p = 3`, `u(0) = 1`,
/// by Richardson extrapolation of two fixed-step RK4 runs.
pub fn lane_emden_first_zero() -> f64 {
    let h = 2e-3;
    let coarse = lane_emden_zero_rk4(h);
    let fine = lane_emden_zero_rk4(h / 2.0);
    fine + (fine - coarse) / 15.0
}

/// Bubble solution of `-Δu = u^3` in four dimensions with `u(0) = 1`.
pub fn bubble(r: f64) -> f64 {
    1.0 / (1.0 + r * r / 8.0)
}

/// `∫_{R^4} bubble^4`.
pub fn bubble_energy() -> f64 {
    32.0 * PI * PI / 3.0
}

#[test]
fn lane_emden_oracle_is_converged() {
    let a = lane_emden_zero_rk4(2e-3);
    let b = lane_emden_zero_rk4(1e-3);
    assert!((a - b).abs() < 1e-9);
    assert!((lane_emden_first_zero() - 6.896848619376).abs() < 1e-8);
}

#[test]
fn bubble_oracle_solves_the_equation() {
    for &r in &[0.3, 1.0, 4.0, 20.0] {
        let h = 1e-3 * r;
        let d1 = (bubble(r + h) - bubble(r - h)) / (2.0 * h);
        let d2 = (bubble(r + h) - 2.0 * bubble(r) + bubble(r - h)) / (h * h);
        let res = d2 + 3.0 / r * d1 + bubble(r).powi(3);
        assert!(res.abs() < 1e-5 * bubble(r), "residual {res} at {r}");
    }
    // substitution t = r^2/8 turns the energy into 2 pi^2 * 32 * int t/(1+t)^4
    let n = 200_000;
    let mut s = 0.0;
    for i in 0..n {
        let x = (i as f64 + 0.5) / n as f64;
        let t = x / (1.0 - x);
        s += t / (1.0 + t).powi(4) / (1.0 - x).powi(2) / n as f64;
    }
    assert!((2.0 * PI * PI * 32.0 * s - bubble_energy()).abs() < 1e-6);
}
