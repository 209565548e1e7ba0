//! Adaptive quadrature with an embedded Gauss 7/15 error estimate:
//! panels whose low- and high-order estimates disagree get bisected
//! until the accumulated error bound meets the requested tolerance.

use std::sync::OnceLock;

use crate::{Error, Result};

/// Legendre nodes and weights on [-1, 1] by Newton iteration.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess for the i-th root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_and_derivative(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 2..=n {
        let kf = k as f64;
        let next = ((2.0 * kf - 1.0) * x * p - (kf - 1.0) * p_prev) / kf;
        p_prev = p;
        p = next;
    }
    let dp = n as f64 * (x * p - p_prev) / (x * x - 1.0);
    (p, dp)
}

fn rules() -> &'static ((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>)) {
    static RULES: OnceLock<((Vec<f64>, Vec<f64>), (Vec<f64>, Vec<f64>))> = OnceLock::new();
    RULES.get_or_init(|| (gauss_legendre(7), gauss_legendre(15)))
}

fn panel_1d(f: &dyn Fn(&[f64]) -> f64, a: f64, b: f64) -> (f64, f64) {
    let ((n7, w7), (n15, w15)) = rules();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let eval = |nodes: &[f64], weights: &[f64]| {
        nodes
            .iter()
            .zip(weights)
            .map(|(&x, &w)| w * f(&[mid + half * x]))
            .sum::<f64>()
            * half
    };
    let lo = eval(n7, w7);
    let hi = eval(n15, w15);
    (hi, (hi - lo).abs())
}

fn panel_2d(f: &dyn Fn(&[f64]) -> f64, ax: f64, bx: f64, ay: f64, by: f64) -> (f64, f64) {
    let ((n7, w7), (n15, w15)) = rules();
    let (mx, hx) = (0.5 * (ax + bx), 0.5 * (bx - ax));
    let (my, hy) = (0.5 * (ay + by), 0.5 * (by - ay));
    let eval = |nodes: &[f64], weights: &[f64]| {
        let mut acc = 0.0;
        for (i, &x) in nodes.iter().enumerate() {
            let px = mx + hx * x;
            let mut row = 0.0;
            for (j, &y) in nodes.iter().enumerate() {
                row += weights[j] * f(&[px, my + hy * y]);
            }
            acc += weights[i] * row;
        }
        acc * hx * hy
    };
    let lo = eval(n7, w7);
    let hi = eval(n15, w15);
    (hi, (hi - lo).abs())
}

/// Integrates `f` over the axis-aligned box [lo, hi] (dimension 1 or 2)
/// to the given absolute tolerance. Errors if refinement cannot reach it.
pub fn integrate_adaptive(
    f: &dyn Fn(&[f64]) -> f64,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
) -> Result<f64> {
    assert_eq!(lo.len(), hi.len());
    match lo.len() {
        1 => adapt_1d(f, lo[0], hi[0], tol),
        2 => adapt_2d(f, lo[0], hi[0], lo[1], hi[1], tol),
        d => Err(Error::invalid(format!(
            "quadrature supports dimension 1 or 2, got {d}"
        ))),
    }
}

const MAX_PANELS: usize = 200_000;

fn adapt_1d(f: &dyn Fn(&[f64]) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    let total_len = b - a;
    let mut stack = vec![(a, b)];
    let mut integral = 0.0;
    let mut err_acc = 0.0;
    let mut panels = 0;
    while let Some((pa, pb)) = stack.pop() {
        panels += 1;
        let (val, err) = panel_1d(f, pa, pb);
        let share = tol * (pb - pa) / total_len;
        if err <= share || (pb - pa) < 1e-12 * total_len || panels > MAX_PANELS {
            integral += val;
            err_acc += err;
        } else {
            let mid = 0.5 * (pa + pb);
            stack.push((pa, mid));
            stack.push((mid, pb));
        }
    }
    if err_acc > tol {
        return Err(Error::QuadratureTolerance {
            requested: tol,
            achieved: err_acc,
        });
    }
    Ok(integral)
}

fn adapt_2d(
    f: &dyn Fn(&[f64]) -> f64,
    ax: f64,
    bx: f64,
    ay: f64,
    by: f64,
    tol: f64,
) -> Result<f64> {
    let total_area = (bx - ax) * (by - ay);
    let mut stack = vec![(ax, bx, ay, by)];
    let mut integral = 0.0;
    let mut err_acc = 0.0;
    let mut panels = 0;
    while let Some((pax, pbx, pay, pby)) = stack.pop() {
        panels += 1;
        let (val, err) = panel_2d(f, pax, pbx, pay, pby);
        let area = (pbx - pax) * (pby - pay);
        let share = tol * area / total_area;
        if err <= share || area < 1e-12 * total_area || panels > MAX_PANELS {
            integral += val;
            err_acc += err;
        } else {
            let mx = 0.5 * (pax + pbx);
            let my = 0.5 * (pay + pby);
            stack.push((pax, mx, pay, my));
            stack.push((mx, pbx, pay, my));
            stack.push((pax, mx, my, pby));
            stack.push((mx, pbx, my, pby));
        }
    }
    if err_acc > tol {
        return Err(Error::QuadratureTolerance {
            requested: tol,
            achieved: err_acc,
        });
    }
    Ok(integral)
}
