//! Finite-difference gradient checking.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::tape::{gaussian_kl, gaussian_log_density, reparam_sample, Tape, Var};
use crate::diffcore::tensor::Tensor;

/// Central finite differences of `f` at `x` with the given step.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = point[i];
        point[i] = orig + step;
        let up = f(&point);
        point[i] = orig - step;
        let down = f(&point);
        point[i] = orig;
        grad[i] = (up - down) / (2.0 * step);
    }
    grad
}

/// Largest elementwise relative error between two gradients.
///
/// The denominator is floored at 1.0 so near-zero entries compare
/// absolutely instead of amplifying finite-difference noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Result of checking one primitive against finite differences.
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

type Builder = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;

struct Case {
    name: &'static str,
    /// (rows, cols, low, high) per differentiable input.
    inputs: Vec<(usize, usize, f64, f64)>,
    build: Builder,
}

impl Case {
    fn lift<'t>(&self, tape: &'t Tape, flat: &[f64]) -> (Vec<Tensor>, Vec<Var<'t>>) {
        let mut tensors = Vec::new();
        let mut at = 0;
        for &(r, c, _, _) in &self.inputs {
            let n = r * c;
            tensors.push(Tensor::new(vec![r, c], flat[at..at + n].to_vec()).with_grad());
            at += n;
        }
        let vars = tensors.iter().map(|t| tape.leaf(t)).collect();
        (tensors, vars)
    }

    fn value(&self, flat: &[f64]) -> f64 {
        let tape = Tape::new();
        let (_tensors, vars) = self.lift(&tape, flat);
        (self.build)(&tape, &vars).scalar_value()
    }

    fn gradient(&self, flat: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let (tensors, vars) = self.lift(&tape, flat);
        let loss = (self.build)(&tape, &vars);
        let grads = tape.backward(loss).expect("scalar loss");
        let mut out = Vec::with_capacity(flat.len());
        for t in &tensors {
            match grads.get(t) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(t.numel())),
            }
        }
        out
    }
}

/// Checks every tape primitive (and the Gaussian composites) against
/// central finite differences at `points` seeded random points, returning
/// the worst relative error per primitive.
pub fn check_primitives(seed: u64, points: usize) -> Vec<CheckReport> {
    primitive_cases()
        .into_iter()
        .map(|case| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            for _ in 0..points {
                let mut flat = Vec::new();
                for &(r, c, lo, hi) in &case.inputs {
                    for _ in 0..r * c {
                        flat.push(rng.gen_range(lo..hi));
                    }
                }
                let analytic = case.gradient(&flat);
                let mut f = |x: &[f64]| case.value(x);
                let numeric = central_difference(&mut f, &flat, 1e-5);
                worst = worst.max(max_relative_error(&analytic, &numeric));
            }
            CheckReport {
                name: case.name,
                max_rel_err: worst,
            }
        })
        .collect()
}

/// Mixes a [rows, cols] output into a scalar with fixed pseudo-random
/// weights so every output element influences the loss differently.
fn project<'t>(tape: &'t Tape, v: Var<'t>) -> Var<'t> {
    let n = v.rows() * v.cols();
    let weights: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 / 8.5 - 1.0).collect();
    let w = tape.constant(v.rows(), v.cols(), weights);
    v.mul(w).sum_all()
}

fn primitive_cases() -> Vec<Case> {
    fn case(
        name: &'static str,
        inputs: Vec<(usize, usize, f64, f64)>,
        build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t> + 'static,
    ) -> Case {
        Case {
            name,
            inputs,
            build: Box::new(build),
        }
    }

    let sym = (-2.0, 2.0);
    let pos = (0.3, 2.5);

    vec![
        case("matmul", vec![(2, 3, sym.0, sym.1), (3, 4, sym.0, sym.1)], |t, v| {
            project(t, v[0].matmul(v[1]))
        }),
        case("add", vec![(2, 3, sym.0, sym.1), (2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].add(v[1]))
        }),
        case("sub", vec![(2, 3, sym.0, sym.1), (2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].sub(v[1]))
        }),
        case("mul", vec![(2, 3, sym.0, sym.1), (2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].mul(v[1]))
        }),
        case("div", vec![(2, 3, sym.0, sym.1), (2, 3, pos.0, pos.1)], |t, v| {
            project(t, v[0].div(v[1]))
        }),
        case("neg", vec![(2, 3, sym.0, sym.1)], |t, v| project(t, v[0].neg())),
        case("mul_scalar", vec![(2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].mul_scalar(1.7))
        }),
        case("add_scalar", vec![(2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].add_scalar(-0.4))
        }),
        // Keep sample points away from the clamp kink at 0.5.
        case("max_scalar", vec![(2, 3, 0.7, 2.0)], |t, v| {
            project(t, v[0].max_scalar(0.5))
        }),
        case("max_scalar_below", vec![(2, 3, -2.0, 0.3)], |t, v| {
            project(t, v[0].max_scalar(0.5))
        }),
        case("square", vec![(2, 3, sym.0, sym.1)], |t, v| project(t, v[0].square())),
        case("sqrt", vec![(2, 3, 0.2, 3.0)], |t, v| project(t, v[0].sqrt())),
        case("tanh", vec![(2, 3, sym.0, sym.1)], |t, v| project(t, v[0].tanh())),
        case("sigmoid", vec![(2, 3, sym.0, sym.1)], |t, v| project(t, v[0].sigmoid())),
        // ELU has a gradient kink at 0; sample away from it on both sides.
        case("elu_pos", vec![(2, 3, 0.1, 2.0)], |t, v| project(t, v[0].elu())),
        case("elu_neg", vec![(2, 3, -2.0, -0.1)], |t, v| project(t, v[0].elu())),
        case("softplus", vec![(2, 3, sym.0, sym.1)], |t, v| {
            project(t, v[0].softplus())
        }),
        case("exp", vec![(2, 3, sym.0, sym.1)], |t, v| project(t, v[0].exp())),
        case("log", vec![(2, 3, 0.2, 3.0)], |t, v| project(t, v[0].log())),
        case("sum_all", vec![(2, 3, sym.0, sym.1)], |_t, v| {
            v[0].sum_all().square().mul_scalar(0.5)
        }),
        case("mean_all", vec![(2, 3, sym.0, sym.1)], |_t, v| {
            v[0].mean_all().square()
        }),
        case("sum_cols", vec![(3, 4, sym.0, sym.1)], |t, v| {
            project(t, v[0].sum_cols())
        }),
        case("add_row", vec![(3, 4, sym.0, sym.1), (1, 4, sym.0, sym.1)], |t, v| {
            project(t, v[0].add_row(v[1]))
        }),
        case(
            "concat_cols",
            vec![(3, 2, sym.0, sym.1), (3, 4, sym.0, sym.1)],
            |t, v| project(t, v[0].concat_cols(v[1])),
        ),
        case("slice_cols", vec![(3, 5, sym.0, sym.1)], |t, v| {
            project(t, v[0].slice_cols(1, 3))
        }),
        case(
            "gaussian_log_density",
            vec![
                (3, 4, sym.0, sym.1),
                (3, 4, sym.0, sym.1),
                (3, 4, 0.3, 1.8),
            ],
            |t, v| project(t, gaussian_log_density(v[0], v[1], v[2])),
        ),
        case(
            "gaussian_kl",
            vec![
                (3, 4, sym.0, sym.1),
                (3, 4, 0.3, 1.8),
                (3, 4, sym.0, sym.1),
                (3, 4, 0.3, 1.8),
            ],
            |t, v| project(t, gaussian_kl(v[0], v[1], v[2], v[3])),
        ),
        case(
            "reparam_sample",
            vec![(3, 4, sym.0, sym.1), (3, 4, 0.3, 1.8)],
            |t, v| {
                let noise_vals: Vec<f64> = (0..12).map(|i| ((i * 31 + 7) % 13) as f64 / 6.5 - 1.0).collect();
                let noise = t.constant(3, 4, noise_vals);
                project(t, reparam_sample(v[0], v[1], noise))
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_matches_finite_differences() {
        for report in check_primitives(7, 20) {
            assert!(
                report.max_rel_err < 1e-4,
                "{} gradient off by {:.2e}",
                report.name,
                report.max_rel_err
            );
        }
    }

    #[test]
    fn central_difference_on_cubic() {
        let mut f = |x: &[f64]| x[0].powi(3);
        let g = central_difference(&mut f, &[2.0], 1e-5);
        assert!((g[0] - 12.0).abs() < 1e-6);
    }
}
