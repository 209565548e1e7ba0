//! End-to-end checks of the differentiation core: analytic gradients vs
//! an independent finite-difference oracle, KL against numerical
//! integration, optimizer behavior, and the checkpoint format.

use plan2x::diffcore::{
    central_difference, check_primitives, flatten_values, gaussian_kl, load_params,
    max_relative_error, save_params, unflatten_values, Adam, Mlp, Tape, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matmul_shape_rule() {
    let tape = Tape::new();
    let a = tape.constant(2, 3, vec![0.0; 6]);
    let b = tape.constant(3, 4, vec![0.0; 12]);
    let c = a.matmul(b);
    assert_eq!((c.rows(), c.cols()), (2, 4));
}

#[test]
fn matmul_shape_mismatch_names_shapes() {
    let result = std::panic::catch_unwind(|| {
        let tape = Tape::new();
        let a = tape.constant(2, 3, vec![0.0; 6]);
        let b = tape.constant(4, 2, vec![0.0; 8]);
        let c = a.matmul(b);
        (c.rows(), c.cols())
    });
    let err = result.expect_err("mismatched matmul must be rejected");
    let msg = err.downcast_ref::<String>().cloned().unwrap_or_default();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "got: {msg}");
}

#[test]
fn kl_between_identical_gaussians_is_zero() {
    let tape = Tape::new();
    let mean = tape.constant(1, 3, vec![0.3, -1.0, 2.0]);
    let std = tape.constant(1, 3, vec![0.5, 1.0, 2.0]);
    let kl = gaussian_kl(mean, std, mean, std);
    assert!(kl.scalar_value().abs() < 1e-12);
}

/// Numerical integration of the KL integrand, the independent oracle for
/// the closed-form KL.
fn kl_by_quadrature(mu_q: f64, sd_q: f64, mu_p: f64, sd_p: f64) -> f64 {
    let density = |x: f64, mu: f64, sd: f64| {
        (-0.5 * ((x - mu) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    // Simpson's rule over a wide bracket.
    let (lo, hi) = (mu_q - 12.0 * sd_q.max(sd_p), mu_q + 12.0 * sd_q.max(sd_p));
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let q = density(x, mu_q, sd_q);
        if q <= 0.0 {
            0.0
        } else {
            q * (q / density(x, mu_p, sd_p)).ln()
        }
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn kl_standard_vs_wide_matches_integration_oracle() {
    // KL(N(0,1) || N(0, sigma^2=4)).
    let oracle = kl_by_quadrature(0.0, 1.0, 0.0, 2.0);
    assert!((oracle - 0.31815).abs() < 1e-4, "oracle said {oracle}");

    let tape = Tape::new();
    let mq = tape.constant(1, 1, vec![0.0]);
    let sq = tape.constant(1, 1, vec![1.0]);
    let mp = tape.constant(1, 1, vec![0.0]);
    let sp = tape.constant(1, 1, vec![2.0]);
    let kl = gaussian_kl(mq, sq, mp, sp).scalar_value();
    assert!((kl - oracle).abs() < 1e-6);
}

#[test]
fn derivative_of_square_at_three() {
    let x = Tensor::scalar(3.0).with_grad();
    let tape = Tape::new();
    let loss = tape.leaf(&x).square();
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(&x).unwrap().data(), &[6.0]);
}

#[test]
fn stop_gradient_severs_the_edge() {
    let x = Tensor::scalar(3.0).with_grad();
    let tape = Tape::new();
    let vx = tape.leaf(&x);
    let loss = vx.stop_gradient().mul(vx);
    assert_eq!(loss.scalar_value(), 9.0);
    let grads = tape.backward(loss).unwrap();
    // Only the outer factor contributes: d/dx sg(x)*x = sg(x) = 3.
    assert_eq!(grads.get(&x).unwrap().data(), &[3.0]);
}

#[test]
fn two_layer_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut net = Mlp::new(&[5, 8, 3], &mut rng);
    let input = Tensor::new(vec![2, 5], (0..10).map(|i| (i as f64) * 0.17 - 0.8).collect());
    let target = Tensor::new(vec![2, 3], (0..6).map(|i| (i as f64) * 0.3 - 0.7).collect());

    let flat = flatten_values(&net.params());
    let analytic = {
        let tape = Tape::new();
        let out = net.forward(&tape, tape.leaf(&input)).tanh();
        let loss = out.sub(tape.leaf(&target)).square().mean_all();
        let grads = tape.backward(loss).unwrap();
        let mut v = Vec::new();
        for p in net.params() {
            v.extend_from_slice(grads.get(p).unwrap().data());
        }
        v
    };

    let mut eval = |x: &[f64]| {
        unflatten_values(&mut net.params_mut(), x);
        let tape = Tape::new();
        let out = net.forward(&tape, tape.leaf(&input)).tanh();
        out.sub(tape.leaf(&target)).square().mean_all().scalar_value()
    };
    let numeric = central_difference(&mut eval, &flat, 1e-5);
    let err = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err:.3e}");
}

#[test]
fn all_primitives_match_finite_differences() {
    for report in check_primitives(123, 20) {
        assert!(
            report.max_rel_err < 1e-4,
            "{}: {:.3e}",
            report.name,
            report.max_rel_err
        );
    }
}

#[test]
fn non_scalar_loss_rejected() {
    let x = Tensor::new(vec![2, 2], vec![1.0; 4]).with_grad();
    let tape = Tape::new();
    let y = tape.leaf(&x).square();
    assert!(tape.backward(y).is_err());
}

#[test]
fn backward_touches_each_node_exactly_once() {
    let x = Tensor::scalar(0.7).with_grad();
    let tape = Tape::new();
    let mut v = tape.leaf(&x);
    let n = 20;
    for _ in 0..n {
        v = v.tanh();
    }
    let grads = tape.backward(v).unwrap();
    // Chain of n tanh nodes plus the leaf, each visited exactly once.
    assert_eq!(grads.nodes_visited(), n + 1);
}

#[test]
fn zero_gradient_leaves_parameters_unchanged() {
    let mut p = Tensor::new(vec![1, 3], vec![0.5, -0.2, 1.0]).with_grad();
    let before = p.data().to_vec();
    let mut opt = Adam::new(1e-2, 100.0);
    // A loss that ignores p entirely: p receives no gradient.
    let q = Tensor::scalar(1.0).with_grad();
    let tape = Tape::new();
    let loss = tape.leaf(&q).square();
    let grads = tape.backward(loss).unwrap();
    let outcome = opt.step(&mut [&mut p], &grads);
    assert!(outcome.applied);
    assert_eq!(p.data(), before.as_slice());
}

#[test]
fn clipping_scales_applied_gradient_to_unit_norm() {
    // Gradient (6, 8) has norm 10; with clip 1 the applied gradient is
    // (0.6, 0.8). Replicate the moment update by hand for one step.
    let mut p = Tensor::new(vec![1, 2], vec![0.0, 0.0]).with_grad();
    let mut opt = Adam::new(1e-3, 1.0);
    let tape = Tape::new();
    let v = tape.leaf(&p);
    let w = tape.constant(1, 2, vec![6.0, 8.0]);
    let loss = v.mul(w).sum_all();
    let grads = tape.backward(loss).unwrap();
    let outcome = opt.step(&mut [&mut p], &grads);
    assert!((outcome.grad_norm - 10.0).abs() < 1e-12);

    let mut expect = Vec::new();
    for gc in [0.6, 0.8] {
        let m_hat = (0.1 * gc) / (1.0 - 0.9f64);
        let v_hat = (0.001 * gc * gc) / (1.0 - 0.999f64);
        expect.push(0.0 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8));
    }
    for (got, want) in p.data().iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn quadratic_bowl_converges() {
    let mut x = Tensor::scalar(1.0).with_grad();
    let mut opt = Adam::new(1e-2, 100.0);
    for _ in 0..200 {
        let tape = Tape::new();
        let loss = tape.leaf(&x).square();
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut [&mut x], &grads);
    }
    assert!(x.data()[0].abs() < 0.1, "ended at {}", x.data()[0]);
}

#[test]
fn non_finite_gradient_skips_step_and_flags() {
    let mut p = Tensor::new(vec![1, 2], vec![0.25, 0.5]).with_grad();
    let before = p.data().to_vec();
    let mut opt = Adam::new(1e-2, 100.0);
    // log(x) at x <= 0 produces a non-finite gradient.
    let tape = Tape::new();
    let v = tape.leaf(&p).add_scalar(-0.25);
    let loss = v.log().sum_all();
    let grads = tape.backward(loss).unwrap();
    let outcome = opt.step(&mut [&mut p], &grads);
    assert!(!outcome.applied);
    assert_eq!(opt.steps_skipped(), 1);
    assert_eq!(p.data(), before.as_slice());
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[4, 6, 2], &mut rng);
    let named: Vec<(String, &Tensor)> = net.named_params("net");
    save_params(&path, &named).unwrap();
    let records = load_params(&path).unwrap();
    assert_eq!(records.len(), named.len());
    for (rec, (name, t)) in records.iter().zip(&named) {
        assert_eq!(&rec.name, name);
        assert_eq!(rec.tensor.shape(), t.shape());
        assert_eq!(rec.tensor.data(), t.data());
    }
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("junk.ckpt");
    std::fs::write(&path, b"NOTACKPT____").unwrap();
    assert!(load_params(&path).is_err());
}
