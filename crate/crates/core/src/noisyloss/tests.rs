use super::*;
use crate::model::{softmax_columns, Sgd};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_logits(k: usize, b: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(k, b, |_, _| rng.random_range(-2.0..2.0))
}

fn random_labels(k: usize, b: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..b).map(|_| rng.random_range(0..k)).collect()
}

/// Central differences of `f` at `x`, entry by entry.
fn finite_diff(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let h = 1e-5;
    Matrix::from_fn(x.rows(), x.cols(), |i, j| {
        let mut p = x.clone();
        p[(i, j)] += h;
        let mut m = x.clone();
        m[(i, j)] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

fn assert_grad_close(analytic: &Matrix, numeric: &Matrix, tol: f64) {
    for (a, n) in analytic.as_slice().iter().zip(numeric.as_slice()) {
        if a.abs() > 1e-6 || n.abs() > 1e-6 {
            assert!((a - n).abs() <= tol * a.abs().max(n.abs()), "analytic {a} vs numeric {n}");
        }
    }
}

#[test]
fn ce_of_smoothed_onehot_vanishes() {
    let labels = [0, 2, 1];
    let mut last = f64::INFINITY;
    for eps in [1e-2, 1e-4, 1e-8] {
        let probs = Matrix::from_fn(3, 3, |i, n| if i == labels[n] { 1.0 - eps } else { eps / 2.0 });
        let v = cross_entropy(&probs, &labels).unwrap().value;
        assert!(v < last);
        last = v;
    }
    assert!(last < 1e-7);
}

#[test]
fn ce_of_uniform_is_log_k() {
    let probs = Matrix::from_fn(4, 5, |_, _| 0.25);
    let v = cross_entropy(&probs, &[0, 1, 2, 3, 0]).unwrap().value;
    assert!((v - 4f64.ln()).abs() < 1e-15);
    assert!((v - 1.386294).abs() < 1e-6);
}

#[test]
fn ce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = random_logits(4, 3, &mut rng);
    let labels = random_labels(4, 3, &mut rng);
    let out = cross_entropy(&softmax_columns(&logits), &labels).unwrap();
    let fd = finite_diff(&logits, |z| cross_entropy(&softmax_columns(z), &labels).unwrap().value);
    assert_grad_close(out.grad_logits.as_ref().unwrap(), &fd, 1e-5);
}

#[test]
fn labels_are_validated() {
    let probs = Matrix::from_fn(3, 2, |_, _| 1.0 / 3.0);
    assert!(cross_entropy(&probs, &[0]).is_err());
    assert!(cross_entropy(&probs, &[0, 3]).is_err());
}

#[test]
fn identity_correction_equals_ce_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probs = softmax_columns(&random_logits(5, 6, &mut rng));
    let labels = random_labels(5, 6, &mut rng);
    let (out, _) = corrected_ce_with_realized(&probs, &Matrix::identity(5), &labels).unwrap();
    assert_eq!(out.value, cross_entropy(&probs, &labels).unwrap().value);
}

#[test]
fn uniform_transition_makes_loss_prediction_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 4;
    let probs = softmax_columns(&random_logits(k, 3, &mut rng));
    let labels = random_labels(k, 3, &mut rng);
    let uniform = Matrix::from_fn(k, k, |_, _| 0.25);
    let (out, _) = corrected_ce_with_realized(&probs, &uniform, &labels).unwrap();
    assert!((out.value - 4f64.ln()).abs() < 1e-12);
    assert!(out.grad_logits.unwrap().max_abs() < 1e-12);
}

#[test]
fn corrected_ce_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = random_logits(3, 2, &mut rng);
    let labels = random_labels(3, 2, &mut rng);
    let theta = Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.5..1.5));
    let t = TransitionMatrix::from_logits(theta.clone()).unwrap();
    let out = forward_corrected_ce(&softmax_columns(&logits), &t, &labels).unwrap();

    let fd_logits = finite_diff(&logits, |z| {
        forward_corrected_ce(&softmax_columns(z), &t, &labels).unwrap().value
    });
    assert_grad_close(out.grad_logits.as_ref().unwrap(), &fd_logits, 1e-5);

    let probs = softmax_columns(&logits);
    let fd_theta = finite_diff(&theta, |th| {
        let t = TransitionMatrix::from_logits(th.clone()).unwrap();
        forward_corrected_ce(&probs, &t, &labels).unwrap().value
    });
    assert_grad_close(out.grad_theta.as_ref().unwrap(), &fd_theta, 1e-5);
}

#[test]
fn near_identity_init_two_classes() {
    let t = TransitionMatrix::init_near_identity(2, 0.99).unwrap().realized();
    let expected = [0.99, 0.01, 0.01, 0.99];
    for (a, b) in t.as_slice().iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn near_identity_init_ten_classes() {
    let t = TransitionMatrix::init_near_identity(10, 0.99).unwrap().realized();
    for i in 0..10 {
        let row_sum: f64 = t.row(i).iter().sum();
        assert!((row_sum - 1.0).abs() < 1e-12);
        for j in 0..10 {
            let expected = if i == j { 0.99 } else { 0.01 / 9.0 };
            assert!((t[(i, j)] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn near_identity_rejects_bad_mass() {
    assert!(TransitionMatrix::init_near_identity(4, 0.25).is_err());
    assert!(TransitionMatrix::init_near_identity(4, 1.0).is_err());
    assert!(TransitionMatrix::init_near_identity(4, 0.2).is_err());
}

#[test]
fn transition_stays_row_stochastic_under_sgd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut t = TransitionMatrix::init_near_identity(4, 0.99).unwrap();
    let mut vel = Matrix::zeros(4, 4);
    let sgd = Sgd { lr: 0.5, momentum: 0.9, weight_decay: 0.0 };
    for _ in 0..200 {
        let probs = softmax_columns(&random_logits(4, 8, &mut rng));
        let labels = random_labels(4, 8, &mut rng);
        let out = forward_corrected_ce(&probs, &t, &labels).unwrap();
        sgd.update_matrix(&mut t.theta, out.grad_theta.as_ref().unwrap(), &mut vel);
        let r = t.realized();
        for i in 0..4 {
            assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(r.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}

#[test]
fn sce_without_reverse_term_is_scaled_ce() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let probs = softmax_columns(&random_logits(3, 4, &mut rng));
    let labels = random_labels(3, 4, &mut rng);
    let sce = sce_loss(&probs, &labels, 0.3, 0.0, -4.0).unwrap();
    let ce = cross_entropy(&probs, &labels).unwrap();
    assert_eq!(sce.value, 0.3 * ce.value);
    assert_eq!(sce.grad_logits.unwrap(), ce.grad_logits.unwrap().scale(0.3));
}

#[test]
fn sce_of_exact_onehot_is_zero() {
    let labels = [1, 0];
    let probs = Matrix::from_fn(3, 2, |i, n| if i == labels[n] { 1.0 } else { 0.0 });
    assert_eq!(sce_loss(&probs, &labels, 0.1, 1.0, -4.0).unwrap().value, 0.0);
}

#[test]
fn sce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random_logits(4, 3, &mut rng);
    let labels = random_labels(4, 3, &mut rng);
    let out = sce_loss(&softmax_columns(&logits), &labels, 0.1, 1.0, -4.0).unwrap();
    let fd = finite_diff(&logits, |z| {
        sce_loss(&softmax_columns(z), &labels, 0.1, 1.0, -4.0).unwrap().value
    });
    assert_grad_close(out.grad_logits.as_ref().unwrap(), &fd, 1e-5);
}

#[test]
fn gce_reference_values() {
    let labels = [2, 0];
    let onehot = Matrix::from_fn(3, 2, |i, n| if i == labels[n] { 1.0 } else { 0.0 });
    assert_eq!(gce_loss(&onehot, &labels, 1.0).unwrap().value, 0.0);
    let uniform = Matrix::from_fn(4, 3, |_, _| 0.25);
    assert!((gce_loss(&uniform, &[0, 1, 3], 1.0).unwrap().value - 0.75).abs() < 1e-15);
    assert!(gce_loss(&uniform, &[0, 1, 3], 0.0).is_err());
}

#[test]
fn gce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let logits = random_logits(5, 4, &mut rng);
    let labels = random_labels(5, 4, &mut rng);
    let out = gce_loss(&softmax_columns(&logits), &labels, 0.7).unwrap();
    let fd = finite_diff(&logits, |z| gce_loss(&softmax_columns(z), &labels, 0.7).unwrap().value);
    assert_grad_close(out.grad_logits.as_ref().unwrap(), &fd, 1e-5);
}

#[test]
fn sparsity_reference_values() {
    let zero = sparsity_loss(&Matrix::zeros(4, 3));
    assert_eq!(zero.value, 0.0);
    assert_eq!(zero.grad_h.unwrap().max_abs(), 0.0);

    let single = sparsity_loss(&Matrix::column_vector(&[3.0, 4.0]));
    assert_eq!(single.value, 5.0);
    assert_eq!(single.grad_h.unwrap().as_slice(), &[0.6, 0.8]);
}

#[test]
fn sparsity_delegates_to_l21() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0));
    let out = sparsity_loss(&h);
    assert!((out.value - l21_norm(&h) / 4.0).abs() < 1e-15);
    let fd = finite_diff(&h, |m| sparsity_loss(m).value);
    assert_grad_close(out.grad_h.as_ref().unwrap(), &fd, 1e-5);
}

#[test]
fn joint_loss_arithmetic() {
    let corrected = LossOutput { value: 1.0, grad_logits: None, grad_theta: None, grad_h: None };
    let sparse = LossOutput { value: 2.0, grad_logits: None, grad_theta: None, grad_h: None };
    assert!((joint_loss(&corrected, &sparse, 0.005).unwrap().value - 1.01).abs() < 1e-15);
    assert!(joint_loss(&corrected, &sparse, -0.1).is_err());
}

#[test]
fn joint_loss_with_zero_lambda_is_the_corrected_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let probs = softmax_columns(&random_logits(3, 4, &mut rng));
    let corrected = cross_entropy(&probs, &random_labels(3, 4, &mut rng)).unwrap();
    let sparse = sparsity_loss(&Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0)));
    assert_eq!(joint_loss(&corrected, &sparse, 0.0).unwrap(), corrected);
}

#[test]
fn joint_loss_combines_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probs = softmax_columns(&random_logits(3, 4, &mut rng));
    let corrected = cross_entropy(&probs, &random_labels(3, 4, &mut rng)).unwrap();
    let h = Matrix::from_fn(5, 4, |_, _| rng.random_range(-1.0..1.0));
    let sparse = sparsity_loss(&h);
    let joint = joint_loss(&corrected, &sparse, 0.1).unwrap();
    assert_eq!(joint.grad_logits, corrected.grad_logits);
    assert_eq!(joint.grad_h.unwrap(), sparse.grad_h.unwrap().scale(0.1));
}

proptest! {
    #[test]
    fn joint_loss_is_linear_in_its_components(
        a in -10.0f64..10.0, b in 0.0f64..10.0, lambda in 0.0f64..1.0, e in -3i32..4,
    ) {
        // powers of two keep the comparison exact
        let c = 2f64.powi(e);
        let lo = |v| LossOutput { value: v, grad_logits: None, grad_theta: None, grad_h: None };
        let base = joint_loss(&lo(a), &lo(b), lambda).unwrap().value;
        let scaled = joint_loss(&lo(c * a), &lo(c * b), lambda).unwrap().value;
        prop_assert_eq!(scaled, c * base);
    }

    #[test]
    fn near_identity_correction_tracks_ce(
        seed in 0u64..1000, k in 2usize..=5, b in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Matrix::from_fn(k, b, |_, _| rng.random_range(-1.0..1.0));
        let probs = softmax_columns(&logits);
        let labels = random_labels(k, b, &mut rng);
        let t = TransitionMatrix::init_near_identity(k, 0.999).unwrap();
        let corrected = forward_corrected_ce(&probs, &t, &labels).unwrap().value;
        let ce = cross_entropy(&probs, &labels).unwrap().value;
        prop_assert!((corrected - ce).abs() <= 0.01);
    }

    #[test]
    fn every_loss_gradient_passes_finite_differences(
        seed in 0u64..500, k in 2usize..=5, b in 1usize..=4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = random_logits(k, b, &mut rng);
        let labels = random_labels(k, b, &mut rng);
        let theta = Matrix::from_fn(k, k, |i, j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-0.5..0.5));
        let t = TransitionMatrix::from_logits(theta).unwrap();
        let params = RobustLossParams::default();
        for kind in LossKind::ALL {
            let out = classification_loss(kind, &softmax_columns(&logits), &labels, &t, &params).unwrap();
            let fd = finite_diff(&logits, |z| {
                classification_loss(kind, &softmax_columns(z), &labels, &t, &params).unwrap().value
            });
            let analytic = out.grad_logits.unwrap();
            for (a, n) in analytic.as_slice().iter().zip(fd.as_slice()) {
                if a.abs() > 1e-6 {
                    prop_assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()), "{:?}: {} vs {}", kind, a, n);
                }
            }
            prop_assert_eq!(out.grad_theta.is_some(), kind.uses_transition());
        }
    }
}
