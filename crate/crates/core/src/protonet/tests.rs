use super::*;
use ndarray::array;
use rand_distr::{Distribution, Normal, Uniform};

fn random_episode(d: usize, way: usize, shot: usize, query: usize, rng: &mut seed::Rng) -> Episode {
    let n = Normal::new(0.0, 1.0).unwrap();
    let support = Array2::from_shape_simple_fn((way * shot, d), || n.sample(rng));
    let q = Array2::from_shape_simple_fn((way * query, d), || n.sample(rng));
    let s_labels = (0..way).flat_map(|c| std::iter::repeat_n(c, shot)).collect();
    let q_labels = (0..way).flat_map(|c| std::iter::repeat_n(c, query)).collect();
    Episode::from_parts(support, s_labels, q, q_labels)
}

fn random_params(d: usize, h: usize, e: usize, rng: &mut seed::Rng) -> EncoderParams {
    let n = Normal::new(0.0, 0.7).unwrap();
    EncoderParams {
        w1: Array2::from_shape_simple_fn((d, h), || n.sample(rng)),
        b1: Array1::from_shape_simple_fn(h, || n.sample(rng)),
        w2: Array2::from_shape_simple_fn((h, e), || n.sample(rng)),
        b2: Array1::from_shape_simple_fn(e, || n.sample(rng)),
    }
}

/// Central finite differences of the forward loss, one parameter at a time.
fn numeric_grad(params: &EncoderParams, ep: &Episode, h: f64) -> Vec<f64> {
    let n = params.n_params();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut plus = params.clone();
        *plus.flat_mut().nth(k).unwrap() += h;
        let mut minus = params.clone();
        *minus.flat_mut().nth(k).unwrap() -= h;
        let lp = episode_loss(&plus, ep).unwrap();
        let lm = episode_loss(&minus, ep).unwrap();
        out.push((lp - lm) / (2.0 * h));
    }
    out
}

pub(crate) fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[test]
fn init_is_seeded_and_bounded() {
    let a = EncoderParams::init(6, 16, 4, 42).unwrap();
    let b = EncoderParams::init(6, 16, 4, 42).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, EncoderParams::init(6, 16, 4, 43).unwrap());
    let bound1 = (6.0f64 / 6.0).sqrt();
    let bound2 = (6.0f64 / 16.0).sqrt();
    assert!(a.w1.iter().all(|v| v.abs() <= bound1));
    assert!(a.w2.iter().all(|v| v.abs() <= bound2));
    assert!(a.b1.iter().all(|&v| v == 0.0));
    assert!(a.b2.iter().all(|&v| v == 0.0));
    assert!(EncoderParams::init(0, 4, 4, 0).is_err());
}

#[test]
fn encode_cases() {
    let zero = EncoderParams::zeros(3, 5, 2);
    let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
    assert_eq!(zero.encode(x.view()).unwrap(), Array2::<f64>::zeros((2, 2)));

    let eye = EncoderParams {
        w1: Array2::eye(3),
        b1: Array1::zeros(3),
        w2: Array2::eye(3),
        b2: Array1::zeros(3),
    };
    let nonneg = array![[1.0, 2.0, 0.0], [0.25, 4.0, 9.0]];
    assert_eq!(eye.encode(nonneg.view()).unwrap(), nonneg);

    let mut rng = seed::rng(1);
    let p = random_params(3, 5, 2, &mut rng);
    let z = p.encode(x.view()).unwrap();
    let mut doubled = p.clone();
    doubled.w2 *= 2.0;
    doubled.b2 *= 2.0;
    let z2 = doubled.encode(x.view()).unwrap();
    for (a, b) in z.iter().zip(z2.iter()) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }

    assert!(matches!(p.encode(array![[1.0, 2.0]].view()), Err(Error::Shape(_))));
}

#[test]
fn prototypes_are_class_means() {
    let z = array![[0.0, 0.0], [2.0, 2.0], [5.0, 1.0]];
    let p = compute_prototypes(z.view(), &[0, 0, 1], 2).unwrap();
    assert_eq!(p.prototypes, array![[1.0, 1.0], [5.0, 1.0]]);

    let twins = array![[3.0, -1.0], [3.0, -1.0]];
    let p = compute_prototypes(twins.view(), &[0, 0], 1).unwrap();
    assert_eq!(p.prototypes.row(0), twins.row(0));

    assert!(matches!(
        compute_prototypes(z.view(), &[0, 0, 0], 2),
        Err(Error::InsufficientClass { class: 1, .. })
    ));
}

#[test]
fn classify_cases() {
    let single = compute_prototypes(array![[1.0, 2.0]].view(), &[0], 1).unwrap();
    let p = classify(array![[9.0, -3.0]].view(), &single).unwrap();
    assert_eq!(p[[0, 0]], 1.0);

    let two = compute_prototypes(array![[-1.0, 0.0], [1.0, 0.0]].view(), &[0, 1], 2).unwrap();
    let p = classify(array![[0.0, 5.0]].view(), &two).unwrap();
    assert_eq!((p[[0, 0]], p[[0, 1]]), (0.5, 0.5));

    // distances 0 and 2; the distance floor moves the zero distance to 1e-6
    let p = classify(array![[-1.0, 0.0]].view(), &two).unwrap();
    let e = (-2.0f64).exp();
    assert!((p[[0, 0]] - 1.0 / (1.0 + e)).abs() < 1e-6);
    assert!((p[[0, 1]] - e / (1.0 + e)).abs() < 1e-6);
    assert!((p[[0, 0]] - 0.8808).abs() < 1e-4);
    assert!((p[[0, 1]] - 0.1192).abs() < 1e-4);
}

#[test]
fn classify_rows_sum_to_one_and_translation_invariant() {
    let mut rng = seed::rng(8);
    let u = Uniform::new(-50.0, 50.0).unwrap();
    for _ in 0..100 {
        let protos = Array2::from_shape_simple_fn((4, 3), || u.sample(&mut rng));
        let q = Array2::from_shape_simple_fn((6, 3), || u.sample(&mut rng));
        let set = compute_prototypes(protos.view(), &[0, 1, 2, 3], 4).unwrap();
        let probs = classify(q.view(), &set).unwrap();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let shift = Array1::from_shape_simple_fn(3, || u.sample(&mut rng));
        let shifted = compute_prototypes((&protos + &shift).view(), &[0, 1, 2, 3], 4).unwrap();
        let probs2 = classify((&q + &shift).view(), &shifted).unwrap();
        for (a, b) in probs.iter().zip(probs2.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn coincident_embeddings_give_log_way() {
    for way in [2usize, 3, 5] {
        let ep = Episode::from_parts(
            Array2::from_elem((way, 4), 0.3),
            (0..way).collect(),
            Array2::from_elem((way * 2, 4), 0.3),
            (0..way).flat_map(|c| [c, c]).collect(),
        );
        let zero = EncoderParams::zeros(4, 6, 3);
        let (loss, grads) = episode_loss_and_grad(&zero, &ep).unwrap();
        // exact per query; only the mean over queries rounds
        assert!((loss - (way as f64).ln()).abs() <= 4.0 * f64::EPSILON, "{loss}");
        assert!(grads.is_finite());
    }
}

#[test]
fn separated_clusters_drive_loss_to_zero() {
    let eye = EncoderParams {
        w1: Array2::eye(2) * 100.0,
        b1: Array1::zeros(2),
        w2: Array2::eye(2),
        b2: Array1::zeros(2),
    };
    let ep = Episode::from_parts(
        array![[0.0, 1.0], [1.0, 0.0]],
        vec![0, 1],
        array![[0.0, 1.1], [0.1, 0.9], [1.0, 0.1], [0.9, 0.0]],
        vec![0, 0, 1, 1],
    );
    let (loss, _) = episode_loss_and_grad(&eye, &ep).unwrap();
    assert!(loss < 1e-30, "{loss}");
    let z_q = eye.encode(ep.query.view()).unwrap();
    let protos = compute_prototypes(eye.encode(ep.support.view()).unwrap().view(), &[0, 1], 2).unwrap();
    assert_eq!(argmax_rows(&classify(z_q.view(), &protos).unwrap()), vec![0, 0, 1, 1]);
}

#[test]
fn loss_paths_agree_and_are_deterministic() {
    let mut rng = seed::rng(3);
    let p = random_params(5, 7, 3, &mut rng);
    let ep = random_episode(5, 3, 2, 3, &mut rng);
    let (l1, g1) = episode_loss_and_grad(&p, &ep).unwrap();
    let (l2, g2) = episode_loss_and_grad(&p, &ep).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);
    assert!((l1 - episode_loss(&p, &ep).unwrap()).abs() < 1e-14);
    assert!(l1 >= 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = seed::rng(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let p = random_params(6, 8, 4, &mut rng);
        let ep = random_episode(6, 3, 2, 3, &mut rng);
        let (_, g) = episode_loss_and_grad(&p, &ep).unwrap();
        let numeric = numeric_grad(&p, &ep, 1e-6);
        worst = worst.max(max_relative_error(&g.flat(), &numeric));
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut rng = seed::rng(0);
    let mut p = random_params(3, 4, 2, &mut rng);
    let before = p.clone();
    let mut state = AdamState::new(&p);
    let zero = p.zeros_like();
    adam_step(&mut p, &zero, &mut state, 1e-3, 0.0);
    assert_eq!(p, before);
    assert_eq!(state.t, 1);
}

#[test]
fn adam_first_step_closed_form() {
    let mut p = EncoderParams::zeros(1, 1, 1);
    p.w1[[0, 0]] = 0.7;
    let mut g = p.zeros_like();
    g.w1[[0, 0]] = -0.25;
    g.b2[0] = 3.0;
    let mut state = AdamState::new(&p);
    let lr = 1e-3;
    adam_step(&mut p, &g, &mut state, lr, 0.0);
    // m_hat = g, v_hat = g^2
    let expect_w = 0.7 - lr * -0.25 / (0.25 + 1e-8);
    let expect_b = -lr * 3.0 / (3.0 + 1e-8);
    assert!((p.w1[[0, 0]] - expect_w).abs() < 1e-15);
    assert!((p.b2[0] - expect_b).abs() < 1e-15);
    assert!(state.v.flat().iter().all(|&v| v >= 0.0));
}

#[test]
fn adam_equal_grads_equal_updates_and_bias_exempt_from_decay() {
    let mut p = EncoderParams::zeros(2, 2, 1);
    p.w1.fill(0.5);
    p.b1.fill(0.5);
    let mut g = p.zeros_like();
    g.w1.fill(0.1);
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &g, &mut state, 1e-2, 0.0);
    assert!(p.w1.iter().all(|&v| v == p.w1[[0, 0]]));

    // zero gradient, decay on: weights move, biases stay
    let mut q = EncoderParams::zeros(2, 2, 1);
    q.w1.fill(0.5);
    q.b1.fill(0.5);
    let mut state = AdamState::new(&q);
    let zero = q.zeros_like();
    adam_step(&mut q, &zero, &mut state, 1e-2, 1e-1);
    assert!(q.w1.iter().all(|&v| v < 0.5));
    assert!(q.b1.iter().all(|&v| v == 0.5));
}

