use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sal_core::activation::{activation_eval, ActivationKind};
use sal_core::data::{
    grid_points, target_nondiff, target_oscillatory, Dataset, OscillatoryCoeffs, SplitMix64,
};
use sal_core::metrics::inner_product_m;
use sal_core::model::{component_eval, model_predict, GradeParams, SalModel};
use sal_core::pooling::PoolingSpec;
use sal_core::qp::{direct_solve, min_norm_lift, nesterov_solve, AffineLsqProblem, SolverConfig};
use sal_core::smoothing::{smooth_points, SmootherConfig, WindowMode};
use sal_core::ssg::{
    adam_step, he_init, mlp_backward, mlp_forward, AdamHyper, AdamState, MlpShape,
};
use sal_core::trainer::{train_sal, GradeConfig, GradeInit, TrainConfig};

fn rand_mat(rng: &mut SplitMix64, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
}

fn activation(i: u64) -> ActivationKind {
    match i % 4 {
        0 => ActivationKind::Relu,
        1 => ActivationKind::Tanh,
        2 => ActivationKind::SinCosHalf,
        _ => ActivationKind::LeakyRelu { slope: 0.2 },
    }
}

fn random_model(seed: u64, t: usize, grades: usize) -> SalModel {
    let mut rng = SplitMix64::new(seed);
    let mut model = SalModel::new(1, t);
    let mut in_width = 1;
    for k in 0..grades {
        let width = t + (rng.next_u64() % 4) as usize;
        let grade = GradeParams::new(
            rand_mat(&mut rng, width, in_width),
            DVector::from_fn(width, |_, _| rng.uniform(-1.0, 1.0)),
            t,
            activation(seed.wrapping_add(k as u64)),
        )
        .unwrap();
        model.push_grade(grade).unwrap();
        in_width = width;
    }
    model
}

fn problem(seed: u64, m: usize, n: usize, width: usize, t: usize) -> AffineLsqProblem {
    let mut rng = SplitMix64::new(seed);
    let features = rand_mat(&mut rng, m, n);
    let targets = rand_mat(&mut rng, m, t);
    AffineLsqProblem::assemble(
        features,
        targets,
        PoolingSpec::from_dims(width, t).unwrap(),
        0.0,
    )
    .unwrap()
}

fn sample_fn(f: impl Fn(f64) -> f64) -> impl Fn(&[f64]) -> sal_core::Result<DMatrix<f64>> {
    move |xs: &[f64]| {
        Ok(DMatrix::from_iterator(
            xs.len(),
            1,
            xs.iter().map(|&x| f(x)),
        ))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pooling_has_full_row_rank(mu in 0usize..8, d in 1usize..6) {
        let p = PoolingSpec::new(mu, d).unwrap();
        let gram = p.gram();
        prop_assert_eq!(gram.shape(), (d, d));
        prop_assert!(gram.clone().cholesky().is_some());
        let sv = gram.singular_values();
        prop_assert!(sv.min() > 1e-12 * sv.max());
    }

    #[test]
    fn prediction_is_exact_component_sum(seed in any::<u64>(), t in 1usize..3, grades in 1usize..4, x in -2.0f64..2.0) {
        let model = random_model(seed, t, grades);
        let mut sum = vec![0.0; t];
        for k in 1..=grades {
            for (s, v) in sum.iter_mut().zip(component_eval(&model, k, &[x]).unwrap()) {
                *s += v;
            }
        }
        prop_assert_eq!(model_predict(&model, &[x]).unwrap(), sum);
    }

    #[test]
    fn inner_product_symmetric_positive(seed in any::<u64>(), m in 1usize..30, t in 1usize..4) {
        let mut rng = SplitMix64::new(seed);
        let u = rand_mat(&mut rng, m, t);
        let v = rand_mat(&mut rng, m, t);
        let uv = inner_product_m(&u, &v).unwrap();
        let vu = inner_product_m(&v, &u).unwrap();
        prop_assert!((uv - vu).abs() <= 1e-14 * (1.0 + uv.abs()));
        prop_assert!(inner_product_m(&u, &u).unwrap() > 0.0);
    }

    #[test]
    fn nesterov_final_objective_bounded(seed in any::<u64>(), t in 1usize..3, extra in 0usize..4) {
        let p = problem(seed, 25, 3, t + extra, t);
        let cfg = SolverConfig { record_trace: true, ..SolverConfig::default() };
        let nest = nesterov_solve(&p, &cfg).unwrap();
        let direct = direct_solve(&p).unwrap();
        let j0 = nest.stats.objective_trace[0];
        let jn = nest.stats.final_objective;
        let jd = direct.stats.final_objective;
        prop_assert!(jn <= j0 * (1.0 + 1e-10));
        prop_assert!(jn >= jd - 1e-10 * (1.0 + jd));
    }

    #[test]
    fn lift_is_right_inverse_of_pooling(seed in any::<u64>(), mu in 0usize..5, t in 1usize..4, cols in 1usize..5) {
        let mut rng = SplitMix64::new(seed);
        let pooling = PoolingSpec::new(mu, t).unwrap();
        let m = rand_mat(&mut rng, cols, t);
        let theta = min_norm_lift(&pooling, &m).unwrap();
        let back = pooling.pool_rows(&theta).unwrap();
        prop_assert!((back - m.transpose()).amax() <= 1e-12 * (1.0 + m.amax()));
    }

    #[test]
    fn quadrature_weights_positive(tau in 1e-4f64..0.2, x in -3.0f64..3.0, renorm in any::<bool>()) {
        let mut cfg = SmootherConfig::new(tau, WindowMode::TauMultiples { factor: 6.0 }, 200).unwrap();
        cfg.renormalize = renorm;
        let w = cfg.weights(x);
        prop_assert!(w.iter().all(|&v| v > 0.0));
        if renorm {
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn smoothing_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, tau in 1e-3f64..0.05) {
        let mut rng = SplitMix64::new(seed);
        let (c1, c2) = (rng.uniform(1.0, 5.0), rng.uniform(1.0, 5.0));
        let cfg = SmootherConfig::new(tau, WindowMode::GridSteps { count: 10, step: tau / 2.0 }, 80).unwrap();
        let xs: Vec<f64> = (0..7).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let f = move |x: f64| (c1 * x).sin();
        let g = move |x: f64| (c2 * x).cos() + x * x;
        let sf = smooth_points(sample_fn(f), &cfg, &xs).unwrap();
        let sg = smooth_points(sample_fn(g), &cfg, &xs).unwrap();
        let sc = smooth_points(sample_fn(move |x| a * f(x) + b * g(x)), &cfg, &xs).unwrap();
        let want = sf * a + sg * b;
        prop_assert!((sc - &want).amax() <= 1e-12 * (1.0 + want.amax()));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters(seed in any::<u64>(), steps in 1usize..20) {
        let shape = MlpShape::new(1, &[5, 4], &[ActivationKind::Tanh, ActivationKind::Relu], 2).unwrap();
        let mut params = he_init(&shape, seed);
        let before = params.clone();
        let mut rng = SplitMix64::new(seed ^ 0x5a5a);
        let x = rand_mat(&mut rng, 12, 1);
        let y = rand_mat(&mut rng, 12, 2);
        let mut state = AdamState::new(&params, AdamHyper::with_alpha(0.0));
        for _ in 0..steps {
            let (pred, cache) = mlp_forward(&params, &x).unwrap();
            let grads = mlp_backward(&params, &cache, &((pred - &y) * 2.0)).unwrap();
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        prop_assert_eq!(params, before);
    }

    #[test]
    fn forward_uses_shared_activation_semantics(seed in any::<u64>(), act in 0u64..4, x in -2.0f64..2.0) {
        let kind = activation(act);
        let shape = MlpShape::new(1, &[6], &[kind.clone()], 1).unwrap();
        let params = he_init(&shape, seed);
        let (hidden, out) = (&params.layers[0], &params.layers[1]);
        let z: Vec<f64> = (0..6).map(|i| hidden.weight[(i, 0)] * x + hidden.bias[i]).collect();
        let a = activation_eval(&kind, &z);
        let want: f64 = out.bias[0] + (0..6).map(|i| out.weight[(0, i)] * a[i]).sum::<f64>();
        let got = params.predict(&DMatrix::from_element(1, 1, x)).unwrap()[(0, 0)];
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn training_grid_is_uniform(a in -5.0f64..0.0, len in 0.1f64..10.0, delta in 0.0f64..1.0, m in 2usize..3000) {
        let xs = grid_points(a, a + len, delta, m);
        let range = len + 2.0 * delta;
        let step = range / (m - 1) as f64;
        prop_assert_eq!(xs[0], a - delta);
        prop_assert_eq!(xs[m - 1], a + len + delta);
        let worst = xs.windows(2).map(|w| (w[1] - w[0] - step).abs()).fold(0.0, f64::max);
        prop_assert!(worst <= 1e-12 * range);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn smaller_tau_smooths_less(c in 1.0f64..4.0) {
        let f = move |x: f64| (c * x).sin() + 0.3 * (2.0 * c * x).cos();
        let xs: Vec<f64> = (0..=200).map(|i| -1.0 + i as f64 * 0.01).collect();
        let mut last = f64::INFINITY;
        for tau in [0.2, 0.1, 0.05, 0.02, 0.01, 0.005] {
            let cfg = SmootherConfig::new(tau, WindowMode::TauMultiples { factor: 6.0 }, 200).unwrap();
            let s = smooth_points(sample_fn(f), &cfg, &xs).unwrap();
            let err: f64 = xs.iter().enumerate().map(|(i, &x)| (s[i] - f(x)).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= last + 1e-6, "tau {} error {} after {}", tau, err, last);
            last = err;
        }
    }

    #[test]
    fn training_is_bit_reproducible(seed in any::<u64>()) {
        let xs: Vec<f64> = (0..60).map(|i| -1.0 + i as f64 / 29.5).collect();
        let data = Dataset::new(
            DMatrix::from_column_slice(60, 1, &xs),
            DMatrix::from_iterator(60, 1, xs.iter().map(|&x| target_nondiff(x))),
        )
        .unwrap();
        let mut grades = vec![GradeConfig::new(6, ActivationKind::SinCosHalf), GradeConfig::new(6, ActivationKind::Relu)];
        for g in &mut grades {
            g.max_iters = 200;
            g.init = GradeInit::RandomKernel { scale: 3.0 };
        }
        grades[1].tau = 0.02;
        let mut cfg = TrainConfig::new(grades);
        cfg.seed = seed;
        let (m1, r1) = train_sal(&data, None, &cfg).map_err(|f| f.error).unwrap();
        let (m2, r2) = train_sal(&data, None, &cfg).map_err(|f| f.error).unwrap();
        prop_assert_eq!(m1, m2);
        let rse = |r: &sal_core::trainer::TrainReport| r.records.iter().map(|g| g.rse_train.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(rse(&r1), rse(&r2));
        prop_assert_eq!(r1.residual_norms_sq, r2.residual_norms_sq);
    }
}

#[test]
fn target_endpoint_values() {
    assert_eq!(target_nondiff(-1.0), 0.0);
    let coeffs = OscillatoryCoeffs::canonical();
    assert!(target_oscillatory(&coeffs, 0.0).iter().all(|&v| v == 0.0));
}
