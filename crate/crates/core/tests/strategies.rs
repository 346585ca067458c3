use fedtrade_core::model::{ParamSet, Partition};
use fedtrade_core::strategies::{
    fedadam_update, local_finetune, pfedme_local, server_aggregate_fedavg, AdamMoments, Contribution, Ctx,
    EvalModels, LocalConfig, Objective, QuadraticObjective, StrategyKind, StrategyState,
};
use fedtrade_core::{RngStream, Tensor};
use proptest::prelude::*;

fn scalar(v: f64) -> ParamSet {
    QuadraticObjective::params(vec![v])
}

fn w(p: &ParamSet) -> Vec<f64> {
    p.get("w").unwrap().data().to_vec()
}

fn quad(targets: &[Vec<f64>]) -> Vec<QuadraticObjective> {
    targets
        .iter()
        .map(|t| QuadraticObjective {
            target: t.clone(),
            samples: 10,
        })
        .collect()
}

fn run(kind: StrategyKind, objs: &[QuadraticObjective], weights: &[f64], local: &LocalConfig, rounds: usize) -> StrategyState {
    let dim = objs[0].target.len();
    let dyn_objs: Vec<&dyn Objective> = objs.iter().map(|o| o as &dyn Objective).collect();
    let mut state = StrategyState::new(kind, QuadraticObjective::params(vec![0.0; dim]), objs.len()).unwrap();
    for _ in 0..rounds {
        state.run_round(&dyn_objs, weights, local, 3).unwrap();
    }
    state.finalize(&dyn_objs, local, 3).unwrap();
    state
}

const LOCAL: LocalConfig = LocalConfig {
    epochs: 1,
    lr: 0.05,
    batch_size: 5,
};

#[test]
fn fedadam_hand_step() {
    let mut theta = scalar(0.0);
    let mut moments = AdamMoments::zeros_like(&theta);
    fedadam_update(&mut theta, &mut moments, &scalar(1.0), 0.1, 0.9, 0.99, 1e-3).unwrap();
    assert!((w(&moments.m)[0] - 0.1).abs() < 1e-15);
    assert!((w(&moments.v)[0] - 0.01).abs() < 1e-15);
    assert!((w(&theta)[0] - 0.1 * 0.1 / (0.1 + 0.001)).abs() < 1e-15);
    assert!((w(&theta)[0] - 0.09901).abs() < 1e-5);
}

#[test]
fn fedadam_zero_delta_keeps_theta_and_decays_moments() {
    let mut theta = scalar(0.5);
    let mut moments = AdamMoments {
        m: scalar(0.3),
        v: scalar(0.2),
    };
    let mut prev = (0.3f64, 0.2f64);
    for _ in 0..20 {
        let before = w(&theta)[0];
        fedadam_update(&mut theta, &mut moments, &scalar(0.0), 0.1, 0.9, 0.99, 1e-3).unwrap();
        let (m, v) = (w(&moments.m)[0], w(&moments.v)[0]);
        assert!(m.abs() < prev.0.abs() && v < prev.1);
        // only the decaying first moment moves theta
        assert!((w(&theta)[0] - before - 0.1 * m / (v.sqrt() + 1e-3)).abs() < 1e-15);
        prev = (m, v);
    }
}

#[test]
fn fedadam_first_step_is_bounded() {
    let mut rng = RngStream::new(1, 0, 0, "adam-bound");
    for _ in 0..200 {
        let d: Vec<f64> = (0..8).map(|_| rng.uniform_in(-50.0, 50.0)).collect();
        let mut theta = QuadraticObjective::params(vec![0.0; 8]);
        let mut moments = AdamMoments::zeros_like(&theta);
        fedadam_update(&mut theta, &mut moments, &QuadraticObjective::params(d), 0.1, 0.9, 0.99, 1e-3).unwrap();
        assert!(w(&theta).iter().all(|v| v.abs() <= 0.1 / (1.0 - 0.9)));
    }
}

#[test]
fn aggregate_examples() {
    let a = QuadraticObjective::params(vec![1.0, 3.0]);
    let b = QuadraticObjective::params(vec![3.0, 5.0]);
    let c = [
        Contribution { client: 0, weight: 0.5, params: &a },
        Contribution { client: 1, weight: 0.5, params: &b },
    ];
    assert_eq!(w(&server_aggregate_fedavg(&c).unwrap()), vec![2.0, 4.0]);
    let single = [Contribution { client: 2, weight: 1.0, params: &a }];
    assert_eq!(server_aggregate_fedavg(&single).unwrap(), a);
}

#[test]
fn aggregate_matches_brute_force_on_colon_weights() {
    let train = [765.0, 150.0, 290.0, 469.0];
    let total: f64 = train.iter().sum();
    let weights: Vec<f64> = train.iter().map(|n| n / total).collect();
    assert!((weights[0] - 0.457).abs() < 1e-3);
    let mut rng = RngStream::new(2, 0, 0, "colon");
    let params: Vec<ParamSet> = (0..4).map(|_| QuadraticObjective::params((0..5).map(|_| rng.normal()).collect())).collect();
    let contribs: Vec<Contribution> = params
        .iter()
        .enumerate()
        .map(|(k, p)| Contribution { client: k, weight: weights[k], params: p })
        .collect();
    let got = w(&server_aggregate_fedavg(&contribs).unwrap());
    for i in 0..5 {
        let mut brute = 0.0;
        for k in 0..4 {
            brute += weights[k] * w(&params[k])[i];
        }
        assert!((got[i] - brute).abs() < 1e-12);
        let lo = params.iter().map(|p| w(p)[i]).fold(f64::INFINITY, f64::min);
        let hi = params.iter().map(|p| w(p)[i]).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo - 1e-12 <= got[i] && got[i] <= hi + 1e-12);
    }
}

#[test]
fn aggregate_rejects_bad_weights() {
    let a = scalar(1.0);
    let c = [
        Contribution { client: 0, weight: 0.7, params: &a },
        Contribution { client: 1, weight: 0.7, params: &a },
    ];
    assert!(server_aggregate_fedavg(&c).is_err());
    assert!(server_aggregate_fedavg(&[]).is_err());
}

proptest! {
    #[test]
    fn aggregate_is_permutation_invariant(values in prop::collection::vec(-10.0f64..10.0, 4), raw in prop::collection::vec(0.1f64..1.0, 4), seed in 0u64..1000) {
        let total: f64 = raw.iter().sum();
        let params: Vec<ParamSet> = values.iter().map(|v| scalar(*v)).collect();
        let contribs: Vec<Contribution> = params.iter().enumerate().map(|(k, p)| Contribution { client: k, weight: raw[k] / total, params: p }).collect();
        let mut shuffled = contribs.clone();
        RngStream::new(seed, 0, 0, "perm").shuffle(&mut shuffled);
        let a = server_aggregate_fedavg(&contribs);
        let b = server_aggregate_fedavg(&shuffled);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "ordering changed the outcome"),
        }
    }
}

#[test]
fn fedavg_and_scaffold_reach_weighted_optimum_two_clients() {
    let objs = quad(&[vec![1.0, -1.0], vec![4.0, 2.0]]);
    let weights = [0.3, 0.7];
    let optimum = [0.3 * 1.0 + 0.7 * 4.0, 0.3 * -1.0 + 0.7 * 2.0];
    for kind in [StrategyKind::Fedavg, StrategyKind::Scaffold] {
        let state = run(kind, &objs, &weights, &LOCAL, 200);
        for (g, o) in w(&state.global).iter().zip(optimum) {
            assert!((g - o).abs() < 1e-4, "{g} vs {o}");
        }
    }
}

#[test]
fn scaffold_single_client_server_variate_equals_client_variate() {
    let objs = quad(&[vec![2.0, -3.0]]);
    let state = run(StrategyKind::Scaffold, &objs, &[1.0], &LOCAL, 1);
    let cv = state.control.as_ref().unwrap();
    assert_eq!(cv.server, cv.clients[0]);
}

#[test]
fn scaffold_server_variate_is_weighted_mean_of_client_variates() {
    let objs = quad(&[vec![1.0], vec![-2.0], vec![5.0], vec![0.5]]);
    let weights = [0.1, 0.2, 0.3, 0.4];
    let state = run(StrategyKind::Scaffold, &objs, &weights, &LOCAL, 4);
    let cv = state.control.as_ref().unwrap();
    let mean: f64 = cv.clients.iter().zip(weights).map(|(c, p)| p * w(c)[0]).sum();
    assert!((w(&cv.server)[0] - mean).abs() < 1e-12);
}

#[test]
fn fedprox_large_mu_pins_local_model_to_global() {
    let objs = quad(&[vec![3.0, -2.0], vec![-1.0, 4.0]]);
    let local = LocalConfig {
        epochs: 1,
        lr: 1e-7,
        batch_size: 5,
    };
    let state = run(StrategyKind::Fedprox { mu: 1e6 }, &objs, &[0.5, 0.5], &local, 1);
    assert!(w(&state.global).iter().all(|v| v.abs() < 1e-3));
}

#[test]
fn pfedme_inner_solve_matches_closed_form() {
    let obj = QuadraticObjective {
        target: vec![2.0, -1.0],
        samples: 4,
    };
    let global = QuadraticObjective::params(vec![0.5, 0.5]);
    for lambda in [0.0, 0.5, 2.0, 15.0] {
        let local = LocalConfig {
            epochs: 1,
            lr: 0.0,
            batch_size: 4,
        };
        let mut rng = RngStream::new(0, 0, 0, "pfedme");
        let (w_out, theta, _) =
            pfedme_local(&obj, &global, lambda, 4000, 0.01, &local, &mut rng, Ctx { round: 1, client: 0 }).unwrap();
        assert_eq!(w_out, global);
        for (t, (a, g)) in w(&theta).iter().zip(obj.target.iter().zip(w(&global))) {
            let expected = (2.0 * a + lambda * g) / (2.0 + lambda);
            assert!((t - expected).abs() < 1e-6, "lambda {lambda}: {t} vs {expected}");
        }
    }
}

#[test]
fn pfedme_inner_objective_is_non_increasing() {
    let obj = QuadraticObjective {
        target: vec![1.5],
        samples: 4,
    };
    let global = scalar(-1.0);
    let lambda = 1.0;
    let local = LocalConfig {
        epochs: 1,
        lr: 0.0,
        batch_size: 4,
    };
    let mut prev = f64::INFINITY;
    for steps in 1..30 {
        let mut rng = RngStream::new(0, 0, 0, "pfedme");
        let (_, theta, _) = pfedme_local(&obj, &global, lambda, steps, 0.05, &local, &mut rng, Ctx { round: 1, client: 0 }).unwrap();
        let t = w(&theta)[0];
        let value = (t - 1.5) * (t - 1.5) + lambda / 2.0 * (t + 1.0) * (t + 1.0);
        assert!(value <= prev + 1e-15);
        prev = value;
    }
}

#[test]
fn ditto_global_track_ignores_lambda_and_large_lambda_pins_personal() {
    let objs = quad(&[vec![3.0], vec![-1.0]]);
    let weights = [0.5, 0.5];
    let fedavg = run(StrategyKind::Fedavg, &objs, &weights, &LOCAL, 5);
    for lambda in [0.0, 0.1, 10.0] {
        let ditto = run(StrategyKind::Ditto { lambda }, &objs, &weights, &LOCAL, 5);
        assert_eq!(ditto.global, fedavg.global);
    }
    let local = LocalConfig {
        epochs: 1,
        lr: 1e-7,
        batch_size: 5,
    };
    let ditto = run(StrategyKind::Ditto { lambda: 1e6 }, &objs, &weights, &local, 3);
    for p in &ditto.personal {
        assert!((w(p)[0] - w(&ditto.global)[0]).abs() < 1e-3);
    }
}

#[test]
fn finetune_with_zero_epochs_returns_global() {
    let obj = QuadraticObjective {
        target: vec![1.0, 2.0],
        samples: 6,
    };
    let global = QuadraticObjective::params(vec![0.3, -0.2]);
    let mut rng = RngStream::new(0, 0, 0, "ft");
    let out = local_finetune(&global, &obj, 0, &LOCAL, &mut rng, Ctx { round: 0, client: 0 }).unwrap();
    assert_eq!(out, global);
}

#[test]
fn finetune_loss_is_non_increasing_on_convex_toy() {
    let obj = QuadraticObjective {
        target: vec![1.0, 2.0],
        samples: 6,
    };
    let global = QuadraticObjective::params(vec![-2.0, 5.0]);
    let mut prev = obj.loss(&global);
    for epochs in 1..10 {
        let mut rng = RngStream::new(0, 0, 0, "ft");
        let out = local_finetune(&global, &obj, epochs, &LOCAL, &mut rng, Ctx { round: 0, client: 0 }).unwrap();
        let l = obj.loss(&out);
        assert!(l <= prev + 1e-15);
        prev = l;
    }
}

#[test]
fn finetuned_models_are_locally_tested_only() {
    let objs = quad(&[vec![3.0], vec![-1.0]]);
    let state = run(StrategyKind::Finetune { post_epochs: 2 }, &objs, &[0.5, 0.5], &LOCAL, 3);
    match state.eval_models().unwrap() {
        EvalModels::LocallyTested(models) => assert_eq!(models.len(), 2),
        other => panic!("unexpected eval models {other:?}"),
    }
}

#[test]
fn personalization_never_hurts_convex_toy_locally() {
    let objs = quad(&[vec![2.0, 0.0], vec![-1.0, 3.0], vec![0.5, -2.0], vec![4.0, 1.0]]);
    let weights = [0.25; 4];
    let local_loss = |m: &EvalModels| -> f64 { objs.iter().enumerate().map(|(k, o)| weights[k] * o.loss(m.for_client(k))).sum() };
    let base = local_loss(&run(StrategyKind::Fedavg, &objs, &weights, &LOCAL, 150).eval_models().unwrap());
    for kind in [
        StrategyKind::Fedprox { mu: 0.1 },
        StrategyKind::Scaffold,
        StrategyKind::Ditto { lambda: 0.1 },
        StrategyKind::Finetune { post_epochs: 3 },
    ] {
        let name = kind.name();
        let l = local_loss(&run(kind, &objs, &weights, &LOCAL, 150).eval_models().unwrap());
        assert!(l <= base + 1e-6, "{name}: {l} > {base}");
    }
}

/// Two-parameter model with a body and a head: `f = (b - a)^2 + (h - c)^2`.
struct SplitObjective {
    a: f64,
    c: f64,
}

impl Objective for SplitObjective {
    fn train_len(&self) -> usize {
        4
    }

    fn loss_grad(&self, theta: &ParamSet, _batch: &[usize], _rng: &mut RngStream) -> fedtrade_core::Result<fedtrade_core::strategies::StepOut> {
        let b = theta.get("body").unwrap().data()[0];
        let h = theta.get("head").unwrap().data()[0];
        let s = theta.get("stats").unwrap().data()[0];
        let mut grad = ParamSet::new();
        grad.insert("body", Partition::Body, Tensor::from_vec(vec![2.0 * (b - self.a)]));
        grad.insert("head", Partition::Head, Tensor::from_vec(vec![2.0 * (h - self.c)]));
        let mut stats = ParamSet::new();
        stats.insert("stats", Partition::NormStats, Tensor::from_vec(vec![0.5 * s + 0.5 * self.a]));
        Ok(fedtrade_core::strategies::StepOut {
            loss: (b - self.a).powi(2) + (h - self.c).powi(2),
            grad,
            running_stats: Some(stats),
        })
    }
}

fn split_theta() -> ParamSet {
    let mut p = ParamSet::new();
    p.insert("body", Partition::Body, Tensor::from_vec(vec![0.0]));
    p.insert("head", Partition::Head, Tensor::from_vec(vec![0.0]));
    p.insert("stats", Partition::NormStats, Tensor::from_vec(vec![0.0]));
    p
}

fn run_split(kind: StrategyKind, rounds: usize) -> StrategyState {
    let objs = [SplitObjective { a: 1.0, c: -1.0 }, SplitObjective { a: 3.0, c: 2.0 }];
    let dyn_objs: Vec<&dyn Objective> = objs.iter().map(|o| o as &dyn Objective).collect();
    let mut state = StrategyState::new(kind, split_theta(), 2).unwrap();
    for _ in 0..rounds {
        state.run_round(&dyn_objs, &[0.5, 0.5], &LOCAL, 1).unwrap();
    }
    state
}

#[test]
fn fedbn_keeps_norm_stats_local_and_shares_the_body() {
    let state = run_split(StrategyKind::Fedbn, 3);
    let models = state.eval_models().unwrap();
    let (m0, m1) = (models.for_client(0), models.for_client(1));
    assert_eq!(m0.get("body"), m1.get("body"));
    assert_ne!(m0.get("stats"), m1.get("stats"));
}

#[test]
fn fedper_head_never_reaches_the_server() {
    let state = run_split(StrategyKind::Fedper, 3);
    assert_eq!(state.global.get("head").unwrap().data()[0], 0.0);
    let models = state.eval_models().unwrap();
    assert_ne!(models.for_client(0).get("head"), models.for_client(1).get("head"));
    assert_eq!(models.for_client(0).get("body"), models.for_client(1).get("body"));
}

#[test]
fn identical_clients_make_fedbn_and_fedper_match_fedavg_body() {
    let objs = [SplitObjective { a: 1.0, c: -1.0 }, SplitObjective { a: 1.0, c: -1.0 }];
    let dyn_objs: Vec<&dyn Objective> = objs.iter().map(|o| o as &dyn Objective).collect();
    let mut results = Vec::new();
    for kind in [StrategyKind::Fedavg, StrategyKind::Fedbn, StrategyKind::Fedper] {
        let mut state = StrategyState::new(kind, split_theta(), 2).unwrap();
        for _ in 0..3 {
            state.run_round(&dyn_objs, &[0.5, 0.5], &LOCAL, 1).unwrap();
        }
        results.push(state.eval_models().unwrap().for_client(0).get("body").unwrap().clone());
    }
    assert_eq!(results[0], results[1]);
    assert_eq!(results[0], results[2]);
}
