use fedtrade_core::engine::{check_budget_parity, run_experiment, ExperimentConfig, POOLED};
use fedtrade_core::FedError;
use serde_json::json;

fn config(extra: serde_json::Value) -> ExperimentConfig {
    let mut v = json!({
        "federation": {"task": "classification", "samples_per_client": [40, 50, 40, 60], "height": 8, "width": 8,
                        "delta_style": 0.5, "delta_content": 0.5},
        "model": {"arch": "mlp_bn", "hidden": [8, 8]},
        "rounds": 4,
        "lr": 0.1,
        "batch_size": 16,
        "seed": 3
    });
    for (k, val) in extra.as_object().unwrap() {
        v[k] = val.clone();
    }
    serde_json::from_value(v).unwrap()
}

#[test]
fn locally_tested_rows_have_one_cell_per_client() {
    let out = run_experiment(&config(json!({"strategy": {"name": "fedper"}}))).unwrap();
    let clients: Vec<String> = out.table.rows.iter().filter(|r| r.metric == "kappa").map(|r| r.client.clone()).collect();
    assert_eq!(clients, vec!["0", "1", "2", "3"]);
    assert_eq!(out.rounds.len(), 4);
}

#[test]
fn globally_tested_baselines_have_one_pooled_cell() {
    for baseline in ["central_global", "fedavg_global"] {
        let out = run_experiment(&config(json!({"baseline": baseline}))).unwrap();
        let kappa: Vec<&str> = out.table.rows.iter().filter(|r| r.metric == "kappa").map(|r| r.client.as_str()).collect();
        assert_eq!(kappa, vec![POOLED], "{baseline}");
    }
}

#[test]
fn every_baseline_runs_and_fedavg_variants_share_a_model() {
    let mut models = Vec::new();
    for baseline in ["local_centralized", "central_global", "central_local", "fedavg_global", "fedavg_local"] {
        let out = run_experiment(&config(json!({"baseline": baseline}))).unwrap();
        assert!(out.table.rows.iter().all(|r| r.value.is_finite()));
        if baseline.starts_with("fedavg") {
            models.push(out.models);
        }
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn identical_configs_give_identical_results_and_hashes() {
    let a = config(json!({"strategy": {"name": "scaffold"}, "harmonize": {"kind": "adain"}}));
    let b = a.clone();
    assert_eq!(a.config_hash(), b.config_hash());
    let (ra, rb) = (run_experiment(&a).unwrap(), run_experiment(&b).unwrap());
    assert_eq!(ra.table.to_csv(), rb.table.to_csv());
    assert_eq!(ra.rounds, rb.rounds);
    let mut c = a.clone();
    c.lr = 0.05;
    assert_ne!(a.config_hash(), c.config_hash());
}

#[test]
fn mixed_budgets_are_rejected() {
    let a = config(json!({"strategy": {"name": "fedavg"}}));
    let mut b = a.clone();
    b.rounds = 5;
    assert!(check_budget_parity(&[&a, &a]).is_ok());
    assert!(check_budget_parity(&[&a, &b]).is_err());
}

#[test]
fn harmonization_with_personalization_needs_the_combine_flag() {
    let mixed = config(json!({"strategy": {"name": "ditto", "lambda": 0.1}, "harmonize": {"kind": "hist_sri"}}));
    assert!(mixed.validate().is_err());
    let mut allowed = mixed.clone();
    allowed.combine = true;
    assert!(allowed.validate().is_ok());
}

#[test]
fn strategy_and_baseline_are_exclusive() {
    let both = config(json!({"strategy": {"name": "fedavg"}, "baseline": "fedavg_local"}));
    assert!(both.validate().is_err());
    let neither = config(json!({}));
    assert!(neither.validate().is_err());
}

#[test]
fn aggressive_fedadam_is_reported_as_divergence() {
    let c = config(json!({"strategy": {"name": "fedadam", "eta": 10.0}, "rounds": 40}));
    match run_experiment(&c) {
        Err(FedError::Divergence { round, .. }) => assert!(round >= 1 && round <= 40),
        Err(other) => panic!("unexpected error {other}"),
        Ok(_) => panic!("eta = 10 should diverge"),
    }
}

#[test]
fn every_strategy_and_harmonizer_runs_on_segmentation() {
    let base = json!({
        "federation": {"task": "segmentation", "samples_per_client": [20, 20, 20, 20], "height": 8, "width": 8,
                        "delta_style": 0.5, "delta_content": 0.5},
        "model": {"arch": "tiny_convseg", "hidden": [4, 4]},
        "rounds": 2,
        "lr": 0.1,
        "batch_size": 8,
        "seed": 1
    });
    let methods = [
        json!({"strategy": {"name": "fedavg"}, "harmonize": {"kind": "augment"}}),
        json!({"strategy": {"name": "fedavg"}, "harmonize": {"kind": "hist_ari"}}),
        json!({"strategy": {"name": "fedavg"}, "harmonize": {"kind": "fda_sri", "beta": 0.1}}),
        json!({"strategy": {"name": "fedavg"}, "harmonize": {"kind": "mixstyle_input", "alpha": 0.1}}),
        json!({"strategy": {"name": "fedavg"}, "harmonize": {"kind": "mixstyle_feature", "alpha": 0.1}}),
        json!({"strategy": {"name": "fedprox", "mu": 0.01}}),
        json!({"strategy": {"name": "fedadam"}}),
        json!({"strategy": {"name": "fedrep"}}),
        json!({"strategy": {"name": "fedbn"}}),
        json!({"strategy": {"name": "pfedme"}}),
        json!({"strategy": {"name": "finetune"}}),
    ];
    for m in methods {
        let mut v = base.clone();
        for (k, val) in m.as_object().unwrap() {
            v[k] = val.clone();
        }
        let c: ExperimentConfig = serde_json::from_value(v).unwrap();
        let out = run_experiment(&c).unwrap_or_else(|e| panic!("{m}: {e}"));
        let dice: Vec<f64> = out.table.rows.iter().filter(|r| r.metric == "dice").map(|r| r.value).collect();
        assert_eq!(dice.len(), 4, "{m}");
        assert!(dice.iter().all(|v| (0.0..=1.0).contains(v)), "{m}");
    }
}
