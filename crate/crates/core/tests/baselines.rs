use netid_core::baselines::{direct_pem, ebdm, run_variant, MisoSpec, Problem, Variant, PEM_STARTS};
use netid_core::harness::simulate_replicate;
use netid_core::mcem::EstimatorConfig;
use netid_core::network::{node_set, NodeId, PredictorModel};
use netid_core::presets::{four_node_network, target_module, target_theta, MISSING, TARGET};

fn problem() -> Problem {
    Problem { target: TARGET, measured: node_set(&[1, 3, 4]), missing: MISSING }
}

#[test]
fn pem_recovers_target_without_output_noise() {
    let spec = four_node_network().with_noise_variances(&[0.05, 0.08, 0.0, 0.1]).unwrap();
    let signals = simulate_replicate(&spec, 300, 5).unwrap();
    let inputs = problem().direct_inputs(&spec, true);
    let miso = MisoSpec::from_network(&spec, TARGET.0, &inputs).unwrap();
    let res = direct_pem(&signals, &miso, 1).unwrap();
    assert!(res.cost < 1e-12, "cost {}", res.cost);
    let g = res.module_of(TARGET.1).unwrap();
    let est: Vec<f64> = g.num[1..].iter().chain(&g.den[1..]).copied().collect();
    for (a, b) in est.iter().zip(target_theta()) {
        assert!((a - b).abs() < 1e-6, "{est:?}");
    }
    let truth = target_module().impulse_response(50).unwrap();
    let fit = g.impulse_response(50).unwrap();
    assert!(truth.iter().zip(&fit).all(|(a, b)| (a - b).abs() < 1e-6));
}

#[test]
fn pem_cost_history_is_monotone() {
    let spec = four_node_network();
    let signals = simulate_replicate(&spec, 150, 9).unwrap();
    let inputs = problem().direct_inputs(&spec, false);
    let miso = MisoSpec::from_network(&spec, TARGET.0, &inputs).unwrap();
    let res = direct_pem(&signals, &miso, 3).unwrap();
    assert_eq!(res.start_costs.len(), PEM_STARTS);
    assert!(res.history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
    let best = res.start_costs.iter().copied().fold(f64::INFINITY, f64::min);
    assert!((res.cost - best).abs() <= 1e-12 * (1.0 + best));
    assert!(miso.is_admissible(&res.params));
}

#[test]
fn pem_rejects_inputs_outside_the_network() {
    let spec = four_node_network();
    assert!(MisoSpec::from_network(&spec, NodeId(3), &[NodeId(9)]).is_err());
}

#[test]
fn single_input_ebdm_runs() {
    let spec = four_node_network();
    let signals = simulate_replicate(&spec, 100, 4).unwrap();
    let model = PredictorModel::direct(4, TARGET, &[TARGET.1]).unwrap();
    let cfg = EstimatorConfig { l: 10, samples: 20, burn_in: 40, max_iters: 3, ..EstimatorConfig::default() };
    let res = ebdm(&signals, &model, &cfg).unwrap();
    assert_eq!(res.g_hat.len(), 100);
    assert_eq!(res.theta.len(), 4);
    assert!(res.w_m_hat.is_none());
    assert!(res.g_hat.iter().all(|x| x.is_finite()));
}

#[test]
fn ebdm_rejects_models_with_a_missing_node() {
    let spec = four_node_network();
    let signals = simulate_replicate(&spec, 60, 4).unwrap();
    let model = netid_core::network::build_predictor_model(&spec, TARGET, &node_set(&[1, 3, 4]), Some(MISSING), false)
        .unwrap();
    assert!(ebdm(&signals, &model, &EstimatorConfig::default()).is_err());
}

#[test]
fn every_variant_produces_a_full_estimate() {
    let spec = four_node_network();
    let signals = simulate_replicate(&spec, 80, 2).unwrap();
    let cfg = EstimatorConfig { l: 10, samples: 20, burn_in: 40, max_iters: 2, ..EstimatorConfig::default() };
    for v in Variant::ALL {
        let out = run_variant(v, &spec, &problem(), &signals, &cfg).unwrap();
        assert_eq!(out.variant, v);
        assert_eq!(out.theta.len(), 4, "{v}");
        assert_eq!(out.g_hat.len(), 80, "{v}");
        assert_eq!(out.w_m_hat.is_some(), v.reconstructs_missing(), "{v}");
    }
}

#[test]
fn direct_inputs_follow_the_target_predecessors() {
    let spec = four_node_network();
    let p = problem();
    assert_eq!(p.direct_inputs(&spec, true), vec![NodeId(1), NodeId(2), NodeId(4)]);
    assert_eq!(p.direct_inputs(&spec, false), vec![NodeId(1), NodeId(4)]);
}
