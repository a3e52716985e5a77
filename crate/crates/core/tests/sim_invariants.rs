mod common;

use std::path::Path;

use gridbid::grid::GridTopology;
use gridbid::market::{clear_market, compute_reward, ClearingResult};
use gridbid::rl::Method;
use gridbid::sim::{
    apply_fault_scenario, compute_metrics, run_evaluation, run_training, run_training_with,
    Scenario, SimError,
};

fn small_scenario(method: Method, episodes: usize, steps: usize) -> Scenario {
    let topo = GridTopology::load_case(common::data_path("data/ieee30.case")).unwrap();
    let mut s = Scenario::new("small", topo, common::ieee30_units(), method);
    s.training.episodes = episodes;
    s.training.steps_per_episode = steps;
    s.training.agent.batch_size = 8;
    s.demand.jitter_sigma = 5.0;
    s.set_seed(3);
    s
}

#[test]
fn one_clearing_per_step_and_stored_rewards_match() {
    let (m, t) = (3, 25);
    let scenario = small_scenario(Method::Gcn, m, t);
    let mut cleared: Vec<(Vec<f64>, ClearingResult)> = Vec::new();
    let out = run_training_with(&scenario, |units, bids, d| {
        let r = clear_market(units, bids, d)?;
        cleared.push((bids.to_vec(), r.clone()));
        Ok(r)
    })
    .unwrap();
    assert_eq!(cleared.len(), m * t);

    let flat: Vec<_> = out.logs.iter().flat_map(|l| &l.steps).collect();
    assert_eq!(flat.len(), m * t);
    for (step, (bids, r)) in flat.iter().zip(&cleared) {
        assert_eq!(&step.bids, bids);
        assert_eq!(step.price, r.price);
        assert_eq!(step.dispatch, r.dispatch);
    }

    for agent in &out.agents {
        let records = agent.buffer.records();
        assert_eq!(records.len(), m * t);
        let u = &scenario.units[agent.unit];
        for (i, (rec, (bids, r))) in records.iter().zip(&cleared).enumerate() {
            assert_eq!(rec.action, bids[agent.unit]);
            assert_eq!(
                rec.reward,
                compute_reward(u, r.price, r.dispatch[agent.unit])
            );
            assert_eq!(rec.next_state.prev_price, r.price);
            assert_eq!(rec.terminal, i % t == t - 1);
        }
    }
}

#[test]
fn episode_accounting_partitions_the_horizon() {
    let (m, t) = (4, 7);
    let out = run_training(&small_scenario(Method::Mlp, m, t)).unwrap();
    assert_eq!(out.logs.len(), m);
    let times: Vec<usize> = out
        .logs
        .iter()
        .flat_map(|l| l.steps.iter().map(|s| s.t))
        .collect();
    assert_eq!(times, (1..=m * t).collect::<Vec<_>>());
    for (i, log) in out.logs.iter().enumerate() {
        assert_eq!(log.episode, i + 1);
        assert_eq!(log.steps.len(), t);
    }
}

#[test]
fn metrics_match_streaming_aggregates_and_hand_sums() {
    let out = run_training(&small_scenario(Method::Gcn, 3, 20)).unwrap();
    let metrics = compute_metrics(&out.logs, None);
    for (log, em) in out.logs.iter().zip(&metrics.episodes) {
        let n = log.steps.len() as f64;
        for u in 0..em.unit_avg_profit.len() {
            let hand: f64 = log.steps.iter().map(|s| s.rewards[u]).sum::<f64>() / n;
            let bid: f64 = log.steps.iter().map(|s| s.bids[u]).sum::<f64>() / n;
            assert!((em.unit_avg_profit[u] - hand).abs() < 1e-9);
            assert!((em.unit_avg_profit[u] - log.unit_avg_profit[u]).abs() < 1e-9);
            assert!((em.unit_avg_bid[u] - bid).abs() < 1e-9);
            assert!((em.unit_avg_bid[u] - log.unit_avg_bid[u]).abs() < 1e-9);
        }
        let overall = em.unit_avg_profit.iter().sum::<f64>() / em.unit_avg_profit.len() as f64;
        assert!((em.avg_profit - overall).abs() < 1e-9);
    }
    let fixed: Vec<f64> = vec![10.0; 6];
    let net = compute_metrics(&out.logs, Some(&fixed));
    for (a, b) in metrics.episodes.iter().zip(&net.episodes) {
        assert!((a.avg_profit - b.avg_profit - 10.0).abs() < 1e-9);
    }
}

#[test]
fn agent_seed_changes_leave_demand_alone() {
    let base = small_scenario(Method::Gcn, 2, 15);
    let mut other = base.clone();
    other.seeds.agent_overrides.insert(0, 12345);
    let a = run_training(&base).unwrap();
    let b = run_training(&other).unwrap();
    let demand = |o: &gridbid::sim::TrainingOutput| -> Vec<f64> {
        o.logs
            .iter()
            .flat_map(|l| l.steps.iter().map(|s| s.demand))
            .collect()
    };
    assert_eq!(demand(&a), demand(&b));
    let bids = |o: &gridbid::sim::TrainingOutput| -> Vec<f64> {
        o.logs
            .iter()
            .flat_map(|l| l.steps.iter().map(|s| s.bids[0]))
            .collect()
    };
    assert_ne!(bids(&a), bids(&b));
}

#[test]
fn demand_stays_feasible() {
    let s = small_scenario(Method::Gcn, 1, 1);
    let lo: f64 = s.units.iter().map(|u| u.g_min).sum();
    let hi: f64 = s.units.iter().map(|u| u.g_max).sum();
    let mut profile = s.demand.clone();
    profile.jitter_sigma = 200.0;
    for t in 0..2000 {
        let d = profile.demand_at(t);
        assert!(d >= lo && d <= hi, "t={t}: {d}");
    }
}

#[test]
fn fixed_seed_runs_are_identical() {
    let s = small_scenario(Method::Gcn, 2, 15);
    let a = run_training(&s).unwrap();
    let b = run_training(&s).unwrap();
    assert_eq!(a.logs, b.logs);
    for (x, y) in a.agents.iter().zip(&b.agents) {
        assert_eq!(x.actor, y.actor);
        assert_eq!(x.critic, y.critic);
    }
}

#[test]
fn evaluation_is_frozen_and_transfers_to_39_buses() {
    let s = small_scenario(Method::Gcn, 1, 20);
    let out = run_training(&s).unwrap();
    let before: Vec<_> = out.agents.iter().map(|a| a.actor.flat_params()).collect();

    let logs = run_evaluation(&out.agents, out.normalization, &s).unwrap();
    assert!(logs
        .iter()
        .all(|l| l.unit_avg_profit.iter().all(|p| p.is_finite())));
    let again = run_evaluation(&out.agents, out.normalization, &s).unwrap();
    assert_eq!(logs, again);

    let target = Scenario::load(common::data_path("scenarios/39bus.cfg")).unwrap();
    assert_eq!(target.topology.n_buses(), 39);
    let mut target = target;
    target.training.steps_per_episode = 20;
    let logs = run_evaluation(&out.agents, out.normalization, &target).unwrap();
    assert_eq!(logs[0].unit_avg_profit.len(), target.units.len());
    let after: Vec<_> = out.agents.iter().map(|a| a.actor.flat_params()).collect();
    assert_eq!(before, after);
}

#[test]
fn mismatched_feature_width_is_rejected() {
    let gcn = run_training(&small_scenario(Method::Gcn, 1, 10)).unwrap();
    let mlp = small_scenario(Method::Mlp, 1, 10);
    let err = run_evaluation(&gcn.agents, gcn.normalization, &mlp).unwrap_err();
    assert!(matches!(err, SimError::Rl(_)), "{err:?}");
}

#[test]
fn shipped_scenarios_parse() {
    let caps = [
        (
            "scenarios/30bus_s1.cfg",
            vec![80.0, 80.0, 50.0, 50.0, 35.0, 40.0],
        ),
        (
            "scenarios/30bus_s2.cfg",
            vec![150.0, 150.0, 50.0, 50.0, 30.0, 40.0],
        ),
    ];
    for (path, expected) in caps {
        let s = Scenario::load(common::data_path(path)).unwrap();
        let got: Vec<f64> = s.units.iter().map(|u| u.g_max).collect();
        assert_eq!(got, expected, "{path}");
        assert_eq!(s.training.episodes, 50);
        assert_eq!(s.training.agent.gamma, 0.9);
        assert_eq!(s.training.agent.lr_critic, 0.1);
        assert_eq!(s.training.agent.lr_actor, 0.1);
    }
    for path in [
        "scenarios/30bus_s3.cfg",
        "scenarios/39bus.cfg",
        "scenarios/monopoly.cfg",
    ] {
        Scenario::load(common::data_path(path)).unwrap();
    }
}

#[test]
fn scenario_errors() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios");
    let cases = [
        "name = \"x\"",
        "name = \"x\"\n[topology]\ncase = \"../data/ieee30.case\"\n[units]\nfile = \"../data/ieee30_units.csv\"\ncapacity = [1, 2]",
        "name = \"x\"\n[topology]\ncase = \"../data/ieee30.case\"\n[units]\nfile = \"../data/ieee30_units.csv\"\nfixed_bids = { \"9\" = 1.0 }",
        "name = \"x\"\n[topology]\ncase = \"../data/ieee30.case\"\n[units]\nfile = \"../data/ieee30_units.csv\"\n[training]\nepisodes = 0",
        "name = \"x\"\n[topology]\ncase = \"../data/ieee30.case\"\n[units]\nfile = \"../data/ieee30_units.csv\"\n[training]\nbogus = 1",
        "name = \"x\"\n[topology]\ncase = \"missing.case\"\n[units]\nfile = \"../data/ieee30_units.csv\"",
    ];
    for text in cases {
        let r = Scenario::from_toml(text, &dir).and_then(|s| s.validate().map(|_| s));
        assert!(r.is_err(), "accepted:\n{text}");
    }
}

#[test]
fn fault_scenarios_remove_the_listed_lines() {
    let s = Scenario::load(common::data_path("scenarios/30bus_s1.cfg")).unwrap();
    let base = s.topology.lines().len();
    for (id, k) in [(3, 3), (5, 5), (10, 10)] {
        let f = apply_fault_scenario(&s, id).unwrap();
        assert_eq!(f.topology.lines().len(), base - k);
        assert_eq!(f.removed_lines.len(), k);
        for l in &f.removed_lines {
            assert!(s.topology.lines().contains(l) && !f.topology.lines().contains(l));
        }
    }
    assert!(matches!(
        apply_fault_scenario(&s, 7),
        Err(SimError::UnknownFault(7))
    ));
}
