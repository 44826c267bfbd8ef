mod common;

use nalgebra::{DMatrix, DVector};
use seqlqg::model::{validate, DelayPmf, SequenceConfig};
use seqlqg::network::fixtures;
use seqlqg::sim::{monte_carlo, run_episode, Controller, Setup};

#[test]
fn noiseless_perfect_link_follows_lqr_trajectory() {
    let mut scenario = common::benchmark(0, DelayPmf::perfect(), DelayPmf::perfect(), 40);
    scenario.plant.W = DMatrix::zeros(2, 2);
    scenario.plant.x0_cov = DMatrix::zeros(2, 2);
    let setup = Setup::new(scenario.validated().unwrap(), 12).unwrap();
    let trace = run_episode(&setup, Controller::Gains(&setup.schedule), 4).unwrap();

    let p = &setup.scenario.plant;
    let w = &setup.scenario.weights;
    let gains = common::lqr_gains(&p.A, &p.B, &w.Q, &w.R, &w.Q_terminal, w.horizon);
    let mut x = p.x0_mean.clone();
    for (k, step) in trace.steps.iter().enumerate() {
        assert!(common::vector_gap(&step.x, &x) < 1e-9, "step {k}");
        assert_eq!(step.theta, 0);
        let u = &gains[k] * &x;
        assert!(common::vector_gap(&step.u, &u) < 1e-9, "step {k}");
        x = &p.A * &x + &p.B * u;
    }
    assert!(common::vector_gap(&trace.terminal_state, &x) < 1e-9);
}

#[test]
fn dead_actuator_link_gives_open_loop_baseline() {
    let scenario = common::benchmark(2, DelayPmf::lossy(), fixtures::a_like(), 40);
    let setup = Setup::new(scenario, 12).unwrap();
    let closed = run_episode(&setup, Controller::Gains(&setup.schedule), 8).unwrap();
    let open = run_episode(&setup, Controller::DefaultInput, 8).unwrap();
    assert_eq!(closed.thetas(), vec![3; 40]);
    let states = |t: &seqlqg::sim::EpisodeTrace| t.steps.iter().map(|s| s.x.clone()).collect::<Vec<_>>();
    assert_eq!(states(&closed), states(&open));
    assert_eq!(closed.total_cost, open.total_cost);
}

#[test]
fn optimal_gains_beat_open_loop() {
    let scenario = common::benchmark(2, fixtures::a_like(), fixtures::a_like(), 40);
    let setup = Setup::new(scenario, 12).unwrap();
    let optimal = monte_carlo(&setup, Controller::Gains(&setup.schedule), 50, 3).unwrap();
    let open = monte_carlo(&setup, Controller::DefaultInput, 50, 3).unwrap();
    assert!(optimal.mean_cost < open.mean_cost / 10.0);
}

#[test]
fn doubling_runs_shrinks_standard_error() {
    let scenario = common::benchmark(1, fixtures::a_like(), fixtures::a_like(), 40);
    let setup = Setup::new(scenario, 12).unwrap();
    let small = monte_carlo(&setup, Controller::Gains(&setup.schedule), 200, 1).unwrap();
    let large = monte_carlo(&setup, Controller::Gains(&setup.schedule), 400, 1).unwrap();
    let ratio = large.std_error / small.std_error;
    let expected = 0.5f64.sqrt();
    assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio}");
}

#[test]
fn estimation_error_tracks_across_control_laws() {
    // Same seed and network, different gains: the error sequences agree up
    // to rounding of the input contributions.
    let scenario = common::benchmark(2, fixtures::b_like(), fixtures::b_like(), 40);
    let setup = Setup::new(scenario, 12).unwrap();
    let halved = setup.schedule.map_gains(|_, _, g| g * 0.5);
    let a = run_episode(&setup, Controller::Gains(&setup.schedule), 17).unwrap();
    let b = run_episode(&setup, Controller::Gains(&halved), 17).unwrap();
    assert_ne!(a.total_cost, b.total_cost);
    let d = setup.model.eta_dim();
    for (k, (ea, eb)) in a.estimation_errors(d).iter().zip(b.estimation_errors(d)).enumerate() {
        let scale = a.steps[k].x.amax().max(b.steps[k].x.amax()).max(1.0);
        assert!((ea - &eb).amax() <= 1e-12 * scale, "step {k}");
        assert!(ea.rows(2, d).iter().all(|v| *v == 0.0));
    }
}

#[test]
fn full_state_precise_sensor_tracks_the_plant() {
    let (mut plant, mut weights, _) = seqlqg::model::double_integrator_benchmark();
    plant.C = DMatrix::identity(2, 2);
    plant.V = DMatrix::identity(2, 2) * 1e-12;
    weights.horizon = 30;
    let seq = SequenceConfig::new(1, DVector::zeros(1));
    let scenario = validate(plant, weights, fixtures::a_like(), DelayPmf::perfect(), seq).unwrap();
    let setup = Setup::new(scenario, 12).unwrap();
    let trace = run_episode(&setup, Controller::Gains(&setup.schedule), 2).unwrap();
    for step in &trace.steps[1..] {
        assert!((&step.x - &step.x_hat).amax() < 1e-5, "step {}", step.k);
    }
}

#[test]
fn benchmark_episode_regulates_the_plant() {
    let scenario = common::benchmark(2, fixtures::a_like(), fixtures::a_like(), 40);
    let setup = Setup::new(scenario, 12).unwrap();
    let trace = run_episode(&setup, Controller::Gains(&setup.schedule), 1).unwrap();
    assert!(trace.steps[0].x[0] > 95.0);
    assert!(trace.terminal_state.amax() < 5.0, "{}", trace.terminal_state);
    assert!((trace.audit_total(&setup.scenario) - trace.total_cost).abs() < 1e-9 * trace.total_cost);
}
