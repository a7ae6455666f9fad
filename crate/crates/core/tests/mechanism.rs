use nalgebra::{DMatrix, DVector};

use vcgmpc::bounds;
use vcgmpc::harness;
use vcgmpc::linalg::{block_diag, quad_form};
use vcgmpc::lq::{self, CostWeights};
use vcgmpc::mechanism::{self, GridSpec, TaxMode};
use vcgmpc::mpc::{self, Policy, ProfileSchedule, TypeStream};
use vcgmpc::plant::DiscretePlant;
use vcgmpc::{parse_scenario, Execution, Horizon, Scenario};

fn short(horizon: usize, steps: usize) -> Scenario {
    let mut s = Scenario::two_area_table1();
    s.horizon = Horizon::Finite(horizon);
    s.sim_steps = steps;
    s
}

/// Counterfactual built a second way: keep the full `B` with agent 0's column
/// zeroed (its input pinned at 0) and agent 0's state cost dropped.
#[test]
fn reduced_and_pinned_counterfactuals_agree() {
    let s = short(20, 300);
    let setup = s.mechanism().unwrap();
    let reduced = setup.counterfactual(0).unwrap();

    let p = &setup.plant;
    let mut b = p.b.clone();
    for c in p.partition.inputs[0].clone() {
        b.column_mut(c).fill(0.0);
    }
    let pinned = DiscretePlant::new(p.a.clone(), b, p.dt, p.partition.clone()).unwrap();
    let truth = setup.truth.at(0);
    let q_blocks: Vec<DMatrix<f64>> = truth
        .types()
        .iter()
        .enumerate()
        .map(|(i, t)| if i == 0 { DMatrix::zeros(4, 4) } else { t.q.clone() })
        .collect();
    let r_blocks: Vec<DMatrix<f64>> = truth.types().iter().map(|t| t.r.clone()).collect();
    let w = CostWeights::new(block_diag(&q_blocks), block_diag(&r_blocks)).unwrap();
    let (_, gain) = lq::riccati_terminal(&pinned, &w, 20).unwrap();

    let mut x = setup.x0.clone();
    for t in 0..setup.steps {
        let u = -(&gain * &x);
        assert!(u[0].abs() < 1e-14);
        let others: f64 = (1..2)
            .map(|j| {
                let xs = x.rows(4 * j, 4).into_owned();
                let us = u.rows(j, 1).into_owned();
                mechanism::stage_cost(&xs, &us, truth.agent(j)).unwrap()
            })
            .sum();
        assert!(
            (others - reduced.others_costs[t]).abs() <= 1e-10 * (1.0 + others),
            "step {t}: pinned {others}, reduced {}",
            reduced.others_costs[t]
        );
        x = &pinned.a * &x + &pinned.b * &u;
    }
}

#[test]
fn k_is_independent_of_the_excluded_report() {
    let s = short(10, 200);
    let setup = s.mechanism().unwrap();
    let (_, lie) = harness::case_profiles(&s).unwrap();
    let a = setup.counterfactual(0).unwrap();
    let b = mechanism::run_counterfactual(
        &setup.plant,
        &setup.x0,
        &ProfileSchedule::constant(lie),
        0,
        setup.policy,
        setup.steps,
    )
    .unwrap();
    assert_eq!(a.others_costs, b.others_costs);
}

#[test]
fn ledger_sums_to_externality() {
    let s = short(20, 300);
    let run = s.mechanism().unwrap().run(Execution::Sequential).unwrap();
    for i in 0..2 {
        let full: f64 = run.trajectory.stage_costs.iter().map(|c| c[1 - i]).sum();
        let without: f64 = run.counterfactuals[i].others_costs.iter().sum();
        assert!((run.ledger.total(i) - (full - without)).abs() < 1e-9);
        assert!((run.ledger.tax_to_go[i][0] - run.ledger.total(i)).abs() < 1e-9);
    }
}

#[test]
fn taxes_off_zero_the_ledger() {
    let mut s = short(20, 100);
    s.tax_mode = TaxMode::Off;
    let run = s.mechanism().unwrap().run(Execution::Parallel).unwrap();
    assert!(run.ledger.taxes.iter().flatten().all(|p| *p == 0.0));
    assert_eq!(run.net_costs, run.trajectory.totals());
}

#[test]
fn groves_identity_holds_for_scheduled_misreports() {
    let mut s = short(10, 300);
    s.envelope.delta = 0.5;
    let setup = s.mechanism().unwrap();
    let base = setup.truth.agent_stream(0).at(0).clone();
    let lie = base.scaled_diagonal(&[1.0, 1.0, 1.5, 1.0], &[1.0]).unwrap();
    let stream = TypeStream::from_segments(vec![(0, base), (50, lie)]).unwrap();
    for restart in [0, 40, 120] {
        let g = mechanism::incentive_gap(&setup, 0, &stream, restart).unwrap();
        assert!((g.gap - (g.truthful_social - g.deviation_social)).abs() < 1e-9);
    }
}

#[test]
fn inadmissible_grid_points_are_skipped() {
    let s = short(10, 100);
    let r = mechanism::misreport_search(&s.mechanism().unwrap(), 1, &GridSpec::default(), 0, Execution::Parallel).unwrap();
    assert_eq!(r.evaluated, 3usize.pow(5));
    assert_eq!(r.evaluated + r.skipped, 5usize.pow(5));
}

#[test]
fn sequential_and_parallel_searches_agree() {
    let s = short(10, 100);
    let setup = s.mechanism().unwrap();
    let grid = GridSpec::only(&[0.5, 1.0, 2.0]);
    let a = mechanism::misreport_search(&setup, 0, &grid, 0, Execution::Sequential).unwrap();
    let b = mechanism::misreport_search(&setup, 0, &grid, 0, Execution::Parallel).unwrap();
    assert_eq!(a.best.as_ref().map(|b| b.1.gap), b.best.as_ref().map(|b| b.1.gap));
    assert_eq!(a.best.map(|b| b.0), b.best.map(|b| b.0));
}

/// The doubling sum for a stationary gain matches a long simulation.
#[test]
fn policy_cost_matrix_matches_simulation() {
    let s = Scenario::two_area_table1();
    let plant = s.plant().unwrap();
    let truth = s.nominal_profile().unwrap();
    let w = truth.weights(&plant.partition).unwrap();
    for policy in [Policy::Lqr, Policy::RecedingHorizon(50)] {
        let gain = mpc::feedback_gain(&plant, &w, policy).unwrap();
        let p = bounds::policy_cost_matrix(&plant, &w, &gain).unwrap();
        let x0 = s.x0.clone();
        let mut x = x0.clone();
        let mut sum = 0.0;
        for _ in 0..200_000 {
            let u = -(&gain * &x);
            sum += quad_form(&w.q, &x) + quad_form(&w.r, &u);
            x = &plant.a * &x + &plant.b * &u;
        }
        let exact = quad_form(&p, &x0);
        assert!((exact - sum).abs() <= 1e-6 * exact, "{policy:?}: exact {exact}, simulated {sum}");
    }
}

#[test]
fn finite_window_cost_never_beats_the_window_optimum() {
    let s = short(50, 600);
    let plant = s.plant().unwrap();
    let truth = s.truth().unwrap();
    let traj = mpc::run_policy(&plant, &s.x0, &truth, &truth, s.horizon.policy(), s.sim_steps).unwrap();
    let w = truth.at(0).weights(&plant.partition).unwrap();
    let opt = quad_form(&lq::riccati_terminal(&plant, &w, s.sim_steps).unwrap().0, &s.x0);
    assert!(traj.total() >= opt - 1e-9);
}

#[test]
fn bundled_scenario_round_trips() {
    let s = Scenario::two_area_table1();
    assert_eq!(parse_scenario(&s.to_toml()).unwrap(), s);
}

#[test]
fn three_area_chain_runs_end_to_end() {
    let text = r#"
        [areas.1]
        inertia = 3.5
        damping = 2.0
        charging_time = 50.0
        droop = 0.03
        governor_time = 40.0
        [areas.2]
        inertia = 4.0
        damping = 2.75
        charging_time = 10.0
        droop = 0.07
        governor_time = 25.0
        [areas.3]
        inertia = 5.0
        damping = 1.5
        charging_time = 20.0
        droop = 0.05
        governor_time = 30.0
        [ties.1]
        areas = [1, 2]
        stiffness = 1.0
        [ties.2]
        areas = [2, 3]
        stiffness = 0.5
        [types.1]
        q = [10.0, 1.0, 500.0, 10.0]
        r = [0.1]
        [types.2]
        q = [10.0, 1.0, 500.0, 10.0]
        r = [0.1]
        [types.3]
        q = [5.0, 1.0, 200.0, 5.0]
        r = [0.2]
        [mpc]
        horizon = 20
        steps = 200
        [disturbance.3]
        omega = 0.05
    "#;
    let s = parse_scenario(text).unwrap();
    let r = harness::cmd_mechanism(&s, Execution::Parallel).unwrap();
    assert_eq!(r.costs.per_agent.len(), 3);
    let x0: DVector<f64> = r.trajectory.states[0].clone();
    assert_eq!(x0[8], 0.05);
    assert!(r.trajectory.states.last().unwrap()[8].abs() < 0.1 * x0[8]);
}
