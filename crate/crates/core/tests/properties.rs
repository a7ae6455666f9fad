use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use vcgmpc::linalg::{min_eigenvalue, quad_form};
use vcgmpc::lq::{self, CostWeights};
use vcgmpc::plant::{self, AreaParams, DiscretePlant, NetworkModel, TieLine};

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * m).prop_map(move |v| DMatrix::from_vec(n, m, v))
}

/// Random `(plant, weights, x0, T)` with `n <= 4`, `m <= 2`, `T <= 10`.
fn lq_problem() -> impl Strategy<Value = (DiscretePlant, CostWeights, DVector<f64>, usize)> {
    (1usize..=4, 1usize..=2, 1usize..=10).prop_flat_map(|(n, m, t)| {
        (matrix(n, n), matrix(n, m), matrix(n, n), matrix(m, m), prop::collection::vec(-1.0f64..1.0, n)).prop_map(
            move |(mut a, b, lq_, lr, x0)| {
                let row_sum = a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max);
                if row_sum > 1.3 {
                    a *= 1.3 / row_sum;
                }
                let q = &lq_ * lq_.transpose() + DMatrix::identity(n, n) * 0.1;
                let r = &lr * lr.transpose() + DMatrix::identity(m, m) * 0.1;
                (
                    DiscretePlant::single_agent(a, b).unwrap(),
                    CostWeights::new(q, r).unwrap(),
                    DVector::from_vec(x0),
                    t,
                )
            },
        )
    })
}

fn area() -> impl Strategy<Value = AreaParams> {
    (1.0f64..10.0, 0.5f64..5.0, 5.0f64..60.0, 0.01f64..0.1, 5.0f64..60.0)
        .prop_map(|(m, d, tch, r, tg)| AreaParams::new(m, d, tch, r, tg).unwrap())
}

fn network() -> impl Strategy<Value = NetworkModel> {
    (prop::collection::vec(area(), 1..=3), 0.1f64..3.0).prop_map(|(areas, k)| {
        let tie_lines = (1..areas.len()).map(|i| TieLine { area_a: i - 1, area_b: i, stiffness: k }).collect();
        NetworkModel { areas, tie_lines }
    })
}

fn taylor_exp(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..60 {
        term = &term * m / k as f64;
        sum += &term;
    }
    sum
}

fn rel_max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn riccati_matches_dense_oracle((plant, w, x0, t) in lq_problem()) {
        let (p, _) = lq::riccati_terminal(&plant, &w, t).unwrap();
        let oracle = lq::brute_force_open_loop(&plant, &w, &x0, t).unwrap();
        let riccati = quad_form(&p, &x0);
        prop_assert!((riccati - oracle.cost).abs() <= 1e-8 * oracle.cost.abs().max(1e-12));
        // The oracle's first input is the receding-horizon input.
        let gain = lq::riccati_finite(&plant, &w, t).unwrap().first_gain().clone();
        let u0 = -(gain * &x0);
        prop_assert!((&u0 - &oracle.inputs[0]).amax() <= 1e-7 * (1.0 + u0.amax()));
    }

    #[test]
    fn riccati_ladder_is_monotone((plant, w, _x0, t) in lq_problem()) {
        let ladder = lq::riccati_finite(&plant, &w, t + 2).unwrap();
        for k in 0..ladder.horizon() {
            let diff = &ladder.costs[k + 1] - &ladder.costs[k];
            let scale = ladder.costs[k + 1].amax().max(1.0);
            prop_assert!(min_eigenvalue(&diff) >= -1e-10 * scale, "P_{} < P_{}", k + 1, k);
        }
    }

    #[test]
    fn zoh_matches_series_and_is_a_semigroup(net in network(), dt1 in 0.01f64..0.3, dt2 in 0.01f64..0.3) {
        let cont = plant::assemble_network(&net).unwrap();
        let d1 = plant::discretize(&cont, dt1).unwrap();
        let d2 = plant::discretize(&cont, dt2).unwrap();
        let d12 = plant::discretize(&cont, dt1 + dt2).unwrap();
        prop_assert!(rel_max_diff(&d1.a, &taylor_exp(&(&cont.a * dt1))) < 1e-10);
        prop_assert!(rel_max_diff(&(&d2.a * &d1.a), &d12.a) < 1e-10);
        // B(dt1 + dt2) = A(dt2) B(dt1) + B(dt2)
        prop_assert!(rel_max_diff(&(&d2.a * &d1.b + &d2.b), &d12.b) < 1e-9);
    }

    #[test]
    fn zoh_maps_eigenvalues_through_exp(net in network(), dt in 0.01f64..0.5) {
        let cont = plant::assemble_network(&net).unwrap();
        let disc = plant::discretize(&cont, dt).unwrap();
        let mut expected: Vec<f64> = cont.a.complex_eigenvalues().iter().map(|l| (l.re * dt).exp()).collect();
        let mut actual: Vec<f64> = disc.a.complex_eigenvalues().iter().map(|l| l.norm()).collect();
        expected.sort_by(f64::total_cmp);
        actual.sort_by(f64::total_cmp);
        for (e, a) in expected.iter().zip(&actual) {
            prop_assert!((e - a).abs() < 1e-8, "|exp(lambda dt)| = {e}, eig(A_d) modulus {a}");
        }
    }
}

#[test]
fn benchmark_zoh_matches_series_to_1e10() {
    let cont = plant::assemble_network(&NetworkModel::two_area_benchmark()).unwrap();
    let disc = plant::discretize(&cont, 0.1).unwrap();
    assert!((&disc.a - taylor_exp(&(&cont.a * 0.1))).amax() < 1e-10);
}
