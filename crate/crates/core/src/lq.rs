//! Finite- and infinite-horizon linear-quadratic solvers.
//!
//! The finite-horizon recursion starts from `P_0 = 0`:
//!
//! ```text
//! P_{k+1} = A'P_k A - A'P_k B (B'P_k B + R)^-1 B'P_k A + Q
//! ```
//!
//! so `x' P_T x` is the optimal cost of `sum_{k=0}^{T-1} x_k'Q x_k + u_k'R u_k`
//! with no terminal penalty. The first input of that problem is `-K_{T-1} x`
//! with `K_k = (B'P_k B + R)^-1 B'P_k A`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, max_abs, spd_solve, symmetrize};
use crate::mpc::{ProfileSchedule, TrajectoryRecord};
use crate::plant::DiscretePlant;

/// Condition-number ceiling for `B'PB + R` and the dense normal equations.
pub const MAX_CONDITION: f64 = 1e12;
pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 1_000_000;

/// Stacked quadratic weights `Q = diag(Q^1..Q^N)`, `R = diag(R^1..R^N)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        if !linalg::is_symmetric(&q, 1e-12) || !linalg::is_symmetric(&r, 1e-12) {
            return Err(Error::invalid("weights", "Q and R must be symmetric"));
        }
        if linalg::min_eigenvalue(&q) < -1e-10 {
            return Err(Error::invalid("Q", "must be positive semidefinite"));
        }
        if r.nrows() > 0 && linalg::min_eigenvalue(&r) <= 0.0 {
            return Err(Error::invalid("R", "must be positive definite"));
        }
        Ok(CostWeights { q, r })
    }

    pub fn check_plant(&self, plant: &DiscretePlant) -> Result<()> {
        if self.q.nrows() != plant.state_dim() || self.r.nrows() != plant.input_dim() {
            return Err(Error::Dimension(format!(
                "weights {}x{} vs plant with {} states, {} inputs",
                self.q.nrows(),
                self.r.nrows(),
                plant.state_dim(),
                plant.input_dim()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, q_factor: f64, r_factor: f64) -> Self {
        CostWeights { q: &self.q * q_factor, r: &self.r * r_factor }
    }
}

/// Cost matrices `P_0..P_T` and gains `K_0..K_{T-1}` of one Riccati sweep.
#[derive(Clone, Debug)]
pub struct RiccatiLadder {
    pub costs: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
}

impl RiccatiLadder {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// `P_T`, the optimal T-step cost matrix.
    pub fn terminal(&self) -> &DMatrix<f64> {
        self.costs.last().expect("ladder always holds P_0")
    }

    /// Gain applied to the current state by the T-step open-loop optimizer.
    pub fn first_gain(&self) -> &DMatrix<f64> {
        self.gains.last().expect("ladder has horizon >= 1")
    }
}

/// One Riccati step from `p`, returning `(P_next, K)` where `K` is the gain built from `p`.
pub fn riccati_step(plant: &DiscretePlant, w: &CostWeights, p: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = &plant.a;
    let b = &plant.b;
    let pa = p * a;
    let bt_pa = b.transpose() * &pa;
    let s = b.transpose() * p * b + &w.r;
    let gain = spd_solve(&s, &bt_pa, MAX_CONDITION)?;
    let mut next = a.transpose() * &pa - bt_pa.transpose() * &gain + &w.q;
    symmetrize(&mut next);
    Ok((next, gain))
}

pub fn riccati_finite(plant: &DiscretePlant, w: &CostWeights, horizon: usize) -> Result<RiccatiLadder> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    w.check_plant(plant)?;
    let n = plant.state_dim();
    let mut costs = Vec::with_capacity(horizon + 1);
    let mut gains = Vec::with_capacity(horizon);
    costs.push(DMatrix::zeros(n, n));
    for _ in 0..horizon {
        let (next, gain) = riccati_step(plant, w, costs.last().unwrap())?;
        costs.push(next);
        gains.push(gain);
    }
    Ok(RiccatiLadder { costs, gains })
}

/// Just `P_T` and the first-input gain, without keeping the ladder.
pub fn riccati_terminal(plant: &DiscretePlant, w: &CostWeights, horizon: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    w.check_plant(plant)?;
    let n = plant.state_dim();
    let mut p = DMatrix::zeros(n, n);
    let mut gain = DMatrix::zeros(plant.input_dim(), n);
    for _ in 0..horizon {
        let (next, g) = riccati_step(plant, w, &p)?;
        p = next;
        gain = g;
    }
    Ok((p, gain))
}

#[derive(Clone, Debug)]
pub struct DareSolution {
    pub cost: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub iterations: usize,
}

/// Iterate the Riccati recursion from zero until successive iterates differ
/// by less than `tol` in max-abs norm.
pub fn dare_fixed_point(plant: &DiscretePlant, w: &CostWeights, tol: f64) -> Result<DareSolution> {
    dare_fixed_point_capped(plant, w, tol, DARE_MAX_ITER)
}

pub fn dare_fixed_point_capped(
    plant: &DiscretePlant,
    w: &CostWeights,
    tol: f64,
    max_iter: usize,
) -> Result<DareSolution> {
    w.check_plant(plant)?;
    let n = plant.state_dim();
    let mut p = DMatrix::zeros(n, n);
    let mut step = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, _) = riccati_step(plant, w, &p)?;
        step = max_abs(&(&next - &p));
        p = next;
        if !step.is_finite() {
            break;
        }
        if step < tol {
            let (_, gain) = riccati_step(plant, w, &p)?;
            return Ok(DareSolution { cost: p, gain, iterations: it });
        }
    }
    Err(Error::Divergence { iterations: max_iter, residual: step })
}

/// `max |Ric(P) - P|`.
pub fn dare_residual(plant: &DiscretePlant, w: &CostWeights, p: &DMatrix<f64>) -> Result<f64> {
    let (next, _) = riccati_step(plant, w, p)?;
    Ok(max_abs(&(next - p)))
}

#[derive(Clone, Debug)]
pub struct OpenLoopSolution {
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
}

/// Dense oracle for the T-step problem.
///
/// Writes `x_k = A^k x0 + sum_{j<k} A^{k-1-j} B u_j`, stacks the cost as one
/// quadratic `U'HU + 2U'f + c` in `U = (u_0..u_{T-1})` and solves `HU = -f`.
/// The returned cost is re-evaluated by forward simulation of the minimizer.
pub fn brute_force_open_loop(
    plant: &DiscretePlant,
    w: &CostWeights,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<OpenLoopSolution> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    w.check_plant(plant)?;
    let n = plant.state_dim();
    let m = plant.input_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has {} entries, plant has {n} states", x0.len())));
    }
    // powers[k] = A^k
    let mut powers = Vec::with_capacity(horizon);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..horizon {
        let next = &plant.a * &powers[k - 1];
        powers.push(next);
    }
    let mut gamma = DMatrix::zeros(n * horizon, m * horizon);
    for k in 1..horizon {
        for j in 0..k {
            let blk = &powers[k - 1 - j] * &plant.b;
            gamma.view_mut((k * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    let mut free = DVector::zeros(n * horizon);
    for k in 0..horizon {
        free.rows_mut(k * n, n).copy_from(&(&powers[k] * x0));
    }
    let q_bar = linalg::block_diag(&vec![w.q.clone(); horizon]);
    let r_bar = linalg::block_diag(&vec![w.r.clone(); horizon]);
    let gt_q = gamma.transpose() * &q_bar;
    let h = &gt_q * &gamma + r_bar;
    let f = &gt_q * &free;
    let u = if m * horizon == 0 {
        DVector::zeros(0)
    } else {
        let rhs = DMatrix::from_column_slice(f.len(), 1, (-f).as_slice());
        spd_solve(&h, &rhs, MAX_CONDITION)?.column(0).into_owned()
    };
    let inputs: Vec<DVector<f64>> = (0..horizon).map(|k| u.rows(k * m, m).into_owned()).collect();
    let mut x = x0.clone();
    let mut cost = 0.0;
    for uk in &inputs {
        cost += linalg::quad_form(&w.q, &x) + linalg::quad_form(&w.r, uk);
        x = &plant.a * &x + &plant.b * uk;
    }
    Ok(OpenLoopSolution { inputs, cost })
}

/// Per-agent realized totals `J^i` and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentCosts {
    pub per_agent: Vec<f64>,
    pub total: f64,
}

/// Re-evaluate `J^i = sum_t c_t^i(x_t^i, u_t^i)` over the recorded window under `truth`.
pub fn evaluate_agent_costs(traj: &TrajectoryRecord, truth: &ProfileSchedule) -> Result<AgentCosts> {
    let n_agents = truth.num_agents();
    if traj.partition.num_agents() != n_agents {
        return Err(Error::Dimension(format!(
            "trajectory has {} agents, profile has {n_agents}",
            traj.partition.num_agents()
        )));
    }
    let mut per_agent = vec![0.0; n_agents];
    for t in 0..traj.steps() {
        let costs = truth.at(t).stage_costs(&traj.partition, &traj.states[t], &traj.inputs[t])?;
        for (acc, c) in per_agent.iter_mut().zip(costs) {
            *acc += c;
        }
    }
    let total = per_agent.iter().sum();
    Ok(AgentCosts { per_agent, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, b: f64) -> DiscretePlant {
        DiscretePlant::single_agent(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b)).unwrap()
    }

    fn unit_weights() -> CostWeights {
        CostWeights::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    #[test]
    fn one_step_ladder_is_q() {
        let l = riccati_finite(&scalar(1.0, 1.0), &unit_weights(), 1).unwrap();
        assert_eq!(l.costs[0][(0, 0)], 0.0);
        assert!((l.terminal()[(0, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(l.first_gain()[(0, 0)], 0.0);
    }

    #[test]
    fn two_step_ladder_by_hand() {
        let l = riccati_finite(&scalar(1.0, 1.0), &unit_weights(), 2).unwrap();
        assert!((l.terminal()[(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_rejected() {
        assert!(riccati_finite(&scalar(1.0, 1.0), &unit_weights(), 0).is_err());
    }

    #[test]
    fn deadbeat_dare() {
        let w = CostWeights::new(DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 0.2)).unwrap();
        let sol = dare_fixed_point(&scalar(0.0, 1.0), &w, 1e-12).unwrap();
        assert!((sol.cost[(0, 0)] - 3.0).abs() < 1e-15);
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn golden_ratio_dare() {
        let sol = dare_fixed_point(&scalar(1.0, 1.0), &unit_weights(), 1e-13).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.cost[(0, 0)] - phi).abs() < 1e-12);
    }

    #[test]
    fn unstabilizable_dare_diverges() {
        let err = dare_fixed_point_capped(&scalar(1.5, 0.0), &unit_weights(), 1e-10, 500).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn oracle_zero_state() {
        let sol = brute_force_open_loop(&scalar(1.0, 1.0), &unit_weights(), &DVector::zeros(1), 4).unwrap();
        assert_eq!(sol.cost, 0.0);
        assert!(sol.inputs.iter().all(|u| u[0] == 0.0));
    }

    #[test]
    fn oracle_matches_hand_value() {
        let sol = brute_force_open_loop(&scalar(1.0, 1.0), &unit_weights(), &DVector::from_element(1, 1.0), 2).unwrap();
        assert!((sol.cost - 1.5).abs() < 1e-14);
        assert!((sol.inputs[0][0] + 0.5).abs() < 1e-14);
        assert!(sol.inputs[1][0].abs() < 1e-14);
    }

    #[test]
    fn weights_reject_indefinite_r() {
        assert!(CostWeights::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 0.0)).is_err());
        assert!(CostWeights::new(DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1)).is_err());
    }
}
