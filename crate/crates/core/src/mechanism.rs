//! The VCG-style online mechanism wrapped around the MPC decision rule.
//!
//! Agent `i` pays `p_t^i = sum_{j != i} c_t^j(x_t^j, u_t^j) + K_t^i` at every
//! step, with `K_t^i = -sum_{j != i} c_t^j` evaluated along a counterfactual
//! run in which agent `i` is absent (its input pinned at zero and its cost
//! dropped from the objective). The counterfactual never reads agent `i`'s
//! reports, so `K^i` cannot be moved by them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bounds::AdmissibilityEnvelope;
use crate::error::{Error, Result};
use crate::mpc::{ClosedLoop, Policy, ProfileSchedule, TrajectoryRecord, TypeStream, TypeVector};
use crate::par::{self, Execution};
use crate::plant::DiscretePlant;

/// `x_i' Q^i x_i + u_i' R^i u_i`.
pub fn stage_cost(x_i: &DVector<f64>, u_i: &DVector<f64>, theta: &TypeVector) -> Result<f64> {
    if x_i.len() != theta.q.nrows() || u_i.len() != theta.r.nrows() {
        return Err(Error::Dimension(format!(
            "agent {} local state/input ({}, {}) vs type ({}, {})",
            theta.agent + 1,
            x_i.len(),
            u_i.len(),
            theta.q.nrows(),
            theta.r.nrows()
        )));
    }
    Ok(x_i.dot(&(&theta.q * x_i)) + u_i.dot(&(&theta.r * u_i)))
}

/// The world without agent `excluded`.
#[derive(Clone, Debug)]
pub struct CounterfactualRun {
    pub excluded_agent: usize,
    /// Inputs are stored in the full input space; the excluded slot is zero.
    /// The excluded agent's stage-cost column is not evaluated and reads 0.
    pub trajectory: TrajectoryRecord,
    /// `sum_{j != i} c_t^j` under the reported types, per step.
    pub others_costs: Vec<f64>,
}

/// Run the receding-horizon loop with agent `excluded`'s input column removed
/// from `B` and its cost removed from the objective.
///
/// `reported` must cover every agent; the entry for `excluded` is never read.
pub fn run_counterfactual(
    plant: &DiscretePlant,
    x0: &DVector<f64>,
    reported: &ProfileSchedule,
    excluded: usize,
    policy: Policy,
    steps: usize,
) -> Result<CounterfactualRun> {
    let n_agents = plant.partition.num_agents();
    if excluded >= n_agents {
        return Err(Error::IndexOutOfRange { what: "agent", index: excluded, len: n_agents });
    }
    let reduced = plant.without_agent_input(excluded)?;
    let trajectory = ClosedLoop { plant: &reduced, full_partition: &plant.partition, excluded: Some(excluded), policy }
        .run(x0, reported, reported, steps)?;
    let others_costs = trajectory
        .stage_costs
        .iter()
        .map(|c| c.iter().enumerate().filter(|(j, _)| *j != excluded).map(|(_, v)| v).sum())
        .collect();
    Ok(CounterfactualRun { excluded_agent: excluded, trajectory, others_costs })
}

/// `K_t^i = -others_costs[t]`.
pub fn marginal_k(run: &CounterfactualRun, t: usize) -> Result<f64> {
    run.others_costs
        .get(t)
        .map(|c| -c)
        .ok_or(Error::IndexOutOfRange { what: "counterfactual step", index: t, len: run.others_costs.len() })
}

/// Per-agent per-step taxes, marginal terms and tax-to-go.
///
/// All three are indexed `[agent][step]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaxLedger {
    pub taxes: Vec<Vec<f64>>,
    pub marginal: Vec<Vec<f64>>,
    pub tax_to_go: Vec<Vec<f64>>,
}

impl TaxLedger {
    pub fn num_agents(&self) -> usize {
        self.taxes.len()
    }

    pub fn steps(&self) -> usize {
        self.taxes.first().map_or(0, Vec::len)
    }

    /// `pi_0^i`, the total tax charged to agent `i`.
    pub fn total(&self, agent: usize) -> f64 {
        self.tax_to_go[agent].first().copied().unwrap_or(0.0)
    }

    /// A ledger of zeros, for running the decision rule without taxes.
    pub fn zeros(num_agents: usize, steps: usize) -> Self {
        let z = vec![vec![0.0; steps]; num_agents];
        TaxLedger { taxes: z.clone(), marginal: z.clone(), tax_to_go: z }
    }
}

/// Suffix sums, `out[t] = sum_{k >= t} v[k]`.
pub fn suffix_sums(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    let mut acc = 0.0;
    for (o, x) in out.iter_mut().zip(v).rev() {
        acc += x;
        *o = acc;
    }
    out
}

/// Reported stage costs of everyone but `agent`, per step.
fn others_reported_costs(traj: &TrajectoryRecord, agent: usize) -> Result<Vec<f64>> {
    (0..traj.steps())
        .map(|t| {
            let costs = traj.reported.at(t).stage_costs(&traj.partition, &traj.states[t], &traj.inputs[t])?;
            Ok(costs.iter().enumerate().filter(|(j, _)| *j != agent).map(|(_, c)| c).sum())
        })
        .collect()
}

/// Taxes for one agent against its counterfactual: `(p, K)`.
pub fn agent_taxes(traj: &TrajectoryRecord, run: &CounterfactualRun) -> Result<(Vec<f64>, Vec<f64>)> {
    if run.others_costs.len() < traj.steps() {
        return Err(Error::Dimension(format!(
            "counterfactual covers {} steps, trajectory {}",
            run.others_costs.len(),
            traj.steps()
        )));
    }
    let others = others_reported_costs(traj, run.excluded_agent)?;
    let marginal: Vec<f64> = (0..traj.steps()).map(|t| marginal_k(run, t)).collect::<Result<_>>()?;
    let taxes = others.iter().zip(&marginal).map(|(c, k)| c + k).collect();
    Ok((taxes, marginal))
}

/// Build the ledger. Others' costs are evaluated under the REPORTED types,
/// since the operator never sees true costs.
pub fn compute_taxes(traj: &TrajectoryRecord, counterfactuals: &[CounterfactualRun]) -> Result<TaxLedger> {
    if counterfactuals.len() != traj.num_agents() {
        return Err(Error::Dimension(format!(
            "{} counterfactuals for {} agents",
            counterfactuals.len(),
            traj.num_agents()
        )));
    }
    let mut ledger = TaxLedger { taxes: vec![], marginal: vec![], tax_to_go: vec![] };
    for (i, run) in counterfactuals.iter().enumerate() {
        if run.excluded_agent != i {
            return Err(Error::invalid("counterfactuals", "must be ordered by excluded agent"));
        }
        let (p, k) = agent_taxes(traj, run)?;
        ledger.tax_to_go.push(suffix_sums(&p));
        ledger.taxes.push(p);
        ledger.marginal.push(k);
    }
    Ok(ledger)
}

/// Quasilinear net cost `J^i + pi_0^i`, with `J^i` under the true types.
pub fn net_cost(agent: usize, traj: &TrajectoryRecord, ledger: &TaxLedger) -> Result<f64> {
    if agent >= traj.num_agents() || agent >= ledger.num_agents() {
        return Err(Error::IndexOutOfRange { what: "agent", index: agent, len: traj.num_agents() });
    }
    if ledger.steps() != traj.steps() {
        return Err(Error::Dimension("ledger and trajectory lengths differ".into()));
    }
    Ok(traj.agent_total(agent) + ledger.total(agent))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaxMode {
    #[default]
    On,
    Off,
}

/// Everything needed to replay the mechanism from the initial state.
#[derive(Clone, Debug)]
pub struct MechanismSetup {
    pub plant: DiscretePlant,
    pub x0: DVector<f64>,
    pub truth: ProfileSchedule,
    pub policy: Policy,
    pub steps: usize,
    pub envelope: AdmissibilityEnvelope,
    pub tax_mode: TaxMode,
}

/// A full run of the mechanism with truthful reports.
#[derive(Clone, Debug)]
pub struct MechanismRun {
    pub trajectory: TrajectoryRecord,
    pub counterfactuals: Vec<CounterfactualRun>,
    pub ledger: TaxLedger,
    /// `J^i + pi_0^i` per agent.
    pub net_costs: Vec<f64>,
}

impl MechanismSetup {
    pub fn num_agents(&self) -> usize {
        self.plant.partition.num_agents()
    }

    pub fn truthful_run(&self) -> Result<TrajectoryRecord> {
        crate::mpc::run_policy(&self.plant, &self.x0, &self.truth, &self.truth, self.policy, self.steps)
    }

    /// Counterfactual for `agent`, built from the reports of everyone else.
    pub fn counterfactual(&self, agent: usize) -> Result<CounterfactualRun> {
        run_counterfactual(&self.plant, &self.x0, &self.truth, agent, self.policy, self.steps)
    }

    pub fn counterfactuals(&self, exec: Execution) -> Result<Vec<CounterfactualRun>> {
        let agents: Vec<usize> = (0..self.num_agents()).collect();
        par::map(exec, &agents, |&i| self.counterfactual(i)).into_iter().collect()
    }

    /// Truthful run, counterfactuals, ledger and net costs.
    pub fn run(&self, exec: Execution) -> Result<MechanismRun> {
        let trajectory = self.truthful_run()?;
        let counterfactuals = self.counterfactuals(exec)?;
        let ledger = match self.tax_mode {
            TaxMode::On => compute_taxes(&trajectory, &counterfactuals)?,
            TaxMode::Off => TaxLedger::zeros(self.num_agents(), trajectory.steps()),
        };
        let net_costs = (0..self.num_agents()).map(|i| net_cost(i, &trajectory, &ledger)).collect::<Result<_>>()?;
        Ok(MechanismRun { trajectory, counterfactuals, ledger, net_costs })
    }

    /// Check that `stream` (agent `agent`'s reports over `steps`) stays inside the envelope.
    pub fn check_admissible(&self, agent: usize, stream: &TypeStream) -> Result<()> {
        self.envelope.validate_stream(agent, stream).map_err(Error::Inadmissible)
    }
}

/// Outcome of comparing truthful reporting against one deviation from a restart point.
#[derive(Clone, Debug, PartialEq)]
pub struct GapReport {
    pub agent: usize,
    pub restart: usize,
    /// Net cost of agent `agent` when reporting truthfully.
    pub truthful_net: f64,
    /// Net cost under the deviation.
    pub deviation_net: f64,
    /// `truthful_net - deviation_net`; positive means the deviation pays.
    pub gap: f64,
    /// Realized social cost (true types) along each continuation.
    pub truthful_social: f64,
    pub deviation_social: f64,
}

/// Shared state for repeated gap evaluations of one agent from one restart point.
pub struct GapContext<'a> {
    setup: &'a MechanismSetup,
    agent: usize,
    restart: usize,
    x_restart: DVector<f64>,
    truth: ProfileSchedule,
    counterfactual: Option<CounterfactualRun>,
    truthful: (f64, f64),
}

impl<'a> GapContext<'a> {
    /// `truthful` is the truthful trajectory from the initial state; the
    /// submechanism restarts at `(restart, x_restart)` along it.
    pub fn new(setup: &'a MechanismSetup, agent: usize, restart: usize, truthful: &TrajectoryRecord) -> Result<Self> {
        if agent >= setup.num_agents() {
            return Err(Error::IndexOutOfRange { what: "agent", index: agent, len: setup.num_agents() });
        }
        if restart >= setup.steps || restart >= truthful.states.len() {
            return Err(Error::IndexOutOfRange { what: "restart step", index: restart, len: setup.steps });
        }
        let counterfactual = match setup.tax_mode {
            TaxMode::On => Some(setup.counterfactual(agent)?),
            TaxMode::Off => None,
        };
        let mut ctx = GapContext {
            setup,
            agent,
            restart,
            x_restart: truthful.states[restart].clone(),
            truth: setup.truth.shifted(restart),
            counterfactual,
            truthful: (0.0, 0.0),
        };
        ctx.truthful = ctx.evaluate(&ctx.truth.clone())?;
        Ok(ctx)
    }

    pub fn x_restart(&self) -> &DVector<f64> {
        &self.x_restart
    }

    /// `(net cost of agent, social cost)` for a continuation under `reported`.
    fn evaluate(&self, reported: &ProfileSchedule) -> Result<(f64, f64)> {
        let s = self.setup;
        let remaining = s.steps - self.restart;
        let traj = crate::mpc::run_policy(&s.plant, &self.x_restart, reported, &self.truth, s.policy, remaining)?;
        let own = traj.agent_total(self.agent);
        let social = traj.total();
        let tax: f64 = match &self.counterfactual {
            None => 0.0,
            Some(run) => {
                let others = others_reported_costs(&traj, self.agent)?;
                let k: f64 = (self.restart..s.steps).map(|t| marginal_k(run, t)).sum::<Result<f64>>()?;
                others.iter().sum::<f64>() + k
            }
        };
        Ok((own + tax, social))
    }

    /// Gap of the deviation in which the agent reports `stream` (re-indexed from the restart step).
    pub fn gap(&self, stream: &TypeStream) -> Result<GapReport> {
        self.setup.check_admissible(self.agent, stream)?;
        let reported = self.truth.with_agent_stream(self.agent, stream)?;
        let (deviation_net, deviation_social) = self.evaluate(&reported)?;
        let (truthful_net, truthful_social) = self.truthful;
        Ok(GapReport {
            agent: self.agent,
            restart: self.restart,
            truthful_net,
            deviation_net,
            gap: truthful_net - deviation_net,
            truthful_social,
            deviation_social,
        })
    }
}

/// `[net cost under truth] - [net cost under misreport]` from `(restart, x_restart)`.
pub fn incentive_gap(setup: &MechanismSetup, agent: usize, misreport: &TypeStream, restart: usize) -> Result<GapReport> {
    let truthful = setup.truthful_run()?;
    GapContext::new(setup, agent, restart, &truthful)?.gap(misreport)
}

/// Multiplicative perturbation grid over the diagonal entries of an agent's true `Q` and `R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub factors: Vec<f64>,
    /// If set, deviations switch from truth to the perturbed type at this step
    /// instead of holding from the start.
    pub switch_at: Option<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { factors: vec![0.25, 0.5, 1.0, 2.0, 4.0], switch_at: None }
    }
}

impl GridSpec {
    pub fn only(factors: &[f64]) -> Self {
        GridSpec { factors: factors.to_vec(), switch_at: None }
    }

    /// Every combination of factors over `dims` entries, in lexicographic order.
    pub fn points(&self, dims: usize) -> Vec<Vec<f64>> {
        let k = self.factors.len();
        let total = k.checked_pow(dims as u32).unwrap_or(0);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; dims];
                for slot in p.iter_mut().rev() {
                    *slot = self.factors[idx % k];
                    idx /= k;
                }
                p
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub agent: usize,
    /// Best deviation found, `None` when no admissible point was evaluated.
    pub best: Option<(Vec<f64>, GapReport)>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl SearchReport {
    pub fn best_gap(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |(_, g)| g.gap)
    }
}

/// Exhaustive search over constant (or single-switch) diagonal perturbations
/// of agent `agent`'s true type, from `restart` along the truthful trajectory.
/// Inadmissible points are skipped and counted. Ties keep the first point in grid order.
pub fn misreport_search(
    setup: &MechanismSetup,
    agent: usize,
    grid: &GridSpec,
    restart: usize,
    exec: Execution,
) -> Result<SearchReport> {
    let truthful = setup.truthful_run()?;
    let ctx = GapContext::new(setup, agent, restart, &truthful)?;
    let true_stream = ctx.truth.agent_stream(agent);
    let base = true_stream.at(0).clone();
    let dims = base.q.nrows() + base.r.nrows();
    let points = grid.points(dims);
    let outcomes = par::map(exec, &points, |f| -> Result<Option<GapReport>> {
        let (qf, rf) = f.split_at(base.q.nrows());
        let deviated = match base.scaled_diagonal(qf, rf) {
            Ok(t) => t,
            Err(_) => return Ok(None),
        };
        let stream = match grid.switch_at {
            None => TypeStream::constant(deviated),
            Some(0) => TypeStream::constant(deviated),
            Some(s) => TypeStream::from_segments(vec![(0, base.clone()), (s, deviated)])?,
        };
        match ctx.gap(&stream) {
            Ok(g) => Ok(Some(g)),
            Err(Error::Inadmissible(_)) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut best: Option<(Vec<f64>, GapReport)> = None;
    let (mut evaluated, mut skipped) = (0, 0);
    for (point, outcome) in points.into_iter().zip(outcomes) {
        match outcome? {
            None => skipped += 1,
            Some(g) => {
                evaluated += 1;
                if best.as_ref().is_none_or(|(_, b)| g.gap > b.gap) {
                    best = Some((point, g));
                }
            }
        }
    }
    Ok(SearchReport { agent, best, evaluated, skipped })
}
