//! Receding-horizon and stationary LQ control of the stacked plant.
//!
//! The engine always carries two profile schedules: the *reported* one, which
//! drives the optimizer, and the *true* one, under which realized stage costs
//! are booked.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, block_diag};
use crate::lq::{self, CostWeights};
use crate::mechanism::stage_cost;
use crate::plant::{DiscretePlant, Partition};

/// Guard on `|x_t|` relative to `|x_0|` before a run is declared unstable.
pub const BLOWUP_FACTOR: f64 = 1e6;

/// One agent's private quadratic weights `(Q^i, R^i)` over its local state and input.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeVector {
    pub agent: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl TypeVector {
    pub fn new(agent: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let tag = |m: &str| format!("types.{}.{m}", agent + 1);
        if !linalg::is_symmetric(&q, 1e-12) {
            return Err(Error::invalid(tag("q"), "must be symmetric"));
        }
        if !linalg::is_symmetric(&r, 1e-12) {
            return Err(Error::invalid(tag("r"), "must be symmetric"));
        }
        if linalg::min_eigenvalue(&q) < -1e-12 {
            return Err(Error::invalid(tag("q"), "must be positive semidefinite"));
        }
        if r.nrows() > 0 && linalg::min_eigenvalue(&r) <= 0.0 {
            return Err(Error::invalid(tag("r"), "must be positive definite"));
        }
        Ok(TypeVector { agent, q, r })
    }

    pub fn diagonal(agent: usize, q: &[f64], r: &[f64]) -> Result<Self> {
        TypeVector::new(
            agent,
            DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        )
    }

    /// Scale diagonal entries multiplicatively: `W -> S W S` with `S = diag(sqrt(f))`.
    pub fn scaled_diagonal(&self, q_factors: &[f64], r_factors: &[f64]) -> Result<Self> {
        if q_factors.len() != self.q.nrows() || r_factors.len() != self.r.nrows() {
            return Err(Error::Dimension(format!(
                "factor lengths ({}, {}) vs type dims ({}, {})",
                q_factors.len(),
                r_factors.len(),
                self.q.nrows(),
                self.r.nrows()
            )));
        }
        let congruence = |w: &DMatrix<f64>, f: &[f64]| {
            let s = DVector::from_iterator(f.len(), f.iter().map(|v| v.sqrt()));
            let mut out = w.clone();
            for i in 0..f.len() {
                for j in 0..f.len() {
                    out[(i, j)] *= s[i] * s[j];
                }
            }
            out
        };
        TypeVector::new(self.agent, congruence(&self.q, q_factors), congruence(&self.r, r_factors))
    }

    pub fn scaled(&self, q_factor: f64, r_factor: f64) -> Self {
        TypeVector { agent: self.agent, q: &self.q * q_factor, r: &self.r * r_factor }
    }
}

/// Reported (or true) types of every agent at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeProfile {
    types: Vec<TypeVector>,
}

impl TypeProfile {
    pub fn new(types: Vec<TypeVector>) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::invalid("profile", "needs at least one agent"));
        }
        for (i, t) in types.iter().enumerate() {
            if t.agent != i {
                return Err(Error::invalid("profile", format!("entry {i} belongs to agent {}", t.agent)));
            }
        }
        Ok(TypeProfile { types })
    }

    /// The same diagonal weights for every agent.
    pub fn uniform_diagonal(num_agents: usize, q: &[f64], r: &[f64]) -> Result<Self> {
        TypeProfile::new((0..num_agents).map(|i| TypeVector::diagonal(i, q, r)).collect::<Result<_>>()?)
    }

    pub fn num_agents(&self) -> usize {
        self.types.len()
    }

    pub fn agent(&self, i: usize) -> &TypeVector {
        &self.types[i]
    }

    pub fn types(&self) -> &[TypeVector] {
        &self.types
    }

    pub fn with_agent(&self, theta: TypeVector) -> Result<Self> {
        let i = theta.agent;
        if i >= self.num_agents() {
            return Err(Error::IndexOutOfRange { what: "agent", index: i, len: self.num_agents() });
        }
        let mut types = self.types.clone();
        types[i] = theta;
        Ok(TypeProfile { types })
    }

    pub fn check_partition(&self, partition: &Partition) -> Result<()> {
        if partition.num_agents() != self.num_agents() {
            return Err(Error::Dimension(format!(
                "profile has {} agents, partition {}",
                self.num_agents(),
                partition.num_agents()
            )));
        }
        for (t, (xs, us)) in self.types.iter().zip(partition.states.iter().zip(&partition.inputs)) {
            if t.q.nrows() != xs.len() || (!us.is_empty() && t.r.nrows() != us.len()) {
                return Err(Error::Dimension(format!(
                    "agent {} type is {}x{} / {}x{}, partition gives {} states and {} inputs",
                    t.agent + 1,
                    t.q.nrows(),
                    t.q.ncols(),
                    t.r.nrows(),
                    t.r.ncols(),
                    xs.len(),
                    us.len()
                )));
            }
        }
        Ok(())
    }

    /// Stacked weights over `partition`.
    pub fn weights(&self, partition: &Partition) -> Result<CostWeights> {
        self.weights_excluding(partition, None)
    }

    /// Stacked weights with `excluded`'s cost removed: its state block is zero and
    /// its input block is dropped. The excluded agent's entry is never read.
    pub fn weights_excluding(&self, partition: &Partition, excluded: Option<usize>) -> Result<CostWeights> {
        if partition.num_agents() != self.num_agents() {
            return Err(Error::Dimension("profile/partition agent count".into()));
        }
        let mut q_blocks = Vec::with_capacity(self.num_agents());
        let mut r_blocks = Vec::with_capacity(self.num_agents());
        for (i, (xs, us)) in partition.states.iter().zip(&partition.inputs).enumerate() {
            if Some(i) == excluded {
                q_blocks.push(DMatrix::zeros(xs.len(), xs.len()));
                continue;
            }
            let t = &self.types[i];
            if t.q.nrows() != xs.len() {
                return Err(Error::Dimension(format!("agent {} Q dimension", i + 1)));
            }
            q_blocks.push(t.q.clone());
            if !us.is_empty() {
                if t.r.nrows() != us.len() {
                    return Err(Error::Dimension(format!("agent {} R dimension", i + 1)));
                }
                r_blocks.push(t.r.clone());
            }
        }
        Ok(CostWeights { q: block_diag(&q_blocks), r: block_diag(&r_blocks) })
    }

    /// `c^i(x^i, u^i)` for every agent.
    pub fn stage_costs(&self, partition: &Partition, x: &DVector<f64>, u: &DVector<f64>) -> Result<Vec<f64>> {
        self.types
            .iter()
            .zip(partition.states.iter().zip(&partition.inputs))
            .map(|(t, (xs, us))| {
                stage_cost(
                    &x.rows(xs.start, xs.len()).into_owned(),
                    &u.rows(us.start, us.len()).into_owned(),
                    t,
                )
            })
            .collect()
    }
}

/// A piecewise-constant sequence: `(start_step, value)` pairs with strictly
/// increasing starts beginning at 0. The last value holds forever.
#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise<T> {
    segments: Vec<(usize, T)>,
}

impl<T: Clone> Piecewise<T> {
    pub fn constant(value: T) -> Self {
        Piecewise { segments: vec![(0, value)] }
    }

    pub fn from_segments(segments: Vec<(usize, T)>) -> Result<Self> {
        match segments.first() {
            Some((0, _)) => {}
            _ => return Err(Error::invalid("schedule", "first segment must start at step 0")),
        }
        if segments.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::invalid("schedule", "segment starts must be strictly increasing"));
        }
        Ok(Piecewise { segments })
    }

    /// One segment per step.
    pub fn from_steps(values: Vec<T>) -> Result<Self> {
        Piecewise::from_segments(values.into_iter().enumerate().collect())
    }

    pub fn segment_index(&self, t: usize) -> usize {
        self.segments.partition_point(|(s, _)| *s <= t) - 1
    }

    pub fn at(&self, t: usize) -> &T {
        &self.segments[self.segment_index(t)].1
    }

    pub fn segments(&self) -> &[(usize, T)] {
        &self.segments
    }

    pub fn is_constant(&self) -> bool {
        self.segments.len() == 1
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = usize> + '_ {
        self.segments.iter().map(|(s, _)| *s)
    }

    /// The schedule seen from step `t0` onward, re-indexed to start at 0.
    pub fn shifted(&self, t0: usize) -> Self {
        let first = self.segment_index(t0);
        let segments = std::iter::once((0, self.segments[first].1.clone()))
            .chain(self.segments[first + 1..].iter().map(|(s, v)| (s - t0, v.clone())))
            .collect();
        Piecewise { segments }
    }
}

/// Reported or true type profiles over time.
pub type ProfileSchedule = Piecewise<TypeProfile>;

/// One agent's report stream over time.
pub type TypeStream = Piecewise<TypeVector>;

impl ProfileSchedule {
    pub fn num_agents(&self) -> usize {
        self.segments[0].1.num_agents()
    }

    /// Replace agent `agent`'s entries by `stream`, keeping everyone else.
    pub fn with_agent_stream(&self, agent: usize, stream: &TypeStream) -> Result<Self> {
        let mut starts: Vec<usize> = self.breakpoints().chain(stream.breakpoints()).collect();
        starts.sort_unstable();
        starts.dedup();
        let segments = starts
            .into_iter()
            .map(|s| {
                let mut theta = stream.at(s).clone();
                theta.agent = agent;
                Ok((s, self.at(s).with_agent(theta)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Piecewise::from_segments(segments)
    }

    /// Agent `agent`'s entries as a stream.
    pub fn agent_stream(&self, agent: usize) -> TypeStream {
        Piecewise { segments: self.segments.iter().map(|(s, p)| (*s, p.agent(agent).clone())).collect() }
    }
}

/// States, inputs and per-agent realized stage costs of one closed-loop run.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    /// `x_0..x_steps`.
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_{steps-1}` in the full input space.
    pub inputs: Vec<DVector<f64>>,
    /// `stage_costs[t][i] = c_t^i(x_t^i, u_t^i)` under the true types.
    pub stage_costs: Vec<Vec<f64>>,
    pub reported: ProfileSchedule,
    pub truth: ProfileSchedule,
    pub partition: Partition,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn num_agents(&self) -> usize {
        self.partition.num_agents()
    }

    /// `sum_t c_t^i` for one agent.
    pub fn agent_total(&self, agent: usize) -> f64 {
        self.stage_costs.iter().map(|c| c[agent]).sum()
    }

    pub fn totals(&self) -> Vec<f64> {
        (0..self.num_agents()).map(|i| self.agent_total(i)).collect()
    }

    pub fn total(&self) -> f64 {
        self.totals().iter().sum()
    }
}

/// How the operator turns a reported profile into a feedback gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Apply the first input of the T-step open-loop optimizer at every step.
    RecedingHorizon(usize),
    /// Stationary infinite-horizon LQR gain.
    Lqr,
}

impl Policy {
    pub fn horizon(&self) -> Option<usize> {
        match self {
            Policy::RecedingHorizon(t) => Some(*t),
            Policy::Lqr => None,
        }
    }
}

pub fn feedback_gain(plant: &DiscretePlant, w: &CostWeights, policy: Policy) -> Result<DMatrix<f64>> {
    match policy {
        Policy::RecedingHorizon(t) => Ok(lq::riccati_terminal(plant, w, t)?.1),
        Policy::Lqr => Ok(lq::dare_fixed_point(plant, w, lq::DARE_TOL)?.gain),
    }
}

/// First input of the T-step open-loop problem built from `profile`.
///
/// The profile reported now is used over the whole horizon; only `u_t` is returned.
pub fn openloop_step(plant: &DiscretePlant, x: &DVector<f64>, profile: &TypeProfile, horizon: usize) -> Result<DVector<f64>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    if x.len() != plant.state_dim() {
        return Err(Error::Dimension(format!("state has {} entries, plant {}", x.len(), plant.state_dim())));
    }
    profile.check_partition(&plant.partition)?;
    let w = profile.weights(&plant.partition)?;
    let (_, gain) = lq::riccati_terminal(plant, &w, horizon)?;
    Ok(-(gain * x))
}

/// Closed-loop driver shared by the full and counterfactual runs.
///
/// The optimizer sees `plant` (possibly with an agent's input removed) and the
/// reported weights with `excluded`'s cost dropped. Inputs are recorded in the
/// full input space of `full_partition`, with zeros in removed slots.
pub(crate) struct ClosedLoop<'a> {
    pub plant: &'a DiscretePlant,
    pub full_partition: &'a Partition,
    pub excluded: Option<usize>,
    pub policy: Policy,
}

impl ClosedLoop<'_> {
    fn embed(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut full = DVector::zeros(self.full_partition.input_dim());
        for (i, (reduced, whole)) in self.plant.partition.inputs.iter().zip(&self.full_partition.inputs).enumerate() {
            if Some(i) == self.excluded {
                continue;
            }
            full.rows_mut(whole.start, whole.len()).copy_from(&u.rows(reduced.start, reduced.len()));
        }
        full
    }

    pub fn run(
        &self,
        x0: &DVector<f64>,
        reported: &ProfileSchedule,
        truth: &ProfileSchedule,
        steps: usize,
    ) -> Result<TrajectoryRecord> {
        let n = self.plant.state_dim();
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, plant has {n} states", x0.len())));
        }
        if reported.num_agents() != self.full_partition.num_agents() || truth.num_agents() != reported.num_agents() {
            return Err(Error::Dimension("profile agent count does not match plant".into()));
        }
        let limit = BLOWUP_FACTOR * x0.norm();
        let mut states = Vec::with_capacity(steps + 1);
        let mut inputs = Vec::with_capacity(steps);
        let mut stage_costs = Vec::with_capacity(steps);
        let mut cached: Option<(usize, DMatrix<f64>)> = None;
        let mut x = x0.clone();
        for t in 0..steps {
            let seg = reported.segment_index(t);
            if cached.as_ref().map(|(s, _)| *s) != Some(seg) {
                let w = reported.at(t).weights_excluding(&self.plant.partition, self.excluded)?;
                cached = Some((seg, feedback_gain(self.plant, &w, self.policy)?));
            }
            let gain = &cached.as_ref().unwrap().1;
            let u = -(gain * &x);
            let u_full = self.embed(&u);
            let costs = match self.excluded {
                None => truth.at(t).stage_costs(self.full_partition, &x, &u_full)?,
                Some(i) => {
                    let mut c = vec![0.0; self.full_partition.num_agents()];
                    for (j, slot) in c.iter_mut().enumerate().filter(|(j, _)| *j != i) {
                        let xs = &self.full_partition.states[j];
                        let us = &self.full_partition.inputs[j];
                        *slot = stage_cost(
                            &x.rows(xs.start, xs.len()).into_owned(),
                            &u_full.rows(us.start, us.len()).into_owned(),
                            truth.at(t).agent(j),
                        )?;
                    }
                    c
                }
            };
            let next = &self.plant.a * &x + &self.plant.b * &u;
            states.push(std::mem::replace(&mut x, next));
            inputs.push(u_full);
            stage_costs.push(costs);
            let norm = x.norm();
            if !norm.is_finite() || norm > limit {
                return Err(Error::Instability { step: t + 1, norm, limit });
            }
        }
        states.push(x);
        Ok(TrajectoryRecord {
            states,
            inputs,
            stage_costs,
            reported: reported.clone(),
            truth: truth.clone(),
            partition: self.full_partition.clone(),
        })
    }
}

/// Closed loop `x_{k+1} = A x_k + B u_k` with `u_k = OPENLOOP_T(reported_k)`.
pub fn run_mpc(
    plant: &DiscretePlant,
    x0: &DVector<f64>,
    reported: &ProfileSchedule,
    truth: &ProfileSchedule,
    horizon: usize,
    steps: usize,
) -> Result<TrajectoryRecord> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    run_policy(plant, x0, reported, truth, Policy::RecedingHorizon(horizon), steps)
}

/// Closed loop under the stationary LQR gain of the reported profile.
pub fn run_lqr(
    plant: &DiscretePlant,
    x0: &DVector<f64>,
    reported: &TypeProfile,
    truth: &TypeProfile,
    steps: usize,
) -> Result<TrajectoryRecord> {
    run_policy(
        plant,
        x0,
        &ProfileSchedule::constant(reported.clone()),
        &ProfileSchedule::constant(truth.clone()),
        Policy::Lqr,
        steps,
    )
}

pub fn run_policy(
    plant: &DiscretePlant,
    x0: &DVector<f64>,
    reported: &ProfileSchedule,
    truth: &ProfileSchedule,
    policy: Policy,
    steps: usize,
) -> Result<TrajectoryRecord> {
    for (_, p) in reported.segments().iter().chain(truth.segments()) {
        p.check_partition(&plant.partition)?;
    }
    ClosedLoop { plant, full_partition: &plant.partition, excluded: None, policy }.run(x0, reported, truth, steps)
}
