//! Linearized multi-area load-frequency dynamics.
//!
//! Each area contributes four states in the fixed order
//! `(d_omega, d_p_mech, d_p_valve, d_delta)` and one input, the governor
//! reference `d_p_ref`. Areas are stacked in declaration order, so area `i`
//! owns states `4i..4i+4` and input `i`.

use std::ops::Range;

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STATES_PER_AREA: usize = 4;

pub const OMEGA: usize = 0;
pub const P_MECH: usize = 1;
pub const P_VALVE: usize = 2;
pub const DELTA: usize = 3;

/// Swing-equation parameters of one control area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AreaParams {
    /// Angular momentum `M` (p.u. s).
    pub inertia: f64,
    /// Load-frequency damping `D` (p.u.).
    pub damping: f64,
    /// Turbine charging time constant `T_CH` (s).
    pub charging_time: f64,
    /// Speed droop `R_f` (frequency per unit output).
    pub droop: f64,
    /// Governor time constant `T_G` (s).
    pub governor_time: f64,
}

impl AreaParams {
    pub fn new(inertia: f64, damping: f64, charging_time: f64, droop: f64, governor_time: f64) -> Result<Self> {
        let p = AreaParams { inertia, damping, charging_time, droop, governor_time };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("inertia", self.inertia),
            ("damping", self.damping),
            ("charging_time", self.charging_time),
            ("droop", self.droop),
            ("governor_time", self.governor_time),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// A tie line between two areas with a single synchronizing stiffness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TieLine {
    pub area_a: usize,
    pub area_b: usize,
    /// Stiffness `T_tie` (p.u./rad).
    pub stiffness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub areas: Vec<AreaParams>,
    pub tie_lines: Vec<TieLine>,
}

impl NetworkModel {
    /// The two-area benchmark system: `M = (3.5, 4)`, `D = (2, 2.75)`,
    /// `T_CH = (50, 10)`, `R_f = (0.03, 0.07)`, `T_G = (40, 25)`, one tie line of stiffness 1.
    pub fn two_area_benchmark() -> Self {
        NetworkModel {
            areas: vec![
                AreaParams {
                    inertia: 3.5,
                    damping: 2.0,
                    charging_time: 50.0,
                    droop: 0.03,
                    governor_time: 40.0,
                },
                AreaParams {
                    inertia: 4.0,
                    damping: 2.75,
                    charging_time: 10.0,
                    droop: 0.07,
                    governor_time: 25.0,
                },
            ],
            tie_lines: vec![TieLine { area_a: 0, area_b: 1, stiffness: 1.0 }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.areas.is_empty() {
            return Err(Error::invalid("areas", "network needs at least one area"));
        }
        for (i, a) in self.areas.iter().enumerate() {
            a.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => {
                    Error::invalid(format!("areas.{}.{name}", i + 1), reason)
                }
                other => other,
            })?;
        }
        let n = self.areas.len();
        for line in &self.tie_lines {
            for idx in [line.area_a, line.area_b] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { what: "tie line area", index: idx, len: n });
                }
            }
            if line.area_a == line.area_b {
                return Err(Error::invalid("tie_lines", format!("area {} tied to itself", line.area_a + 1)));
            }
            if !(line.stiffness.is_finite() && line.stiffness >= 0.0) {
                return Err(Error::invalid("tie_lines.stiffness", format!("must be >= 0, got {}", line.stiffness)));
            }
        }
        Ok(())
    }

    pub fn num_areas(&self) -> usize {
        self.areas.len()
    }
}

/// Per-agent index ranges into the stacked state and input vectors.
///
/// An agent may own an empty input range (an agent removed from the market).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub states: Vec<Range<usize>>,
    pub inputs: Vec<Range<usize>>,
}

impl Partition {
    /// One agent per area, four states and one input each.
    pub fn per_area(num_areas: usize) -> Self {
        Partition {
            states: (0..num_areas)
                .map(|i| i * STATES_PER_AREA..(i + 1) * STATES_PER_AREA)
                .collect(),
            inputs: (0..num_areas).map(|i| i..i + 1).collect(),
        }
    }

    pub fn num_agents(&self) -> usize {
        self.states.len()
    }

    pub fn state_dim(&self) -> usize {
        self.states.last().map_or(0, |r| r.end)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.iter().map(|r| r.end).max().unwrap_or(0)
    }

    /// The same partition with `agent`'s input range emptied and later ranges shifted down.
    pub fn without_input(&self, agent: usize) -> Result<Self> {
        if agent >= self.num_agents() {
            return Err(Error::IndexOutOfRange { what: "agent", index: agent, len: self.num_agents() });
        }
        let removed = self.inputs[agent].len();
        let cut = self.inputs[agent].start;
        let inputs = self
            .inputs
            .iter()
            .enumerate()
            .map(|(j, r)| {
                if j == agent {
                    cut..cut
                } else if r.start >= cut + removed {
                    r.start - removed..r.end - removed
                } else {
                    r.clone()
                }
            })
            .collect();
        Ok(Partition { states: self.states.clone(), inputs })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub partition: Partition,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dt: f64,
    pub partition: Partition,
}

impl DiscretePlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, dt: f64, partition: Partition) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.nrows() {
            return Err(Error::Dimension(format!("A is {:?}, B is {:?}", a.shape(), b.shape())));
        }
        if partition.state_dim() != a.nrows() || partition.input_dim() != b.ncols() {
            return Err(Error::Dimension(format!(
                "partition covers {}x{} but plant is {}x{}",
                partition.state_dim(),
                partition.input_dim(),
                a.nrows(),
                b.ncols()
            )));
        }
        Ok(DiscretePlant { a, b, dt, partition })
    }

    /// Single-agent plant owning every state and input; handy for generic LQ work.
    pub fn single_agent(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let partition = Partition { states: vec![0..a.nrows()], inputs: vec![0..b.ncols()] };
        DiscretePlant::new(a, b, 1.0, partition)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Drop `agent`'s input columns from `B`.
    pub fn without_agent_input(&self, agent: usize) -> Result<Self> {
        let partition = self.partition.without_input(agent)?;
        let removed = self.partition.inputs[agent].clone();
        let keep: Vec<usize> = (0..self.input_dim()).filter(|c| !removed.contains(c)).collect();
        let b = self.b.select_columns(keep.iter());
        DiscretePlant::new(self.a.clone(), b, self.dt, partition)
    }
}

/// Local 4x4 dynamics of one area (tie terms excluded) and its input column.
pub fn build_area_block(p: &AreaParams) -> Result<(Matrix4<f64>, Vector4<f64>)> {
    p.validate()?;
    let mut a = Matrix4::zeros();
    a[(OMEGA, OMEGA)] = -p.damping / p.inertia;
    a[(OMEGA, P_MECH)] = 1.0 / p.inertia;
    a[(P_MECH, P_MECH)] = -1.0 / p.charging_time;
    a[(P_MECH, P_VALVE)] = 1.0 / p.charging_time;
    a[(P_VALVE, P_VALVE)] = -1.0 / p.governor_time;
    a[(P_VALVE, OMEGA)] = -1.0 / (p.droop * p.governor_time);
    a[(DELTA, OMEGA)] = 1.0;
    let b = Vector4::new(0.0, 0.0, 1.0 / p.governor_time, 0.0);
    Ok((a, b))
}

pub fn assemble_network(net: &NetworkModel) -> Result<ContinuousPlant> {
    net.validate()?;
    let n = net.num_areas();
    let mut a = DMatrix::zeros(STATES_PER_AREA * n, STATES_PER_AREA * n);
    let mut b = DMatrix::zeros(STATES_PER_AREA * n, n);
    for (i, area) in net.areas.iter().enumerate() {
        let (blk, col) = build_area_block(area)?;
        let o = STATES_PER_AREA * i;
        a.fixed_view_mut::<4, 4>(o, o).copy_from(&blk);
        b.fixed_view_mut::<4, 1>(o, i).copy_from(&col);
    }
    for line in &net.tie_lines {
        for (own, other) in [(line.area_a, line.area_b), (line.area_b, line.area_a)] {
            let k = line.stiffness / net.areas[own].inertia;
            let row = STATES_PER_AREA * own + OMEGA;
            a[(row, STATES_PER_AREA * own + DELTA)] -= k;
            a[(row, STATES_PER_AREA * other + DELTA)] += k;
        }
    }
    Ok(ContinuousPlant { a, b, partition: Partition::per_area(n) })
}

/// How a continuous plant is turned into a sampled one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// Exact zero-order hold.
    #[default]
    Zoh,
    /// Forward Euler, `A = I + A_c dt`, `B = B_c dt`.
    Euler,
}

/// Exact zero-order-hold discretization.
///
/// `exp([[A_c, B_c], [0, 0]] dt) = [[A, B], [0, I]]`.
pub fn discretize(plant: &ContinuousPlant, dt: f64) -> Result<DiscretePlant> {
    discretize_with(plant, dt, Discretization::Zoh)
}

pub fn discretize_with(plant: &ContinuousPlant, dt: f64, method: Discretization) -> Result<DiscretePlant> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::invalid("dt", format!("must be finite and > 0, got {dt}")));
    }
    let n = plant.a.nrows();
    let m = plant.b.ncols();
    let (a, b) = match method {
        Discretization::Zoh => {
            let mut aug = DMatrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&plant.a * dt));
            aug.view_mut((0, n), (n, m)).copy_from(&(&plant.b * dt));
            let e = aug.exp();
            (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
        }
        Discretization::Euler => (DMatrix::identity(n, n) + &plant.a * dt, &plant.b * dt),
    };
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("matrix exponential produced non-finite entries".into()));
    }
    DiscretePlant::new(a, b, dt, plant.partition.clone())
}
