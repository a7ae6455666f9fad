//! Scenario files.
//!
//! A scenario is a TOML document with these sections (area and agent labels are 1-based):
//!
//! ```toml
//! [network]
//! dt = 0.1                 # sample time in s, default 0.1
//! discretization = "zoh"   # "zoh" (default) or "euler"
//!
//! [areas.1]                # one table per area, labels 1..N
//! inertia = 3.5            # M, p.u. s
//! damping = 2.0            # D, p.u.
//! charging_time = 50.0     # T_CH, s
//! droop = 0.03             # R_f
//! governor_time = 40.0     # T_G, s
//!
//! [ties.1]                 # optional, any number
//! areas = [1, 2]
//! stiffness = 1.0          # p.u./rad
//!
//! [types.1]                # true weights of agent 1 (the firm owning area 1)
//! q = [10.0, 1.0, 500.0, 10.0]   # diagonal, or a full 4x4 nested array
//! r = [0.1]
//! schedule = [{ step = 300, q = [...], r = [...] }]   # optional later changes
//!
//! [mpc]
//! horizon = 50             # integer, or "infinite" for stationary LQR; default 50
//! steps = 600              # default 600
//! tax_mode = "on"          # "on" (default) or "off"
//! seed = 0                 # default 0
//!
//! [envelope]               # admissible reports as multiples of the true types
//! lower = 0.5
//! upper = 2.0
//! delta = 0.0
//!
//! [disturbance.1]          # initial deviation per area; omitted entries are 0
//! omega = -0.1
//! pmech = 0.0
//! pv = 0.0
//! delta = 0.0
//! ```

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::{AdmissibilityEnvelope, EnvelopeSpec};
use crate::error::{Error, Result};
use crate::mechanism::{MechanismSetup, TaxMode};
use crate::mpc::{Policy, ProfileSchedule, TypeProfile, TypeStream, TypeVector};
use crate::plant::{self, AreaParams, DiscretePlant, Discretization, NetworkModel, TieLine, STATES_PER_AREA};

/// The bundled two-area benchmark scenario.
pub const TWO_AREA_TABLE1: &str = include_str!("../configs/two_area_table1.toml");

pub const DEFAULT_DT: f64 = 0.1;
pub const DEFAULT_STEPS: usize = 600;
pub const DEFAULT_HORIZON: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

impl Horizon {
    pub fn policy(self) -> Policy {
        match self {
            Horizon::Finite(t) => Policy::RecedingHorizon(t),
            Horizon::Infinite => Policy::Lqr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub network: NetworkModel,
    pub dt: f64,
    pub discretization: Discretization,
    pub sim_steps: usize,
    pub horizon: Horizon,
    pub x0: DVector<f64>,
    /// True types, one stream per agent.
    pub true_types: Vec<TypeStream>,
    pub envelope: EnvelopeSpec,
    pub tax_mode: TaxMode,
    pub seed: u64,
}

impl Scenario {
    pub fn two_area_table1() -> Self {
        parse_scenario(TWO_AREA_TABLE1).expect("bundled scenario parses")
    }

    pub fn num_agents(&self) -> usize {
        self.network.num_areas()
    }

    pub fn plant(&self) -> Result<DiscretePlant> {
        plant::discretize_with(&plant::assemble_network(&self.network)?, self.dt, self.discretization)
    }

    pub fn truth(&self) -> Result<ProfileSchedule> {
        let mut starts: Vec<usize> = self.true_types.iter().flat_map(|s| s.breakpoints()).collect();
        starts.sort_unstable();
        starts.dedup();
        let segments = starts
            .into_iter()
            .map(|s| Ok((s, TypeProfile::new(self.true_types.iter().map(|st| st.at(s).clone()).collect())?)))
            .collect::<Result<Vec<_>>>()?;
        ProfileSchedule::from_segments(segments)
    }

    /// Nominal true profile at step 0, the center of the envelope.
    pub fn nominal_profile(&self) -> Result<TypeProfile> {
        Ok(self.truth()?.at(0).clone())
    }

    pub fn envelope(&self) -> Result<AdmissibilityEnvelope> {
        AdmissibilityEnvelope::scaled_around(&self.nominal_profile()?, self.envelope)
    }

    pub fn mechanism(&self) -> Result<MechanismSetup> {
        Ok(MechanismSetup {
            plant: self.plant()?,
            x0: self.x0.clone(),
            truth: self.truth()?,
            policy: self.horizon.policy(),
            steps: self.sim_steps,
            envelope: self.envelope()?,
            tax_mode: self.tax_mode,
        })
    }

    pub fn to_toml(&self) -> String {
        let raw = RawScenario::from(self);
        toml::to_string(&raw).expect("scenario serializes")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    discretization: Option<Discretization>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTie {
    areas: [usize; 2],
    stiffness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl RawMatrix {
    fn to_matrix(&self, path: &str) -> Result<DMatrix<f64>> {
        match self {
            RawMatrix::Diagonal(d) => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(d))),
            RawMatrix::Full(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config(path, "full matrix must be square"));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let diagonal = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
        if diagonal {
            RawMatrix::Diagonal(m.diagonal().iter().copied().collect())
        } else {
            RawMatrix::Full((0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect())
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScheduled {
    step: usize,
    q: RawMatrix,
    r: RawMatrix,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTypes {
    q: RawMatrix,
    r: RawMatrix,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    schedule: Vec<RawScheduled>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawHorizon {
    Steps(usize),
    Word(String),
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMpc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    horizon: Option<RawHorizon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tax_mode: Option<TaxMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDisturbance {
    #[serde(default)]
    omega: f64,
    #[serde(default)]
    pmech: f64,
    #[serde(default)]
    pv: f64,
    #[serde(default)]
    delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    network: RawNetwork,
    areas: BTreeMap<String, AreaParams>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    ties: BTreeMap<String, RawTie>,
    types: BTreeMap<String, RawTypes>,
    #[serde(default)]
    mpc: RawMpc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    envelope: Option<EnvelopeSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    disturbance: BTreeMap<String, RawDisturbance>,
}

/// Sort a table keyed by 1-based labels and check the labels are exactly `1..=N`.
fn labelled<'a, T>(section: &str, map: &'a BTreeMap<String, T>) -> Result<Vec<(usize, &'a T)>> {
    let mut out = Vec::with_capacity(map.len());
    for (k, v) in map {
        let idx: usize = k
            .parse()
            .map_err(|_| Error::config(format!("{section}.{k}"), "label must be a positive integer"))?;
        if idx == 0 {
            return Err(Error::config(format!("{section}.{k}"), "labels start at 1"));
        }
        out.push((idx, v));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

fn dense_labels<'a, T>(section: &str, map: &'a BTreeMap<String, T>) -> Result<Vec<&'a T>> {
    let items = labelled(section, map)?;
    for (pos, (idx, _)) in items.iter().enumerate() {
        if *idx != pos + 1 {
            return Err(Error::config(format!("{section}.{}", pos + 1), "missing entry; labels must run 1..N"));
        }
    }
    Ok(items.into_iter().map(|(_, v)| v).collect())
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        let path = e.span().map_or_else(|| "<document>".to_string(), |s| locate(text, s.start));
        Error::config(path, msg)
    })?;
    raw.into_scenario()
}

/// `line:col` of a byte offset.
fn locate(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, str::len) + 1;
    format!("line {line}, column {col}")
}

impl RawScenario {
    fn into_scenario(self) -> Result<Scenario> {
        let areas: Vec<AreaParams> = dense_labels("areas", &self.areas)?.into_iter().cloned().collect();
        if areas.is_empty() {
            return Err(Error::config("areas", "at least one area is required"));
        }
        for (i, a) in areas.iter().enumerate() {
            a.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => Error::config(format!("areas.{}.{name}", i + 1), reason),
                other => other,
            })?;
        }
        let n = areas.len();
        let mut tie_lines = Vec::new();
        for (label, tie) in labelled("ties", &self.ties)? {
            let path = format!("ties.{label}");
            let [a, b] = tie.areas;
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::config(format!("{path}.areas"), format!("area labels must lie in 1..={n}")));
            }
            if a == b {
                return Err(Error::config(format!("{path}.areas"), "a tie line needs two distinct areas"));
            }
            if !(tie.stiffness.is_finite() && tie.stiffness >= 0.0) {
                return Err(Error::config(format!("{path}.stiffness"), "must be >= 0"));
            }
            tie_lines.push(TieLine { area_a: a - 1, area_b: b - 1, stiffness: tie.stiffness });
        }
        let network = NetworkModel { areas, tie_lines };

        let dt = self.network.dt.unwrap_or(DEFAULT_DT);
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::config("network.dt", format!("must be > 0, got {dt}")));
        }

        let type_tables = dense_labels("types", &self.types)?;
        if type_tables.len() != n {
            return Err(Error::config("types", format!("expected {n} agents, found {}", type_tables.len())));
        }
        let mut true_types = Vec::with_capacity(n);
        for (i, t) in type_tables.into_iter().enumerate() {
            let path = format!("types.{}", i + 1);
            let build = |q: &RawMatrix, r: &RawMatrix, p: &str| -> Result<TypeVector> {
                let qm = q.to_matrix(&format!("{p}.q"))?;
                let rm = r.to_matrix(&format!("{p}.r"))?;
                if qm.nrows() != STATES_PER_AREA || rm.nrows() != 1 {
                    return Err(Error::config(p, format!("q must be {STATES_PER_AREA}x{STATES_PER_AREA} and r 1x1")));
                }
                TypeVector::new(i, qm, rm).map_err(|e| Error::config(p, e.to_string()))
            };
            let mut segments = vec![(0, build(&t.q, &t.r, &path)?)];
            for (k, s) in t.schedule.iter().enumerate() {
                segments.push((s.step, build(&s.q, &s.r, &format!("{path}.schedule.{k}"))?));
            }
            let stream = TypeStream::from_segments(segments)
                .map_err(|e| Error::config(format!("{path}.schedule"), e.to_string()))?;
            true_types.push(stream);
        }

        let horizon = match self.mpc.horizon {
            None => Horizon::Finite(DEFAULT_HORIZON),
            Some(RawHorizon::Steps(0)) => return Err(Error::config("mpc.horizon", "must be >= 1")),
            Some(RawHorizon::Steps(t)) => Horizon::Finite(t),
            Some(RawHorizon::Word(w)) if w == "infinite" => Horizon::Infinite,
            Some(RawHorizon::Word(w)) => {
                return Err(Error::config("mpc.horizon", format!("expected an integer or \"infinite\", got {w:?}")))
            }
        };

        let envelope = self.envelope.unwrap_or_default();
        if !(envelope.lower > 0.0 && envelope.lower <= envelope.upper && envelope.upper.is_finite()) {
            return Err(Error::config("envelope", "need 0 < lower <= upper"));
        }
        if !(0.0..1.0).contains(&envelope.delta) {
            return Err(Error::config("envelope.delta", "must lie in [0, 1)"));
        }

        let mut x0 = DVector::zeros(STATES_PER_AREA * n);
        for (label, d) in labelled("disturbance", &self.disturbance)? {
            if label > n {
                return Err(Error::config(format!("disturbance.{label}"), format!("no area {label}")));
            }
            let o = STATES_PER_AREA * (label - 1);
            for (k, v) in [d.omega, d.pmech, d.pv, d.delta].into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::config(format!("disturbance.{label}"), "entries must be finite"));
                }
                x0[o + k] = v;
            }
        }

        Ok(Scenario {
            network,
            dt,
            discretization: self.network.discretization.unwrap_or_default(),
            sim_steps: self.mpc.steps.unwrap_or(DEFAULT_STEPS),
            horizon,
            x0,
            true_types,
            envelope,
            tax_mode: self.mpc.tax_mode.unwrap_or_default(),
            seed: self.mpc.seed.unwrap_or(0),
        })
    }
}

impl From<&Scenario> for RawScenario {
    fn from(s: &Scenario) -> Self {
        let areas = s.network.areas.iter().enumerate().map(|(i, a)| ((i + 1).to_string(), a.clone())).collect();
        let ties = s
            .network
            .tie_lines
            .iter()
            .enumerate()
            .map(|(k, t)| ((k + 1).to_string(), RawTie { areas: [t.area_a + 1, t.area_b + 1], stiffness: t.stiffness }))
            .collect();
        let types = s
            .true_types
            .iter()
            .enumerate()
            .map(|(i, stream)| {
                let segs = stream.segments();
                let first = &segs[0].1;
                let schedule = segs[1..]
                    .iter()
                    .map(|(step, t)| RawScheduled {
                        step: *step,
                        q: RawMatrix::from_matrix(&t.q),
                        r: RawMatrix::from_matrix(&t.r),
                    })
                    .collect();
                (
                    (i + 1).to_string(),
                    RawTypes { q: RawMatrix::from_matrix(&first.q), r: RawMatrix::from_matrix(&first.r), schedule },
                )
            })
            .collect();
        let disturbance = (0..s.num_agents())
            .filter_map(|i| {
                let o = STATES_PER_AREA * i;
                let v = s.x0.rows(o, STATES_PER_AREA);
                (v.iter().any(|x| *x != 0.0)).then(|| {
                    ((i + 1).to_string(), RawDisturbance { omega: v[0], pmech: v[1], pv: v[2], delta: v[3] })
                })
            })
            .collect();
        RawScenario {
            network: RawNetwork { dt: Some(s.dt), discretization: Some(s.discretization) },
            areas,
            ties,
            types,
            mpc: RawMpc {
                horizon: Some(match s.horizon {
                    Horizon::Finite(t) => RawHorizon::Steps(t),
                    Horizon::Infinite => RawHorizon::Word("infinite".into()),
                }),
                steps: Some(s.sim_steps),
                tax_mode: Some(s.tax_mode),
                seed: Some(s.seed),
            },
            envelope: Some(s.envelope),
            disturbance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_matches_benchmark() {
        let s = Scenario::two_area_table1();
        assert_eq!(s.network, NetworkModel::two_area_benchmark());
        assert_eq!(s.dt, 0.1);
        assert_eq!(s.x0[0], -0.1);
        assert_eq!(s.x0.iter().filter(|v| **v != 0.0).count(), 1);
        let t = s.nominal_profile().unwrap();
        for i in 0..2 {
            assert_eq!(t.agent(i).q, DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 1.0, 500.0, 10.0])));
            assert_eq!(t.agent(i).r[(0, 0)], 0.1);
        }
    }

    #[test]
    fn defaults_apply() {
        let text = TWO_AREA_TABLE1.replace("dt = 0.1\n", "");
        let s = parse_scenario(&text).unwrap();
        assert_eq!(s.dt, DEFAULT_DT);
        let minimal = r#"
            [areas.1]
            inertia = 1.0
            damping = 1.0
            charging_time = 1.0
            droop = 1.0
            governor_time = 1.0
            [types.1]
            q = [1.0, 1.0, 1.0, 1.0]
            r = [1.0]
        "#;
        let s = parse_scenario(minimal).unwrap();
        assert_eq!(s.sim_steps, DEFAULT_STEPS);
        assert_eq!(s.horizon, Horizon::Finite(DEFAULT_HORIZON));
        assert_eq!(s.tax_mode, TaxMode::On);
        assert_eq!(s.x0, DVector::zeros(4));
    }

    #[test]
    fn negative_inertia_names_area() {
        let text = TWO_AREA_TABLE1.replace("inertia = 4.0", "inertia = -4.0");
        match parse_scenario(&text).unwrap_err() {
            Error::Config { path, .. } => assert_eq!(path, "areas.2.inertia"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{TWO_AREA_TABLE1}\n[bogus]\nx = 1\n");
        assert!(matches!(parse_scenario(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn infinite_horizon_keyword() {
        let text = TWO_AREA_TABLE1.replace("horizon = 50", "horizon = \"infinite\"");
        assert_eq!(parse_scenario(&text).unwrap().horizon, Horizon::Infinite);
        let text = TWO_AREA_TABLE1.replace("horizon = 50", "horizon = \"forever\"");
        assert!(parse_scenario(&text).is_err());
    }

    #[test]
    fn round_trip_with_schedule_and_full_matrix() {
        let mut s = Scenario::two_area_table1();
        let q = DMatrix::from_row_slice(4, 4, &[
            10.0, 0.5, 0.0, 0.0, //
            0.5, 1.0, 0.0, 0.0, //
            0.0, 0.0, 600.0, 0.0, //
            0.0, 0.0, 0.0, 10.0,
        ]);
        let later = TypeVector::new(1, q, DMatrix::from_element(1, 1, 0.2)).unwrap();
        let first = s.true_types[1].at(0).clone();
        s.true_types[1] = TypeStream::from_segments(vec![(0, first), (120, later)]).unwrap();
        s.horizon = Horizon::Infinite;
        s.x0[6] = 0.25;
        let back = parse_scenario(&s.to_toml()).unwrap();
        assert_eq!(back, s);
    }
}
