//! Efficiency certificate of the receding-horizon rule and admissibility of reports.
//!
//! For horizon `T` the certificate combines
//!
//! * `alpha_T`, the smallest `a` with `a P_{T-1} >= P_T` (Riccati ratio),
//! * `rho_T = max { r : r Pbar_T <= Q_lo }`, with `Pbar` the ladder of the upper weights,
//! * `gamma_T = (1 - rho_T) alpha_T / (1 - delta)`,
//! * `1 + eps_T = rho_T (1 - delta)^(1 - T) / (1 - gamma_T)`, defined only when `gamma_T < 1`,
//!
//! and bounds the realized cost of the policy by `J <= J_hat <= (1 + eps_T) J`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation, ViolationSide, WeightKind};
use crate::linalg::{self, generalized_eigenvalues, min_eigenvalue, quad_form};
use crate::lq::{self, CostWeights};
use crate::mpc::{feedback_gain, Policy, ProfileSchedule, TrajectoryRecord, TypeProfile, TypeStream, TypeVector};
use crate::par::{self, Execution};
use crate::plant::{DiscretePlant, Partition};

/// Slack allowed on minimum-eigenvalue tests, relative to the matrix scale.
pub const PSD_TOL: f64 = 1e-10;

/// Bounds on one agent's reported weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TypeBounds {
    pub q_lo: DMatrix<f64>,
    pub q_hi: DMatrix<f64>,
    pub r_lo: DMatrix<f64>,
    pub r_hi: DMatrix<f64>,
}

/// A priori bounds `Q_lo <= Q_t <= Q_hi`, `R_lo <= R_t <= R_hi` per agent and
/// the rate limit `(1 - delta) W_t <= W_{t+1} <= (1 + delta) W_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissibilityEnvelope {
    pub agents: Vec<TypeBounds>,
    pub delta: f64,
}

/// Envelope as multiples of the nominal true types.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSpec {
    pub lower: f64,
    pub upper: f64,
    pub delta: f64,
}

impl Default for EnvelopeSpec {
    fn default() -> Self {
        EnvelopeSpec { lower: 0.5, upper: 2.0, delta: 0.0 }
    }
}

fn psd_gap(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    min_eigenvalue(m)
}

fn order_ok(small: &DMatrix<f64>, big: &DMatrix<f64>) -> (bool, f64) {
    let gap = psd_gap(&(big - small));
    let scale = small.amax().max(big.amax()).max(1.0);
    (gap >= -PSD_TOL * scale, gap)
}

impl AdmissibilityEnvelope {
    pub fn new(agents: Vec<TypeBounds>, delta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid("envelope.delta", format!("must lie in [0, 1), got {delta}")));
        }
        for (i, b) in agents.iter().enumerate() {
            let name = |s: &str| format!("envelope agent {} {s}", i + 1);
            if b.q_lo.nrows() > 0 && min_eigenvalue(&b.q_lo) <= 0.0 {
                return Err(Error::invalid(name("q_lo"), "must be positive definite"));
            }
            if b.r_lo.nrows() > 0 && min_eigenvalue(&b.r_lo) <= 0.0 {
                return Err(Error::invalid(name("r_lo"), "must be positive definite"));
            }
            if !order_ok(&b.q_lo, &b.q_hi).0 || !order_ok(&b.r_lo, &b.r_hi).0 {
                return Err(Error::invalid(name("bounds"), "lower bound must not exceed upper bound"));
            }
        }
        Ok(AdmissibilityEnvelope { agents, delta })
    }

    /// `[lower, upper]` times the nominal types in `profile`.
    pub fn scaled_around(profile: &TypeProfile, spec: EnvelopeSpec) -> Result<Self> {
        if !(spec.lower > 0.0 && spec.lower <= spec.upper && spec.upper.is_finite()) {
            return Err(Error::invalid(
                "envelope",
                format!("need 0 < lower <= upper, got [{}, {}]", spec.lower, spec.upper),
            ));
        }
        let agents = profile
            .types()
            .iter()
            .map(|t| TypeBounds {
                q_lo: &t.q * spec.lower,
                q_hi: &t.q * spec.upper,
                r_lo: &t.r * spec.lower,
                r_hi: &t.r * spec.upper,
            })
            .collect();
        AdmissibilityEnvelope::new(agents, spec.delta)
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    /// Stacked `(Q_lo, R_lo)` or `(Q_hi, R_hi)` over `partition`.
    pub fn corner(&self, partition: &Partition, q_upper: bool, r_upper: bool) -> Result<CostWeights> {
        if partition.num_agents() != self.num_agents() {
            return Err(Error::Dimension("envelope/partition agent count".into()));
        }
        let q: Vec<_> = self.agents.iter().map(|b| if q_upper { b.q_hi.clone() } else { b.q_lo.clone() }).collect();
        let r: Vec<_> = self
            .agents
            .iter()
            .zip(&partition.inputs)
            .filter(|(_, us)| !us.is_empty())
            .map(|(b, _)| if r_upper { b.r_hi.clone() } else { b.r_lo.clone() })
            .collect();
        Ok(CostWeights { q: linalg::block_diag(&q), r: linalg::block_diag(&r) })
    }

    pub fn validate_stream(&self, agent: usize, stream: &TypeStream) -> Result<(), Violation> {
        let segs = stream.segments();
        for (_, theta) in segs {
            let mut t = theta.clone();
            t.agent = agent;
            validate_type_bounds(&t, self)?;
        }
        for w in segs.windows(2) {
            let (mut a, mut b) = (w[0].1.clone(), w[1].1.clone());
            a.agent = agent;
            b.agent = agent;
            validate_type_rate(&a, &b, self.delta)?;
        }
        Ok(())
    }

    pub fn validate_schedule(&self, schedule: &ProfileSchedule) -> Result<(), Violation> {
        (0..schedule.num_agents()).try_for_each(|i| self.validate_stream(i, &schedule.agent_stream(i)))
    }
}

/// `Q_lo <= Q <= Q_hi` and `R_lo <= R <= R_hi` for `theta`'s agent.
pub fn validate_type_bounds(theta: &TypeVector, env: &AdmissibilityEnvelope) -> Result<(), Violation> {
    let b = env.agents.get(theta.agent).ok_or(Violation {
        agent: theta.agent,
        matrix: WeightKind::Q,
        side: ViolationSide::BelowLower,
        min_eigenvalue: f64::NAN,
    })?;
    let checks = [
        (WeightKind::Q, ViolationSide::BelowLower, &b.q_lo, &theta.q),
        (WeightKind::Q, ViolationSide::AboveUpper, &theta.q, &b.q_hi),
        (WeightKind::R, ViolationSide::BelowLower, &b.r_lo, &theta.r),
        (WeightKind::R, ViolationSide::AboveUpper, &theta.r, &b.r_hi),
    ];
    for (matrix, side, small, big) in checks {
        if small.shape() != big.shape() {
            return Err(Violation { agent: theta.agent, matrix, side, min_eigenvalue: f64::NAN });
        }
        let (ok, gap) = order_ok(small, big);
        if !ok {
            return Err(Violation { agent: theta.agent, matrix, side, min_eigenvalue: gap });
        }
    }
    Ok(())
}

/// `(1 - delta) W_t <= W_next <= (1 + delta) W_t` for `W` in `{Q, R}`.
pub fn validate_type_rate(theta_t: &TypeVector, theta_next: &TypeVector, delta: f64) -> Result<(), Violation> {
    let checks = [
        (WeightKind::Q, &theta_t.q, &theta_next.q),
        (WeightKind::R, &theta_t.r, &theta_next.r),
    ];
    for (matrix, now, next) in checks {
        let violation = |side, gap| Violation { agent: theta_t.agent, matrix, side, min_eigenvalue: gap };
        if now.shape() != next.shape() {
            return Err(violation(ViolationSide::RateIncrease, f64::NAN));
        }
        let (ok, gap) = order_ok(&(now * (1.0 - delta)), next);
        if !ok {
            return Err(violation(ViolationSide::RateDecrease, gap));
        }
        let (ok, gap) = order_ok(next, &(now * (1.0 + delta)));
        if !ok {
            return Err(violation(ViolationSide::RateIncrease, gap));
        }
    }
    Ok(())
}

/// `alpha_{T+1}`: the largest eigenvalue of the pencil `P_{T+1} v = lambda P_T v`,
/// i.e. the smallest `a` with `a P_T >= P_{T+1}`.
pub fn compute_alpha(plant: &DiscretePlant, w: &CostWeights, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    let ladder = lq::riccati_finite(plant, w, horizon + 1)?;
    riccati_ratio(&ladder.costs[horizon + 1], &ladder.costs[horizon])
}

fn riccati_ratio(next: &DMatrix<f64>, prev: &DMatrix<f64>) -> Result<f64> {
    let ev = generalized_eigenvalues(next, prev)
        .map_err(|_| Error::Degenerate("P_T is singular; Q must be positive definite".into()))?;
    Ok(ev.last().copied().unwrap_or(1.0))
}

/// Conservative `alpha_{T+1}` over the envelope: the max over the four
/// `(Q_lo | Q_hi, R_lo | R_hi)` corners.
pub fn compute_alpha_envelope(plant: &DiscretePlant, env: &AdmissibilityEnvelope, horizon: usize) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (qu, ru) in [(false, false), (false, true), (true, false), (true, true)] {
        let w = env.corner(&plant.partition, qu, ru)?;
        best = best.max(compute_alpha(plant, &w, horizon)?);
    }
    Ok(best)
}

/// `rho_T`: smallest eigenvalue of `Q_lo v = lambda Pbar_T v`, with `Pbar` built
/// from the upper weights `(Q_hi, R_hi)`.
pub fn compute_rho(plant: &DiscretePlant, env: &AdmissibilityEnvelope, horizon: usize) -> Result<f64> {
    let upper = env.corner(&plant.partition, true, true)?;
    let lower = env.corner(&plant.partition, false, false)?;
    let (p_bar, _) = lq::riccati_terminal(plant, &upper, horizon)?;
    let ev = generalized_eigenvalues(&lower.q, &p_bar)
        .map_err(|_| Error::Degenerate("upper Riccati matrix is singular".into()))?;
    Ok(ev.first().copied().unwrap_or(0.0))
}

pub fn compute_gamma(alpha: f64, rho: f64, delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("delta", format!("must lie in [0, 1), got {delta}")));
    }
    Ok((1.0 - rho) * alpha / (1.0 - delta))
}

pub fn compute_eps(rho: f64, gamma: f64, delta: f64, horizon: usize) -> Result<f64> {
    if !(gamma < 1.0) {
        return Err(Error::NoCertificate { gamma });
    }
    let shrink = (1.0 - delta).powi(1 - horizon as i32);
    Ok(rho * shrink / (1.0 - gamma) - 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfficiencyCertificate {
    pub horizon: usize,
    pub alpha: f64,
    pub rho: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Present only when `gamma < 1`.
    pub eps: Option<f64>,
}

impl EfficiencyCertificate {
    pub fn valid(&self) -> bool {
        self.eps.is_some()
    }

    pub fn eps(&self) -> Result<f64> {
        self.eps.ok_or(Error::NoCertificate { gamma: self.gamma })
    }

    /// `1 + ((alpha + delta - 1) / alpha) (gamma / (1 - gamma)) - rho / (1 - gamma)`,
    /// which vanishes identically when `gamma` is computed from `alpha, rho, delta`.
    pub fn identity_residual(&self) -> f64 {
        let g = self.gamma;
        let lhs = 1.0 + ((self.alpha + self.delta - 1.0) / self.alpha) * (g / (1.0 - g));
        lhs - self.rho / (1.0 - g)
    }
}

/// Certificate for horizon `T`, using the envelope-conservative `alpha_T`
/// (ratio of `P_T` to `P_{T-1}`). `T = 1` has `P_0 = 0` and never certifies.
pub fn certify(plant: &DiscretePlant, env: &AdmissibilityEnvelope, horizon: usize) -> Result<EfficiencyCertificate> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be >= 1"));
    }
    let alpha = if horizon == 1 { f64::INFINITY } else { compute_alpha_envelope(plant, env, horizon - 1)? };
    let rho = compute_rho(plant, env, horizon)?;
    let gamma = compute_gamma(alpha, rho, env.delta)?;
    let eps = compute_eps(rho, gamma, env.delta, horizon).ok();
    Ok(EfficiencyCertificate { horizon, alpha, rho, gamma, delta: env.delta, eps })
}

/// `sum_k (A - BK)'^k W (A - BK)^k` with `W = Q + K'RK`, by repeated doubling.
///
/// This is the exact infinite-horizon cost matrix of the stationary feedback `u = -Kx`.
pub fn policy_cost_matrix(plant: &DiscretePlant, w: &CostWeights, gain: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let closed = &plant.a - &plant.b * gain;
    let mut sum = &w.q + gain.transpose() * &w.r * gain;
    let mut phi = closed;
    for _ in 0..80 {
        let add = phi.transpose() * &sum * &phi;
        let done = add.amax() <= 1e-17 * sum.amax();
        sum += add;
        linalg::symmetrize(&mut sum);
        if done {
            return Ok(sum);
        }
        phi = &phi * &phi;
        if !phi.amax().is_finite() || phi.amax() > 1e150 {
            break;
        }
    }
    Err(Error::Instability { step: 0, norm: phi.amax(), limit: 1e150 })
}

/// `(J, J_hat)` for one initial state.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichSample {
    pub optimal: f64,
    pub realized: f64,
}

impl SandwichSample {
    pub fn ratio(&self) -> f64 {
        if self.optimal == 0.0 {
            1.0
        } else {
            self.realized / self.optimal
        }
    }
}

#[derive(Clone, Debug)]
pub struct SandwichReport {
    pub certificate: EfficiencyCertificate,
    pub samples: Vec<SandwichSample>,
    pub max_ratio: f64,
    /// `min (J_hat - J) / J`.
    pub min_lower_slack: f64,
    /// `min ((1 + eps) J - J_hat) / J`; infinite without a certificate.
    pub min_upper_slack: f64,
}

/// Optimal and realized receding-horizon costs under constant true weights,
/// both infinite-horizon and exact.
pub fn sandwich_samples(
    plant: &DiscretePlant,
    truth: &TypeProfile,
    horizon: usize,
    samples: &[DVector<f64>],
    exec: Execution,
) -> Result<Vec<SandwichSample>> {
    let w = truth.weights(&plant.partition)?;
    let optimal = lq::dare_fixed_point(plant, &w, lq::DARE_TOL)?.cost;
    let gain = feedback_gain(plant, &w, Policy::RecedingHorizon(horizon))?;
    let realized = policy_cost_matrix(plant, &w, &gain)?;
    Ok(par::map(exec, samples, |x| SandwichSample {
        optimal: quad_form(&optimal, x),
        realized: quad_form(&realized, x),
    }))
}

/// Check `J <= J_hat <= (1 + eps_T) J` at every sample, with relative slack `tol`.
pub fn certify_sandwich(
    plant: &DiscretePlant,
    env: &AdmissibilityEnvelope,
    truth: &TypeProfile,
    horizon: usize,
    samples: &[DVector<f64>],
    tol: f64,
    exec: Execution,
) -> Result<SandwichReport> {
    let certificate = certify(plant, env, horizon)?;
    let eps = certificate.eps()?;
    let report = sandwich_report(plant, truth, certificate, samples, exec)?;
    for (i, s) in report.samples.iter().enumerate() {
        let scale = s.optimal.max(f64::MIN_POSITIVE);
        let bound = (1.0 + eps) * s.optimal;
        if (s.realized - s.optimal) / scale < -tol || (bound - s.realized) / scale < -tol {
            return Err(Error::CertificateFalsified { sample: i, optimal: s.optimal, realized: s.realized, bound });
        }
    }
    Ok(report)
}

/// Sample costs and slacks against `certificate` without failing on violations.
pub fn sandwich_report(
    plant: &DiscretePlant,
    truth: &TypeProfile,
    certificate: EfficiencyCertificate,
    samples: &[DVector<f64>],
    exec: Execution,
) -> Result<SandwichReport> {
    let samples = sandwich_samples(plant, truth, certificate.horizon, samples, exec)?;
    let mut max_ratio: f64 = 1.0;
    let mut min_lower_slack = f64::INFINITY;
    let mut min_upper_slack = f64::INFINITY;
    for s in &samples {
        if s.optimal == 0.0 {
            continue;
        }
        max_ratio = max_ratio.max(s.ratio());
        min_lower_slack = min_lower_slack.min((s.realized - s.optimal) / s.optimal);
        if let Some(eps) = certificate.eps {
            min_upper_slack = min_upper_slack.min(((1.0 + eps) * s.optimal - s.realized) / s.optimal);
        }
    }
    Ok(SandwichReport { certificate, samples, max_ratio, min_lower_slack, min_upper_slack })
}

/// Worst step of the one-step decay inequality along a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayReport {
    pub steps_checked: usize,
    /// `max_t (J_{t+1,T}(x_{t+1}) - gamma_t J_{t,T}(x_t))`.
    pub worst_excess: f64,
    pub worst_step: usize,
    pub max_gamma: f64,
    pub rho: f64,
}

/// Check `J_{t+1,T}(x_{t+1}; theta_{t+1}) <= gamma_t J_{t,T}(x_t; theta_t)` along
/// `traj`, with `gamma_t = (1 - rho_T) alpha_T(theta_{t+1}) / (1 - delta)`, where
/// `alpha_T(theta)` is the Riccati ratio of `P_T` to `P_{T-1}` for that report.
pub fn check_decay(
    plant: &DiscretePlant,
    env: &AdmissibilityEnvelope,
    traj: &TrajectoryRecord,
    horizon: usize,
) -> Result<DecayReport> {
    if horizon < 2 {
        return Err(Error::invalid("horizon", "decay check needs T >= 2"));
    }
    let rho = compute_rho(plant, env, horizon)?;
    let mut cache: Option<(usize, DMatrix<f64>, f64)> = None;
    let mut at = |t: usize| -> Result<(DMatrix<f64>, f64)> {
        let seg = traj.reported.segment_index(t);
        if cache.as_ref().map(|c| c.0) != Some(seg) {
            let w = traj.reported.at(t).weights(&plant.partition)?;
            let ladder = lq::riccati_finite(plant, &w, horizon)?;
            let alpha = riccati_ratio(&ladder.costs[horizon], &ladder.costs[horizon - 1])?;
            cache = Some((seg, ladder.costs[horizon].clone(), alpha));
        }
        let c = cache.as_ref().unwrap();
        Ok((c.1.clone(), c.2))
    };
    let (mut p_now, _) = at(0)?;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_step = 0;
    let mut max_gamma: f64 = 0.0;
    for t in 0..traj.steps() {
        let (p_next, alpha_next) = at(t + 1)?;
        let gamma = compute_gamma(alpha_next, rho, env.delta)?;
        max_gamma = max_gamma.max(gamma);
        let lhs = quad_form(&p_next, &traj.states[t + 1]);
        let rhs = gamma * quad_form(&p_now, &traj.states[t]);
        if lhs - rhs > worst_excess {
            worst_excess = lhs - rhs;
            worst_step = t;
        }
        p_now = p_next;
    }
    Ok(DecayReport { steps_checked: traj.steps(), worst_excess, worst_step, max_gamma, rho })
}

/// Random admissible walk of diagonal weights: every diagonal entry is scaled by a
/// factor in `[1 - delta, 1 + delta]` per step and clipped to the envelope, which is
/// `[lower, upper]` times the starting types.
pub fn admissible_walk<R: Rng + ?Sized>(
    start: &TypeProfile,
    spec: EnvelopeSpec,
    steps: usize,
    rng: &mut R,
) -> Result<ProfileSchedule> {
    let env = AdmissibilityEnvelope::scaled_around(start, spec)?;
    let dims: Vec<(usize, usize)> = start.types().iter().map(|t| (t.q.nrows(), t.r.nrows())).collect();
    let mut mult: Vec<Vec<f64>> = dims.iter().map(|(q, r)| vec![1.0; q + r]).collect();
    let mut profiles = Vec::with_capacity(steps.max(1));
    for t in 0..steps.max(1) {
        if t > 0 {
            for m in mult.iter_mut().flatten() {
                let f = if spec.delta > 0.0 { rng.random_range(1.0 - spec.delta..=1.0 + spec.delta) } else { 1.0 };
                *m = (*m * f).clamp(spec.lower, spec.upper);
            }
        }
        let types = start
            .types()
            .iter()
            .zip(&mult)
            .map(|(t, m)| t.scaled_diagonal(&m[..t.q.nrows()], &m[t.q.nrows()..]))
            .collect::<Result<Vec<_>>>()?;
        profiles.push(TypeProfile::new(types)?);
    }
    let schedule = ProfileSchedule::from_steps(profiles)?;
    env.validate_schedule(&schedule).map_err(Error::Inadmissible)?;
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_plant(a: f64) -> DiscretePlant {
        DiscretePlant::single_agent(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    fn scalar_env(q_lo: f64, q_hi: f64, delta: f64) -> AdmissibilityEnvelope {
        let s = |v| DMatrix::from_element(1, 1, v);
        AdmissibilityEnvelope::new(vec![TypeBounds { q_lo: s(q_lo), q_hi: s(q_hi), r_lo: s(1.0), r_hi: s(1.0) }], delta)
            .unwrap()
    }

    fn theta(q: f64, r: f64) -> TypeVector {
        TypeVector::diagonal(0, &[q], &[r]).unwrap()
    }

    #[test]
    fn boundary_types_are_admissible() {
        let env = scalar_env(1.0, 4.0, 0.0);
        assert!(validate_type_bounds(&theta(1.0, 1.0), &env).is_ok());
        assert!(validate_type_bounds(&theta(4.0, 1.0), &env).is_ok());
        let v = validate_type_bounds(&theta(4.5, 1.0), &env).unwrap_err();
        assert_eq!((v.matrix, v.side), (WeightKind::Q, ViolationSide::AboveUpper));
        let v = validate_type_bounds(&theta(2.0, 0.5), &env).unwrap_err();
        assert_eq!((v.matrix, v.side), (WeightKind::R, ViolationSide::BelowLower));
    }

    #[test]
    fn one_large_eigenvalue_violates() {
        let hi = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0]));
        let env = AdmissibilityEnvelope::new(
            vec![TypeBounds {
                q_lo: DMatrix::identity(2, 2) * 0.5,
                q_hi: hi,
                r_lo: DMatrix::identity(1, 1),
                r_hi: DMatrix::identity(1, 1),
            }],
            0.0,
        )
        .unwrap();
        let t = TypeVector::diagonal(0, &[1.0, 2.5], &[1.0]).unwrap();
        assert!(validate_type_bounds(&t, &env).is_err());
    }

    #[test]
    fn rate_limits() {
        let t = theta(2.0, 1.0);
        assert!(validate_type_rate(&t, &t, 0.0).is_ok());
        let v = validate_type_rate(&t, &theta(4.0, 1.0), 0.5).unwrap_err();
        assert_eq!(v.side, ViolationSide::RateIncrease);
        assert!(validate_type_rate(&t, &theta(2.8, 1.0), 0.5).is_ok());
        let v = validate_type_rate(&t, &theta(0.5, 1.0), 0.5).unwrap_err();
        assert_eq!(v.side, ViolationSide::RateDecrease);
    }

    #[test]
    fn envelope_rejects_bad_delta() {
        let s = |v| DMatrix::from_element(1, 1, v);
        let b = TypeBounds { q_lo: s(1.0), q_hi: s(2.0), r_lo: s(1.0), r_hi: s(1.0) };
        assert!(AdmissibilityEnvelope::new(vec![b.clone()], 1.0).is_err());
        let swapped = TypeBounds { q_lo: s(2.0), q_hi: s(1.0), ..b };
        assert!(AdmissibilityEnvelope::new(vec![swapped], 0.0).is_err());
    }

    #[test]
    fn deadbeat_alpha_and_rho() {
        let w = CostWeights::new(DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((compute_alpha(&scalar_plant(0.0), &w, 3).unwrap() - 1.0).abs() < 1e-14);
        let rho = compute_rho(&scalar_plant(0.0), &scalar_env(2.0, 2.0, 0.0), 4).unwrap();
        assert!((rho - 1.0).abs() < 1e-14);
        let rho = compute_rho(&scalar_plant(0.0), &scalar_env(1.0, 2.0, 0.0), 4).unwrap();
        assert!((rho - 0.5).abs() < 1e-14);
    }

    #[test]
    fn scalar_alpha_from_hand_ladder() {
        let w = CostWeights::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!((compute_alpha(&scalar_plant(1.0), &w, 1).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn singular_ladder_is_degenerate() {
        let w = CostWeights::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        assert!(matches!(compute_alpha(&scalar_plant(1.0), &w, 2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gamma_arithmetic() {
        assert_eq!(compute_gamma(3.0, 1.0, 0.0).unwrap(), 0.0);
        assert!((compute_gamma(1.0, 0.5, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((compute_gamma(1.2, 0.3, 0.1).unwrap() - 0.7 * 1.2 / 0.9).abs() < 1e-15);
        assert!(compute_gamma(1.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn eps_arithmetic() {
        assert_eq!(compute_eps(1.0, 0.0, 0.0, 7).unwrap(), 0.0);
        for t in [1, 2, 9] {
            assert!(compute_eps(0.5, 0.5, 0.0, t).unwrap().abs() < 1e-15);
        }
        assert!(matches!(compute_eps(0.5, 1.0, 0.0, 3), Err(Error::NoCertificate { .. })));
    }

    #[test]
    fn deadbeat_sandwich_is_tight() {
        let env = scalar_env(2.0, 2.0, 0.0);
        let truth = TypeProfile::uniform_diagonal(1, &[2.0], &[1.0]).unwrap();
        let xs = vec![DVector::from_element(1, 1.0), DVector::zeros(1)];
        let rep = certify_sandwich(&scalar_plant(0.0), &env, &truth, 3, &xs, 1e-12, Execution::Sequential).unwrap();
        assert_eq!(rep.certificate.eps, Some(0.0));
        assert!((rep.samples[0].realized - rep.samples[0].optimal).abs() < 1e-14);
        assert_eq!(rep.samples[1], SandwichSample { optimal: 0.0, realized: 0.0 });
    }

    #[test]
    fn identity_residual_vanishes() {
        let gamma = compute_gamma(1.3, 0.4, 0.05).unwrap();
        let c = EfficiencyCertificate { horizon: 3, alpha: 1.3, rho: 0.4, gamma, delta: 0.05, eps: None };
        assert!(c.identity_residual().abs() < 1e-12);
    }
}
