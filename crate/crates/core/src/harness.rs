//! Subcommand pipelines shared by the binary and the tests.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bounds::{self, EfficiencyCertificate, SandwichReport};
use crate::error::{Error, Result};
use crate::lq::{self, AgentCosts};
use crate::mechanism::{self, GridSpec, SearchReport, TaxLedger, TaxMode};
use crate::mpc::{self, Policy, ProfileSchedule, TrajectoryRecord, TypeProfile};
use crate::par::{self, Execution};
use crate::plant::{DiscretePlant, Discretization};
use crate::report::{self, fmt_g, CertificateRow};
use crate::scenario::{Horizon, Scenario};

/// Command-line overrides applied on top of a scenario file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub horizon: Option<Horizon>,
    pub steps: Option<usize>,
    pub no_tax: bool,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<()> {
        if let Some(h) = self.horizon {
            if h == Horizon::Finite(0) {
                return Err(Error::invalid("--horizon", "must be >= 1"));
            }
            s.horizon = h;
        }
        if let Some(n) = self.steps {
            if n == 0 {
                return Err(Error::invalid("--steps", "must be >= 1"));
            }
            s.sim_steps = n;
        }
        if self.no_tax {
            s.tax_mode = TaxMode::Off;
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Metadata {
    pub command: &'static str,
    pub seed: u64,
    /// `(stage, seconds)`.
    pub durations: Vec<(String, f64)>,
}

impl Metadata {
    fn new(command: &'static str, seed: u64) -> Self {
        Metadata { command, seed, durations: Vec::new() }
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.durations.push((stage.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub dt: f64,
    pub trajectory: TrajectoryRecord,
    pub costs: AgentCosts,
    pub ledger: Option<TaxLedger>,
    /// `J^i + pi_0^i`, present for mechanism runs.
    pub net_costs: Option<Vec<f64>>,
    pub certificate: Option<CertificateRow>,
    pub metadata: Metadata,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("steps: {}\n", self.trajectory.steps()));
        for (i, j) in self.costs.per_agent.iter().enumerate() {
            s.push_str(&format!("J{} = {}", i + 1, fmt_g(*j)));
            if let (Some(ledger), Some(net)) = (&self.ledger, &self.net_costs) {
                s.push_str(&format!("  taxes = {}  net = {}", fmt_g(ledger.total(i)), fmt_g(net[i])));
            }
            s.push('\n');
        }
        s.push_str(&format!("total = {}\n", fmt_g(self.costs.total)));
        if let Some(row) = &self.certificate {
            s.push_str(&certificate_line(row));
        }
        for (stage, secs) in &self.metadata.durations {
            s.push_str(&format!("[{}] {stage}: {:.3} s\n", self.metadata.command, secs));
        }
        s
    }
}

fn certificate_line(row: &CertificateRow) -> String {
    let c = &row.certificate;
    let mut line = format!(
        "T = {}: alpha = {}, rho = {}, gamma = {}, eps = {}, step = {:.4} ms\n",
        c.horizon,
        fmt_g(c.alpha),
        fmt_g(c.rho),
        fmt_g(c.gamma),
        c.eps.map_or_else(|| "none (gamma >= 1)".to_string(), fmt_g),
        row.mpc_step_ms
    );
    let residual = c.identity_residual();
    if c.alpha.is_finite() && !(residual.abs() <= 1e-9 * (1.0 + c.rho / (1.0 - c.gamma).abs())) {
        line.push_str(&format!("       warning: certificate identity residual {residual:.3e}\n"));
    }
    line
}

/// Median wall time in ms of one open-loop MPC solve from `x`.
pub fn time_openloop_step(plant: &DiscretePlant, x: &DVector<f64>, profile: &TypeProfile, horizon: usize) -> Result<f64> {
    const MIN_REPS: usize = 7;
    const BUDGET_S: f64 = 0.05;
    let mut samples = Vec::new();
    let start = Instant::now();
    while samples.len() < MIN_REPS || (start.elapsed().as_secs_f64() < BUDGET_S && samples.len() < 1000) {
        let t = Instant::now();
        let u = mpc::openloop_step(plant, x, profile, horizon)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(u);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

fn certificate_row(s: &Scenario, plant: &DiscretePlant, horizon: usize) -> Result<CertificateRow> {
    let env = s.envelope()?;
    let certificate = bounds::certify(plant, &env, horizon)?;
    let mpc_step_ms = time_openloop_step(plant, &s.x0, &s.nominal_profile()?, horizon)?;
    Ok(CertificateRow { certificate, mpc_step_ms })
}

/// Closed loop under truthful reports.
pub fn cmd_simulate(s: &Scenario) -> Result<RunReport> {
    let mut metadata = Metadata::new("simulate", s.seed);
    let plant = s.plant()?;
    let truth = s.truth()?;
    let trajectory =
        metadata.time("closed loop", || mpc::run_policy(&plant, &s.x0, &truth, &truth, s.horizon.policy(), s.sim_steps))?;
    let costs = lq::evaluate_agent_costs(&trajectory, &truth)?;
    let certificate = match s.horizon {
        Horizon::Finite(t) => Some(metadata.time("certificate", || certificate_row(s, &plant, t))?),
        Horizon::Infinite => None,
    };
    Ok(RunReport { dt: s.dt, trajectory, costs, ledger: None, net_costs: None, certificate, metadata })
}

/// Truthful run, counterfactuals, taxes and net costs.
pub fn cmd_mechanism(s: &Scenario, exec: Execution) -> Result<RunReport> {
    let mut metadata = Metadata::new("mechanism", s.seed);
    let setup = s.mechanism()?;
    let run = metadata.time("mechanism", || setup.run(exec))?;
    let costs = lq::evaluate_agent_costs(&run.trajectory, &setup.truth)?;
    Ok(RunReport {
        dt: s.dt,
        trajectory: run.trajectory,
        costs,
        ledger: Some(run.ledger),
        net_costs: Some(run.net_costs),
        certificate: None,
        metadata,
    })
}

/// Write CSVs and response plots; returns the written paths.
pub fn emit_artifacts(report: &RunReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        ("trajectory.csv".to_string(), report::trajectory_csv(&report.trajectory, report.dt)),
        ("costs.csv".to_string(), report::costs_csv(&report.trajectory)),
    ];
    if let Some(ledger) = &report.ledger {
        files.push(("taxes.csv".into(), report::taxes_csv(ledger)));
    }
    if let Some(row) = &report.certificate {
        files.push(("certificate.csv".into(), report::certificate_csv(std::slice::from_ref(row))));
    }
    for (name, svg) in report::response_plots(&report.trajectory, report.dt) {
        files.push((name.to_string(), svg));
    }
    write_all(out, &files)
}

fn write_all(out: &Path, files: &[(String, String)]) -> Result<Vec<PathBuf>> {
    files
        .iter()
        .map(|(name, body)| {
            report::write(out, name, body)?;
            Ok(out.join(name))
        })
        .collect()
}

pub const DEFAULT_BOUND_HORIZONS: [usize; 5] = [2, 5, 10, 20, 50];
pub const SANDWICH_SAMPLES: usize = 100;

/// `count` random unit vectors of length `n`, reproducible from `seed`.
pub fn random_unit_states(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let norm = v.norm();
            if norm > 1e-3 {
                break v / norm;
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct BoundsReport {
    pub rows: Vec<CertificateRow>,
    /// Realized vs optimal infinite-horizon costs at random unit states, per horizon.
    pub sandwich: Vec<SandwichReport>,
    pub metadata: Metadata,
}

impl BoundsReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (row, sw) in self.rows.iter().zip(&self.sandwich) {
            s.push_str(&certificate_line(row));
            s.push_str(&format!(
                "       J_hat/J over {} unit states: max {}, min lower slack {}\n",
                sw.samples.len(),
                fmt_g(sw.max_ratio),
                fmt_g(sw.min_lower_slack)
            ));
        }
        s
    }

    /// `NoCertificate` for the first horizon without `gamma < 1`.
    pub fn require_valid(&self) -> Result<()> {
        match self.rows.iter().find(|r| !r.certificate.valid()) {
            Some(r) => Err(Error::NoCertificate { gamma: r.certificate.gamma }),
            None => Ok(()),
        }
    }

    pub fn certificates(&self) -> Vec<&EfficiencyCertificate> {
        self.rows.iter().map(|r| &r.certificate).collect()
    }
}

/// Certificates over `horizons`, computed in parallel; per-step MPC timings are taken
/// afterwards, one horizon at a time, so they do not compete for cores.
pub fn cmd_bounds(s: &Scenario, horizons: &[usize], exec: Execution) -> Result<BoundsReport> {
    let mut metadata = Metadata::new("bounds", s.seed);
    let plant = s.plant()?;
    let env = s.envelope()?;
    let nominal = s.nominal_profile()?;
    let samples = random_unit_states(plant.state_dim(), SANDWICH_SAMPLES, s.seed);
    let certs = metadata.time("certificates", || {
        par::map(exec, horizons, |&t| bounds::certify(&plant, &env, t)).into_iter().collect::<Result<Vec<_>>>()
    })?;
    let sandwich = metadata.time("sandwich", || {
        certs
            .iter()
            .map(|c| bounds::sandwich_report(&plant, &nominal, c.clone(), &samples, exec))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows = metadata.time("timing", || {
        certs
            .into_iter()
            .map(|certificate| {
                let mpc_step_ms = time_openloop_step(&plant, &s.x0, &nominal, certificate.horizon)?;
                Ok(CertificateRow { certificate, mpc_step_ms })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BoundsReport { rows, sandwich, metadata })
}

pub fn emit_bounds(report: &BoundsReport, out: &Path) -> Result<Vec<PathBuf>> {
    write_all(out, &[("certificate.csv".into(), report::certificate_csv(&report.rows))])
}

#[derive(Clone, Debug)]
pub struct MisreportReport {
    pub agent: usize,
    pub tax_on: SearchReport,
    pub tax_off: SearchReport,
    pub grid: GridSpec,
    pub metadata: Metadata,
}

impl MisreportReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (mode, r) in [("on", &self.tax_on), ("off", &self.tax_off)] {
            s.push_str(&format!(
                "agent {} taxes {mode}: {} admissible points, {} skipped, best gap {}",
                self.agent + 1,
                r.evaluated,
                r.skipped,
                fmt_g(r.best_gap())
            ));
            if let Some((f, _)) = &r.best {
                let f: Vec<String> = f.iter().map(|v| fmt_g(*v)).collect();
                s.push_str(&format!(" at factors [{}]", f.join(", ")));
            }
            s.push('\n');
        }
        s
    }

    pub fn csv(&self) -> String {
        let dims = self.tax_on.best.as_ref().or(self.tax_off.best.as_ref()).map_or(0, |(f, _)| f.len());
        let mut header = vec!["tax_mode".to_string(), "agent".into()];
        header.extend((1..=dims).map(|k| format!("factor{k}")));
        header.extend(["truthful_net", "deviation_net", "gap", "evaluated", "skipped"].map(String::from));
        let mut rows = Vec::new();
        for (mode, r) in [("on", &self.tax_on), ("off", &self.tax_off)] {
            let mut row = vec![mode.to_string(), (self.agent + 1).to_string()];
            match &r.best {
                Some((f, g)) => {
                    row.extend(f.iter().map(|v| fmt_g(*v)));
                    row.extend([fmt_g(g.truthful_net), fmt_g(g.deviation_net), fmt_g(g.gap)]);
                }
                None => row.extend(std::iter::repeat_n(String::new(), dims + 3)),
            }
            row.extend([r.evaluated.to_string(), r.skipped.to_string()]);
            rows.push(row);
        }
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        report::table_csv(&header, &rows)
    }
}

/// Best constant misreport for `agent` over `grid`, with taxes on and off.
pub fn cmd_misreport(s: &Scenario, agent: usize, grid: &GridSpec, exec: Execution) -> Result<MisreportReport> {
    if agent >= s.num_agents() {
        return Err(Error::invalid("--agent", format!("must lie in 1..={}", s.num_agents())));
    }
    let mut metadata = Metadata::new("misreport", s.seed);
    let mut setup = s.mechanism()?;
    setup.tax_mode = TaxMode::On;
    let tax_on = metadata.time("search, taxes on", || mechanism::misreport_search(&setup, agent, grid, 0, exec))?;
    setup.tax_mode = TaxMode::Off;
    let tax_off = metadata.time("search, taxes off", || mechanism::misreport_search(&setup, agent, grid, 0, exec))?;
    Ok(MisreportReport { agent, tax_on, tax_off, grid: grid.clone(), metadata })
}

pub fn emit_misreport(report: &MisreportReport, out: &Path) -> Result<Vec<PathBuf>> {
    write_all(out, &[("misreport.csv".into(), report.csv())])
}

/// Published benchmark costs `(J^1, J^2, J^1 + J^2)` for the truthful and misreport cases.
pub const REFERENCE_COSTS: [[f64; 3]; 2] = [[24.64, 18.01, 42.65], [23.83, 19.62, 43.45]];

/// Factors applied to firm 1's `(Q, R)` diagonal in the misreport case.
pub const CASE2_Q_FACTORS: [f64; 4] = [1.0, 1.0, 2.0, 1.0];

pub const SENSITIVITY_STEPS: [usize; 3] = [300, 600, 1200];

#[derive(Clone, Debug)]
pub struct CasePair {
    pub discretization: Discretization,
    pub steps: usize,
    pub case1: AgentCosts,
    pub case2: AgentCosts,
}

impl CasePair {
    pub fn case(&self, k: usize) -> [f64; 3] {
        let c = if k == 0 { &self.case1 } else { &self.case2 };
        [c.per_agent[0], c.per_agent[1], c.total]
    }

    /// Largest relative deviation from the reference over all six entries.
    pub fn max_rel_dev(&self) -> f64 {
        (0..2)
            .flat_map(|k| self.case(k).into_iter().zip(REFERENCE_COSTS[k]).map(|(m, r)| ((m - r) / r).abs()))
            .fold(0.0, f64::max)
    }

    pub fn signs_match(&self) -> bool {
        let (a, b) = (self.case(0), self.case(1));
        b[0] < a[0] && b[2] > a[2]
    }
}

#[derive(Clone, Debug)]
pub struct ReproReport {
    pub dt: f64,
    /// Scenario discretization and length.
    pub main: CasePair,
    pub case1: TrajectoryRecord,
    pub case2: TrajectoryRecord,
    /// `{Euler, ZOH} x SENSITIVITY_STEPS`.
    pub sensitivity: Vec<CasePair>,
}

fn disc_name(d: Discretization) -> &'static str {
    match d {
        Discretization::Zoh => "zoh",
        Discretization::Euler => "euler",
    }
}

impl ReproReport {
    pub fn table2_csv(&self) -> String {
        let mut rows = Vec::new();
        for k in 0..2 {
            let m = self.main.case(k);
            let r = REFERENCE_COSTS[k];
            let mut row = vec![(k + 1).to_string()];
            row.extend(m.iter().map(|v| fmt_g(*v)));
            row.extend(r.iter().map(|v| fmt_g(*v)));
            row.extend(m.iter().zip(r).map(|(m, r)| fmt_g((m - r) / r)));
            rows.push(row);
        }
        report::table_csv(
            &["case", "J1", "J2", "total", "ref_J1", "ref_J2", "ref_total", "rel_dev_J1", "rel_dev_J2", "rel_dev_total"],
            &rows,
        )
    }

    pub fn sensitivity_csv(&self) -> String {
        let mut rows = Vec::new();
        for p in &self.sensitivity {
            for k in 0..2 {
                let c = p.case(k);
                let mut row = vec![disc_name(p.discretization).to_string(), p.steps.to_string(), (k + 1).to_string()];
                row.extend(c.iter().map(|v| fmt_g(*v)));
                row.extend(c.iter().zip(REFERENCE_COSTS[k]).map(|(m, r)| fmt_g((m - r) / r)));
                rows.push(row);
            }
        }
        report::table_csv(
            &["discretization", "steps", "case", "J1", "J2", "total", "rel_dev_J1", "rel_dev_J2", "rel_dev_total"],
            &rows,
        )
    }

    pub fn summary(&self) -> String {
        let mut s = String::from("case        J1            J2            total         (reference)\n");
        for k in 0..2 {
            let m = self.main.case(k);
            let r = REFERENCE_COSTS[k];
            s.push_str(&format!(
                "{}      {:>12.4}  {:>12.4}  {:>12.4}   ({}, {}, {})  max rel dev {:.1}%\n",
                k + 1,
                m[0],
                m[1],
                m[2],
                r[0],
                r[1],
                r[2],
                100.0 * m.iter().zip(r).map(|(m, r)| ((m - r) / r).abs()).fold(0.0, f64::max)
            ));
        }
        s.push_str(&format!(
            "case 2 - case 1: dJ1 = {:+.4}, dTotal = {:+.4} (signs {})\n",
            self.main.case(1)[0] - self.main.case(0)[0],
            self.main.case(1)[2] - self.main.case(0)[2],
            if self.main.signs_match() { "match" } else { "DO NOT match" }
        ));
        s.push_str("sensitivity (max rel dev over both cases):\n");
        for p in &self.sensitivity {
            s.push_str(&format!("  {:<5} {:>5} steps: {:.1}%\n", disc_name(p.discretization), p.steps, 100.0 * p.max_rel_dev()));
        }
        s
    }
}

/// Truthful and misreport profiles of the two-case comparison.
pub fn case_profiles(s: &Scenario) -> Result<(TypeProfile, TypeProfile)> {
    let truth = s.nominal_profile()?;
    let r_dim = truth.agent(0).r.nrows();
    let lie = truth.agent(0).scaled_diagonal(&CASE2_Q_FACTORS, &vec![1.0; r_dim])?;
    let reported = truth.with_agent(lie)?;
    Ok((truth, reported))
}

/// Stationary LQR from reported types; costs booked under the true types.
pub fn run_case_pair(s: &Scenario, discretization: Discretization, steps: usize) -> Result<(CasePair, [TrajectoryRecord; 2])> {
    let mut s = s.clone();
    s.discretization = discretization;
    let plant = s.plant()?;
    let (truth, lie) = case_profiles(&s)?;
    let truth_sched = ProfileSchedule::constant(truth.clone());
    let t1 = mpc::run_policy(&plant, &s.x0, &truth_sched, &truth_sched, Policy::Lqr, steps)?;
    let t2 = mpc::run_policy(&plant, &s.x0, &ProfileSchedule::constant(lie), &truth_sched, Policy::Lqr, steps)?;
    let case1 = lq::evaluate_agent_costs(&t1, &truth_sched)?;
    let case2 = lq::evaluate_agent_costs(&t2, &truth_sched)?;
    Ok((CasePair { discretization, steps, case1, case2 }, [t1, t2]))
}

pub fn cmd_repro_tables(s: &Scenario, exec: Execution) -> Result<ReproReport> {
    if s.num_agents() != 2 {
        return Err(Error::config("areas", "the two-case comparison needs exactly two areas"));
    }
    let (main, [case1, case2]) = run_case_pair(s, s.discretization, s.sim_steps)?;
    let grid: Vec<(Discretization, usize)> = [Discretization::Euler, Discretization::Zoh]
        .into_iter()
        .flat_map(|d| SENSITIVITY_STEPS.into_iter().map(move |n| (d, n)))
        .collect();
    let sensitivity = par::map(exec, &grid, |&(d, n)| run_case_pair(s, d, n).map(|(p, _)| p))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ReproReport { dt: s.dt, main, case1, case2, sensitivity })
}

pub fn emit_repro(report: &ReproReport, out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = write_all(
        out,
        &[("table2.csv".into(), report.table2_csv()), ("sensitivity.csv".into(), report.sensitivity_csv())],
    )?;
    for (dir, traj) in [("case1", &report.case1), ("case2", &report.case2)] {
        let mut files = vec![
            ("trajectory.csv".to_string(), report::trajectory_csv(traj, report.dt)),
            ("costs.csv".to_string(), report::costs_csv(traj)),
        ];
        for (name, svg) in report::response_plots(traj, report.dt) {
            files.push((name.to_string(), svg));
        }
        written.extend(write_all(&out.join(dir), &files)?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short() -> Scenario {
        let mut s = Scenario::two_area_table1();
        s.sim_steps = 60;
        s.horizon = Horizon::Finite(10);
        s
    }

    #[test]
    fn simulate_totals_recompute() {
        let r = cmd_simulate(&short()).unwrap();
        let sum: f64 = r.trajectory.stage_costs.iter().flatten().sum();
        assert!((sum - r.costs.total).abs() <= 1e-12 * sum);
        assert!(r.certificate.is_some());
    }

    #[test]
    fn mechanism_net_cost_identity() {
        let r = cmd_mechanism(&short(), Execution::Sequential).unwrap();
        let ledger = r.ledger.as_ref().unwrap();
        for i in 0..2 {
            let expect = r.costs.per_agent[i] + ledger.tax_to_go[i][0];
            assert!((r.net_costs.as_ref().unwrap()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn overrides() {
        let mut s = short();
        Overrides { horizon: Some(Horizon::Infinite), steps: Some(7), no_tax: true, seed: Some(9) }.apply(&mut s).unwrap();
        assert_eq!((s.horizon, s.sim_steps, s.tax_mode, s.seed), (Horizon::Infinite, 7, TaxMode::Off, 9));
        assert!(Overrides { steps: Some(0), ..Default::default() }.apply(&mut s).is_err());
    }

    #[test]
    fn emits_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = cmd_mechanism(&short(), Execution::Parallel).unwrap();
        let files = emit_artifacts(&r, dir.path()).unwrap();
        let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        for n in ["trajectory.csv", "costs.csv", "taxes.csv", "omega.svg", "delta.svg", "pv.svg"] {
            assert!(names.iter().any(|x| x == n), "missing {n}");
        }
    }

    #[test]
    fn unit_states_are_seeded() {
        let a = random_unit_states(8, 3, 1);
        assert_eq!(a, random_unit_states(8, 3, 1));
        assert_ne!(a, random_unit_states(8, 3, 2));
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }
}
