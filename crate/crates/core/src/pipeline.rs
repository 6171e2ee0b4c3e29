//! Stage orchestration (pre-dispatch, roles, transactions, suite) and
//! CSV/summary artifacts.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use crate::conic::{diagnose_infeasibility, solve, Family, InfeasibilityReport, Solution, Status};
use crate::der::{FAMILY_BATTERY, FAMILY_PV};
use crate::error::Error;
use crate::linpf::{
    nonlinear_pf_oracle, slack_pins, OracleOptions, FAMILY_PCC, FAMILY_POWER_FLOW, FAMILY_SLACK,
};
use crate::market::{
    build_ets, build_pds, extract_roles, market_scale, settlement_report, trade_price, Agent,
    CaseConfig, CaseSet, PriceBook, Role, RoleEntry, RoleSchedule, Settlement, Strategy,
    TradeLedger, FAMILY_INTERACTION,
};
use crate::model::{extract_dispatch, MicrogridDispatch, PreparedMicrogrid, FAMILY_BALANCE};
use crate::netmodel::HOURS;
use crate::phasor::{stacked_index, Phase};
use crate::pq::{FAMILY_HARMONIC, FAMILY_THD, FAMILY_VOLTAGE};
use crate::scenario::Scenario;

/// Families tried, in order, when explaining an infeasible model.
pub const DIAGNOSTIC_FAMILIES: [Family; 10] = [
    FAMILY_THD,
    FAMILY_HARMONIC,
    FAMILY_VOLTAGE,
    FAMILY_PV,
    FAMILY_BATTERY,
    FAMILY_BALANCE,
    FAMILY_POWER_FLOW,
    FAMILY_SLACK,
    FAMILY_PCC,
    FAMILY_INTERACTION,
];

#[derive(Debug)]
pub enum RunError {
    Infeasible {
        stage: String,
        report: InfeasibilityReport,
    },
    Solver {
        stage: String,
        status: Status,
        message: String,
    },
    Model(Error),
}

impl RunError {
    /// Process exit code: 2 infeasible, 3 schema or input error, 4 solver failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Infeasible { .. } => 2,
            RunError::Model(_) => 3,
            RunError::Solver { .. } => 4,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Infeasible { stage, report } => write!(f, "{stage}: {report}"),
            RunError::Solver {
                stage,
                status,
                message,
            } => write!(f, "{stage}: solver {status}: {message}"),
            RunError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Model(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Model(Error::Io(e))
    }
}

pub type RunResult<T> = std::result::Result<T, RunError>;

pub fn prepare(scenario: &Scenario) -> RunResult<Vec<PreparedMicrogrid>> {
    Ok(scenario
        .microgrids
        .iter()
        .map(|mg| PreparedMicrogrid::new(mg.clone(), &scenario.pq))
        .collect::<crate::error::Result<Vec<_>>>()?)
}

fn checked_solve(
    problem: &crate::conic::ConicProblem,
    scenario: &Scenario,
    stage: &str,
) -> RunResult<Solution> {
    let tol = scenario.tolerances.from_env();
    let sol = solve(problem, &tol);
    log::info!(
        "{stage}: {} obj={} iter={} time={:.2}s",
        sol.status,
        sol.objective,
        sol.iterations,
        sol.solve_time
    );
    match sol.status {
        Status::Optimal => Ok(sol),
        Status::Infeasible => {
            let report = diagnose_infeasibility(
                problem,
                &DIAGNOSTIC_FAMILIES,
                &tol,
                sol.certificate_weights.clone(),
            );
            Err(RunError::Infeasible {
                stage: stage.to_string(),
                report,
            })
        }
        status => Err(RunError::Solver {
            stage: stage.to_string(),
            status,
            message: sol.message,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct PdsOutcome {
    pub solutions: Vec<Solution>,
    pub dispatch: Vec<MicrogridDispatch>,
    /// Exchange with the DSO per microgrid and hour, market pu (positive import).
    pub exchange: Vec<Vec<f64>>,
    pub roles: RoleSchedule,
}

impl PdsOutcome {
    pub fn objective(&self) -> f64 {
        self.solutions.iter().map(|s| s.objective).sum()
    }
}

pub fn run_pds(scenario: &Scenario, preps: &[PreparedMicrogrid]) -> RunResult<PdsOutcome> {
    let mut solutions = Vec::new();
    let mut dispatch = Vec::new();
    let mut exchange = Vec::new();
    for prep in preps {
        let (problem, vars) =
            build_pds(prep, &scenario.market.dso_price, scenario.market.base_power)?;
        let stage = format!("pre-dispatch {}", prep.mg.network.name);
        let sol = checked_solve(&problem, scenario, &stage)?;
        let d = extract_dispatch(prep, &vars, &sol.values);
        let scale = market_scale(prep, scenario.market.base_power);
        exchange.push(d.p_pcc.iter().map(|p| p * scale).collect());
        dispatch.push(d);
        solutions.push(sol);
    }
    let roles = extract_roles(&exchange, scenario.market.role_tolerance);
    Ok(PdsOutcome {
        solutions,
        dispatch,
        exchange,
        roles,
    })
}

#[derive(Debug, Clone)]
pub struct EtsOutcome {
    pub case: CaseConfig,
    pub solution: Solution,
    pub dispatch: Vec<MicrogridDispatch>,
    pub ledger: TradeLedger,
    pub prices: PriceBook,
    pub settlement: Vec<Vec<Settlement>>,
    /// Largest power-flow row residual per microgrid.
    pub pf_residual: Vec<f64>,
}

impl EtsOutcome {
    pub fn objective(&self) -> f64 {
        self.solution.objective
    }
}

pub fn run_ets(
    scenario: &Scenario,
    preps: &[PreparedMicrogrid],
    roles: &RoleSchedule,
    case: CaseConfig,
) -> RunResult<EtsOutcome> {
    let prices = scenario.prices(&case);
    prices.validate()?;
    let (problem, vars) = build_ets(preps, roles, &prices, &case, scenario.market.base_power)?;
    let sol = checked_solve(&problem, scenario, &format!("transactions {case}"))?;
    let dispatch: Vec<_> = preps
        .iter()
        .zip(&vars.microgrids)
        .map(|(prep, v)| extract_dispatch(prep, v, &sol.values))
        .collect();
    let pf_residual = preps
        .iter()
        .zip(&dispatch)
        .map(|(p, d)| power_flow_residual(p, d))
        .collect();
    let ledger = vars
        .ledger(&sol.values)
        .cleaned(scenario.market.role_tolerance);
    let settlement = settlement_report(&ledger, &prices, preps.len());
    Ok(EtsOutcome {
        case,
        solution: sol,
        dispatch,
        ledger,
        prices,
        settlement,
        pf_residual,
    })
}

/// Largest `|S* − (R·V* + U·V + Z)|` over all hours and node-phases.
pub fn power_flow_residual(prep: &PreparedMicrogrid, d: &MicrogridDispatch) -> f64 {
    d.voltages
        .iter()
        .zip(&d.injections)
        .flat_map(|(v, s)| {
            let predicted = prep.aff.conj_power(v);
            s.iter()
                .zip(predicted.iter())
                .map(|(s, p)| (s.conj() - p).norm())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max)
}

/// One pass/fail line of the suite report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub pds_objective: f64,
    pub cases: Vec<(CaseConfig, f64)>,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn objective(&self, case: &str) -> Option<f64> {
        let c: CaseConfig = case.parse().ok()?;
        self.cases.iter().find(|(k, _)| *k == c).map(|(_, v)| *v)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

const STRICT_MARGIN: f64 = 1e-8;

fn strictly_below(name: &str, a: (&str, f64), b: (&str, f64)) -> Check {
    Check {
        name: name.to_string(),
        pass: a.1 < b.1 - STRICT_MARGIN,
        detail: format!("{} = {} vs {} = {}", a.0, a.1, b.0, b.1),
    }
}

/// Ordering properties over the eight case objectives.
pub fn suite_checks(
    pds: f64,
    cases: &[(CaseConfig, f64)],
    peer_volume: &[(CaseConfig, f64)],
) -> Vec<Check> {
    let ofv = |s: &str| {
        let c: CaseConfig = s.parse().expect("valid case name");
        cases
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    };
    let mut checks = Vec::new();
    for name in ["C1.1+", "C1.2+"] {
        let c: CaseConfig = name.parse().unwrap();
        let vol = peer_volume
            .iter()
            .find(|(k, _)| *k == c)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN);
        let diff = (ofv(name) - pds).abs();
        checks.push(Check {
            name: format!("{name} equals pre-dispatch, no peer trades"),
            pass: diff <= 1e-6 * pds.abs().max(1e-12) && vol == 0.0,
            detail: format!("|{} - {}| = {diff:e}, peer volume {vol}", ofv(name), pds),
        });
    }
    checks.push(strictly_below(
        "C1.2- < C1.1-",
        ("C1.2-", ofv("C1.2-")),
        ("C1.1-", ofv("C1.1-")),
    ));
    checks.push(strictly_below(
        "C1.1- < PDS",
        ("C1.1-", ofv("C1.1-")),
        ("PDS", pds),
    ));
    checks.push(strictly_below(
        "C2.2+ < C2.1+",
        ("C2.2+", ofv("C2.2+")),
        ("C2.1+", ofv("C2.1+")),
    ));
    checks.push(strictly_below(
        "C2.2- < C2.1-",
        ("C2.2-", ofv("C2.2-")),
        ("C2.1-", ofv("C2.1-")),
    ));
    for set in ["C1", "C2"] {
        for k in [1, 2] {
            let s2 = format!("{set}.{k}-");
            let s1 = format!("{set}.{k}+");
            checks.push(strictly_below(
                &format!("{s2} < {s1}"),
                (&s2, ofv(&s2)),
                (&s1, ofv(&s1)),
            ));
        }
    }
    checks
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub pds: PdsOutcome,
    pub ets: Vec<EtsOutcome>,
    pub report: SuiteReport,
}

pub fn run_suite(scenario: &Scenario) -> RunResult<SuiteOutcome> {
    let preps = prepare(scenario)?;
    let pds = run_pds(scenario, &preps)?;
    let mut ets = Vec::new();
    for case in CaseConfig::all() {
        ets.push(run_ets(scenario, &preps, &pds.roles, case)?);
    }
    let cases: Vec<_> = ets.iter().map(|e| (e.case, e.objective())).collect();
    let volume: Vec<_> = ets
        .iter()
        .map(|e| {
            (
                e.case,
                e.ledger.peer_trades().map(|t| t.quantity).sum::<f64>(),
            )
        })
        .collect();
    let checks = suite_checks(pds.objective(), &cases, &volume);
    let report = SuiteReport {
        pds_objective: pds.objective(),
        cases,
        checks,
    };
    Ok(SuiteOutcome { pds, ets, report })
}

/// Schema, connectivity and an oracle spot check at peak load.
pub fn validate(scenario: &Scenario) -> RunResult<Vec<String>> {
    let preps = prepare(scenario)?;
    let mut lines = Vec::new();
    for prep in &preps {
        let n = prep.n_nodes();
        let peak = (0..HOURS)
            .max_by(|&a, &b| prep.mg.loads.profile[a].total_cmp(&prep.mg.loads.profile[b]))
            .unwrap_or(0);
        let s = -&prep.loads[peak];
        let v = nonlinear_pf_oracle(&prep.y3, &s, &slack_pins(n), OracleOptions::default())?;
        let (lo, hi) = v
            .iter()
            .map(|c| c.norm())
            .fold((f64::INFINITY, 0.0f64), |(a, b), m| (a.min(m), b.max(m)));
        let cond = prep
            .harmonics
            .iter()
            .map(|h| h.condition)
            .fold(0.0, f64::max);
        lines.push(format!(
            "{}: {} nodes, {} branches, peak-load voltage without DER in [{lo:.4}, {hi:.4}] pu, harmonic admittance condition <= {cond:.3e}",
            prep.mg.network.name,
            n,
            prep.mg.network.branches.len()
        ));
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// Artifacts

fn agent_name(a: Agent, dispatch: &[MicrogridDispatch]) -> String {
    match a {
        Agent::Dso => "DSO".to_string(),
        Agent::Mg(i) => format!("MG{}", dispatch[i].id),
    }
}

fn write(dir: &Path, name: &str, body: String, manifest: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let path = dir.join(name);
    fs::write(&path, body)?;
    manifest.push(path);
    Ok(())
}

pub fn write_pds(dir: &Path, out: &PdsOutcome) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    let mut s = String::from("microgrid,hour,p_pcc_pu\n");
    for (d, ex) in out.dispatch.iter().zip(&out.exchange) {
        for (t, p) in ex.iter().enumerate() {
            writeln!(s, "{},{},{}", d.id, t + 1, p).unwrap();
        }
    }
    write(dir, "pds_exchange.csv", s, &mut manifest)?;
    let mut s = String::from("microgrid,hour,role,cap_pu\n");
    for (i, d) in out.dispatch.iter().enumerate() {
        for t in 1..=HOURS {
            let e = out.roles.get(i, t);
            writeln!(s, "{},{},{},{}", d.id, t, e.role, e.cap).unwrap();
        }
    }
    write(dir, "roles.csv", s, &mut manifest)?;
    let mut s = String::new();
    for (d, sol) in out.dispatch.iter().zip(&out.solutions) {
        writeln!(s, "pre-dispatch {} (MG{}): {}", d.name, d.id, sol.objective).unwrap();
    }
    writeln!(s, "pre-dispatch total: {}", out.objective()).unwrap();
    write(dir, "pds_summary.txt", s, &mut manifest)?;
    Ok(manifest)
}

/// Reads a role schedule written by [`write_pds`]; microgrids are ordered by first appearance.
pub fn read_roles(path: &Path) -> RunResult<RoleSchedule> {
    let text = fs::read_to_string(path)?;
    let bad = |line: &str| {
        RunError::Model(Error::Schema(format!(
            "{}: bad line {line:?}",
            path.display()
        )))
    };
    let mut ids: Vec<String> = Vec::new();
    let mut entries: Vec<Vec<RoleEntry>> = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad(line));
        }
        let i = match ids.iter().position(|x| x == f[0]) {
            Some(i) => i,
            None => {
                ids.push(f[0].to_string());
                entries.push(Vec::new());
                ids.len() - 1
            }
        };
        let role = match f[2] {
            "buyer" => Role::Buyer,
            "seller" => Role::Seller,
            "idle" => Role::Idle,
            _ => return Err(bad(line)),
        };
        let cap: f64 = f[3].parse().map_err(|_| bad(line))?;
        entries[i].push(RoleEntry { role, cap });
    }
    if entries.iter().any(|e| e.len() != HOURS) {
        return Err(RunError::Model(Error::Schema(format!(
            "{}: expected {HOURS} hours per microgrid",
            path.display()
        ))));
    }
    Ok(RoleSchedule { entries })
}

pub fn write_ets(dir: &Path, out: &EtsOutcome) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    let d = &out.dispatch;

    let mut s = String::from("hour,seller,buyer,quantity_pu,price,cashflow\n");
    for t in &out.ledger.trades {
        let price = trade_price(t, &out.prices);
        writeln!(
            s,
            "{},{},{},{},{},{}",
            t.hour,
            agent_name(t.seller, d),
            agent_name(t.buyer, d),
            t.quantity,
            price,
            price * t.quantity
        )
        .unwrap();
    }
    write(dir, "trades.csv", s, &mut manifest)?;

    let mut s = String::from("microgrid,hour,cost,revenue,profit\n");
    for (m, rows) in d.iter().zip(&out.settlement) {
        for (t, r) in rows.iter().enumerate() {
            writeln!(
                s,
                "{},{},{},{},{}",
                m.id,
                t + 1,
                r.cost,
                r.revenue,
                r.profit()
            )
            .unwrap();
        }
    }
    write(dir, "settlement.csv", s, &mut manifest)?;

    let mut sv = String::from("microgrid,node,phase,hour,re,im,magnitude\n");
    let mut sp = String::from("microgrid,node,phase,hour,p,q\n");
    for m in d {
        let n = m.n_nodes;
        for t in 0..HOURS {
            for node in 0..n {
                for ph in Phase::ALL {
                    let k = stacked_index(n, node, ph);
                    let v = m.voltages[t][k];
                    writeln!(
                        sv,
                        "{},{},{},{},{},{},{}",
                        m.id,
                        node,
                        ph.label(),
                        t + 1,
                        v.re,
                        v.im,
                        v.norm()
                    )
                    .unwrap();
                    let p = m.injections[t][k];
                    writeln!(
                        sp,
                        "{},{},{},{},{},{}",
                        m.id,
                        node,
                        ph.label(),
                        t + 1,
                        p.re,
                        p.im
                    )
                    .unwrap();
                }
            }
        }
    }
    write(dir, "voltages.csv", sv, &mut manifest)?;
    write(dir, "powers.csv", sp, &mut manifest)?;

    let mut s = String::from("microgrid,node,phase,step,soe_pu_h\n");
    for m in d {
        for (&(node, ph), soe) in &m.soe {
            for (k, e) in soe.iter().enumerate() {
                writeln!(s, "{},{},{},{},{}", m.id, node, ph.label(), k, e).unwrap();
            }
        }
    }
    write(dir, "soe.csv", s, &mut manifest)?;

    let mut s = String::from("microgrid,node,phase,hour,thd_percent\n");
    for m in d {
        for e in m.thd() {
            let v = e.thd.map(|x| x.to_string()).unwrap_or_else(|| "nan".into());
            writeln!(
                s,
                "{},{},{},{},{}",
                m.id,
                e.node,
                e.phase.label(),
                e.hour,
                v
            )
            .unwrap();
        }
    }
    write(dir, "thd.csv", s, &mut manifest)?;

    let mut s = String::new();
    writeln!(s, "case: {}", out.case).unwrap();
    writeln!(s, "objective: {}", out.objective()).unwrap();
    writeln!(
        s,
        "peer trades: {}",
        out.ledger
            .peer_trades()
            .filter(|t| t.quantity > 0.0)
            .count()
    )
    .unwrap();
    for m in d {
        let (lo, hi) = m.voltage_range();
        writeln!(
            s,
            "MG{} {}: |V| in [{lo}, {hi}] pu, max THD {}%",
            m.id,
            m.name,
            m.max_thd()
        )
        .unwrap();
    }
    for (m, r) in d.iter().zip(&out.pf_residual) {
        writeln!(s, "MG{} power-flow residual: {r}", m.id).unwrap();
    }
    write(dir, "summary.txt", s, &mut manifest)?;
    Ok(manifest)
}

pub fn write_suite(dir: &Path, out: &SuiteOutcome) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut manifest = write_pds(&dir.join("pds"), &out.pds)?;
    for e in &out.ets {
        manifest.extend(write_ets(&dir.join(e.case.to_string()), e)?);
    }
    let mut s = String::from("case,objective\n");
    writeln!(s, "PDS,{}", out.report.pds_objective).unwrap();
    for (c, v) in &out.report.cases {
        writeln!(s, "{c},{v}").unwrap();
    }
    write(dir, "objectives.csv", s, &mut manifest)?;
    write(
        dir,
        "suite_report.txt",
        format_suite(&out.report),
        &mut manifest,
    )?;
    Ok(manifest)
}

pub fn format_suite(r: &SuiteReport) -> String {
    let mut s = String::new();
    writeln!(s, "{:<8} {:>14}", "case", "objective").unwrap();
    writeln!(s, "{:<8} {:>14.6}", "PDS", r.pds_objective).unwrap();
    for (c, v) in &r.cases {
        writeln!(s, "{:<8} {:>14.6}", c.to_string(), v).unwrap();
    }
    writeln!(s).unwrap();
    for c in &r.checks {
        writeln!(
            s,
            "[{}] {}: {}",
            if c.pass { "pass" } else { "FAIL" },
            c.name,
            c.detail
        )
        .unwrap();
    }
    s
}

/// Writes each pre-dispatch problem in CBF for cross-checking with other solvers.
pub fn dump_pds_cbf(
    scenario: &Scenario,
    preps: &[PreparedMicrogrid],
    dir: &Path,
) -> RunResult<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for prep in preps {
        let (problem, _) = build_pds(prep, &scenario.market.dso_price, scenario.market.base_power)?;
        let path = dir.join(format!("pds_{}.cbf", prep.mg.network.name));
        let mut f = std::io::BufWriter::new(fs::File::create(&path)?);
        crate::conic::write_cbf(&problem, &mut f)?;
        out.push(path);
    }
    Ok(out)
}

pub fn write_infeasibility(dir: &Path, err: &RunError) -> std::io::Result<Option<PathBuf>> {
    if let RunError::Infeasible { .. } = err {
        fs::create_dir_all(dir)?;
        let path = dir.join("infeasibility.txt");
        fs::write(&path, format!("{err}"))?;
        return Ok(Some(path));
    }
    Ok(None)
}

/// Whether a case set and strategy pair can ever route trades (used in reports).
pub fn describe_case(case: &CaseConfig) -> String {
    let set = match case.case_set {
        CaseSet::C1 => "surplus paid at the DSO price",
        CaseSet::C2 => "surplus paid below the DSO price",
    };
    let strat = match case.strategy {
        Strategy::S1 => "trade price as buyer cost",
        Strategy::S2 => "trade price as seller revenue",
    };
    format!(
        "{case}: {set}, {} competing seller(s), {strat}",
        case.competitors
    )
}
