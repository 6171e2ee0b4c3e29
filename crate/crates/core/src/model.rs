//! Assembly of one microgrid's day-ahead constraint block (power flow,
//! balance, DER and power quality) and extraction of its dispatch.

use std::collections::BTreeMap;

use nalgebra::DVector;
use num_complex::Complex64;

use crate::conic::{ConicProblem, Family, LinExpr, VarId};
use crate::der::{
    battery_constraint_rows, pv_capacity, pv_constraint_rows, BatterySpec, BatteryVars, PvSpec,
    FAMILY_PV,
};
use crate::error::Result;
use crate::linpf::{
    linearize, pcc_power_rows, pf_equality_rows, slack_rows, AffinePowerFlow, LinearizationPoint,
    PccVars, FAMILY_POWER_FLOW, FAMILY_SLACK,
};
use crate::netmodel::{
    build_admittance, expand_three_phase, load_vector, AdmittanceMatrix, LoadTable, Network, HOURS,
};
use crate::phasor::{stacked_index, ComplexExpr, ComplexVar, Phase, PHASES};
use crate::pq::{
    build_harmonic_admittance, hpf_rows, psi_mask, thd_cone_rows, thd_report, voltage_limit_rows,
    HarmonicAdmittance, HarmonicSpectrum, PqLimits, ResistanceLaw, FAMILY_HARMONIC,
};

pub const FAMILY_BALANCE: Family = Family("power_balance");

/// Everything that describes one microgrid.
#[derive(Debug, Clone, PartialEq)]
pub struct Microgrid {
    pub network: Network,
    pub loads: LoadTable,
    pub pv: PvSpec,
    pub battery: BatterySpec,
    /// Selling price of this microgrid per hour.
    pub price: Vec<f64>,
}

/// Power-quality settings shared by all microgrids.
#[derive(Debug, Clone, PartialEq)]
pub struct PqSettings {
    pub limits: PqLimits,
    pub spectrum: HarmonicSpectrum,
    pub resistance_law: ResistanceLaw,
}

/// Hour-independent matrices and per-hour parameters of one microgrid.
#[derive(Debug, Clone)]
pub struct PreparedMicrogrid {
    pub mg: Microgrid,
    pub y3: AdmittanceMatrix,
    pub point: LinearizationPoint,
    pub aff: AffinePowerFlow,
    pub harmonics: Vec<HarmonicAdmittance>,
    pub psi: Vec<DVector<f64>>,
    pub limits: PqLimits,
    /// Load vector per hour (index 0 is hour 1).
    pub loads: Vec<DVector<Complex64>>,
}

impl PreparedMicrogrid {
    pub fn new(mg: Microgrid, pq: &PqSettings) -> Result<Self> {
        mg.network.validate()?;
        mg.battery.validate()?;
        pq.spectrum.validate()?;
        pq.limits.validate()?;
        let n = mg.network.n_nodes();
        let y3 = expand_three_phase(&build_admittance(&mg.network)?);
        let point = LinearizationPoint::flat(n);
        let aff = linearize(&y3, &point)?;
        let harmonics = pq
            .spectrum
            .harmonics
            .iter()
            .map(|&h| build_harmonic_admittance(&mg.network, h, pq.resistance_law))
            .collect::<Result<Vec<_>>>()?;
        let psi = pq
            .spectrum
            .psi
            .iter()
            .map(|&ratio| psi_mask(n, ratio, |k| mg.pv.has_pv_at(k)))
            .collect();
        let loads = (1..=HOURS)
            .map(|t| load_vector(&mg.loads, &mg.network, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mg,
            y3,
            point,
            aff,
            harmonics,
            psi,
            limits: pq.limits,
            loads,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.mg.network.n_nodes()
    }

    pub fn base_power(&self) -> f64 {
        self.mg.network.base_power
    }
}

/// Variables of one hour.
#[derive(Debug, Clone)]
pub struct HourVars {
    pub v: Vec<ComplexVar>,
    pub s: Vec<ComplexVar>,
    /// Harmonic voltages, one stacked vector per harmonic.
    pub vh: Vec<Vec<ComplexVar>>,
    pub pv: BTreeMap<(usize, Phase), ComplexVar>,
    pub pcc: PccVars,
}

#[derive(Debug, Clone)]
pub struct MicrogridVars {
    pub hours: Vec<HourVars>,
    pub battery: BTreeMap<(usize, Phase), BatteryVars>,
}

impl MicrogridVars {
    pub fn p_pcc(&self, t: usize) -> VarId {
        self.hours[t - 1].pcc.p_pcc
    }
}

fn complex_vars(p: &mut ConicProblem, prefix: &str, n: usize, fam: Family) -> Vec<ComplexVar> {
    (0..PHASES * n)
        .map(|i| {
            let ph = Phase::from_index(i / n);
            ComplexVar::new(p, &format!("{prefix}[{}{}]", i % n, ph.label()), fam)
        })
        .collect()
}

/// Adds all constraint rows of one microgrid over the day.
pub fn add_microgrid(p: &mut ConicProblem, prep: &PreparedMicrogrid) -> Result<MicrogridVars> {
    let mg = &prep.mg;
    let n = prep.n_nodes();
    let base = prep.base_power();
    let tag = format!("mg{}", mg.network.id);

    let mut battery = BTreeMap::new();
    for (&(node, ph), unit) in &mg.battery.placements {
        if unit.soe_max_kwh <= 0.0 {
            continue;
        }
        let vars = BatteryVars::new(p, &format!("{tag}.bat[{node}{}]", ph.label()));
        let soe_max = unit.soe_max_kwh * 1e3 / base;
        let p_max = unit.p_max_kw * 1e3 / base;
        battery_constraint_rows(p, &mg.battery, soe_max, p_max, &vars)?;
        battery.insert((node, ph), vars);
    }

    let mut hours = Vec::with_capacity(HOURS);
    for t in 1..=HOURS {
        let name = format!("{tag}.t{t}");
        let v = complex_vars(p, &format!("{name}.v"), n, FAMILY_POWER_FLOW);
        let s = complex_vars(p, &format!("{name}.s"), n, FAMILY_POWER_FLOW);
        for row in pf_equality_rows(&prep.aff, &s, &v) {
            row.add_to(p, FAMILY_POWER_FLOW);
        }
        for row in slack_rows(n, &v) {
            row.add_to(p, FAMILY_SLACK);
        }

        let mut pv = BTreeMap::new();
        for (&(node, ph), &p_mpp) in &mg.pv.placements {
            if p_mpp <= 0.0 {
                continue;
            }
            let var = ComplexVar::new(p, &format!("{name}.pv[{node}{}]", ph.label()), FAMILY_PV);
            pv_constraint_rows(p, var, pv_capacity(&mg.pv, node, ph, t, base))?;
            pv.insert((node, ph), var);
        }

        // −S + S_pv + S_bd − S_bc = S_L at every non-slack entry.
        let one = Complex64::new(1.0, 0.0);
        for node in 1..n {
            for ph in Phase::ALL {
                let k = stacked_index(n, node, ph);
                let mut expr = ComplexExpr::new();
                expr.add_var(-one, s[k], false);
                if let Some(&g) = pv.get(&(node, ph)) {
                    expr.add_var(one, g, false);
                }
                if let Some(b) = battery.get(&(node, ph)) {
                    expr.add_var(one, b.discharge[t - 1], false);
                    expr.add_var(-one, b.charge[t - 1], false);
                }
                crate::phasor::ComplexEquality {
                    expr,
                    rhs: prep.loads[t - 1][k],
                }
                .add_to(p, FAMILY_BALANCE);
            }
        }

        let mut vh = Vec::with_capacity(prep.harmonics.len());
        for (yh, psi) in prep.harmonics.iter().zip(&prep.psi) {
            let vars = complex_vars(p, &format!("{name}.v{}", yh.harmonic), n, FAMILY_HARMONIC);
            for row in hpf_rows(&yh.y, &prep.y3, psi, n, &v, &vars) {
                row.add_to(p, FAMILY_HARMONIC);
            }
            vh.push(vars);
        }
        for node in 1..n {
            for ph in Phase::ALL {
                let k = stacked_index(n, node, ph);
                let stack: Vec<ComplexVar> = vh.iter().map(|h| h[k]).collect();
                if !stack.is_empty() {
                    thd_cone_rows(p, &stack, v[k], prep.limits.thd_max, ph.angle())?;
                }
                voltage_limit_rows(p, v[k], ph.unit(), prep.limits.delta)?;
            }
        }

        let pcc = pcc_power_rows(p, [s[0], s[n], s[2 * n]], &name);
        hours.push(HourVars { v, s, vh, pv, pcc });
    }
    Ok(MicrogridVars { hours, battery })
}

/// Solved schedule of one microgrid; powers in pu of its own base.
#[derive(Debug, Clone, PartialEq)]
pub struct MicrogridDispatch {
    pub id: usize,
    pub name: String,
    pub n_nodes: usize,
    pub harmonics: Vec<u32>,
    pub voltages: Vec<DVector<Complex64>>,
    pub injections: Vec<DVector<Complex64>>,
    /// `[hour][harmonic]` stacked harmonic voltages.
    pub harmonic_voltages: Vec<Vec<DVector<Complex64>>>,
    pub pv: BTreeMap<(usize, Phase), Vec<Complex64>>,
    pub charge: BTreeMap<(usize, Phase), Vec<Complex64>>,
    pub discharge: BTreeMap<(usize, Phase), Vec<Complex64>>,
    /// 25 states per placement, pu·h.
    pub soe: BTreeMap<(usize, Phase), Vec<f64>>,
    pub p_pcc: Vec<f64>,
}

fn stacked_values(vars: &[ComplexVar], x: &[f64]) -> DVector<Complex64> {
    DVector::from_iterator(vars.len(), vars.iter().map(|c| c.value(x)))
}

pub fn extract_dispatch(
    prep: &PreparedMicrogrid,
    vars: &MicrogridVars,
    x: &[f64],
) -> MicrogridDispatch {
    let per_hour =
        |f: &dyn Fn(&HourVars) -> DVector<Complex64>| vars.hours.iter().map(f).collect::<Vec<_>>();
    let mut pv: BTreeMap<_, Vec<_>> = BTreeMap::new();
    for h in &vars.hours {
        for (&key, var) in &h.pv {
            pv.entry(key).or_default().push(var.value(x));
        }
    }
    let mut charge = BTreeMap::new();
    let mut discharge = BTreeMap::new();
    let mut soe = BTreeMap::new();
    for (&key, b) in &vars.battery {
        charge.insert(key, b.charge.iter().map(|c| c.value(x)).collect());
        discharge.insert(key, b.discharge.iter().map(|c| c.value(x)).collect());
        soe.insert(key, b.soe.iter().map(|&s| x[s]).collect());
    }
    MicrogridDispatch {
        id: prep.mg.network.id,
        name: prep.mg.network.name.clone(),
        n_nodes: prep.n_nodes(),
        harmonics: prep.harmonics.iter().map(|h| h.harmonic).collect(),
        voltages: per_hour(&|h| stacked_values(&h.v, x)),
        injections: per_hour(&|h| stacked_values(&h.s, x)),
        harmonic_voltages: vars
            .hours
            .iter()
            .map(|h| h.vh.iter().map(|vh| stacked_values(vh, x)).collect())
            .collect(),
        pv,
        charge,
        discharge,
        soe,
        p_pcc: vars.hours.iter().map(|h| x[h.pcc.p_pcc]).collect(),
    }
}

/// One THD figure per non-slack node, phase and hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThdEntry {
    pub hour: usize,
    pub node: usize,
    pub phase: Phase,
    /// Percent; `None` when the fundamental is zero.
    pub thd: Option<f64>,
}

impl MicrogridDispatch {
    pub fn thd(&self) -> Vec<ThdEntry> {
        let n = self.n_nodes;
        let mut out = Vec::new();
        for (t, v) in self.voltages.iter().enumerate() {
            for node in 1..n {
                for ph in Phase::ALL {
                    let k = stacked_index(n, node, ph);
                    let vh: Vec<Complex64> =
                        self.harmonic_voltages[t].iter().map(|h| h[k]).collect();
                    out.push(ThdEntry {
                        hour: t + 1,
                        node,
                        phase: ph,
                        thd: thd_report(&vh, v[k]),
                    });
                }
            }
        }
        out
    }

    pub fn max_thd(&self) -> f64 {
        self.thd().iter().filter_map(|e| e.thd).fold(0.0, f64::max)
    }

    /// Smallest and largest voltage magnitude over all nodes and hours.
    pub fn voltage_range(&self) -> (f64, f64) {
        self.voltages
            .iter()
            .flat_map(|v| v.iter().map(|c| c.norm()))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
                (lo.min(m), hi.max(m))
            })
    }

    /// `|−S + S_pv + S_bd − S_bc − S_L|` over non-slack entries and hours.
    pub fn max_balance_residual(&self, prep: &PreparedMicrogrid) -> f64 {
        let n = self.n_nodes;
        let mut worst: f64 = 0.0;
        for t in 0..HOURS {
            for node in 1..n {
                for ph in Phase::ALL {
                    let k = stacked_index(n, node, ph);
                    let key = (node, ph);
                    let mut r = -self.injections[t][k] - prep.loads[t][k];
                    if let Some(g) = self.pv.get(&key) {
                        r += g[t];
                    }
                    if let (Some(c), Some(d)) = (self.charge.get(&key), self.discharge.get(&key)) {
                        r += d[t] - c[t];
                    }
                    worst = worst.max(r.norm());
                }
            }
        }
        worst
    }
}

/// `Σ_t ζ(t)·p_pcc(t)·scale`, the microgrid's cost of exchange with the DSO.
pub fn exchange_cost(vars: &MicrogridVars, prices: &[f64], scale: f64) -> LinExpr {
    let mut e = LinExpr::new();
    for t in 1..=HOURS {
        e.add_term(vars.p_pcc(t), prices[t - 1] * scale);
    }
    e
}
