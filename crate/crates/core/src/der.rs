//! Distributed energy resources: PV capacity and limits, battery state-of-energy
//! dynamics and apparent-power limits.

use std::collections::BTreeMap;

use crate::conic::{ConicProblem, Family, LinExpr, VarId};
use crate::error::{Error, Result};
use crate::netmodel::HOURS;
use crate::phasor::{ComplexVar, Phase};

pub const FAMILY_PV: Family = Family("pv_limits");
pub const FAMILY_BATTERY: Family = Family("battery");

/// Piecewise-linear curve, clamped outside its breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Schema(
                "piecewise-linear curve needs at least one point".into(),
            ));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { points })
    }

    pub fn constant(y: f64) -> Self {
        Self {
            points: vec![(0.0, y)],
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        if x <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((x0, y0), (x1, y1)) = (w[0], w[1]);
            if x <= x1 {
                return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
            }
        }
        pts[pts.len() - 1].1
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Hourly environment shaping the available PV power.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvCurves {
    /// Per-unit irradiance shape, zero at night.
    pub irradiance: Vec<f64>,
    /// Temperature correction factor per hour.
    pub temp_correction: Vec<f64>,
    /// Inverter efficiency as a function of per-unit DC loading.
    pub inverter_efficiency: PiecewiseLinear,
}

impl EnvCurves {
    /// Inverter efficiency at hour `t`, evaluated at the available DC loading.
    pub fn efficiency_at(&self, t: usize, base_irradiance: f64) -> f64 {
        let loading = base_irradiance * self.irradiance[t - 1] * self.temp_correction[t - 1];
        self.inverter_efficiency.eval(loading)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvSpec {
    /// Rated maximum-power-point output per (node, phase) at 1 kW/m², kW.
    pub placements: BTreeMap<(usize, Phase), f64>,
    /// kW/m².
    pub base_irradiance: f64,
    pub curves: EnvCurves,
}

impl PvSpec {
    pub fn has_pv_at(&self, node: usize) -> bool {
        Phase::ALL
            .iter()
            .any(|&ph| self.placements.get(&(node, ph)).is_some_and(|&p| p > 0.0))
    }
}

/// Available PV active power at hour `t` ∈ 1..=24, per-unit of `base_power` (VA).
pub fn pv_capacity(spec: &PvSpec, node: usize, phase: Phase, t: usize, base_power: f64) -> f64 {
    let Some(&p_mpp) = spec.placements.get(&(node, phase)) else {
        return 0.0;
    };
    let c = &spec.curves;
    let kw = p_mpp
        * spec.base_irradiance
        * c.irradiance[t - 1]
        * c.temp_correction[t - 1]
        * c.efficiency_at(t, spec.base_irradiance);
    kw * 1e3 / base_power
}

/// `0 ≤ Re(s) ≤ cap` and `|s| ≤ cap`; a zero cap pins `s` to zero.
pub fn pv_constraint_rows(p: &mut ConicProblem, s_pv: ComplexVar, cap: f64) -> Result<()> {
    if cap <= 0.0 {
        p.bound(s_pv.re, 0.0, 0.0, FAMILY_PV);
        p.bound(s_pv.im, 0.0, 0.0, FAMILY_PV);
        return Ok(());
    }
    p.bound(s_pv.re, 0.0, cap, FAMILY_PV);
    p.add_affine_cone(
        LinExpr::constant(cap),
        vec![LinExpr::var(s_pv.re), LinExpr::var(s_pv.im)],
        FAMILY_PV,
    )?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryUnit {
    pub soe_max_kwh: f64,
    pub p_max_kw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatterySpec {
    pub placements: BTreeMap<(usize, Phase), BatteryUnit>,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub dod: f64,
    /// Hours per period.
    pub delta_t: f64,
}

impl BatterySpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eta_charge", self.eta_charge),
            ("eta_discharge", self.eta_discharge),
            ("dod", self.dod),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Schema(format!(
                    "battery {name} = {v} outside (0, 1]"
                )));
            }
        }
        for (&(node, ph), u) in &self.placements {
            if u.soe_max_kwh < 0.0 || (u.soe_max_kwh > 0.0 && u.p_max_kw <= 0.0) {
                return Err(Error::Schema(format!(
                    "battery at node {node} phase {} needs positive capacity and power rating",
                    ph.label()
                )));
            }
        }
        Ok(())
    }
}

/// Decision variables of one battery placement over the day.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryVars {
    /// State of energy at the start of each hour plus the end of the day (25 entries), pu·h.
    pub soe: Vec<VarId>,
    pub charge: Vec<ComplexVar>,
    pub discharge: Vec<ComplexVar>,
}

impl BatteryVars {
    pub fn new(p: &mut ConicProblem, name: &str) -> Self {
        let soe = (0..=HOURS)
            .map(|k| p.add_free_var(format!("{name}.soe[{k}]"), FAMILY_BATTERY))
            .collect();
        let charge = (1..=HOURS)
            .map(|t| ComplexVar::new(p, &format!("{name}.bc[{t}]"), FAMILY_BATTERY))
            .collect();
        let discharge = (1..=HOURS)
            .map(|t| ComplexVar::new(p, &format!("{name}.bd[{t}]"), FAMILY_BATTERY))
            .collect();
        Self {
            soe,
            charge,
            discharge,
        }
    }
}

/// State-of-energy dynamics, daily periodicity, boxes and apparent-power cones.
///
/// `soe_max` is in pu·h and `p_max` in pu on the microgrid base. The state
/// after the last hour must equal the state before the first one.
pub fn battery_constraint_rows(
    p: &mut ConicProblem,
    spec: &BatterySpec,
    soe_max: f64,
    p_max: f64,
    vars: &BatteryVars,
) -> Result<()> {
    let dt = spec.delta_t;
    for t in 0..HOURS {
        let row = LinExpr::var(vars.soe[t + 1])
            .term(vars.soe[t], -1.0)
            .term(vars.charge[t].re, -spec.eta_charge * dt)
            .term(vars.discharge[t].re, dt / spec.eta_discharge);
        p.add_eq(row, 0.0, FAMILY_BATTERY);
    }
    p.add_eq(
        LinExpr::var(vars.soe[HOURS]).term(vars.soe[0], -1.0),
        0.0,
        FAMILY_BATTERY,
    );
    for &s in &vars.soe {
        p.bound(s, (1.0 - spec.dod) * soe_max, soe_max, FAMILY_BATTERY);
    }
    for s in vars.charge.iter().chain(&vars.discharge) {
        p.bound(s.re, 0.0, p_max, FAMILY_BATTERY);
        p.add_affine_cone(
            LinExpr::constant(p_max),
            vec![LinExpr::var(s.re), LinExpr::var(s.im)],
            FAMILY_BATTERY,
        )?;
    }
    Ok(())
}
