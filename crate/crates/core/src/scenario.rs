//! Scenario files: schema, validation and the bundled benchmark.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::conic::Tolerances;
use crate::der::{BatterySpec, BatteryUnit, EnvCurves, PiecewiseLinear, PvSpec};
use crate::error::{Error, Result};
use crate::market::{CaseConfig, PriceBook};
use crate::model::{Microgrid, PqSettings};
use crate::netmodel::{Branch, LoadTable, Network, HOURS};
use crate::phasor::Phase;
use crate::pq::{HarmonicSpectrum, PqLimits, ResistanceLaw};

pub const SCHEMA_VERSION: u32 = 1;

const BENCHMARK: &str = include_str!("../scenarios/benchmark.toml");

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    schema_version: u32,
    name: String,
    market: MarketSection,
    pq: PqSection,
    pv_environment: PvSection,
    #[serde(default)]
    battery: BatterySection,
    #[serde(default)]
    solver: SolverSection,
    #[serde(rename = "microgrid")]
    microgrids: Vec<MicrogridSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketSection {
    base_kva: f64,
    dso_price: Vec<f64>,
    /// Surplus price used by case set C2; defaults to the DSO price divided by `surplus_divisor`.
    surplus_price: Option<Vec<f64>>,
    #[serde(default = "default_divisor")]
    surplus_divisor: f64,
    #[serde(default = "default_role_tolerance")]
    role_tolerance: f64,
}

fn default_divisor() -> f64 {
    3.0
}

fn default_role_tolerance() -> f64 {
    1e-7
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PqSection {
    #[serde(default = "default_thd")]
    thd_max_percent: f64,
    #[serde(default = "default_delta")]
    voltage_deviation: f64,
    harmonics: Vec<u32>,
    spectrum_percent: Vec<f64>,
    #[serde(default)]
    resistance_law: LawName,
}

fn default_thd() -> f64 {
    8.0
}

fn default_delta() -> f64 {
    0.05
}

#[derive(Debug, Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum LawName {
    #[default]
    Constant,
    SqrtH,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PvSection {
    base_irradiance: f64,
    irradiance: Vec<f64>,
    temperature_correction: Vec<f64>,
    /// `[loading, efficiency]` breakpoints.
    inverter_efficiency: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatterySection {
    eta_charge: f64,
    eta_discharge: f64,
    dod: f64,
    /// Power rating per kWh of capacity, kW/kWh.
    power_ratio: f64,
}

impl Default for BatterySection {
    fn default() -> Self {
        Self {
            eta_charge: 0.95,
            eta_discharge: 0.95,
            dod: 0.8,
            power_ratio: 0.5,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SolverSection {
    feasibility: Option<f64>,
    gap: Option<f64>,
    max_iter: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MicrogridSection {
    id: usize,
    name: String,
    base_kva: f64,
    #[serde(default = "default_vln")]
    voltage_ln: f64,
    #[serde(default = "default_frequency")]
    frequency: f64,
    power_factor: f64,
    nodes: Vec<String>,
    branches: Vec<BranchRow>,
    #[serde(default)]
    loads: Vec<PhaseRow>,
    #[serde(default)]
    pv: Vec<PhaseRow>,
    #[serde(default)]
    battery: Vec<PhaseRow>,
    profile: Vec<f64>,
    price: Vec<f64>,
}

fn default_vln() -> f64 {
    400.0 / 3f64.sqrt()
}

fn default_frequency() -> f64 {
    50.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchRow {
    from: String,
    to: String,
    r_ohm: f64,
    x_ohm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseRow {
    node: String,
    a: f64,
    b: f64,
    c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSettings {
    /// Common power base of market quantities, VA.
    pub base_power: f64,
    pub dso_price: Vec<f64>,
    /// Surplus price of case set C2.
    pub c2_surplus_price: Vec<f64>,
    pub role_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub microgrids: Vec<Microgrid>,
    pub market: MarketSettings,
    pub pq: PqSettings,
    pub tolerances: Tolerances,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn check_curve(what: &str, c: &[f64], lo: f64, hi: f64) -> Result<()> {
    if c.len() != HOURS {
        return Err(schema(format!(
            "{what}: {} values, expected {HOURS}",
            c.len()
        )));
    }
    if let Some(v) = c.iter().find(|v| !(**v >= lo && **v <= hi)) {
        return Err(schema(format!("{what}: value {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

fn phase_table(
    what: &str,
    rows: &[PhaseRow],
    nodes: &[String],
) -> Result<BTreeMap<(usize, Phase), f64>> {
    let mut out = BTreeMap::new();
    for r in rows {
        let node = nodes
            .iter()
            .position(|n| *n == r.node)
            .ok_or_else(|| schema(format!("{what}: unknown node {}", r.node)))?;
        for (ph, v) in Phase::ALL.into_iter().zip([r.a, r.b, r.c]) {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(schema(format!("{what}: negative rating at {}", r.node)));
            }
            if v > 0.0 {
                *out.entry((node, ph)).or_insert(0.0) += v;
            }
        }
    }
    Ok(out)
}

impl Scenario {
    pub fn benchmark() -> Scenario {
        Scenario::from_toml_str(BENCHMARK).expect("bundled benchmark is valid")
    }

    pub fn benchmark_source() -> &'static str {
        BENCHMARK
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Scenario::from_toml_str(&text).map_err(|e| match e {
            Error::Schema(msg) => schema(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let f: File = toml::from_str(text).map_err(|e| schema(e.to_string()))?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(schema(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                f.schema_version
            )));
        }
        if f.microgrids.is_empty() {
            return Err(schema("no microgrids"));
        }

        let env = &f.pv_environment;
        check_curve("irradiance", &env.irradiance, 0.0, 1.25)?;
        check_curve(
            "temperature_correction",
            &env.temperature_correction,
            0.0,
            1.0,
        )?;
        let eff = PiecewiseLinear::new(
            env.inverter_efficiency
                .iter()
                .map(|p| (p[0], p[1]))
                .collect(),
        )?;
        if eff.points().iter().any(|p| !(p.1 > 0.0 && p.1 <= 1.0)) {
            return Err(schema("inverter efficiency outside (0, 1]"));
        }
        let curves = EnvCurves {
            irradiance: env.irradiance.clone(),
            temp_correction: env.temperature_correction.clone(),
            inverter_efficiency: eff,
        };
        if !(env.base_irradiance > 0.0) {
            return Err(schema("base_irradiance must be positive"));
        }

        let mut microgrids = Vec::new();
        let mut ids = Vec::new();
        for m in &f.microgrids {
            if ids.contains(&m.id) {
                return Err(schema(format!("duplicate microgrid id {}", m.id)));
            }
            ids.push(m.id);
            let what = |s: &str| format!("microgrid {}: {s}", m.name);
            if !(m.base_kva > 0.0 && m.voltage_ln > 0.0) {
                return Err(schema(what("bases must be positive")));
            }
            if !(m.power_factor > 0.0 && m.power_factor <= 1.0) {
                return Err(schema(what("power factor outside (0, 1]")));
            }
            check_curve(&what("profile"), &m.profile, 0.0, 1.0)?;
            check_curve(&what("price"), &m.price, 0.0, f64::INFINITY)?;
            let index = |name: &str| {
                m.nodes
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| schema(what(&format!("branch references unknown node {name}"))))
            };
            let branches = m
                .branches
                .iter()
                .map(|b| {
                    Ok(Branch {
                        from: index(&b.from)?,
                        to: index(&b.to)?,
                        r_ohm: b.r_ohm,
                        x_ohm: b.x_ohm,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let network = Network {
                id: m.id,
                name: m.name.clone(),
                nodes: m.nodes.clone(),
                branches,
                base_power: m.base_kva * 1e3,
                base_voltage: m.voltage_ln,
                frequency: m.frequency,
            };
            network.validate()?;
            let battery = phase_table(&what("battery"), &m.battery, &m.nodes)?
                .into_iter()
                .map(|(k, kwh)| {
                    (
                        k,
                        BatteryUnit {
                            soe_max_kwh: kwh,
                            p_max_kw: kwh * f.battery.power_ratio,
                        },
                    )
                })
                .collect();
            let battery = BatterySpec {
                placements: battery,
                eta_charge: f.battery.eta_charge,
                eta_discharge: f.battery.eta_discharge,
                dod: f.battery.dod,
                delta_t: 1.0,
            };
            battery.validate()?;
            microgrids.push(Microgrid {
                network,
                loads: LoadTable {
                    entries: phase_table(&what("loads"), &m.loads, &m.nodes)?,
                    power_factor: m.power_factor,
                    profile: m.profile.clone(),
                },
                pv: PvSpec {
                    placements: phase_table(&what("pv"), &m.pv, &m.nodes)?,
                    base_irradiance: env.base_irradiance,
                    curves: curves.clone(),
                },
                battery,
                price: m.price.clone(),
            });
        }

        let mk = &f.market;
        check_curve("dso_price", &mk.dso_price, 0.0, f64::INFINITY)?;
        let c2 = match &mk.surplus_price {
            Some(p) => p.clone(),
            None => {
                if !(mk.surplus_divisor >= 1.0) {
                    return Err(schema("surplus_divisor must be at least 1"));
                }
                mk.dso_price
                    .iter()
                    .map(|p| p / mk.surplus_divisor)
                    .collect()
            }
        };
        check_curve("surplus_price", &c2, 0.0, f64::INFINITY)?;
        if !(mk.base_kva > 0.0) {
            return Err(schema("market base_kva must be positive"));
        }
        if !(mk.role_tolerance >= 0.0) {
            return Err(schema("role_tolerance must be nonnegative"));
        }

        let pq = PqSettings {
            limits: PqLimits {
                thd_max: f.pq.thd_max_percent / 100.0,
                delta: f.pq.voltage_deviation,
            },
            spectrum: HarmonicSpectrum::from_percent(
                f.pq.harmonics.clone(),
                &f.pq.spectrum_percent,
            )?,
            resistance_law: match f.pq.resistance_law {
                LawName::Constant => ResistanceLaw::Constant,
                LawName::SqrtH => ResistanceLaw::SqrtH,
            },
        };
        pq.limits.validate()?;

        let mut tolerances = Tolerances::default();
        if let Some(v) = f.solver.feasibility {
            tolerances.feasibility = v;
        }
        if let Some(v) = f.solver.gap {
            tolerances.gap = v;
        }
        if let Some(v) = f.solver.max_iter {
            tolerances.max_iter = v;
        }

        Ok(Scenario {
            name: f.name,
            microgrids,
            market: MarketSettings {
                base_power: mk.base_kva * 1e3,
                dso_price: mk.dso_price.clone(),
                c2_surplus_price: c2,
                role_tolerance: mk.role_tolerance,
            },
            pq,
            tolerances,
        })
    }

    pub fn prices(&self, case: &CaseConfig) -> PriceBook {
        let mg: Vec<Vec<f64>> = self.microgrids.iter().map(|m| m.price.clone()).collect();
        case.prices(&self.market.dso_price, &self.market.c2_surplus_price, &mg)
    }
}
