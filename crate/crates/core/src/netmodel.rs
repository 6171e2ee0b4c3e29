//! Electrical model of a microgrid: graph, incidence, admittance matrices
//! and hourly load vectors, all in per-unit on the microgrid's own bases.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::phasor::{stacked_index, Phase, PHASES};

pub const HOURS: usize = 24;

/// Series branch between two nodes, impedance in ohms per phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl Branch {
    pub fn impedance_ohm(&self) -> Complex64 {
        Complex64::new(self.r_ohm, self.x_ohm)
    }
}

/// Microgrid graph. Node 0 is the point of common coupling (slack).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub id: usize,
    pub name: String,
    pub nodes: Vec<String>,
    pub branches: Vec<Branch>,
    /// Base power in VA, applied per phase.
    pub base_power: f64,
    /// Base line-to-neutral voltage in V.
    pub base_voltage: f64,
    pub frequency: f64,
}

impl Network {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Base impedance `V²/S` in ohms.
    pub fn base_impedance(&self) -> f64 {
        self.base_voltage * self.base_voltage / self.base_power
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Checks node references, impedances and connectivity from node 0.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        if n == 0 {
            return Err(Error::EmptyNetwork);
        }
        for (i, b) in self.branches.iter().enumerate() {
            for node in [b.from, b.to] {
                if node >= n {
                    return Err(Error::UnknownNode { branch: i, node });
                }
            }
            if b.r_ohm < 0.0 {
                return Err(Error::NegativeResistance { branch: i });
            }
            if b.impedance_ohm().norm() == 0.0 {
                return Err(Error::SingularBranch { branch: i });
            }
        }
        let mut adj = vec![Vec::new(); n];
        for b in &self.branches {
            adj[b.from].push(b.to);
            adj[b.to].push(b.from);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(k) = queue.pop_front() {
            for &m in &adj[k] {
                if !seen[m] {
                    seen[m] = true;
                    queue.push_back(m);
                }
            }
        }
        let unreachable: Vec<usize> = (0..n).filter(|&k| !seen[k]).collect();
        if unreachable.is_empty() {
            Ok(())
        } else {
            Err(Error::Unreachable(unreachable))
        }
    }
}

/// Branch-by-node incidence matrix: +1 at the from-node, −1 at the to-node.
pub fn build_incidence(network: &Network) -> Result<DMatrix<f64>> {
    network.validate()?;
    let mut a = DMatrix::zeros(network.branches.len(), network.n_nodes());
    for (e, b) in network.branches.iter().enumerate() {
        a[(e, b.from)] = 1.0;
        a[(e, b.to)] = -1.0;
    }
    Ok(a)
}

/// Complex nodal admittance matrix in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub values: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dimension(&self) -> usize {
        self.values.nrows()
    }

    /// Largest `|Y[k][m] − Y[m][k]|`.
    pub fn max_asymmetry(&self) -> f64 {
        let y = &self.values;
        let mut worst: f64 = 0.0;
        for k in 0..y.nrows() {
            for m in (k + 1)..y.ncols() {
                worst = worst.max((y[(k, m)] - y[(m, k)]).norm());
            }
        }
        worst
    }

    pub fn mul_vec(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        &self.values * v
    }
}

/// `Aᵀ·diag(y_e)·A` with per-unit branch admittances from `impedance_pu`.
pub(crate) fn assemble_laplacian(
    network: &Network,
    impedance_pu: impl Fn(&Branch) -> Complex64,
) -> Result<AdmittanceMatrix> {
    let a = build_incidence(network)?.map(|v| Complex64::new(v, 0.0));
    let mut yp = DVector::zeros(network.branches.len());
    for (e, b) in network.branches.iter().enumerate() {
        let z = impedance_pu(b);
        if z.norm() == 0.0 {
            return Err(Error::SingularBranch { branch: e });
        }
        yp[e] = z.inv();
    }
    let values = a.transpose() * DMatrix::from_diagonal(&yp) * &a;
    Ok(AdmittanceMatrix { values })
}

/// Single-phase admittance matrix from series branch admittances.
pub fn build_admittance(network: &Network) -> Result<AdmittanceMatrix> {
    let zb = network.base_impedance();
    assemble_laplacian(network, |b| b.impedance_ohm() / zb)
}

/// `I₃ ⊗ Y`: three identical, uncoupled phase blocks.
pub fn expand_three_phase(y: &AdmittanceMatrix) -> AdmittanceMatrix {
    let eye = DMatrix::<Complex64>::identity(PHASES, PHASES);
    AdmittanceMatrix {
        values: eye.kronecker(&y.values),
    }
}

/// Per-phase load ratings of one microgrid.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadTable {
    /// Maximum apparent power in kVA per (node, phase).
    pub entries: BTreeMap<(usize, Phase), f64>,
    pub power_factor: f64,
    /// Hourly multipliers in [0, 1].
    pub profile: Vec<f64>,
}

impl LoadTable {
    /// Total rating of a node over its three phases, kVA.
    pub fn node_total(&self, node: usize) -> f64 {
        Phase::ALL
            .iter()
            .filter_map(|&ph| self.entries.get(&(node, ph)))
            .sum()
    }

    /// Complex per-unit multiplier `pf + j·sin(acos(pf))`.
    pub fn power_direction(&self) -> Complex64 {
        let pf = self.power_factor;
        Complex64::new(pf, (1.0 - pf * pf).max(0.0).sqrt())
    }
}

/// Hourly complex load vector `S^L(t)` in per-unit, phase-major, t ∈ 1..=24.
pub fn load_vector(loads: &LoadTable, network: &Network, t: usize) -> Result<DVector<Complex64>> {
    if !(1..=HOURS).contains(&t) {
        return Err(Error::HourOutOfRange(t));
    }
    let n = network.n_nodes();
    let scale = loads.profile[t - 1] * 1e3 / network.base_power;
    let dir = loads.power_direction();
    let mut s = DVector::zeros(PHASES * n);
    for (&(node, phase), &kva) in &loads.entries {
        s[stacked_index(n, node, phase)] = dir * (kva * scale);
    }
    Ok(s)
}
