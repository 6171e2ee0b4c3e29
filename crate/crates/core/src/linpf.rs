//! Linearized unbalanced power flow.
//!
//! The complex power-flow map `S* = diag(V*)·Y·V` is expanded to first order
//! in `(V, V*)` around a linearization point `V_l`, giving the affine map
//! `S* = R·V* + U·V + Z` with
//!
//! ```text
//! R = diag(Y·V_l),  U = diag(V_l*)·Y,  Z = −diag(V_l)·(Y·V_l*)
//! ```
//!
//! which is exact at `V = V_l`. A fixed-point solver of the exact equations
//! is provided to validate the approximation.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::conic::{ConicProblem, Family, LinExpr, VarId};
use crate::error::{Error, Result};
use crate::netmodel::AdmittanceMatrix;
use crate::phasor::{ComplexEquality, ComplexExpr, ComplexVar, Phase, PHASES};

pub const FAMILY_POWER_FLOW: Family = Family("power_flow");
pub const FAMILY_SLACK: Family = Family("slack_voltage");
pub const FAMILY_PCC: Family = Family("pcc_power");

/// Voltages the power-flow equations are linearized around, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationPoint {
    pub voltages: DVector<Complex64>,
}

impl LinearizationPoint {
    /// Balanced flat profile: every node of phase φ at `1∠θ_φ`.
    pub fn flat(n_nodes: usize) -> Self {
        let voltages = DVector::from_fn(PHASES * n_nodes, |i, _| {
            Phase::from_index(i / n_nodes).unit()
        });
        Self { voltages }
    }

    pub fn new(voltages: DVector<Complex64>) -> Result<Self> {
        for (index, v) in voltages.iter().enumerate() {
            let magnitude = v.norm();
            if !(magnitude > 0.5 && magnitude < 1.5) {
                return Err(Error::LinearizationPoint { index, magnitude });
            }
        }
        Ok(Self { voltages })
    }
}

/// Constant data of the affine map `S* = R·V* + U·V + Z`; `R` is diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePowerFlow {
    pub r_diag: DVector<Complex64>,
    pub u: DMatrix<Complex64>,
    pub z: DVector<Complex64>,
}

impl AffinePowerFlow {
    pub fn dimension(&self) -> usize {
        self.z.len()
    }

    pub fn r_matrix(&self) -> DMatrix<Complex64> {
        DMatrix::from_diagonal(&self.r_diag)
    }

    /// `S*` predicted by the affine map.
    pub fn conj_power(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let vc = v.map(|c| c.conj());
        self.r_diag.component_mul(&vc) + &self.u * v + &self.z
    }

    /// Net injected power `S` predicted by the affine map.
    pub fn power(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        self.conj_power(v).map(|c| c.conj())
    }
}

pub fn linearize(y3: &AdmittanceMatrix, point: &LinearizationPoint) -> Result<AffinePowerFlow> {
    let dim = y3.dimension();
    let vl = &point.voltages;
    if vl.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: vl.len(),
        });
    }
    let vl_conj = vl.map(|c| c.conj());
    let r_diag = &y3.values * vl;
    let u = DMatrix::from_diagonal(&vl_conj) * &y3.values;
    let z = -vl_conj.component_mul(&(&y3.values * vl));
    Ok(AffinePowerFlow { r_diag, u, z })
}

/// Exact net injection `s_k = v_k·(Σ_m y_km v_m)*`.
pub fn exact_injection(y3: &AdmittanceMatrix, v: &DVector<Complex64>) -> DVector<Complex64> {
    let i = &y3.values * v;
    v.component_mul(&i.map(|c| c.conj()))
}

/// Rows `S* − R·V* − U·V = Z`, one complex row per node-phase.
pub fn pf_equality_rows(
    aff: &AffinePowerFlow,
    s: &[ComplexVar],
    v: &[ComplexVar],
) -> Vec<ComplexEquality> {
    let dim = aff.dimension();
    assert_eq!(s.len(), dim);
    assert_eq!(v.len(), dim);
    (0..dim)
        .map(|k| {
            let mut expr = ComplexExpr::new();
            expr.add_var(Complex64::new(1.0, 0.0), s[k], true);
            expr.add_var(-aff.r_diag[k], v[k], true);
            for (m, &vm) in v.iter().enumerate() {
                let u = aff.u[(k, m)];
                if u != Complex64::new(0.0, 0.0) {
                    expr.add_var(-u, vm, false);
                }
            }
            ComplexEquality {
                expr,
                rhs: aff.z[k],
            }
        })
        .collect()
}

/// Balanced unit-magnitude reference at the PCC: `1∠0°, 1∠−120°, 1∠120°`.
pub fn slack_voltages() -> [Complex64; 3] {
    [Phase::A.unit(), Phase::B.unit(), Phase::C.unit()]
}

/// Fixes the three phase voltages of node 0; `v` is phase-major over `n_nodes`.
pub fn slack_rows(n_nodes: usize, v: &[ComplexVar]) -> Vec<ComplexEquality> {
    slack_voltages()
        .iter()
        .enumerate()
        .map(|(ph, &vref)| ComplexEquality {
            expr: ComplexExpr::var(v[ph * n_nodes]),
            rhs: vref,
        })
        .collect()
}

/// PCC aggregation variables of one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PccVars {
    pub s_pcc: ComplexVar,
    /// Active power at the PCC; positive means import from upstream.
    pub p_pcc: VarId,
}

/// Adds `s_pcc = Σ_φ s_{φ,0}` and `p_pcc = Re(s_pcc)`.
pub fn pcc_power_rows(p: &mut ConicProblem, s_node0: [ComplexVar; 3], name: &str) -> PccVars {
    let s_pcc = ComplexVar::new(p, &format!("{name}.s_pcc"), FAMILY_PCC);
    let p_pcc = p.add_free_var(format!("{name}.p_pcc"), FAMILY_PCC);
    let mut sum = ComplexExpr::var(s_pcc);
    for s in s_node0 {
        sum.add_var(Complex64::new(-1.0, 0.0), s, false);
    }
    ComplexEquality {
        expr: sum,
        rhs: Complex64::new(0.0, 0.0),
    }
    .add_to(p, FAMILY_PCC);
    p.add_eq(LinExpr::var(p_pcc).term(s_pcc.re, -1.0), 0.0, FAMILY_PCC);
    PccVars { s_pcc, p_pcc }
}

/// Options of the fixed-point power-flow solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

fn split_slack(dim: usize, slack: &[(usize, Complex64)]) -> (Vec<usize>, Vec<Option<Complex64>>) {
    let mut fixed = vec![None; dim];
    for &(i, v) in slack {
        fixed[i] = Some(v);
    }
    let free = (0..dim).filter(|&i| fixed[i].is_none()).collect();
    (free, fixed)
}

/// Exact power flow by Z-bus fixed-point iteration.
///
/// Solves `s_k* = v_k*·Σ_m y_km v_m` at every non-slack entry with the slack
/// entries pinned, iterating `V_N ← Y_NN⁻¹·((S_N/V_N)* − Y_NS·V_S)` from the
/// pinned-slack flat start until the largest update drops below the
/// tolerance.
pub fn nonlinear_pf_oracle(
    y3: &AdmittanceMatrix,
    s: &DVector<Complex64>,
    slack: &[(usize, Complex64)],
    opts: OracleOptions,
) -> Result<DVector<Complex64>> {
    let dim = y3.dimension();
    if s.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.len(),
        });
    }
    let (free, fixed) = split_slack(dim, slack);
    let nf = free.len();
    let y = &y3.values;
    let y_nn = DMatrix::from_fn(nf, nf, |a, b| y[(free[a], free[b])]);
    let lu = y_nn.lu();
    let mut v: DVector<Complex64> = DVector::from_fn(dim, |i, _| {
        fixed[i].unwrap_or_else(|| {
            let n = dim / PHASES;
            Phase::from_index((i / n).min(2)).unit()
        })
    });
    let i_slack = DVector::from_fn(nf, |a, _| {
        (0..dim)
            .filter_map(|m| fixed[m].map(|vm| y[(free[a], m)] * vm))
            .sum::<Complex64>()
    });
    let mut update = f64::INFINITY;
    for _ in 0..opts.max_iterations {
        let rhs = DVector::from_fn(nf, |a, _| (s[free[a]] / v[free[a]]).conj() - i_slack[a]);
        let next = lu.solve(&rhs).ok_or(Error::Divergence {
            iterations: 0,
            update: f64::NAN,
            mismatch: f64::NAN,
        })?;
        update = 0.0;
        for (a, &k) in free.iter().enumerate() {
            update = update.max((next[a] - v[k]).norm());
            v[k] = next[a];
        }
        if !update.is_finite() {
            break;
        }
        if update < opts.tolerance {
            return Ok(v);
        }
    }
    let mismatch = (exact_injection(y3, &v) - s)
        .iter()
        .enumerate()
        .filter(|(i, _)| fixed[*i].is_none())
        .map(|(_, c)| c.norm())
        .fold(0.0, f64::max);
    Err(Error::Divergence {
        iterations: opts.max_iterations,
        update,
        mismatch,
    })
}

/// Voltages solving the affine power-flow map for given injections.
///
/// Non-slack rows `S* = R·V* + U·V + Z` are split into real and imaginary
/// parts and solved directly with the slack entries pinned.
pub fn solve_linearized(
    aff: &AffinePowerFlow,
    s: &DVector<Complex64>,
    slack: &[(usize, Complex64)],
) -> Result<DVector<Complex64>> {
    let dim = aff.dimension();
    if s.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: s.len(),
        });
    }
    let (free, fixed) = split_slack(dim, slack);
    let nf = free.len();
    let mut pos = vec![usize::MAX; dim];
    for (a, &k) in free.iter().enumerate() {
        pos[k] = a;
    }
    // unknowns: [Re V_free, Im V_free]; rows: [Re, Im] of each free equation
    let mut m = DMatrix::<f64>::zeros(2 * nf, 2 * nf);
    let mut rhs = DVector::<f64>::zeros(2 * nf);
    for (a, &k) in free.iter().enumerate() {
        let mut known = s[k].conj() - aff.z[k];
        let mut stamp = |col: usize, c: Complex64, conj: bool, known: &mut Complex64| {
            if let Some(vf) = fixed[col] {
                *known -= if conj { c * vf.conj() } else { c * vf };
                return;
            }
            let b = pos[col];
            let sgn = if conj { -1.0 } else { 1.0 };
            m[(a, b)] += c.re;
            m[(a, nf + b)] += -sgn * c.im;
            m[(nf + a, b)] += c.im;
            m[(nf + a, nf + b)] += sgn * c.re;
        };
        stamp(k, aff.r_diag[k], true, &mut known);
        for col in 0..dim {
            let u = aff.u[(k, col)];
            if u != Complex64::new(0.0, 0.0) {
                stamp(col, u, false, &mut known);
            }
        }
        rhs[a] = known.re;
        rhs[nf + a] = known.im;
    }
    let sol = m.lu().solve(&rhs).ok_or(Error::DimensionMismatch {
        expected: 2 * nf,
        found: 0,
    })?;
    Ok(DVector::from_fn(dim, |i, _| {
        fixed[i].unwrap_or_else(|| Complex64::new(sol[pos[i]], sol[nf + pos[i]]))
    }))
}

/// Slack pins `(index, voltage)` for node 0 of a phase-major vector.
pub fn slack_pins(n_nodes: usize) -> Vec<(usize, Complex64)> {
    slack_voltages()
        .iter()
        .enumerate()
        .map(|(ph, &v)| (ph * n_nodes, v))
        .collect()
}
