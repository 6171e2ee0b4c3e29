//! Solver-agnostic conic problem container.
//!
//! A [`ConicProblem`] holds real scalar variables with optional box bounds,
//! sparse linear equalities, second-order cones over variable tuples and a
//! linear objective. Every row and cone carries a [`Family`] tag so that an
//! infeasible model can be explained in terms of the constraint groups that
//! produced it.

mod cbf;
mod clarabel_backend;

use std::collections::BTreeMap;
use std::fmt;

pub use cbf::write_cbf;
pub use clarabel_backend::solve;

use crate::error::{Error, Result};

/// Index of a real decision variable.
pub type VarId = usize;

/// Label attached to every row and cone of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Family(pub &'static str);

impl Family {
    pub const OTHER: Family = Family("other");
    pub const AUXILIARY: Family = Family("auxiliary");
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.0)
    }
}

/// Sparse affine expression `Σ coef·x[var] + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: VarId) -> Self {
        Self {
            terms: vec![(v, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(mut self, v: VarId, coef: f64) -> Self {
        self.add_term(v, coef);
        self
    }

    pub fn add_term(&mut self, v: VarId, coef: f64) {
        if coef != 0.0 {
            self.terms.push((v, coef));
        }
    }

    pub fn add_expr(&mut self, other: &LinExpr, scale: f64) {
        if scale == 0.0 {
            return;
        }
        for &(v, c) in &other.terms {
            self.add_term(v, c * scale);
        }
        self.constant += other.constant * scale;
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::new();
        out.add_expr(self, scale);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + self.constant
    }

    /// Merges repeated variables and drops zero coefficients.
    pub fn compact(&mut self) {
        let mut merged: BTreeMap<VarId, f64> = BTreeMap::new();
        for &(v, c) in &self.terms {
            *merged.entry(v).or_insert(0.0) += c;
        }
        self.terms = merged.into_iter().filter(|&(_, c)| c != 0.0).collect();
    }

    /// The variable this expression is, if it is exactly `1·x`.
    fn as_plain_var(&self) -> Option<VarId> {
        match self.terms.as_slice() {
            [(v, c)] if *c == 1.0 && self.constant == 0.0 => Some(*v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub family: Family,
}

/// Linear equality `expr = 0`.
#[derive(Debug, Clone)]
pub struct Equality {
    pub expr: LinExpr,
    pub family: Family,
}

/// Second-order cone `‖x[members]‖₂ ≤ x[head]`.
#[derive(Debug, Clone)]
pub struct Cone {
    pub head: VarId,
    pub members: Vec<VarId>,
    pub family: Family,
}

impl Cone {
    pub fn dimension(&self) -> usize {
        1 + self.members.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ConeId(pub usize);

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub variables: Vec<Variable>,
    pub equalities: Vec<Equality>,
    pub cones: Vec<Cone>,
    pub objective: LinExpr,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: f64,
        upper: f64,
        family: Family,
    ) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            family,
        });
        self.variables.len() - 1
    }

    pub fn add_free_var(&mut self, name: impl Into<String>, family: Family) -> VarId {
        self.add_var(name, f64::NEG_INFINITY, f64::INFINITY, family)
    }

    /// Tightens the bounds of an existing variable; bounds are attributed to `family`.
    pub fn bound(&mut self, v: VarId, lower: f64, upper: f64, family: Family) {
        let var = &mut self.variables[v];
        var.lower = var.lower.max(lower);
        var.upper = var.upper.min(upper);
        var.family = family;
    }

    /// Adds `expr = 0`.
    pub fn add_equality(&mut self, mut expr: LinExpr, family: Family) {
        expr.compact();
        self.equalities.push(Equality { expr, family });
    }

    /// Adds `lhs = rhs`.
    pub fn add_eq(&mut self, lhs: LinExpr, rhs: f64, family: Family) {
        let mut e = lhs;
        e.constant -= rhs;
        self.add_equality(e, family);
    }

    pub fn add_objective(&mut self, expr: &LinExpr, scale: f64) {
        self.objective.add_expr(expr, scale);
    }

    /// Materializes an affine expression as a variable, reusing plain variables.
    fn materialize(&mut self, expr: LinExpr, family: Family) -> VarId {
        if let Some(v) = expr.as_plain_var() {
            return v;
        }
        let aux = self.add_free_var(format!("aux{}", self.variables.len()), Family::AUXILIARY);
        let mut row = expr;
        row.add_term(aux, -1.0);
        self.add_equality(row, family);
        aux
    }

    /// Registers `‖members‖₂ ≤ head` for affine head and members.
    ///
    /// Non-trivial expressions are replaced by auxiliary variables tied to
    /// them through equalities tagged with the cone's family.
    pub fn add_affine_cone(
        &mut self,
        head: LinExpr,
        members: Vec<LinExpr>,
        family: Family,
    ) -> Result<ConeId> {
        if members.is_empty() {
            return Err(Error::DegenerateCone);
        }
        let head = self.materialize(head, family);
        let members = members
            .into_iter()
            .map(|m| self.materialize(m, family))
            .collect();
        self.cones.push(Cone {
            head,
            members,
            family,
        });
        Ok(ConeId(self.cones.len() - 1))
    }

    /// Distinct families present in rows, bounds and cones, in sorted order.
    pub fn families(&self) -> Vec<Family> {
        let mut fams: Vec<Family> = self
            .equalities
            .iter()
            .map(|e| e.family)
            .chain(self.cones.iter().map(|c| c.family))
            .chain(
                self.variables
                    .iter()
                    .filter(|v| v.lower.is_finite() || v.upper.is_finite())
                    .map(|v| v.family),
            )
            .collect();
        fams.sort();
        fams.dedup();
        fams
    }

    /// Copy of the problem with every bound, row and cone of `family` removed.
    ///
    /// Auxiliary equalities tagged with the family are removed with their
    /// cones, leaving the auxiliary variables free.
    pub fn without_family(&self, family: Family) -> ConicProblem {
        let mut out = self.clone();
        for v in &mut out.variables {
            if v.family == family {
                v.lower = f64::NEG_INFINITY;
                v.upper = f64::INFINITY;
            }
        }
        out.equalities.retain(|e| e.family != family);
        out.cones.retain(|c| c.family != family);
        out
    }

    /// Feasibility residuals of `x`, computed from the raw problem data.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let equality = self
            .equalities
            .iter()
            .map(|e| e.expr.eval(x).abs())
            .fold(0.0, f64::max);
        let bound = self
            .variables
            .iter()
            .zip(x)
            .map(|(v, &xi)| (v.lower - xi).max(xi - v.upper).max(0.0))
            .fold(0.0, f64::max);
        let cone = self
            .cones
            .iter()
            .map(|c| {
                let norm = c.members.iter().map(|&m| x[m] * x[m]).sum::<f64>().sqrt();
                (norm - x[c.head]).max(0.0)
            })
            .fold(0.0, f64::max);
        Residuals {
            equality,
            bound,
            cone,
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residuals {
    /// ∞-norm of the equality residual.
    pub equality: f64,
    /// Largest box-bound violation.
    pub bound: f64,
    /// Largest `‖u‖ − t` over all cones, clipped at zero.
    pub cone: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.equality.max(self.bound).max(self.cone)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub objective: f64,
    pub values: Vec<f64>,
    pub residuals: Residuals,
    /// Relative duality gap as reported by the backend.
    pub gap_rel: f64,
    pub iterations: u32,
    pub solve_time: f64,
    /// Backend message for non-optimal terminations.
    pub message: String,
    /// Dual weight of each family in the infeasibility certificate, largest first.
    pub certificate_weights: Vec<(Family, f64)>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub gap: f64,
    pub max_iter: u32,
    /// Residual bound an `optimal` answer must satisfy after recomputation.
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-8,
            gap: 1e-8,
            max_iter: 200,
            verify: 1e-6,
        }
    }
}

impl Tolerances {
    /// Environment variable overriding the feasibility and gap tolerances.
    pub const ENV_OVERRIDE: &'static str = "MMG_SOLVER_TOL";

    pub fn from_env(self) -> Self {
        match std::env::var(Self::ENV_OVERRIDE)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
        {
            Some(tol) if tol > 0.0 && tol < 1e-2 => Self {
                feasibility: tol,
                gap: tol,
                ..self
            },
            _ => self,
        }
    }
}

/// Families whose removal alone restores feasibility, plus certificate ranking.
#[derive(Debug, Clone, Default)]
pub struct InfeasibilityReport {
    pub blocking: Vec<Family>,
    pub certificate_weights: Vec<(Family, f64)>,
}

impl InfeasibilityReport {
    pub fn names(&self, family: Family) -> bool {
        self.blocking.contains(&family)
    }
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "infeasible model")?;
        if self.blocking.is_empty() {
            writeln!(
                f,
                "no single relaxable constraint family restores feasibility"
            )?;
        } else {
            let names: Vec<_> = self.blocking.iter().map(|b| b.0).collect();
            writeln!(f, "binding constraint families: {}", names.join(", "))?;
        }
        writeln!(f, "certificate weight by family:")?;
        for (fam, w) in &self.certificate_weights {
            writeln!(f, "  {fam}: {w:.6e}")?;
        }
        Ok(())
    }
}

/// Explains an infeasible problem by dropping one candidate family at a time.
pub fn diagnose_infeasibility(
    problem: &ConicProblem,
    candidates: &[Family],
    tol: &Tolerances,
    certificate_weights: Vec<(Family, f64)>,
) -> InfeasibilityReport {
    let present = problem.families();
    let mut blocking = Vec::new();
    for &fam in candidates.iter().filter(|f| present.contains(f)) {
        let relaxed = problem.without_family(fam);
        let sol = solve(&relaxed, tol);
        log::debug!("without {fam}: {}", sol.status);
        if sol.status == Status::Optimal {
            blocking.push(fam);
        }
    }
    InfeasibilityReport {
        blocking,
        certificate_weights,
    }
}
