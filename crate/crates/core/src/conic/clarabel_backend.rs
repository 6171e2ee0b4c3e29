use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use super::{ConicProblem, Family, Residuals, Solution, Status, Tolerances};

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    row_family: Vec<Family>,
}

struct RowBuilder {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
    row_family: Vec<Family>,
}

impl RowBuilder {
    fn push(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64, family: Family) {
        let r = self.b.len();
        for (c, v) in entries {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
        self.b.push(rhs);
        self.row_family.push(family);
    }
}

/// Maps the problem onto `A·x + s = b, s ∈ K` with zero, nonnegative and
/// second-order cone blocks, in that order.
fn assemble(p: &ConicProblem) -> Assembled {
    let mut rb = RowBuilder {
        rows: Vec::new(),
        cols: Vec::new(),
        vals: Vec::new(),
        b: Vec::new(),
        row_family: Vec::new(),
    };
    let mut cones = Vec::new();

    for eq in &p.equalities {
        rb.push(eq.expr.terms.iter().copied(), -eq.expr.constant, eq.family);
    }
    for (j, v) in p.variables.iter().enumerate() {
        if v.lower.is_finite() && v.lower == v.upper {
            rb.push([(j, 1.0)], v.lower, v.family);
        }
    }
    let n_zero = rb.b.len();
    if n_zero > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_zero));
    }

    for (j, v) in p.variables.iter().enumerate() {
        if v.lower.is_finite() && v.lower == v.upper {
            continue;
        }
        if v.lower.is_finite() {
            rb.push([(j, -1.0)], -v.lower, v.family);
        }
        if v.upper.is_finite() {
            rb.push([(j, 1.0)], v.upper, v.family);
        }
    }
    let n_nonneg = rb.b.len() - n_zero;
    if n_nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_nonneg));
    }

    for cone in &p.cones {
        rb.push([(cone.head, -1.0)], 0.0, cone.family);
        for &m in &cone.members {
            rb.push([(m, -1.0)], 0.0, cone.family);
        }
        cones.push(SupportedConeT::SecondOrderConeT(cone.dimension()));
    }

    let m = rb.b.len();
    let a = CscMatrix::new_from_triplets(m, p.num_vars(), rb.rows, rb.cols, rb.vals);
    Assembled {
        a,
        b: rb.b,
        cones,
        row_family: rb.row_family,
    }
}

fn family_weights(z: &[f64], row_family: &[Family]) -> Vec<(Family, f64)> {
    let mut acc: BTreeMap<Family, f64> = BTreeMap::new();
    for (zi, fam) in z.iter().zip(row_family) {
        *acc.entry(*fam).or_insert(0.0) += zi.abs();
    }
    let mut out: Vec<_> = acc.into_iter().filter(|&(_, w)| w > 0.0).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Solves the problem with the Clarabel interior-point backend.
///
/// The returned residuals are recomputed from the problem data; an answer the
/// backend calls solved but whose residuals exceed `tol.verify` is reported
/// as a numerical failure.
pub fn solve(problem: &ConicProblem, tol: &Tolerances) -> Solution {
    let n = problem.num_vars();
    let asm = assemble(problem);

    let mut q = vec![0.0; n];
    for &(v, c) in &problem.objective.terms {
        q[v] += c;
    }
    let p = CscMatrix::zeros((n, n));

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_feas(tol.feasibility)
        .tol_gap_abs(tol.gap)
        .tol_gap_rel(tol.gap)
        .max_iter(tol.max_iter)
        .build()
        .expect("valid solver settings");

    let failed = |message: String| Solution {
        status: Status::NumericalFailure,
        objective: f64::NAN,
        values: vec![f64::NAN; n],
        residuals: Residuals::default(),
        gap_rel: f64::NAN,
        iterations: 0,
        solve_time: 0.0,
        message,
        certificate_weights: Vec::new(),
    };

    let mut solver = match DefaultSolver::new(&p, &q, &asm.a, &asm.b, &asm.cones, settings) {
        Ok(s) => s,
        Err(e) => return failed(format!("solver setup failed: {e}")),
    };
    solver.solve();

    let sol = &solver.solution;
    let info = &solver.info;
    let x = sol.x.clone();
    let (status, mut message) = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => (Status::Optimal, String::new()),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            (Status::Infeasible, format!("{:?}", sol.status))
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            (Status::Unbounded, format!("{:?}", sol.status))
        }
        other => (Status::NumericalFailure, format!("{other:?}")),
    };

    let residuals = if status == Status::Optimal {
        problem.residuals(&x)
    } else {
        Residuals::default()
    };
    let status = if status == Status::Optimal && residuals.max() > tol.verify {
        message = format!(
            "backend reported {:?} but recomputed residuals are {:.3e} (eq) {:.3e} (bound) {:.3e} (cone)",
            sol.status, residuals.equality, residuals.bound, residuals.cone
        );
        Status::NumericalFailure
    } else {
        status
    };

    let certificate_weights = if status == Status::Infeasible {
        family_weights(&sol.z, &asm.row_family)
    } else {
        Vec::new()
    };

    Solution {
        status,
        objective: problem.objective_value(&x),
        values: x,
        residuals,
        gap_rel: info.gap_rel,
        iterations: sol.iterations,
        solve_time: sol.solve_time,
        message,
        certificate_weights,
    }
}
