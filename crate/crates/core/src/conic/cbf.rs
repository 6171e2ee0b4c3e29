//! Conic Benchmark Format (CBF, version 3) export.
//!
//! All variables are declared free. Constraints use the CBF convention
//! `A·x + b ∈ K` and appear as one `L=` block (equalities and fixed
//! variables), one `L+` block (finite bounds) and one `Q` block per cone,
//! where the first coordinate of a `Q` block is the cone head.

use std::fmt::Write as _;
use std::io::{self, Write};

use super::ConicProblem;

pub fn write_cbf<W: Write>(problem: &ConicProblem, out: &mut W) -> io::Result<()> {
    let n = problem.num_vars();
    let mut a: Vec<(usize, usize, f64)> = Vec::new();
    let mut b: Vec<(usize, f64)> = Vec::new();
    let mut domains: Vec<(&str, usize)> = Vec::new();
    let mut row = 0usize;

    let mut n_eq = 0;
    for eq in &problem.equalities {
        for &(j, v) in &eq.expr.terms {
            a.push((row, j, v));
        }
        if eq.expr.constant != 0.0 {
            b.push((row, eq.expr.constant));
        }
        row += 1;
        n_eq += 1;
    }
    for (j, v) in problem.variables.iter().enumerate() {
        if v.lower.is_finite() && v.lower == v.upper {
            a.push((row, j, 1.0));
            if v.lower != 0.0 {
                b.push((row, -v.lower));
            }
            row += 1;
            n_eq += 1;
        }
    }
    if n_eq > 0 {
        domains.push(("L=", n_eq));
    }

    let mut n_ineq = 0;
    for (j, v) in problem.variables.iter().enumerate() {
        if v.lower.is_finite() && v.lower == v.upper {
            continue;
        }
        if v.lower.is_finite() {
            a.push((row, j, 1.0));
            if v.lower != 0.0 {
                b.push((row, -v.lower));
            }
            row += 1;
            n_ineq += 1;
        }
        if v.upper.is_finite() {
            a.push((row, j, -1.0));
            if v.upper != 0.0 {
                b.push((row, v.upper));
            }
            row += 1;
            n_ineq += 1;
        }
    }
    if n_ineq > 0 {
        domains.push(("L+", n_ineq));
    }

    for cone in &problem.cones {
        a.push((row, cone.head, 1.0));
        row += 1;
        for &m in &cone.members {
            a.push((row, m, 1.0));
            row += 1;
        }
        domains.push(("Q", cone.dimension()));
    }

    let mut s = String::new();
    writeln!(s, "VER\n3\n").unwrap();
    writeln!(s, "OBJSENSE\nMIN\n").unwrap();
    writeln!(s, "VAR\n{n} 1\nF {n}\n").unwrap();
    writeln!(s, "CON\n{row} {}", domains.len()).unwrap();
    for (d, k) in &domains {
        writeln!(s, "{d} {k}").unwrap();
    }
    writeln!(s).unwrap();

    let obj: Vec<_> = problem
        .objective
        .terms
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .collect();
    if !obj.is_empty() {
        writeln!(s, "OBJACOORD\n{}", obj.len()).unwrap();
        for (j, c) in obj {
            writeln!(s, "{j} {c:e}").unwrap();
        }
        writeln!(s).unwrap();
    }
    if problem.objective.constant != 0.0 {
        writeln!(s, "OBJBCOORD\n{:e}\n", problem.objective.constant).unwrap();
    }
    if !a.is_empty() {
        writeln!(s, "ACOORD\n{}", a.len()).unwrap();
        for (i, j, v) in &a {
            writeln!(s, "{i} {j} {v:e}").unwrap();
        }
        writeln!(s).unwrap();
    }
    if !b.is_empty() {
        writeln!(s, "BCOORD\n{}", b.len()).unwrap();
        for (i, v) in &b {
            writeln!(s, "{i} {v:e}").unwrap();
        }
    }
    out.write_all(s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{Family, LinExpr};

    #[test]
    fn small_problem_layout() {
        let mut p = ConicProblem::new();
        let x = p.add_var("x", 0.0, 2.0, Family::OTHER);
        let y = p.add_free_var("y", Family::OTHER);
        p.add_eq(LinExpr::var(x).term(y, 1.0), 1.0, Family::OTHER);
        p.add_affine_cone(LinExpr::var(x), vec![LinExpr::var(y)], Family::OTHER)
            .unwrap();
        p.add_objective(&LinExpr::var(y), 1.0);
        let mut buf = Vec::new();
        write_cbf(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("VAR\n2 1\nF 2"));
        assert!(text.contains("CON\n5 3\nL= 1\nL+ 2\nQ 2"));
        assert!(text.contains("BCOORD\n2\n0 -1e0\n2 2e0"));
    }
}
