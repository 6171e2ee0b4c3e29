//! Complex quantities on top of the real-valued conic layer.
//!
//! Every complex decision variable is a `(Re, Im)` pair of real variables and
//! every complex equality becomes two real rows.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::conic::{ConicProblem, Family, LinExpr, VarId};

pub const PHASES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        match self {
            Phase::A => 0,
            Phase::B => 1,
            Phase::C => 2,
        }
    }

    pub fn from_index(i: usize) -> Phase {
        Phase::ALL[i]
    }

    /// Reference angle: a = 0°, b = −120°, c = +120°.
    pub fn angle(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    /// Unit phasor at the reference angle.
    pub fn unit(self) -> Complex64 {
        Complex64::from_polar(1.0, self.angle())
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

/// Position of (node, phase) in a phase-major 3n vector.
pub fn stacked_index(n_nodes: usize, node: usize, phase: Phase) -> usize {
    phase.index() * n_nodes + node
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexVar {
    pub re: VarId,
    pub im: VarId,
}

impl ComplexVar {
    pub fn new(p: &mut ConicProblem, name: &str, family: Family) -> Self {
        let re = p.add_free_var(format!("{name}.re"), family);
        let im = p.add_free_var(format!("{name}.im"), family);
        Self { re, im }
    }

    pub fn value(&self, x: &[f64]) -> Complex64 {
        Complex64::new(x[self.re], x[self.im])
    }
}

/// Complex affine expression held as two real expressions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComplexExpr {
    pub re: LinExpr,
    pub im: LinExpr,
}

impl ComplexExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn var(v: ComplexVar) -> Self {
        Self {
            re: LinExpr::var(v.re),
            im: LinExpr::var(v.im),
        }
    }

    pub fn constant(c: Complex64) -> Self {
        Self {
            re: LinExpr::constant(c.re),
            im: LinExpr::constant(c.im),
        }
    }

    /// Adds `c·v`, or `c·v*` when `conjugate` is set.
    pub fn add_var(&mut self, c: Complex64, v: ComplexVar, conjugate: bool) {
        let s = if conjugate { -1.0 } else { 1.0 };
        // (cr + j ci)(x + j s y) = cr x - s ci y + j(ci x + s cr y)
        self.re.add_term(v.re, c.re);
        self.re.add_term(v.im, -s * c.im);
        self.im.add_term(v.re, c.im);
        self.im.add_term(v.im, s * c.re);
    }

    pub fn add_constant(&mut self, c: Complex64) {
        self.re.constant += c.re;
        self.im.constant += c.im;
    }

    pub fn add_expr(&mut self, other: &ComplexExpr, scale: f64) {
        self.re.add_expr(&other.re, scale);
        self.im.add_expr(&other.im, scale);
    }

    pub fn conj(&self) -> ComplexExpr {
        ComplexExpr {
            re: self.re.clone(),
            im: self.im.scaled(-1.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.eval(x), self.im.eval(x))
    }
}

/// Complex linear equality `expr = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexEquality {
    pub expr: ComplexExpr,
    pub rhs: Complex64,
}

impl ComplexEquality {
    pub fn residual(&self, x: &[f64]) -> Complex64 {
        self.expr.eval(x) - self.rhs
    }

    /// Pushes the real and imaginary rows into the problem.
    pub fn add_to(self, p: &mut ConicProblem, family: Family) {
        p.add_eq(self.expr.re, self.rhs.re, family);
        p.add_eq(self.expr.im, self.rhs.im, family);
    }
}

/// Largest modulus of a sequence of complex values (0 when empty).
pub fn max_norm<'a>(values: impl IntoIterator<Item = &'a Complex64>) -> f64 {
    values.into_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_references_sum_to_zero() {
        let s: Complex64 = Phase::ALL.iter().map(|p| p.unit()).sum();
        assert!(s.norm() < 1e-15);
        assert!((Phase::B.unit().re + 0.5).abs() < 1e-15);
    }

    #[test]
    fn scaled_conjugate_matches_complex_arithmetic() {
        let mut p = ConicProblem::new();
        let v = ComplexVar::new(&mut p, "v", Family::OTHER);
        let x = [0.3, -1.7];
        let z = Complex64::new(x[0], x[1]);
        let c = Complex64::new(2.0, -0.5);
        for conj in [false, true] {
            let mut e = ComplexExpr::new();
            e.add_var(c, v, conj);
            let expect = if conj { c * z.conj() } else { c * z };
            assert!((e.eval(&x) - expect).norm() < 1e-14);
        }
    }
}
