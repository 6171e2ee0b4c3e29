//! Power-quality constraints: harmonic power flow, THD cones and voltage limits.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::conic::{ConeId, ConicProblem, Family, LinExpr};
use crate::error::{Error, Result};
use crate::netmodel::{assemble_laplacian, expand_three_phase, AdmittanceMatrix, Network};
use crate::phasor::{ComplexEquality, ComplexExpr, ComplexVar, PHASES};

pub const FAMILY_HARMONIC: Family = Family("harmonic_flow");
pub const FAMILY_THD: Family = Family("thd");
pub const FAMILY_VOLTAGE: Family = Family("voltage_limits");

/// Harmonic orders and current injection ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSpectrum {
    pub harmonics: Vec<u32>,
    /// Injection ratio per harmonic as a fraction of the fundamental current.
    pub psi: Vec<f64>,
}

impl HarmonicSpectrum {
    /// Builds the spectrum from percentages.
    pub fn from_percent(harmonics: Vec<u32>, percent: &[f64]) -> Result<Self> {
        let psi: Vec<f64> = percent.iter().map(|p| p / 100.0).collect();
        let s = Self { harmonics, psi };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.psi.len() != self.harmonics.len() {
            return Err(Error::Schema(format!(
                "spectrum has {} entries for {} harmonics",
                self.psi.len(),
                self.harmonics.len()
            )));
        }
        if let Some(h) = self.harmonics.iter().find(|&&h| h < 2) {
            return Err(Error::Schema(format!(
                "harmonic order {h} must be at least 2"
            )));
        }
        if let Some(p) = self.psi.iter().find(|&&p| !(0.0..0.05).contains(&p)) {
            return Err(Error::Schema(format!(
                "injection ratio {p} outside [0, 0.05)"
            )));
        }
        Ok(())
    }
}

/// THD bound and voltage band around nominal (1 pu per phase).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqLimits {
    /// Fraction, e.g. 0.08 for 8%.
    pub thd_max: f64,
    pub delta: f64,
}

impl Default for PqLimits {
    fn default() -> Self {
        Self {
            thd_max: 0.08,
            delta: 0.05,
        }
    }
}

impl PqLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.thd_max > 0.0 && self.thd_max < 1.0) {
            return Err(Error::Schema(format!(
                "thd_max {} outside (0, 1)",
                self.thd_max
            )));
        }
        if !(self.delta > 0.0 && self.delta < 0.1) {
            return Err(Error::Schema(format!(
                "voltage deviation {} outside (0, 0.1)",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Frequency dependence of branch resistance at harmonic order h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResistanceLaw {
    /// `r_h = r`
    #[default]
    Constant,
    /// `r_h = r·√h` (skin effect)
    SqrtH,
}

impl ResistanceLaw {
    fn factor(self, h: u32) -> f64 {
        match self {
            ResistanceLaw::Constant => 1.0,
            ResistanceLaw::SqrtH => (h as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicAdmittance {
    pub harmonic: u32,
    /// Three-phase harmonic admittance matrix (3n × 3n).
    pub y: AdmittanceMatrix,
    /// 2-norm condition number of the slack-reduced single-phase block.
    pub condition: f64,
}

/// Harmonic admittance with branch impedance `r_h + j·h·x`, expanded to three phases.
///
/// The slack node's harmonic voltage is held at zero, so invertibility is
/// checked on the block of the remaining nodes.
pub fn build_harmonic_admittance(
    network: &Network,
    h: u32,
    law: ResistanceLaw,
) -> Result<HarmonicAdmittance> {
    let zb = network.base_impedance();
    let rf = law.factor(h);
    let y1 = assemble_laplacian(network, |b| {
        Complex64::new(b.r_ohm * rf, b.x_ohm * h as f64) / zb
    })?;
    let n = network.n_nodes();
    let condition = if n > 1 {
        let reduced = y1.values.view((1, 1), (n - 1, n - 1)).into_owned();
        let sv = reduced.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smin > smax * 1e-13) || !smin.is_finite() {
            return Err(Error::SingularHarmonicAdmittance { harmonic: h });
        }
        smax / smin
    } else {
        1.0
    };
    Ok(HarmonicAdmittance {
        harmonic: h,
        y: expand_three_phase(&y1),
        condition,
    })
}

/// Per-entry injection ratio: `psi` at the flagged nodes, zero elsewhere.
pub fn psi_mask(n_nodes: usize, psi: f64, injecting: impl Fn(usize) -> bool) -> DVector<f64> {
    DVector::from_fn(PHASES * n_nodes, |i, _| {
        let node = i % n_nodes;
        if node != 0 && injecting(node) {
            psi
        } else {
            0.0
        }
    })
}

/// Rows `Y_h·V_h − diag(ψ_h)·Y·V = 0` at non-slack entries and `V_h = 0` at the slack.
pub fn hpf_rows(
    yh: &AdmittanceMatrix,
    y3: &AdmittanceMatrix,
    psi: &DVector<f64>,
    n_nodes: usize,
    v: &[ComplexVar],
    vh: &[ComplexVar],
) -> Vec<ComplexEquality> {
    let dim = yh.dimension();
    let zero = Complex64::new(0.0, 0.0);
    (0..dim)
        .map(|k| {
            let mut expr = ComplexExpr::new();
            if k % n_nodes == 0 {
                expr.add_var(Complex64::new(1.0, 0.0), vh[k], false);
                return ComplexEquality { expr, rhs: zero };
            }
            for m in 0..dim {
                let a = yh.values[(k, m)];
                if a != zero {
                    expr.add_var(a, vh[m], false);
                }
                if psi[k] != 0.0 {
                    let b = y3.values[(k, m)];
                    if b != zero {
                        expr.add_var(-b * psi[k], v[m], false);
                    }
                }
            }
            ComplexEquality { expr, rhs: zero }
        })
        .collect()
}

/// First-order magnitude of `v` around `1∠θ`: `cosθ·Re(v) + sinθ·Im(v)`.
pub fn linearized_magnitude(v: Complex64, theta: f64) -> f64 {
    theta.cos() * v.re + theta.sin() * v.im
}

pub fn linearized_magnitude_expr(v: ComplexVar, theta: f64) -> LinExpr {
    let mut e = LinExpr::new();
    e.add_term(v.re, theta.cos());
    e.add_term(v.im, theta.sin());
    e
}

/// `‖(V_h)_h‖₂ ≤ thd_max·|ṽ|` with the linearized fundamental magnitude.
pub fn thd_cone_rows(
    p: &mut ConicProblem,
    vh_stack: &[ComplexVar],
    v: ComplexVar,
    thd_max: f64,
    theta: f64,
) -> Result<ConeId> {
    let head = linearized_magnitude_expr(v, theta).scaled(thd_max);
    let members = vh_stack
        .iter()
        .flat_map(|c| [LinExpr::var(c.re), LinExpr::var(c.im)])
        .collect();
    p.add_affine_cone(head, members, FAMILY_THD)
}

/// THD in percent from true magnitudes; `None` when the fundamental vanishes.
pub fn thd_report(vh: &[Complex64], v1: Complex64) -> Option<f64> {
    let fund = v1.norm();
    if fund == 0.0 {
        return None;
    }
    let rms = vh.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    Some(rms / fund * 100.0)
}

/// `|v − v_nom| ≤ δ·|v_nom|`.
pub fn voltage_limit_rows(
    p: &mut ConicProblem,
    v: ComplexVar,
    v_nom: Complex64,
    delta: f64,
) -> Result<ConeId> {
    p.add_affine_cone(
        LinExpr::constant(delta * v_nom.norm()),
        vec![
            LinExpr {
                terms: vec![(v.re, 1.0)],
                constant: -v_nom.re,
            },
            LinExpr {
                terms: vec![(v.im, 1.0)],
                constant: -v_nom.im,
            },
        ],
        FAMILY_VOLTAGE,
    )
}

/// Dense oracle-free helper: harmonic voltages implied by the rows, solved
/// with the slack pinned at zero.
pub fn harmonic_voltages(
    yh: &AdmittanceMatrix,
    y3: &AdmittanceMatrix,
    psi: &DVector<f64>,
    n_nodes: usize,
    v: &DVector<Complex64>,
) -> Option<DVector<Complex64>> {
    let dim = yh.dimension();
    let free: Vec<usize> = (0..dim).filter(|k| k % n_nodes != 0).collect();
    let i_h = (&y3.values * v).component_mul(&psi.map(|p| Complex64::new(p, 0.0)));
    let a = DMatrix::from_fn(free.len(), free.len(), |r, c| yh.values[(free[r], free[c])]);
    let b = DVector::from_fn(free.len(), |r, _| i_h[free[r]]);
    let x = a.lu().solve(&b)?;
    let mut out = DVector::zeros(dim);
    for (r, &k) in free.iter().enumerate() {
        out[k] = x[r];
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{solve, Status, Tolerances};
    use crate::netmodel::{build_admittance, Branch};
    use crate::phasor::Phase;

    fn net(r: f64, x: f64) -> Network {
        Network {
            id: 1,
            name: "t".into(),
            nodes: vec!["0".into(), "1".into(), "2".into()],
            branches: vec![
                Branch {
                    from: 0,
                    to: 1,
                    r_ohm: r,
                    x_ohm: x,
                },
                Branch {
                    from: 1,
                    to: 2,
                    r_ohm: 2.0 * r,
                    x_ohm: 2.0 * x,
                },
            ],
            base_power: 1.0,
            base_voltage: 1.0,
            frequency: 50.0,
        }
    }

    #[test]
    fn resistive_branches_do_not_scale() {
        let n = net(0.1, 0.0);
        let y1 = expand_three_phase(&build_admittance(&n).unwrap());
        for h in [3, 5, 13] {
            let yh = build_harmonic_admittance(&n, h, ResistanceLaw::Constant).unwrap();
            assert!(crate::phasor::max_norm((&yh.y.values - &y1.values).iter()) < 1e-12);
        }
    }

    #[test]
    fn inductive_branches_scale_inversely() {
        let n = net(0.0, 0.1);
        let y1 = expand_three_phase(&build_admittance(&n).unwrap());
        for h in [3, 7, 11] {
            let yh = build_harmonic_admittance(&n, h, ResistanceLaw::Constant).unwrap();
            let expect = y1.values.map(|c| c / h as f64);
            assert!(crate::phasor::max_norm((&yh.y.values - expect).iter()) < 1e-12);
            assert!(yh.condition.is_finite());
        }
    }

    #[test]
    fn skin_effect_scales_resistance() {
        let n = net(0.1, 0.0);
        let yh = build_harmonic_admittance(&n, 9, ResistanceLaw::SqrtH).unwrap();
        let y1 = expand_three_phase(&build_admittance(&n).unwrap());
        assert!(
            crate::phasor::max_norm((&yh.y.values * Complex64::new(3.0, 0.0) - &y1.values).iter())
                < 1e-12
        );
    }

    #[test]
    fn spectrum_validation() {
        let h = vec![3, 5, 7, 9, 11, 13];
        let s =
            HarmonicSpectrum::from_percent(h.clone(), &[0.088, 2.215, 0.754, 0.038, 0.113, 0.0497])
                .unwrap();
        assert!((s.psi[1] - 0.02215).abs() < 1e-15);
        assert!(HarmonicSpectrum::from_percent(h.clone(), &[1.0; 5]).is_err());
        assert!(HarmonicSpectrum::from_percent(h, &[6.0; 6]).is_err());
    }

    #[test]
    fn linearized_magnitude_exact_on_reference_axis() {
        assert!((linearized_magnitude(Complex64::new(1.0, 0.0), 0.0) - 1.0).abs() < 1e-15);
        assert!((linearized_magnitude(Phase::B.unit(), Phase::B.angle()) - 1.0).abs() < 1e-15);
        assert!((linearized_magnitude(Complex64::new(1.05, 0.0), 0.0) - 1.05).abs() < 1e-15);
    }

    #[test]
    fn thd_report_definition() {
        assert_eq!(thd_report(&[], Complex64::new(1.0, 0.0)), Some(0.0));
        let thd = thd_report(&[Complex64::new(0.0, 0.08)], Complex64::new(1.0, 0.0)).unwrap();
        assert!((thd - 8.0).abs() < 1e-12);
        assert_eq!(
            thd_report(&[Complex64::new(0.1, 0.0)], Complex64::new(0.0, 0.0)),
            None
        );
    }

    fn thd_problem(vh_mag: f64, thd_max: f64) -> Status {
        let mut p = ConicProblem::new();
        let v = ComplexVar::new(&mut p, "v", Family::OTHER);
        let vh: Vec<_> = (0..6)
            .map(|i| ComplexVar::new(&mut p, &format!("vh{i}"), Family::OTHER))
            .collect();
        thd_cone_rows(&mut p, &vh, v, thd_max, 0.0).unwrap();
        assert_eq!(p.cones[0].dimension(), 13);
        p.add_eq(LinExpr::var(v.re), 1.0, Family::OTHER);
        p.add_eq(LinExpr::var(v.im), 0.0, Family::OTHER);
        for (i, c) in vh.iter().enumerate() {
            let val = if i == 1 { vh_mag } else { 0.0 };
            p.add_eq(LinExpr::var(c.re), val, Family::OTHER);
            p.add_eq(LinExpr::var(c.im), 0.0, Family::OTHER);
        }
        solve(&p, &Tolerances::default()).status
    }

    #[test]
    fn thd_cone_cases() {
        assert_eq!(thd_problem(0.0, 0.08), Status::Optimal);
        assert_eq!(thd_problem(0.08, 0.08), Status::Optimal);
        assert_eq!(thd_problem(0.0808, 0.08), Status::Infeasible);
    }

    fn voltage_problem(v: Complex64) -> Status {
        let mut p = ConicProblem::new();
        let var = ComplexVar::new(&mut p, "v", Family::OTHER);
        voltage_limit_rows(&mut p, var, Complex64::new(1.0, 0.0), 0.05).unwrap();
        p.add_eq(LinExpr::var(var.re), v.re, Family::OTHER);
        p.add_eq(LinExpr::var(var.im), v.im, Family::OTHER);
        solve(&p, &Tolerances::default()).status
    }

    #[test]
    fn voltage_limit_cases() {
        assert_eq!(voltage_problem(Complex64::new(1.0, 0.0)), Status::Optimal);
        assert_eq!(voltage_problem(Complex64::new(1.05, 0.0)), Status::Optimal);
        assert_eq!(
            voltage_problem(Complex64::new(1.06, 0.0)),
            Status::Infeasible
        );
    }

    #[test]
    fn hpf_zero_spectrum_or_voltage_gives_zero() {
        let n = net(0.1, 0.05);
        let y3 = expand_three_phase(&build_admittance(&n).unwrap());
        let yh = build_harmonic_admittance(&n, 5, ResistanceLaw::Constant).unwrap();
        let v = crate::linpf::LinearizationPoint::flat(3)
            .voltages
            .map(|c| c * 0.97);
        let zero_psi = psi_mask(3, 0.0, |_| true);
        let vh = harmonic_voltages(&yh.y, &y3, &zero_psi, 3, &v).unwrap();
        assert_eq!(crate::phasor::max_norm(vh.iter()), 0.0);
        let psi = psi_mask(3, 0.02, |k| k == 2);
        let vh = harmonic_voltages(&yh.y, &y3, &psi, 3, &DVector::zeros(9)).unwrap();
        assert_eq!(crate::phasor::max_norm(vh.iter()), 0.0);
    }
}
