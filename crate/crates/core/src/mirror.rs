//! Mirror maps built from projections and their Bregman divergences.
//!
//! A strictly increasing projection `P` whose inverse blows up at the
//! boundary of its image yields a mirror map `Phi(x) = int_{x0}^{x} P^{-1}(y) dy`
//! with `grad Phi = P^{-1}`. The tanh and softmax projections have closed
//! forms; any other separable projection (shifted tanh) is integrated
//! numerically. For tanh and softmax, annealing enters only as
//! `Phi_beta = Phi / beta`. The shifted-tanh projection scales its offsets
//! with `beta` as well, so its map is integrated from `P_beta^{-1}` directly.

use crate::error::{ensure_beta, ensure_finite, Error, Result};
use crate::projections::{Projection, ProjectionKind};

/// Absolute error target of the adaptive Simpson integrator.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Maximum bisection depth of the integrator (at most 2^16 panels).
pub const QUADRATURE_MAX_DEPTH: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MirrorKind {
    /// `0.5 [(1+w) ln(1+w) + (1-w) ln(1-w)]`, the map of the tanh projection.
    TanhEntropy,
    /// `sum u ln u - u`, the map of the softmax projection.
    NegativeEntropy,
    /// `0.5 |x|^2`; mirror descent reduces to projected gradient descent.
    Quadratic,
    /// Integral of a separable projection's inverse, evaluated by quadrature.
    Numeric,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MirrorMap {
    kind: MirrorKind,
    /// Projection the map is derived from; `None` for the quadratic map.
    projection: Option<ProjectionKind>,
    /// Lower limit of the integral form, `P_beta(0)` (the same for every beta
    /// of the shipped projections).
    base_point: f64,
}

impl MirrorMap {
    pub fn tanh_entropy() -> Self {
        Self {
            kind: MirrorKind::TanhEntropy,
            projection: Some(ProjectionKind::Tanh),
            base_point: 0.0,
        }
    }

    pub fn negative_entropy(d: usize) -> Self {
        Self {
            kind: MirrorKind::NegativeEntropy,
            projection: Some(ProjectionKind::Softmax { d }),
            base_point: 0.0,
        }
    }

    pub fn quadratic() -> Self {
        Self {
            kind: MirrorKind::Quadratic,
            projection: None,
            base_point: 0.0,
        }
    }

    /// Quadrature-backed map for a coordinate-separable projection.
    pub fn numeric(projection: ProjectionKind) -> Result<Self> {
        match projection {
            ProjectionKind::Tanh | ProjectionKind::ShiftedTanh => {
                let base_point = Projection::new(projection, 1.0)?.project(&[0.0])?[0];
                Ok(Self {
                    kind: MirrorKind::Numeric,
                    projection: Some(projection),
                    base_point,
                })
            }
            other => Err(Error::UnsupportedProjection {
                op: "numeric mirror map",
                projection: other.to_string(),
            }),
        }
    }

    /// The map matching a projection: closed form where one exists.
    pub fn for_projection(projection: ProjectionKind) -> Result<Self> {
        match projection {
            ProjectionKind::Tanh => Ok(Self::tanh_entropy()),
            ProjectionKind::Softmax { d } => Ok(Self::negative_entropy(d)),
            ProjectionKind::ShiftedTanh => Self::numeric(projection),
            ProjectionKind::Sign => Err(Error::UnsupportedProjection {
                op: "mirror map",
                projection: projection.to_string(),
            }),
        }
    }

    pub fn kind(&self) -> MirrorKind {
        self.kind
    }

    pub fn projection(&self) -> Option<ProjectionKind> {
        self.projection
    }

    pub fn base_point(&self) -> f64 {
        self.base_point
    }

    pub fn name(&self) -> String {
        match (self.kind, self.projection) {
            (MirrorKind::TanhEntropy, _) => "tanh_entropy".into(),
            (MirrorKind::NegativeEntropy, _) => "negative_entropy".into(),
            (MirrorKind::Quadratic, _) => "quadratic".into(),
            (MirrorKind::Numeric, Some(p)) => format!("numeric_{p}"),
            (MirrorKind::Numeric, None) => "numeric".into(),
        }
    }

    fn check_domain(&self, x: &[f64]) -> Result<()> {
        ensure_finite("x", x)?;
        let bad = match self.kind {
            MirrorKind::TanhEntropy | MirrorKind::Numeric => x.iter().position(|v| v.abs() >= 1.0),
            MirrorKind::NegativeEntropy => x.iter().position(|&v| v <= 0.0),
            MirrorKind::Quadratic => None,
        };
        if let Some(index) = bad {
            return Err(Error::OutOfDomain {
                what: "mirror map",
                index,
                value: x[index],
            });
        }
        if let Some(ProjectionKind::Softmax { d }) = self.projection {
            if x.len() % d != 0 {
                return Err(Error::Shape(format!(
                    "simplex point of length {} is not a multiple of {d}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    fn inverse_at(&self, y: f64, beta: f64) -> Result<f64> {
        let p = self.projection.expect("numeric map always has a projection");
        Ok(Projection::new(p, beta)?.inverse(&[y])?[0])
    }

    /// `Phi_beta(x)`.
    pub fn value(&self, x: &[f64], beta: f64) -> Result<f64> {
        ensure_beta(beta)?;
        self.check_domain(x)?;
        let scaled = match self.kind {
            MirrorKind::TanhEntropy => {
                0.5 * x
                    .iter()
                    .map(|&w| (1.0 + w) * w.ln_1p() + (1.0 - w) * (-w).ln_1p())
                    .sum::<f64>()
            }
            MirrorKind::NegativeEntropy => x.iter().map(|&u| u * u.ln() - u).sum(),
            MirrorKind::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            MirrorKind::Numeric => {
                let mut total = 0.0;
                for &xi in x {
                    total += self.integrate(self.base_point, xi, |y| self.inverse_at(y, beta))?;
                }
                return Ok(total);
            }
        };
        Ok(scaled / beta)
    }

    /// `grad Phi_beta(x) = P_beta^{-1}(x)`.
    pub fn grad(&self, x: &[f64], beta: f64) -> Result<Vec<f64>> {
        ensure_beta(beta)?;
        self.check_domain(x)?;
        match self.projection {
            Some(p) => Projection::new(p, beta)?.inverse(x),
            None => Ok(x.iter().map(|v| v / beta).collect()),
        }
    }

    /// `D(p, q) = Phi(p) - Phi(q) - <grad Phi(q), p - q>`, clipped at zero
    /// when rounding makes it slightly negative.
    pub fn bregman(&self, p: &[f64], q: &[f64], beta: f64) -> Result<f64> {
        if p.len() != q.len() {
            return Err(Error::Shape(format!(
                "bregman: {} vs {} entries",
                p.len(),
                q.len()
            )));
        }
        ensure_beta(beta)?;
        self.check_domain(p)?;
        self.check_domain(q)?;
        let raw = match self.kind {
            MirrorKind::Numeric => {
                // integrate P^{-1}(y) - P^{-1}(q) from q to p; the integrand
                // has the sign of (y - q) so the result is nonnegative
                let mut total = 0.0;
                for (&pi, &qi) in p.iter().zip(q) {
                    let at_q = self.inverse_at(qi, beta)?;
                    total += self.integrate(qi, pi, |y| Ok(self.inverse_at(y, beta)? - at_q))?;
                }
                total
            }
            _ => {
                let gq = self.grad(q, beta)?;
                let lin: f64 = gq.iter().zip(p.iter().zip(q)).map(|(g, (a, b))| g * (a - b)).sum();
                self.value(p, beta)? - self.value(q, beta)? - lin
            }
        };
        Ok(if raw < 0.0 && raw > -1e-9 { 0.0 } else { raw })
    }

    fn integrate<F>(&self, a: f64, b: f64, f: F) -> Result<f64>
    where
        F: Fn(f64) -> Result<f64>,
    {
        adaptive_simpson(&f, a, b, QUADRATURE_TOL, QUADRATURE_MAX_DEPTH)
    }
}

/// `0.5 |p - q|^2`.
pub fn quadratic_bregman(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson<F>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    Ok(simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_entropy_values() {
        let m = MirrorMap::tanh_entropy();
        assert_eq!(m.value(&[0.0], 1.0).unwrap(), 0.0);
        let expected = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln());
        assert!((m.value(&[0.5], 1.0).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.130_812_035_941_137_6).abs() < 1e-15);
        assert!((m.value(&[0.5], 4.0).unwrap() - expected / 4.0).abs() < 1e-15);
        assert!(matches!(m.value(&[1.0], 1.0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn grads() {
        assert_eq!(MirrorMap::tanh_entropy().grad(&[0.0], 1.0).unwrap(), vec![0.0]);
        let g = MirrorMap::negative_entropy(2).grad(&[0.5, 0.5], 1.0).unwrap();
        assert!((g[0] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((g[1] + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(MirrorMap::quadratic().grad(&[0.4], 2.0).unwrap(), vec![0.2]);
    }

    #[test]
    fn bregman_examples() {
        let m = MirrorMap::tanh_entropy();
        assert_eq!(m.bregman(&[0.3], &[0.3], 1.0).unwrap(), 0.0);
        let phi_q = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln());
        let expected = -phi_q + 0.5 * 3f64.ln() * 0.5;
        let d = m.bregman(&[0.0], &[0.5], 1.0).unwrap();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.143_841_036_225_890_2).abs() < 1e-12);
        assert!(m.bregman(&[0.0], &[0.5, 0.1], 1.0).is_err());
    }

    #[test]
    fn negative_entropy_bregman_is_kl() {
        let m = MirrorMap::negative_entropy(3);
        let u: [f64; 3] = [0.2, 0.5, 0.3];
        let v = [0.6, 0.1, 0.3];
        let kl: f64 = u.iter().zip(&v).map(|(a, b)| a * (a / b).ln()).sum();
        assert!((m.bregman(&u, &v, 1.0).unwrap() - kl).abs() < 1e-12);
    }

    #[test]
    fn quadratic_bregman_examples() {
        assert_eq!(quadratic_bregman(&[0.3, 0.1], &[0.3, 0.1]), 0.0);
        assert_eq!(quadratic_bregman(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
        let (p, q) = ([0.2, -0.7], [0.9, 0.4]);
        assert_eq!(quadratic_bregman(&p, &q), quadratic_bregman(&q, &p));
        let m = MirrorMap::quadratic();
        assert!((m.bregman(&p, &q, 1.0).unwrap() - quadratic_bregman(&p, &q)).abs() < 1e-15);
    }

    #[test]
    fn numeric_tanh_matches_closed_form() {
        let numeric = MirrorMap::numeric(ProjectionKind::Tanh).unwrap();
        let exact = MirrorMap::tanh_entropy();
        for &w in &[-0.9, -0.3, 0.0, 0.25, 0.8, 0.99] {
            let a = numeric.value(&[w], 1.0).unwrap();
            let b = exact.value(&[w], 1.0).unwrap();
            assert!((a - b).abs() < 1e-9, "w={w}: {a} vs {b}");
        }
    }

    #[test]
    fn numeric_requires_separable_projection() {
        assert!(MirrorMap::numeric(ProjectionKind::Softmax { d: 2 }).is_err());
        assert!(MirrorMap::for_projection(ProjectionKind::Sign).is_err());
        assert_eq!(
            MirrorMap::for_projection(ProjectionKind::ShiftedTanh).unwrap().kind(),
            MirrorKind::Numeric
        );
    }

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let v = adaptive_simpson(&|x: f64| Ok(x * x * x - x), -1.0, 2.0, 1e-12, 10).unwrap();
        assert!((v - (4.0 - 2.0 - 0.25 + 0.5)).abs() < 1e-12);
    }
}
