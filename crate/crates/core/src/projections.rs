//! Parametric projections from the unconstrained dual space onto the interior
//! of a quantization constraint set.
//!
//! Every projection is parameterised by an annealing scalar `beta >= 1`. As
//! `beta` grows the soft projections approach their hard (step-function)
//! counterparts. The sigmoid projection onto `[0, 1]` follows the same
//! pattern as `tanh` and is not provided.

use std::fmt;

use crate::error::{ensure_beta, ensure_finite, Error, Result};

/// Distance kept from the boundary before inverting a projection or applying
/// a closed-form mirror-descent update.
pub const BOUNDARY_DELTA: f64 = 1e-12;

/// Offset of the two inflection points of the ternary shifted-tanh projection.
pub const SHIFTED_TANH_OFFSET: f64 = 0.5;

/// Ordered set of admissible quantized values.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLevels(Vec<f64>);

impl QuantLevels {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config(format!(
                "need at least two quantization levels, got {}",
                levels.len()
            )));
        }
        ensure_finite("levels", &levels)?;
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "quantization levels must be strictly increasing: {levels:?}"
            )));
        }
        Ok(Self(levels))
    }

    pub fn binary() -> Self {
        Self(vec![-1.0, 1.0])
    }

    pub fn ternary() -> Self {
        Self(vec![-1.0, 0.0, 1.0])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.0[0]
    }

    pub fn max(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Nearest level to `w`. Ties go to the larger level, so `0` rounds to
    /// `+1` for binary levels.
    pub fn nearest(&self, w: f64) -> f64 {
        let mut best = self.0[0];
        let mut best_dist = (w - best).abs();
        for &q in &self.0[1..] {
            let d = (w - q).abs();
            if d <= best_dist {
                best = q;
                best_dist = d;
            }
        }
        best
    }

    pub fn distance(&self, w: f64) -> f64 {
        (w - self.nearest(w)).abs()
    }

    pub fn contains(&self, w: f64) -> bool {
        self.0.iter().any(|&q| q == w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionKind {
    /// `tanh(beta x)` onto `(-1, 1)`.
    Tanh,
    /// Sum of two shifted tanh functions onto `(-1, 1)`, steps toward `{-1, 0, 1}`.
    ShiftedTanh,
    /// Row-wise `softmax(beta x)` onto the interior of the `(d-1)`-simplex.
    /// Vectors are laid out row-major with `d` entries per parameter.
    Softmax { d: usize },
    /// Hard sign, the limit of `Tanh` as `beta` grows.
    Sign,
}

impl ProjectionKind {
    pub fn is_differentiable(self) -> bool {
        !matches!(self, ProjectionKind::Sign)
    }

    pub fn levels(self) -> QuantLevels {
        match self {
            ProjectionKind::Tanh | ProjectionKind::Sign => QuantLevels::binary(),
            ProjectionKind::ShiftedTanh => QuantLevels::ternary(),
            ProjectionKind::Softmax { d } => {
                // evenly spaced in [-1, 1]
                let step = 2.0 / (d.max(2) - 1) as f64;
                QuantLevels((0..d.max(2)).map(|i| -1.0 + step * i as f64).collect())
            }
        }
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectionKind::Tanh => write!(f, "tanh"),
            ProjectionKind::ShiftedTanh => write!(f, "shifted_tanh"),
            ProjectionKind::Softmax { d } => write!(f, "softmax(d={d})"),
            ProjectionKind::Sign => write!(f, "sign"),
        }
    }
}

/// A projection kind paired with its current annealing scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub beta: f64,
}

impl Projection {
    pub fn new(kind: ProjectionKind, beta: f64) -> Result<Self> {
        ensure_beta(beta)?;
        if let ProjectionKind::Softmax { d } = kind {
            if d < 2 {
                return Err(Error::Config(format!("softmax needs d >= 2, got {d}")));
            }
        }
        Ok(Self { kind, beta })
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ProjectionKind::Tanh => tanh_project(x, self.beta),
            ProjectionKind::ShiftedTanh => shifted_tanh_project(x, self.beta),
            ProjectionKind::Softmax { d } => softmax_project_rows(x, d, self.beta),
            ProjectionKind::Sign => {
                ensure_finite("x", x)?;
                Ok(sign_project(x))
            }
        }
    }

    /// Inverse of the projection. For softmax this is the canonical
    /// representative whose `exp(beta v)` sums to one in every row.
    pub fn inverse(&self, w: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            ProjectionKind::Tanh => tanh_inverse(w, self.beta),
            ProjectionKind::ShiftedTanh => w
                .iter()
                .map(|&wi| shifted_tanh_inverse(wi, self.beta))
                .collect(),
            ProjectionKind::Softmax { d } => softmax_inverse_rows(w, d, self.beta),
            ProjectionKind::Sign => Err(Error::UnsupportedProjection {
                op: "inverse",
                projection: self.kind.to_string(),
            }),
        }
    }

    /// `J_P(x)^T g`, the gradient pulled back through the projection.
    pub fn vjp(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        if x.len() != g.len() {
            return Err(Error::Shape(format!(
                "vjp: point has {} entries, gradient {}",
                x.len(),
                g.len()
            )));
        }
        ensure_finite("g", g)?;
        match self.kind {
            ProjectionKind::Tanh => Ok(mul(&tanh_jacobian(x, self.beta)?, g)),
            ProjectionKind::ShiftedTanh => Ok(mul(&shifted_tanh_jacobian(x, self.beta)?, g)),
            ProjectionKind::Softmax { d } => {
                let u = softmax_project_rows(x, d, self.beta)?;
                let mut out = Vec::with_capacity(x.len());
                for (ur, gr) in u.chunks(d).zip(g.chunks(d)) {
                    let dot: f64 = ur.iter().zip(gr).map(|(a, b)| a * b).sum();
                    out.extend(ur.iter().zip(gr).map(|(a, b)| self.beta * a * (b - dot)));
                }
                Ok(out)
            }
            ProjectionKind::Sign => Err(Error::UnsupportedProjection {
                op: "jacobian",
                projection: self.kind.to_string(),
            }),
        }
    }

    /// Clamp a primal point into the closed interior region the inverse
    /// accepts.
    pub fn clamp_interior(&self, w: &mut [f64]) {
        match self.kind {
            ProjectionKind::Tanh | ProjectionKind::ShiftedTanh => clamp_box_interior(w, -1.0, 1.0),
            ProjectionKind::Softmax { d } => clamp_simplex_interior(w, d),
            ProjectionKind::Sign => {}
        }
    }
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Clamp every entry into `[lo + delta, hi - delta]`.
pub fn clamp_box_interior(w: &mut [f64], lo: f64, hi: f64) {
    for wi in w {
        *wi = wi.clamp(lo + BOUNDARY_DELTA, hi - BOUNDARY_DELTA);
    }
}

/// Raise every simplex entry to at least `delta` and renormalise each row.
pub fn clamp_simplex_interior(u: &mut [f64], d: usize) {
    for row in u.chunks_mut(d) {
        let mut sum = 0.0;
        for ui in row.iter_mut() {
            *ui = ui.max(BOUNDARY_DELTA);
            sum += *ui;
        }
        for ui in row.iter_mut() {
            *ui /= sum;
        }
    }
}

pub fn tanh_project(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    ensure_finite("x", x)?;
    Ok(x.iter().map(|&xi| (beta * xi).tanh()).collect())
}

/// `(1 / beta) atanh(w)`; rejects `|w| >= 1`.
pub fn tanh_inverse(w: &[f64], beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    w.iter()
        .enumerate()
        .map(|(index, &wi)| {
            if wi.is_nan() || wi.abs() >= 1.0 {
                Err(Error::OutOfDomain {
                    what: "tanh inverse",
                    index,
                    value: wi,
                })
            } else {
                Ok(wi.atanh() / beta)
            }
        })
        .collect()
}

fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    1.0 / (c * c)
}

/// Diagonal of the Jacobian of `tanh(beta x)`: `beta (1 - tanh^2(beta x))`.
pub fn tanh_jacobian(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    ensure_finite("x", x)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok(x.iter().map(|&xi| beta * sech2(beta * xi)).collect())
}

/// Softmax of a single row.
pub fn softmax_project(u_tilde: &[f64], beta: f64) -> Result<Vec<f64>> {
    if u_tilde.len() < 2 {
        return Err(Error::Shape(format!(
            "softmax needs at least two labels, got {}",
            u_tilde.len()
        )));
    }
    softmax_project_rows(u_tilde, u_tilde.len(), beta)
}

pub fn softmax_project_rows(x: &[f64], d: usize, beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    ensure_finite("u_tilde", x)?;
    check_rows(x.len(), d)?;
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(d) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(beta * v));
        let start = out.len();
        let mut sum = 0.0;
        for &v in row {
            let e = (beta * v - max).exp();
            sum += e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e /= sum;
        }
    }
    Ok(out)
}

fn check_rows(len: usize, d: usize) -> Result<()> {
    if d < 2 || len % d != 0 {
        Err(Error::Shape(format!(
            "length {len} is not a whole number of rows of {d} labels"
        )))
    } else {
        Ok(())
    }
}

/// Canonical inverse of a single softmax row: `log(u) / beta`.
pub fn softmax_inverse(u: &[f64], beta: f64) -> Result<Vec<f64>> {
    softmax_inverse_rows(u, u.len(), beta)
}

pub fn softmax_inverse_rows(u: &[f64], d: usize, beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    check_rows(u.len(), d)?;
    if let Some(index) = u.iter().position(|&ui| !(ui > 0.0 && ui.is_finite())) {
        return Err(Error::OutOfDomain {
            what: "softmax inverse",
            index,
            value: u[index],
        });
    }
    let mut out = Vec::with_capacity(u.len());
    for row in u.chunks(d) {
        // fold residual normalisation error into the log-partition
        let log_sum = row.iter().sum::<f64>().ln();
        out.extend(row.iter().map(|&ui| (ui.ln() - log_sum) / beta));
    }
    Ok(out)
}

fn shifted_tanh_scalar(x: f64, beta: f64) -> f64 {
    0.5 * ((beta * (x + SHIFTED_TANH_OFFSET)).tanh() + (beta * (x - SHIFTED_TANH_OFFSET)).tanh())
}

/// `0.5 [tanh(beta (x + 0.5)) + tanh(beta (x - 0.5))]`.
pub fn shifted_tanh_project(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    ensure_beta(beta)?;
    ensure_finite("x", x)?;
    Ok(x.iter().map(|&xi| shifted_tanh_scalar(xi, beta)).collect())
}

pub fn shifted_tanh_jacobian(x: &[f64], beta: f64) -> Result<Vec<f64>> {
    ensure_finite("x", x)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    Ok(x
        .iter()
        .map(|&xi| {
            0.5 * beta
                * (sech2(beta * (xi + SHIFTED_TANH_OFFSET)) + sech2(beta * (xi - SHIFTED_TANH_OFFSET)))
        })
        .collect())
}

/// Numeric inverse of the shifted-tanh projection: Newton steps kept inside
/// a bisection bracket.
///
/// The bracket is grown until it contains the root. Newton steps that leave
/// it are replaced by bisection, so the iteration always converges.
pub fn shifted_tanh_inverse(w: f64, beta: f64) -> Result<f64> {
    ensure_beta(beta)?;
    if w.is_nan() || w.abs() >= 1.0 {
        return Err(Error::OutOfDomain {
            what: "shifted tanh inverse",
            index: 0,
            value: w,
        });
    }
    // beta also scales the offsets, so there is no unit-beta shortcut
    let p = |x: f64| shifted_tanh_scalar(x, beta);
    let slope = |x: f64| {
        0.5 * beta * (sech2(beta * (x + SHIFTED_TANH_OFFSET)) + sech2(beta * (x - SHIFTED_TANH_OFFSET)))
    };
    let mut lo = -1.0_f64;
    let mut hi = 1.0_f64;
    while p(lo) > w {
        lo *= 2.0;
    }
    while p(hi) < w {
        hi *= 2.0;
    }
    let mut x = lo + 0.5 * (hi - lo);
    let mut last_step = hi - lo;
    for _ in 0..400 {
        let r = p(x) - w;
        if r == 0.0 {
            return Ok(x);
        }
        if r < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = slope(x);
        let newton = x - r / d;
        // bisect when Newton leaves the bracket or fails to halve the last step
        let next = if d > 0.0 && newton > lo && newton < hi && (r / d).abs() < 0.5 * last_step {
            newton
        } else {
            lo + 0.5 * (hi - lo)
        };
        last_step = (next - x).abs();
        if last_step <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE) || next <= lo || next >= hi {
            x = next.clamp(lo, hi);
            break;
        }
        x = next;
    }
    // pick the best of the final point and the bracket ends
    let best = [x, lo, hi]
        .into_iter()
        .min_by(|a, b| (p(*a) - w).abs().total_cmp(&(p(*b) - w).abs()))
        .unwrap_or(x);
    Ok(best)
}

/// `+1` for `x >= 0`, `-1` otherwise.
pub fn sign_project(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&xi| if xi >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}
