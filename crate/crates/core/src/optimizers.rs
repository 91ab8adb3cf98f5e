//! Mirror-descent update rules, the baselines they are compared against,
//! annealing and step-size schedules, Adam preconditioning and the final
//! rounding onto the quantization levels.
//!
//! Two families of MD updates are provided:
//!
//! * closed forms acting on the primal point only (`md_tanh_step`,
//!   `md_softmax_step`), obtained from the KKT conditions of the proximal
//!   step `argmin <eta g, x> + D_{Phi_beta}(x, x_k)`;
//! * the stable form (`stable_md_step`), which keeps the dual variables
//!   `x~ = P_beta^{-1}(x)` and takes a plain gradient step on them, then
//!   projects. With `g` the gradient at the primal point this is exactly a
//!   straight-through-estimator update.
//!
//! Both produce the same iterates whenever the dual is consistent with the
//! primal point; the stable form never divides by `1 - |w|`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_beta, ensure_finite, Error, Result};
use crate::projections::{
    clamp_box_interior, clamp_simplex_interior, sign_project, Projection, ProjectionKind,
    QuantLevels, BOUNDARY_DELTA,
};

/// Dual variables are kept within `[-DUAL_CLIP, DUAL_CLIP]`.
pub const DUAL_CLIP: f64 = 20.0;

/// Geometric annealing schedule `beta_k = min(cap, beta0 * scale^floor(k / interval))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaSchedule {
    pub beta0: f64,
    pub scale: f64,
    pub interval: u64,
    pub cap: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            scale: 1.02,
            interval: 200,
            cap: 1e4,
        }
    }
}

impl BetaSchedule {
    pub fn constant(beta: f64) -> Self {
        Self {
            beta0: beta,
            scale: 1.0,
            interval: 1,
            cap: beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta0.is_finite() && self.beta0 >= 1.0) {
            return Err(Error::Config(format!("beta0 must be >= 1, got {}", self.beta0)));
        }
        if !(self.scale.is_finite() && self.scale >= 1.0) {
            return Err(Error::Config(format!("beta scale must be >= 1, got {}", self.scale)));
        }
        if self.interval == 0 {
            return Err(Error::Config("beta interval must be positive".into()));
        }
        if !(self.cap.is_finite() && self.cap >= self.beta0) {
            return Err(Error::Config(format!(
                "beta cap {} must be finite and >= beta0 {}",
                self.cap, self.beta0
            )));
        }
        Ok(())
    }

    pub fn beta_at(&self, k: u64) -> f64 {
        anneal_beta(self, k)
    }
}

pub fn anneal_beta(schedule: &BetaSchedule, k: u64) -> f64 {
    let exponent = k / schedule.interval.max(1);
    let mut beta = schedule.beta0;
    // repeated multiplication stops as soon as the cap binds, so huge k cannot overflow
    for _ in 0..exponent {
        beta *= schedule.scale;
        if beta >= schedule.cap {
            return schedule.cap;
        }
    }
    beta.min(schedule.cap)
}

/// Step-decay learning rate `eta_k = eta0 * lr_scale^floor(k / lr_interval)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSizeSchedule {
    pub eta0: f64,
    pub lr_scale: f64,
    pub lr_interval: u64,
}

impl Default for StepSizeSchedule {
    fn default() -> Self {
        Self {
            eta0: 1e-3,
            lr_scale: 0.3,
            lr_interval: 30_000,
        }
    }
}

impl StepSizeSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0.is_finite() && self.eta0 > 0.0) {
            return Err(Error::Config(format!("eta0 must be positive, got {}", self.eta0)));
        }
        if !(self.lr_scale > 0.0 && self.lr_scale <= 1.0) {
            return Err(Error::Config(format!(
                "lr_scale must lie in (0, 1], got {}",
                self.lr_scale
            )));
        }
        if self.lr_interval == 0 {
            return Err(Error::Config("lr_interval must be positive".into()));
        }
        Ok(())
    }

    pub fn eta_at(&self, k: u64) -> f64 {
        let exponent = (k / self.lr_interval.max(1)).min(i32::MAX as u64) as i32;
        // tiny but positive even after many decays
        (self.eta0 * self.lr_scale.powi(exponent)).max(f64::MIN_POSITIVE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub b1: f64,
    pub b2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            b1: 0.9,
            b2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(unit(self.b1) && unit(self.b2)) {
            return Err(Error::Config(format!(
                "adam betas must lie in (0, 1), got ({}, {})",
                self.b1, self.b2
            )));
        }
        if !(self.eps_hat > 0.0) {
            return Err(Error::Config("adam eps_hat must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam direction `m_hat / (sqrt(v_hat) + eps_hat)`.
pub fn adam_precondition(
    g: &[f64],
    moments: &AdamMoments,
    config: &AdamConfig,
) -> Result<(Vec<f64>, AdamMoments)> {
    ensure_finite("g", g)?;
    let mut next = if moments.m.is_empty() && moments.t == 0 {
        AdamMoments::new(g.len())
    } else {
        moments.clone()
    };
    if next.m.len() != g.len() {
        return Err(Error::Shape(format!(
            "adam moments have {} entries, gradient {}",
            next.m.len(),
            g.len()
        )));
    }
    next.t += 1;
    let t = next.t.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - config.b1.powi(t);
    let c2 = 1.0 - config.b2.powi(t);
    let mut out = Vec::with_capacity(g.len());
    for ((m, v), &gi) in next.m.iter_mut().zip(next.v.iter_mut()).zip(g) {
        *m = config.b1 * *m + (1.0 - config.b1) * gi;
        *v = config.b2 * *v + (1.0 - config.b2) * gi * gi;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        out.push(m_hat / (v_hat.sqrt() + config.eps_hat));
    }
    Ok((out, next))
}

/// Optimizer state for one parameter vector.
///
/// `primal` is what the network sees. `dual` holds the auxiliary variables
/// of the stable and projected-gradient variants and is `None` for the
/// closed-form updates. When present, `primal == P_beta(dual)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub projection: ProjectionKind,
    pub primal: Vec<f64>,
    pub dual: Option<Vec<f64>>,
    pub beta: f64,
    pub step: u64,
    pub adam: Option<AdamMoments>,
}

impl OptimizerState {
    /// State carrying dual variables; the primal point is their projection.
    pub fn from_dual(projection: ProjectionKind, dual: Vec<f64>, beta: f64) -> Result<Self> {
        ensure_finite("dual", &dual)?;
        let primal = Projection::new(projection, beta)?.project(&dual)?;
        Ok(Self {
            projection,
            primal,
            dual: Some(dual),
            beta,
            step: 0,
            adam: None,
        })
    }

    /// Primal-only state for the closed-form updates.
    pub fn from_primal(projection: ProjectionKind, mut primal: Vec<f64>, beta: f64) -> Result<Self> {
        ensure_beta(beta)?;
        ensure_finite("primal", &primal)?;
        Projection::new(projection, beta)?.clamp_interior(&mut primal);
        Ok(Self {
            projection,
            primal,
            dual: None,
            beta,
            step: 0,
            adam: None,
        })
    }

    pub fn with_adam(mut self) -> Self {
        self.adam = Some(AdamMoments::new(self.primal.len()));
        self
    }

    /// Change the annealing scalar, re-projecting the duals if present.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        ensure_beta(beta)?;
        self.beta = beta;
        if let Some(dual) = &self.dual {
            self.primal = Projection::new(self.projection, beta)?.project(dual)?;
        }
        Ok(())
    }

    /// `max |primal - P_beta(dual)|`, zero without duals.
    pub fn coherence_error(&self) -> Result<f64> {
        match &self.dual {
            None => Ok(0.0),
            Some(dual) => {
                let p = Projection::new(self.projection, self.beta)?.project(dual)?;
                Ok(p.iter()
                    .zip(&self.primal)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max))
            }
        }
    }

    fn require_dual(&self, op: &'static str) -> Result<&[f64]> {
        self.dual
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{op} needs dual variables in the state")))
    }

    fn check_grad(&self, g: &[f64], eta: f64) -> Result<()> {
        if g.len() != self.primal.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, state {}",
                g.len(),
                self.primal.len()
            )));
        }
        ensure_finite("g", g)?;
        check_eta(eta)
    }

    fn advanced(&self, primal: Vec<f64>, dual: Option<Vec<f64>>) -> Self {
        Self {
            projection: self.projection,
            primal,
            dual,
            beta: self.beta,
            step: self.step + 1,
            adam: self.adam.clone(),
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("step size must be positive, got {eta}")))
    }
}

fn clip_dual(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(-DUAL_CLIP, DUAL_CLIP);
    }
}

/// Closed-form MD step for the tanh mirror map:
/// `w' = (A e^{-2 beta eta g} - 1) / (A e^{-2 beta eta g} + 1)`, `A = (1 + w) / (1 - w)`.
pub fn md_tanh_step(w: &[f64], g: &[f64], eta: f64, beta: f64) -> Result<Vec<f64>> {
    if w.len() != g.len() {
        return Err(Error::Shape(format!("w has {} entries, g {}", w.len(), g.len())));
    }
    ensure_finite("g", g)?;
    ensure_beta(beta)?;
    check_eta(eta)?;
    if let Some(index) = w.iter().position(|v| !(v.abs() <= 1.0)) {
        return Err(Error::OutOfDomain {
            what: "md_tanh_step",
            index,
            value: w[index],
        });
    }
    let lo = -1.0 + BOUNDARY_DELTA;
    let hi = 1.0 - BOUNDARY_DELTA;
    Ok(w.iter()
        .zip(g)
        .map(|(&wi, &gi)| {
            let wi = wi.clamp(lo, hi);
            let a = (1.0 + wi) / (1.0 - wi) * (-2.0 * beta * eta * gi).exp();
            let next = if a.is_infinite() { hi } else { (a - 1.0) / (a + 1.0) };
            next.clamp(lo, hi)
        })
        .collect())
}

/// Exponentiated-gradient step on one simplex row:
/// `u'_l = u_l e^{-beta eta g_l} / sum_m u_m e^{-beta eta g_m}`.
pub fn md_softmax_step(u: &[f64], g: &[f64], eta: f64, beta: f64) -> Result<Vec<f64>> {
    md_softmax_step_rows(u, g, u.len(), eta, beta)
}

/// Row-wise exponentiated-gradient step on a flat `m x d` layout.
pub fn md_softmax_step_rows(u: &[f64], g: &[f64], d: usize, eta: f64, beta: f64) -> Result<Vec<f64>> {
    if u.len() != g.len() {
        return Err(Error::Shape(format!("u has {} entries, g {}", u.len(), g.len())));
    }
    if d < 2 || u.len() % d != 0 {
        return Err(Error::Shape(format!("{} entries are not rows of {d}", u.len())));
    }
    ensure_finite("g", g)?;
    ensure_beta(beta)?;
    check_eta(eta)?;
    if let Some(index) = u.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::OutOfDomain {
            what: "md_softmax_step",
            index,
            value: u[index],
        });
    }
    let mut out = Vec::with_capacity(u.len());
    for (ur, gr) in u.chunks(d).zip(g.chunks(d)) {
        let mut row = ur.to_vec();
        clamp_simplex_interior(&mut row, d);
        // log-domain weights, shifted by their max before exponentiating
        let logs: Vec<f64> = row
            .iter()
            .zip(gr)
            .map(|(ui, gi)| ui.ln() - beta * eta * gi)
            .collect();
        let max = logs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let start = out.len();
        let mut sum = 0.0;
        for l in logs {
            let e = (l - max).exp();
            sum += e;
            out.push(e);
        }
        for v in &mut out[start..] {
            *v /= sum;
        }
        clamp_simplex_interior(&mut out[start..], d);
    }
    Ok(out)
}

/// Closed-form MD step for the state's projection (tanh or softmax).
pub fn md_closed_step(state: &OptimizerState, g: &[f64], eta: f64) -> Result<OptimizerState> {
    state.check_grad(g, eta)?;
    let primal = match state.projection {
        ProjectionKind::Tanh => md_tanh_step(&state.primal, g, eta, state.beta)?,
        ProjectionKind::Softmax { d } => md_softmax_step_rows(&state.primal, g, d, eta, state.beta)?,
        other => {
            return Err(Error::UnsupportedProjection {
                op: "closed-form MD step",
                projection: other.to_string(),
            })
        }
    };
    Ok(state.advanced(primal, None))
}

/// Stable MD step: gradient descent on the duals followed by projection.
pub fn stable_md_step(state: &OptimizerState, g: &[f64], eta: f64) -> Result<OptimizerState> {
    state.check_grad(g, eta)?;
    let mut dual: Vec<f64> = state
        .require_dual("stable_md_step")?
        .iter()
        .zip(g)
        .map(|(x, gi)| x - eta * gi)
        .collect();
    clip_dual(&mut dual);
    let primal = Projection::new(state.projection, state.beta)?.project(&dual)?;
    Ok(state.advanced(primal, Some(dual)))
}

/// Gradient descent on the duals with the gradient taken through the projection.
pub fn gd_proj_step(state: &OptimizerState, g: &[f64], eta: f64) -> Result<OptimizerState> {
    state.check_grad(g, eta)?;
    let projection = Projection::new(state.projection, state.beta)?;
    if !state.projection.is_differentiable() {
        return Err(Error::UnsupportedProjection {
            op: "gd_proj_step",
            projection: state.projection.to_string(),
        });
    }
    let dual = state.require_dual("gd_proj_step")?;
    let pulled = projection.vjp(dual, g)?;
    let mut next: Vec<f64> = dual.iter().zip(&pulled).map(|(x, p)| x - eta * p).collect();
    clip_dual(&mut next);
    let primal = projection.project(&next)?;
    Ok(state.advanced(primal, Some(next)))
}

/// BinaryConnect: straight-through update of clipped latent weights, signed primal.
pub fn bc_ste_step(state: &OptimizerState, g: &[f64], eta: f64) -> Result<OptimizerState> {
    if state.projection != ProjectionKind::Sign {
        return Err(Error::UnsupportedProjection {
            op: "bc_ste_step",
            projection: state.projection.to_string(),
        });
    }
    state.check_grad(g, eta)?;
    let dual: Vec<f64> = state
        .require_dual("bc_ste_step")?
        .iter()
        .zip(g)
        .map(|(x, gi)| (x - eta * gi).clamp(-1.0, 1.0))
        .collect();
    let primal = sign_project(&dual);
    Ok(state.advanced(primal, Some(dual)))
}

/// Projected gradient descent onto the box `[lo, hi]`.
pub fn pgd_step(x: &[f64], g: &[f64], eta: f64, lo: f64, hi: f64) -> Vec<f64> {
    debug_assert!(lo < hi);
    x.iter()
        .zip(g)
        .map(|(xi, gi)| (xi - eta * gi).clamp(lo, hi))
        .collect()
}

/// Infimum of the dual magnitudes `gamma` for which `|x| >= gamma` guarantees
/// `1 - |tanh(B x)| < eps`: `atanh(1 - eps) / B`.
pub fn epsilon_gamma(cap: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    if !(cap.is_finite() && cap > 0.0) {
        return Err(Error::Domain(format!("B must be positive, got {cap}")));
    }
    Ok((1.0 - eps).atanh() / cap)
}

/// Which space the parameters are optimised in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Weights directly, in `conv(Q)^m`.
    W,
    /// Per-parameter label probabilities, `m` rows of `|Q|` entries.
    U,
}

/// Round a state exactly onto the quantization levels.
///
/// In w-space every weight goes to its nearest level; in u-space every
/// parameter takes the level with the largest probability (first on ties).
pub fn finalize_quantize(state: &OptimizerState, levels: &QuantLevels, space: Space) -> Vec<f64> {
    quantize_values(&state.primal, levels, space)
}

pub fn quantize_values(values: &[f64], levels: &QuantLevels, space: Space) -> Vec<f64> {
    match space {
        Space::W => values.iter().map(|&w| levels.nearest(w)).collect(),
        Space::U => values
            .chunks(levels.len())
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                levels.as_slice()[best]
            })
            .collect(),
    }
}

/// Clamp a w-space point into `[-1 + delta, 1 - delta]`.
pub fn clamp_unit_box(w: &mut [f64]) {
    clamp_box_interior(w, -1.0, 1.0);
}
