//! Convex test problems for checking mirror descent with an annealed mirror
//! map `Phi / beta_k` against its `O(1/sqrt(t))` guarantee, plus a numeric
//! proximal oracle for the closed-form updates.
//!
//! With `1 <= beta_k <= B`, the step `eta = (R / L) sqrt(2 rho / (B t))`
//! gives `f(mean x^k) - f(x*) <= R L sqrt(2 B / (rho t))`, where
//! `R^2 = sup Phi - Phi(x0)` over the feasible set and `x0 = argmin Phi`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mirror::{MirrorKind, MirrorMap};
use crate::optimizers::{anneal_beta, md_softmax_step_rows, md_tanh_step, pgd_step, BetaSchedule};
use crate::projections::{Projection, ProjectionKind};

/// Interior margin of the proximal oracle's search interval.
pub const ORACLE_MARGIN: f64 = 1e-10;
/// Final bracket width of the golden-section search.
pub const ORACLE_WIDTH: f64 = 1e-12;
/// Shrink applied to the feasible set when estimating constants on a grid.
pub const GRID_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Product of intervals `[lo, hi]^dim`.
    Box { lo: f64, hi: f64 },
    /// Probability simplex of dimension `dim`.
    Simplex,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    /// `|x - target|^2`.
    ShiftedSquare { target: Vec<f64> },
    /// `<c, x>`.
    Linear { c: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexProblem {
    pub id: String,
    pub dim: usize,
    pub domain: Domain,
    pub objective: Objective,
    pub optimum: Vec<f64>,
    /// Lipschitz constant on the domain, in the dual of the norm paired
    /// with the mirror map (Euclidean on boxes, sup-norm on the simplex).
    pub lipschitz: f64,
}

impl ConvexProblem {
    /// `(w - target)^2` on `[-1, 1]`.
    pub fn square_box(target: f64) -> Self {
        Self {
            id: "square_box".into(),
            dim: 1,
            domain: Domain::Box { lo: -1.0, hi: 1.0 },
            objective: Objective::ShiftedSquare {
                target: vec![target],
            },
            optimum: vec![target.clamp(-1.0, 1.0)],
            // |f'| = 2 |w - target| is largest at the far end of the box
            lipschitz: 2.0 * (1.0 + target.abs()),
        }
    }

    /// `<c, u>` on the simplex; the optimum is the cheapest vertex.
    pub fn linear_simplex(c: Vec<f64>) -> Self {
        let dim = c.len();
        let best = c
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v < c[b] { i } else { b });
        let mut optimum = vec![0.0; dim];
        optimum[best] = 1.0;
        let lipschitz = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self {
            id: format!("linear_simplex{dim}"),
            dim,
            domain: Domain::Simplex,
            objective: Objective::Linear { c },
            optimum,
            lipschitz,
        }
    }

    /// Shipped problems by id: `square_box` and `linear_simplex3`.
    pub fn by_id(id: &str) -> Result<Self> {
        match id {
            "square_box" => Ok(Self::square_box(0.9)),
            "linear_simplex3" => Ok(Self::linear_simplex(vec![0.3, 0.1, 0.5])),
            other => Err(Error::Config(format!("unknown convex problem `{other}`"))),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match &self.objective {
            Objective::ShiftedSquare { target } => {
                x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            Objective::Linear { c } => x.iter().zip(c).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.objective {
            Objective::ShiftedSquare { target } => {
                x.iter().zip(target).map(|(a, b)| 2.0 * (a - b)).collect()
            }
            Objective::Linear { c } => c.clone(),
        }
    }

    pub fn optimal_value(&self) -> f64 {
        self.value(&self.optimum)
    }

    fn check_map(&self, map: &MirrorMap) -> Result<()> {
        let ok = match (&self.domain, map.kind()) {
            (Domain::Box { lo, hi }, MirrorKind::TanhEntropy | MirrorKind::Numeric) => {
                *lo == -1.0 && *hi == 1.0
            }
            (Domain::Box { .. }, MirrorKind::Quadratic) => true,
            (Domain::Simplex, MirrorKind::NegativeEntropy) => {
                map.projection() == Some(ProjectionKind::Softmax { d: self.dim })
            }
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "mirror map {} does not match the domain of {}",
                map.name(),
                self.id
            )))
        }
    }

    /// `argmin Phi` over the feasible set, the prescribed starting point.
    pub fn initial_point(&self, map: &MirrorMap) -> Result<Vec<f64>> {
        self.check_map(map)?;
        Ok(match (&self.domain, map.kind()) {
            (Domain::Simplex, _) => vec![1.0 / self.dim as f64; self.dim],
            (Domain::Box { lo, hi }, MirrorKind::Quadratic) => vec![0.0f64.clamp(*lo, *hi); self.dim],
            (Domain::Box { .. }, _) => vec![map.base_point(); self.dim],
        })
    }
}

/// Constants entering the convergence bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constants {
    pub r: f64,
    pub lipschitz: f64,
    pub rho: f64,
    /// Grid spacing used for the estimate; zero for exact values.
    pub resolution: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceParams {
    pub r: f64,
    pub rho: f64,
    pub lipschitz: f64,
    pub cap: f64,
    pub t: u64,
    pub eta: f64,
}

impl ConvergenceParams {
    /// Parameters with the step size the bound prescribes.
    pub fn prescribed(constants: Constants, cap: f64, t: u64) -> Result<Self> {
        let Constants { r, lipschitz, rho, .. } = constants;
        if !(r > 0.0 && lipschitz > 0.0 && rho > 0.0 && cap >= 1.0 && t > 0) {
            return Err(Error::Config(format!(
                "invalid convergence constants R={r} L={lipschitz} rho={rho} B={cap} t={t}"
            )));
        }
        let eta = r / lipschitz * (2.0 * rho / (cap * t as f64)).sqrt();
        Ok(Self {
            r,
            rho,
            lipschitz,
            cap,
            t,
            eta,
        })
    }

    /// `R L sqrt(2 B / (rho t))`.
    pub fn bound(&self) -> f64 {
        self.r * self.lipschitz * (2.0 * self.cap / (self.rho * self.t as f64)).sqrt()
    }
}

/// Exact constants for the map/domain pairs where they are known in closed form.
pub fn analytic_constants(problem: &ConvexProblem, map: &MirrorMap) -> Result<Option<Constants>> {
    problem.check_map(map)?;
    let dim = problem.dim as f64;
    let r2 = match (&problem.domain, map.kind()) {
        // sup at the corners: Phi(+-1) = ln 2 per coordinate, Phi(0) = 0
        (Domain::Box { .. }, MirrorKind::TanhEntropy) => dim * std::f64::consts::LN_2,
        // sup at a vertex (-1), minimum at the barycentre (-ln d - 1)
        (Domain::Simplex, MirrorKind::NegativeEntropy) => dim.ln(),
        (Domain::Box { lo, hi }, MirrorKind::Quadratic) => {
            dim * 0.5 * lo.abs().max(hi.abs()).powi(2)
        }
        _ => return Ok(None),
    };
    Ok(Some(Constants {
        r: r2.sqrt(),
        lipschitz: problem.lipschitz,
        rho: 1.0,
        resolution: 0.0,
    }))
}

/// Grid estimates of `R`, `L` and `rho` on a slightly shrunk feasible set.
///
/// `rho` is the smallest curvature of `Phi` (second differences) along
/// coordinate directions on boxes, and along edge directions normalised in
/// the l1 norm on the simplex.
pub fn estimate_constants(problem: &ConvexProblem, map: &MirrorMap) -> Result<Constants> {
    problem.check_map(map)?;
    if problem.dim == 0 || problem.dim > 3 {
        return Err(Error::Config(format!(
            "grid estimation supports 1..=3 dimensions, got {}",
            problem.dim
        )));
    }
    let x0 = problem.initial_point(map)?;
    let phi0 = map.value(&x0, 1.0)?;
    let points = grid_points(problem);
    let resolution = match &problem.domain {
        Domain::Box { lo, hi } => (hi - lo - 2.0 * GRID_MARGIN) / (box_steps(problem.dim) as f64),
        Domain::Simplex => 1.0 / simplex_steps(problem.dim) as f64,
    };
    let h = 1e-4;
    let mut sup = f64::NEG_INFINITY;
    let mut lip = 0.0f64;
    let mut rho = f64::INFINITY;
    for x in &points {
        sup = sup.max(map.value(x, 1.0)?);
        let g = problem.gradient(x);
        lip = lip.max(match problem.domain {
            Domain::Box { .. } => g.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Domain::Simplex => g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        });
        let center = map.value(x, 1.0)?;
        let directions: Vec<Vec<f64>> = match problem.domain {
            Domain::Box { .. } => (0..problem.dim)
                .map(|i| {
                    let mut e = vec![0.0; problem.dim];
                    e[i] = 1.0;
                    e
                })
                .collect(),
            Domain::Simplex => {
                let mut dirs = Vec::new();
                for i in 0..problem.dim {
                    for j in (i + 1)..problem.dim {
                        let mut e = vec![0.0; problem.dim];
                        e[i] = 0.5;
                        e[j] = -0.5;
                        dirs.push(e);
                    }
                }
                dirs
            }
        };
        for dir in directions {
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
            let curv = (map.value(&plus, 1.0)? - 2.0 * center + map.value(&minus, 1.0)?) / (h * h);
            rho = rho.min(curv);
        }
    }
    Ok(Constants {
        r: (sup - phi0).max(0.0).sqrt(),
        lipschitz: lip,
        rho,
        resolution,
    })
}

fn box_steps(dim: usize) -> usize {
    match dim {
        1 => 2000,
        2 => 200,
        _ => 40,
    }
}

fn simplex_steps(dim: usize) -> usize {
    match dim {
        1 | 2 => 2000,
        _ => 200,
    }
}

fn grid_points(problem: &ConvexProblem) -> Vec<Vec<f64>> {
    match problem.domain {
        Domain::Box { lo, hi } => {
            let n = box_steps(problem.dim);
            let a = lo + GRID_MARGIN;
            let step = (hi - lo - 2.0 * GRID_MARGIN) / n as f64;
            let axis: Vec<f64> = (0..=n).map(|i| a + step * i as f64).collect();
            let mut points = vec![Vec::new()];
            for _ in 0..problem.dim {
                points = points
                    .into_iter()
                    .flat_map(|p| {
                        axis.iter().map(move |&v| {
                            let mut q = p.clone();
                            q.push(v);
                            q
                        })
                    })
                    .collect();
            }
            points
        }
        Domain::Simplex => {
            let n = simplex_steps(problem.dim);
            let d = problem.dim;
            // shrink the simplex towards its barycentre so every entry is >= margin
            let shrink = 1.0 - d as f64 * GRID_MARGIN;
            let mut points = Vec::new();
            let mut counts = vec![0usize; d];
            enumerate_compositions(n, d, 0, &mut counts, &mut |c| {
                points.push(
                    c.iter()
                        .map(|&k| GRID_MARGIN + shrink * k as f64 / n as f64)
                        .collect(),
                );
            });
            points
        }
    }
}

fn enumerate_compositions(
    remaining: usize,
    d: usize,
    idx: usize,
    counts: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    if idx == d - 1 {
        counts[idx] = remaining;
        emit(counts);
        return;
    }
    for k in 0..=remaining {
        counts[idx] = k;
        enumerate_compositions(remaining - k, d, idx + 1, counts, emit);
    }
}

/// Minimise `eta g x + D_{Phi_beta}(x, x_prev)` over a scalar interval by
/// golden-section search.
///
/// Box maps search `(-1, 1)`; the quadratic map searches the closed box
/// `[-1, 1]`. The negative-entropy map must have `d = 2`: `x` is then the
/// first coordinate of a point on the simplex edge and `g` the difference
/// `g_0 - g_1` of the two coordinate gradients.
pub fn numeric_prox_oracle(map: &MirrorMap, x_prev: f64, g: f64, eta: f64, beta: f64) -> Result<f64> {
    let (lo, hi) = match map.kind() {
        MirrorKind::TanhEntropy | MirrorKind::Numeric => (-1.0 + ORACLE_MARGIN, 1.0 - ORACLE_MARGIN),
        MirrorKind::Quadratic => (-1.0, 1.0),
        MirrorKind::NegativeEntropy => {
            if map.projection() != Some(ProjectionKind::Softmax { d: 2 }) {
                return Err(Error::Config(
                    "the proximal oracle handles the simplex edge (d = 2) only".into(),
                ));
            }
            (ORACLE_MARGIN, 1.0 - ORACLE_MARGIN)
        }
    };
    let lift = |x: f64| -> Vec<f64> {
        if map.kind() == MirrorKind::NegativeEntropy {
            vec![x, 1.0 - x]
        } else {
            vec![x]
        }
    };
    let prev = lift(x_prev);
    let objective = |x: f64| -> Result<f64> {
        Ok(eta * g * (x - x_prev) + map.bregman(&lift(x), &prev, beta)?)
    };
    golden_section(objective, lo, hi, ORACLE_WIDTH)
}

/// Golden-section minimisation of a unimodal function on `[lo, hi]`.
pub fn golden_section<F>(f: F, lo: f64, hi: f64, width: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > width {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
        if c >= d {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Mirror-descent iterates `x^0 .. x^t` with exact gradients and annealed beta.
pub fn md_convex_iterates(
    problem: &ConvexProblem,
    map: &MirrorMap,
    schedule: &BetaSchedule,
    eta: f64,
    t: u64,
) -> Result<Vec<Vec<f64>>> {
    schedule.validate()?;
    let mut x = problem.initial_point(map)?;
    let mut iterates = Vec::with_capacity(t as usize + 1);
    iterates.push(x.clone());
    for k in 0..t {
        let beta = anneal_beta(schedule, k);
        let g = problem.gradient(&x);
        x = match (map.kind(), &problem.domain) {
            (MirrorKind::TanhEntropy, _) => md_tanh_step(&x, &g, eta, beta)?,
            (MirrorKind::NegativeEntropy, _) => md_softmax_step_rows(&x, &g, problem.dim, eta, beta)?,
            (MirrorKind::Quadratic, Domain::Box { lo, hi }) => {
                // grad Phi_beta = x / beta, Bregman projection = Euclidean clip
                let scaled: Vec<f64> = g.iter().map(|v| beta * v).collect();
                pgd_step(&x, &scaled, eta, *lo, *hi)
            }
            (MirrorKind::Numeric, _) => {
                let p = Projection::new(map.projection().expect("numeric map"), beta)?;
                let mut interior = x.clone();
                p.clamp_interior(&mut interior);
                let dual: Vec<f64> = p
                    .inverse(&interior)?
                    .iter()
                    .zip(&g)
                    .map(|(d, gi)| d - eta * gi)
                    .collect();
                p.project(&dual)?
            }
            _ => unreachable!("map/domain pairing checked by initial_point"),
        };
        iterates.push(x.clone());
    }
    Ok(iterates)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexReport {
    pub problem: String,
    pub map: String,
    pub params: ConvergenceParams,
    /// `f(mean_{k<t} x^k) - f(x*)`.
    pub gap: f64,
    pub bound: f64,
    /// Beta used for the last step.
    pub final_beta: f64,
    /// Running-average gap after each of the `t` iterates.
    pub trajectory: Vec<f64>,
}

impl ConvexReport {
    pub fn within_bound(&self) -> bool {
        self.gap <= self.bound
    }
}

/// Run `t` mirror-descent steps and compare the averaged-iterate gap with the bound.
pub fn run_md_convex(
    problem: &ConvexProblem,
    map: &MirrorMap,
    schedule: &BetaSchedule,
    params: &ConvergenceParams,
) -> Result<ConvexReport> {
    schedule.validate()?;
    if schedule.cap > params.cap || schedule.beta0 < 1.0 {
        return Err(Error::Config(format!(
            "schedule may reach beta = {} above the cap B = {}",
            schedule.cap, params.cap
        )));
    }
    let iterates = md_convex_iterates(problem, map, schedule, params.eta, params.t)?;
    let fstar = problem.optimal_value();
    let mut sum = vec![0.0; problem.dim];
    let mut trajectory = Vec::with_capacity(params.t as usize);
    for (k, x) in iterates.iter().take(params.t as usize).enumerate() {
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / (k + 1) as f64).collect();
        trajectory.push(problem.value(&mean) - fstar);
    }
    let gap = *trajectory.last().unwrap_or(&f64::NAN);
    Ok(ConvexReport {
        problem: problem.id.clone(),
        map: map.name(),
        params: *params,
        gap,
        bound: params.bound(),
        final_beta: anneal_beta(schedule, params.t.saturating_sub(1)),
        trajectory,
    })
}

/// Write one row `t,gap,bound,beta,eta` per report.
pub fn write_convex_csv(path: &Path, reports: &[ConvexReport]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t,gap,bound,beta,eta")?;
    for r in reports {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            r.params.t, r.gap, r.bound, r.final_beta, r.params.eta
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Mirror map for a problem by id: `tanh_entropy`, `negative_entropy`,
/// `quadratic`, `numeric_tanh` or `numeric_shifted_tanh`.
pub fn map_by_id(id: &str, problem: &ConvexProblem) -> Result<MirrorMap> {
    let map = match id {
        "tanh_entropy" => MirrorMap::tanh_entropy(),
        "negative_entropy" => MirrorMap::negative_entropy(problem.dim),
        "quadratic" => MirrorMap::quadratic(),
        "numeric_tanh" => MirrorMap::numeric(ProjectionKind::Tanh)?,
        "numeric_shifted_tanh" => MirrorMap::numeric(ProjectionKind::ShiftedTanh)?,
        other => return Err(Error::Config(format!("unknown mirror map `{other}`"))),
    };
    problem.check_map(&map)?;
    Ok(map)
}

/// One problem/map pair run for every cap and every iteration budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexSuite {
    pub problem: String,
    pub map: String,
    #[serde(default = "default_caps")]
    pub caps: Vec<f64>,
    #[serde(default = "default_t_list")]
    pub t_list: Vec<u64>,
    /// Beta grows by this factor every `beta_interval` steps up to the cap.
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default = "default_beta_interval")]
    pub beta_interval: u64,
}

fn default_caps() -> Vec<f64> {
    vec![1.0, 100.0]
}

fn default_t_list() -> Vec<u64> {
    vec![10, 100, 1000, 10000]
}

fn default_beta_scale() -> f64 {
    1.1
}

fn default_beta_interval() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexConfig {
    #[serde(default = "default_suites")]
    pub suites: Vec<ConvexSuite>,
}

impl Default for ConvexConfig {
    fn default() -> Self {
        Self {
            suites: default_suites(),
        }
    }
}

fn default_suites() -> Vec<ConvexSuite> {
    let suite = |problem: &str, map: &str| ConvexSuite {
        problem: problem.into(),
        map: map.into(),
        caps: default_caps(),
        t_list: default_t_list(),
        beta_scale: default_beta_scale(),
        beta_interval: default_beta_interval(),
    };
    vec![
        suite("square_box", "tanh_entropy"),
        suite("linear_simplex3", "negative_entropy"),
    ]
}

impl ConvexConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = crate::error::parse_json(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for suite in &self.suites {
            let problem = ConvexProblem::by_id(&suite.problem)?;
            map_by_id(&suite.map, &problem)?;
            if suite.caps.is_empty() || suite.t_list.is_empty() {
                return Err(Error::Config(format!(
                    "suite {}/{} needs caps and t_list",
                    suite.problem, suite.map
                )));
            }
            if let Some(cap) = suite.caps.iter().find(|c| !(c.is_finite() && **c >= 1.0)) {
                return Err(Error::Config(format!("cap B = {cap} must be >= 1")));
            }
            if suite.t_list.contains(&0) {
                return Err(Error::Config("t_list entries must be positive".into()));
            }
            schedule_for(suite, suite.caps[0]).validate()?;
        }
        Ok(())
    }

    /// Every (suite, cap) combination, in config order.
    pub fn jobs(&self) -> Vec<ConvexJob> {
        self.suites
            .iter()
            .flat_map(|s| {
                s.caps.iter().map(move |&cap| ConvexJob {
                    suite: s.clone(),
                    cap,
                })
            })
            .collect()
    }
}

fn schedule_for(suite: &ConvexSuite, cap: f64) -> BetaSchedule {
    BetaSchedule {
        beta0: 1.0,
        scale: suite.beta_scale,
        interval: suite.beta_interval,
        cap,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexJob {
    pub suite: ConvexSuite,
    pub cap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexJobResult {
    pub job: ConvexJob,
    pub constants: Constants,
    pub reports: Vec<ConvexReport>,
}

impl ConvexJobResult {
    pub fn passed(&self) -> bool {
        self.reports.iter().all(ConvexReport::within_bound)
    }

    /// File name of this job's CSV.
    pub fn file_name(&self) -> String {
        format!(
            "convex_{}_{}_B{}.csv",
            self.job.suite.problem, self.job.suite.map, self.job.cap
        )
    }
}

impl ConvexJob {
    /// Run one cap of a suite for each budget in its `t_list`.
    pub fn run(&self) -> Result<ConvexJobResult> {
        let problem = ConvexProblem::by_id(&self.suite.problem)?;
        let map = map_by_id(&self.suite.map, &problem)?;
        let constants = match analytic_constants(&problem, &map)? {
            Some(c) => c,
            None => estimate_constants(&problem, &map)?,
        };
        let schedule = schedule_for(&self.suite, self.cap);
        let reports = self
            .suite
            .t_list
            .iter()
            .map(|&t| {
                let params = ConvergenceParams::prescribed(constants, self.cap, t)?;
                run_md_convex(&problem, &map, &schedule, &params)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ConvexJobResult {
            job: self.clone(),
            constants,
            reports,
        })
    }
}

/// Summary table: one row per (problem, map, B, t).
pub fn convex_summary_csv(results: &[ConvexJobResult]) -> String {
    let mut out = String::from("problem,map,B,t,R,L,rho,eta,gap,bound,within_bound\n");
    for res in results {
        for r in &res.reports {
            out.push_str(&format!(
                "{},{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
                res.job.suite.problem,
                res.job.suite.map,
                res.job.cap,
                r.params.t,
                r.params.r,
                r.params.lipschitz,
                r.params.rho,
                r.params.eta,
                r.gap,
                r.bound,
                r.within_bound()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_problems() {
        let p = ConvexProblem::by_id("square_box").unwrap();
        assert_eq!(p.lipschitz, 3.8);
        assert_eq!(p.optimal_value(), 0.0);
        let s = ConvexProblem::by_id("linear_simplex3").unwrap();
        assert_eq!(s.optimum, vec![0.0, 1.0, 0.0]);
        assert_eq!(s.lipschitz, 0.5);
        assert!(ConvexProblem::by_id("nope").is_err());
    }

    #[test]
    fn map_domain_mismatch_is_rejected() {
        let p = ConvexProblem::square_box(0.9);
        assert!(p.initial_point(&MirrorMap::negative_entropy(3)).is_err());
        let s = ConvexProblem::linear_simplex(vec![0.3, 0.1, 0.5]);
        assert!(s.initial_point(&MirrorMap::tanh_entropy()).is_err());
        assert!(s.initial_point(&MirrorMap::negative_entropy(2)).is_err());
    }

    #[test]
    fn prox_oracle_zero_gradient_returns_previous_point() {
        let m = MirrorMap::tanh_entropy();
        let x = numeric_prox_oracle(&m, 0.4, 0.0, 0.5, 3.0).unwrap();
        assert!((x - 0.4).abs() < 1e-6);
    }

    #[test]
    fn prox_oracle_tanh_example() {
        let x = numeric_prox_oracle(&MirrorMap::tanh_entropy(), 0.0, 1.0, 1.0, 1.0).unwrap();
        assert!((x + 0.761_594_155_955_764_9).abs() < 1e-6);
    }

    #[test]
    fn prox_oracle_quadratic_hits_boundary() {
        let x = numeric_prox_oracle(&MirrorMap::quadratic(), 0.95, -1.0, 1.0, 1.0).unwrap();
        assert!((x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prescribed_step_and_bound() {
        let c = Constants {
            r: 2f64.ln().sqrt(),
            lipschitz: 3.8,
            rho: 1.0,
            resolution: 0.0,
        };
        let a = ConvergenceParams::prescribed(c, 1.0, 100).unwrap();
        let b = ConvergenceParams::prescribed(c, 100.0, 100).unwrap();
        assert!((b.bound() / a.bound() - 10.0).abs() < 1e-12);
        assert!((a.eta - c.r / 3.8 * (2.0f64 / 100.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn schedule_above_cap_is_rejected() {
        let p = ConvexProblem::square_box(0.9);
        let m = MirrorMap::tanh_entropy();
        let c = analytic_constants(&p, &m).unwrap().unwrap();
        let params = ConvergenceParams::prescribed(c, 10.0, 10).unwrap();
        let sched = BetaSchedule {
            beta0: 1.0,
            scale: 2.0,
            interval: 1,
            cap: 100.0,
        };
        assert!(matches!(
            run_md_convex(&p, &m, &sched, &params),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quadratic_estimate_is_exact() {
        let p = ConvexProblem::square_box(0.9);
        let c = estimate_constants(&p, &MirrorMap::quadratic()).unwrap();
        assert!((c.rho - 1.0).abs() < 1e-6);
        assert!((c.lipschitz - 3.8).abs() < 1e-2);
    }

    #[test]
    fn default_suite_stays_within_bound() {
        let config = ConvexConfig::default();
        let jobs = config.jobs();
        assert_eq!(jobs.len(), 4);
        for job in jobs {
            let res = job.run().unwrap();
            assert_eq!(res.reports.len(), 4);
            assert!(res.passed(), "{:?}", res.file_name());
        }
    }

    #[test]
    fn convex_config_parsing() {
        assert!(ConvexConfig::from_json(r#"{"suites": [{"problem": "square_box", "map": "tanh_entropy", "extra": 1}]}"#).is_err());
        assert!(ConvexConfig::from_json(r#"{"suites": [{"problem": "square_box", "map": "negative_entropy"}]}"#).is_err());
        assert!(ConvexConfig::from_json(r#"{"suites": [{"problem": "cube", "map": "quadratic"}]}"#).is_err());
        let c = ConvexConfig::from_json(r#"{"suites": [{"problem": "square_box", "map": "quadratic", "t_list": [5]}]}"#).unwrap();
        assert_eq!(c.suites[0].caps, vec![1.0, 100.0]);
        assert_eq!(ConvexConfig::from_json("{}").unwrap(), ConvexConfig::default());
    }
}
