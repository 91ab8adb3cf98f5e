//! Quantized training loops over the small dense network.
//!
//! Every iteration samples a minibatch, evaluates the gradient at the primal
//! point the network sees, optionally preconditions it with Adam, takes one
//! optimizer step and anneals `beta`. Metrics are logged every
//! `log_interval` iterations. The state with the best held-out accuracy is
//! kept and rounded onto the quantization levels at the end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{backward, cross_entropy, generate_dataset, Batch, Dataset, DatasetKind, MlpModel};
use crate::optimizers::{
    adam_precondition, bc_ste_step, gd_proj_step, md_closed_step, pgd_step, quantize_values,
    stable_md_step, AdamConfig, AdamMoments, BetaSchedule, OptimizerState, Space,
    StepSizeSchedule,
};
use crate::projections::{ProjectionKind, QuantLevels};

/// Half-width of the uniform initialisation of duals and unconstrained weights.
pub const INIT_SCALE: f64 = 0.05;
/// Distance to a level under which a parameter counts as quantized.
pub const QUANTIZED_TOL: f64 = 1e-2;

pub const CSV_HEADER: &str =
    "iter,epoch,train_loss,train_acc,test_acc,beta,eta,frac_quantized,grad_norm,quantized_test_acc";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerName {
    /// Closed-form MD (tanh in w-space, EGD in u-space).
    MdClosed,
    /// Dual gradient step followed by projection.
    MdStable,
    /// Dual gradient step with the gradient pulled back through the projection.
    GdProj,
    /// BinaryConnect with the straight-through estimator.
    BcSte,
    /// Projected gradient descent onto the level box.
    Pgd,
    /// Unconstrained float network.
    FloatRef,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionName {
    Tanh,
    ShiftedTanh,
    Softmax,
    Sign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub noise: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::XorBlobs,
            n: 2000,
            noise: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub space: Space,
    pub projection: ProjectionName,
    pub optimizer: OptimizerName,
    /// Quantization levels; empty means the projection's own levels.
    pub levels: Vec<f64>,
    pub lr: StepSizeSchedule,
    pub beta: BetaSchedule,
    pub use_adam: bool,
    pub adam: AdamConfig,
    pub epochs: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Layer widths, input first.
    pub arch: Vec<usize>,
    pub log_interval: u64,
    /// Directory for `train.csv` and `summary.json`.
    pub output: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            space: Space::W,
            projection: ProjectionName::Tanh,
            optimizer: OptimizerName::MdStable,
            levels: Vec::new(),
            lr: StepSizeSchedule::default(),
            beta: BetaSchedule::default(),
            use_adam: true,
            adam: AdamConfig::default(),
            epochs: 100,
            batch_size: 32,
            seed: 0,
            dataset: DatasetSpec::default(),
            arch: vec![2, 16, 16, 2],
            log_interval: 50,
            output: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = crate::error::parse_json(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Quantization levels after applying the projection default.
    pub fn quant_levels(&self) -> Result<QuantLevels> {
        if !self.levels.is_empty() {
            return QuantLevels::new(self.levels.clone());
        }
        Ok(match self.projection {
            ProjectionName::ShiftedTanh => QuantLevels::ternary(),
            _ => QuantLevels::binary(),
        })
    }

    pub fn projection_kind(&self) -> Result<ProjectionKind> {
        Ok(match self.projection {
            ProjectionName::Tanh => ProjectionKind::Tanh,
            ProjectionName::ShiftedTanh => ProjectionKind::ShiftedTanh,
            ProjectionName::Sign => ProjectionKind::Sign,
            ProjectionName::Softmax => ProjectionKind::Softmax {
                d: self.quant_levels()?.len(),
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        use OptimizerName::*;
        self.lr.validate()?;
        self.beta.validate()?;
        if self.use_adam {
            self.adam.validate()?;
        }
        if self.epochs == 0 || self.batch_size == 0 || self.log_interval == 0 {
            return Err(Error::Config(
                "epochs, batch_size and log_interval must be positive".into(),
            ));
        }
        let levels = self.quant_levels()?;
        let kind = self.projection_kind()?;
        let quantized = self.optimizer != FloatRef;
        if quantized && (self.space == Space::U) != (self.projection == ProjectionName::Softmax) {
            return Err(Error::Config(
                "u-space runs use the softmax projection and softmax runs use u-space".into(),
            ));
        }
        if self.optimizer == BcSte && self.projection != ProjectionName::Sign {
            return Err(Error::Config("bc_ste needs projection \"sign\"".into()));
        }
        if self.projection == ProjectionName::Sign && matches!(self.optimizer, MdClosed | MdStable | GdProj) {
            return Err(Error::Config(format!(
                "{:?} needs a differentiable projection, not sign",
                self.optimizer
            )));
        }
        if self.optimizer == MdClosed && self.projection == ProjectionName::ShiftedTanh {
            return Err(Error::Config(
                "md_closed has no closed form for shifted_tanh; use md_stable".into(),
            ));
        }
        if matches!(self.optimizer, Pgd | FloatRef) && self.space == Space::U {
            return Err(Error::Config(format!("{:?} runs in w-space only", self.optimizer)));
        }
        if quantized && self.space == Space::W && self.optimizer != Pgd && kind.levels() != levels {
            return Err(Error::Config(format!(
                "levels {:?} do not match projection {kind} (levels {:?})",
                levels.as_slice(),
                kind.levels().as_slice()
            )));
        }
        if self.arch.len() < 2 || self.arch.contains(&0) {
            return Err(Error::Config(format!("arch {:?} needs two or more positive widths", self.arch)));
        }
        if self.arch[0] != 2 || self.arch[self.arch.len() - 1] != self.dataset.kind.classes() {
            return Err(Error::Config(format!(
                "arch {:?} must start at 2 inputs and end at {} classes",
                self.arch,
                self.dataset.kind.classes()
            )));
        }
        if self.dataset.n < 10 {
            return Err(Error::Config("dataset.n must be >= 10".into()));
        }
        Ok(())
    }
}

/// Binds `m` parameters to `m x d` label probabilities with `w = u q`.
#[derive(Clone, Debug, PartialEq)]
pub struct USpaceBinding {
    pub params: usize,
    pub levels: QuantLevels,
}

pub fn u_space_bind(params: usize, levels: &QuantLevels) -> USpaceBinding {
    USpaceBinding {
        params,
        levels: levels.clone(),
    }
}

impl USpaceBinding {
    pub fn d(&self) -> usize {
        self.levels.len()
    }

    /// Uniform `1/d` rows.
    pub fn uniform(&self) -> Vec<f64> {
        vec![1.0 / self.d() as f64; self.params * self.d()]
    }

    /// `w_j = sum_l u_{j:l} q_l`.
    pub fn materialize(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u.len())?;
        let q = self.levels.as_slice();
        Ok(u.chunks(q.len())
            .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// `g_{j:l} = (dL/dw_j) q_l`.
    pub fn chain(&self, grad_w: &[f64]) -> Result<Vec<f64>> {
        if grad_w.len() != self.params {
            return Err(Error::Shape(format!(
                "weight gradient has {} entries, binding {}",
                grad_w.len(),
                self.params
            )));
        }
        let q = self.levels.as_slice();
        Ok(grad_w
            .iter()
            .flat_map(|g| q.iter().map(move |ql| g * ql))
            .collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.params * self.d() {
            return Err(Error::Shape(format!(
                "u has {len} entries, expected {} x {}",
                self.params,
                self.d()
            )));
        }
        Ok(())
    }
}

/// Fraction of parameters within `tol` of a level (w-space) or with a
/// largest label probability above `1 - tol` (u-space).
pub fn frac_quantized(params: &[f64], levels: &QuantLevels, tol: f64, space: Space) -> f64 {
    let (hits, total) = match space {
        Space::W => (
            params.iter().filter(|&&w| levels.distance(w) < tol).count(),
            params.len(),
        ),
        Space::U => {
            let rows = params.chunks(levels.len());
            let total = rows.len();
            let hits = rows
                .filter(|row| row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v)) > 1.0 - tol)
                .count();
            (hits, total)
        }
    };
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iter: u64,
    pub epoch: u64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub beta: f64,
    pub eta: f64,
    pub frac_quantized: f64,
    pub grad_norm: f64,
    pub quantized_test_acc: f64,
}

impl TrainRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iter,
            self.epoch,
            self.train_loss,
            self.train_acc,
            self.test_acc,
            self.beta,
            self.eta,
            self.frac_quantized,
            self.grad_norm,
            self.quantized_test_acc
        )
    }
}

pub fn records_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelCount {
    pub level: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub config: TrainConfig,
    pub iterations: u64,
    pub best_iter: u64,
    /// Held-out accuracy of the selected state before rounding.
    pub float_test_acc: f64,
    pub quantized_train_acc: f64,
    pub quantized_test_acc: f64,
    /// Fraction of final parameters exactly on a level.
    pub final_frac_quantized: f64,
    pub max_coherence_error: f64,
    /// Counts per level, or `null` for the float reference.
    pub histogram: Option<Vec<LevelCount>>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Network with the final parameters: rounded for quantized optimizers,
    /// the selected float state otherwise.
    pub model: MlpModel,
    pub records: Vec<TrainRecord>,
    pub summary: TrainSummary,
    /// Live optimizer state after the last iteration.
    pub final_state: OptimizerState,
}

impl TrainOutcome {
    /// Write `train.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("train.csv"), records_csv(&self.records))?;
        let mut json = serde_json::to_string_pretty(&self.summary)?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        Ok(())
    }
}

struct Evaluator<'a> {
    data: &'a Dataset,
    dims: Vec<usize>,
    train: (Batch, Vec<usize>),
    test: (Batch, Vec<usize>),
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a Dataset, dims: &[usize]) -> Self {
        Self {
            data,
            dims: dims.to_vec(),
            train: data.gather(&data.train),
            test: data.gather(&data.test),
        }
    }

    fn model(&self, weights: &[f64]) -> Result<MlpModel> {
        MlpModel::with_params(&self.dims, weights.to_vec())
    }

    fn loss_and_acc(&self, weights: &[f64]) -> Result<(f64, f64)> {
        let model = self.model(weights)?;
        let (batch, labels) = &self.train;
        let (logits, _) = model.forward(batch)?;
        let (loss, _) = cross_entropy(&logits, self.data.classes, labels)?;
        Ok((loss, model.accuracy(batch, labels)?))
    }

    fn test_acc(&self, weights: &[f64]) -> Result<f64> {
        self.model(weights)?.accuracy(&self.test.0, &self.test.1)
    }

    fn train_acc(&self, weights: &[f64]) -> Result<f64> {
        self.model(weights)?.accuracy(&self.train.0, &self.train.1)
    }
}

fn dual_init(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE)).collect()
}

fn initial_state(config: &TrainConfig, rng: &mut ChaCha8Rng, params: usize, levels: &QuantLevels) -> Result<OptimizerState> {
    use OptimizerName::*;
    let kind = config.projection_kind()?;
    let beta = config.beta.beta_at(0);
    let len = match config.space {
        Space::W => params,
        Space::U => params * levels.len(),
    };
    // u-space rows start near 1/d; exactly uniform rows give w = 0 everywhere,
    // which a ReLU network cannot leave
    let x0 = dual_init(rng, len);
    match config.optimizer {
        MdClosed | MdStable | GdProj | BcSte => {
            let state = OptimizerState::from_dual(kind, x0, beta)?;
            if config.optimizer == MdClosed {
                OptimizerState::from_primal(kind, state.primal, beta)
            } else {
                Ok(state)
            }
        }
        Pgd | FloatRef => Ok(OptimizerState {
            projection: kind,
            primal: x0,
            dual: None,
            beta,
            step: 0,
            adam: None,
        }),
    }
}

/// Run one training job described by `config`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let levels = config.quant_levels()?;
    let data = generate_dataset(config.dataset.kind, config.dataset.n, config.dataset.noise, config.seed)?;
    let shell = MlpModel::new(&config.arch)?;
    let params = shell.num_params();
    let eval = Evaluator::new(&data, &config.arch);
    let bind = u_space_bind(params, &levels);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut state = initial_state(config, &mut rng, params, &levels)?;
    let mut moments = AdamMoments::new(state.primal.len());

    let weights_of = |primal: &[f64]| -> Result<Vec<f64>> {
        match config.space {
            Space::W => Ok(primal.to_vec()),
            Space::U => bind.materialize(primal),
        }
    };
    let quantize = |primal: &[f64]| quantize_values(primal, &levels, config.space);
    let box_lo = levels.min();
    let box_hi = levels.max();

    let mut order = data.train.clone();
    let per_epoch = order.len().div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs;
    let mut records = Vec::new();
    let mut best: Option<(f64, u64, Vec<f64>, f64)> = None;
    let mut max_coherence: f64 = 0.0;
    let mut k: u64 = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let beta = config.beta.beta_at(k);
            if beta != state.beta {
                state.set_beta(beta)?;
            }
            let eta = config.lr.eta_at(k);

            let weights = weights_of(&state.primal)?;
            let model = MlpModel::with_params(&config.arch, weights)?;
            let (batch, labels) = data.gather(chunk);
            let (logits, cache) = model.forward(&batch)?;
            let (loss, dlogits) = cross_entropy(&logits, data.classes, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at iteration {k}")));
            }
            let grad_w = backward(&model, &cache, &dlogits)?.flat;
            let grad = match config.space {
                Space::W => grad_w,
                Space::U => bind.chain(&grad_w)?,
            };
            let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let direction = if config.use_adam {
                let (d, next) = adam_precondition(&grad, &moments, &config.adam)?;
                moments = next;
                d
            } else {
                grad
            };

            state = match config.optimizer {
                OptimizerName::MdClosed => md_closed_step(&state, &direction, eta)?,
                OptimizerName::MdStable => stable_md_step(&state, &direction, eta)?,
                OptimizerName::GdProj => gd_proj_step(&state, &direction, eta)?,
                OptimizerName::BcSte => bc_ste_step(&state, &direction, eta)?,
                OptimizerName::Pgd => {
                    let primal = pgd_step(&state.primal, &direction, eta, box_lo, box_hi);
                    OptimizerState { primal, step: state.step + 1, ..state }
                }
                OptimizerName::FloatRef => {
                    let primal = state.primal.iter().zip(&direction).map(|(w, d)| w - eta * d).collect();
                    OptimizerState { primal, step: state.step + 1, ..state }
                }
            };
            if state.primal.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(format!("non-finite parameters after iteration {k}")));
            }
            k += 1;

            if k % config.log_interval == 0 || k == total {
                let weights = weights_of(&state.primal)?;
                let (train_loss, train_acc) = eval.loss_and_acc(&weights)?;
                if !train_loss.is_finite() {
                    return Err(Error::Diverged(format!("train loss {train_loss} at iteration {k}")));
                }
                let test_acc = eval.test_acc(&weights)?;
                let quantized_test_acc = eval.test_acc(&quantize(&state.primal))?;
                max_coherence = max_coherence.max(state.coherence_error()?);
                let score = if config.optimizer == OptimizerName::FloatRef {
                    test_acc
                } else {
                    quantized_test_acc
                };
                // later states win ties
                if best.as_ref().is_none_or(|b| score >= b.0) {
                    best = Some((score, k, state.primal.clone(), test_acc));
                }
                records.push(TrainRecord {
                    iter: k,
                    epoch,
                    train_loss,
                    train_acc,
                    test_acc,
                    beta,
                    eta,
                    frac_quantized: frac_quantized(&state.primal, &levels, QUANTIZED_TOL, config.space),
                    grad_norm,
                    quantized_test_acc,
                });
            }
        }
    }

    let (_, best_iter, best_primal, float_test_acc) =
        best.ok_or_else(|| Error::Config("training ran no iterations".into()))?;
    let quantized_run = config.optimizer != OptimizerName::FloatRef;
    let final_weights = if quantized_run {
        quantize(&best_primal)
    } else {
        best_primal.clone()
    };
    let rounded = quantize(&best_primal);
    let histogram = quantized_run.then(|| {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for w in &final_weights {
            if let Some(i) = levels.as_slice().iter().position(|q| q == w) {
                *counts.entry(i).or_default() += 1;
            }
        }
        levels
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &level)| LevelCount {
                level,
                count: counts.get(&i).copied().unwrap_or(0),
            })
            .collect()
    });
    let summary = TrainSummary {
        config: config.clone(),
        iterations: k,
        best_iter,
        float_test_acc,
        quantized_train_acc: eval.train_acc(&rounded)?,
        quantized_test_acc: eval.test_acc(&rounded)?,
        final_frac_quantized: final_weights.iter().filter(|&&w| levels.contains(w)).count() as f64
            / final_weights.len() as f64,
        max_coherence_error: max_coherence,
        histogram,
    };
    let outcome = TrainOutcome {
        model: MlpModel::with_params(&config.arch, final_weights)?,
        records,
        summary,
        final_state: state,
    };
    if let Some(dir) = &config.output {
        outcome.write(dir)?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(optimizer: OptimizerName) -> TrainConfig {
        TrainConfig {
            optimizer,
            epochs: 4,
            dataset: DatasetSpec {
                n: 200,
                ..DatasetSpec::default()
            },
            arch: vec![2, 4, 2],
            log_interval: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn binding_examples() {
        let bind = u_space_bind(2, &QuantLevels::binary());
        assert_eq!(bind.materialize(&[0.5, 0.5, 0.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert_eq!(bind.chain(&[2.0, -1.0]).unwrap(), vec![-2.0, 2.0, 1.0, -1.0]);
        assert_eq!(bind.uniform(), vec![0.5; 4]);
        assert!(bind.materialize(&[0.5; 3]).is_err());
    }

    #[test]
    fn frac_quantized_examples() {
        let q = QuantLevels::binary();
        assert_eq!(frac_quantized(&[1.0, -1.0, 1.0], &q, 1e-2, Space::W), 1.0);
        assert_eq!(frac_quantized(&[0.0; 4], &q, 1e-2, Space::W), 0.0);
        assert_eq!(frac_quantized(&[0.995, 0.5], &q, 1e-2, Space::W), 0.5);
        assert_eq!(frac_quantized(&[0.999, 0.001, 0.5, 0.5], &q, 1e-2, Space::U), 0.5);
    }

    #[test]
    fn config_rejects_unknown_keys_and_inconsistencies() {
        assert!(TrainConfig::from_json(r#"{"optimiser": "md_stable"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"space": "u", "projection": "tanh"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"optimizer": "bc_ste", "projection": "tanh"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"optimizer": "md_closed", "projection": "shifted_tanh"}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"levels": [-1, 0, 1]}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"arch": [2, 8, 3]}"#).is_err());
        let ok = TrainConfig::from_json(r#"{"space": "u", "projection": "softmax", "levels": [-1, 0, 1]}"#).unwrap();
        assert_eq!(ok.projection_kind().unwrap(), ProjectionKind::Softmax { d: 3 });
        assert!(TrainConfig::from_json(r#"{"optimizer": "bc_ste", "projection": "sign"}"#).is_ok());
    }

    #[test]
    fn every_optimizer_runs_and_logs() {
        let mut cfgs = vec![
            small(OptimizerName::MdClosed),
            small(OptimizerName::MdStable),
            small(OptimizerName::GdProj),
            small(OptimizerName::Pgd),
            small(OptimizerName::FloatRef),
            TrainConfig {
                projection: ProjectionName::Sign,
                ..small(OptimizerName::BcSte)
            },
            TrainConfig {
                projection: ProjectionName::ShiftedTanh,
                ..small(OptimizerName::MdStable)
            },
        ];
        for opt in [OptimizerName::MdClosed, OptimizerName::MdStable, OptimizerName::GdProj] {
            cfgs.push(TrainConfig {
                space: Space::U,
                projection: ProjectionName::Softmax,
                ..small(opt)
            });
        }
        for cfg in cfgs {
            let out = train(&cfg).unwrap();
            // 160 training samples in batches of 32, 4 epochs
            assert_eq!(out.summary.iterations, 20);
            assert_eq!(out.records.len(), 4);
            for r in &out.records {
                assert!((0.0..=1.0).contains(&r.frac_quantized));
            }
            assert!(out.summary.max_coherence_error <= 1e-9);
            if cfg.optimizer != OptimizerName::FloatRef {
                let levels = cfg.quant_levels().unwrap();
                assert!(out.model.params.iter().all(|&w| levels.contains(w)), "{cfg:?}");
                assert_eq!(out.summary.final_frac_quantized, 1.0);
            }
        }
    }

    #[test]
    fn u_space_rows_stay_on_simplex() {
        let cfg = TrainConfig {
            space: Space::U,
            projection: ProjectionName::Softmax,
            ..small(OptimizerName::MdClosed)
        };
        let out = train(&cfg).unwrap();
        for row in out.final_state.primal.chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn training_is_reproducible() {
        let a = train(&small(OptimizerName::MdStable)).unwrap();
        let b = train(&small(OptimizerName::MdStable)).unwrap();
        assert_eq!(records_csv(&a.records), records_csv(&b.records));
        let c = train(&TrainConfig {
            seed: 3,
            ..small(OptimizerName::MdStable)
        })
        .unwrap();
        assert_ne!(records_csv(&a.records), records_csv(&c.records));
    }

    #[test]
    fn writes_csv_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            output: Some(dir.path().to_path_buf()),
            ..small(OptimizerName::MdStable)
        };
        train(&cfg).unwrap();
        let csv = fs::read_to_string(dir.path().join("train.csv")).unwrap();
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 5);
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["optimizer"], "md_stable");
        assert_eq!(summary["histogram"].as_array().unwrap().len(), 2);
    }
}
