//! AdamW training loop and accuracy evaluation.

use log::info;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corrupt::{self, CorruptionSpec};
use crate::error::{Error, Result};
use crate::geo::{self, angular_error, normalize_unit_sphere};
use crate::rng;
use crate::synthgen::{Dataset, LabeledObject, Split};

use super::model::{loss_and_grad_scaled, predict_embedded, prepare, BranchScales, Example};
use super::params::{init_params, Grads, ModelParams};
use super::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Augment {
    /// Uniform random rotation, labels co-rotated.
    pub rotate: bool,
    /// Single-view culling on half of the samples.
    pub partial: bool,
    /// Gaussian jitter with sigma 0.01.
    pub jitter: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment {
            rotate: true,
            partial: true,
            jitter: true,
        }
    }
}

impl Augment {
    pub const NONE: Augment = Augment {
        rotate: false,
        partial: false,
        jitter: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub augment: Augment,
    /// Worker threads per batch. Only `1` is bit-reproducible across
    /// thread counts; any fixed count is reproducible with itself.
    pub threads: usize,
    /// Validate every this many epochs (and always after the last one).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch: 32,
            base_lr: 1e-3,
            weight_decay: 5e-2,
            warmup_epochs: 5,
            seed: 0,
            augment: Augment::default(),
            threads: 1,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.threads == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "train config: epochs, batch, threads and eval_every must be positive",
            ));
        }
        if !(self.base_lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "train config: base_lr must be positive and weight_decay non-negative",
            ));
        }
        Ok(())
    }
}

/// Learning rate at optimizer step `step`: linear warmup over
/// `warmup_epochs`, then cosine decay reaching 0 after the last step.
pub fn lr_at(config: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    let total = config.epochs * steps_per_epoch;
    let warm = (config.warmup_epochs * steps_per_epoch).min(total);
    if step < warm {
        return config.base_lr * (step + 1) as f64 / warm as f64;
    }
    let span = (total - warm).max(1) as f64;
    let t = ((step - warm) as f64 / span).min(1.0);
    config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with decoupled weight decay on affine weights only.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    decay: Vec<bool>,
    t: u32,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> AdamW {
        let mut decay = vec![false; params.len()];
        for t in params.tensors() {
            decay[t.range()].fill(t.kind.decays());
        }
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            decay,
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    /// One update; parameters are rounded back to single precision.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads, lr: f64, weight_decay: f64) {
        assert_eq!(grads.values.len(), params.len(), "gradient/parameter size mismatch");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * weight_decay;
        let w = params.values_mut();
        for i in 0..w.len() {
            let g = grads.values[i];
            if self.decay[i] {
                w[i] *= shrink;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
        params.round_to_f32();
    }
}

/// Fractions of predictions within 45, 30, 15 and 5 degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub acc45: f64,
    pub acc30: f64,
    pub acc15: f64,
    pub acc5: f64,
    pub mean_error_deg: f64,
}

/// Fraction of `errors` (degrees) at or below `tau`.
pub fn accuracy_at(errors: &[f64], tau: f64) -> f64 {
    errors.iter().filter(|&&e| e <= tau).count() as f64 / errors.len().max(1) as f64
}

impl EvalReport {
    pub fn from_errors(errors: &[f64]) -> EvalReport {
        let n = errors.len();
        let frac = |tau| accuracy_at(errors, tau);
        EvalReport {
            n,
            acc45: frac(45.0),
            acc30: frac(30.0),
            acc15: frac(15.0),
            acc5: frac(5.0),
            mean_error_deg: errors.iter().sum::<f64>() / n.max(1) as f64,
        }
    }

    /// Mean of the four accuracies.
    pub fn average(&self) -> f64 {
        (self.acc45 + self.acc30 + self.acc15 + self.acc5) / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// The most recent validation report.
    pub fn final_eval(&self) -> Option<EvalReport> {
        self.history.iter().rev().find_map(|r| r.val)
    }
}

/// Accuracy over every (object, phrase) pair. With `corruption`, each object
/// is corrupted with a seed derived from the spec seed and its index, then
/// renormalized. Degenerate predictions count as a 180 degree miss.
pub fn evaluate(
    params: &ModelParams,
    objects: &[LabeledObject],
    corruption: Option<&CorruptionSpec>,
) -> Result<EvalReport> {
    Ok(EvalReport::from_errors(&angular_errors(params, objects, corruption)?))
}

/// Angular error in degrees of every (object, phrase) prediction, in object
/// then label order. Degenerate predictions count as 180.
pub fn angular_errors(
    params: &ModelParams,
    objects: &[LabeledObject],
    corruption: Option<&CorruptionSpec>,
) -> Result<Vec<f64>> {
    let config = params.config();
    let mut errors = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        let dirs: Vec<_> = obj.labels.iter().map(|(_, d)| *d).collect();
        let (cloud, dirs) = match corruption {
            Some(spec) => {
                let spec = CorruptionSpec {
                    seed: rng::derive_seed(spec.seed, "eval", i as u64),
                    ..*spec
                };
                corrupt::apply(&obj.cloud, &dirs, &spec)?
            }
            None => (obj.cloud.clone(), dirs),
        };
        let norm = normalize_unit_sphere(&cloud)?;
        let prep = prepare(config, &norm.cloud)?;
        for ((phrase, _), target) in obj.labels.iter().zip(&dirs) {
            let text = config.embed(phrase)?;
            let err = match predict_embedded(params, &prep, &text) {
                Ok(u) => angular_error(&u, target),
                Err(Error::DegeneratePrediction(_)) => 180.0,
                Err(e) => return Err(e),
            };
            errors.push(err);
        }
    }
    Ok(errors)
}

/// Trains on the dataset's train split, validating on its val split.
pub fn train(model: &ModelConfig, config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let tr: Vec<LabeledObject> = data.split(Split::Train).cloned().collect();
    let val: Vec<LabeledObject> = data.split(Split::Val).cloned().collect();
    train_examples(model, config, &tr, &val)
}

/// One augmented example for a training object at a given epoch. The object
/// contributes one phrase per epoch, cycling through its labels.
fn make_example(
    model: &ModelConfig,
    config: &TrainConfig,
    obj: &LabeledObject,
    obj_index: usize,
    epoch: usize,
) -> Result<Example> {
    let seed = rng::derive_seed(config.seed, "augment", (epoch as u64) << 32 | obj_index as u64);
    let mut r = rng::stream("augment", seed);
    let offset = rng::derive_seed(config.seed, "label", obj_index as u64) as usize;
    let (phrase, mut target) = obj.labels[(epoch + offset) % obj.labels.len()].clone();
    let mut cloud = obj.cloud.clone();
    let aug = config.augment;
    if aug.partial && r.random_bool(0.5) {
        let kept = corrupt::single_view(&cloud, r.random(), 64)?;
        cloud = cloud.subset(&kept)?;
    }
    if aug.rotate {
        let rot = geo::sample_rotation_uniform(r.random());
        cloud = cloud.rotated(&rot);
        target = rot.rotate(&target);
    }
    if aug.jitter {
        cloud = corrupt::jitter(&cloud, 0.01, r.random())?;
    }
    let norm = normalize_unit_sphere(&cloud)?;
    Ok(Example {
        prepared: prepare(model, &norm.cloud)?,
        text: model.embed(&phrase)?,
        target,
    })
}

fn drop_path_scales(model: &ModelConfig, r: &mut rng::Rng) -> Vec<BranchScales> {
    let p = model.drop_path;
    (0..model.layers)
        .map(|l| {
            // Linearly increasing rate with depth, as in stochastic depth.
            let rate = if model.layers > 1 { p * l as f64 / (model.layers - 1) as f64 } else { p };
            let mut s = [1.0; 3];
            if rate > 0.0 {
                for x in &mut s {
                    *x = if r.random_bool(rate) { 0.0 } else { 1.0 / (1.0 - rate) };
                }
            }
            s
        })
        .collect()
}

/// Batch loss and gradient, optionally split across threads.
fn batch_grad(
    params: &ModelParams,
    batch: &[Example],
    scales: &[Vec<BranchScales>],
    threads: usize,
) -> Result<(f64, Grads)> {
    if threads <= 1 || batch.len() < 2 {
        return loss_and_grad_scaled(params, batch, scales);
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<(f64, Grads)>> = std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .zip(scales.chunks(chunk))
            .map(|(b, sc)| s.spawn(move || loss_and_grad_scaled(params, b, sc).map(|(l, g)| (l, g, b.len()))))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let (l, mut g, n) = h.join().expect("training worker panicked")?;
                let w = n as f64 / batch.len() as f64;
                g.scale(w);
                Ok((l * w, g))
            })
            .collect()
    });
    let mut loss = 0.0;
    let mut grads = Grads::zeros_like(params);
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add(&g);
    }
    Ok((loss, grads))
}

/// Trains from scratch on explicit object lists.
pub fn train_examples(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &[LabeledObject],
    val_set: &[LabeledObject],
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training needs nonempty train and val splits"));
    }
    if let Some(o) = train_set.iter().chain(val_set).find(|o| o.labels.is_empty()) {
        return Err(Error::invalid(format!("object {} has no labels", o.id)));
    }
    let mut params = init_params(model, rng::derive_seed(config.seed, "init", 0))?;
    let mut opt = AdamW::new(&params);
    let steps_per_epoch = train_set.len().div_ceil(config.batch);
    let mut drop_rng = rng::stream("drop-path", config.seed);
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng::stream("shuffle", rng::derive_seed(config.seed, "epoch", epoch as u64)));
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(config.batch) {
            let batch = idx
                .iter()
                .map(|&i| make_example(model, config, &train_set[i], i, epoch))
                .collect::<Result<Vec<_>>>()?;
            let scales: Vec<_> = batch.iter().map(|_| drop_path_scales(model, &mut drop_rng)).collect();
            let (loss, grads) = batch_grad(&params, &batch, &scales, config.threads)?;
            if !loss.is_finite() || grads.values.iter().any(|g| !g.is_finite()) {
                return Err(Error::invalid(format!("training diverged at epoch {epoch} (loss {loss})")));
            }
            lr = lr_at(config, step, steps_per_epoch);
            opt.step(&mut params, &grads, lr, config.weight_decay);
            loss_sum += loss * batch.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val = if (epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs {
            Some(evaluate(&params, val_set, None)?)
        } else {
            None
        };
        match &val {
            Some(v) => info!(
                "epoch {epoch}: loss {train_loss:.4}, val acc@45/30/15/5 = {:.3}/{:.3}/{:.3}/{:.3}",
                v.acc45, v.acc30, v.acc15, v.acc5
            ),
            None => info!("epoch {epoch}: loss {train_loss:.4}"),
        }
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val,
        });
    }
    Ok(TrainOutcome { params, history })
}
