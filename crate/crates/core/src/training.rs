//! Query generation, curvature-based curriculum, the L1 training loop and
//! checkpoint persistence.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curvature::{self, CurvatureField, SamplingLadder};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{NeighborIndex, Point3, PointCloud, Rotation3};
use crate::plse::{ModelGrads, ModelShape, PlseModel};
use crate::shapes::PatchPair;
use crate::upsampler::ProjectionParams;

pub const CHECKPOINT_VERSION: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Hard,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Hard => "hard",
        })
    }
}

/// `Hard` iff `gcv >= threshold`.
pub fn classify_difficulty(gcv: f64, threshold: f64) -> Result<Difficulty> {
    for (what, value) in [("global curvature", gcv), ("threshold", threshold)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange { what, value });
        }
    }
    Ok(if gcv >= threshold {
        Difficulty::Hard
    } else {
        Difficulty::Easy
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub threshold: f64,
    pub learning_rate: f64,
    /// Patches per optimiser step.
    pub batch_size: usize,
    pub queries_per_patch: usize,
    /// Standard deviation of the Gaussian offset of training queries.
    pub query_sigma: f64,
    pub seed: u64,
    pub model: ModelShape,
    pub curriculum: bool,
    pub rotate: bool,
    /// Used when the trained model is evaluated.
    pub projection: ProjectionParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            threshold: 0.5,
            learning_rate: 1e-3,
            batch_size: 8,
            queries_per_patch: 64,
            query_sigma: 0.05,
            seed: 0,
            model: ModelShape::default(),
            curriculum: true,
            rotate: true,
            projection: ProjectionParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 || self.batch_size == 0 || self.queries_per_patch == 0 {
            return bad("epochs, batch size and queries per patch must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::OutOfRange {
                what: "threshold",
                value: self.threshold,
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.query_sigma >= 0.0 && self.query_sigma.is_finite()) {
            return bad(format!("query sigma must be >= 0, got {}", self.query_sigma));
        }
        self.projection.validate()
    }
}

/// One training patch with everything precomputed from its sparse cloud.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub patch: PatchPair,
    pub curvature: CurvatureField,
    pub ladder: SamplingLadder,
    pub gt_index: NeighborIndex,
    pub global_curvature: f64,
    pub difficulty: Difficulty,
}

impl TrainSample {
    pub fn new(patch: PatchPair, shape: &ModelShape, threshold: f64) -> Result<Self> {
        let curvature = curvature::analyze(&patch.sparse, shape.normals_k, shape.curvature_k)?;
        let ladder = curvature::curvature_sample(&patch.sparse, &curvature, shape.sampling_steps)?;
        let global_curvature = curvature::global_curvature(&curvature)?;
        let difficulty = classify_difficulty(global_curvature, threshold)?;
        let gt_index = NeighborIndex::build(&patch.dense)?;
        Ok(TrainSample {
            patch,
            curvature,
            ladder,
            gt_index,
            global_curvature,
            difficulty,
        })
    }

    pub fn from_patches(patches: &[PatchPair], shape: &ModelShape, threshold: f64) -> Result<Vec<Self>> {
        exec::try_map_indexed(patches.len(), |i| TrainSample::new(patches[i].clone(), shape, threshold))
    }
}

/// Queries around the sparse cloud: a uniformly chosen sparse point plus
/// `N(0, σ²I)`, each paired with its exact distance to the dense cloud.
pub fn generate_queries<R: Rng + ?Sized>(
    sparse: &PointCloud,
    gt_index: &NeighborIndex,
    count: usize,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<(Point3, f64)>> {
    if sparse.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("query sigma must be >= 0, got {sigma}")));
    }
    let normal = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma"));
    Ok((0..count)
        .map(|_| {
            let mut q = sparse[rng.random_range(0..sparse.len())];
            if let Some(n) = &normal {
                q += Point3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            (q, gt_index.nearest_distance(q))
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Easy,
    Hard,
    All,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Easy => "easy",
            Phase::Hard => "hard",
            Phase::All => "all",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochPlan {
    pub phase: Phase,
    pub samples: Vec<usize>,
}

/// Epochs `1..=⌈E/2⌉` visit Easy samples, the rest Hard ones. A phase whose
/// bucket is empty visits every sample instead. Order within an epoch is a
/// seeded shuffle.
pub fn curriculum_schedule(difficulties: &[Difficulty], epochs: usize, seed: u64) -> Vec<EpochPlan> {
    let bucket = |d: Difficulty| -> Vec<usize> { (0..difficulties.len()).filter(|&i| difficulties[i] == d).collect() };
    let easy = bucket(Difficulty::Easy);
    let hard = bucket(Difficulty::Hard);
    let all: Vec<usize> = (0..difficulties.len()).collect();
    let first_half = epochs.div_ceil(2);
    plan_epochs(epochs, seed, |e| {
        let (phase, members) = if e < first_half {
            (Phase::Easy, &easy)
        } else {
            (Phase::Hard, &hard)
        };
        if members.is_empty() {
            (Phase::All, all.clone())
        } else {
            (phase, members.clone())
        }
    })
}

/// Every epoch visits every sample.
pub fn uniform_schedule(n: usize, epochs: usize, seed: u64) -> Vec<EpochPlan> {
    let all: Vec<usize> = (0..n).collect();
    plan_epochs(epochs, seed, |_| (Phase::All, all.clone()))
}

fn plan_epochs(epochs: usize, seed: u64, pick: impl Fn(usize) -> (Phase, Vec<usize>)) -> Vec<EpochPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..epochs)
        .map(|e| {
            let (phase, mut samples) = pick(e);
            samples.shuffle(&mut rng);
            EpochPlan { phase, samples }
        })
        .collect()
}

/// Adam with constant learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// One patch's contribution to a batch: model-frame ladder, queries and targets.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub ladder: SamplingLadder,
    pub queries: Vec<Point3>,
    pub targets: Vec<f64>,
}

/// Mean L1 loss over every query of the batch, and its parameter gradient.
/// At an exact zero residual the subgradient 0 is used.
pub fn loss_and_grads(model: &PlseModel, batch: &[BatchItem]) -> Result<(f64, ModelGrads)> {
    let total: usize = batch.iter().map(|b| b.queries.len()).sum();
    if total == 0 {
        return Err(Error::InvalidParameter("empty training batch".into()));
    }
    let scale = 1.0 / total as f64;
    let parts = exec::try_map_indexed(batch.len(), |i| {
        let item = &batch[i];
        let mut grads = model.zero_grads();
        let preds = model.accumulate_query_losses(
            &item.ladder,
            &item.queries,
            |j, pred| {
                let r = pred - item.targets[j];
                if r > 0.0 {
                    scale
                } else if r < 0.0 {
                    -scale
                } else {
                    0.0
                }
            },
            &mut grads,
        )?;
        let abs = exec::ordered_sum(preds.iter().zip(&item.targets).map(|(p, t)| (p - t).abs()));
        Ok((abs, grads))
    })?;
    let mut grads = model.zero_grads();
    let mut abs_sum = 0.0;
    for (abs, g) in &parts {
        abs_sum += abs;
        grads.add_assign(g);
    }
    Ok((abs_sum * scale, grads))
}

/// One Adam step on the batch; returns the pre-update mean L1 loss.
pub fn train_step(model: &mut PlseModel, adam: &mut Adam, batch: &[BatchItem], lr: f64) -> Result<f64> {
    let (loss, grads) = loss_and_grads(model, batch)?;
    let flat_grads = grads.to_flat();
    if !loss.is_finite() || flat_grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: adam.t + 1,
            detail: format!("loss {loss}, {} non-finite gradient entries", flat_grads.iter().filter(|g| !g.is_finite()).count()),
        });
    }
    let mut params = model.to_flat();
    adam.step(&mut params, &flat_grads, lr);
    model.set_flat(&params);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u64,
    pub model: PlseModel,
    pub config: TrainConfig,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint is serialisable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Corrupt(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Corrupt("missing format_version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
        ckpt.model.validate().map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub phase: Phase,
    pub mean_loss: f64,
}

pub fn loss_trace_csv(trace: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,phase,mean_loss\n");
    for e in trace {
        out.push_str(&format!("{},{},{:e}\n", e.epoch, e.phase, e.mean_loss));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochLoss>,
}

/// Trains a fresh model on `samples`.
pub fn train(samples: &[TrainSample], config: &TrainConfig) -> Result<TrainOutcome> {
    let model = PlseModel::new(config.model, config.seed)?;
    train_from(model, samples, config)
}

/// Continues training `model`. Each epoch every visited sample gets a fresh
/// uniform rotation (when enabled) applied to its ladder and queries; targets
/// are rotation invariant and computed in the sample's own frame.
pub fn train_from(mut model: PlseModel, samples: &[TrainSample], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.ladder.num_levels() != model.num_levels()) {
        return Err(Error::LadderMismatch {
            expected: model.num_levels(),
            got: s.ladder.num_levels(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a11);
    let schedule = if config.curriculum {
        let labels: Vec<Difficulty> = samples.iter().map(|s| s.difficulty).collect();
        curriculum_schedule(&labels, config.epochs, rng.random())
    } else {
        uniform_schedule(samples.len(), config.epochs, rng.random())
    };
    let mut adam = Adam::new(model.num_params());
    let mut trace = Vec::with_capacity(config.epochs);
    for (e, plan) in schedule.iter().enumerate() {
        let mut weighted = 0.0;
        let mut count = 0usize;
        for chunk in plan.samples.chunks(config.batch_size) {
            let draws: Vec<(usize, Rotation3, u64)> = chunk
                .iter()
                .map(|&s| {
                    let r = if config.rotate {
                        Rotation3::random(&mut rng)
                    } else {
                        Rotation3::IDENTITY
                    };
                    (s, r, rng.random())
                })
                .collect();
            let batch = exec::try_map_indexed(draws.len(), |i| {
                let (s, rot, seed) = draws[i];
                let sample = &samples[s];
                let mut qrng = ChaCha8Rng::seed_from_u64(seed);
                let pairs = generate_queries(
                    &sample.patch.sparse,
                    &sample.gt_index,
                    config.queries_per_patch,
                    config.query_sigma,
                    &mut qrng,
                )?;
                Ok(BatchItem {
                    ladder: sample.ladder.transformed(|p| rot.apply(p)),
                    queries: pairs.iter().map(|(q, _)| rot.apply(*q)).collect(),
                    targets: pairs.iter().map(|(_, t)| *t).collect(),
                })
            })?;
            let n: usize = batch.iter().map(|b| b.queries.len()).sum();
            let loss = train_step(&mut model, &mut adam, &batch, config.learning_rate)?;
            weighted += loss * n as f64;
            count += n;
        }
        trace.push(EpochLoss {
            epoch: e + 1,
            phase: plan.phase,
            mean_loss: weighted / count.max(1) as f64,
        });
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model,
            config: config.clone(),
            step: adam.t,
        },
        trace,
    })
}

/// Mean `|g(q) − exact surface distance|` over fresh queries around each
/// patch (patches without a source shape are skipped).
pub fn heldout_field_error(model: &PlseModel, samples: &[TrainSample], queries_per_patch: usize, sigma: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = samples.iter().map(|_| rng.random()).collect();
    let per = exec::try_map_indexed(samples.len(), |i| {
        let s = &samples[i];
        if s.patch.source.is_none() {
            return Ok(None);
        }
        let features = model.encode_ladder(&s.ladder)?;
        let mut qrng = ChaCha8Rng::seed_from_u64(seeds[i]);
        let pairs = generate_queries(&s.patch.sparse, &s.gt_index, queries_per_patch, sigma, &mut qrng)?;
        let err = exec::ordered_sum(pairs.iter().map(|(q, _)| {
            let exact = s.patch.surface_distance(*q).expect("source checked");
            (model.forward_with_features(*q, &features) - exact).abs()
        }));
        Ok(Some((err, pairs.len())))
    })?;
    let (sum, n) = per.into_iter().flatten().fold((0.0, 0usize), |(s, n), (e, k)| (s + e, n + k));
    if n == 0 {
        return Err(Error::InvalidParameter("no patch has an analytic source".into()));
    }
    Ok(sum / n as f64)
}
