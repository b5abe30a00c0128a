//! End-to-end harnesses built from the library stages: dataset synthesis,
//! upsampling evaluation, the sampling-step ablation and the noise sweep.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{normalization_for, PointCloud};
use crate::metrics::{self, chamfer, hausdorff, DISPLAY_SCALE};
use crate::plse::PlseModel;
use crate::shapes::{make_patch_dataset, PatchPair, ShapeKind};
use crate::training::{self, TrainOutcome, TrainSample};
use crate::upsampler::{self, prepare_field, DistanceField, ProjectionParams};

/// Seed offset separating held-out patches from training patches.
const HELDOUT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn training_patches(cfg: &RunConfig) -> Result<Vec<PatchPair>> {
    make_patch_dataset(&cfg.shapes, cfg.patches_per_shape, cfg.sparse_points, cfg.rate, cfg.train.seed)
}

pub fn heldout_patches(cfg: &RunConfig) -> Result<Vec<PatchPair>> {
    make_patch_dataset(
        &cfg.shapes,
        cfg.eval_patches_per_shape,
        cfg.sparse_points,
        cfg.rate,
        cfg.train.seed ^ HELDOUT_SALT,
    )
}

pub fn train_on_config(cfg: &RunConfig) -> Result<TrainOutcome> {
    let patches = training_patches(cfg)?;
    let samples = TrainSample::from_patches(&patches, &cfg.train.model, cfg.train.threshold)?;
    training::train(&samples, &cfg.train)
}

/// Quality of one upsampled patch against its dense ground truth, in the
/// patch frame. `p2f` is present when the patch has an analytic source.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchScore {
    pub cd: f64,
    pub hd: f64,
    pub p2f: Option<f64>,
}

pub fn score_patch(pred: &PointCloud, patch: &PatchPair) -> Result<PatchScore> {
    let p2f = match &patch.source {
        Some(_) => {
            if pred.is_empty() {
                return Err(Error::EmptyCloud);
            }
            let d: Vec<f64> = pred.iter().map(|&q| patch.surface_distance(q).expect("source present")).collect();
            Some(d.iter().sum::<f64>() / d.len() as f64)
        }
        None => None,
    };
    Ok(PatchScore {
        cd: chamfer(pred, &patch.dense)?,
        hd: hausdorff(pred, &patch.dense)?,
        p2f,
    })
}

/// Upsamples a patch's sparse cloud at the patch's own rate.
pub fn upsample_patch(field: &DistanceField, patch: &PatchPair, params: &ProjectionParams, seed: u64) -> Result<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    upsampler::upsample(field, &patch.sparse, patch.rate() as f64, params, &mut rng)
}

/// Upsamples an arbitrary cloud with a learned model: the input is normalised
/// into the model frame, processed there, and mapped back.
pub fn upsample_with_model(
    model: &PlseModel,
    input: &PointCloud,
    rate: f64,
    params: &ProjectionParams,
    seed: u64,
) -> Result<PointCloud> {
    let transform = normalization_for(input)?;
    let local = transform.apply_cloud(input);
    let field = prepare_field(model, &local)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = upsampler::upsample(&field, &local, rate, params, &mut rng)?;
    Ok(transform.invert_cloud(&out))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub steps: usize,
    pub final_loss: f64,
    pub field_error: f64,
    pub cd: f64,
    pub hd: f64,
    pub p2f: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("steps,final_loss,field_error,cd_x1e3,hd_x1e3,p2f_x1e3\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:.3},{:.3},{:.3}",
            r.steps,
            r.final_loss,
            r.field_error,
            r.cd * DISPLAY_SCALE,
            r.hd * DISPLAY_SCALE,
            r.p2f * DISPLAY_SCALE
        );
    }
    out
}

/// Trains one model per sampling-step count on the same patches and scores
/// each on the same held-out patches.
pub fn ablate_steps(cfg: &RunConfig, steps: &[usize]) -> Result<Vec<AblationRow>> {
    let patches = training_patches(cfg)?;
    let heldout = heldout_patches(cfg)?;
    let min_points = cfg.sparse_points;
    let mut rows = Vec::with_capacity(steps.len());
    for &s in steps {
        if min_points >> s == 0 {
            return Err(Error::TooManySteps { steps: s, count: min_points });
        }
        let mut run = cfg.clone();
        run.train.model.sampling_steps = s;
        let samples = TrainSample::from_patches(&patches, &run.train.model, run.train.threshold)?;
        let outcome = training::train(&samples, &run.train)?;
        let model = &outcome.checkpoint.model;
        let held = TrainSample::from_patches(&heldout, &run.train.model, run.train.threshold)?;
        let field_error = training::heldout_field_error(model, &held, 256, run.train.query_sigma, run.train.seed)?;
        let (mut cd, mut hd, mut p2f) = (0.0, 0.0, 0.0);
        for (i, patch) in heldout.iter().enumerate() {
            let field = prepare_field(model, &patch.sparse)?;
            let pred = upsample_patch(&field, patch, &run.train.projection, run.train.seed.wrapping_add(i as u64))?;
            let score = score_patch(&pred, patch)?;
            cd += score.cd;
            hd += score.hd;
            p2f += score.p2f.unwrap_or(0.0);
        }
        let n = heldout.len() as f64;
        rows.push(AblationRow {
            steps: s,
            final_loss: outcome.trace.last().map_or(f64::NAN, |e| e.mean_loss),
            field_error,
            cd: cd / n,
            hd: hd / n,
            p2f: p2f / n,
        });
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRow {
    pub tau: f64,
    pub seed: u64,
    pub cd: f64,
    pub hd: f64,
    pub p2f: f64,
}

pub fn noise_csv(rows: &[NoiseRow]) -> String {
    let mut out = String::from("tau,seed,cd_x1e3,hd_x1e3,p2f_x1e3\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.3},{:.3},{:.3}",
            r.tau,
            r.seed,
            r.cd * DISPLAY_SCALE,
            r.hd * DISPLAY_SCALE,
            r.p2f * DISPLAY_SCALE
        );
    }
    out
}

/// For each noise level and seed: perturb the patch's sparse input, upsample
/// it through a field prepared from the noisy input, and score against the
/// clean dense patch.
pub fn noise_sweep(
    model: &PlseModel,
    patch: &PatchPair,
    taus: &[f64],
    seeds: &[u64],
    params: &ProjectionParams,
) -> Result<Vec<NoiseRow>> {
    let mut rows = Vec::with_capacity(taus.len() * seeds.len());
    for &tau in taus {
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = metrics::add_noise(&patch.sparse, tau, &mut rng)?;
            let field = prepare_field(model, &noisy)?;
            let pred = upsampler::upsample(&field, &noisy, patch.rate() as f64, params, &mut rng)?;
            let score = score_patch(&pred, patch)?;
            rows.push(NoiseRow {
                tau,
                seed,
                cd: score.cd,
                hd: score.hd,
                p2f: score.p2f.unwrap_or(f64::NAN),
            });
        }
    }
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// First held-out patch cut from a sphere, if the config has one.
pub fn heldout_sphere_patch(cfg: &RunConfig) -> Result<Option<PatchPair>> {
    Ok(heldout_patches(cfg)?.into_iter().find(|p| {
        p.source
            .as_ref()
            .is_some_and(|o| matches!(o.kind, ShapeKind::Sphere { .. }))
    }))
}
