//! Inference: seed jittered queries around a sparse cloud and move each one
//! down the gradient of a distance field, `q ← q − λ ∇g(q)`, for `T` steps.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curvature::{self, SamplingLadder};
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{NeighborIndex, Point3, PointCloud};
use crate::plse::PlseModel;
use crate::shapes::{ShapeOracle, UdfSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// λ, in the normalised frame.
    pub step_size: f64,
    /// T.
    pub iterations: usize,
    /// Standard deviation of the jitter applied to seed queries.
    pub seed_sigma: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            step_size: 0.02,
            iterations: 10,
            seed_sigma: 0.02,
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be >= 0, got {}", self.step_size)));
        }
        if !(self.seed_sigma >= 0.0 && self.seed_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("seed sigma must be >= 0, got {}", self.seed_sigma)));
        }
        Ok(())
    }
}

/// A trained model with its input's ladder features computed once.
#[derive(Clone, Debug)]
pub struct LearnedField {
    pub model: PlseModel,
    pub ladder: SamplingLadder,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum DistanceField {
    Learned(LearnedField),
    Oracle(ShapeOracle),
}

impl DistanceField {
    pub fn evaluate(&self, q: Point3) -> UdfSample {
        match self {
            DistanceField::Learned(f) => {
                let (distance, g) = f.model.value_and_query_grad(q, &f.features);
                UdfSample {
                    distance,
                    gradient: Some(g),
                }
            }
            DistanceField::Oracle(o) => o.udf(q),
        }
    }

    pub fn distance(&self, q: Point3) -> f64 {
        match self {
            DistanceField::Learned(f) => f.model.forward_with_features(q, &f.features),
            DistanceField::Oracle(o) => o.distance(q),
        }
    }
}

/// Builds the curvature ladder of `sparse` and encodes it once.
pub fn prepare_field(model: &PlseModel, sparse: &PointCloud) -> Result<DistanceField> {
    let steps = model.shape.sampling_steps;
    let needed = 1usize.checked_shl(steps as u32).unwrap_or(usize::MAX);
    if sparse.len() < needed {
        return Err(Error::TooFewPoints {
            needed,
            got: sparse.len(),
        });
    }
    let ladder = if steps == 0 {
        SamplingLadder {
            indices: vec![(0..sparse.len()).collect()],
            clouds: vec![sparse.clone()],
        }
    } else {
        let field = curvature::analyze(sparse, model.shape.normals_k, model.shape.curvature_k)?;
        curvature::curvature_sample(sparse, &field, steps)?
    };
    let features = model.encode_ladder(&ladder)?;
    Ok(DistanceField::Learned(LearnedField {
        model: model.clone(),
        ladder,
        features,
    }))
}

/// `round(rate · N)` queries; query `i` is input point `i mod N` plus
/// isotropic Gaussian jitter.
pub fn seed_queries<R: Rng + ?Sized>(sparse: &PointCloud, rate: f64, sigma: f64, rng: &mut R) -> Result<PointCloud> {
    if !(rate > 1.0 && rate.is_finite()) {
        return Err(Error::BadRate(rate));
    }
    if sparse.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("seed sigma must be >= 0, got {sigma}")));
    }
    let n = sparse.len();
    let count = (rate * n as f64).round() as usize;
    if sigma == 0.0 {
        return Ok((0..count).map(|i| sparse[i % n]).collect());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
    Ok((0..count)
        .map(|i| sparse[i % n] + Point3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
        .collect())
}

/// Runs `T` gradient steps on every query independently. Where the field
/// has no gradient (medial axis, exactly on an oracle surface) the step is zero.
pub fn project(field: &DistanceField, queries: &PointCloud, params: &ProjectionParams) -> Result<PointCloud> {
    params.validate()?;
    let moved = exec::try_map_indexed(queries.len(), |i| {
        let mut q = queries[i];
        for _ in 0..params.iterations {
            if let Some(g) = field.evaluate(q).gradient {
                q = q - g * params.step_size;
            }
            if !q.is_finite() {
                return Err(Error::NonFiniteState { index: i });
            }
        }
        Ok(q)
    })?;
    Ok(PointCloud::new(moved))
}

pub fn upsample<R: Rng + ?Sized>(
    field: &DistanceField,
    sparse: &PointCloud,
    rate: f64,
    params: &ProjectionParams,
    rng: &mut R,
) -> Result<PointCloud> {
    let seeds = seed_queries(sparse, rate, params.seed_sigma, rng)?;
    project(field, &seeds, params)
}

/// Number of points lying within `tol` of some lower-indexed point.
pub fn count_collapsed(cloud: &PointCloud, tol: f64) -> usize {
    let Ok(index) = NeighborIndex::build(cloud) else {
        return 0;
    };
    let flags = exec::map_indexed(cloud.len(), |i| {
        let k = cloud.len().min(8);
        index
            .knn(cloud[i], k)
            .map(|hood| hood.iter().any(|n| n.index < i && n.distance <= tol))
            .unwrap_or(false)
    });
    flags.into_iter().filter(|&f| f).count()
}
