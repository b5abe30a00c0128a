//! The progressive local surface estimator: a shared point-set encoder run on
//! every level of a curvature ladder, and a distance head on the query
//! concatenated with all level features.
//!
//! Everything is plain `f64` with hand-written reverse mode. Softplus is used
//! throughout so the predicted field is C¹ in the query, which the projection
//! step differentiates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{SamplingLadder, DEFAULT_CURVATURE_K, DEFAULT_NORMALS_K};
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

pub const MODEL_VERSION: u32 = 1;
pub const ESTIMATOR_HIDDEN: [usize; 2] = [128, 64];
/// Surface detail in the normalised frame is a few hundredths wide; unit
/// softplus curvature needs the query spread over tens of units to resolve it.
pub const DEFAULT_QUERY_SCALE: f64 = 40.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Linear,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus (the logistic function).
#[inline]
pub fn softplus_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Linear => x,
        }
    }

    #[inline]
    fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus_grad(x),
            Activation::Linear => 1.0,
        }
    }
}

/// Dense layer `y = act(W x + b)`, `W` row-major `outputs × inputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot<R: Rng>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let mut layer = Layer::zeros(inputs, outputs, activation);
        for w in &mut layer.weights {
            *w = rng.random_range(-a..a);
        }
        layer
    }

    pub fn zeros_like(&self) -> Self {
        Layer::zeros(self.inputs, self.outputs, self.activation)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    /// Writes pre-activations into `pre` and activations into `out`.
    fn forward_into(&self, x: &[f64], pre: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        for r in 0..self.outputs {
            let mut acc = self.bias[r];
            for (w, v) in self.row(r).iter().zip(x) {
                acc += w * v;
            }
            pre[r] = acc;
            out[r] = self.activation.apply(acc);
        }
    }

    /// Backward through one application. Accumulates parameter gradients into
    /// `grad` (if given) and writes the first `dx.len()` input gradients.
    fn backward(&self, x: &[f64], pre: &[f64], d_out: &[f64], grad: Option<&mut Layer>, dx: &mut [f64]) {
        let mut d_pre = vec![0.0; self.outputs];
        for r in 0..self.outputs {
            d_pre[r] = d_out[r] * self.activation.grad(pre[r]);
        }
        if let Some(g) = grad {
            for r in 0..self.outputs {
                let dp = d_pre[r];
                if dp == 0.0 {
                    continue;
                }
                g.bias[r] += dp;
                let row = &mut g.weights[r * self.inputs..(r + 1) * self.inputs];
                for (gw, v) in row.iter_mut().zip(x) {
                    *gw += dp * v;
                }
            }
        }
        let cols = dx.len();
        dx.fill(0.0);
        for r in 0..self.outputs {
            let dp = d_pre[r];
            for (d, w) in dx.iter_mut().zip(&self.row(r)[..cols]) {
                *d += w * dp;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// All weights then biases, layer by layer.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub feature_dim: usize,
    pub hidden: usize,
    pub sampling_steps: usize,
    pub curvature_k: usize,
    pub normals_k: usize,
    /// Fixed factor applied to the query coordinates before the estimator.
    pub query_scale: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            feature_dim: 32,
            hidden: 64,
            sampling_steps: 4,
            curvature_k: DEFAULT_CURVATURE_K,
            normals_k: DEFAULT_NORMALS_K,
            query_scale: DEFAULT_QUERY_SCALE,
        }
    }
}

impl ModelShape {
    pub fn estimator_inputs(&self) -> usize {
        3 + self.feature_dim * (self.sampling_steps + 1)
    }
}

/// Encoder layout: `[3 → hidden, hidden → hidden]` softplus per point, then a
/// linear head `2·hidden → d` on `[point feature, max-pooled global feature]`.
/// The level feature is the mean of the head outputs over points.
///
/// Estimator layout: `3 + d·(S+1) → 128 → 64 → 1`, softplus on every layer
/// including the output, so predictions are non-negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlseModel {
    pub version: u32,
    pub shape: ModelShape,
    pub encoder: MlpParams,
    pub estimator: MlpParams,
}

/// Per-level feature, `d` values.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

/// `init_model(d, S, hidden, seed)` with default neighbourhood sizes.
pub fn init_model(feature_dim: usize, sampling_steps: usize, hidden: usize, seed: u64) -> Result<PlseModel> {
    PlseModel::new(
        ModelShape {
            feature_dim,
            sampling_steps,
            hidden,
            ..ModelShape::default()
        },
        seed,
    )
}

impl PlseModel {
    pub fn new(shape: ModelShape, seed: u64) -> Result<Self> {
        if shape.feature_dim == 0 || shape.hidden == 0 {
            return Err(Error::InvalidModel("feature_dim and hidden must be at least 1".into()));
        }
        if !(shape.query_scale > 0.0 && shape.query_scale.is_finite()) {
            return Err(Error::InvalidModel(format!("query scale must be positive, got {}", shape.query_scale)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = shape.hidden;
        let d = shape.feature_dim;
        let encoder = MlpParams {
            layers: vec![
                Layer::glorot(3, h, Activation::Softplus, &mut rng),
                Layer::glorot(h, h, Activation::Softplus, &mut rng),
                Layer::glorot(2 * h, d, Activation::Linear, &mut rng),
            ],
        };
        let mut widths = vec![shape.estimator_inputs()];
        widths.extend(ESTIMATOR_HIDDEN);
        widths.push(1);
        let estimator = MlpParams {
            layers: widths
                .windows(2)
                .map(|w| Layer::glorot(w[0], w[1], Activation::Softplus, &mut rng))
                .collect(),
        };
        let model = PlseModel {
            version: MODEL_VERSION,
            shape,
            encoder,
            estimator,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks that layer sizes agree with `shape` and values are finite.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModel(m.to_string()));
        let s = &self.shape;
        let enc = &self.encoder.layers;
        if enc.len() != 3 {
            return bad("encoder must have three layers");
        }
        let h = s.hidden;
        let expect = [
            (3, h, Activation::Softplus),
            (h, h, Activation::Softplus),
            (2 * h, s.feature_dim, Activation::Linear),
        ];
        for (l, (i, o, a)) in enc.iter().zip(expect) {
            if l.inputs != i || l.outputs != o || l.activation != a {
                return bad("encoder layer sizes disagree with the model shape");
            }
        }
        if !(s.query_scale > 0.0 && s.query_scale.is_finite()) {
            return bad("query scale must be positive");
        }
        let est = &self.estimator.layers;
        if est.is_empty() || est[0].inputs != s.estimator_inputs() || est[est.len() - 1].outputs != 1 {
            return bad("estimator input/output width disagrees with the model shape");
        }
        if est.windows(2).any(|w| w[0].outputs != w[1].inputs) {
            return bad("adjacent estimator layers are incompatible");
        }
        if est[est.len() - 1].activation != Activation::Softplus {
            return bad("estimator output must be softplus");
        }
        for l in enc.iter().chain(est) {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return bad("layer buffer sizes disagree with declared dimensions");
            }
        }
        if !self.encoder.all_finite() || !self.estimator.all_finite() {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.shape.sampling_steps + 1
    }

    pub fn num_params(&self) -> usize {
        self.encoder.num_params() + self.estimator.num_params()
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zeros_like(),
            estimator: self.estimator.zeros_like(),
        }
    }

    /// Flat parameter vector, encoder first.
    pub fn to_flat(&self) -> Vec<f64> {
        self.encoder.values().chain(self.estimator.values()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        for (p, v) in self
            .encoder
            .values_mut()
            .chain(self.estimator.values_mut())
            .zip(flat)
        {
            *p = *v;
        }
    }

    fn check_ladder(&self, ladder: &SamplingLadder) -> Result<()> {
        if ladder.num_levels() != self.num_levels() {
            return Err(Error::LadderMismatch {
                expected: self.num_levels(),
                got: ladder.num_levels(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, cloud: &PointCloud) -> Result<FeatureVector> {
        Ok(FeatureVector(self.encode_cached(cloud)?.feature))
    }

    fn encode_cached(&self, cloud: &PointCloud) -> Result<LevelCache> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let [l1, l2, head] = &self.encoder.layers[..] else {
            unreachable!("validated encoder has three layers")
        };
        let n = cloud.len();
        let h = self.shape.hidden;
        let mut c = LevelCache {
            points: cloud.points.clone(),
            a1: vec![0.0; n * h],
            h1: vec![0.0; n * h],
            a2: vec![0.0; n * h],
            h2: vec![0.0; n * h],
            pooled: vec![0.0; 2 * h],
            argmax: vec![0; h],
            feature: vec![0.0; self.shape.feature_dim],
        };
        for (j, p) in cloud.iter().enumerate() {
            let span = j * h..(j + 1) * h;
            l1.forward_into(&p.to_array(), &mut c.a1[span.clone()], &mut c.h1[span.clone()]);
            let (h1, a2, h2) = (&c.h1[span.clone()], &mut c.a2[span.clone()], &mut c.h2[span.clone()]);
            l2.forward_into(h1, a2, h2);
        }
        // pooled = [mean_j h2_j, max_j h2_j]
        let (mean, global) = c.pooled.split_at_mut(h);
        global.fill(f64::NEG_INFINITY);
        for j in 0..n {
            let row = &c.h2[j * h..(j + 1) * h];
            for k in 0..h {
                mean[k] += row[k];
                if row[k] > global[k] {
                    global[k] = row[k];
                    c.argmax[k] = j;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        mean.iter_mut().for_each(|m| *m *= inv_n);
        // mean_j (W [h2_j; g] + b) = W [mean h2; g] + b for a linear head.
        let mut pre = vec![0.0; self.shape.feature_dim];
        head.forward_into(&c.pooled, &mut pre, &mut c.feature);
        Ok(c)
    }

    fn encode_backward(&self, c: &LevelCache, d_feature: &[f64], grads: &mut MlpParams) {
        let [l1, l2, head] = &self.encoder.layers[..] else {
            unreachable!("validated encoder has three layers")
        };
        let [g1, g2, gh] = &mut grads.layers[..] else {
            unreachable!("gradient mirrors the encoder")
        };
        let h = self.shape.hidden;
        let n = c.points.len();
        let mut d_pooled = vec![0.0; 2 * h];
        let identity = vec![0.0; self.shape.feature_dim];
        // The head is linear; its pre-activation value is irrelevant here.
        head.backward(&c.pooled, &identity, d_feature, Some(gh), &mut d_pooled);
        let (d_mean, d_global) = d_pooled.split_at(h);
        let inv_n = 1.0 / n as f64;
        let mut dh2 = vec![0.0; h];
        let mut dh1 = vec![0.0; h];
        let mut dx = [0.0; 0];
        for j in 0..n {
            for k in 0..h {
                dh2[k] = d_mean[k] * inv_n;
                if c.argmax[k] == j {
                    dh2[k] += d_global[k];
                }
            }
            let span = j * h..(j + 1) * h;
            l2.backward(&c.h1[span.clone()], &c.a2[span.clone()], &dh2, Some(g2), &mut dh1);
            l1.backward(&c.points[j].to_array(), &c.a1[span], &dh1, Some(g1), &mut dx);
        }
    }

    /// Features of every ladder level, concatenated `[f_0, …, f_S]`.
    pub fn encode_ladder(&self, ladder: &SamplingLadder) -> Result<Vec<f64>> {
        self.check_ladder(ladder)?;
        let mut out = Vec::with_capacity(self.shape.feature_dim * ladder.num_levels());
        for cloud in &ladder.clouds {
            out.extend(self.encode(cloud)?.0);
        }
        Ok(out)
    }

    fn estimator_input(&self, query: Point3, features: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 + features.len());
        x.extend((query * self.shape.query_scale).to_array());
        x.extend_from_slice(features);
        x
    }

    fn estimator_forward(&self, input: Vec<f64>) -> EstimatorCache {
        let mut acts = vec![input];
        let mut pres = Vec::with_capacity(self.estimator.layers.len());
        for layer in &self.estimator.layers {
            let mut pre = vec![0.0; layer.outputs];
            let mut out = vec![0.0; layer.outputs];
            layer.forward_into(acts.last().expect("non-empty"), &mut pre, &mut out);
            pres.push(pre);
            acts.push(out);
        }
        EstimatorCache { acts, pres }
    }

    /// Backward from `d_out` (dL/d prediction); returns the first `need`
    /// input gradients.
    fn estimator_backward(&self, c: &EstimatorCache, d_out: f64, mut grads: Option<&mut MlpParams>, need: usize) -> Vec<f64> {
        let layers = &self.estimator.layers;
        let mut d = vec![d_out];
        for (i, layer) in layers.iter().enumerate().rev() {
            let width = if i == 0 { need } else { layer.inputs };
            let mut dx = vec![0.0; width];
            let g = grads.as_deref_mut().map(|g| &mut g.layers[i]);
            layer.backward(&c.acts[i], &c.pres[i], &d, g, &mut dx);
            d = dx;
        }
        d
    }

    /// Predicted distance from precomputed ladder features.
    pub fn forward_with_features(&self, query: Point3, features: &[f64]) -> f64 {
        let c = self.estimator_forward(self.estimator_input(query, features));
        c.acts.last().expect("non-empty")[0]
    }

    /// Predicted distance and its query gradient from precomputed features.
    pub fn value_and_query_grad(&self, query: Point3, features: &[f64]) -> (f64, Point3) {
        let c = self.estimator_forward(self.estimator_input(query, features));
        let value = c.acts.last().expect("non-empty")[0];
        let g = self.estimator_backward(&c, 1.0, None, 3);
        (value, Point3::new(g[0], g[1], g[2]) * self.shape.query_scale)
    }

    pub fn forward(&self, query: Point3, ladder: &SamplingLadder) -> Result<f64> {
        Ok(self.forward_with_features(query, &self.encode_ladder(ladder)?))
    }

    /// Gradient of the predicted distance with respect to the query.
    pub fn grad_query(&self, query: Point3, ladder: &SamplingLadder) -> Result<Point3> {
        Ok(self.value_and_query_grad(query, &self.encode_ladder(ladder)?).1)
    }

    /// Parameter gradients of `loss_grad · g(query, ladder)`.
    pub fn backprop_params(&self, query: Point3, ladder: &SamplingLadder, loss_grad: f64) -> Result<ModelGrads> {
        let mut grads = self.zero_grads();
        self.accumulate_query_losses(ladder, &[query], |_, _| loss_grad, &mut grads)?;
        Ok(grads)
    }

    /// Shared path for training: encodes the ladder once, runs every query
    /// through the estimator, and backpropagates `d_loss(i, prediction)`.
    /// Returns the predictions.
    pub fn accumulate_query_losses(
        &self,
        ladder: &SamplingLadder,
        queries: &[Point3],
        d_loss: impl Fn(usize, f64) -> f64,
        grads: &mut ModelGrads,
    ) -> Result<Vec<f64>> {
        self.check_ladder(ladder)?;
        let caches = ladder
            .clouds
            .iter()
            .map(|c| self.encode_cached(c))
            .collect::<Result<Vec<_>>>()?;
        let features: Vec<f64> = caches.iter().flat_map(|c| c.feature.iter().copied()).collect();
        let width = self.shape.estimator_inputs();
        let mut d_features = vec![0.0; features.len()];
        let mut predictions = Vec::with_capacity(queries.len());
        for (i, &q) in queries.iter().enumerate() {
            let c = self.estimator_forward(self.estimator_input(q, &features));
            let pred = c.acts.last().expect("non-empty")[0];
            predictions.push(pred);
            let dl = d_loss(i, pred);
            if dl == 0.0 {
                continue;
            }
            let dx = self.estimator_backward(&c, dl, Some(&mut grads.estimator), width);
            for (a, b) in d_features.iter_mut().zip(&dx[3..]) {
                *a += b;
            }
        }
        let d = self.shape.feature_dim;
        for (level, cache) in caches.iter().enumerate() {
            let df = &d_features[level * d..(level + 1) * d];
            if df.iter().any(|v| *v != 0.0) {
                self.encode_backward(cache, df, &mut grads.encoder);
            }
        }
        Ok(predictions)
    }
}

struct LevelCache {
    points: Vec<Point3>,
    a1: Vec<f64>,
    h1: Vec<f64>,
    a2: Vec<f64>,
    h2: Vec<f64>,
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    feature: Vec<f64>,
}

struct EstimatorCache {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

/// Gradients shaped like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoder: MlpParams,
    pub estimator: MlpParams,
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) {
        self.encoder.add_assign(&other.encoder);
        self.estimator.add_assign(&other.estimator);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.encoder.values().chain(self.estimator.values()).collect()
    }

    pub fn all_zero(&self) -> bool {
        self.encoder.values().chain(self.estimator.values()).all(|v| v == 0.0)
    }
}
