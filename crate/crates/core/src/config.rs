//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear at most
//! once; unknown keys are rejected. `shapes` takes `;`-separated shape specs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::shapes::ShapeOracle;
use crate::training::TrainConfig;

/// Training recipe plus the synthetic dataset it runs on.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub shapes: Vec<ShapeOracle>,
    pub patches_per_shape: usize,
    pub sparse_points: usize,
    pub rate: usize,
    /// Held-out patches per shape used by evaluation harnesses.
    pub eval_patches_per_shape: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            shapes: vec![
                ShapeOracle::sphere(1.0).expect("valid"),
                ShapeOracle::torus(2.0, 0.5).expect("valid"),
                ShapeOracle::cuboid([1.0; 3]).expect("valid"),
            ],
            patches_per_shape: 22,
            sparse_points: 256,
            rate: 4,
            eval_patches_per_shape: 1,
        }
    }
}

pub const KEYS: &[&str] = &[
    "epochs",
    "threshold",
    "learning_rate",
    "batch_size",
    "queries_per_patch",
    "query_sigma",
    "seed",
    "feature_dim",
    "hidden",
    "sampling_steps",
    "curvature_k",
    "normals_k",
    "query_scale",
    "curriculum",
    "rotate",
    "step_size",
    "iterations",
    "seed_sigma",
    "shapes",
    "patches_per_shape",
    "sparse_points",
    "rate",
    "eval_patches_per_shape",
];

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        key: key.to_string(),
        msg: format!("cannot parse `{value}`"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config {
            line,
            key: key.to_string(),
            msg: format!("expected true or false, got `{value}`"),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::parse_with_keys(text)?.0)
    }

    /// Also returns the keys the text set explicitly, in file order.
    pub fn parse_with_keys(text: &str) -> Result<(Self, Vec<&'static str>)> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<(&'static str, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line,
                    key: content.to_string(),
                    msg: "expected `key = value`".into(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let err = |msg: String| Error::Config {
                line,
                key: key.to_string(),
                msg,
            };
            let Some(&known) = KEYS.iter().find(|k| **k == key) else {
                return Err(err("unknown key".into()));
            };
            if let Some((_, first)) = seen.iter().find(|(k, _)| *k == known) {
                return Err(err(format!("duplicate key (first set on line {first})")));
            }
            seen.push((known, line));
            let t = &mut cfg.train;
            match known {
                "epochs" => t.epochs = parse_num(line, key, value)?,
                "threshold" => t.threshold = parse_num(line, key, value)?,
                "learning_rate" => t.learning_rate = parse_num(line, key, value)?,
                "batch_size" => t.batch_size = parse_num(line, key, value)?,
                "queries_per_patch" => t.queries_per_patch = parse_num(line, key, value)?,
                "query_sigma" => t.query_sigma = parse_num(line, key, value)?,
                "seed" => t.seed = parse_num(line, key, value)?,
                "feature_dim" => t.model.feature_dim = parse_num(line, key, value)?,
                "hidden" => t.model.hidden = parse_num(line, key, value)?,
                "sampling_steps" => t.model.sampling_steps = parse_num(line, key, value)?,
                "curvature_k" => t.model.curvature_k = parse_num(line, key, value)?,
                "normals_k" => t.model.normals_k = parse_num(line, key, value)?,
                "query_scale" => t.model.query_scale = parse_num(line, key, value)?,
                "curriculum" => t.curriculum = parse_bool(line, key, value)?,
                "rotate" => t.rotate = parse_bool(line, key, value)?,
                "step_size" => t.projection.step_size = parse_num(line, key, value)?,
                "iterations" => t.projection.iterations = parse_num(line, key, value)?,
                "seed_sigma" => t.projection.seed_sigma = parse_num(line, key, value)?,
                "shapes" => {
                    cfg.shapes = value
                        .split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<ShapeOracle>().map_err(|e| err(e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "patches_per_shape" => cfg.patches_per_shape = parse_num(line, key, value)?,
                "sparse_points" => cfg.sparse_points = parse_num(line, key, value)?,
                "rate" => cfg.rate = parse_num(line, key, value)?,
                "eval_patches_per_shape" => cfg.eval_patches_per_shape = parse_num(line, key, value)?,
                _ => unreachable!("every key in KEYS is handled"),
            }
            cfg.check_key(known).map_err(|e| match e {
                Error::Config { .. } => e,
                other => err(other.to_string()),
            })?;
        }
        Ok((cfg, seen.into_iter().map(|(k, _)| k).collect()))
    }

    /// Range check for one key after it was set.
    fn check_key(&self, key: &str) -> Result<()> {
        let t = &self.train;
        let fail = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        match key {
            "epochs" if t.epochs == 0 => fail("must be at least 1"),
            "batch_size" if t.batch_size == 0 => fail("must be at least 1"),
            "queries_per_patch" if t.queries_per_patch == 0 => fail("must be at least 1"),
            "threshold" if !(0.0..=1.0).contains(&t.threshold) => fail("must lie in [0, 1]"),
            "learning_rate" if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) => fail("must be positive"),
            "query_sigma" if !(t.query_sigma >= 0.0 && t.query_sigma.is_finite()) => fail("must be >= 0"),
            "feature_dim" if t.model.feature_dim == 0 => fail("must be at least 1"),
            "hidden" if t.model.hidden == 0 => fail("must be at least 1"),
            "curvature_k" if t.model.curvature_k == 0 => fail("must be at least 1"),
            "normals_k" if t.model.normals_k < 3 => fail("must be at least 3"),
            "query_scale" if !(t.model.query_scale > 0.0 && t.model.query_scale.is_finite()) => fail("must be positive"),
            "step_size" if !(t.projection.step_size >= 0.0 && t.projection.step_size.is_finite()) => fail("must be >= 0"),
            "seed_sigma" if !(t.projection.seed_sigma >= 0.0 && t.projection.seed_sigma.is_finite()) => fail("must be >= 0"),
            "shapes" if self.shapes.is_empty() => fail("needs at least one shape"),
            "patches_per_shape" if self.patches_per_shape == 0 => fail("must be at least 1"),
            "sparse_points" if self.sparse_points < 32 => fail("must be at least 32"),
            "rate" if self.rate < 2 => fail("must be at least 2"),
            _ => Ok(()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialises every key; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &t.model;
        let p = &t.projection;
        let shapes: Vec<String> = self.shapes.iter().map(|s| s.to_string()).collect();
        let mut out = String::new();
        let rows: [(&str, String); 23] = [
            ("epochs", t.epochs.to_string()),
            ("threshold", t.threshold.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("queries_per_patch", t.queries_per_patch.to_string()),
            ("query_sigma", t.query_sigma.to_string()),
            ("seed", t.seed.to_string()),
            ("feature_dim", m.feature_dim.to_string()),
            ("hidden", m.hidden.to_string()),
            ("sampling_steps", m.sampling_steps.to_string()),
            ("curvature_k", m.curvature_k.to_string()),
            ("normals_k", m.normals_k.to_string()),
            ("query_scale", m.query_scale.to_string()),
            ("curriculum", t.curriculum.to_string()),
            ("rotate", t.rotate.to_string()),
            ("step_size", p.step_size.to_string()),
            ("iterations", p.iterations.to_string()),
            ("seed_sigma", p.seed_sigma.to_string()),
            ("shapes", shapes.join("; ")),
            ("patches_per_shape", self.patches_per_shape.to_string()),
            ("sparse_points", self.sparse_points.to_string()),
            ("rate", self.rate.to_string()),
            ("eval_patches_per_shape", self.eval_patches_per_shape.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
