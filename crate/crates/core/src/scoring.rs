//! Risk scorers: the fixed 2/1/1 rule, a linear margin ranker and a
//! degree-2 interaction ranker, both trained by seeded hinge-loss subgradient
//! descent.
//!
//! Trained models rank by raw margin `w . x + b`. Any monotone calibration of
//! that margin into a probability induces the same ordering, so none is applied.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::Serialize;
use thiserror::Error;

use crate::records::{parse_week_range, Candidate, FeatureVector, RecordId, BASE_DIM, CONTACT, COUGH, FEATURE_NAMES, FEVER};
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("model expects base dimension {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("no score available for record {0}")]
    UnknownRecord(RecordId),
}

/// Anything that can assign a risk score to a candidate.
pub trait Scorer: Send + Sync {
    fn score(&self, candidate: &Candidate) -> Result<f64, ScoringError>;

    /// Short human-readable identity used in traces and reports.
    fn describe(&self) -> String;

    /// Weeks whose labels went into this scorer, if it was trained.
    fn trained_on(&self) -> Option<RangeInclusive<u32>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ModelKind {
    RuleBased,
    Linear,
    Poly2,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::RuleBased => "rule",
            ModelKind::Linear => "linear",
            ModelKind::Poly2 => "poly2",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rule" | "rule-based" | "rule_based" => Ok(ModelKind::RuleBased),
            "linear" => Ok(ModelKind::Linear),
            "poly2" => Ok(ModelKind::Poly2),
            other => Err(format!("unknown model kind {other:?} (rule, linear, poly2)")),
        }
    }
}

/// `2 * contact + cough + fever`, in {0, .., 4}.
pub fn rule_score(fv: &FeatureVector) -> f64 {
    2.0 * fv.get(CONTACT) + fv.get(COUGH) + fv.get(FEVER)
}

/// Rule weights in canonical feature order.
pub fn rule_weights() -> Vec<f64> {
    let mut w = vec![0.0; BASE_DIM];
    w[CONTACT] = 2.0;
    w[COUGH] = 1.0;
    w[FEVER] = 1.0;
    w
}

pub fn poly2_dim(d: usize) -> usize {
    d + d * d.saturating_sub(1) / 2
}

/// Originals followed by `x[i] * x[j]` for every `i < j` in lexicographic
/// order. Squares are left out: on binary features they repeat the original.
pub fn expand_poly2(x: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = Vec::with_capacity(poly2_dim(d));
    out.extend_from_slice(x);
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(x[i] * x[j]);
        }
    }
    out
}

fn poly2_dot(weights: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    let mut s: f64 = weights[..d].iter().zip(x).map(|(w, v)| w * v).sum();
    let mut k = d;
    for i in 0..d {
        if x[i] == 0.0 {
            k += d - i - 1;
            continue;
        }
        for j in (i + 1)..d {
            s += weights[k] * x[i] * x[j];
            k += 1;
        }
    }
    s
}

/// Hash of the canonical feature order, stored with serialized models.
pub fn feature_order_hash() -> u64 {
    seed::fnv1a64(FEATURE_NAMES.join(",").as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskModel {
    pub kind: ModelKind,
    /// Over the model's feature space (`base_dim`, or `poly2_dim(base_dim)`).
    pub weights: Vec<f64>,
    pub bias: f64,
    pub base_dim: usize,
    /// Weeks whose labels trained the model, when known.
    pub train_weeks: Option<RangeInclusive<u32>>,
}

impl RiskModel {
    pub fn rule_based() -> Self {
        Self {
            kind: ModelKind::RuleBased,
            weights: rule_weights(),
            bias: 0.0,
            base_dim: BASE_DIM,
            train_weeks: None,
        }
    }

    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            kind: ModelKind::Linear,
            base_dim: weights.len(),
            weights,
            bias,
            train_weeks: None,
        }
    }

    pub fn with_train_weeks(mut self, weeks: RangeInclusive<u32>) -> Self {
        self.train_weeks = Some(weeks);
        self
    }

    pub fn feature_space_dim(&self) -> usize {
        match self.kind {
            ModelKind::RuleBased | ModelKind::Linear => self.base_dim,
            ModelKind::Poly2 => poly2_dim(self.base_dim),
        }
    }

    pub fn score_features(&self, fv: &FeatureVector) -> Result<f64, ScoringError> {
        if self.base_dim != BASE_DIM {
            return Err(ScoringError::Dimension {
                expected: self.base_dim,
                got: BASE_DIM,
            });
        }
        let x = fv.values();
        Ok(match self.kind {
            ModelKind::RuleBased => rule_score(fv),
            ModelKind::Linear => self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>(),
            ModelKind::Poly2 => self.bias + poly2_dot(&self.weights, x),
        })
    }

    /// Versioned plain-text form; every float is written in shortest
    /// round-trip decimal.
    pub fn to_text(&self) -> String {
        let mut s = String::from("testbandit-model v1\n");
        s.push_str(&format!("kind = {}\n", self.kind));
        s.push_str(&format!("base_dim = {}\n", self.base_dim));
        s.push_str(&format!("feature_order_hash = {:016x}\n", feature_order_hash()));
        if let Some(w) = &self.train_weeks {
            s.push_str(&format!("train_weeks = {}-{}\n", w.start(), w.end()));
        }
        s.push_str(&format!("bias = {}\n", self.bias));
        s.push_str(&format!("weights = {}\n", self.weights.len()));
        for w in &self.weights {
            s.push_str(&format!("{w}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelFormatError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, "testbandit-model v1")) => {}
            Some((_, other)) => return Err(ModelFormatError::Version(other.to_string())),
            None => return Err(ModelFormatError::Version(String::new())),
        }
        let mut kind = None;
        let mut base_dim = None;
        let mut bias = None;
        let mut train_weeks = None;
        let mut count = None;
        for (line, text) in lines.by_ref() {
            let (k, v) = text
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ModelFormatError::Line(line, text.to_string()))?;
            let bad = || ModelFormatError::Line(line, text.to_string());
            match k {
                "kind" => kind = Some(v.parse::<ModelKind>().map_err(|_| bad())?),
                "base_dim" => base_dim = Some(v.parse::<usize>().map_err(|_| bad())?),
                "feature_order_hash" => {
                    let h = u64::from_str_radix(v, 16).map_err(|_| bad())?;
                    if h != feature_order_hash() {
                        return Err(ModelFormatError::FeatureOrder);
                    }
                }
                "train_weeks" => train_weeks = Some(parse_week_range(v).map_err(|_| bad())?),
                "bias" => bias = Some(v.parse::<f64>().map_err(|_| bad())?),
                "weights" => {
                    count = Some(v.parse::<usize>().map_err(|_| bad())?);
                    break;
                }
                _ => return Err(bad()),
            }
        }
        let missing = ModelFormatError::Missing;
        let kind = kind.ok_or(missing("kind"))?;
        let base_dim = base_dim.ok_or(missing("base_dim"))?;
        let bias = bias.ok_or(missing("bias"))?;
        let count = count.ok_or(missing("weights"))?;
        let weights = lines
            .map(|(line, t)| t.parse::<f64>().map_err(|_| ModelFormatError::Line(line, t.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let model = Self {
            kind,
            weights,
            bias,
            base_dim,
            train_weeks,
        };
        if model.weights.len() != count || count != model.feature_space_dim() {
            return Err(ModelFormatError::WeightCount {
                declared: count,
                found: model.weights.len(),
                expected: model.feature_space_dim(),
            });
        }
        if kind == ModelKind::RuleBased && (model.weights != rule_weights() || bias != 0.0) {
            return Err(ModelFormatError::RuleWeights);
        }
        Ok(model)
    }
}

impl Scorer for RiskModel {
    fn score(&self, candidate: &Candidate) -> Result<f64, ScoringError> {
        self.score_features(&candidate.features)
    }

    fn describe(&self) -> String {
        match &self.train_weeks {
            Some(w) => format!("{}[weeks {}-{}]", self.kind, w.start(), w.end()),
            None => self.kind.to_string(),
        }
    }

    fn trained_on(&self) -> Option<RangeInclusive<u32>> {
        self.train_weeks.clone()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelFormatError {
    #[error("unsupported model header {0:?}")]
    Version(String),
    #[error("line {0}: cannot parse {1:?}")]
    Line(usize, String),
    #[error("missing `{0}`")]
    Missing(&'static str),
    #[error("feature order hash does not match this build's feature order")]
    FeatureOrder,
    #[error("weights: declared {declared}, found {found}, model needs {expected}")]
    WeightCount {
        declared: usize,
        found: usize,
        expected: usize,
    },
    #[error("rule-based model must carry the canonical 2/1/1 weights")]
    RuleWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ClassWeighting {
    None,
    /// Each class carries half the total loss weight.
    #[default]
    Balanced,
}

impl FromStr for ClassWeighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "none" => Ok(ClassWeighting::None),
            "balanced" => Ok(ClassWeighting::Balanced),
            other => Err(format!("unknown class weighting {other:?} (none, balanced)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
            class_weighting: ClassWeighting::Balanced,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("training set has only {0} examples; need both classes")]
    SingleClass(&'static str),
    #[error("{0} models are not trainable")]
    NotTrainable(ModelKind),
    #[error("invalid training config: {0}")]
    Config(String),
}

struct Prepared {
    /// Expanded features with a trailing constant 1 for the bias.
    rows: Vec<Vec<f64>>,
    signs: Vec<f64>,
    costs: Vec<f64>,
}

fn prepare(dataset: &[(FeatureVector, bool)], kind: ModelKind, weighting: ClassWeighting) -> Prepared {
    let n = dataset.len() as f64;
    let n_pos = dataset.iter().filter(|(_, y)| *y).count() as f64;
    let n_neg = n - n_pos;
    let (c_pos, c_neg) = match weighting {
        ClassWeighting::None => (1.0, 1.0),
        ClassWeighting::Balanced => (n / (2.0 * n_pos), n / (2.0 * n_neg)),
    };
    let mut rows = Vec::with_capacity(dataset.len());
    let mut signs = Vec::with_capacity(dataset.len());
    let mut costs = Vec::with_capacity(dataset.len());
    for (fv, y) in dataset {
        let mut row = match kind {
            ModelKind::Poly2 => expand_poly2(fv.values()),
            _ => fv.values().to_vec(),
        };
        row.push(1.0);
        rows.push(row);
        signs.push(if *y { 1.0 } else { -1.0 });
        costs.push(if *y { c_pos } else { c_neg });
    }
    Prepared { rows, signs, costs }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn prepared_objective(w: &[f64], data: &Prepared, lambda: f64) -> f64 {
    let loss: f64 = data
        .rows
        .iter()
        .zip(&data.signs)
        .zip(&data.costs)
        .map(|((x, y), c)| c * (1.0 - y * dot(w, x)).max(0.0))
        .sum();
    0.5 * lambda * dot(w, w) + loss / data.rows.len() as f64
}

/// Regularized hinge objective `lambda/2 |(w, b)|^2 + mean_i c_i max(0, 1 - y_i (w . x_i + b))`
/// minimized by [`train`]. The bias is treated as the weight of a constant
/// feature and is regularized with the rest.
pub fn objective(model: &RiskModel, dataset: &[(FeatureVector, bool)], config: &TrainConfig) -> f64 {
    let data = prepare(dataset, model.kind, config.class_weighting);
    let mut w = model.weights.clone();
    w.push(model.bias);
    prepared_objective(&w, &data, config.lambda)
}

/// Trains a linear or degree-2 ranker.
///
/// Pegasos-style stochastic subgradient descent: step `1 / (lambda t)`,
/// projection onto the ball that must contain the optimum, one seeded shuffled
/// pass per epoch. The objective is evaluated at the start and after every
/// epoch (last iterate and epoch-average iterate); the best checkpoint is
/// returned. Single-threaded and bitwise reproducible for a given config.
pub fn train(dataset: &[(FeatureVector, bool)], kind: ModelKind, config: &TrainConfig) -> Result<RiskModel, TrainError> {
    if kind == ModelKind::RuleBased {
        return Err(TrainError::NotTrainable(kind));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(TrainError::Config(format!("lambda must be > 0, got {}", config.lambda)));
    }
    if config.epochs == 0 {
        return Err(TrainError::Config("epochs must be >= 1".into()));
    }
    if dataset.is_empty() {
        return Err(TrainError::Empty);
    }
    match dataset.iter().filter(|(_, y)| *y).count() {
        0 => return Err(TrainError::SingleClass("negative")),
        p if p == dataset.len() => return Err(TrainError::SingleClass("positive")),
        _ => {}
    }

    let data = prepare(dataset, kind, config.class_weighting);
    let dim = data.rows[0].len();
    let lambda = config.lambda;
    let mean_cost = data.costs.iter().sum::<f64>() / data.costs.len() as f64;
    let radius = (2.0 * mean_cost / lambda).sqrt();

    let mut rng = seed::rng(config.seed);
    let mut order: Vec<usize> = (0..data.rows.len()).collect();
    let mut w = vec![0.0; dim];
    let mut best_w = w.clone();
    let mut best_obj = prepared_objective(&w, &data, lambda);
    let mut t: u64 = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut avg = vec![0.0; dim];
        for (step, &i) in order.iter().enumerate() {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &data.rows[i];
            let y = data.signs[i];
            let margin = y * dot(&w, x);
            let shrink = 1.0 - 1.0 / t as f64;
            w.iter_mut().for_each(|v| *v *= shrink);
            if margin < 1.0 {
                let g = eta * data.costs[i] * y;
                w.iter_mut().zip(x).for_each(|(v, xi)| *v += g * xi);
            }
            let norm = dot(&w, &w).sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|v| *v *= s);
            }
            let k = (step + 1) as f64;
            avg.iter_mut().zip(&w).for_each(|(a, v)| *a += (v - *a) / k);
        }
        for candidate in [&w, &avg] {
            let obj = prepared_objective(candidate, &data, lambda);
            if obj < best_obj {
                best_obj = obj;
                best_w.clone_from(candidate);
            }
        }
    }

    let bias = best_w.pop().expect("bias slot");
    Ok(RiskModel {
        kind,
        weights: best_w,
        bias,
        base_dim: BASE_DIM,
        train_weeks: None,
    })
}
