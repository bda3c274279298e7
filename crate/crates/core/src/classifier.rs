//! Sentiment heads trained on frozen sentence embeddings.
//!
//! Two kinds are supported:
//! - a linear SVM (hinge loss, L2 penalty) trained by full-batch subgradient
//!   descent with step `lr / sqrt(t)`, whose margins are mapped to
//!   probabilities by Platt scaling fitted on a held-out split;
//! - a one-hidden-layer tanh MLP with a sigmoid output, trained by full-batch
//!   gradient descent on cross-entropy.
//!
//! Both produce positivity scores in `[0, 1]`, so relative-sentiment
//! arithmetic is comparable across kinds.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Svm,
    Mlp,
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifierKind::Svm => "svm",
            ClassifierKind::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub heldout_fraction: f64,
    pub hidden_units: usize,
}

impl Hyperparams {
    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Svm => Hyperparams {
                l2: 1e-3,
                epochs: 200,
                learning_rate: 0.1,
                heldout_fraction: 0.1,
                hidden_units: 0,
            },
            ClassifierKind::Mlp => Hyperparams {
                l2: 1e-4,
                epochs: 300,
                learning_rate: 0.5,
                heldout_fraction: 0.1,
                hidden_units: 100,
            },
        }
    }

    fn validate(&self, kind: ClassifierKind) -> Result<()> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid("l2 must be a non-negative number"));
        }
        if self.epochs == 0 || self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::invalid("epochs and learning rate must be positive"));
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 1.0) {
            return Err(Error::invalid("heldout fraction must lie in (0, 1)"));
        }
        if kind == ClassifierKind::Mlp && self.hidden_units == 0 {
            return Err(Error::invalid("MLP needs at least one hidden unit"));
        }
        Ok(())
    }
}

/// Logistic map from a raw margin to a probability: `sigmoid(a·m + b)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    pub const IDENTITY: Calibration = Calibration { a: 1.0, b: 0.0 };

    pub fn apply(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.b)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Weights {
    Linear {
        w: Vec<f64>,
        bias: f64,
    },
    Mlp {
        /// `hidden × dimension`, row-major.
        hidden_weights: Vec<Vec<f64>>,
        hidden_bias: Vec<f64>,
        output_weights: Vec<f64>,
        output_bias: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentimentModel {
    pub kind: ClassifierKind,
    pub dimension: usize,
    pub weights: Weights,
    pub calibration: Calibration,
    pub seed: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl SentimentModel {
    /// Raw decision value: SVM margin `w·x + b`, or the MLP output logit.
    pub fn margin(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: e.len(),
            });
        }
        Ok(match &self.weights {
            Weights::Linear { w, bias } => dot(w, e) + bias,
            Weights::Mlp {
                hidden_weights,
                hidden_bias,
                output_weights,
                output_bias,
            } => {
                hidden_weights
                    .iter()
                    .zip(hidden_bias)
                    .zip(output_weights)
                    .map(|((row, c), v)| v * (dot(row, e) + c).tanh())
                    .sum::<f64>()
                    + output_bias
            }
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        std::fs::write(path, json + "\n")
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let model: SentimentModel = serde_json::from_str(&src).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(model)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Positivity of one embedding, in `[0, 1]`.
pub fn score(model: &SentimentModel, e: &EmbeddingVector) -> Result<f64> {
    Ok(model.calibration.apply(model.margin(e.as_slice())?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub n_train: usize,
    pub n_heldout: usize,
    pub heldout_accuracy: f64,
    pub epochs: usize,
    /// Training objective after each epoch.
    pub objective: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
}

/// Accuracy of `score > 0.5` against labels.
pub fn evaluate(model: &SentimentModel, data: &[(EmbeddingVector, i8)]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut correct = 0usize;
    for (e, label) in data {
        let positive = score(model, e)? > 0.5;
        if positive == (*label > 0) {
            correct += 1;
        }
    }
    Ok(Evaluation {
        n: data.len(),
        accuracy: correct as f64 / data.len() as f64,
    })
}

struct Split {
    train: Vec<usize>,
    heldout: Vec<usize>,
}

/// Seeded split stratified by label; each class contributes at least one
/// example to each side.
fn stratified_split(labels: &[i8], fraction: f64, rng: &mut ChaCha8Rng) -> Split {
    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for class in [1i8, -1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).clamp(1, idx.len() - 1);
        heldout.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.shuffle(rng);
    heldout.sort_unstable();
    Split { train, heldout }
}

fn to_matrix(data: &[(EmbeddingVector, i8)], idx: &[usize], d: usize) -> (Array2<f64>, Array1<f64>) {
    let mut x = Array2::zeros((idx.len(), d));
    let mut y = Array1::zeros(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        x.row_mut(row)
            .assign(&ArrayView1::from(data[i].0.as_slice()));
        y[row] = data[i].1 as f64;
    }
    (x, y)
}

fn check_training_data(data: &[(EmbeddingVector, i8)]) -> Result<usize> {
    let d = data
        .first()
        .map(|(e, _)| e.dimension())
        .ok_or_else(|| Error::invalid("no training data"))?;
    for (e, label) in data {
        if e.dimension() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: e.dimension(),
            });
        }
        if *label != 1 && *label != -1 {
            return Err(Error::invalid(format!("label {label} is not ±1")));
        }
    }
    let pos = data.iter().filter(|(_, l)| *l == 1).count();
    let neg = data.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 examples per class, got {pos} positive and {neg} negative"
        )));
    }
    Ok(d)
}

pub fn train(
    data: &[(EmbeddingVector, i8)],
    kind: ClassifierKind,
    params: &Hyperparams,
    seed: u64,
) -> Result<(SentimentModel, TrainReport)> {
    params.validate(kind)?;
    let d = check_training_data(data)?;
    let labels: Vec<i8> = data.iter().map(|(_, l)| *l).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = stratified_split(&labels, params.heldout_fraction, &mut rng);
    let (x, y) = to_matrix(data, &split.train, d);
    let (xh, yh) = to_matrix(data, &split.heldout, d);

    let (weights, calibration, objective) = match kind {
        ClassifierKind::Svm => {
            let (w, bias, objective) = train_svm(&x, &y, params);
            let margins = xh.dot(&w) + bias;
            let cal = platt_scaling(margins.as_slice().expect("contiguous"), yh.as_slice().expect("contiguous"));
            (
                Weights::Linear {
                    w: w.to_vec(),
                    bias,
                },
                cal,
                objective,
            )
        }
        ClassifierKind::Mlp => {
            let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
            init_rng.set_stream(1);
            let (mlp, objective) = train_mlp(&x, &y, params, &mut init_rng);
            (mlp.into_weights(), Calibration::IDENTITY, objective)
        }
    };

    let mut metadata = BTreeMap::new();
    metadata.insert("hyperparams".to_string(), serde_json::to_value(params).expect("serializes"));
    let model = SentimentModel {
        kind,
        dimension: d,
        weights,
        calibration,
        seed,
        metadata,
    };
    let heldout: Vec<(EmbeddingVector, i8)> =
        split.heldout.iter().map(|&i| data[i].clone()).collect();
    let eval = evaluate(&model, &heldout)?;
    let report = TrainReport {
        n_train: split.train.len(),
        n_heldout: split.heldout.len(),
        heldout_accuracy: eval.accuracy,
        epochs: params.epochs,
        objective,
    };
    Ok((model, report))
}

/// `λ/2 |w|² + mean(max(0, 1 - y (w·x + b)))`.
pub fn svm_objective(x: &Array2<f64>, y: &Array1<f64>, w: &Array1<f64>, bias: f64, l2: f64) -> f64 {
    let margins = x.dot(w) + bias;
    let hinge: f64 = margins
        .iter()
        .zip(y)
        .map(|(m, t)| (1.0 - t * m).max(0.0))
        .sum::<f64>()
        / y.len() as f64;
    0.5 * l2 * w.dot(w) + hinge
}

/// Full-batch subgradient descent. A step that would raise the objective is
/// halved (up to 30 times) and skipped if it still does, so the objective
/// sequence is non-increasing.
fn train_svm(x: &Array2<f64>, y: &Array1<f64>, params: &Hyperparams) -> (Array1<f64>, f64, Vec<f64>) {
    let n = y.len() as f64;
    let mut w = Array1::<f64>::zeros(x.ncols());
    let mut bias = 0.0;
    let mut current = svm_objective(x, y, &w, bias, params.l2);
    let mut history = Vec::with_capacity(params.epochs);
    for t in 1..=params.epochs {
        let margins = x.dot(&w) + bias;
        // coefficient -y/n for every example inside the margin
        let coef: Array1<f64> = margins
            .iter()
            .zip(y)
            .map(|(m, t)| if t * m < 1.0 { -t / n } else { 0.0 })
            .collect();
        let grad_w = x.t().dot(&coef) + &w * params.l2;
        let grad_b = coef.sum();

        let mut step = params.learning_rate / (t as f64).sqrt();
        for _ in 0..30 {
            let cand_w = &w - &(&grad_w * step);
            let cand_b = bias - step * grad_b;
            let cand = svm_objective(x, y, &cand_w, cand_b, params.l2);
            if cand <= current {
                w = cand_w;
                bias = cand_b;
                current = cand;
                break;
            }
            step *= 0.5;
        }
        history.push(current);
    }
    (w, bias, history)
}

/// Platt scaling: logistic regression of labels on margins with Platt's
/// smoothed targets, solved by Newton's method with backtracking.
fn platt_scaling(margins: &[f64], labels: &[f64]) -> Calibration {
    let n_pos = labels.iter().filter(|&&l| l > 0.0).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l > 0.0 { hi } else { lo }).collect();

    let loss = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(m, t)| {
                let z = a * m + b;
                // log(1 + e^z) - t z, computed stably
                let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                softplus - t * z
            })
            .sum()
    };

    let (mut a, mut b) = (1.0, 0.0);
    let mut f = loss(a, b);
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 1e-12, 0.0, 1e-12);
        for (m, t) in margins.iter().zip(&targets) {
            let p = sigmoid(a * m + b);
            let r = p - t;
            let s = p * (1.0 - p);
            ga += r * m;
            gb += r;
            haa += s * m * m;
            hab += s * m;
            hbb += s;
        }
        if ga.abs() < 1e-10 && gb.abs() < 1e-10 {
            break;
        }
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-10 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = loss(na, nb);
            if nf < f {
                a = na;
                b = nb;
                f = nf;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Calibration { a, b }
}

/// Dense MLP parameters: `logit = v·tanh(W x + c) + d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array1<f64>,
    pub output_bias: f64,
}

impl MlpParams {
    pub fn init(dimension: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let l1 = (6.0 / (dimension + hidden) as f64).sqrt();
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        MlpParams {
            hidden_weights: Array2::from_shape_fn((hidden, dimension), |_| rng.random_range(-l1..l1)),
            hidden_bias: Array1::zeros(hidden),
            output_weights: Array1::from_shape_fn(hidden, |_| rng.random_range(-l2..l2)),
            output_bias: 0.0,
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.hidden_weights.iter().copied().collect();
        v.extend(self.hidden_bias.iter());
        v.extend(self.output_weights.iter());
        v.push(self.output_bias);
        v
    }

    pub fn from_flat(flat: &[f64], dimension: usize, hidden: usize) -> Self {
        let (w, rest) = flat.split_at(hidden * dimension);
        let (c, rest) = rest.split_at(hidden);
        let (v, rest) = rest.split_at(hidden);
        MlpParams {
            hidden_weights: Array2::from_shape_vec((hidden, dimension), w.to_vec()).expect("shape"),
            hidden_bias: Array1::from(c.to_vec()),
            output_weights: Array1::from(v.to_vec()),
            output_bias: rest[0],
        }
    }

    fn into_weights(self) -> Weights {
        Weights::Mlp {
            hidden_weights: self.hidden_weights.outer_iter().map(|r| r.to_vec()).collect(),
            hidden_bias: self.hidden_bias.to_vec(),
            output_weights: self.output_weights.to_vec(),
            output_bias: self.output_bias,
        }
    }

    /// Mean cross-entropy against `(y + 1) / 2` plus `λ/2 (|W|² + |v|²)`,
    /// and its gradient.
    pub fn loss_and_gradient(&self, x: &Array2<f64>, y: &Array1<f64>, l2: f64) -> (f64, MlpParams) {
        let n = y.len() as f64;
        let pre = x.dot(&self.hidden_weights.t()) + &self.hidden_bias;
        let h = pre.mapv(f64::tanh);
        let logits = h.dot(&self.output_weights) + self.output_bias;

        let mut loss = 0.0;
        let mut dz = Array1::zeros(y.len());
        for i in 0..y.len() {
            let z = logits[i];
            let t = (y[i] + 1.0) / 2.0;
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            loss += softplus - t * z;
            dz[i] = (sigmoid(z) - t) / n;
        }
        loss = loss / n
            + 0.5 * l2 * (self.hidden_weights.mapv(|v| v * v).sum() + self.output_weights.dot(&self.output_weights));

        let grad_v = h.t().dot(&dz) + &self.output_weights * l2;
        let grad_d = dz.sum();
        let dh = dz
            .view()
            .insert_axis(Axis(1))
            .dot(&self.output_weights.view().insert_axis(Axis(0)));
        let da = dh * h.mapv(|v| 1.0 - v * v);
        let grad_w = da.t().dot(x) + &self.hidden_weights * l2;
        let grad_c = da.sum_axis(Axis(0));
        (
            loss,
            MlpParams {
                hidden_weights: grad_w,
                hidden_bias: grad_c,
                output_weights: grad_v,
                output_bias: grad_d,
            },
        )
    }
}

fn train_mlp(
    x: &Array2<f64>,
    y: &Array1<f64>,
    params: &Hyperparams,
    rng: &mut ChaCha8Rng,
) -> (MlpParams, Vec<f64>) {
    let mut p = MlpParams::init(x.ncols(), params.hidden_units, rng);
    let mut history = Vec::with_capacity(params.epochs);
    let lr = params.learning_rate;
    for _ in 0..params.epochs {
        let (loss, g) = p.loss_and_gradient(x, y, params.l2);
        p.hidden_weights.scaled_add(-lr, &g.hidden_weights);
        p.hidden_bias.scaled_add(-lr, &g.hidden_bias);
        p.output_weights.scaled_add(-lr, &g.output_weights);
        p.output_bias -= lr * g.output_bias;
        history.push(loss);
    }
    (p, history)
}
