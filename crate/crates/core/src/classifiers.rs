//! Feed-forward MLP over patient feature vectors, and construction of the
//! raw-expression baseline feature spaces.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::checkpoint::{self, argmax, softmax_rows, In, Out};
use crate::error::{Error, Result};
use crate::expression::PatientProfile;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureSpace {
    Embedding,
    ExpressionAll,
    ExpressionOverlap,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineMode {
    /// Union of genes; genes a dataset does not measure are 0.
    All,
    /// Only genes measured in every dataset.
    Overlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub patient_ids: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<u8>,
    pub space: FeatureSpace,
}

impl FeatureDataset {
    pub fn new(patient_ids: Vec<String>, features: Array2<f64>, labels: Vec<u8>, space: FeatureSpace) -> Result<Self> {
        if features.nrows() != labels.len() || patient_ids.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} rows, {} ids, {} labels",
                features.nrows(),
                patient_ids.len(),
                labels.len()
            )));
        }
        Ok(Self {
            patient_ids,
            features,
            labels,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }
}

/// Gene columns for the expression baselines over the given datasets.
pub fn baseline_gene_space(datasets: &[&[PatientProfile]], mode: BaselineMode) -> Result<Vec<String>> {
    let sets: Vec<BTreeSet<&str>> = datasets
        .iter()
        .map(|ds| ds.iter().flat_map(|p| p.z_values.keys().map(String::as_str)).collect())
        .collect();
    let genes: BTreeSet<&str> = match mode {
        BaselineMode::All => sets.iter().flatten().copied().collect(),
        BaselineMode::Overlap => {
            let mut it = sets.iter();
            let first = it.next().cloned().unwrap_or_default();
            it.fold(first, |acc, s| acc.intersection(s).copied().collect())
        }
    };
    if genes.is_empty() {
        return Err(match mode {
            BaselineMode::Overlap => Error::NoCommonGenes,
            BaselineMode::All => Error::InvalidInput("datasets contain no genes".into()),
        });
    }
    Ok(genes.into_iter().map(str::to_string).collect())
}

/// Rows of z-values over `genes`; unmeasured genes are 0.
pub fn project_profiles(profiles: &[PatientProfile], genes: &[String]) -> Array2<f64> {
    let mut x = Array2::zeros((profiles.len(), genes.len()));
    for (r, p) in profiles.iter().enumerate() {
        for (c, g) in genes.iter().enumerate() {
            if let Some(&z) = p.z_values.get(g) {
                x[[r, c]] = z;
            }
        }
    }
    x
}

pub fn make_baseline_features(datasets: &[&[PatientProfile]], mode: BaselineMode) -> Result<FeatureDataset> {
    if datasets.is_empty() {
        return Err(Error::InvalidInput("no datasets given".into()));
    }
    let genes = baseline_gene_space(datasets, mode)?;
    let all: Vec<PatientProfile> = datasets.iter().flat_map(|d| d.iter().cloned()).collect();
    let space = match mode {
        BaselineMode::All => FeatureSpace::ExpressionAll,
        BaselineMode::Overlap => FeatureSpace::ExpressionOverlap,
    };
    FeatureDataset::new(
        all.iter().map(|p| p.patient_id.clone()).collect(),
        project_profiles(&all, &genes),
        all.iter().map(|p| p.label).collect(),
        space,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LrSchedule {
    Constant,
    /// Halve the rate after two consecutive epochs without improvement.
    Adaptive,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidParameter(format!("unknown activation {other:?}"))),
        }
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::InvalidParameter(format!("unknown solver {other:?}"))),
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(LrSchedule::Constant),
            "adaptive" => Ok(LrSchedule::Adaptive),
            other => Err(Error::InvalidParameter(format!("unknown learning rate schedule {other:?}"))),
        }
    }
}

pub const HIDDEN_GRID: &[&[usize]] = &[&[100], &[50, 50], &[30, 20, 10]];
pub const ALPHA_GRID: &[f64] = &[1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub alpha: f64,
    pub schedule: LrSchedule,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: vec![100],
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            alpha: 1e-4,
            schedule: LrSchedule::Constant,
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 200,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("hidden layer of width 0".into()));
        }
        if !(self.learning_rate > 0.0) || self.alpha < 0.0 || self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "learning rate and batch size must be positive, alpha non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_grid(&self) -> Result<()> {
        self.validate()?;
        if !HIDDEN_GRID.contains(&self.hidden.as_slice()) {
            return Err(Error::InvalidParameter(format!(
                "hidden layer sizes {:?} not in the allowed grid",
                self.hidden
            )));
        }
        if !ALPHA_GRID.contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha {} not in the allowed grid", self.alpha)));
        }
        Ok(())
    }

    pub fn grid(base: &MlpParams) -> Vec<MlpParams> {
        let mut out = Vec::new();
        for h in HIDDEN_GRID {
            for activation in [Activation::Tanh, Activation::Relu] {
                for optimizer in [Optimizer::Sgd, Optimizer::Adam] {
                    for &alpha in ALPHA_GRID {
                        for schedule in [LrSchedule::Constant, LrSchedule::Adaptive] {
                            out.push(MlpParams {
                                hidden: h.to_vec(),
                                activation,
                                optimizer,
                                alpha,
                                schedule,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub params: MlpParams,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub loss_history: Vec<f64>,
}

struct Trace {
    /// Inputs to each layer (the first is the batch itself).
    inputs: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl MlpModel {
    pub fn new(in_dim: usize, params: MlpParams, seed: u64) -> Result<Self> {
        params.validate()?;
        if in_dim == 0 {
            return Err(Error::InvalidInput("feature width is zero".into()));
        }
        let mut rng = seed::rng(seed::derive(seed, "mlp-init"));
        let mut dims = vec![in_dim];
        dims.extend(&params.hidden);
        dims.push(2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-limit..limit)));
            biases.push(Array1::from_shape_fn(w[1], |_| rng.random_range(-limit..limit)));
        }
        Ok(Self {
            params,
            weights,
            biases,
            loss_history: Vec::new(),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    fn act(&self, z: f64) -> f64 {
        match self.params.activation {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn act_grad(&self, a: f64) -> f64 {
        match self.params.activation {
            Activation::Relu => (a > 0.0) as u8 as f64,
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Trace {
        let mut inputs = vec![x.clone()];
        let last = self.weights.len() - 1;
        let mut logits = None;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = inputs[l].dot(w) + b;
            if l == last {
                logits = Some(z);
            } else {
                inputs.push(z.mapv(|v| self.act(v)));
            }
        }
        Trace {
            inputs,
            logits: logits.expect("output layer"),
        }
    }

    /// Mean cross-entropy plus `alpha / (2 n) Σ‖W‖²`, and its gradients.
    pub fn loss_and_gradients(&self, x: &Array2<f64>, y: &[u8]) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
        let n = x.nrows() as f64;
        let t = self.forward(x);
        let p = softmax_rows(&t.logits);
        let mut loss = 0.0;
        let mut delta = p.clone();
        for (i, &label) in y.iter().enumerate() {
            loss -= p[[i, label as usize]].max(1e-300).ln();
            delta[[i, label as usize]] -= 1.0;
        }
        delta /= n;
        let l2: f64 = self.weights.iter().map(|w| w.iter().map(|v| v * v).sum::<f64>()).sum();
        loss = loss / n + self.params.alpha * l2 / (2.0 * n);

        let mut gw = vec![Array2::zeros((0, 0)); self.weights.len()];
        let mut gb = vec![Array1::zeros(0); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            gw[l] = t.inputs[l].t().dot(&delta) + &(&self.weights[l] * (self.params.alpha / n));
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut d = delta.dot(&self.weights[l].t());
                ndarray::Zip::from(&mut d).and(&t.inputs[l]).for_each(|d, &a| *d *= self.act_grad(a));
                delta = d;
            }
        }
        (loss, gw, gb)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim(),
                got: x.ncols(),
            });
        }
        Ok(softmax_rows(&self.forward(x).logits))
    }
}

struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    t: i32,
}

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const PLATEAU_TOL: f64 = 1e-4;

pub fn train_mlp(train: &FeatureDataset, params: &MlpParams, seed: u64) -> Result<MlpModel> {
    if train.width() == 0 {
        return Err(Error::InvalidInput("feature width is zero".into()));
    }
    if train.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 training samples, got {}", train.len())));
    }
    let mut model = MlpModel::new(train.width(), params.clone(), seed)?;
    let mut rng = seed::rng(seed::derive(seed, "mlp-batches"));
    let zeros_w: Vec<Array2<f64>> = model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect();
    let zeros_b: Vec<Array1<f64>> = model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect();
    let mut vel_w = zeros_w.clone();
    let mut vel_b = zeros_b.clone();
    let mut adam = AdamState {
        m: zeros_w.clone(),
        v: zeros_w,
        mb: zeros_b.clone(),
        vb: zeros_b,
        t: 0,
    };
    let mut lr = params.learning_rate;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let batch = params.batch_size.min(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let x = train.features.select(Axis(0), chunk);
            let y: Vec<u8> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (loss, gw, gb) = model.loss_and_gradients(&x, &y);
            epoch_loss += loss * chunk.len() as f64;
            match params.optimizer {
                Optimizer::Sgd => {
                    for l in 0..model.weights.len() {
                        vel_w[l] = &vel_w[l] * MOMENTUM - &(&gw[l] * lr);
                        vel_b[l] = &vel_b[l] * MOMENTUM - &(&gb[l] * lr);
                        model.weights[l] += &vel_w[l];
                        model.biases[l] += &vel_b[l];
                    }
                }
                Optimizer::Adam => {
                    adam.t += 1;
                    let c1 = 1.0 - BETA1.powi(adam.t);
                    let c2 = 1.0 - BETA2.powi(adam.t);
                    let step = lr * c2.sqrt() / c1;
                    for l in 0..model.weights.len() {
                        adam.m[l] = &adam.m[l] * BETA1 + &(&gw[l] * (1.0 - BETA1));
                        adam.v[l] = &adam.v[l] * BETA2 + &(gw[l].mapv(|g| g * g) * (1.0 - BETA2));
                        adam.mb[l] = &adam.mb[l] * BETA1 + &(&gb[l] * (1.0 - BETA1));
                        adam.vb[l] = &adam.vb[l] * BETA2 + &(gb[l].mapv(|g| g * g) * (1.0 - BETA2));
                        let upd_w = ndarray::Zip::from(&adam.m[l])
                            .and(&adam.v[l])
                            .map_collect(|&m, &v| step * m / (v.sqrt() + ADAM_EPS));
                        let upd_b = ndarray::Zip::from(&adam.mb[l])
                            .and(&adam.vb[l])
                            .map_collect(|&m, &v| step * m / (v.sqrt() + ADAM_EPS));
                        model.weights[l] -= &upd_w;
                        model.biases[l] -= &upd_b;
                    }
                }
            }
        }
        let epoch_loss = epoch_loss / train.len() as f64;
        model.loss_history.push(epoch_loss);
        if params.schedule == LrSchedule::Adaptive {
            if epoch_loss < best - PLATEAU_TOL {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= 2 {
                    lr /= 2.0;
                    stale = 0;
                }
            }
        }
    }
    Ok(model)
}

/// Labels (ties toward 0) and class probabilities.
pub fn predict_mlp(model: &MlpModel, features: &Array2<f64>) -> Result<(Vec<u8>, Array2<f64>)> {
    let p = model.predict_proba(features)?;
    let labels = p.rows().into_iter().map(|r| argmax(&[r[0], r[1]]) as u8).collect();
    Ok((labels, p))
}

const MLP_MAGIC: &[u8; 8] = b"GKMLP\0\0\0";
const MLP_VERSION: u32 = 1;

impl MlpModel {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        checkpoint::write_header(w, MLP_MAGIC, MLP_VERSION)?;
        let mut o = Out(w);
        let p = &self.params;
        o.u64(p.hidden.len() as u64)?;
        for &h in &p.hidden {
            o.u64(h as u64)?;
        }
        o.str(match p.activation {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })?;
        o.str(match p.optimizer {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })?;
        o.f64(p.alpha)?;
        o.str(match p.schedule {
            LrSchedule::Constant => "constant",
            LrSchedule::Adaptive => "adaptive",
        })?;
        o.f64(p.learning_rate)?;
        o.u64(p.epochs as u64)?;
        o.u64(p.batch_size as u64)?;
        o.u64(self.weights.len() as u64)?;
        for (wm, b) in self.weights.iter().zip(&self.biases) {
            o.matrix(wm)?;
            o.u64(b.len() as u64)?;
            for &v in b {
                o.f64(v)?;
            }
        }
        o.u64(self.loss_history.len() as u64)?;
        for &l in &self.loss_history {
            o.f64(l)?;
        }
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut i = In(r);
        i.header(MLP_MAGIC, MLP_VERSION)?;
        let nh = i.small("hidden layers")?;
        let hidden = (0..nh).map(|_| i.small("width")).collect::<Result<Vec<_>>>()?;
        let tag = |s: String, what: &str| Error::ModelFormat(format!("unknown {what} {s:?}"));
        let activation = match i.str()?.as_str() {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            s => return Err(tag(s.into(), "activation")),
        };
        let optimizer = match i.str()?.as_str() {
            "sgd" => Optimizer::Sgd,
            "adam" => Optimizer::Adam,
            s => return Err(tag(s.into(), "optimizer")),
        };
        let alpha = i.f64()?;
        let schedule = match i.str()?.as_str() {
            "constant" => LrSchedule::Constant,
            "adaptive" => LrSchedule::Adaptive,
            s => return Err(tag(s.into(), "schedule")),
        };
        let params = MlpParams {
            hidden,
            activation,
            optimizer,
            alpha,
            schedule,
            learning_rate: i.f64()?,
            epochs: i.small("epochs")?,
            batch_size: i.small("batch size")?,
        };
        let nl = i.small("layer count")?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for _ in 0..nl {
            weights.push(i.matrix()?);
            let nb = i.small("bias length")?;
            biases.push((0..nb).map(|_| i.f64()).collect::<Result<Array1<f64>>>()?);
        }
        let nloss = i.small("loss count")?;
        let loss_history = (0..nloss).map(|_| i.f64()).collect::<Result<Vec<_>>>()?;
        i.finish()?;
        Ok(Self {
            params,
            weights,
            biases,
            loss_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(bytes.as_slice())
    }
}
