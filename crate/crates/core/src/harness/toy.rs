use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{validate_compat, Checkpoint, Tensor};
use crate::error::{Error, Result};

/// Two interleaved half-moons in 2-D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTask {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            n_train: 512,
            n_dev: 400,
            n_test: 1000,
            noise: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Samples {
    pub x: Vec<[f64; 2]>,
    pub y: Vec<usize>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Share of samples labelled with the most common class.
    pub fn majority_frequency(&self) -> f64 {
        let ones = self.y.iter().filter(|&&c| c == 1).count();
        ones.max(self.len() - ones) as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    pub train: Samples,
    pub dev: Samples,
    pub test: Samples,
}

impl ToyDataset {
    pub fn generate(task: &ToyTask) -> Result<Self> {
        if task.n_train == 0 || task.n_dev == 0 || task.n_test == 0 {
            return Err(Error::Domain("every split needs at least one sample".into()));
        }
        if !(task.noise >= 0.0) {
            return Err(Error::Domain(format!("noise {} must be >= 0", task.noise)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
        Ok(Self {
            train: moons(task.n_train, task.noise, &mut rng),
            dev: moons(task.n_dev, task.noise, &mut rng),
            test: moons(task.n_test, task.noise, &mut rng),
        })
    }

    pub fn split(&self, split: Split) -> &Samples {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

// Labels alternate so class 0 holds the extra sample when `n` is odd.
fn moons(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Samples {
    let jitter = Normal::new(0.0, noise).expect("noise checked");
    let mut pts: Vec<([f64; 2], usize)> = (0..n)
        .map(|i| {
            let label = i % 2;
            let t: f64 = rng.random_range(0.0..PI);
            let (x, y) = if label == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            ([x + jitter.sample(rng), y + jitter.sample(rng)], label)
        })
        .collect();
    pts.shuffle(rng);
    Samples {
        x: pts.iter().map(|p| p.0).collect(),
        y: pts.iter().map(|p| p.1).collect(),
    }
}

/// Fully connected ReLU network; the last layer emits one logit per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModel {
    pub layers: Vec<usize>,
}

impl Default for ToyModel {
    fn default() -> Self {
        Self {
            layers: vec![2, 16, 16, 2],
        }
    }
}

pub fn weight_name(layer: usize) -> String {
    format!("l{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("l{layer}.bias")
}

/// f64 parameters, `w[l]` row-major `[out, in]`.
#[derive(Debug, Clone)]
struct Params {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl ToyModel {
    pub fn new(layers: Vec<usize>) -> Result<Self> {
        if layers.len() < 2 || layers[0] != 2 || layers.iter().any(|&d| d == 0) {
            return Err(Error::Domain(format!(
                "layer sizes {layers:?} must start at 2 and have at least two non-zero entries"
            )));
        }
        Ok(Self { layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn classes(&self) -> usize {
        *self.layers.last().unwrap()
    }

    /// Expected tensor names and shapes.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        (0..self.depth())
            .flat_map(|l| {
                let (i, o) = (self.layers[l], self.layers[l + 1]);
                [(weight_name(l), vec![o, i]), (bias_name(l), vec![o])]
            })
            .collect()
    }

    /// All-zero checkpoint with the model's layout.
    pub fn zeros(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (name, shape) in self.shapes() {
            ckpt.insert(name, Tensor::zeros(shape).unwrap()).unwrap();
        }
        ckpt
    }

    /// Checks names and shapes; the checkpoint is side `a` of any report.
    pub fn check(&self, ckpt: &Checkpoint) -> Result<()> {
        let report = validate_compat(ckpt, &self.zeros());
        if report.compatible {
            Ok(())
        } else {
            Err(Error::Compat(report))
        }
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Params {
        let mut w = Vec::new();
        let mut b = Vec::new();
        for l in 0..self.depth() {
            let (i, o) = (self.layers[l], self.layers[l + 1]);
            let scale = (2.0 / i as f64).sqrt();
            w.push((0..i * o).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect());
            b.push(vec![0.0; o]);
        }
        Params { w, b }
    }

    fn params_from(&self, ckpt: &Checkpoint) -> Result<Params> {
        self.check(ckpt)?;
        let read = |name: String| -> Vec<f64> {
            ckpt.get(&name).unwrap().data().iter().map(|&v| v as f64).collect()
        };
        Ok(Params {
            w: (0..self.depth()).map(|l| read(weight_name(l))).collect(),
            b: (0..self.depth()).map(|l| read(bias_name(l))).collect(),
        })
    }

    fn to_checkpoint(&self, p: &Params) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for l in 0..self.depth() {
            let (i, o) = (self.layers[l], self.layers[l + 1]);
            let cast = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
            ckpt.insert(weight_name(l), Tensor::new(vec![o, i], cast(&p.w[l])).unwrap())
                .unwrap();
            ckpt.insert(bias_name(l), Tensor::new(vec![o], cast(&p.b[l])).unwrap())
                .unwrap();
        }
        ckpt
    }

    /// Activations of every layer; the last entry holds the logits.
    fn forward(&self, p: &Params, x: &[f64; 2]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for l in 0..self.depth() {
            let (i, o) = (self.layers[l], self.layers[l + 1]);
            let input = &acts[l];
            let mut out: Vec<f64> = (0..o)
                .map(|r| p.b[l][r] + (0..i).map(|c| p.w[l][r * i + c] * input[c]).sum::<f64>())
                .collect();
            if l + 1 < self.depth() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
        }
        acts
    }

    /// Logits of a checkpoint at one input.
    pub fn logits(&self, ckpt: &Checkpoint, x: &[f64; 2]) -> Result<Vec<f64>> {
        let p = self.params_from(ckpt)?;
        Ok(self.forward(&p, x).pop().unwrap())
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    /// Steps (number of updates applied) at which to emit a checkpoint; 0 is the initialization.
    pub snapshot_steps: Vec<usize>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 1000,
            batch_size: 32,
            snapshot_steps: vec![900, 1000],
        }
    }
}

/// Trains the model with seeded mini-batch gradient descent on cross-entropy and
/// returns one checkpoint per snapshot step.
pub fn make_toy_checkpoints(
    task: &ToyTask,
    model: &ToyModel,
    sgd: &SgdConfig,
    seed: u64,
) -> Result<Vec<Checkpoint>> {
    if sgd.snapshot_steps.is_empty() {
        return Err(Error::Domain("no snapshot steps".into()));
    }
    if sgd.snapshot_steps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("snapshot steps must be sorted ascending".into()));
    }
    if *sgd.snapshot_steps.last().unwrap() > sgd.steps {
        return Err(Error::Domain(format!("snapshot step beyond the {} training steps", sgd.steps)));
    }
    if !(sgd.lr > 0.0) || sgd.batch_size == 0 {
        return Err(Error::Domain("lr must be > 0 and batch_size >= 1".into()));
    }
    let data = ToyDataset::generate(task)?;
    let train = &data.train;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = model.init(&mut rng);
    let mut out = Vec::with_capacity(sgd.snapshot_steps.len());
    let mut next = 0;
    let emit = |step: usize, p: &Params, out: &mut Vec<Checkpoint>, next: &mut usize| {
        while *next < sgd.snapshot_steps.len() && sgd.snapshot_steps[*next] == step {
            let mut ckpt = model.to_checkpoint(p);
            ckpt.set_meta("step", step.to_string());
            out.push(ckpt);
            *next += 1;
        }
    };
    emit(0, &p, &mut out, &mut next);

    for step in 1..=sgd.steps {
        if next == sgd.snapshot_steps.len() {
            break;
        }
        let batch: Vec<usize> = (0..sgd.batch_size)
            .map(|_| rng.random_range(0..train.len()))
            .collect();
        let (loss, grad) = batch_gradient(model, &p, train, &batch);
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        for l in 0..model.depth() {
            for (w, g) in p.w[l].iter_mut().zip(&grad.w[l]) {
                *w -= sgd.lr * g;
            }
            for (b, g) in p.b[l].iter_mut().zip(&grad.b[l]) {
                *b -= sgd.lr * g;
            }
        }
        // Parameters must stay representable in the f32 checkpoints.
        if p.w.iter().chain(&p.b).flatten().any(|v| !(v.abs() <= f32::MAX as f64)) {
            return Err(Error::Training { step, loss: f64::INFINITY });
        }
        emit(step, &p, &mut out, &mut next);
    }
    Ok(out)
}

fn batch_gradient(model: &ToyModel, p: &Params, data: &Samples, batch: &[usize]) -> (f64, Params) {
    let mut grad = Params {
        w: p.w.iter().map(|w| vec![0.0; w.len()]).collect(),
        b: p.b.iter().map(|b| vec![0.0; b.len()]).collect(),
    };
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &idx in batch {
        let acts = model.forward(p, &data.x[idx]);
        let logits = acts.last().unwrap();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
        let label = data.y[idx];
        loss += scale * (z.ln() + m - logits[label]);
        // dLoss/dlogits = softmax - onehot
        let mut delta: Vec<f64> = logits.iter().map(|v| (v - m).exp() / z).collect();
        delta[label] -= 1.0;
        for l in (0..model.depth()).rev() {
            let i = model.layers[l];
            let input = &acts[l];
            for (r, d) in delta.iter().enumerate() {
                grad.b[l][r] += scale * d;
                for c in 0..i {
                    grad.w[l][r * i + c] += scale * d * input[c];
                }
            }
            if l > 0 {
                delta = (0..i)
                    .map(|c| {
                        if input[c] > 0.0 {
                            delta.iter().enumerate().map(|(r, d)| d * p.w[l][r * i + c]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
    }
    (loss, grad)
}

/// Accuracy on the first `⌈fraction · n⌉` samples of a split. Ties between
/// logits go to the lower class index.
pub fn eval_model(
    ckpt: &Checkpoint,
    model: &ToyModel,
    data: &ToyDataset,
    split: Split,
    fraction: f64,
) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("fraction {fraction} outside (0, 1]")));
    }
    let p = model.params_from(ckpt)?;
    let s = data.split(split);
    let n = ((fraction * s.len() as f64).ceil() as usize).clamp(1, s.len());
    let correct = (0..n)
        .filter(|&i| argmax(model.forward(&p, &s.x[i]).last().unwrap()) == s.y[i])
        .count();
    Ok(correct as f64 / n as f64)
}

/// A ready-to-call accuracy evaluator over one split.
#[derive(Debug, Clone)]
pub struct ToyEvaluator {
    pub model: ToyModel,
    pub data: ToyDataset,
    pub split: Split,
    pub fraction: f64,
}

impl ToyEvaluator {
    pub fn new(task: &ToyTask, model: ToyModel, split: Split, fraction: f64) -> Result<Self> {
        Ok(Self {
            model,
            data: ToyDataset::generate(task)?,
            split,
            fraction,
        })
    }

    pub fn eval(&self, ckpt: &Checkpoint) -> Result<f64> {
        eval_model(ckpt, &self.model, &self.data, self.split, self.fraction)
    }

    pub fn on(&self, split: Split, fraction: f64) -> Self {
        Self {
            split,
            fraction,
            ..self.clone()
        }
    }
}
