use serde::{Deserialize, Serialize};

use super::model::ToyModel;
use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// Largest model `train_toy` accepts; every step costs two forward passes
/// per parameter.
pub const MAX_TRAINABLE: usize = 50_000;

/// Loss above this multiple of the initial loss aborts training.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Input series paired with next-value targets.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        ensure!(!inputs.is_empty(), "dataset must be non-empty");
        ensure!(inputs.len() == targets.len(), "{} inputs but {} targets", inputs.len(), targets.len());
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `count` series of `len` values, each a sum of `components` sinusoids
/// (random frequency in `[0.2, 1.2]`, phase and amplitude) plus `N(0, 0.01²)`
/// noise; the target is the noiseless next value.
pub fn sinusoid_dataset(count: usize, len: usize, components: usize, rng: &mut Rng) -> Result<Dataset> {
    ensure!((1..=3).contains(&components), "use between 1 and 3 sinusoids");
    ensure!(len >= 1, "series length must be positive");
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let waves: Vec<(f64, f64, f64)> = (0..components)
            .map(|_| (rng.uniform(0.2, 1.2), rng.uniform(0.0, std::f64::consts::TAU), rng.uniform(0.5, 1.0)))
            .collect();
        let clean = |t: usize| waves.iter().map(|&(w, p, a)| a * (w * t as f64 + p).sin()).sum::<f64>();
        inputs.push((0..len).map(|t| clean(t) + 0.01 * rng.normal()).collect());
        targets.push(clean(len));
    }
    Dataset::new(inputs, targets)
}

/// One sinusoid of fixed frequency `omega` and random phase; windows of it
/// span a two-dimensional space.
pub fn rank_two_dataset(count: usize, len: usize, omega: f64, rng: &mut Rng) -> Result<Dataset> {
    ensure!(len >= 1, "series length must be positive");
    let mut inputs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        inputs.push((0..len).map(|t| (omega * t as f64 + phase).sin() + 0.01 * rng.normal()).collect());
        targets.push((omega * len as f64 + phase).sin());
    }
    Dataset::new(inputs, targets)
}

/// Mean squared forecast error.
pub fn mse(m: &ToyModel, data: &Dataset) -> Result<f64> {
    let preds = m.forward_batch(&data.inputs)?;
    Ok(preds.iter().zip(&data.targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / data.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: ToyModel,
    /// Loss before training, then after every step.
    pub losses: Vec<f64>,
    /// Step size in effect when training stopped.
    pub final_step: f64,
}

/// Gradient descent with central finite differences,
/// `h = 1e-5·(1 + |θ|)`. A step that raises the loss is rejected and the
/// step size halved, so the recorded loss never increases. The embedding
/// stays fixed.
pub fn train_toy(m: &ToyModel, data: &Dataset, steps: usize, step_size: f64) -> Result<TrainOutcome> {
    ensure!(step_size > 0.0, "step size must be positive");
    let n = m.trainable_len();
    ensure!(n <= MAX_TRAINABLE, "model has {n} trainable values, above the finite-difference limit {MAX_TRAINABLE}");
    let mut model = m.clone();
    let mut theta = model.trainable();
    let mut loss = mse(&model, data)?;
    ensure!(loss.is_finite(), "initial loss is not finite");
    let limit = DIVERGENCE_FACTOR * loss.max(f64::MIN_POSITIVE);
    let mut losses = Vec::with_capacity(steps + 1);
    losses.push(loss);
    let mut eta = step_size;
    let mut scratch = model.clone();
    // The embedding is fixed, so inputs are embedded once.
    let embedded = data.inputs.iter().map(|s| model.embed(s)).collect::<Result<Vec<_>>>()?;
    let eval = |scratch: &mut ToyModel, th: &[f64]| -> Result<f64> {
        scratch.set_trainable(th)?;
        let weights = scratch.realized_layers()?;
        let mut total = 0.0;
        for (x, t) in embedded.iter().zip(&data.targets) {
            let p = scratch.forward_embedded(&weights, x.clone())?;
            total += (p - t) * (p - t);
        }
        Ok(total / data.len() as f64)
    };

    for step in 0..steps {
        let mut grad = vec![0.0; n];
        let mut probe = theta.clone();
        for p in 0..n {
            let h = 1e-5 * (1.0 + theta[p].abs());
            probe[p] = theta[p] + h;
            let up = eval(&mut scratch, &probe)?;
            probe[p] = theta[p] - h;
            let down = eval(&mut scratch, &probe)?;
            probe[p] = theta[p];
            grad[p] = (up - down) / (2.0 * h);
        }
        let trial: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - eta * g).collect();
        let trial_loss = eval(&mut scratch, &trial)?;
        if trial_loss.is_nan() || trial_loss > limit {
            return Err(Error::Diverged { step, loss: trial_loss, limit });
        }
        if trial_loss <= loss {
            theta = trial;
            loss = trial_loss;
        } else {
            eta *= 0.5;
        }
        losses.push(loss);
    }
    model.set_trainable(&theta)?;
    Ok(TrainOutcome { model, losses, final_step: eta })
}
