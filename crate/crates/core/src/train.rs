//! Mini-batch training: categorical cross-entropy with Adam.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::ModelGraph;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Element, Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Record wall-clock milliseconds in the log. When off, `ms` is always
    /// 0 so that logs of identical runs are byte-identical.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            record_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// First and second moment estimates for every parameter, plus the step
/// count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Element> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let m: Vec<Tensor<T>> = params.into_iter().map(Tensor::zeros_like).collect();
        AdamState { v: m.clone(), m, t: 0 }
    }
}

/// One Adam update with bias correction:
///
/// ```text
/// m <- b1 m + (1 - b1) g
/// v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
/// ```
pub fn adam_step<T: Element>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam got {} parameters, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "parameter {i} has shape {:?} but gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let c1 = T::one() - b1;
    let c2 = T::one() - b2;
    let bias1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let bias2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.epsilon);

    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((theta, &gv), (mv, vv)) in it {
            *mv = b1 * *mv + c1 * gv;
            *vv = b2 * *vv + c2 * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

const SHUFFLE_STREAM: u64 = 1;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub batch: usize,
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Fraction of samples seen so far this epoch that were classified
    /// correctly before their update.
    #[serde(rename = "acc")]
    pub running_accuracy: f64,
    #[serde(rename = "ms")]
    pub wall_millis: u64,
}

impl TrainLogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Trains `model` in place and returns one log record per batch.
///
/// Every epoch shuffles the sample order with a generator seeded from
/// `cfg.seed`, walks it in batches of `cfg.batch_size` (the last batch may be
/// short) and takes one Adam step on the mean batch gradient. `on_record` is
/// called as each record is produced.
pub fn train(
    model: &mut ModelGraph<f32>,
    samples: &[Sample],
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainLogRecord),
) -> Result<Vec<TrainLogRecord>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mc = model.config().clone();
    for s in samples {
        if s.label_index >= mc.num_classes {
            return Err(Error::Data(format!(
                "sample {} has label index {} but the model has {} classes",
                s.source_path.display(),
                s.label_index,
                mc.num_classes
            )));
        }
        let expected = [mc.input_channels, mc.input_size, mc.input_size];
        if s.image.shape() != expected {
            return Err(Error::Data(format!(
                "sample {} has shape {:?}, model expects {expected:?}",
                s.source_path.display(),
                s.image.shape()
            )));
        }
    }

    let mut rng = Rng::new(cfg.seed).derive(SHUFFLE_STREAM);
    let mut state = AdamState::new(model.parameters().iter().map(|p| &p.value));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::new();
    let start = Instant::now();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let (mut seen, mut correct) = (0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let model_ref = &*model;
            let results = batch
                .par_iter()
                .map(|&i| model_ref.loss_and_gradients(&samples[i].image, samples[i].label_index))
                .collect::<Result<Vec<_>>>()?;

            let n = batch.len() as f32;
            let mut loss = 0.0f32;
            let mut grads: Vec<Tensor<f32>> = Vec::new();
            for (r, &i) in results.into_iter().zip(batch) {
                loss += r.loss;
                if r.probabilities.argmax() == samples[i].label_index {
                    correct += 1;
                }
                if grads.is_empty() {
                    grads = r.gradients;
                } else {
                    for (acc, g) in grads.iter_mut().zip(&r.gradients) {
                        acc.add_assign(g)?;
                    }
                }
            }
            seen += batch.len();
            loss /= n;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|v| *v /= n);
            }
            if !loss.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {epoch}, batch {}",
                    b + 1
                )));
            }

            let mut params: Vec<&mut Tensor<f32>> =
                model.parameters_mut().iter_mut().map(|p| &mut p.value).collect();
            adam_step(&mut params, &grads, &mut state, cfg)?;

            let record = TrainLogRecord {
                epoch,
                batch: b + 1,
                loss: loss as f64,
                running_accuracy: correct as f64 / seen as f64,
                wall_millis: if cfg.record_time { start.elapsed().as_millis() as u64 } else { 0 },
            };
            on_record(&record);
            log.push(record);
        }
    }
    Ok(log)
}

/// Class probabilities for each sample, in order.
pub fn predict_all<T: Element>(model: &ModelGraph<T>, images: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
    images.par_iter().map(|img| model.forward_classify(img)).collect()
}
