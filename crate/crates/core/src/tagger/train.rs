//! Mini-batch training with AdamW.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::network::{check_example, sentence_objective, Objective};
use super::{EncoderConfig, Example, TaggerModel, Tensor};
use crate::corpus::LabelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled weight decay, applied to weight matrices but not biases.
    pub weight_decay: f64,
    pub seed: u64,
    /// Longer training sentences are truncated.
    pub max_sequence_length: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            seed: 0,
            max_sequence_length: 128,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_sequence_length == 0 {
            return Err(Error::config("max_sequence_length must be at least 1"));
        }
        // Zero is allowed: it turns fine-tuning into a no-op.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::config("invalid AdamW moment settings"));
        }
        Ok(())
    }
}

/// Mean training loss of each epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

struct AdamW {
    first: Vec<f64>,
    second: Vec<f64>,
    decay: Vec<bool>,
    step: i32,
}

impl AdamW {
    fn new(model: &TaggerModel) -> Self {
        let n = model.params().len();
        let mut decay = vec![false; n];
        for t in Tensor::ALL {
            if t.is_weight() {
                decay[model.shape().range(t)].fill(true);
            }
        }
        Self {
            first: vec![0.0; n],
            second: vec![0.0; n],
            decay,
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], config: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let lr = config.learning_rate;
        for k in 0..params.len() {
            let g = grad[k];
            self.first[k] = b1 * self.first[k] + (1.0 - b1) * g;
            self.second[k] = b2 * self.second[k] + (1.0 - b2) * g * g;
            let m_hat = self.first[k] / c1;
            let v_hat = self.second[k] / c2;
            let mut delta = m_hat / (v_hat.sqrt() + config.epsilon);
            if self.decay[k] {
                delta += config.weight_decay * params[k];
            }
            params[k] -= lr * delta;
        }
    }
}

/// Generic training loop over `items` sentences.
///
/// `objective(model, item, rng, grad, scale)` returns the item's loss and
/// adds `scale · gradient` into `grad`. Batches are reduced in a fixed
/// order, so runs are bit-reproducible.
pub(crate) fn fit<F>(model: &mut TaggerModel, items: usize, config: &TrainConfig, mut objective: F) -> Result<TrainLog>
where
    F: FnMut(&TaggerModel, usize, &mut ChaCha8Rng, &mut [f64], f64) -> f64,
{
    config.validate()?;
    if items == 0 {
        return Err(Error::config("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    // Stream 0 initializes fresh models; training draws from its own stream.
    rng.set_stream(1);
    let mut adam = AdamW::new(model);
    let mut grad = vec![0.0; model.params().len()];
    let mut order: Vec<usize> = (0..items).collect();
    let mut log = TrainLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &item in batch {
                loss += objective(model, item, &mut rng, &mut grad, scale);
            }
            loss *= scale;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: format!("non-finite loss {loss}"),
                });
            }
            adam.update(model.params_mut(), &grad, config);
            if !model.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b,
                    message: "parameters became non-finite".into(),
                });
            }
            epoch_loss += loss * batch.len() as f64;
        }
        let mean = epoch_loss / items as f64;
        log::info!("epoch {} loss {mean:.6}", epoch + 1);
        log.epoch_losses.push(mean);
    }
    Ok(log)
}

fn fit_cross_entropy(model: &mut TaggerModel, examples: &[Example], config: &TrainConfig) -> Result<TrainLog> {
    if examples.is_empty() {
        return Err(Error::config("training corpus is empty"));
    }
    for (i, ex) in examples.iter().enumerate() {
        check_example(model, i, ex)?;
    }
    let max_len = config.max_sequence_length;
    fit(model, examples.len(), config, |model, i, rng, grad, scale| {
        let ex = &examples[i];
        let len = ex.inputs.len().min(max_len);
        let objective = Objective::cross_entropy(&ex.labels);
        sentence_objective(model, &ex.inputs, len, &objective, Some(rng), Some(grad), scale)
    })
}

/// Trains a freshly initialized tagger (initialized from `config.seed`).
pub fn train(
    examples: &[Example],
    encoder: &EncoderConfig,
    label_set: &LabelSet,
    config: &TrainConfig,
) -> Result<(TaggerModel, TrainLog)> {
    config.validate()?;
    let dim = examples
        .first()
        .map(|ex| ex.inputs.dim())
        .ok_or_else(|| Error::config("training corpus is empty"))?;
    let mut model = TaggerModel::new(encoder.clone(), dim, label_set.clone(), config.seed)?;
    let log = fit_cross_entropy(&mut model, examples, config)?;
    Ok((model, log))
}

/// Continues training a copy of `model` on `examples`.
pub fn finetune(model: &TaggerModel, examples: &[Example], config: &TrainConfig) -> Result<(TaggerModel, TrainLog)> {
    let mut tuned = model.clone();
    let log = fit_cross_entropy(&mut tuned, examples, config)?;
    Ok((tuned, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::TokenMatrix;
    use rand::Rng;

    /// Tokens embed as a noisy one-hot of their class: linearly separable.
    fn separable(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 5;
        (0..n)
            .map(|_| {
                let len = rng.random_range(3..10);
                let mut labels = Vec::with_capacity(len);
                let mut data = Vec::with_capacity(len * dim);
                for _ in 0..len {
                    // O, B-LOC, B-ORG, B-PER, B-MISC cover valid BIO under any order.
                    let class = [0, 1, 3, 5, 7][rng.random_range(0..5)];
                    labels.push(class);
                    for k in 0..dim {
                        let hot = if [0, 1, 3, 5, 7][k] == class { 1.0 } else { 0.0 };
                        data.push(hot + rng.random_range(-0.1..0.1));
                    }
                }
                Example {
                    inputs: TokenMatrix::new(dim, data).unwrap(),
                    labels,
                }
            })
            .collect()
    }

    fn accuracy(model: &TaggerModel, examples: &[Example]) -> f64 {
        let (mut right, mut total) = (0, 0);
        for ex in examples {
            let pred = crate::tagger::argmax_labels(&model.predict_proba(&ex.inputs).unwrap());
            right += pred.iter().zip(&ex.labels).filter(|(a, b)| a == b).count();
            total += ex.labels.len();
        }
        right as f64 / total as f64
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 1,
            learning_rate: 0.01,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_a_separable_corpus_in_three_epochs() {
        let data = separable(50, 1);
        let encoder = EncoderConfig {
            window: 1,
            hidden_dim: 16,
            dropout: 0.1,
        };
        let (model, log) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        assert_eq!(log.epoch_losses.len(), 3);
        assert!(log.epoch_losses[2] < log.epoch_losses[0]);
        assert!(accuracy(&model, &data) >= 0.95);
    }

    #[test]
    fn same_seed_same_model() {
        let data = separable(20, 2);
        let encoder = EncoderConfig::default();
        let (a, _) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        let (b, _) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        let other = TrainConfig { seed: 4, ..quick() };
        let (c, _) = train(&data, &encoder, &LabelSet::conll(), &other).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn rejects_bad_configs_and_empty_corpora() {
        let data = separable(5, 3);
        let encoder = EncoderConfig::default();
        let zero_epochs = TrainConfig { epochs: 0, ..quick() };
        assert!(matches!(
            train(&data, &encoder, &LabelSet::conll(), &zero_epochs),
            Err(Error::Config(_))
        ));
        let (model, _) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        assert!(matches!(finetune(&model, &[], &quick()), Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_finetune_is_identity() {
        let data = separable(10, 4);
        let encoder = EncoderConfig::default();
        let (model, _) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        let frozen = TrainConfig {
            learning_rate: 0.0,
            ..quick()
        };
        let (tuned, _) = finetune(&model, &separable(10, 5), &frozen).unwrap();
        assert_eq!(tuned.params(), model.params());
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable(4, 6);
        let encoder = EncoderConfig::default();
        let (mut model, _) = train(&data, &encoder, &LabelSet::conll(), &quick()).unwrap();
        model.tensor_mut(Tensor::ClassifierWeight)[0] = f64::INFINITY;
        assert!(matches!(finetune(&model, &data, &quick()), Err(Error::Training { .. })));
    }
}
