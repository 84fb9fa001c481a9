//! Forward pass, token-level objectives and their analytic gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Example, TaggerModel, Tensor, TokenMatrix};
use crate::embed::dot;
use crate::error::{Error, Result};

pub(crate) struct Forward {
    len: usize,
    hidden: Vec<f64>,
    /// Per-unit dropout scale (0 or `1 / (1 − p)`), training mode only.
    mask: Option<Vec<f64>>,
    dropped: Option<Vec<f64>>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Forward {
    pub fn dropped_hidden(&self) -> &[f64] {
        self.dropped.as_deref().unwrap_or(&self.hidden)
    }
}

/// Runs the first `len` tokens of `inputs`; later tokens are treated as
/// absent (zero context).
pub(crate) fn forward(model: &TaggerModel, inputs: &TokenMatrix, len: usize, dropout: Option<&mut ChaCha8Rng>) -> Forward {
    let shape = model.shape;
    let (d, w) = (model.embedding_dim, model.encoder.window);
    let (hdim, classes) = (shape.hidden, shape.classes);
    let enc_w = model.tensor(Tensor::EncoderWeight);
    let enc_b = model.tensor(Tensor::EncoderBias);
    let cls_w = model.tensor(Tensor::ClassifierWeight);
    let cls_b = model.tensor(Tensor::ClassifierBias);

    let mut hidden = vec![0.0; len * hdim];
    for i in 0..len {
        let z = &mut hidden[i * hdim..(i + 1) * hdim];
        z.copy_from_slice(enc_b);
        for o in 0..=2 * w {
            let Some(j) = (i + o).checked_sub(w).filter(|&j| j < len) else {
                continue;
            };
            let e = inputs.row(j);
            for (h, zh) in z.iter_mut().enumerate() {
                let row = &enc_w[h * shape.input + o * d..h * shape.input + (o + 1) * d];
                *zh += dot(row, e);
            }
        }
        z.iter_mut().for_each(|v| *v = v.tanh());
    }

    let rate = model.encoder.dropout;
    let (mask, dropped) = match dropout {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..hidden.len())
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            let dropped = hidden.iter().zip(&mask).map(|(h, m)| h * m).collect();
            (Some(mask), Some(dropped))
        }
        _ => (None, None),
    };

    let mut logits = vec![0.0; len * classes];
    let mut probs = vec![0.0; len * classes];
    let view = dropped.as_deref().unwrap_or(hidden.as_slice());
    for i in 0..len {
        let h = &view[i * hdim..(i + 1) * hdim];
        let l = &mut logits[i * classes..(i + 1) * classes];
        for (c, lc) in l.iter_mut().enumerate() {
            *lc = cls_b[c] + dot(&cls_w[c * hdim..(c + 1) * hdim], h);
        }
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p = &mut probs[i * classes..(i + 1) * classes];
        let mut sum = 0.0;
        for (pc, lc) in p.iter_mut().zip(l.iter()) {
            *pc = (lc - max).exp();
            sum += *pc;
        }
        p.iter_mut().for_each(|v| *v /= sum);
    }
    Forward {
        len,
        hidden,
        mask,
        dropped,
        logits,
        probs,
    }
}

/// `log softmax(logits)[y]`, via log-sum-exp.
fn log_prob(logits: &[f64], y: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[y] - lse
}

/// Denominator of the hard-label loss of one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HardNormalizer {
    /// Every token counts, labeled or not.
    #[default]
    AllTokens,
    /// Only tokens that carry a pseudo label count.
    LabeledTokens,
}

#[derive(Clone, Copy)]
pub(crate) enum HardTargets<'a> {
    None,
    Gold(&'a [usize]),
    Pseudo(&'a [Option<usize>]),
}

impl HardTargets<'_> {
    fn get(&self, i: usize) -> Option<usize> {
        match self {
            HardTargets::None => None,
            HardTargets::Gold(y) => Some(y[i]),
            HardTargets::Pseudo(y) => y[i],
        }
    }
}

/// Per-sentence objective:
/// `hard_weight · (1/norm) Σ_i −log p_i[y_i] + soft_weight · (1/N) Σ_i MSE(q_i, p_i)`.
#[derive(Clone, Copy)]
pub(crate) struct Objective<'a> {
    pub hard: HardTargets<'a>,
    pub hard_weight: f64,
    pub normalizer: HardNormalizer,
    /// Teacher rows, `N × C`.
    pub soft: Option<&'a [f64]>,
    pub soft_weight: f64,
}

impl<'a> Objective<'a> {
    pub fn cross_entropy(labels: &'a [usize]) -> Self {
        Self {
            hard: HardTargets::Gold(labels),
            hard_weight: 1.0,
            normalizer: HardNormalizer::AllTokens,
            soft: None,
            soft_weight: 0.0,
        }
    }
}

/// Loss of one sentence truncated to `len` tokens. With `grad`, adds
/// `scale · ∂loss/∂θ` into it.
pub(crate) fn sentence_objective(
    model: &TaggerModel,
    inputs: &TokenMatrix,
    len: usize,
    objective: &Objective<'_>,
    dropout: Option<&mut ChaCha8Rng>,
    grad: Option<&mut [f64]>,
    scale: f64,
) -> f64 {
    if len == 0 {
        return 0.0;
    }
    let classes = model.shape.classes;
    let fwd = forward(model, inputs, len, dropout);
    let labeled = (0..len).filter(|&i| objective.hard.get(i).is_some()).count();
    let hard_norm = match objective.normalizer {
        HardNormalizer::AllTokens => len as f64,
        HardNormalizer::LabeledTokens => labeled.max(1) as f64,
    };
    let want_grad = grad.is_some();
    let mut dlogits = if want_grad { vec![0.0; len * classes] } else { Vec::new() };
    let mut loss = 0.0;

    for i in 0..len {
        let p = &fwd.probs[i * classes..(i + 1) * classes];
        if let (Some(y), true) = (objective.hard.get(i), objective.hard_weight != 0.0) {
            let weight = objective.hard_weight / hard_norm;
            loss -= weight * log_prob(&fwd.logits[i * classes..(i + 1) * classes], y);
            if want_grad {
                let g = &mut dlogits[i * classes..(i + 1) * classes];
                for c in 0..classes {
                    g[c] += weight * (p[c] - if c == y { 1.0 } else { 0.0 });
                }
            }
        }
        if let (Some(soft), true) = (objective.soft, objective.soft_weight != 0.0) {
            let q = &soft[i * classes..(i + 1) * classes];
            let weight = objective.soft_weight / len as f64;
            let mse = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / classes as f64;
            loss += weight * mse;
            if want_grad {
                // ∂/∂p_c, then through the softmax Jacobian.
                let dp: Vec<f64> = p.iter().zip(q).map(|(a, b)| weight * 2.0 * (a - b) / classes as f64).collect();
                let inner: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                let g = &mut dlogits[i * classes..(i + 1) * classes];
                for c in 0..classes {
                    g[c] += p[c] * (dp[c] - inner);
                }
            }
        }
    }

    if let Some(grad) = grad {
        backward(model, inputs, &fwd, &dlogits, grad, scale);
    }
    loss
}

fn backward(model: &TaggerModel, inputs: &TokenMatrix, fwd: &Forward, dlogits: &[f64], grad: &mut [f64], scale: f64) {
    let shape = model.shape;
    let (d, w) = (model.embedding_dim, model.encoder.window);
    let (hdim, classes, len) = (shape.hidden, shape.classes, fwd.len);
    let cls_w = model.tensor(Tensor::ClassifierWeight);
    let (enc_w_range, enc_b_range) = (shape.range(Tensor::EncoderWeight), shape.range(Tensor::EncoderBias));
    let (cls_w_range, cls_b_range) = (shape.range(Tensor::ClassifierWeight), shape.range(Tensor::ClassifierBias));
    let dropped = fwd.dropped_hidden();

    let mut dz = vec![0.0; hdim];
    for i in 0..len {
        let g = &dlogits[i * classes..(i + 1) * classes];
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        let hd = &dropped[i * hdim..(i + 1) * hdim];
        for c in 0..classes {
            let gc = scale * g[c];
            grad[cls_b_range.start + c] += gc;
            let row = &mut grad[cls_w_range.start + c * hdim..cls_w_range.start + (c + 1) * hdim];
            row.iter_mut().zip(hd).for_each(|(a, h)| *a += gc * h);
        }
        for h in 0..hdim {
            let mut dh: f64 = (0..classes).map(|c| cls_w[c * hdim + h] * g[c]).sum::<f64>() * scale;
            if let Some(mask) = &fwd.mask {
                dh *= mask[i * hdim + h];
            }
            let t = fwd.hidden[i * hdim + h];
            dz[h] = dh * (1.0 - t * t);
        }
        grad[enc_b_range.clone()].iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
        for o in 0..=2 * w {
            let Some(j) = (i + o).checked_sub(w).filter(|&j| j < len) else {
                continue;
            };
            let e = inputs.row(j);
            for (h, &dzh) in dz.iter().enumerate() {
                if dzh == 0.0 {
                    continue;
                }
                let start = enc_w_range.start + h * shape.input + o * d;
                grad[start..start + d].iter_mut().zip(e).for_each(|(a, x)| *a += dzh * x);
            }
        }
    }
}

pub(crate) fn check_example(model: &TaggerModel, index: usize, example: &Example) -> Result<()> {
    model.check_inputs(&example.inputs)?;
    if example.inputs.len() != example.labels.len() {
        return Err(Error::validation(
            index,
            example.labels.len().min(example.inputs.len()),
            "label count differs from token count",
        ));
    }
    if let Some(pos) = example.labels.iter().position(|&y| y >= model.shape.classes) {
        return Err(Error::validation(index, pos, "class id out of range"));
    }
    Ok(())
}

fn batch_ce(model: &TaggerModel, batch: &[Example], mut grad: Option<&mut [f64]>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("cross-entropy needs a non-empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for (k, ex) in batch.iter().enumerate() {
        check_example(model, k, ex)?;
        let objective = Objective::cross_entropy(&ex.labels);
        total += sentence_objective(model, &ex.inputs, ex.inputs.len(), &objective, None, grad.as_deref_mut(), scale);
    }
    Ok(total * scale)
}

/// Mean over sentences of the mean token cross-entropy, inference mode.
pub fn ce_loss(model: &TaggerModel, batch: &[Example]) -> Result<f64> {
    batch_ce(model, batch, None)
}

/// [`ce_loss`] and its gradient with respect to the flat parameters.
pub fn ce_loss_and_gradient(model: &TaggerModel, batch: &[Example]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.params.len()];
    let loss = batch_ce(model, batch, Some(&mut grad))?;
    Ok((loss, grad))
}
