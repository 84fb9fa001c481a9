//! Knowledge distillation on unlabeled target-language text.
//!
//! Teachers label every sentence of the unlabeled corpus twice: with their
//! probability rows (soft labels) and, where the source, teacher and
//! translated models all predict the same class, with a pseudo hard label.
//! A student is then trained on
//!
//! ```text
//! (1/|D|) Σ_x  η · hard(x) + soft(x)
//! hard(x) = (1/N) Σ_i [i labeled] · −log p_i[ŷ_i]
//! soft(x) = (1/N) Σ_i mean_c (q_i[c] − p_i[c])²
//! ```

use rayon::prelude::*;

use crate::corpus::LabelSet;
use crate::error::{Error, Result};
use crate::tagger::network::{sentence_objective, HardTargets, Objective};
use crate::tagger::{
    argmax_labels, fit, viterbi_decode, EncoderConfig, HardNormalizer, ProbRows, TaggerModel, TokenMatrix,
    TrainConfig, TrainLog,
};

mod io;

pub use io::{read_pseudo_labels, write_pseudo_labels};

/// Averages the probability rows of several independently trained taggers.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<TaggerModel>,
}

impl Ensemble {
    pub fn new(members: Vec<TaggerModel>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::config("an ensemble needs at least one member"))?;
        for (m, model) in members.iter().enumerate().skip(1) {
            if model.label_set() != first.label_set() {
                return Err(Error::config(format!("ensemble member {m} uses a different label set")));
            }
            if model.embedding_dim() != first.embedding_dim() {
                return Err(Error::config(format!(
                    "ensemble member {m} expects dimension {}, not {}",
                    model.embedding_dim(),
                    first.embedding_dim()
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn single(model: TaggerModel) -> Self {
        Self { members: vec![model] }
    }

    pub fn members(&self) -> &[TaggerModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn label_set(&self) -> &LabelSet {
        self.members[0].label_set()
    }

    pub fn embedding_dim(&self) -> usize {
        self.members[0].embedding_dim()
    }

    /// Member-wise mean of the probability rows, inference mode.
    ///
    /// The mean is accumulated as `m += (x − m) / k`, so an ensemble of
    /// identical members reproduces a single member's rows bit for bit.
    pub fn predict_proba(&self, inputs: &TokenMatrix) -> Result<ProbRows> {
        let mut mean = self.members[0].predict_proba(inputs)?.as_slice().to_vec();
        for (k, model) in self.members.iter().enumerate().skip(1) {
            let rows = model.predict_proba(inputs)?;
            let count = (k + 1) as f64;
            for (m, x) in mean.iter_mut().zip(rows.as_slice()) {
                *m += (x - *m) / count;
            }
        }
        Ok(ProbRows::from_raw(self.label_set().len(), mean))
    }

    pub fn argmax(&self, inputs: &TokenMatrix) -> Result<Vec<usize>> {
        Ok(argmax_labels(&self.predict_proba(inputs)?))
    }

    pub fn decode(&self, inputs: &TokenMatrix) -> Result<Vec<usize>> {
        viterbi_decode(&self.predict_proba(inputs)?, self.label_set())
    }
}

impl From<TaggerModel> for Ensemble {
    fn from(model: TaggerModel) -> Self {
        Self::single(model)
    }
}

/// Teacher probability rows for every sentence of an unlabeled corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    classes: usize,
    members: usize,
    rows: Vec<ProbRows>,
}

impl SoftLabelSet {
    pub fn new(classes: usize, members: usize, rows: Vec<ProbRows>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.classes() != classes) {
            return Err(Error::validation(i, 0, format!("expected {classes} classes")));
        }
        Ok(Self { classes, members, rows })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Ensemble size of the teacher that produced the rows.
    pub fn members(&self) -> usize {
        self.members
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sentence(&self, i: usize) -> &ProbRows {
        &self.rows[i]
    }

    pub fn sentences(&self) -> &[ProbRows] {
        &self.rows
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        io::soft_to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        io::soft_from_bytes(bytes)
    }
}

/// Soft labels of `teacher` (a single model or an ensemble) on `unlabeled`.
pub fn soft_labels(unlabeled: &[TokenMatrix], teacher: &Ensemble) -> Result<SoftLabelSet> {
    let rows = unlabeled
        .par_iter()
        .map(|x| teacher.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    SoftLabelSet::new(teacher.label_set().len(), teacher.len(), rows)
}

/// Per-token pseudo labels; `None` where the voters disagreed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PseudoHardLabels {
    pub sentences: Vec<Vec<Option<usize>>>,
}

impl PseudoHardLabels {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn labeled_tokens(&self) -> usize {
        self.sentences.iter().flatten().filter(|y| y.is_some()).count()
    }

    pub fn total_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// How each voter turns its probability rows into labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum VoteMode {
    /// Per-token argmax.
    #[default]
    Argmax,
    /// Constrained Viterbi decoding.
    Viterbi,
}

/// The three models whose agreement defines pseudo hard labels.
#[derive(Debug, Clone, Copy)]
pub struct Voters<'a> {
    pub source: &'a Ensemble,
    pub teacher: &'a Ensemble,
    pub translated: &'a Ensemble,
}

impl Voters<'_> {
    fn check(&self) -> Result<()> {
        let set = self.teacher.label_set();
        if self.source.label_set() != set || self.translated.label_set() != set {
            return Err(Error::config("voters must share one label set"));
        }
        Ok(())
    }
}

/// A token is labeled with the teacher's class iff all three voters agree.
pub fn vote_hard_labels(unlabeled: &[TokenMatrix], voters: &Voters<'_>, mode: VoteMode) -> Result<PseudoHardLabels> {
    voters.check()?;
    let labels = |model: &Ensemble, x: &TokenMatrix| match mode {
        VoteMode::Argmax => model.argmax(x),
        VoteMode::Viterbi => model.decode(x),
    };
    let sentences = unlabeled
        .par_iter()
        .map(|x| {
            let teach = labels(voters.teacher, x)?;
            let src = labels(voters.source, x)?;
            let trans = labels(voters.translated, x)?;
            Ok(teach
                .iter()
                .zip(src.iter().zip(&trans))
                .map(|(&t, (&s, &r))| (t == s && t == r).then_some(t))
                .collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PseudoHardLabels { sentences })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Weight of the hard-label term.
    pub eta: f64,
    pub use_soft: bool,
    pub use_hard: bool,
    /// Start the student from the (first) teacher instead of a fresh init.
    pub warm_start: bool,
    pub normalizer: HardNormalizer,
    pub vote_mode: VoteMode,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            use_soft: true,
            use_hard: true,
            warm_start: false,
            normalizer: HardNormalizer::AllTokens,
            vote_mode: VoteMode::Argmax,
            train: TrainConfig {
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || self.eta < 0.0 {
            return Err(Error::config(format!("eta must be a non-negative number, got {}", self.eta)));
        }
        if !self.use_soft && !self.use_hard {
            return Err(Error::config("distillation needs the soft loss, the hard loss or both"));
        }
        if !self.use_soft && self.eta == 0.0 {
            return Err(Error::config("hard loss alone with eta = 0 leaves nothing to train on"));
        }
        self.train.validate()
    }

    /// Whether pseudo hard labels take part in the objective.
    pub fn needs_votes(&self) -> bool {
        self.use_hard && self.eta > 0.0
    }

    fn objective<'a>(&self, soft: Option<&'a ProbRows>, pseudo: Option<&'a [Option<usize>]>) -> Objective<'a> {
        let hard = match pseudo {
            Some(p) if self.use_hard => HardTargets::Pseudo(p),
            _ => HardTargets::None,
        };
        let soft = soft.filter(|_| self.use_soft);
        Objective {
            hard,
            hard_weight: if self.use_hard { self.eta } else { 0.0 },
            normalizer: self.normalizer,
            soft: soft.map(ProbRows::as_slice),
            soft_weight: if soft.is_some() { 1.0 } else { 0.0 },
        }
    }
}

fn check_soft(model: &TaggerModel, index: usize, inputs: &TokenMatrix, rows: &ProbRows) -> Result<()> {
    model.check_inputs(inputs)?;
    if rows.classes() != model.label_set().len() {
        return Err(Error::validation(
            index,
            0,
            format!("soft labels have {} classes, student {}", rows.classes(), model.label_set().len()),
        ));
    }
    if rows.len() != inputs.len() {
        return Err(Error::validation(
            index,
            rows.len().min(inputs.len()),
            format!("{} soft-label rows for {} tokens", rows.len(), inputs.len()),
        ));
    }
    Ok(())
}

fn check_pseudo(model: &TaggerModel, index: usize, inputs: &TokenMatrix, labels: &[Option<usize>]) -> Result<()> {
    model.check_inputs(inputs)?;
    if labels.len() != inputs.len() {
        return Err(Error::validation(
            index,
            labels.len().min(inputs.len()),
            format!("{} pseudo labels for {} tokens", labels.len(), inputs.len()),
        ));
    }
    if let Some(pos) = labels.iter().position(|y| y.is_some_and(|y| y >= model.label_set().len())) {
        return Err(Error::validation(index, pos, "class id out of range"));
    }
    Ok(())
}

fn single_sentence(
    student: &TaggerModel,
    inputs: &TokenMatrix,
    objective: &Objective<'_>,
    with_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let mut grad = with_grad.then(|| vec![0.0; student.params().len()]);
    let loss = sentence_objective(student, inputs, inputs.len(), objective, None, grad.as_deref_mut(), 1.0);
    (loss, grad)
}

fn soft_objective(rows: &ProbRows) -> Objective<'_> {
    Objective {
        hard: HardTargets::None,
        hard_weight: 0.0,
        normalizer: HardNormalizer::AllTokens,
        soft: Some(rows.as_slice()),
        soft_weight: 1.0,
    }
}

fn hard_objective(labels: &[Option<usize>], normalizer: HardNormalizer) -> Objective<'_> {
    Objective {
        hard: HardTargets::Pseudo(labels),
        hard_weight: 1.0,
        normalizer,
        soft: None,
        soft_weight: 0.0,
    }
}

/// Mean over tokens of the mean squared difference between teacher and
/// student rows. Teacher rows are constants.
pub fn soft_loss(student: &TaggerModel, inputs: &TokenMatrix, teacher_rows: &ProbRows) -> Result<f64> {
    check_soft(student, 0, inputs, teacher_rows)?;
    Ok(single_sentence(student, inputs, &soft_objective(teacher_rows), false).0)
}

pub fn soft_loss_and_gradient(
    student: &TaggerModel,
    inputs: &TokenMatrix,
    teacher_rows: &ProbRows,
) -> Result<(f64, Vec<f64>)> {
    check_soft(student, 0, inputs, teacher_rows)?;
    let (loss, grad) = single_sentence(student, inputs, &soft_objective(teacher_rows), true);
    Ok((loss, grad.expect("gradient requested")))
}

/// Cross-entropy on pseudo-labeled tokens, divided by the sentence length
/// (or by the labeled-token count under [`HardNormalizer::LabeledTokens`]).
pub fn hard_loss(
    student: &TaggerModel,
    inputs: &TokenMatrix,
    labels: &[Option<usize>],
    normalizer: HardNormalizer,
) -> Result<f64> {
    check_pseudo(student, 0, inputs, labels)?;
    Ok(single_sentence(student, inputs, &hard_objective(labels, normalizer), false).0)
}

pub fn hard_loss_and_gradient(
    student: &TaggerModel,
    inputs: &TokenMatrix,
    labels: &[Option<usize>],
    normalizer: HardNormalizer,
) -> Result<(f64, Vec<f64>)> {
    check_pseudo(student, 0, inputs, labels)?;
    let (loss, grad) = single_sentence(student, inputs, &hard_objective(labels, normalizer), true);
    Ok((loss, grad.expect("gradient requested")))
}

fn check_targets(
    student: &TaggerModel,
    unlabeled: &[TokenMatrix],
    soft: Option<&SoftLabelSet>,
    pseudo: Option<&PseudoHardLabels>,
) -> Result<()> {
    if let Some(soft) = soft {
        if soft.len() != unlabeled.len() {
            return Err(Error::validation(
                soft.len().min(unlabeled.len()),
                0,
                format!("{} soft-label sentences for {} inputs", soft.len(), unlabeled.len()),
            ));
        }
        for (i, (x, rows)) in unlabeled.iter().zip(soft.sentences()).enumerate() {
            check_soft(student, i, x, rows)?;
        }
    }
    if let Some(pseudo) = pseudo {
        if pseudo.len() != unlabeled.len() {
            return Err(Error::validation(
                pseudo.len().min(unlabeled.len()),
                0,
                format!("{} pseudo-label sentences for {} inputs", pseudo.len(), unlabeled.len()),
            ));
        }
        for (i, (x, labels)) in unlabeled.iter().zip(&pseudo.sentences).enumerate() {
            check_pseudo(student, i, x, labels)?;
        }
    }
    for (i, x) in unlabeled.iter().enumerate() {
        student.check_inputs(x).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("sentence {i}: {m}")),
            other => other,
        })?;
    }
    Ok(())
}

fn batch_distill(
    student: &TaggerModel,
    unlabeled: &[TokenMatrix],
    soft: Option<&SoftLabelSet>,
    pseudo: Option<&PseudoHardLabels>,
    config: &DistillConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    if unlabeled.is_empty() {
        return Err(Error::config("distillation needs a non-empty batch"));
    }
    check_targets(student, unlabeled, soft, pseudo)?;
    let scale = 1.0 / unlabeled.len() as f64;
    let mut total = 0.0;
    for (i, x) in unlabeled.iter().enumerate() {
        let objective = config.objective(
            soft.map(|s| s.sentence(i)),
            pseudo.map(|p| p.sentences[i].as_slice()),
        );
        total += sentence_objective(student, x, x.len(), &objective, None, grad.as_deref_mut(), scale);
    }
    Ok(total * scale)
}

/// Mean over sentences of `η · hard + soft`, honoring the config's loss
/// flags. Missing targets contribute nothing.
pub fn distill_loss(
    student: &TaggerModel,
    unlabeled: &[TokenMatrix],
    soft: Option<&SoftLabelSet>,
    pseudo: Option<&PseudoHardLabels>,
    config: &DistillConfig,
) -> Result<f64> {
    batch_distill(student, unlabeled, soft, pseudo, config, None)
}

pub fn distill_loss_and_gradient(
    student: &TaggerModel,
    unlabeled: &[TokenMatrix],
    soft: Option<&SoftLabelSet>,
    pseudo: Option<&PseudoHardLabels>,
    config: &DistillConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; student.params().len()];
    let loss = batch_distill(student, unlabeled, soft, pseudo, config, Some(&mut grad))?;
    Ok((loss, grad))
}

/// Trains `student` in place on precomputed targets.
pub fn fit_student(
    student: &mut TaggerModel,
    unlabeled: &[TokenMatrix],
    soft: Option<&SoftLabelSet>,
    pseudo: Option<&PseudoHardLabels>,
    config: &DistillConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::config("unlabeled corpus is empty"));
    }
    if config.use_soft && soft.is_none() {
        return Err(Error::config("the soft loss is enabled but no soft labels were given"));
    }
    if config.needs_votes() && pseudo.is_none() {
        return Err(Error::config("the hard loss is enabled but no pseudo labels were given"));
    }
    check_targets(student, unlabeled, soft, pseudo)?;
    let max_len = config.train.max_sequence_length;
    fit(student, unlabeled.len(), &config.train, |model, i, rng, grad, scale| {
        let x = &unlabeled[i];
        let objective = config.objective(
            soft.map(|s| s.sentence(i)),
            pseudo.map(|p| p.sentences[i].as_slice()),
        );
        sentence_objective(model, x, x.len().min(max_len), &objective, Some(rng), Some(grad), scale)
    })
}

/// Distills `teacher` into a student trained only on `unlabeled`.
///
/// Soft labels and votes are computed once up front. `voters` is required
/// when the hard loss is active. The student starts from a fresh
/// initialization seeded by `config.train.seed` unless `warm_start` is set.
pub fn train_student(
    unlabeled: &[TokenMatrix],
    teacher: &Ensemble,
    voters: Option<&Voters<'_>>,
    encoder: &EncoderConfig,
    config: &DistillConfig,
) -> Result<(TaggerModel, TrainLog)> {
    config.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::config("unlabeled corpus is empty"));
    }
    let soft = if config.use_soft {
        Some(soft_labels(unlabeled, teacher)?)
    } else {
        None
    };
    let pseudo = if config.needs_votes() {
        let voters = voters.ok_or_else(|| Error::config("the hard loss needs three voters"))?;
        let votes = vote_hard_labels(unlabeled, voters, config.vote_mode)?;
        log::info!(
            "pseudo labels on {} of {} tokens",
            votes.labeled_tokens(),
            votes.total_tokens()
        );
        Some(votes)
    } else {
        None
    };
    let mut student = if config.warm_start {
        teacher.members()[0].clone()
    } else {
        TaggerModel::new(
            encoder.clone(),
            teacher.embedding_dim(),
            teacher.label_set().clone(),
            config.train.seed,
        )?
    };
    let log = fit_student(&mut student, unlabeled, soft.as_ref(), pseudo.as_ref(), config)?;
    Ok((student, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tagger::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(seed: u64) -> TaggerModel {
        let encoder = EncoderConfig {
            window: 1,
            hidden_dim: 3,
            dropout: 0.1,
        };
        TaggerModel::new(encoder, 4, LabelSet::conll(), seed).unwrap()
    }

    fn inputs(rng: &mut ChaCha8Rng, n: usize) -> Vec<TokenMatrix> {
        (0..n)
            .map(|_| {
                let len = rng.random_range(1..7);
                TokenMatrix::new(4, (0..len * 4).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
            })
            .collect()
    }

    fn one_hot_rows(classes: usize, hot: &[usize]) -> ProbRows {
        let mut data = vec![0.0; classes * hot.len()];
        for (i, &c) in hot.iter().enumerate() {
            data[i * classes + c] = 1.0;
        }
        ProbRows::new(classes, data).unwrap()
    }

    #[test]
    fn identical_members_reproduce_one_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = inputs(&mut rng, 10);
        let t = small(5);
        let one = soft_labels(&x, &Ensemble::single(t.clone())).unwrap();
        let many = soft_labels(&x, &Ensemble::new(vec![t.clone(); 5]).unwrap()).unwrap();
        for (a, b) in one.sentences().iter().zip(many.sentences()) {
            assert_eq!(a.as_slice(), b.as_slice());
        }
        assert_eq!(many.members(), 5);
    }

    #[test]
    fn ensemble_of_two_one_hot_teachers_averages() {
        let mut a = TaggerModel::zeros(EncoderConfig::default(), 4, LabelSet::conll()).unwrap();
        let mut b = a.clone();
        a.tensor_mut(Tensor::ClassifierBias)[0] = 1000.0;
        b.tensor_mut(Tensor::ClassifierBias)[1] = 1000.0;
        let x = TokenMatrix::new(4, vec![0.5; 4]).unwrap();
        let rows = Ensemble::new(vec![a, b]).unwrap().predict_proba(&x).unwrap();
        let mut expected = vec![0.0; 9];
        expected[0] = 0.5;
        expected[1] = 0.5;
        assert_eq!(rows.as_slice(), expected.as_slice());
    }

    #[test]
    fn mismatched_teachers_are_rejected() {
        let other = TaggerModel::new(EncoderConfig::default(), 4, LabelSet::new(["PER"]).unwrap(), 0).unwrap();
        assert!(matches!(Ensemble::new(vec![small(1), other]), Err(Error::Config(_))));
        assert!(Ensemble::new(vec![]).is_err());
    }

    #[test]
    fn soft_loss_examples() {
        let student = small(2);
        let x = TokenMatrix::new(4, vec![0.3; 12]).unwrap();
        let own = student.predict_proba(&x).unwrap();
        assert_eq!(soft_loss(&student, &x, &own).unwrap(), 0.0);
        assert!(soft_loss(&student, &x, &one_hot_rows(9, &[0, 1])).is_err());

        // Teacher one-hot on class 0, student saturated on class 1: two
        // entries differ by 1, so each token scores 2/9.
        let mut sure = TaggerModel::zeros(EncoderConfig::default(), 4, LabelSet::conll()).unwrap();
        sure.tensor_mut(Tensor::ClassifierBias)[1] = 800.0;
        let loss = soft_loss(&sure, &x, &one_hot_rows(9, &[0, 0, 0])).unwrap();
        assert!((loss - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn hard_loss_examples() {
        let uniform = TaggerModel::zeros(EncoderConfig::default(), 4, LabelSet::conll()).unwrap();
        let x = TokenMatrix::new(4, vec![0.2; 16]).unwrap();
        let none = vec![None; 4];
        assert_eq!(hard_loss(&uniform, &x, &none, HardNormalizer::AllTokens).unwrap(), 0.0);
        let one = vec![None, Some(3), None, None];
        let loss = hard_loss(&uniform, &x, &one, HardNormalizer::AllTokens).unwrap();
        assert!((loss - 9f64.ln() / 4.0).abs() < 1e-12);
        assert!((loss - 0.5493).abs() < 1e-4);
        let per_labeled = hard_loss(&uniform, &x, &one, HardNormalizer::LabeledTokens).unwrap();
        assert!((per_labeled - 9f64.ln()).abs() < 1e-12);

        let mut sure = uniform.clone();
        sure.tensor_mut(Tensor::ClassifierBias)[0] = 800.0;
        assert!(hard_loss(&sure, &x, &[Some(0); 4], HardNormalizer::AllTokens).unwrap().abs() < 1e-12);
    }

    #[test]
    fn voting_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = inputs(&mut rng, 8);
        let m = Ensemble::single(small(7));
        let all = vote_hard_labels(&x, &Voters { source: &m, teacher: &m, translated: &m }, VoteMode::Argmax).unwrap();
        assert_eq!(all.labeled_tokens(), all.total_tokens());

        let forced = |c: usize| {
            let mut model = TaggerModel::zeros(EncoderConfig::default(), 4, LabelSet::conll()).unwrap();
            model.tensor_mut(Tensor::ClassifierBias)[c] = 50.0;
            Ensemble::single(model)
        };
        let (a, b, c) = (forced(0), forced(1), forced(2));
        let none = vote_hard_labels(&x, &Voters { source: &a, teacher: &b, translated: &c }, VoteMode::Argmax).unwrap();
        assert_eq!(none.labeled_tokens(), 0);
        let viterbi = vote_hard_labels(&x, &Voters { source: &b, teacher: &b, translated: &b }, VoteMode::Viterbi).unwrap();
        assert_eq!(viterbi.labeled_tokens(), viterbi.total_tokens());
    }

    #[test]
    fn three_way_agreement_is_within_pairwise_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = inputs(&mut rng, 30);
        let (s, t, r) = (Ensemble::single(small(11)), Ensemble::single(small(12)), Ensemble::single(small(13)));
        let three = vote_hard_labels(&x, &Voters { source: &s, teacher: &t, translated: &r }, VoteMode::Argmax).unwrap();
        let two = vote_hard_labels(&x, &Voters { source: &s, teacher: &t, translated: &t }, VoteMode::Argmax).unwrap();
        for (a, b) in three.sentences.iter().flatten().zip(two.sentences.iter().flatten()) {
            if a.is_some() {
                assert_eq!(a, b);
            }
        }
        assert!(three.labeled_tokens() <= two.labeled_tokens());
    }

    #[test]
    fn loss_flags_and_eta() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = inputs(&mut rng, 6);
        let teacher = Ensemble::single(small(20));
        let soft = soft_labels(&x, &teacher).unwrap();
        let s = Ensemble::single(small(21));
        let pseudo = vote_hard_labels(&x, &Voters { source: &s, teacher: &teacher, translated: &teacher }, VoteMode::Argmax).unwrap();
        let student = small(22);

        let no_hard = DistillConfig { eta: 0.0, ..DistillConfig::default() };
        let with = distill_loss(&student, &x, Some(&soft), Some(&pseudo), &no_hard).unwrap();
        let without = distill_loss(&student, &x, Some(&soft), None, &no_hard).unwrap();
        assert_eq!(with.to_bits(), without.to_bits());
        let mean_soft: f64 = x
            .iter()
            .zip(soft.sentences())
            .map(|(xi, q)| soft_loss(&student, xi, q).unwrap())
            .sum::<f64>()
            / x.len() as f64;
        assert!((with - mean_soft).abs() < 1e-12);

        let hard_only = DistillConfig { use_soft: false, eta: 2.0, ..DistillConfig::default() };
        let mean_hard: f64 = x
            .iter()
            .zip(&pseudo.sentences)
            .map(|(xi, y)| hard_loss(&student, xi, y, HardNormalizer::AllTokens).unwrap())
            .sum::<f64>()
            / x.len() as f64;
        let got = distill_loss(&student, &x, Some(&soft), Some(&pseudo), &hard_only).unwrap();
        assert!((got - 2.0 * mean_hard).abs() < 1e-12);

        let neither = DistillConfig { use_soft: false, use_hard: false, ..DistillConfig::default() };
        assert!(matches!(neither.validate(), Err(Error::Config(_))));
        assert!(matches!(
            train_student(&x, &teacher, None, &EncoderConfig::default(), &neither),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn student_training_is_deterministic_and_needs_voters() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = inputs(&mut rng, 20);
        let teacher = Ensemble::single(small(30));
        let voters = Voters { source: &teacher, teacher: &teacher, translated: &teacher };
        let config = DistillConfig::default();
        let encoder = EncoderConfig { hidden_dim: 5, ..EncoderConfig::default() };
        let (a, log) = train_student(&x, &teacher, Some(&voters), &encoder, &config).unwrap();
        let (b, _) = train_student(&x, &teacher, Some(&voters), &encoder, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(log.epoch_losses.len(), 3);
        assert_eq!(a.shape().hidden, 5);
        assert!(train_student(&x, &teacher, None, &encoder, &config).is_err());
        let soft_only = DistillConfig { eta: 0.0, ..config.clone() };
        assert!(train_student(&x, &teacher, None, &encoder, &soft_only).is_ok());
        let warm = DistillConfig { warm_start: true, ..config };
        let (w, _) = train_student(&x, &teacher, Some(&voters), &encoder, &warm).unwrap();
        assert_eq!(w.shape(), teacher.members()[0].shape());
        assert!(train_student(&[], &teacher, Some(&voters), &encoder, &DistillConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ensemble_rows_are_distributions_and_soft_loss_is_nonnegative(
            seed: u64,
            member_seeds in prop::collection::vec(any::<u64>(), 1..5),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = inputs(&mut rng, 4);
            let teacher = Ensemble::new(member_seeds.iter().map(|&s| small(s)).collect()).unwrap();
            let student = small(seed);
            for xi in &x {
                let rows = teacher.predict_proba(xi).unwrap();
                for row in rows.rows() {
                    prop_assert!(row.iter().all(|&p| p >= 0.0));
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
                prop_assert!(soft_loss(&student, xi, &rows).unwrap() >= 0.0);
                let own = student.predict_proba(xi).unwrap();
                prop_assert!(soft_loss(&student, xi, &own).unwrap().abs() < 1e-15);
            }
        }

        #[test]
        fn zero_eta_ignores_pseudo_labels(seed: u64, keep in prop::collection::vec(any::<bool>(), 40)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = inputs(&mut rng, 5);
            let soft = soft_labels(&x, &Ensemble::single(small(seed ^ 1))).unwrap();
            let mut k = keep.iter().cycle();
            let pseudo = PseudoHardLabels {
                sentences: x
                    .iter()
                    .map(|xi| (0..xi.len()).map(|i| k.next().unwrap().then_some(i % 9)).collect())
                    .collect(),
            };
            let config = DistillConfig { eta: 0.0, ..DistillConfig::default() };
            let student = small(seed);
            let with = distill_loss(&student, &x, Some(&soft), Some(&pseudo), &config).unwrap();
            let without = distill_loss(&student, &x, Some(&soft), None, &config).unwrap();
            prop_assert_eq!(with.to_bits(), without.to_bits());
        }
    }
}
