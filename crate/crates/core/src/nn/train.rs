//! Batched gradients, optimisers, the training loop and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::layers::{backward, forward_into, loss, Activations};
use super::model::{Architecture, ModelParams};
use crate::error::{Error, Result};
use crate::movement::{ClassifierSample, MovementClass};
use crate::rng::substream;

const STREAM_SHUFFLE: u64 = 0x12;
const STREAM_SPLIT: u64 = 0x13;

/// Held-out fraction matching 340 test samples out of 904.
pub const DEFAULT_TEST_FRACTION: f64 = 340.0 / 904.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// SGD with momentum 0.9.
    SgdMomentum,
    /// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Compute per-sample gradients on the rayon pool. The reduction order
    /// is fixed, so results are bit-identical to the sequential mode.
    pub parallel: bool,
    /// Used when a caller splits one dataset into train and test.
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::Adam,
            parallel: false,
            test_fraction: DEFAULT_TEST_FRACTION,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size", "must be at least 1"));
        }
        if self.epochs < 1 {
            return Err(Error::validation("epochs", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::validation("test_fraction", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// A flattened `[C, H, W]` input with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn from_sample(sample: &ClassifierSample, arch: &Architecture) -> Result<Self> {
        let label = sample
            .label
            .ok_or_else(|| Error::validation("label", "training sample has no label"))?;
        Ok(Self {
            input: sample_input(sample, arch)?,
            label: label.index(),
        })
    }
}

fn sample_input(sample: &ClassifierSample, arch: &Architecture) -> Result<Vec<f64>> {
    let expected = (arch.channels, arch.height, arch.width);
    if sample.tensor.dim() != expected {
        let (c, h, w) = sample.tensor.dim();
        return Err(Error::ShapeMismatch {
            expected: vec![expected.0, expected.1, expected.2],
            actual: vec![c, h, w],
        });
    }
    Ok(sample.tensor.iter().map(|&v| v as f64).collect())
}

/// Class probabilities for one sample.
pub fn forward(params: &ModelParams, sample: &ClassifierSample) -> Result<Vec<f64>> {
    let input = sample_input(sample, params.architecture())?;
    Ok(forward_input(params, &input))
}

pub fn forward_input(params: &ModelParams, input: &[f64]) -> Vec<f64> {
    let mut act = Activations::new(params.architecture());
    forward_into(params, input, &mut act);
    act.probs
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax(probs: &[f64]) -> usize {
    probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

pub fn predict(params: &ModelParams, sample: &ClassifierSample) -> Result<MovementClass> {
    let probs = forward(params, sample)?;
    Ok(MovementClass::from_index(argmax(&probs)).expect("four output classes"))
}

/// Mean-loss gradient over a batch.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub grad: Vec<f64>,
    pub loss: f64,
    pub correct: usize,
}

fn sample_gradient(params: &ModelParams, ex: &Example) -> (Vec<f64>, f64, bool) {
    let mut act = Activations::new(params.architecture());
    forward_into(params, &ex.input, &mut act);
    let mut grad = vec![0.0; params.values().len()];
    backward(params, &ex.input, &act, ex.label, &mut grad);
    (grad, loss(&act.probs, ex.label), argmax(&act.probs) == ex.label)
}

/// Exact gradient of the mean cross-entropy over `batch`. Per-sample
/// gradients are summed in batch order in both modes.
pub fn gradients(params: &ModelParams, batch: &[Example], parallel: bool) -> Result<BatchGradient> {
    if batch.is_empty() {
        return Err(Error::validation("batch", "must not be empty"));
    }
    let n = params.values().len();
    let mut grad = vec![0.0; n];
    let mut total_loss = 0.0;
    let mut correct = 0;
    let mut add = |(g, l, ok): (Vec<f64>, f64, bool)| {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        total_loss += l;
        correct += ok as usize;
    };
    if parallel {
        let parts: Vec<_> = batch.par_iter().map(|ex| sample_gradient(params, ex)).collect();
        parts.into_iter().for_each(&mut add);
    } else {
        batch.iter().for_each(|ex| add(sample_gradient(params, ex)));
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(BatchGradient {
        grad,
        loss: total_loss * scale,
        correct,
    })
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, n: usize) -> Self {
        Self {
            kind,
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        match self.kind {
            Optimizer::SgdMomentum => {
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = 0.9 * *m + g;
                    *p -= self.lr * *m;
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
                let c1 = 1.0 - b1.powi(self.step);
                let c2 = 1.0 - b2.powi(self.step);
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

pub type ConfusionMatrix = [[usize; MovementClass::COUNT]; MovementClass::COUNT];

/// Per-epoch curves and the final confusion matrix (held-out split when
/// one was given, otherwise the training split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    /// Rows are true classes, columns predictions, in class-index order.
    pub confusion_matrix: ConfusionMatrix,
    pub classes: Vec<String>,
}

fn check_dataset(examples: &[Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::validation("dataset", "no training samples"));
    }
    let mut seen = [false; MovementClass::COUNT];
    for ex in examples {
        if ex.label >= MovementClass::COUNT {
            return Err(Error::validation("label", format!("class index {} out of range", ex.label)));
        }
        seen[ex.label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::validation("dataset", "labels must cover at least two classes"));
    }
    Ok(())
}

fn to_examples(samples: &[ClassifierSample], arch: &Architecture) -> Result<Vec<Example>> {
    samples.iter().map(|s| Example::from_sample(s, arch)).collect()
}

fn score(params: &ModelParams, examples: &[Example], parallel: bool) -> (f64, f64, ConfusionMatrix) {
    let run = |ex: &Example| {
        let p = forward_input(params, &ex.input);
        (loss(&p, ex.label), argmax(&p))
    };
    let results: Vec<(f64, usize)> = if parallel {
        examples.par_iter().map(run).collect()
    } else {
        examples.iter().map(run).collect()
    };
    let mut confusion = [[0; MovementClass::COUNT]; MovementClass::COUNT];
    let mut total = 0.0;
    for (ex, (l, pred)) in examples.iter().zip(&results) {
        total += l;
        confusion[ex.label][*pred] += 1;
    }
    let n = examples.len().max(1) as f64;
    let correct: usize = (0..MovementClass::COUNT).map(|c| confusion[c][c]).sum();
    (total / n, correct as f64 / n, confusion)
}

/// Train from a fresh seeded initialisation.
pub fn train(
    train_set: &[ClassifierSample],
    test_set: Option<&[ClassifierSample]>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    let first = train_set
        .first()
        .ok_or_else(|| Error::validation("dataset", "no training samples"))?;
    let (c, h, w) = first.tensor.dim();
    let params = ModelParams::init(Architecture::with_input(c, h, w), config.seed)?;
    train_from(params, train_set, test_set, config)
}

/// Train starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    train_set: &[ClassifierSample],
    test_set: Option<&[ClassifierSample]>,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    let arch = *params.architecture();
    let train_ex = to_examples(train_set, &arch)?;
    check_dataset(&train_ex)?;
    let test_ex = match test_set {
        Some(t) => to_examples(t, &arch)?,
        None => Vec::new(),
    };

    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, params.values().len());
    let mut rng = substream(config.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut report = TrainReport {
        epochs: config.epochs,
        train_count: train_ex.len(),
        test_count: test_ex.len(),
        train_loss: Vec::with_capacity(config.epochs),
        train_accuracy: Vec::with_capacity(config.epochs),
        test_loss: Vec::new(),
        test_accuracy: Vec::new(),
        confusion_matrix: [[0; MovementClass::COUNT]; MovementClass::COUNT],
        classes: MovementClass::ALL.iter().map(|c| c.name().to_string()).collect(),
    };
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_ex[i].clone()));
            let g = gradients(&params, &batch, config.parallel)?;
            loss_sum += g.loss * chunk.len() as f64;
            correct += g.correct;
            opt.apply(params.values_mut(), &g.grad);
            params.quantize();
        }
        if params.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("learning_rate", "training diverged to non-finite parameters"));
        }
        report.train_loss.push(loss_sum / train_ex.len() as f64);
        report.train_accuracy.push(correct as f64 / train_ex.len() as f64);
        if !test_ex.is_empty() {
            let (l, a, _) = score(&params, &test_ex, config.parallel);
            report.test_loss.push(l);
            report.test_accuracy.push(a);
        }
    }
    let final_set = if test_ex.is_empty() { &train_ex } else { &test_ex };
    report.confusion_matrix = score(&params, final_set, config.parallel).2;
    Ok((params, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Location,
    Class,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "location" => Ok(GroupBy::Location),
            "class" => Ok(GroupBy::Class),
            other => Err(Error::validation("group_by", format!("expected location or class, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion_matrix: ConfusionMatrix,
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub group_by: Option<GroupBy>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub groups: BTreeMap<String, GroupAccuracy>,
}

/// Accuracy and confusion matrix over labelled samples, optionally broken
/// down by location tag or true class. Unlabelled samples are skipped;
/// samples without a location are grouped under `"unknown"`.
pub fn evaluate(params: &ModelParams, samples: &[ClassifierSample], group_by: Option<GroupBy>) -> Result<EvalReport> {
    let arch = *params.architecture();
    let mut confusion = [[0; MovementClass::COUNT]; MovementClass::COUNT];
    let mut groups: BTreeMap<String, GroupAccuracy> = BTreeMap::new();
    for sample in samples.iter().filter(|s| s.label.is_some()) {
        let ex = Example::from_sample(sample, &arch)?;
        let pred = argmax(&forward_input(params, &ex.input));
        confusion[ex.label][pred] += 1;
        let key = match group_by {
            None => continue,
            Some(GroupBy::Location) => sample.location.clone().unwrap_or_else(|| "unknown".into()),
            Some(GroupBy::Class) => sample.label.expect("filtered").name().to_string(),
        };
        let g = groups.entry(key).or_insert(GroupAccuracy {
            accuracy: 0.0,
            correct: 0,
            total: 0,
        });
        g.total += 1;
        g.correct += (pred == ex.label) as usize;
    }
    for g in groups.values_mut() {
        g.accuracy = g.correct as f64 / g.total as f64;
    }
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..MovementClass::COUNT).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        accuracy: if total > 0 { correct as f64 / total as f64 } else { 0.0 },
        correct,
        total,
        confusion_matrix: confusion,
        classes: MovementClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        group_by,
        groups,
    })
}

/// Split indices into (train, test), stratified by (label, location).
/// The test set has exactly `round(n * test_fraction)` samples; each stratum
/// gets its proportional share, remainders going to the strata with the
/// largest fractional parts.
pub fn stratified_split(samples: &[ClassifierSample], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut strata: BTreeMap<(Option<MovementClass>, Option<String>), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        strata.entry((s.label, s.location.clone())).or_default().push(i);
    }
    let target = (samples.len() as f64 * test_fraction).round() as usize;
    let mut quotas: Vec<(usize, f64)> = strata
        .values()
        .map(|members| {
            let exact = members.len() as f64 * test_fraction;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &s in by_remainder.iter().take(target.saturating_sub(assigned)) {
        quotas[s].0 += 1;
    }
    let mut rng = substream(seed, STREAM_SPLIT);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (members, (quota, _)) in strata.values().zip(&quotas) {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..*quota]);
        train.extend_from_slice(&shuffled[*quota..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn sample(label: usize, location: &str, fill: f32) -> ClassifierSample {
        ClassifierSample {
            tensor: Array3::from_elem((4, 8, 8), fill),
            label: MovementClass::from_index(label),
            location: Some(location.to_string()),
        }
    }

    #[test]
    fn zero_params_give_uniform_output_and_class_zero() {
        let p = ModelParams::zeros(Architecture::reduced()).unwrap();
        let probs = forward(&p, &sample(2, "a", 0.7)).unwrap();
        assert!(probs.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert_eq!(predict(&p, &sample(2, "a", 0.7)).unwrap(), MovementClass::BodyTurn);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = ModelParams::zeros(Architecture::standard()).unwrap();
        assert!(matches!(forward(&p, &sample(0, "a", 1.0)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn argmax_tie_break() {
        assert_eq!(argmax(&[0.1, 0.7, 0.1, 0.1]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }

    #[test]
    fn degenerate_datasets_are_rejected() {
        let one_class: Vec<_> = (0..4).map(|_| sample(1, "a", 0.0)).collect();
        assert!(matches!(train(&one_class, None, &TrainConfig::default()), Err(Error::Validation { .. })));
        assert!(matches!(train(&[], None, &TrainConfig::default()), Err(Error::Validation { .. })));
    }

    #[test]
    fn split_is_exact_and_stratified() {
        let mut samples = Vec::new();
        for label in 0..4 {
            for loc in ["a", "b", "c", "d", "e"] {
                for _ in 0..45 {
                    samples.push(sample(label, loc, 0.0));
                }
            }
        }
        samples.extend((0..4).map(|l| sample(l, "a", 0.0)));
        assert_eq!(samples.len(), 904);
        let (train, test) = stratified_split(&samples, DEFAULT_TEST_FRACTION, 3);
        assert_eq!((train.len(), test.len()), (564, 340));
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..904).collect::<Vec<_>>());
        for label in 0..4 {
            let n = test.iter().filter(|&&i| samples[i].label.unwrap().index() == label).count();
            assert!((84..=86).contains(&n), "{n}");
        }
        assert_eq!(stratified_split(&samples, DEFAULT_TEST_FRACTION, 3), (train, test));
    }

    #[test]
    fn always_class_zero_scores_a_quarter() {
        let p = ModelParams::zeros(Architecture::reduced()).unwrap();
        let samples: Vec<_> = (0..40).map(|i| sample(i % 4, "a", 0.0)).collect();
        let r = evaluate(&p, &samples, Some(GroupBy::Class)).unwrap();
        assert_eq!(r.accuracy, 0.25);
        assert_eq!(r.groups["body_turn"].accuracy, 1.0);
        assert_eq!(r.groups["leg_move"].accuracy, 0.0);
        assert_eq!(r.confusion_matrix[3], [10, 0, 0, 0]);
    }
}
