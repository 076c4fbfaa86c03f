//! Application classification of feature windows.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::features::{FeatureMatrix, FeatureSet, Normalizer};
use crate::rnn::{self, argmax, GruNetwork, Head, RnnError, Sample, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

/// A raw (unnormalized) window and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub window: FeatureMatrix,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub label: String,
    /// `None` when the class has no test windows.
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub feature_set: String,
    pub decision_interval_s: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassRecall>,
    /// `confusion[actual][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

impl ClassReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Largest minus smallest defined per-class recall.
    pub fn recall_spread(&self) -> f64 {
        let defined: Vec<f64> = self.per_class.iter().filter_map(|c| c.recall).collect();
        let max = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = defined.iter().copied().fold(f64::INFINITY, f64::min);
        if defined.is_empty() {
            0.0
        } else {
            max - min
        }
    }
}

fn check_windows(data: &[LabeledWindow], fs: FeatureSet) -> Result<(), ClassifyError> {
    let names = fs.feature_names();
    let Some(first) = data.first() else {
        return Err(ClassifyError::InvalidArgument("no windows".into()));
    };
    let m = first.window.n_cols();
    for (i, w) in data.iter().enumerate() {
        if w.window.feature_names() != names.as_slice() || w.window.n_cols() != m {
            return Err(ClassifyError::InvalidArgument(format!(
                "window {i} does not match {} with {m} intervals",
                fs.as_str()
            )));
        }
    }
    Ok(())
}

/// Trains a softmax network on `data`. The normalizer is fitted on the
/// training windows' intervals and stored in the network.
pub fn train_classifier(
    data: &[LabeledWindow],
    classes: usize,
    fs: FeatureSet,
    hidden_size: usize,
    config: &TrainConfig,
) -> Result<(GruNetwork, TrainReport), ClassifyError> {
    check_windows(data, fs)?;
    if let Some(bad) = data.iter().find(|w| w.label >= classes) {
        return Err(ClassifyError::InvalidArgument(format!(
            "label {} out of range for {classes} classes",
            bad.label
        )));
    }
    let present: BTreeSet<usize> = data.iter().map(|w| w.label).collect();
    if present.len() < 2 {
        return Err(ClassifyError::InvalidArgument(format!(
            "training data must contain at least 2 classes, found {}",
            present.len()
        )));
    }
    let m = data[0].window.n_cols();
    let columns: Vec<Vec<f64>> = data
        .iter()
        .flat_map(|w| w.window.columns().map(|c| c.to_vec()))
        .collect();
    let stacked = FeatureMatrix::from_columns(fs.feature_names(), data[0].window.tau(), &columns)
        .map_err(|e| ClassifyError::InvalidArgument(e.to_string()))?;
    let normalizer = Normalizer::fit(&stacked, 0..stacked.n_cols())
        .map_err(|e| ClassifyError::InvalidArgument(e.to_string()))?;

    let samples: Vec<Sample> = data
        .iter()
        .map(|w| {
            let mut target = vec![0.0; classes];
            target[w.label] = 1.0;
            Sample {
                steps: normalized_steps(&normalizer, &w.window),
                target,
            }
        })
        .collect();
    let mut net = GruNetwork::new(fs.feature_names(), hidden_size, Head::Softmax { classes }, m, config.seed)?;
    net.normalizer = Some(normalizer);
    let report = rnn::train(&mut net, &samples, config)?;
    Ok((net, report))
}

fn normalized_steps(normalizer: &Normalizer, window: &FeatureMatrix) -> Vec<f64> {
    let mut steps = window.as_slice().to_vec();
    for col in steps.chunks_exact_mut(window.n_rows()) {
        normalizer.transform_column(col);
    }
    steps
}

/// Most probable class of a raw window and the class probabilities.
pub fn classify_window(net: &GruNetwork, window: &FeatureMatrix) -> Result<(usize, Vec<f64>), ClassifyError> {
    if !matches!(net.head, Head::Softmax { .. }) {
        return Err(ClassifyError::InvalidArgument("classifier needs a softmax head".into()));
    }
    if window.n_rows() != net.input_size() {
        return Err(ClassifyError::InvalidArgument(format!(
            "window has {} features, classifier expects {}",
            window.n_rows(),
            net.input_size()
        )));
    }
    let steps = match &net.normalizer {
        Some(n) => normalized_steps(n, window),
        None => window.as_slice().to_vec(),
    };
    Ok(net.classify_steps(&steps)?)
}

/// Combines per-window probabilities by summed log-probability.
pub fn aggregate_decision(probabilities: &[Vec<f64>]) -> usize {
    let k = probabilities.first().map_or(0, |p| p.len());
    let mut score = vec![0.0; k];
    for p in probabilities {
        for (s, v) in score.iter_mut().zip(p) {
            *s += v.max(f64::MIN_POSITIVE).ln();
        }
    }
    argmax(&score)
}

/// Scores `test` with one decision per `decision_interval_s`. Consecutive
/// windows with the same label are grouped into chunks of
/// `decision_interval_s / τ` windows; an incomplete trailing chunk is dropped.
pub fn evaluate_classifier(
    net: &GruNetwork,
    test: &[LabeledWindow],
    class_names: &[String],
    fs: FeatureSet,
    decision_interval_s: f64,
) -> Result<ClassReport, ClassifyError> {
    check_windows(test, fs)?;
    let k = class_names.len();
    if net.head != (Head::Softmax { classes: k }) {
        return Err(ClassifyError::InvalidArgument(format!(
            "network head {:?} does not match {k} class names",
            net.head
        )));
    }
    if let Some(bad) = test.iter().find(|w| w.label >= k) {
        return Err(ClassifyError::InvalidArgument(format!("label {} out of range", bad.label)));
    }
    let tau = test[0].window.tau();
    let ratio = decision_interval_s / tau;
    let j = ratio.round();
    if !(j >= 1.0) || (ratio - j).abs() > 1e-9 * ratio.max(1.0) {
        return Err(ClassifyError::InvalidArgument(format!(
            "decision interval {decision_interval_s} s is not a positive multiple of τ = {tau} s"
        )));
    }
    let j = j as usize;

    let probs: Vec<Vec<f64>> = test
        .iter()
        .map(|w| classify_window(net, &w.window).map(|(_, p)| p))
        .collect::<Result<_, _>>()?;

    let mut confusion = vec![vec![0u64; k]; k];
    let mut start = 0;
    while start < test.len() {
        let label = test[start].label;
        let mut end = start;
        while end < test.len() && test[end].label == label {
            end += 1;
        }
        for chunk in probs[start..end].chunks_exact(j) {
            confusion[label][aggregate_decision(chunk)] += 1;
        }
        start = end;
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(ClassifyError::InvalidArgument(format!(
            "no label run spans {j} windows"
        )));
    }
    let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let support: u64 = confusion[c].iter().sum();
            ClassRecall {
                label: name.clone(),
                recall: (support > 0).then(|| confusion[c][c] as f64 / support as f64),
                support,
            }
        })
        .collect();
    Ok(ClassReport {
        feature_set: fs.as_str().to_string(),
        decision_interval_s,
        accuracy: correct as f64 / total as f64,
        per_class,
        confusion,
    })
}
