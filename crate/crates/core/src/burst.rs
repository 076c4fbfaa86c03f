//! Burst labeling, probabilistic burst decisions and decision-threshold sweeps.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::rnn::{GruNetwork, Head, RnnError};

#[derive(Debug, thiserror::Error)]
pub enum BurstError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstConfig {
    /// An interval is a burst when its count is strictly above this.
    pub burst_threshold: f64,
    /// Decision threshold θ on the predicted burst probability.
    pub decision_threshold: f64,
}

impl BurstConfig {
    pub fn validate(&self) -> Result<(), BurstError> {
        if !(self.burst_threshold >= 0.0) || !self.burst_threshold.is_finite() {
            return Err(BurstError::InvalidArgument(format!(
                "burst threshold must be finite and non-negative, got {}",
                self.burst_threshold
            )));
        }
        check_theta(self.decision_threshold)
    }
}

fn check_theta(theta: f64) -> Result<(), BurstError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(BurstError::InvalidArgument(format!("decision threshold {theta} outside [0, 1]")))
    }
}

/// Decision quality at one θ. Recalls are `None` when the class is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstReport {
    pub theta: f64,
    pub recall_burst: Option<f64>,
    pub recall_nonburst: Option<f64>,
    pub accuracy: f64,
    pub prevalence: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl BurstReport {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// `true` where `count > burst_threshold`.
pub fn label_bursts(series: &[f64], burst_threshold: f64) -> Vec<bool> {
    series.iter().map(|c| *c > burst_threshold).collect()
}

/// Fraction of intervals labeled burst.
pub fn prevalence(labels: &[bool]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| **l).count() as f64 / labels.len() as f64
}

/// Confusion counts and recalls of `decisions` against `labels`.
pub fn evaluate_decisions(decisions: &[bool], labels: &[bool], theta: f64) -> Result<BurstReport, BurstError> {
    if decisions.len() != labels.len() || labels.is_empty() {
        return Err(BurstError::InvalidArgument(format!(
            "need equal non-empty decisions and labels, got {} and {}",
            decisions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (d, l) in decisions.iter().zip(labels) {
        match (d, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let n = labels.len() as f64;
    Ok(BurstReport {
        theta,
        recall_burst: ratio(tp, tp + fn_),
        recall_nonburst: ratio(tn, tn + fp),
        accuracy: (tp + tn) as f64 / n,
        prevalence: (tp + fn_) as f64 / n,
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Burst probability for the interval after `window` and the `≥ θ` decision.
/// `window` is normalized the same way as during training.
pub fn predict_burst(net: &GruNetwork, window: &FeatureMatrix, theta: f64) -> Result<(f64, bool), BurstError> {
    if net.head != Head::SigmoidBinary {
        return Err(BurstError::Contract("burst prediction needs a sigmoid head".into()));
    }
    check_theta(theta)?;
    let p = net.forward_sequence(window)?.output[0];
    Ok((p, p >= theta))
}

/// Predicts a burst whenever the previous interval was one.
pub fn persistence_burst_baseline(labels: &[bool]) -> Result<Vec<bool>, BurstError> {
    if labels.len() < 2 {
        return Err(BurstError::InvalidArgument(format!(
            "persistence baseline needs at least 2 labels, got {}",
            labels.len()
        )));
    }
    let mut out = Vec::with_capacity(labels.len());
    out.push(false);
    out.extend_from_slice(&labels[..labels.len() - 1]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub reports: Vec<BurstReport>,
    /// θ where burst and non-burst recall are closest; `None` when either class is absent.
    pub crossover: Option<f64>,
}

impl ThresholdSweep {
    pub fn crossover_report(&self) -> Option<&BurstReport> {
        let theta = self.crossover?;
        self.reports.iter().find(|r| r.theta == theta)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "theta,recall_burst,recall_nonburst,accuracy,tp,fp,tn,fn")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.reports {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.theta,
                opt(r.recall_burst),
                opt(r.recall_nonburst),
                r.accuracy,
                r.tp,
                r.fp,
                r.tn,
                r.fn_
            )?;
        }
        Ok(())
    }
}

/// Evaluates the `≥ θ` rule for every θ in an ascending grid.
pub fn sweep_thresholds(probabilities: &[f64], labels: &[bool], grid: &[f64]) -> Result<ThresholdSweep, BurstError> {
    if grid.is_empty() {
        return Err(BurstError::InvalidArgument("empty threshold grid".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(BurstError::InvalidArgument("threshold grid must be ascending".into()));
    }
    if probabilities.len() != labels.len() {
        return Err(BurstError::InvalidArgument(format!(
            "{} probabilities for {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let mut reports = Vec::with_capacity(grid.len());
    for &theta in grid {
        check_theta(theta)?;
        let decisions: Vec<bool> = probabilities.iter().map(|p| *p >= theta).collect();
        reports.push(evaluate_decisions(&decisions, labels, theta)?);
    }
    let mut crossover: Option<(f64, f64)> = None;
    for r in &reports {
        if let (Some(b), Some(n)) = (r.recall_burst, r.recall_nonburst) {
            let gap = (b - n).abs();
            if crossover.is_none_or(|(g, _)| gap < g) {
                crossover = Some((gap, r.theta));
            }
        }
    }
    Ok(ThresholdSweep {
        reports,
        crossover: crossover.map(|(_, t)| t),
    })
}

/// Evenly spaced grid `0, 1/(n-1), …, 1`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn label_rule_is_strict() {
        assert_eq!(label_bursts(&[91.0, 90.0, 100.0], 90.0), vec![true, false, true]);
        assert_eq!(label_bursts(&[0.0, 1.0, 0.0, 5.0], 0.0), vec![false, true, false, true]);
        assert_eq!(label_bursts(&[0.0; 4], 0.0), vec![false; 4]);
    }

    #[test]
    fn config_validation() {
        assert!(BurstConfig { burst_threshold: 1.0, decision_threshold: 0.5 }.validate().is_ok());
        assert!(BurstConfig { burst_threshold: -1.0, decision_threshold: 0.5 }.validate().is_err());
        assert!(BurstConfig { burst_threshold: 1.0, decision_threshold: 1.5 }.validate().is_err());
    }

    #[test]
    fn persistence_shifts_by_one() {
        let l = [false, true, true, false];
        assert_eq!(persistence_burst_baseline(&l).unwrap(), vec![false, false, true, true]);
        assert!(persistence_burst_baseline(&[true]).is_err());

        let zeros = [false; 6];
        let p = persistence_burst_baseline(&zeros).unwrap();
        let r = evaluate_decisions(&p, &zeros, 0.0).unwrap();
        assert_eq!(r.recall_nonburst, Some(1.0));
        assert_eq!(r.recall_burst, None);

        let alt: Vec<bool> = (0..10).map(|i| i % 2 == 1).collect();
        let p = persistence_burst_baseline(&alt).unwrap();
        assert_eq!(evaluate_decisions(&p, &alt, 0.0).unwrap().recall_burst, Some(0.0));
    }

    #[test]
    fn separable_scores() {
        let probs = [0.9, 0.1, 0.9, 0.1, 0.1];
        let labels = [true, false, true, false, false];
        let sweep = sweep_thresholds(&probs, &labels, &[0.0, 0.5, 1.0]).unwrap();
        let mid = &sweep.reports[1];
        assert_eq!((mid.recall_burst, mid.recall_nonburst), (Some(1.0), Some(1.0)));
        assert_eq!(sweep.crossover, Some(0.5));
        assert_eq!(sweep.crossover_report().unwrap().accuracy, 1.0);
    }

    #[test]
    fn equal_scores_jump_once() {
        let probs = [0.3; 4];
        let labels = [true, false, true, false];
        let sweep = sweep_thresholds(&probs, &labels, &[0.1, 0.3, 0.31, 0.9]).unwrap();
        let decided: Vec<u64> = sweep.reports.iter().map(|r| r.tp + r.fp).collect();
        assert_eq!(decided, vec![4, 4, 0, 0]);
    }

    #[test]
    fn degenerate_thresholds() {
        let probs = [0.0, 0.2, 0.999];
        let labels = [false, true, true];
        let sweep = sweep_thresholds(&probs, &labels, &[0.0, 1.0]).unwrap();
        assert_eq!(sweep.reports[0].tp + sweep.reports[0].fp, 3);
        assert_eq!(sweep.reports[1].tp + sweep.reports[1].fp, 0);
    }

    #[test]
    fn sweep_argument_errors() {
        assert!(sweep_thresholds(&[0.5], &[true], &[]).is_err());
        assert!(sweep_thresholds(&[0.5], &[true], &[0.6, 0.2]).is_err());
        assert!(sweep_thresholds(&[0.5, 0.1], &[true], &[0.5]).is_err());
        assert!(sweep_thresholds(&[0.5], &[true], &[1.5]).is_err());
    }

    #[test]
    fn csv_layout() {
        let sweep = sweep_thresholds(&[0.9, 0.1], &[true, false], &[0.5]).unwrap();
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "theta,recall_burst,recall_nonburst,accuracy,tp,fp,tn,fn\n0.5,1,1,1,1,0,1,0\n");
    }

    #[test]
    fn predict_burst_checks_head() {
        let names = vec!["ul_count".to_string()];
        let w = FeatureMatrix::from_rows(names.clone(), 10.0, &[vec![0.0, 1.0]]).unwrap();
        let reg = GruNetwork::zeroed(names.clone(), 3, Head::Regression, 2);
        assert!(matches!(predict_burst(&reg, &w, 0.5), Err(BurstError::Contract(_))));
        let sig = GruNetwork::zeroed(names, 3, Head::SigmoidBinary, 2);
        assert_eq!(predict_burst(&sig, &w, 0.0).unwrap(), (0.5, true));
        assert_eq!(predict_burst(&sig, &w, 0.5).unwrap(), (0.5, true));
        assert_eq!(predict_burst(&sig, &w, 1.0).unwrap(), (0.5, false));
    }

    #[test]
    fn prevalence_falls_as_threshold_rises() {
        let series: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        let mut last = 1.0;
        for k in 0..=110 {
            let p = prevalence(&label_bursts(&series, k as f64));
            assert!(p <= last);
            last = p;
        }
        assert_eq!(last, 0.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>, Vec<f64>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..=1.0, n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0.0f64..=1.0, 1..30).prop_map(|mut g| {
                    g.sort_by(f64::total_cmp);
                    g
                }),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn recalls_are_monotone_in_theta((probs, labels, grid) in instance()) {
            let sweep = sweep_thresholds(&probs, &labels, &grid).unwrap();
            for w in sweep.reports.windows(2) {
                if let (Some(a), Some(b)) = (w[0].recall_burst, w[1].recall_burst) {
                    prop_assert!(b <= a);
                }
                if let (Some(a), Some(b)) = (w[0].recall_nonburst, w[1].recall_nonburst) {
                    prop_assert!(b >= a);
                }
            }
            for r in &sweep.reports {
                prop_assert_eq!(r.total(), labels.len() as u64);
                let identity = r.prevalence * r.recall_burst.unwrap_or(0.0)
                    + (1.0 - r.prevalence) * r.recall_nonburst.unwrap_or(0.0);
                prop_assert!((identity - r.accuracy).abs() <= 1e-12);
                for v in [r.recall_burst, r.recall_nonburst].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
