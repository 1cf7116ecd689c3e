//! Confusion matrices, per-class precision/recall/F1 and channel ablations.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Dataset;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(Error::Shape {
                expected: vec![n, n],
                got: vec![counts.len(), counts.first().map_or(0, |r| r.len())],
            });
        }
        Ok(ConfusionMatrix { labels, counts })
    }

    pub fn classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn predicted(&self, k: usize) -> u64 {
        self.counts.iter().map(|r| r[k]).sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.correct() as f64 / t as f64,
        }
    }

    pub fn to_text(&self) -> String {
        let w = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(6) + 2;
        let mut s = format!("{:>w$}", "true\\pred");
        for l in &self.labels {
            let _ = write!(s, "{l:>w$}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            let _ = write!(s, "{l:>w$}");
            for c in row {
                let _ = write!(s, "{c:>w$}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            s.push_str(l);
            for c in row {
                let _ = write!(s, ",{c}");
            }
            s.push('\n');
        }
        s
    }
}

/// Tallies `(truth, prediction)` pairs over `labels.len()` classes.
pub fn confusion(preds: &[usize], truth: &[usize], labels: &[String]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::LengthMismatch(preds.len(), truth.len()));
    }
    if preds.is_empty() {
        return Err(Error::Empty("predictions".into()));
    }
    let mut cm = ConfusionMatrix::new(labels.to_vec());
    for (&p, &t) in preds.iter().zip(truth) {
        if p >= labels.len() || t >= labels.len() {
            return Err(Error::config(
                "labels",
                format!("class id {} outside {} classes", p.max(t), labels.len()),
            ));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when nothing was predicted as this class (precision reported as 0).
    pub precision_undefined: bool,
    /// Set when the class has no samples (recall reported as 0).
    pub recall_undefined: bool,
    /// Set when precision + recall = 0 (F1 reported as 0).
    pub f1_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn prf1(cm: &ConfusionMatrix) -> Metrics {
    let per_class = (0..cm.classes())
        .map(|k| {
            let tp = cm.counts[k][k];
            let (precision, precision_undefined) = ratio(tp, cm.predicted(k));
            let (recall, recall_undefined) = ratio(tp, cm.support(k));
            let (f1, f1_undefined) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            ClassMetrics {
                label: cm.labels[k].clone(),
                precision,
                recall,
                f1,
                support: cm.support(k),
                precision_undefined,
                recall_undefined,
                f1_undefined,
            }
        })
        .collect();
    Metrics {
        per_class,
        accuracy: cm.accuracy(),
        total: cm.total(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl EvalReport {
    pub fn new(confusion: ConfusionMatrix) -> Self {
        let metrics = prf1(&confusion);
        EvalReport { confusion, metrics }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("Confusion matrix (rows: true, columns: predicted)\n");
        s.push_str(&self.confusion.to_text());
        s.push('\n');
        let _ = writeln!(
            s,
            "{:>10}{:>11}{:>9}{:>9}{:>9}",
            "class", "precision", "recall", "f1", "support"
        );
        for m in &self.metrics.per_class {
            let flag = if m.precision_undefined || m.recall_undefined || m.f1_undefined {
                " *"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "{:>10}{:>11.4}{:>9.4}{:>9.4}{:>9}{flag}",
                m.label, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(
            s,
            "{:>10}{:>38.4}{:>9}",
            "accuracy", self.metrics.accuracy, self.metrics.total
        );
        if s.contains(" *\n") {
            s.push_str("* zero denominator, reported as 0\n");
        }
        s
    }

    /// Per-class metrics table; the confusion matrix has its own CSV.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(
            "class,precision,recall,f1,support,precision_undefined,recall_undefined,f1_undefined\n",
        );
        for m in &self.metrics.per_class {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                m.label,
                m.precision,
                m.recall,
                m.f1,
                m.support,
                m.precision_undefined,
                m.recall_undefined,
                m.f1_undefined
            );
        }
        let _ = writeln!(s, "accuracy,,,{},{},,,", self.metrics.accuracy, self.metrics.total);
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub channels: Vec<String>,
    pub accuracy: f64,
    /// Per-class recall, in label order.
    pub per_class: Vec<f64>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub labels: Vec<String>,
    pub runs: Vec<AblationRun>,
}

impl AblationReport {
    pub fn run(&self, channels: &[&str]) -> Option<&AblationRun> {
        self.runs
            .iter()
            .find(|r| r.channels.iter().map(String::as_str).eq(channels.iter().copied()))
    }

    pub fn to_text(&self) -> String {
        let key = |r: &AblationRun| r.channels.join("+");
        let w = self.runs.iter().map(|r| key(r).len()).max().unwrap_or(0).max(8) + 2;
        let mut s = format!("{:<w$}", "channels");
        for l in &self.labels {
            let _ = write!(s, "{l:>9}");
        }
        let _ = writeln!(s, "{:>9}", "overall");
        for r in &self.runs {
            let _ = write!(s, "{:<w$}", key(r));
            for v in &r.per_class {
                let _ = write!(s, "{v:>9.4}");
            }
            let _ = writeln!(s, "{:>9.4}", r.accuracy);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("channels");
        for l in &self.labels {
            let _ = write!(s, ",{l}");
        }
        s.push_str(",overall\n");
        for r in &self.runs {
            s.push_str(&r.channels.join("+"));
            for v in &r.per_class {
                let _ = write!(s, ",{v}");
            }
            let _ = writeln!(s, ",{}", r.accuracy);
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Retrains once per channel subset, dropping the other channels from both
/// splits. `train_fn(train, test)` must return one predicted class per test
/// sample; it is handed identical seeds by construction, so runs are
/// independent of each other and of their order.
pub fn ablate(
    train: &Dataset,
    test: &Dataset,
    subsets: &[Vec<String>],
    train_fn: &(dyn Fn(&Dataset, &Dataset) -> Result<Vec<usize>> + Sync),
) -> Result<AblationReport> {
    if subsets.is_empty() {
        return Err(Error::Empty("feature subsets".into()));
    }
    for subset in subsets {
        if subset.is_empty() {
            return Err(Error::Empty("feature subset".into()));
        }
        train.channel_indices(subset)?;
        test.channel_indices(subset)?;
    }
    let runs = subsets
        .par_iter()
        .map(|subset| {
            let tr = train.select_channels(subset)?;
            let te = test.select_channels(subset)?;
            let preds = train_fn(&tr, &te)?;
            let cm = confusion(&preds, &te.labels(), &test.label_map)?;
            let m = prf1(&cm);
            Ok(AblationRun {
                channels: subset.clone(),
                accuracy: m.accuracy,
                per_class: m.per_class.iter().map(|c| c.recall).collect(),
                confusion: cm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        labels: test.label_map.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccsim::CcAlgorithm;
    use proptest::prelude::*;

    fn two() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn hand_computed_two_class() {
        let cm = ConfusionMatrix::from_counts(two(), vec![vec![1, 1], vec![0, 2]]).unwrap();
        let m = prf1(&cm);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert_eq!(m.per_class[0].f1, 2.0 / 3.0);
        assert_eq!(m.accuracy, 0.75);
    }

    #[test]
    fn paper_bbr_row() {
        let labels = CcAlgorithm::label_map();
        let mut counts = vec![vec![0u64; 6]; 6];
        let bbr = CcAlgorithm::Bbr.class_id();
        counts[bbr][bbr] = 179;
        counts[bbr][CcAlgorithm::Cubic.class_id()] = 1;
        let cm = ConfusionMatrix::from_counts(labels, counts).unwrap();
        let m = prf1(&cm);
        assert_eq!(m.per_class[bbr].recall, 179.0 / 180.0);
        assert_eq!(m.per_class[bbr].support, 180);
        assert!(m.per_class[0].recall_undefined);
    }

    #[test]
    fn confusion_counts_pairs() {
        let cm = confusion(&[1], &[0], &two()).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 1], vec![0, 0]]);
        let diag = confusion(&[0, 1, 1], &[0, 1, 1], &two()).unwrap();
        assert!(prf1(&diag).per_class.iter().all(|c| c.f1 == 1.0));
        assert!(matches!(confusion(&[0], &[0, 1], &two()), Err(Error::LengthMismatch(1, 2))));
        assert!(confusion(&[], &[], &two()).is_err());
        assert!(confusion(&[2], &[0], &two()).is_err());
    }

    #[test]
    fn empty_column_is_flagged_not_nan() {
        let cm = confusion(&[0, 0], &[0, 1], &two()).unwrap();
        let m = prf1(&cm);
        assert!(m.per_class[1].precision_undefined && m.per_class[1].f1_undefined);
        assert_eq!(m.per_class[1].f1, 0.0);
        let text = EvalReport::new(cm).to_text();
        assert!(text.contains("zero denominator"));
    }

    #[test]
    fn reports_render() {
        let cm = confusion(&[0, 1, 1], &[0, 1, 0], &two()).unwrap();
        let r = EvalReport::new(cm.clone());
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(cm.to_csv(), "true,a,b\na,1,1\nb,0,1\n");
        assert_eq!(r.metrics_csv().lines().count(), 4);
    }

    proptest! {
        #[test]
        fn permuting_labels_permutes_metrics(
            counts in proptest::collection::vec(0u64..20, 16),
            shift in 1usize..4,
        ) {
            let n = 4;
            let labels: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
            let rows: Vec<Vec<u64>> = counts.chunks(n).map(|c| c.to_vec()).collect();
            let perm = |k: usize| (k + shift) % n;
            let mut permuted = vec![vec![0; n]; n];
            let mut plabels = labels.clone();
            for i in 0..n {
                plabels[perm(i)] = labels[i].clone();
                for j in 0..n {
                    permuted[perm(i)][perm(j)] = rows[i][j];
                }
            }
            let a = prf1(&ConfusionMatrix::from_counts(labels, rows).unwrap());
            let b = prf1(&ConfusionMatrix::from_counts(plabels, permuted).unwrap());
            prop_assert_eq!(a.accuracy, b.accuracy);
            for i in 0..n {
                prop_assert_eq!(&a.per_class[i], &b.per_class[perm(i)]);
            }
        }
    }
}
