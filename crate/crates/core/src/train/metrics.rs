use std::fmt::Write as _;

use super::TrainError;

/// Confusion matrix (rows = truth, columns = prediction) and the scores
/// derived from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    pub classes: usize,
    /// Row-major `classes x classes`.
    pub confusion: Vec<u64>,
    /// `trace / total`
    pub oa: f64,
    /// Mean recall over classes with at least one true sample.
    pub aa: f64,
    /// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`.
    pub kappa: f64,
    /// Recall per class; `None` where the class has no true samples.
    pub recall: Vec<Option<f64>>,
}

impl Metrics {
    /// Scores for 0-based `truth` / `prediction` pairs.
    pub fn from_pairs(classes: usize, truth: &[usize], prediction: &[usize]) -> Result<Self, TrainError> {
        if truth.len() != prediction.len() {
            return Err(TrainError::Contract(format!(
                "{} labels but {} predictions",
                truth.len(),
                prediction.len()
            )));
        }
        let mut confusion = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(prediction) {
            if t >= classes || p >= classes {
                return Err(TrainError::Contract(format!(
                    "class pair ({t}, {p}) outside {classes} classes"
                )));
            }
            confusion[t * classes + p] += 1;
        }
        Self::from_confusion(classes, confusion)
    }

    pub fn from_confusion(classes: usize, confusion: Vec<u64>) -> Result<Self, TrainError> {
        if classes == 0 || confusion.len() != classes * classes {
            return Err(TrainError::Contract(format!(
                "confusion has {} cells, expected {classes} x {classes}",
                confusion.len()
            )));
        }
        let total: u64 = confusion.iter().sum();
        if total == 0 {
            return Err(TrainError::Contract("cannot score an empty evaluation set".into()));
        }
        let k = classes;
        let row = |i: usize| -> u64 { confusion[i * k..(i + 1) * k].iter().sum() };
        let col = |j: usize| -> u64 { (0..k).map(|i| confusion[i * k + j]).sum() };
        let trace: u64 = (0..k).map(|i| confusion[i * k + i]).sum();

        let n = total as f64;
        let oa = trace as f64 / n;
        let recall: Vec<Option<f64>> = (0..k)
            .map(|i| {
                let r = row(i);
                (r > 0).then(|| confusion[i * k + i] as f64 / r as f64)
            })
            .collect();
        let present: Vec<f64> = recall.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;

        // Integer marginals keep p_e exact until the final division.
        let chance: u128 = (0..k).map(|i| row(i) as u128 * col(i) as u128).sum();
        let pe = chance as f64 / (total as u128 * total as u128) as f64;
        let kappa = if chance == total as u128 * total as u128 {
            // Everything in one class on both axes: agreement is perfect
            // and chance agreement is total.
            if trace == total {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        Ok(Self {
            classes,
            confusion,
            oa,
            aa,
            kappa,
            recall,
        })
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().sum()
    }

    pub fn cell(&self, truth: usize, prediction: usize) -> u64 {
        self.confusion[truth * self.classes + prediction]
    }

    /// Plain-text table: one recall row per class, then OA, AA and kappa.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Per-class values are recall (producer's accuracy).");
        let _ = writeln!(out, "{:<8}{:>10}{:>10}", "class", "samples", "recall");
        for (i, r) in self.recall.iter().enumerate() {
            let samples: u64 = self.confusion[i * self.classes..(i + 1) * self.classes].iter().sum();
            let value = r.map_or_else(|| "-".to_string(), |r| format!("{:.2}", 100.0 * r));
            let _ = writeln!(out, "{:<8}{:>10}{:>10}", i + 1, samples, value);
        }
        let _ = writeln!(out, "{:<8}{:>10}{:>10.2}", "OA", self.total(), 100.0 * self.oa);
        let _ = writeln!(out, "{:<8}{:>10}{:>10.2}", "AA", "", 100.0 * self.aa);
        let _ = writeln!(out, "{:<8}{:>10}{:>10.2}", "kappa", "", 100.0 * self.kappa);
        out
    }
}
