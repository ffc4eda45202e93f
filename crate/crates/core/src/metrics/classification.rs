use crate::error::{Error, Result};

/// One-vs-rest counts for every class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_pos: Vec<usize>,
    pub false_pos: Vec<usize>,
    pub false_neg: Vec<usize>,
    pub total: usize,
}

impl ConfusionCounts {
    pub fn from_predictions(preds: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Usage(format!(
                "{} predictions for {} labels",
                preds.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= classes) {
            return Err(Error::Usage(format!("class {bad} outside 0..{classes}")));
        }
        let mut counts = Self {
            true_pos: vec![0; classes],
            false_pos: vec![0; classes],
            false_neg: vec![0; classes],
            total: preds.len(),
        };
        for (&p, &l) in preds.iter().zip(labels) {
            if p == l {
                counts.true_pos[p] += 1;
            } else {
                counts.false_pos[p] += 1;
                counts.false_neg[l] += 1;
            }
        }
        Ok(counts)
    }

    pub fn classes(&self) -> usize {
        self.true_pos.len()
    }

    /// F1 of one class; zero when precision and recall are both zero or undefined.
    pub fn f1(&self, class: usize) -> f64 {
        f1_from_counts(self.true_pos[class], self.false_pos[class], self.false_neg[class])
    }

    pub fn macro_f1(&self) -> f64 {
        (0..self.classes()).map(|c| self.f1(c)).sum::<f64>() / self.classes() as f64
    }
}

/// `2tp / (2tp + fp + fn)`: one division of exact integers, so the result is
/// the correctly rounded value of the harmonic mean of precision and recall.
fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
}

/// F1 of `positive_class`.
pub fn f1_binary(preds: &[usize], labels: &[usize], positive_class: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Usage("f1 over zero samples".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == positive_class, l == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1_from_counts(tp, fp, fn_))
}

/// Unweighted mean of per-class F1 over all `classes`.
pub fn f1_macro(preds: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Usage("f1 over zero samples".into()));
    }
    Ok(ConfusionCounts::from_predictions(preds, labels, classes)?.macro_f1())
}
