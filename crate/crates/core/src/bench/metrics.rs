use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    /// Fraction of all test samples classified correctly.
    pub avg_accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    /// Mean per-class accuracy over present classes.
    pub macro_accuracy: f64,
    /// Mean of the `⌈0.1·C⌉` lowest per-class accuracies, `C` counting
    /// present classes; ties broken by class index.
    pub worst10_accuracy: f64,
    /// Classes excluded because the test set has none of them.
    pub missing_classes: Vec<usize>,
}

pub fn eval_classification(pred: &[usize], labels: &[usize], num_classes: usize) -> Result<ClassificationMetrics> {
    if pred.len() != labels.len() {
        return Err(Error::dim(format!("{} predictions for {} labels", pred.len(), labels.len())));
    }
    if labels.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let mut hit = vec![0usize; num_classes];
    let mut tot = vec![0usize; num_classes];
    for (&p, &l) in pred.iter().zip(labels) {
        if l >= num_classes {
            return Err(Error::invalid(format!("label {l} outside 0..{num_classes}")));
        }
        tot[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| (tot[c] > 0).then(|| hit[c] as f64 / tot[c] as f64))
        .collect();
    let mut present: Vec<(f64, usize)> = per_class.iter().enumerate().filter_map(|(c, a)| a.map(|a| (a, c))).collect();
    present.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = (present.len() as f64 * 0.1).ceil() as usize;
    let worst = present[..k].iter().map(|p| p.0).sum::<f64>() / k as f64;
    Ok(ClassificationMetrics {
        avg_accuracy: hit.iter().sum::<usize>() as f64 / labels.len() as f64,
        macro_accuracy: present.iter().map(|p| p.0).sum::<f64>() / present.len() as f64,
        worst10_accuracy: worst,
        missing_classes: (0..num_classes).filter(|&c| tot[c] == 0).collect(),
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mse: f64,
    pub mae: f64,
    /// Mean squared error over the `⌈0.1·n⌉` largest absolute errors.
    pub worst10_mse: f64,
}

pub fn eval_regression(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::dim(format!("{} predictions for {} targets", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let n = pred.len() as f64;
    let mut err: Vec<f64> = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).collect();
    let mse = err.iter().map(|e| e * e).sum::<f64>() / n;
    let mae = err.iter().sum::<f64>() / n;
    err.sort_by(|a, b| b.total_cmp(a));
    let k = (n * 0.1).ceil() as usize;
    let worst10_mse = err[..k].iter().map(|e| e * e).sum::<f64>() / k as f64;
    Ok(RegressionMetrics { mse, mae, worst10_mse })
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let labels: Vec<usize> = (0..80).map(|i| i % 8).collect();
        let m = eval_classification(&labels, &labels, 8).unwrap();
        assert_eq!((m.avg_accuracy, m.worst10_accuracy), (1.0, 1.0));
        let m = eval_classification(&vec![3; 80], &labels, 8).unwrap();
        assert_eq!(m.avg_accuracy, 0.125);
        assert_eq!(m.worst10_accuracy, 0.0);
    }

    #[test]
    fn worst10_uses_one_class_at_eight() {
        let labels = vec![0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6, 7, 7];
        let mut pred = labels.clone();
        pred[0] = 1;
        let m = eval_classification(&pred, &labels, 8).unwrap();
        assert_eq!(m.worst10_accuracy, 0.5);
    }

    #[test]
    fn missing_classes_are_flagged() {
        let m = eval_classification(&[0, 1, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(m.missing_classes, vec![2]);
        assert_eq!(m.per_class[2], None);
    }

    #[test]
    fn regression_hand_example() {
        let truth = vec![0.0; 10];
        let mut pred = vec![1.0; 10];
        pred[9] = 10.0;
        let m = eval_regression(&pred, &truth).unwrap();
        assert!((m.mse - 10.9).abs() < 1e-12);
        assert_eq!(m.worst10_mse, 100.0);
        let z = eval_regression(&truth, &truth).unwrap();
        assert_eq!((z.mse, z.mae, z.worst10_mse), (0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn worst10_below_macro(pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..200)) {
            let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let m = eval_classification(&pred, &labels, 5).unwrap();
            prop_assert!(m.worst10_accuracy <= m.macro_accuracy + 1e-15);
        }

        #[test]
        fn worst10_mse_dominates(e in proptest::collection::vec(-10.0f64..10.0, 1..100)) {
            let truth = vec![0.0; e.len()];
            let m = eval_regression(&e, &truth).unwrap();
            prop_assert!(m.worst10_mse >= m.mse - 1e-12);
        }
    }
}
