use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, macro F1 and support-weighted F1.
///
/// Classes are `class_set` together with every label seen in either vector.
/// Precision, recall or F1 with a zero denominator count as 0.
pub fn evaluate(y_true: &[usize], y_pred: &[usize], class_set: &[usize]) -> Result<MetricsReport, ModelError> {
    if y_true.len() != y_pred.len() {
        return Err(ModelError::LengthMismatch(y_true.len(), y_pred.len()));
    }
    let n = y_true.len();
    if n == 0 {
        return Err(ModelError::Invalid("evaluate needs at least one prediction".into()));
    }
    let classes: BTreeSet<usize> = class_set.iter().chain(y_true).chain(y_pred).copied().collect();
    let per_class: Vec<ClassMetrics> = classes
        .iter()
        .map(|&label| {
            let mut m = ClassMetrics {
                label,
                tp: 0,
                fp: 0,
                fn_: 0,
                support: 0,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            };
            for (&t, &p) in y_true.iter().zip(y_pred) {
                match (t == label, p == label) {
                    (true, true) => m.tp += 1,
                    (false, true) => m.fp += 1,
                    (true, false) => m.fn_ += 1,
                    (false, false) => {}
                }
            }
            m.support = m.tp + m.fn_;
            m.precision = ratio(m.tp, m.tp + m.fp);
            m.recall = ratio(m.tp, m.tp + m.fn_);
            let s = m.precision + m.recall;
            m.f1 = if s == 0.0 {
                0.0
            } else {
                2.0 * m.precision * m.recall / s
            };
            m
        })
        .collect();
    let correct: usize = per_class.iter().map(|m| m.tp).sum();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
    let weighted_f1 = per_class.iter().map(|m| m.support as f64 * m.f1).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        n,
        accuracy: ratio(correct, n),
        macro_f1,
        weighted_f1,
        per_class,
    })
}

impl MetricsReport {
    /// Per-class rows followed by the three summary scores.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ModelError> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| ModelError::Io(e.into());
        w.write_record(["class", "support", "tp", "fp", "fn", "precision", "recall", "f1"])
            .map_err(io)?;
        for m in &self.per_class {
            w.write_record([
                m.label.to_string(),
                m.support.to_string(),
                m.tp.to_string(),
                m.fp.to_string(),
                m.fn_.to_string(),
                m.precision.to_string(),
                m.recall.to_string(),
                m.f1.to_string(),
            ])
            .map_err(io)?;
        }
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("weighted_f1", self.weighted_f1),
        ] {
            w.write_record([name, &self.n.to_string(), "", "", "", "", "", &v.to_string()])
                .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let r = evaluate(&[1, 2, 3], &[1, 2, 3], &[]).unwrap();
        assert_eq!((r.accuracy, r.macro_f1, r.weighted_f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_mistake() {
        let r = evaluate(&[1, 1, 2], &[1, 2, 2], &[1, 2]).unwrap();
        let two_thirds = 2.0 / 3.0;
        assert!((r.accuracy - two_thirds).abs() < 1e-15);
        for m in &r.per_class {
            assert!((m.f1 - two_thirds).abs() < 1e-15);
        }
        assert!((r.macro_f1 - two_thirds).abs() < 1e-15);
        assert!((r.weighted_f1 - two_thirds).abs() < 1e-15);
    }

    #[test]
    fn total_miss() {
        let r = evaluate(&[1, 1], &[2, 2], &[1, 2]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.macro_f1, 0.0);
        assert_eq!(r.per_class[1].support, 0);
    }

    #[test]
    fn unpredicted_class_is_reported() {
        let r = evaluate(&[1, 2, 3], &[1, 1, 1], &[]).unwrap();
        assert_eq!(r.per_class.len(), 3);
        assert_eq!(r.per_class[2].recall, 0.0);
        assert_eq!(r.per_class.iter().map(|m| m.support).sum::<usize>(), 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            evaluate(&[1], &[1, 2], &[]),
            Err(ModelError::LengthMismatch(1, 2))
        ));
        assert!(evaluate(&[], &[], &[1]).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        evaluate(&[1, 2], &[1, 2], &[]).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "class,support,tp,fp,fn,precision,recall,f1"
        );
        assert_eq!(text.lines().last().unwrap(), "weighted_f1,2,,,,,,1");
    }
}
