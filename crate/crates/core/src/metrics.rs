//! Chunk-level precision, recall and F-measure.
//!
//! Only exact span matches count. Zero denominators follow fixed
//! conventions: two empty span sets agree perfectly (P = R = F = 1), and
//! any other case with no correct spans scores 0.

use alloc::string::String;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ChunkSpan, Labeling};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("reference has {reference} labelings, proposal has {proposed}")]
    CorpusLength { reference: usize, proposed: usize },
    #[error("sentence {index}: labelings have lengths {reference} and {proposed}")]
    SentenceLength {
        index: usize,
        reference: usize,
        proposed: usize,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrCounts {
    pub correct: usize,
    pub proposed: usize,
    pub reference: usize,
}

impl PrCounts {
    pub fn precision(&self) -> f64 {
        match (self.proposed, self.reference) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (p, _) => self.correct as f64 / p as f64,
        }
    }

    pub fn recall(&self) -> f64 {
        match (self.reference, self.proposed) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            (r, _) => self.correct as f64 / r as f64,
        }
    }

    pub fn f_beta(&self, beta: Beta) -> f64 {
        f_beta(*self, beta)
    }
}

impl core::ops::Add for PrCounts {
    type Output = PrCounts;
    fn add(self, rhs: PrCounts) -> PrCounts {
        PrCounts {
            correct: self.correct + rhs.correct,
            proposed: self.proposed + rhs.proposed,
            reference: self.reference + rhs.reference,
        }
    }
}

impl core::ops::AddAssign for PrCounts {
    fn add_assign(&mut self, rhs: PrCounts) {
        *self = *self + rhs;
    }
}

impl core::iter::Sum for PrCounts {
    fn sum<I: Iterator<Item = PrCounts>>(iter: I) -> PrCounts {
        iter.fold(PrCounts::default(), |a, b| a + b)
    }
}

/// Relative weight of recall against precision; 1 weighs them equally.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Beta(f64);

impl Beta {
    pub const ONE: Beta = Beta(1.0);

    /// Returns `None` for negative or non-finite values.
    pub fn new(beta: f64) -> Option<Beta> {
        (beta.is_finite() && beta >= 0.0).then_some(Beta(beta))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Beta {
    fn default() -> Self {
        Beta::ONE
    }
}

/// Counts exact matches between two span sets. Both inputs must be sorted
/// and disjoint, as produced by [`Labeling::spans`].
pub fn pr_counts(reference: &[ChunkSpan], proposed: &[ChunkSpan]) -> PrCounts {
    let (mut i, mut j, mut correct) = (0, 0, 0);
    while i < reference.len() && j < proposed.len() {
        let (r, p) = (reference[i], proposed[j]);
        if r == p {
            correct += 1;
            i += 1;
            j += 1;
        } else if r < p {
            i += 1;
        } else {
            j += 1;
        }
    }
    PrCounts {
        correct,
        proposed: proposed.len(),
        reference: reference.len(),
    }
}

pub fn labeling_counts(reference: &Labeling, proposed: &Labeling) -> PrCounts {
    pr_counts(&reference.spans(), &proposed.spans())
}

pub fn f_beta(counts: PrCounts, beta: Beta) -> f64 {
    if counts.proposed == 0 && counts.reference == 0 {
        return 1.0;
    }
    if counts.correct == 0 {
        return 0.0;
    }
    let p = counts.precision();
    let r = counts.recall();
    let b2 = beta.0 * beta.0;
    let denom = b2 * p + r;
    if denom == 0.0 {
        0.0
    } else {
        (b2 + 1.0) * p * r / denom
    }
}

/// F₁ of `proposed` scored against `reference`.
pub fn f1(reference: &[ChunkSpan], proposed: &[ChunkSpan]) -> f64 {
    f_beta(pr_counts(reference, proposed), Beta::ONE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
    pub counts: PrCounts,
}

impl EvalReport {
    pub fn from_counts(counts: PrCounts, beta: Beta) -> Self {
        EvalReport {
            precision: counts.precision(),
            recall: counts.recall(),
            fmeasure: f_beta(counts, beta),
            counts,
        }
    }

    /// Flat `key: value` block, one line per field.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "precision: {:.6}", self.precision);
        let _ = writeln!(s, "recall: {:.6}", self.recall);
        let _ = writeln!(s, "fmeasure: {:.6}", self.fmeasure);
        let _ = writeln!(s, "correct: {}", self.counts.correct);
        let _ = writeln!(s, "proposed: {}", self.counts.proposed);
        let _ = writeln!(s, "reference: {}", self.counts.reference);
        s
    }
}

/// Micro-averaged scores: counts are pooled over sentences first.
pub fn evaluate_corpus(
    reference: &[Labeling],
    proposed: &[Labeling],
    beta: Beta,
) -> Result<EvalReport, MetricsError> {
    if reference.len() != proposed.len() {
        return Err(MetricsError::CorpusLength {
            reference: reference.len(),
            proposed: proposed.len(),
        });
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut total = PrCounts::default();
    for (index, (r, p)) in reference.iter().zip(proposed).enumerate() {
        if r.len() != p.len() {
            return Err(MetricsError::SentenceLength {
                index,
                reference: r.len(),
                proposed: p.len(),
            });
        }
        total += labeling_counts(r, p);
    }
    Ok(EvalReport::from_counts(total, beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ChunkTag::*;
    use alloc::vec;

    fn sp(s: usize, e: usize) -> ChunkSpan {
        ChunkSpan::new(s, e)
    }

    fn counts(c: usize, p: usize, r: usize) -> PrCounts {
        PrCounts {
            correct: c,
            proposed: p,
            reference: r,
        }
    }

    #[test]
    fn count_examples() {
        assert_eq!(pr_counts(&[sp(0, 2)], &[sp(0, 2)]), counts(1, 1, 1));
        assert_eq!(pr_counts(&[sp(0, 2)], &[sp(0, 1)]), counts(0, 1, 1));
        assert_eq!(
            pr_counts(&[sp(0, 1), sp(2, 4)], &[sp(2, 4), sp(5, 6)]),
            counts(1, 2, 2)
        );
    }

    #[test]
    fn f_examples() {
        assert_eq!(f_beta(counts(3, 3, 3), Beta::ONE), 1.0);
        // P = 0.9, R = 0.8
        let f = f_beta(counts(72, 80, 90), Beta::ONE);
        assert!((f - 0.847_058_823_529_411_8).abs() < 1e-12, "{f}");
        assert_eq!(f_beta(counts(0, 0, 0), Beta::ONE), 1.0);
        assert_eq!(f_beta(counts(0, 0, 4), Beta::ONE), 0.0);
        assert_eq!(f_beta(counts(0, 3, 0), Beta::ONE), 0.0);
        assert_eq!(f_beta(counts(0, 3, 3), Beta::ONE), 0.0);
    }

    #[test]
    fn beta_weights_recall() {
        // P = 1, R = 0.5
        let c = counts(1, 1, 2);
        let f2 = f_beta(c, Beta::new(2.0).unwrap());
        assert!((f2 - 5.0 * 0.5 / (4.0 + 0.5)).abs() < 1e-15);
        let f0 = f_beta(c, Beta::new(0.0).unwrap());
        assert!((f0 - 1.0).abs() < 1e-15);
        assert!(Beta::new(-1.0).is_none());
    }

    #[test]
    fn corpus_examples() {
        let l = |t: &[_]| Labeling::new(t.to_vec()).unwrap();
        let gold = vec![l(&[I, I, O]), l(&[O, I])];
        let r = evaluate_corpus(&gold, &gold, Beta::ONE).unwrap();
        assert_eq!(r.fmeasure, 1.0);

        // (1,1,2) and (1,2,1)
        let ref_a = l(&[I, O, I, O]);
        let prop_a = l(&[I, O, O, O]);
        let ref_b = l(&[I, O, O, O]);
        let prop_b = l(&[I, O, I, O]);
        let r = evaluate_corpus(&[ref_a, ref_b], &[prop_a, prop_b], Beta::ONE).unwrap();
        assert_eq!(r.counts, counts(2, 3, 3));
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.fmeasure - 2.0 / 3.0).abs() < 1e-15);

        assert_eq!(
            evaluate_corpus(&[], &[], Beta::ONE),
            Err(MetricsError::EmptyCorpus)
        );
        assert!(matches!(
            evaluate_corpus(&gold, &gold[..1], Beta::ONE),
            Err(MetricsError::CorpusLength { .. })
        ));
    }

    #[test]
    fn report_block() {
        let r = EvalReport::from_counts(counts(1, 2, 2), Beta::ONE);
        assert_eq!(
            r.to_key_values(),
            "precision: 0.500000\nrecall: 0.500000\nfmeasure: 0.500000\ncorrect: 1\nproposed: 2\nreference: 2\n"
        );
    }
}
