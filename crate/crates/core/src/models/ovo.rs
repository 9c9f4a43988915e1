//! One-vs-one reduction for the binary LR and SVM learners.
//!
//! Each class pair `(a, b)` with `a < b` in L < M < H order gets one binary
//! model whose positive decision favours `a`. A pair hands its vote to the
//! favoured class; an exactly-zero decision splits the vote in half. The
//! class with the most votes wins. Vote ties go to the class with the larger
//! summed confidence, where a class's confidence is the sum of the pairwise
//! decision values oriented in its favour. Remaining ties go to L < M < H.
//!
//! The probability surrogate is `votes + 0.25 + atan(confidence) / (2π)`,
//! normalized over the trained classes. The added term lies in (0, 0.5), so
//! its argmax always reproduces the voting rule.

use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::dataset::ClassLabel;
use crate::error::Result;
use crate::preprocess::DesignMatrix;
use crate::scalar::Scalar;

/// A binary learner whose positive decision favours the first class of its pair.
pub trait BinaryDecision<T: Scalar> {
    fn decision(&self, x: &[T]) -> T;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvoModel<B> {
    pub classes: [bool; 3],
    pub pairs: Vec<(ClassLabel, ClassLabel)>,
    pub models: Vec<B>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvoVote<T> {
    pub votes: [T; 3],
    pub confidence: [T; 3],
}

impl<T: Scalar> OvoVote<T> {
    pub fn tally(classes: [bool; 3], pairs: &[(ClassLabel, ClassLabel)], decisions: &[T]) -> Self {
        debug_assert_eq!(pairs.len(), decisions.len());
        let half = T::of(0.5);
        let mut votes = [T::zero(); 3];
        let mut confidence = [T::zero(); 3];
        for (&(a, b), &d) in pairs.iter().zip(decisions) {
            let (a, b) = (a.index(), b.index());
            if d > T::zero() {
                votes[a] += T::one();
            } else if d < T::zero() {
                votes[b] += T::one();
            } else {
                votes[a] += half;
                votes[b] += half;
            }
            confidence[a] += d;
            confidence[b] -= d;
        }
        for c in 0..3 {
            if !classes[c] {
                votes[c] = T::neg_infinity();
                confidence[c] = T::neg_infinity();
            }
        }
        OvoVote { votes, confidence }
    }

    pub fn winner(&self) -> ClassLabel {
        let mut best = None::<usize>;
        for c in 0..3 {
            if self.votes[c] == T::neg_infinity() {
                continue;
            }
            best = match best {
                None => Some(c),
                Some(b) => {
                    let better = self.votes[c] > self.votes[b]
                        || (self.votes[c] == self.votes[b] && self.confidence[c] > self.confidence[b]);
                    Some(if better { c } else { b })
                }
            };
        }
        ClassLabel::ALL[best.expect("at least one trained class")]
    }

    pub fn surrogate_proba(&self) -> [T; 3] {
        let quarter = T::of(0.25);
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        let mut s = [T::zero(); 3];
        for c in 0..3 {
            if self.votes[c] != T::neg_infinity() {
                s[c] = self.votes[c] + quarter + self.confidence[c].atan() / two_pi;
            }
        }
        let total = s[0] + s[1] + s[2];
        s.map(|v| v / total)
    }
}

/// Class pairs in L < M < H order over the trained classes.
pub fn class_pairs(classes: [bool; 3]) -> Vec<(ClassLabel, ClassLabel)> {
    let present: Vec<ClassLabel> = ClassLabel::ALL
        .into_iter()
        .filter(|l| classes[l.index()])
        .collect();
    let mut pairs = Vec::new();
    for i in 0..present.len() {
        for j in i + 1..present.len() {
            pairs.push((present[i], present[j]));
        }
    }
    pairs
}

/// Fits one binary model per class pair. `fit_binary` receives the pair's
/// rows with targets +1 (first class) and -1 (second class).
pub fn fit_pairs<T: Scalar, B>(
    x: &DesignMatrix<T>,
    y: &[ClassLabel],
    mut fit_binary: impl FnMut(&DesignMatrix<T>, &[T]) -> Result<B>,
) -> Result<OvoModel<B>> {
    let classes = super::present_classes(y);
    let pairs = class_pairs(classes);
    let mut models = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == a || y[i] == b).collect();
        let sub = x.select_rows(&rows);
        let target: Vec<T> = rows
            .iter()
            .map(|&i| if y[i] == a { T::one() } else { -T::one() })
            .collect();
        models.push(fit_binary(&sub, &target)?);
    }
    Ok(OvoModel {
        classes,
        pairs,
        models,
    })
}

impl<B> OvoModel<B> {
    pub fn vote<T: Scalar>(&self, x: &[T]) -> OvoVote<T>
    where
        B: BinaryDecision<T>,
    {
        let decisions: Vec<T> = self.models.iter().map(|m| m.decision(x)).collect();
        OvoVote::tally(self.classes, &self.pairs, &decisions)
    }
}

impl<T: Scalar, B: BinaryDecision<T>> Classifier<T> for OvoModel<B> {
    fn proba_row(&self, x: &[T]) -> [T; 3] {
        self.vote(x).surrogate_proba()
    }

    fn predict_row(&self, x: &[T]) -> ClassLabel {
        self.vote(x).winner()
    }
}
