//! Stratified shuffle splits and stratified k-fold.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::rng::{child_seed, rng_from_seed};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Protocol {
    /// Repeated hold-out.
    Rho { repeats: usize, test_fraction: f64 },
    Kfold { k: usize, repeats: usize },
}

impl Protocol {
    pub const RHO: Protocol = Protocol::Rho {
        repeats: 100,
        test_fraction: 0.1,
    };
    pub const CV5: Protocol = Protocol::Kfold { k: 5, repeats: 1 };
    pub const CV10X10: Protocol = Protocol::Kfold { k: 10, repeats: 10 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            Protocol::Rho {
                repeats,
                test_fraction,
            } => {
                if repeats == 0 {
                    return Err(Error::invalid("RHO repeats must be >= 1"));
                }
                if !(test_fraction > 0.0 && test_fraction < 1.0) {
                    return Err(Error::invalid(format!(
                        "test_fraction must lie in (0, 1), got {test_fraction}"
                    )));
                }
            }
            Protocol::Kfold { k, repeats } => {
                if k < 2 || repeats == 0 {
                    return Err(Error::invalid(format!(
                        "k-fold needs k >= 2 and repeats >= 1, got k = {k}, repeats = {repeats}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_splits(&self) -> usize {
        match *self {
            Protocol::Rho { repeats, .. } => repeats,
            Protocol::Kfold { k, repeats } => k * repeats,
        }
    }

    pub fn repeats(&self) -> usize {
        match *self {
            Protocol::Rho { repeats, .. } | Protocol::Kfold { repeats, .. } => repeats,
        }
    }

    /// Short tag used in file names and tables.
    pub fn tag(&self) -> String {
        match *self {
            Protocol::Rho { repeats, .. } => {
                if repeats == 100 {
                    "RHO".into()
                } else {
                    format!("RHO{repeats}")
                }
            }
            Protocol::Kfold { k, repeats: 1 } => format!("CV{k}"),
            Protocol::Kfold { k, repeats } => format!("CV{k}x{repeats}"),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub protocol: Protocol,
    pub master_seed: u64,
}

/// A split with its position in the plan and the seed reserved for the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedSplit {
    pub index: usize,
    pub repetition: usize,
    pub fold: usize,
    pub model_seed: u64,
    pub split: Split,
}

impl SplitPlan {
    pub fn new(protocol: Protocol, master_seed: u64) -> Self {
        SplitPlan {
            protocol,
            master_seed,
        }
    }

    /// All splits in index order. Repetition `r` shuffles with
    /// `child_seed(child_seed(master, r), 0)`; the model for fold `f` of that
    /// repetition is seeded with `child_seed(child_seed(master, r), 1 + f)`.
    pub fn splits(&self, y: &[ClassLabel]) -> Result<Vec<PlannedSplit>> {
        self.protocol.validate()?;
        let mut out = Vec::with_capacity(self.protocol.n_splits());
        for r in 0..self.protocol.repeats() {
            let rep_seed = child_seed(self.master_seed, r as u64);
            let folds = match self.protocol {
                Protocol::Rho { test_fraction, .. } => {
                    vec![stratified_shuffle_split(y, test_fraction, child_seed(rep_seed, 0))?]
                }
                Protocol::Kfold { k, .. } => stratified_kfold(y, k, child_seed(rep_seed, 0))?,
            };
            for (f, split) in folds.into_iter().enumerate() {
                out.push(PlannedSplit {
                    index: out.len(),
                    repetition: r,
                    fold: f,
                    model_seed: child_seed(rep_seed, 1 + f as u64),
                    split,
                });
            }
        }
        Ok(out)
    }
}

fn class_members(y: &[ClassLabel]) -> [Vec<usize>; 3] {
    let mut members: [Vec<usize>; 3] = Default::default();
    for (i, l) in y.iter().enumerate() {
        members[l.index()].push(i);
    }
    members
}

/// Per-class test counts: `round(count * fraction)` nudged to sum to
/// `ceil(n * fraction)`. Classes whose rounding moved furthest from the exact
/// quota are adjusted first; ties go to the lower class index.
pub fn test_allocation(counts: &[usize; 3], test_fraction: f64) -> [usize; 3] {
    let n: usize = counts.iter().sum();
    let total = ((n as f64 * test_fraction) - 1e-9).ceil().max(0.0) as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * test_fraction).collect();
    let mut alloc = [0usize; 3];
    for c in 0..3 {
        alloc[c] = (exact[c].round() as usize).min(counts[c]);
    }
    loop {
        let sum: usize = alloc.iter().sum();
        if sum == total {
            break;
        }
        let pick = |better: &dyn Fn(f64, f64) -> bool, ok: &dyn Fn(usize) -> bool| {
            let mut best: Option<usize> = None;
            for c in 0..3 {
                if !ok(c) {
                    continue;
                }
                let gap = exact[c] - alloc[c] as f64;
                if best.is_none_or(|b| better(gap, exact[b] - alloc[b] as f64)) {
                    best = Some(c);
                }
            }
            best
        };
        if sum < total {
            match pick(&|a, b| a > b, &|c| alloc[c] < counts[c]) {
                Some(c) => alloc[c] += 1,
                None => break,
            }
        } else {
            match pick(&|a, b| a < b, &|c| alloc[c] > 0) {
                Some(c) => alloc[c] -= 1,
                None => break,
            }
        }
    }
    alloc
}

/// One stratified train/test split. Each present class needs at least
/// `1 / test_fraction` members; at least two classes must be present.
pub fn stratified_shuffle_split(y: &[ClassLabel], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut members = class_members(y);
    let counts = members.each_ref().map(Vec::len);
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("stratified split needs at least two classes"));
    }
    let min_size = (1.0 / test_fraction - 1e-9).ceil() as usize;
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 && n < min_size {
            return Err(Error::invalid(format!(
                "class {} has {n} rows; a test fraction of {test_fraction} needs at least {min_size}",
                ClassLabel::ALL[c]
            )));
        }
    }
    let alloc = test_allocation(&counts, test_fraction);
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..3 {
        members[c].shuffle(&mut rng);
        test.extend_from_slice(&members[c][..alloc[c]]);
        train.extend_from_slice(&members[c][alloc[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Stratified k-fold: each class is shuffled, then its members are dealt to
/// folds round-robin with a counter that carries over between classes, so
/// fold sizes differ by at most one. Every present class needs at least `k`
/// members.
pub fn stratified_kfold(y: &[ClassLabel], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > y.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the {} rows", y.len())));
    }
    let mut members = class_members(y);
    for (c, m) in members.iter().enumerate() {
        if !m.is_empty() && m.len() < k {
            return Err(Error::invalid(format!(
                "class {} has {} rows, fewer than k = {k}",
                ClassLabel::ALL[c],
                m.len()
            )));
        }
    }
    let mut rng = rng_from_seed(seed);
    let mut fold_of = vec![0usize; y.len()];
    let mut counter = 0usize;
    for m in members.iter_mut() {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            fold_of[i] = counter % k;
            counter += 1;
        }
    }
    Ok((0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..y.len()).partition(|&i| fold_of[i] == f);
            Split { train, test }
        })
        .collect())
}
