use super::mix_seed;
use crate::corpus::{CorpusManifest, Label};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Speaker roles for one fold. Lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub index: usize,
    pub test: Vec<String>,
    pub dev: Vec<String>,
    pub train: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
    /// Speaker -> label for every speaker in the plan.
    pub labels: BTreeMap<String, Label>,
}

impl FoldPlan {
    /// Per-class speaker counts of a role list.
    pub fn class_counts(&self, speakers: &[String]) -> [usize; 2] {
        let mut c = [0; 2];
        for s in speakers {
            c[self.labels[s].index()] += 1;
        }
        c
    }

    /// Checks disjoint roles within every fold and that the test folds
    /// partition the speakers.
    pub fn validate(&self) -> Result<()> {
        let mut seen_test = BTreeSet::new();
        for f in &self.folds {
            let mut roles = BTreeSet::new();
            for s in f.test.iter().chain(&f.dev).chain(&f.train) {
                if !self.labels.contains_key(s) {
                    return Err(Error::FoldPlan(format!("fold {}: unknown speaker {s}", f.index)));
                }
                if !roles.insert(s) {
                    return Err(Error::FoldPlan(format!("fold {}: speaker {s} has two roles", f.index)));
                }
            }
            if roles.len() != self.labels.len() {
                return Err(Error::FoldPlan(format!(
                    "fold {}: not every speaker has a role",
                    f.index
                )));
            }
            for s in &f.test {
                if !seen_test.insert(s.clone()) {
                    return Err(Error::FoldPlan(format!("speaker {s} is tested in two folds")));
                }
            }
        }
        if seen_test.len() != self.labels.len() {
            return Err(Error::FoldPlan("test folds do not cover every speaker".into()));
        }
        Ok(())
    }
}

/// Speaker-independent stratified k-fold plan.
///
/// Speakers of each class are shuffled with `seed` and dealt round-robin
/// into the k test folds, the deal continuing across classes so fold sizes
/// differ by at most one. Dev speakers are drawn per class from the
/// remaining speakers: as many as the fold tests of that class, but never
/// more than half of what remains, so the training set stays at least as
/// large as the dev set.
pub fn make_folds(manifest: &CorpusManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::FoldPlan(format!("need at least 2 folds, got {k}")));
    }
    let labels = manifest.speaker_labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut deal = 0;
    let mut by_class = Vec::new();
    for label in [Label::Neurotypical, Label::Dysarthric] {
        let mut speakers = manifest.speakers_of(label);
        if speakers.len() < k {
            return Err(Error::FoldPlan(format!(
                "class {label} has {} speakers, fewer than {k} folds",
                speakers.len()
            )));
        }
        speakers.shuffle(&mut rng);
        for s in &speakers {
            test[deal % k].push(s.clone());
            deal += 1;
        }
        by_class.push(speakers);
    }

    let folds = test
        .into_iter()
        .enumerate()
        .map(|(i, mut test)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64, 0xDE5]));
            let mut dev = Vec::new();
            let mut train = Vec::new();
            for class in &by_class {
                let in_test = class.iter().filter(|s| test.contains(s)).count();
                let mut rest: Vec<String> = class.iter().filter(|s| !test.contains(s)).cloned().collect();
                rest.sort();
                rest.shuffle(&mut rng);
                let n_dev = in_test.min(rest.len() / 2);
                train.extend(rest.split_off(n_dev));
                dev.extend(rest);
            }
            test.sort();
            dev.sort();
            train.sort();
            Fold {
                index: i,
                test,
                dev,
                train,
            }
        })
        .collect();
    let plan = FoldPlan { k, seed, folds, labels };
    plan.validate()?;
    Ok(plan)
}
