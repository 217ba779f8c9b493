use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::frames::Sample;
use crate::kernel::Rng;

/// One leave-one-subject-out fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LosoSplit {
    pub held_out_subject: String,
    pub train_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
}

impl LosoSplit {
    pub fn is_train(&self, subject: &str) -> bool {
        self.train_subjects.contains(subject)
    }

    pub fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.contains(subject)
    }

    /// `(train, test)` sample indices; fails if a subject sits on both sides.
    pub fn partition(&self, samples: &[Sample]) -> Result<(Vec<usize>, Vec<usize>)> {
        if !self.train_subjects.is_disjoint(&self.test_subjects) {
            return Err(Error::State(format!(
                "fold {} leaks subjects between train and test",
                self.held_out_subject
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            if self.is_test(&s.subject_id) {
                test.push(i);
            } else if self.is_train(&s.subject_id) {
                train.push(i);
            }
        }
        Ok((train, test))
    }
}

/// One split per distinct subject, ordered by subject id.
pub fn loso_splits<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<LosoSplit>> {
    let all: BTreeSet<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect();
    if all.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            all.len()
        )));
    }
    Ok(all
        .iter()
        .map(|held| {
            let mut train = all.clone();
            train.remove(held);
            LosoSplit {
                held_out_subject: held.clone(),
                train_subjects: train,
                test_subjects: BTreeSet::from([held.clone()]),
            }
        })
        .collect())
}

/// Derives a fold's seed from the run seed and the held-out subject, so a
/// fold's result does not depend on which other folds run or in what order.
pub fn fold_seed(base: u64, subject: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in subject.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    base ^ h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubsampleSize {
    /// Exactly this many samples, spread over classes in proportion to availability.
    Total(usize),
    /// This many samples from every class present.
    PerClass(usize),
}

/// Class-stratified subset of `labels`, returned as ascending indices.
///
/// Each class draws a prefix of its own seeded shuffle, so growing the
/// request only ever adds samples and the full size is the identity.
pub fn subsample_indices(labels: &[usize], size: SubsampleSize, seed: u64) -> Result<Vec<usize>> {
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    let available: Vec<usize> = pools.iter().map(Vec::len).collect();
    let take = match size {
        SubsampleSize::Total(n) => {
            if n > labels.len() {
                return Err(Error::Argument(format!(
                    "requested {n} labelled samples, only {} available",
                    labels.len()
                )));
            }
            quota_allocation(&available, n)
        }
        SubsampleSize::PerClass(k) => {
            if let Some((c, &a)) = available.iter().enumerate().find(|&(_, &a)| a > 0 && a < k) {
                return Err(Error::Argument(format!(
                    "requested {k} samples per class, class {c} has {a}"
                )));
            }
            available.iter().map(|&a| if a == 0 { 0 } else { k }).collect()
        }
    };
    let mut chosen = Vec::new();
    for (c, pool) in pools.iter_mut().enumerate() {
        Rng::with_stream(seed, c as u64).shuffle(pool);
        chosen.extend_from_slice(&pool[..take[c]]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn subsample_labeled(train: &[Sample], size: SubsampleSize, seed: u64) -> Result<Vec<Sample>> {
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    Ok(subsample_indices(&labels, size, seed)?
        .into_iter()
        .map(|i| train[i].clone())
        .collect())
}

/// Balinski–Young quota method: seats go one at a time to the class with the
/// largest `pop / (seats + 1)` among those still below their upper quota.
/// Every class ends within one seat of its exact proportional share.
fn quota_allocation(populations: &[usize], seats: usize) -> Vec<usize> {
    let total: usize = populations.iter().sum();
    let mut alloc = vec![0usize; populations.len()];
    for h in 1..=seats {
        let mut best: Option<usize> = None;
        for (c, &p) in populations.iter().enumerate() {
            // eligible while alloc/h < p/total, kept in integers
            if p == 0 || (alloc[c] as u128) * (total as u128) >= (h as u128) * (p as u128) {
                continue;
            }
            best = match best {
                // p_c / (a_c + 1) > p_b / (a_b + 1)
                Some(b) if (p as u128) * (alloc[b] as u128 + 1)
                    <= (populations[b] as u128) * (alloc[c] as u128 + 1) => Some(b),
                _ => Some(c),
            };
        }
        alloc[best.expect("some class is below quota while seats remain")] += 1;
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, prop_assume, proptest};

    #[test]
    fn nine_subjects_nine_splits() {
        let subjects: Vec<String> = (101..=109).map(|s| s.to_string()).collect();
        let splits = loso_splits(&subjects).unwrap();
        assert_eq!(splits.len(), 9);
        for s in &splits {
            assert_eq!(s.train_subjects.len(), 8);
            assert!(s.train_subjects.is_disjoint(&s.test_subjects));
        }
    }

    #[test]
    fn two_subjects_mirror() {
        let splits = loso_splits(&["b", "a", "b"]).unwrap();
        assert_eq!(splits.len(), 2);
        assert_eq!(splits[0].held_out_subject, "a");
        assert_eq!(splits[0].train_subjects, BTreeSet::from(["b".to_string()]));
        assert_eq!(splits[1].train_subjects, BTreeSet::from(["a".to_string()]));
        assert!(loso_splits(&["a", "a"]).is_err());
    }

    #[test]
    fn fold_seed_depends_only_on_subject() {
        assert_eq!(fold_seed(7, "101"), fold_seed(7, "101"));
        assert_ne!(fold_seed(7, "101"), fold_seed(7, "102"));
        assert_ne!(fold_seed(7, "101"), fold_seed(8, "101"));
    }

    #[test]
    fn full_size_is_identity_and_overflow_errors() {
        let labels = vec![0, 1, 1, 2, 0, 2, 2];
        let idx = subsample_indices(&labels, SubsampleSize::Total(7), 3).unwrap();
        assert_eq!(idx, (0..7).collect::<Vec<_>>());
        assert!(subsample_indices(&labels, SubsampleSize::Total(8), 3).is_err());
        assert!(subsample_indices(&labels, SubsampleSize::PerClass(3), 3).is_err());
        assert_eq!(subsample_indices(&labels, SubsampleSize::PerClass(2), 3).unwrap().len(), 6);
    }

    fn pool() -> Vec<usize> {
        let mut rng = Rng::new(11);
        (0..4000).map(|_| [0, 0, 0, 1, 1, 2, 3, 4, 5, 5][rng.below(10)]).collect()
    }

    #[test]
    fn thousand_from_a_pool() {
        let labels = pool();
        let idx = subsample_indices(&labels, SubsampleSize::Total(1000), 5).unwrap();
        assert_eq!(idx.len(), 1000);
        for c in 0..6 {
            let have = labels.iter().filter(|&&l| l == c).count() as f64;
            let got = idx.iter().filter(|&&i| labels[i] == c).count() as f64;
            let exact = 1000.0 * have / labels.len() as f64;
            assert!((got - exact).abs() < 1.0 + 1e-12, "class {c}: {got} vs {exact}");
        }
        assert_eq!(idx, subsample_indices(&labels, SubsampleSize::Total(1000), 5).unwrap());
        assert_ne!(idx, subsample_indices(&labels, SubsampleSize::Total(1000), 6).unwrap());
    }

    proptest! {
        #[test]
        fn quota_and_nesting(pops in proptest::collection::vec(0usize..40, 1..7), frac in 0.0f64..=1.0) {
            let total: usize = pops.iter().sum();
            prop_assume!(total > 0);
            let n = (frac * total as f64) as usize;
            let alloc = quota_allocation(&pops, n);
            prop_assert_eq!(alloc.iter().sum::<usize>(), n);
            for (c, &p) in pops.iter().enumerate() {
                let exact = n as f64 * p as f64 / total as f64;
                prop_assert!((alloc[c] as f64 - exact).abs() < 1.0 + 1e-9);
                prop_assert!(alloc[c] <= p);
            }
            if n < total {
                let next = quota_allocation(&pops, n + 1);
                prop_assert!(next.iter().zip(&alloc).all(|(a, b)| a >= b));
            }
        }
    }
}
