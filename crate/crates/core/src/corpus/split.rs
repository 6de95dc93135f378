//! Multi-label iterative stratification.
//!
//! Labels are processed rarest first. Each carrier of the current label goes
//! to the split that still wants the most examples of that label; ties fall
//! to the split with the largest remaining overall demand, then to the
//! smallest split so far, then to the lowest split index. The seed only
//! fixes the order in which examples are visited.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::Corpus;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    pub train: BTreeSet<u32>,
    pub validation: BTreeSet<u32>,
    pub test: BTreeSet<u32>,
}

impl SplitAssignment {
    pub fn split_of(&self, track_id: u32) -> Option<Split> {
        if self.train.contains(&track_id) {
            Some(Split::Train)
        } else if self.validation.contains(&track_id) {
            Some(Split::Validation)
        } else if self.test.contains(&track_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn get(&self, split: Split) -> &BTreeSet<u32> {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }
}

/// Assigns each example (given by its label list) to one of `ratios.len()`
/// splits. Returns the split index per example.
pub fn iterative_stratification(
    labels: &[Vec<u32>],
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<usize>> {
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be nonnegative and sum to 1, got {ratios:?}"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("cannot split an empty corpus".into()));
    }
    let k = ratios.len();
    let n = labels.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng_for(seed, "stratified-split"));

    let mut carriers: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &e in &order {
        for &l in &labels[e] {
            carriers.entry(l).or_default().push(e);
        }
    }
    let mut want_label: BTreeMap<u32, Vec<f64>> = carriers
        .iter()
        .map(|(&l, c)| (l, ratios.iter().map(|r| r * c.len() as f64).collect()))
        .collect();
    let mut want_split: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = vec![0usize; k];
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut remaining: BTreeMap<u32, usize> = carriers.iter().map(|(&l, c)| (l, c.len())).collect();

    let choose = |want: &[f64], want_split: &[f64], sizes: &[usize]| -> usize {
        (0..k)
            .max_by(|&a, &b| {
                want[a]
                    .total_cmp(&want[b])
                    .then(want_split[a].total_cmp(&want_split[b]))
                    .then(sizes[b].cmp(&sizes[a]))
                    .then(b.cmp(&a))
            })
            .expect("at least one split")
    };

    loop {
        let next = remaining
            .iter()
            .filter(|(_, &c)| c > 0)
            .min_by_key(|(&l, &c)| (c, l))
            .map(|(&l, _)| l);
        let Some(label) = next else { break };
        for &e in &carriers[&label] {
            if assigned[e].is_some() {
                continue;
            }
            let s = choose(&want_label[&label], &want_split, &sizes);
            assigned[e] = Some(s);
            sizes[s] += 1;
            want_split[s] -= 1.0;
            for l in &labels[e] {
                want_label.get_mut(l).expect("label seen")[s] -= 1.0;
                *remaining.get_mut(l).expect("label seen") -= 1;
            }
        }
    }
    // unlabeled examples follow overall demand only
    for &e in &order {
        if assigned[e].is_none() {
            let zeros = vec![0.0; k];
            let s = choose(&zeros, &want_split, &sizes);
            assigned[e] = Some(s);
            sizes[s] += 1;
            want_split[s] -= 1.0;
        }
    }
    Ok(assigned
        .into_iter()
        .map(|s| s.expect("all assigned"))
        .collect())
}

/// Train/validation/test split stratified over genre labels.
pub fn stratified_split(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let labels: Vec<Vec<u32>> = corpus
        .tracks()
        .iter()
        .map(|t| t.genre_ids.clone())
        .collect();
    let which = iterative_stratification(&labels, &[ratios.0, ratios.1, ratios.2], seed)?;
    let mut out = SplitAssignment::default();
    for (t, s) in corpus.tracks().iter().zip(which) {
        match s {
            0 => out.train.insert(t.track_id),
            1 => out.validation.insert(t.track_id),
            _ => out.test.insert(t.track_id),
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::super::fixtures::{table, track};
    use super::super::GENRE_VOCAB;
    use super::*;

    fn corpus_with(labels: &[Vec<u32>]) -> Corpus {
        let mut ids: Vec<u32> = labels.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        let tracks = labels
            .iter()
            .enumerate()
            .map(|(i, l)| track(i as u32, 2, l))
            .collect();
        Corpus::new(tracks, vec![], GENRE_VOCAB, table(&ids, 4), vec![]).unwrap()
    }

    #[test]
    fn single_label_sizes() {
        let c = corpus_with(&vec![vec![1]; 10]);
        let s = stratified_split(&c, (0.8, 0.1, 0.1), 0).unwrap();
        assert_eq!(s.sizes(), (8, 1, 1));
    }

    #[test]
    fn rare_genre_carriers_follow_ratios() {
        // genre 7 has exactly 10 carriers; genre 1 is common
        let mut labels = Vec::new();
        for i in 0..60u32 {
            let mut l = vec![1];
            if i % 6 == 0 {
                l.push(7);
            }
            if i % 4 == 1 {
                l.push(3);
            }
            labels.push(l);
        }
        let c = corpus_with(&labels);
        for seed in 0..5 {
            let s = stratified_split(&c, (0.8, 0.1, 0.1), seed).unwrap();
            let carriers = |set: &BTreeSet<u32>| {
                set.iter()
                    .filter(|&&t| labels[t as usize].contains(&7))
                    .count()
            };
            assert_eq!(carriers(&s.train), 8);
            assert_eq!(carriers(&s.validation), 1);
            assert_eq!(carriers(&s.test), 1);
            let (a, b, cc) = s.sizes();
            assert!(
                (a as i64 - 48).abs() <= 1
                    && (b as i64 - 6).abs() <= 1
                    && (cc as i64 - 6).abs() <= 1
            );
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<Vec<u32>> = (0..40).map(|i| vec![1 + i % 3, 5 + i % 2]).collect();
        let c = corpus_with(&labels);
        let a = stratified_split(&c, (0.8, 0.1, 0.1), 11).unwrap();
        let b = stratified_split(&c, (0.8, 0.1, 0.1), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_ratios_and_empty() {
        let c = corpus_with(&[vec![1]]);
        assert!(stratified_split(&c, (0.8, 0.1, 0.2), 0).is_err());
        assert!(iterative_stratification(&[], &[0.5, 0.5], 0).is_err());
    }

    proptest! {
        #[test]
        fn always_a_partition(
            labels in prop::collection::vec(prop::collection::btree_set(1u32..12, 1..4), 1..80),
            seed in any::<u64>(),
        ) {
            let labels: Vec<Vec<u32>> = labels.into_iter().map(|s| s.into_iter().collect()).collect();
            let c = corpus_with(&labels);
            let s = stratified_split(&c, (0.8, 0.1, 0.1), seed).unwrap();
            prop_assert!(s.train.is_disjoint(&s.validation));
            prop_assert!(s.train.is_disjoint(&s.test));
            prop_assert!(s.validation.is_disjoint(&s.test));
            let (a, b, cc) = s.sizes();
            prop_assert_eq!(a + b + cc, labels.len());
        }
    }
}
