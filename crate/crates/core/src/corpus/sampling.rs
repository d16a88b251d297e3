use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Dataset, Explicitness, StanceLabel};

/// Per-label quotas summing to `n`, as equal as the label pools allow.
///
/// Starts from `n / 3` each (remainder to the labels in FAVOR, AGAINST, NONE
/// order), then moves any shortfall of a small pool onto labels with spare
/// samples, one at a time, to the label with the fewest assigned so far.
fn label_quotas(n: usize, available: [usize; 3]) -> [usize; 3] {
    let mut quota = [n / 3; 3];
    for q in quota.iter_mut().take(n % 3) {
        *q += 1;
    }
    let mut deficit = 0;
    for i in 0..3 {
        if quota[i] > available[i] {
            deficit += quota[i] - available[i];
            quota[i] = available[i];
        }
    }
    while deficit > 0 {
        let next = (0..3)
            .filter(|&i| quota[i] < available[i])
            .min_by_key(|&i| (quota[i], i));
        match next {
            Some(i) => {
                quota[i] += 1;
                deficit -= 1;
            }
            None => break,
        }
    }
    quota
}

/// Draws `n_explicit` explicit and `n_non_explicit` non-explicit samples with
/// stance labels balanced within each stratum. The result keeps dataset order.
pub fn stratified_human_eval_sample(
    dataset: &Dataset,
    n_explicit: usize,
    n_non_explicit: usize,
    seed: u64,
) -> Result<Dataset, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<&str> = HashSet::new();
    for (stratum, n) in [
        (Explicitness::Explicit, n_explicit),
        (Explicitness::NonExplicit, n_non_explicit),
    ] {
        let mut pools: [Vec<&str>; 3] = Default::default();
        for s in dataset.samples().iter().filter(|s| s.explicitness == stratum) {
            pools[s.gold_stance.index()].push(s.id.as_str());
        }
        let available = pools.each_ref().map(Vec::len);
        let total: usize = available.iter().sum();
        if total < n {
            return Err(CorpusError::InsufficientStratum { stratum, available: total, requested: n });
        }
        let quota = label_quotas(n, available);
        for label in StanceLabel::ALL {
            let pool = &mut pools[label.index()];
            pool.shuffle(&mut rng);
            chosen.extend(pool.iter().take(quota[label.index()]));
        }
    }
    let samples = dataset
        .samples()
        .iter()
        .filter(|s| chosen.contains(s.id.as_str()))
        .cloned()
        .collect();
    Dataset::new(dataset.name.clone(), samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetTag, Sample};
    use proptest::prelude::*;

    fn sample(id: usize, stance: StanceLabel, explicit: bool) -> Sample {
        Sample {
            id: id.to_string(),
            text: format!("text {id}"),
            gold_target: "target".into(),
            gold_stance: stance,
            explicitness: if explicit { Explicitness::Explicit } else { Explicitness::NonExplicit },
            dataset: DatasetTag::Tse,
        }
    }

    fn synthetic(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| sample(i, StanceLabel::ALL[i % 3], i % 5 < 3))
            .collect();
        Dataset::new(DatasetTag::Tse, samples).unwrap()
    }

    fn count(ds: &Dataset, e: Explicitness, l: StanceLabel) -> usize {
        ds.samples().iter().filter(|s| s.explicitness == e && s.gold_stance == l).count()
    }

    #[test]
    fn default_sizes_yield_500() {
        let ds = synthetic(3000);
        let out = stratified_human_eval_sample(&ds, 300, 200, 7).unwrap();
        assert_eq!(out.len(), 500);
        assert_eq!(out.split_counts(), (300, 200));
        for l in StanceLabel::ALL {
            assert_eq!(count(&out, Explicitness::Explicit, l), 100);
        }
        let non: Vec<usize> = StanceLabel::ALL
            .iter()
            .map(|&l| count(&out, Explicitness::NonExplicit, l))
            .collect();
        assert_eq!(non, vec![67, 67, 66]);
    }

    #[test]
    fn three_explicit_gives_one_per_stance() {
        let ds = Dataset::new(
            DatasetTag::Tse,
            vec![
                sample(1, StanceLabel::Favor, true),
                sample(2, StanceLabel::Favor, true),
                sample(3, StanceLabel::Against, true),
                sample(4, StanceLabel::None, true),
                sample(5, StanceLabel::None, true),
            ],
        )
        .unwrap();
        let out = stratified_human_eval_sample(&ds, 3, 0, 1).unwrap();
        for l in StanceLabel::ALL {
            assert_eq!(count(&out, Explicitness::Explicit, l), 1);
        }
    }

    #[test]
    fn same_seed_same_ids() {
        let ds = synthetic(600);
        let ids = |seed| {
            stratified_human_eval_sample(&ds, 30, 20, seed)
                .unwrap()
                .samples()
                .iter()
                .map(|s| s.id.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(42), ids(42));
        assert_ne!(ids(42), ids(43));
    }

    #[test]
    fn shortfall_names_stratum() {
        let ds = synthetic(10);
        let err = stratified_human_eval_sample(&ds, 3, 50, 0).unwrap_err();
        match err {
            CorpusError::InsufficientStratum { stratum, available, requested } => {
                assert_eq!(stratum, Explicitness::NonExplicit);
                assert_eq!((available, requested), (4, 50));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quotas_rebalance_small_pools() {
        assert_eq!(label_quotas(9, [10, 10, 10]), [3, 3, 3]);
        assert_eq!(label_quotas(9, [1, 10, 10]), [1, 4, 4]);
        assert_eq!(label_quotas(10, [1, 10, 2]), [1, 7, 2]);
        assert_eq!(label_quotas(4, [0, 0, 4]), [0, 0, 4]);
    }

    proptest! {
        #[test]
        fn sample_is_subset_with_exact_counts(
            n in 30usize..200, ne in 0usize..10, nn in 0usize..8, seed in any::<u64>()
        ) {
            let ds = synthetic(n);
            let out = stratified_human_eval_sample(&ds, ne, nn, seed).unwrap();
            prop_assert_eq!(out.split_counts(), (ne, nn));
            for s in out.samples() {
                prop_assert_eq!(ds.get(&s.id), Some(s));
            }
        }
    }
}
