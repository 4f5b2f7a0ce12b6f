//! Tuple mining: positives sampled from the positive radius, negatives split
//! between the hardest ones under a cached embedding and uniform draws.

use rand::seq::index::sample;
use rand::Rng;

use crate::geometry::{sq_dist, Location, PairRule};

/// One anchor with its sampled positives and negatives, as indices into the
/// training set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingTuple {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    /// Extra negative for the quadruplet losses, geometrically negative to
    /// the anchor and to every entry of `negatives`.
    pub other_negative: Option<usize>,
}

/// Sampling counts used by [`mine_tuple`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiningCounts {
    pub positives: usize,
    pub negatives: usize,
    /// Fraction of negatives taken by hard mining, rounded up.
    pub hard_fraction: f64,
    pub other_negative: bool,
}

/// Positive and negative candidates of every training image.
#[derive(Clone, Debug)]
pub struct PairIndex {
    positives: Vec<Vec<usize>>,
    negatives: Vec<Vec<usize>>,
    rule: PairRule,
    locations: Vec<Location>,
}

impl PairIndex {
    pub fn new(locations: &[Location], headings: Option<&[f64]>, rule: PairRule) -> Self {
        let n = locations.len();
        let mut positives = vec![Vec::new(); n];
        let mut negatives = vec![Vec::new(); n];
        let heading = |i: usize| headings.map(|h| h[i]);
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (&locations[i], &locations[j]);
                if rule.is_positive(a, b, heading(i), heading(j)) {
                    positives[i].push(j);
                    positives[j].push(i);
                } else if rule.is_negative(a, b) {
                    negatives[i].push(j);
                    negatives[j].push(i);
                }
            }
        }
        for v in positives.iter_mut().chain(negatives.iter_mut()) {
            v.sort_unstable();
        }
        Self {
            positives,
            negatives,
            rule,
            locations: locations.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    pub fn positives_of(&self, i: usize) -> &[usize] {
        &self.positives[i]
    }

    pub fn negatives_of(&self, i: usize) -> &[usize] {
        &self.negatives[i]
    }

    /// All unordered positive pairs `(i, j)`, `i < j`.
    pub fn positive_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    fn is_negative(&self, i: usize, j: usize) -> bool {
        self.rule
            .is_negative(&self.locations[i], &self.locations[j])
    }
}

/// Mines a tuple for `anchor`, or returns `None` when the anchor does not
/// have enough positives or negatives.
pub fn mine_tuple<F: AsRef<[f64]>>(
    anchor: usize,
    index: &PairIndex,
    feature_cache: &[F],
    counts: MiningCounts,
    rng: &mut impl Rng,
) -> Option<TrainingTuple> {
    let pos = index.positives_of(anchor);
    let neg = index.negatives_of(anchor);
    if counts.positives == 0 || counts.negatives == 0 {
        return None;
    }
    if pos.len() < counts.positives || neg.len() < counts.negatives {
        return None;
    }

    let mut positives: Vec<usize> = sample(rng, pos.len(), counts.positives)
        .into_iter()
        .map(|k| pos[k])
        .collect();
    positives.sort_unstable();

    let hard = ((counts.hard_fraction.clamp(0.0, 1.0) * counts.negatives as f64).ceil() as usize)
        .min(counts.negatives);
    let mut negatives = Vec::with_capacity(counts.negatives);
    let mut remaining: Vec<usize> = neg.to_vec();
    if hard > 0 {
        let a = feature_cache[anchor].as_ref();
        let mut ranked: Vec<(f64, usize)> = neg
            .iter()
            .map(|&j| (sq_dist(a, feature_cache[j].as_ref()), j))
            .collect();
        ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        negatives.extend(ranked[..hard].iter().map(|&(_, j)| j));
        remaining.retain(|j| !negatives.contains(j));
    }
    let soft = counts.negatives - hard;
    negatives.extend(
        sample(rng, remaining.len(), soft)
            .into_iter()
            .map(|k| remaining[k]),
    );

    let other_negative = if counts.other_negative {
        let candidates: Vec<usize> = neg
            .iter()
            .copied()
            .filter(|j| !negatives.contains(j))
            .filter(|&j| negatives.iter().all(|&n| index.is_negative(j, n)))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        Some(candidates[rng.random_range(0..candidates.len())])
    } else {
        None
    };

    Some(TrainingTuple {
        anchor,
        positives,
        negatives,
        other_negative,
    })
}
