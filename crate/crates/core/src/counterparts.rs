//! Superficially similar counterparts.
//!
//! A *real* counterpart of an anchor is another training instance with the
//! same question type and a different ground-truth answer. A *synthetic*
//! counterpart pairs the anchor's question with another instance's image.
//!
//! [`enumerate_sss`] builds both sets by visiting every other instance, which
//! is quadratic over a split. [`SssIndex`] answers the same real-counterpart
//! query from an inverted index built in one pass, and
//! [`sample_counterparts`] draws from the intersection of those sets with
//! the current batch during training.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;

/// `question type → ground-truth answer → instance ids` (ids sorted).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SssIndex {
    by_type: BTreeMap<usize, BTreeMap<usize, Vec<u64>>>,
    type_counts: BTreeMap<usize, usize>,
}

pub fn build_sss_index(train: &[Instance]) -> SssIndex {
    let mut idx = SssIndex::default();
    for inst in train {
        idx.by_type
            .entry(inst.question_type)
            .or_default()
            .entry(inst.answer)
            .or_default()
            .push(inst.id);
        *idx.type_counts.entry(inst.question_type).or_default() += 1;
    }
    for answers in idx.by_type.values_mut() {
        for ids in answers.values_mut() {
            ids.sort_unstable();
        }
    }
    idx
}

impl SssIndex {
    /// Instances of `question_type` whose answer is `answer`.
    pub fn bucket(&self, question_type: usize, answer: usize) -> &[u64] {
        self.by_type
            .get(&question_type)
            .and_then(|m| m.get(&answer))
            .map_or(&[], Vec::as_slice)
    }

    /// Ids of the real counterparts of an anchor with this type and answer, sorted.
    pub fn real_counterparts(&self, question_type: usize, answer: usize) -> Vec<u64> {
        let mut out: Vec<u64> = self
            .by_type
            .get(&question_type)
            .into_iter()
            .flat_map(|m| m.iter())
            .filter(|(&n, _)| n != answer)
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn real_count(&self, question_type: usize, answer: usize) -> usize {
        self.type_count(question_type) - self.bucket(question_type, answer).len()
    }

    pub fn type_count(&self, question_type: usize) -> usize {
        self.type_counts.get(&question_type).copied().unwrap_or(0)
    }

    /// Number of indexed instances.
    pub fn total(&self) -> usize {
        self.by_type
            .values()
            .flat_map(|m| m.values())
            .map(Vec::len)
            .sum()
    }

    pub fn stats(&self) -> IndexStats {
        let types = self
            .by_type
            .iter()
            .map(|(&t, answers)| {
                let n = self.type_count(t);
                let per_answer: BTreeMap<usize, usize> =
                    answers.iter().map(|(&a, ids)| (a, ids.len())).collect();
                let anchors_without = answers
                    .values()
                    .filter(|ids| ids.len() == n)
                    .map(Vec::len)
                    .sum();
                let total_pairs: usize = answers.values().map(|ids| ids.len() * (n - ids.len())).sum();
                TypeStats {
                    question_type: t,
                    instances: n,
                    answers: per_answer,
                    anchors_without_real: anchors_without,
                    mean_real_counterparts: total_pairs as f64 / n as f64,
                }
            })
            .collect();
        IndexStats {
            instances: self.total(),
            types,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeStats {
    pub question_type: usize,
    pub instances: usize,
    /// Instances per ground-truth answer.
    pub answers: BTreeMap<usize, usize>,
    pub anchors_without_real: usize,
    pub mean_real_counterparts: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub instances: usize,
    pub types: Vec<TypeStats>,
}

/// The full superficially similar set of one anchor.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SssSet {
    /// Real counterpart instance ids, in split order.
    pub real: Vec<u64>,
    /// Image ids of synthetic counterparts (each paired with the anchor's question).
    pub synthetic_images: Vec<u64>,
}

/// Builds the set for `split[anchor]` by visiting every other instance.
pub fn enumerate_sss(anchor: usize, split: &[Instance]) -> SssSet {
    let a = &split[anchor];
    let mut set = SssSet::default();
    for (j, other) in split.iter().enumerate() {
        if j == anchor {
            continue;
        }
        set.synthetic_images.push(other.image_id);
        if other.question_type == a.question_type && other.answer != a.answer {
            set.real.push(other.id);
        }
    }
    set
}

/// Counterparts sampled for one anchor, as positions in the batch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorPlan {
    pub real: Vec<usize>,
    /// Batch positions whose encoded image is paired with the anchor's question.
    pub synthetic: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterpartBatchPlan {
    pub anchors: Vec<AnchorPlan>,
}

impl CounterpartBatchPlan {
    pub fn real_terms(&self) -> usize {
        self.anchors.iter().map(|a| a.real.len()).sum()
    }

    pub fn synthetic_terms(&self) -> usize {
        self.anchors.iter().map(|a| a.synthetic.len()).sum()
    }

    /// Anchors that received fewer real counterparts than requested.
    pub fn real_shortfall(&self, wanted: usize) -> usize {
        self.anchors.iter().filter(|a| a.real.len() < wanted).count()
    }

    pub fn synthetic_shortfall(&self, wanted: usize) -> usize {
        self.anchors.iter().filter(|a| a.synthetic.len() < wanted).count()
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, candidates: &[usize], n: usize) -> Vec<usize> {
    if candidates.len() <= n {
        return candidates.to_vec();
    }
    sample(rng, candidates.len(), n)
        .into_iter()
        .map(|k| candidates[k])
        .collect()
}

/// Samples up to `n_real` real and `n_synthetic` synthetic counterparts for
/// every batch member, uniformly without replacement from within the batch.
///
/// When fewer candidates exist than requested, all of them are taken.
pub fn sample_counterparts<R: Rng + ?Sized>(
    batch: &[&Instance],
    n_real: usize,
    n_synthetic: usize,
    rng: &mut R,
) -> CounterpartBatchPlan {
    let mut anchors = Vec::with_capacity(batch.len());
    let mut real_c = Vec::with_capacity(batch.len());
    let mut syn_c = Vec::with_capacity(batch.len());
    for (i, a) in batch.iter().enumerate() {
        real_c.clear();
        syn_c.clear();
        for (j, b) in batch.iter().enumerate() {
            if j == i {
                continue;
            }
            if b.image_id != a.image_id {
                syn_c.push(j);
            }
            if b.question_type == a.question_type && b.answer != a.answer {
                real_c.push(j);
            }
        }
        let real = draw(rng, &real_c, n_real);
        let synthetic = draw(rng, &syn_c, n_synthetic);
        anchors.push(AnchorPlan { real, synthetic });
    }
    CounterpartBatchPlan { anchors }
}

/// Fraction of synthetic pairs whose donor image in fact carries the
/// anchor's answer. Needs generator-side attribute values; returns `None`
/// when they are unavailable or there are no synthetic pairs.
pub fn synthetic_collision_rate(
    batch: &[&Instance],
    plan: &CounterpartBatchPlan,
    answers_per_type: usize,
) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for (i, a) in plan.anchors.iter().enumerate() {
        let anchor = batch[i];
        let concept = anchor.answer % answers_per_type;
        for &j in &a.synthetic {
            let latent = batch[j].latent.as_ref()?;
            total += 1;
            if latent.get(anchor.question_type) == Some(&concept) {
                hits += 1;
            }
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(id: u64, qtype: usize, answer: usize) -> Instance {
        Instance::new(id, 100 + id, vec![0.0], vec![0], qtype, vec![(answer, 1.0)]).unwrap()
    }

    #[test]
    fn three_instance_example() {
        let split = vec![inst(0, 1, 0), inst(1, 1, 1), inst(2, 2, 0)];
        let idx = build_sss_index(&split);
        assert_eq!(idx.real_counterparts(1, 0), vec![1]);
        assert_eq!(idx.real_counterparts(2, 0), Vec::<u64>::new());
        assert_eq!(enumerate_sss(0, &split).real, vec![1]);
        assert!(enumerate_sss(2, &split).real.is_empty());
        assert_eq!(enumerate_sss(2, &split).synthetic_images, vec![100, 101]);
    }

    #[test]
    fn single_answer_type_has_no_real_counterparts() {
        let split: Vec<_> = (0..5).map(|i| inst(i, 3, 7)).collect();
        let idx = build_sss_index(&split);
        assert_eq!(idx.real_count(3, 7), 0);
        let s = idx.stats();
        assert_eq!(s.types[0].anchors_without_real, 5);
    }

    #[test]
    fn index_partitions_the_split() {
        let split: Vec<_> = (0..30).map(|i| inst(i, (i % 4) as usize, (i % 3) as usize)).collect();
        assert_eq!(build_sss_index(&split).total(), 30);
    }

    #[test]
    fn two_instance_batch_pairs_each_other() {
        let (a, b) = (inst(0, 0, 0), inst(1, 0, 1));
        let batch = vec![&a, &b];
        let plan = sample_counterparts(&batch, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(plan.anchors[0], AnchorPlan { real: vec![1], synthetic: vec![1] });
        assert_eq!(plan.anchors[1], AnchorPlan { real: vec![0], synthetic: vec![0] });
    }

    #[test]
    fn lone_type_gets_no_real_counterpart() {
        let (a, b, c) = (inst(0, 0, 0), inst(1, 1, 1), inst(2, 1, 2));
        let batch = vec![&a, &b, &c];
        let plan = sample_counterparts(&batch, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(plan.anchors[0].real.is_empty());
        assert_eq!(plan.anchors[0].synthetic.len(), 1);
        assert_eq!(plan.real_shortfall(1), 1);
    }

    #[test]
    fn shared_image_never_donates_to_itself() {
        let a = inst(0, 0, 0);
        let mut b = inst(1, 1, 1);
        b.image_id = a.image_id;
        let batch = vec![&a, &b];
        let plan = sample_counterparts(&batch, 1, 3, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(plan.anchors.iter().all(|p| p.synthetic.is_empty()));
    }
}
