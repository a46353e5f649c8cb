use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::qtypes::QuestionTypeTable;
use super::synthetic::GenConfig;
use super::vocab::{AnswerVocab, TokenVocab};
use crate::error::{Error, Result};

/// Coarse answer category used for reporting on ingested data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerCategory {
    #[serde(rename = "yes/no")]
    YesNo,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "other")]
    Other,
}

impl AnswerCategory {
    pub fn parse(s: &str) -> Self {
        match s {
            "yes/no" => AnswerCategory::YesNo,
            "number" => AnswerCategory::Number,
            _ => AnswerCategory::Other,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AnswerCategory::YesNo => "Yes/No",
            AnswerCategory::Number => "Num",
            AnswerCategory::Other => "Other",
        }
    }
}

/// One image-question-answer triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub image_id: u64,
    pub features: Vec<f64>,
    pub tokens: Vec<usize>,
    pub question_type: usize,
    /// Nonzero answer scores as `(answer index, score)`, sorted by index.
    pub scores: Vec<(usize, f64)>,
    /// Ground-truth index: argmax of `scores`, lowest index on ties.
    pub answer: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<AnswerCategory>,
    /// Generator-side attribute values of the image (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<usize>>,
}

/// Argmax of a sparse score list with lowest-index tie-break.
pub fn argmax_sparse(scores: &[(usize, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &(i, s) in scores {
        match best {
            Some((bi, bs)) if s < bs || (s == bs && i > bi) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Argmax of a dense vector with lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Instance {
    /// Builds an instance, normalizing `scores` and deriving the ground-truth index.
    pub fn new(
        id: u64,
        image_id: u64,
        features: Vec<f64>,
        tokens: Vec<usize>,
        question_type: usize,
        scores: Vec<(usize, f64)>,
    ) -> Result<Self> {
        let mut scores: Vec<(usize, f64)> = scores.into_iter().filter(|&(_, s)| s > 0.0).collect();
        scores.sort_by_key(|&(i, _)| i);
        if scores.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!("instance {id}: duplicate answer index in scores")));
        }
        if let Some(&(i, s)) = scores.iter().find(|&&(_, s)| !(0.0..=1.0).contains(&s)) {
            return Err(Error::Data(format!("instance {id}: score {s} for answer {i} outside [0, 1]")));
        }
        let answer = argmax_sparse(&scores)
            .ok_or_else(|| Error::Data(format!("instance {id}: no nonzero answer score")))?;
        Ok(Instance {
            id,
            image_id,
            features,
            tokens,
            question_type,
            scores,
            answer,
            category: None,
            latent: None,
        })
    }

    pub fn score_of(&self, answer: usize) -> f64 {
        self.scores
            .binary_search_by_key(&answer, |&(i, _)| i)
            .map_or(0.0, |k| self.scores[k].1)
    }

    /// Dense score vector over `num_answers`.
    pub fn dense_scores(&self, num_answers: usize) -> Vec<f64> {
        let mut a = vec![0.0; num_answers];
        for &(i, s) in &self.scores {
            a[i] = s;
        }
        a
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic { config: GenConfig, seed: u64 },
    Ingested { files: Vec<String> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train or test"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub answers: AnswerVocab,
    pub tokens: TokenVocab,
    pub types: QuestionTypeTable,
    pub feature_dim: usize,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub source: DatasetSource,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn num_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn is_synthetic(&self) -> bool {
        matches!(self.source, DatasetSource::Synthetic { .. })
    }

    /// Checks the structural invariants every consumer relies on.
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (split, insts) in [("train", &self.train), ("test", &self.test)] {
            for inst in insts.iter() {
                if !ids.insert(inst.id) {
                    return Err(Error::Data(format!(
                        "instance {} appears twice (second time in {split})",
                        inst.id
                    )));
                }
                if inst.features.len() != self.feature_dim {
                    return Err(Error::Data(format!(
                        "instance {}: feature width {} but dataset width is {}",
                        inst.id,
                        inst.features.len(),
                        self.feature_dim
                    )));
                }
                if inst.question_type >= self.types.len() {
                    return Err(Error::Data(format!(
                        "instance {}: question type {} out of range",
                        inst.id, inst.question_type
                    )));
                }
                if let Some(&t) = inst.tokens.iter().find(|&&t| t >= self.tokens.len()) {
                    return Err(Error::Data(format!(
                        "instance {}: token id {t} outside vocabulary of {}",
                        inst.id,
                        self.tokens.len()
                    )));
                }
                if inst.tokens.is_empty() {
                    return Err(Error::Data(format!("instance {}: empty question", inst.id)));
                }
                if let Some(&(a, _)) = inst.scores.iter().find(|&&(a, _)| a >= self.answers.len()) {
                    return Err(Error::Data(format!(
                        "instance {}: answer index {a} outside vocabulary",
                        inst.id
                    )));
                }
                if argmax_sparse(&inst.scores) != Some(inst.answer) {
                    return Err(Error::Data(format!(
                        "instance {}: ground-truth index {} is not the score argmax",
                        inst.id, inst.answer
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_is_lowest_index_argmax() {
        let inst = Instance::new(1, 1, vec![], vec![0], 0, vec![(5, 1.0), (2, 1.0), (7, 0.3)]).unwrap();
        assert_eq!(inst.answer, 2);
        assert_eq!(inst.scores, vec![(2, 1.0), (5, 1.0), (7, 0.3)]);
        assert_eq!(inst.score_of(7), 0.3);
        assert_eq!(inst.score_of(3), 0.0);
    }

    #[test]
    fn all_zero_scores_rejected() {
        let err = Instance::new(9, 1, vec![], vec![0], 0, vec![(1, 0.0)]).unwrap_err();
        assert!(err.to_string().contains("instance 9"));
    }

    #[test]
    fn dense_argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.7, 0.7, 0.1]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }
}
