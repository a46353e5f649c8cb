use serde::{Deserialize, Serialize};

/// The 65 question-type prefixes of the VQA v2 release, in release order.
///
/// This list is an external convention; it is reproduced here so ingested
/// questions are typed the same way as in the public benchmarks.
pub const VQA_V2_QUESTION_TYPES: [&str; 65] = [
    "how many",
    "is the",
    "what",
    "what color is the",
    "what is the",
    "is this",
    "is this a",
    "what is",
    "are the",
    "what kind of",
    "is there a",
    "what type of",
    "is it",
    "what are the",
    "where is the",
    "is there",
    "does the",
    "what color are the",
    "are these",
    "are there",
    "which",
    "is",
    "what is the man",
    "are",
    "how",
    "does this",
    "what is on the",
    "what does the",
    "how many people are",
    "what is in the",
    "what is this",
    "do",
    "what are",
    "are they",
    "what time",
    "what sport is",
    "are there any",
    "is he",
    "what color is",
    "why",
    "where are the",
    "what color",
    "who is",
    "what animal is",
    "is the woman",
    "is this an",
    "do you",
    "how many people are in",
    "what room is",
    "has",
    "is the man",
    "can you",
    "why is the",
    "what is the woman",
    "what is the person",
    "what is the name",
    "what brand",
    "is that a",
    "what number is",
    "could",
    "was",
    "is the person",
    "is this person",
    "none of the above",
    "what is the color of the",
];

pub const FALLBACK_TYPE: &str = "other";

/// Question-type prefixes; type id `i < len` is `prefixes[i]`, and the id
/// equal to the prefix count is the fallback type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct QuestionTypeTable {
    prefixes: Vec<String>,
    tokenized: Vec<Vec<String>>,
}

impl From<Vec<String>> for QuestionTypeTable {
    fn from(prefixes: Vec<String>) -> Self {
        QuestionTypeTable::new(prefixes)
    }
}

impl From<QuestionTypeTable> for Vec<String> {
    fn from(t: QuestionTypeTable) -> Self {
        t.prefixes
    }
}

impl QuestionTypeTable {
    pub fn new<S: AsRef<str>>(prefixes: impl IntoIterator<Item = S>) -> Self {
        let prefixes: Vec<String> = prefixes
            .into_iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .collect();
        let mut t = QuestionTypeTable {
            prefixes,
            tokenized: Vec::new(),
        };
        t.retokenize();
        t
    }

    pub fn vqa_v2() -> Self {
        Self::new(VQA_V2_QUESTION_TYPES)
    }

    fn retokenize(&mut self) {
        self.tokenized = self
            .prefixes
            .iter()
            .map(|p| p.split_whitespace().map(str::to_owned).collect())
            .collect();
    }

    /// Number of type ids including the fallback.
    pub fn len(&self) -> usize {
        self.prefixes.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn fallback_id(&self) -> usize {
        self.prefixes.len()
    }

    pub fn name(&self, id: usize) -> &str {
        self.prefixes.get(id).map_or(FALLBACK_TYPE, String::as_str)
    }

    pub fn prefixes(&self) -> &[String] {
        &self.prefixes
    }

    /// Longest matching prefix, in whole tokens; the fallback type if none match.
    pub fn classify<S: AsRef<str>>(&self, tokens: &[S]) -> usize {
        let mut best: Option<(usize, usize)> = None;
        for (id, prefix) in self.tokenized.iter().enumerate() {
            if prefix.is_empty() || prefix.len() > tokens.len() {
                continue;
            }
            let matches = prefix.iter().zip(tokens).all(|(p, t)| p == t.as_ref());
            if matches && best.is_none_or(|(_, len)| prefix.len() > len) {
                best = Some((id, prefix.len()));
            }
        }
        best.map_or(self.fallback_id(), |(id, _)| id)
    }
}

/// Lowercases, strips punctuation other than apostrophes, and splits on whitespace.
pub fn tokenize(question: &str) -> Vec<String> {
    question
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

/// Convenience wrapper for [`QuestionTypeTable::classify`].
pub fn question_type<S: AsRef<str>>(tokens: &[S], table: &QuestionTypeTable) -> usize {
    table.classify(tokens)
}
