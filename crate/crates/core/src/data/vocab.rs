use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered list of distinct strings with a reverse index.
///
/// Used for both the answer vocabulary and the question-token vocabulary.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

pub type AnswerVocab = Vocab;
pub type TokenVocab = Vocab;

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(entries: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        Ok(Vocab { entries, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.entries
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `s`, adding it if absent.
    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.entries.push(s.to_owned());
        self.index.insert(s.to_owned(), self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }
}
