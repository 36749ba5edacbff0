//! Versioned on-disk container for a prepared cohort.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sequence::EventSequence;
use super::vocab::EventVocabulary;
use crate::error::{Error, Result};

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortArchive {
    pub version: u32,
    pub vocabulary: EventVocabulary,
    pub train: Vec<EventSequence>,
    pub test: Vec<EventSequence>,
    /// SHA-256 over vocabulary and sequences; set by [`CohortArchive::new`].
    pub content_hash: String,
}

#[derive(Serialize)]
struct HashedPart<'a> {
    vocabulary: &'a EventVocabulary,
    train: &'a [EventSequence],
    test: &'a [EventSequence],
}

impl CohortArchive {
    pub fn new(vocabulary: EventVocabulary, train: Vec<EventSequence>, test: Vec<EventSequence>) -> Result<Self> {
        let mut a = Self {
            version: ARCHIVE_VERSION,
            vocabulary,
            train,
            test,
            content_hash: String::new(),
        };
        a.check_sequences()?;
        a.content_hash = a.compute_hash();
        Ok(a)
    }

    fn compute_hash(&self) -> String {
        let part = HashedPart {
            vocabulary: &self.vocabulary,
            train: &self.train,
            test: &self.test,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&part).expect("archive serializes")))
    }

    fn check_sequences(&self) -> Result<()> {
        for s in self.train.iter().chain(&self.test) {
            s.validate()?;
            if s.num_inputs() != self.vocabulary.n_inputs() || s.num_targets() != self.vocabulary.n_targets() {
                return Err(Error::Format(format!(
                    "sequence {} has dimensions ({}, {}), vocabulary has ({}, {})",
                    s.patient_id,
                    s.num_inputs(),
                    s.num_targets(),
                    self.vocabulary.n_inputs(),
                    self.vocabulary.n_targets()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads and re-validates: version, every sequence, and the content hash.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: Self = serde_json::from_str(&text)?;
        if a.version != ARCHIVE_VERSION {
            return Err(Error::Format(format!(
                "{}: archive version {} unsupported (expected {ARCHIVE_VERSION})",
                path.display(),
                a.version
            )));
        }
        a.check_sequences()?;
        let h = a.compute_hash();
        if h != a.content_hash {
            return Err(Error::Format(format!(
                "{}: content hash mismatch (stored {}, computed {h})",
                path.display(),
                a.content_hash
            )));
        }
        Ok(a)
    }
}
