//! Event ingestion, vocabulary, windowing, splitting and the synthetic cohort.

mod archive;
mod ingest;
mod sequence;
mod synth;
mod vocab;
mod window;

pub use archive::{CohortArchive, ARCHIVE_VERSION};
pub use ingest::{group_by_patient, ingest, parse_timestamp, Category, IngestReport, RawEvent};
pub use sequence::{BinaryVector, EventSequence, History};
pub use synth::{synthesize_cohort, RegimeProfile, RegimeShiftSpec, SynthConfig, SyntheticCohort};
pub use vocab::{build_vocabulary, discretize, EventVocabulary, NormalRange, RangeTable, VocabularyOptions};
pub use window::{split, windowize, windowize_all, SkippedPatient};
