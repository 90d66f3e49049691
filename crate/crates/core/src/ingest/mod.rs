//! Recording ingestion: EDF parsing, 30-second segmentation, label
//! harmonisation, sequence windows, dataset manifests and splits.

pub mod canonical;
pub mod dataset;
pub mod edf;
pub mod hypnogram;
pub mod manifest;
pub mod segment;
pub mod sequences;
pub mod stats;
pub mod types;

pub use canonical::Recording;
pub use dataset::{
    discover, ingest_directory, DatasetKind, IngestFailure, IngestOptions, IngestReport,
    RawRecording,
};
pub use edf::load_recording;
pub use hypnogram::{StageAnnotation, EPOCH_SECONDS};
pub use manifest::{kfold_split, DatasetManifest, FoldSplit, SubjectEntry};
pub use segment::{segment_and_label, segment_unlabeled};
pub use sequences::{build_sequences, chunk_for_prediction};
pub use stats::{dataset_stats, DatasetStats};
pub use types::{epoch_len, Epoch, EpochSequence, LabeledEpoch, SubjectId};
