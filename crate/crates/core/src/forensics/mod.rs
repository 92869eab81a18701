//! Forensic evaluation: residual fingerprints and PCE, patch-vote
//! classification, feature clustering and trace visualisation.

pub mod evaluate;
pub mod fingerprint;
pub mod pce;
pub mod report;
pub mod residual;
pub mod suite;
pub mod visualize;

pub use evaluate::{
    classification_accuracy, classify_majority, cluster_accuracy, clustering_accuracy, kmeans, majority_vote,
    trace_origin_accuracy, verification_report, ClassificationSettings, ClusteringSettings, KMeans, Labeled,
};
pub use fingerprint::{build_fingerprint, fingerprint_from_images, CameraFingerprint, FINGERPRINT_MAGIC};
pub use pce::{normalized_cross_correlation, pce, pce_from_correlation, DEFAULT_EXCLUSION_RADIUS};
pub use report::{EvaluationReport, Summary, TableRow, Task};
pub use residual::{ResidualExtractor, WaveletWiener};
pub use suite::{l1_report, niqe_report, Suite};
pub use visualize::visualize_trace;
