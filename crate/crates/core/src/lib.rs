//! Experience selection for long-term visual localisation.
//!
//! Recorded traversals ("experiences") are summarised by per-neuron
//! activation histograms. A short warmup window of live frames is summarised
//! the same way, and the map experience whose histograms are closest under
//! the 1-D Earth-Mover's Distance is chosen for localisation. The crate also
//! carries the Fréchet-Distance and pixel-intensity baselines, Recall@1
//! localisation, and the recall-weighted ranking error used to score any
//! selection method against the actual localisation outcome.

mod binio;
pub mod baselines;
pub mod emd;
pub mod error;
pub mod evaluation;
pub mod feature_store;
pub mod gaussian;
pub mod localisation;
pub mod map_store;
pub mod ranking;
pub mod synthetic;
pub mod vdna;

pub use baselines::{pixel_distance, pixel_summary, random_expected_error, PixelSummary};
pub use emd::emd_1d;
pub use error::{Error, ErrorClass, Result};
pub use evaluation::{evaluate, evaluate_fixture, EvaluationConfig, EvaluationReport, ExperimentGroup, MatcherSpec};
pub use feature_store::{
    gps_to_local, ingest_feature_set, select_warmup, write_feature_set, FeatureDims, FeatureSet, Frame,
    GpsCoord, GroundTruthPose, LocalPosition, Manifest, WarmupPolicy,
};
pub use gaussian::{fit_gaussian, frechet_distance, psd_sqrt, GaussianSummary};
pub use localisation::{
    difference_matrix, is_match, localise, recall_at_1, DifferenceMatrix, EmbeddingSource, FrameRef,
    GroundTruthMatcher, LocalisationResult, PoseIndex,
};
pub use map_store::{build_map, select_experience, ExperienceMap, MapArtifact, Method, ScoredCandidate};
pub use ranking::{
    aggregate_errors, gt_ranking, predicted_ranking, ranking_error, EvaluationCell, ExperienceRanking,
    RankingError, ScoreKind,
};
pub use vdna::{build_vdna, compute_edges, vdna_distance, HistogramConfig, HistogramEdges, Vdna, VdnaDistance};
