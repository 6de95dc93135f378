//! Downstream evaluation of frozen audio embeddings: genre classification,
//! auto-tagging, and playlist continuation.

pub mod ann;
mod extract;
pub mod knn;
pub mod metrics;
mod playlist;
pub mod probe;
pub mod report;
mod tasks;

pub use ann::{ForestConfig, RpForest};
pub use extract::{
    extract_embeddings, extract_track_embedding, random_embeddings, TrackEmbeddings,
};
pub use knn::{continue_playlist, knn_cosine, EmbeddingIndex, Neighbor};
pub use metrics::{average_precision_at_k, majority_vote, map_at_k, mean_std, ndcg_at_k, roc_auc};
pub use playlist::{eval_playlist_continuation, PlaylistScores, CONTINUATION_K};
pub use probe::{eval_autotagging, eval_genre_classification, ProbeConfig, Summary, TaggingResult};
pub use report::{Report, ReportRow};
pub use tasks::{genre_task, tagging_task};
