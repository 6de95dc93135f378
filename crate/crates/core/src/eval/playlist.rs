use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::extract::TrackEmbeddings;
use super::knn::{continue_playlist, EmbeddingIndex};
use super::metrics::{average_precision_at_k, ndcg_at_k};
use crate::corpus::{Corpus, Split, SplitAssignment};
use crate::error::{Error, Result};
use crate::par;

/// Continuation list length and per-seed neighbor count.
pub const CONTINUATION_K: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaylistScores {
    pub ndcg: f64,
    pub map: f64,
    pub evaluated: usize,
    /// Playlists with test tracks but no seed outside the test split.
    pub skipped: usize,
}

/// Continues every playlist that has at least one test track, using its
/// non-test tracks as seeds and the test tracks as ground truth.
pub fn eval_playlist_continuation(
    corpus: &Corpus,
    split: &SplitAssignment,
    emb: &TrackEmbeddings,
    k: usize,
) -> Result<PlaylistScores> {
    let candidate_ids: Vec<u32> = split.test.iter().copied().collect();
    let candidates = EmbeddingIndex::new(candidate_ids.clone(), &emb.select(&candidate_ids)?.mean)?;
    let row_of: std::collections::HashMap<u32, usize> =
        emb.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut jobs = Vec::new();
    let mut skipped = 0;
    for p in corpus.playlists() {
        let truth: HashSet<u32> = p
            .track_ids
            .iter()
            .copied()
            .filter(|id| split.split_of(*id) == Some(Split::Test))
            .collect();
        if truth.is_empty() {
            continue;
        }
        let seeds: Vec<u32> = p
            .track_ids
            .iter()
            .copied()
            .filter(|id| !truth.contains(id) && row_of.contains_key(id))
            .collect();
        if seeds.is_empty() {
            skipped += 1;
            continue;
        }
        jobs.push((seeds, truth));
    }
    if jobs.is_empty() {
        return Err(Error::Empty("qualifying playlists".into()));
    }
    let scores: Vec<Result<(f64, f64)>> = par::map_collect(&jobs, |(seeds, truth)| {
        let views: Vec<(u32, ndarray::ArrayView1<'_, f64>)> = seeds
            .iter()
            .map(|id| (*id, emb.mean.row(row_of[id])))
            .collect();
        let ranked = continue_playlist(&views, &candidates, CONTINUATION_K, k)?;
        Ok((
            ndcg_at_k(&ranked, truth, k)?,
            average_precision_at_k(&ranked, truth, k)?,
        ))
    });
    let mut ndcg = 0.0;
    let mut map = 0.0;
    for s in scores {
        let (n, a) = s?;
        ndcg += n;
        map += a;
    }
    let n = jobs.len() as f64;
    if skipped > 0 {
        log::info!("{skipped} playlists skipped: all their tracks are in the test split");
    }
    Ok(PlaylistScores {
        ndcg: ndcg / n,
        map: map / n,
        evaluated: jobs.len(),
        skipped,
    })
}
