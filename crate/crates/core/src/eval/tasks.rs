//! The three downstream protocols run against a corpus and its split.

use std::collections::{BTreeMap, BTreeSet};

use super::extract::TrackEmbeddings;
use super::probe::{
    eval_autotagging, eval_genre_classification, ProbeConfig, Summary, TaggingResult,
};
use crate::corpus::{Corpus, SplitAssignment};
use crate::error::{Error, Result};

/// Genre classification with each track's primary genre as its class:
/// probes train on the training split and are scored on the test split.
pub fn genre_task(
    corpus: &Corpus,
    split: &SplitAssignment,
    emb: &TrackEmbeddings,
    cfg: &ProbeConfig,
) -> Result<Summary> {
    let train: Vec<u32> = split.train.iter().copied().collect();
    let test: Vec<u32> = split.test.iter().copied().collect();
    let mut genres = BTreeSet::new();
    for id in train.iter().chain(&test) {
        let track = corpus
            .track(*id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown track {id}")))?;
        genres.insert(track.primary_genre());
    }
    // dense class indices in genre-id order
    let index: BTreeMap<u32, usize> = genres
        .into_iter()
        .enumerate()
        .map(|(i, g)| (g, i))
        .collect();
    let labels = |ids: &[u32]| -> Vec<usize> {
        ids.iter()
            .map(|id| index[&corpus.track(*id).expect("checked above").primary_genre()])
            .collect()
    };
    eval_genre_classification(
        &emb.select(&train)?,
        &labels(&train),
        &emb.select(&test)?,
        &labels(&test),
        cfg,
    )
}

/// Auto-tagging over the corpus tag categories, each with its own split of
/// the tracks that carry one of its tags.
pub fn tagging_task(
    corpus: &Corpus,
    emb: &TrackEmbeddings,
    cfg: &ProbeConfig,
) -> Result<Vec<TaggingResult>> {
    if corpus.tag_categories().is_empty() {
        return Err(Error::Empty("tag categories in the corpus manifest".into()));
    }
    let tags = emb
        .ids
        .iter()
        .map(|id| {
            corpus
                .track(*id)
                .map(|t| t.genre_ids.clone())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown track {id}")))
        })
        .collect::<Result<Vec<_>>>()?;
    eval_autotagging(emb, &tags, corpus.tag_categories(), cfg)
}
