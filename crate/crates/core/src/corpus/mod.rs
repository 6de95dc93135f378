//! Track corpus: records, playlists, the frozen genre embedding table, and
//! everything needed to turn them into encoder inputs.

mod io;
mod sample;
mod split;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_corpus, write_corpus};
pub use sample::{
    build_playlist_matrix, center_chunk, lookup_genre_sequence, sample_chunk, window_chunks,
    GenreSequence, MelChunk, PlaylistMatrix,
};
pub use split::{iterative_stratification, stratified_split, Split, SplitAssignment};
pub use synth::{generate_synthetic_corpus, SynthConfig};

/// Mel bands per frame.
pub const MEL_BANDS: usize = 48;
/// Frames per training chunk.
pub const CHUNK_FRAMES: usize = 256;
/// Maximum number of genres attached to one track.
pub const MAX_GENRES: usize = 10;
/// Width of a genre word vector.
pub const GENRE_DIM: usize = 200;
/// Size of the genre vocabulary; ids live in `1..=GENRE_VOCAB`.
pub const GENRE_VOCAB: u32 = 219;

#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: u32,
    pub frame_count: usize,
    pub genre_ids: Vec<u32>,
    /// Row-major `frame_count x MEL_BANDS` magnitudes.
    pub mel: Vec<f32>,
}

impl TrackRecord {
    pub fn new(track_id: u32, mel: Vec<f32>, genre_ids: Vec<u32>) -> Result<Self> {
        if mel.is_empty() || mel.len() % MEL_BANDS != 0 {
            return Err(Error::shape(
                format!("frames x {MEL_BANDS} mel values"),
                format!("{} values", mel.len()),
            ));
        }
        let rec = TrackRecord {
            track_id,
            frame_count: mel.len() / MEL_BANDS,
            genre_ids,
            mel,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 || self.mel.len() != self.frame_count * MEL_BANDS {
            return Err(Error::shape(
                format!("{} x {MEL_BANDS}", self.frame_count),
                format!("{} values", self.mel.len()),
            ));
        }
        if let Some(v) = self.mel.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Format(format!(
                "track {}: mel value {v} is not a finite nonnegative magnitude",
                self.track_id
            )));
        }
        if self.genre_ids.is_empty() || self.genre_ids.len() > MAX_GENRES {
            return Err(Error::Format(format!(
                "track {} has {} genres (expected 1..={MAX_GENRES})",
                self.track_id,
                self.genre_ids.len()
            )));
        }
        let unique: HashSet<_> = self.genre_ids.iter().collect();
        if unique.len() != self.genre_ids.len() {
            return Err(Error::Format(format!(
                "track {} lists a genre twice",
                self.track_id
            )));
        }
        Ok(())
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.mel[t * MEL_BANDS..(t + 1) * MEL_BANDS]
    }

    /// Label used by single-label tasks: the first listed genre.
    pub fn primary_genre(&self) -> u32 {
        self.genre_ids[0]
    }
}

/// Frozen genre word vectors. Stands in for a pretrained word-embedding
/// model; nothing in this crate ever updates it.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreEmbeddingTable {
    dim: usize,
    vectors: BTreeMap<u32, Vec<f64>>,
}

impl GenreEmbeddingTable {
    pub fn new(dim: usize, vectors: BTreeMap<u32, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be > 0".into()));
        }
        for (id, v) in &vectors {
            if v.len() != dim {
                return Err(Error::shape(
                    format!("{dim} components for genre {id}"),
                    v.len(),
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Format(format!(
                    "genre {id} has non-finite component"
                )));
            }
        }
        Ok(GenreEmbeddingTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, genre_id: u32) -> Option<&[f64]> {
        self.vectors.get(&genre_id).map(Vec::as_slice)
    }

    pub fn contains(&self, genre_id: u32) -> bool {
        self.vectors.contains_key(&genre_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.vectors.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Playlist {
    pub playlist_id: u32,
    pub track_ids: Vec<u32>,
}

/// A named group of tags (genre ids) evaluated together in auto-tagging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCategory {
    pub name: String,
    pub genre_ids: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tracks: Vec<TrackRecord>,
    playlists: Vec<Playlist>,
    genre_vocab_size: u32,
    table: GenreEmbeddingTable,
    tag_categories: Vec<TagCategory>,
    index: HashMap<u32, usize>,
}

impl Corpus {
    /// Builds a corpus and checks every cross-record invariant.
    pub fn new(
        tracks: Vec<TrackRecord>,
        playlists: Vec<Playlist>,
        genre_vocab_size: u32,
        table: GenreEmbeddingTable,
        tag_categories: Vec<TagCategory>,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(tracks.len());
        for (row, t) in tracks.iter().enumerate() {
            t.validate()?;
            if index.insert(t.track_id, row).is_some() {
                return Err(Error::Format(format!("duplicate track id {}", t.track_id)));
            }
            for &g in &t.genre_ids {
                if g == 0 || g > genre_vocab_size || !table.contains(g) {
                    return Err(Error::GenreOutOfVocab { genre_id: g });
                }
            }
        }
        let mut seen_playlists = HashSet::new();
        for p in &playlists {
            if !seen_playlists.insert(p.playlist_id) {
                return Err(Error::Format(format!(
                    "duplicate playlist id {}",
                    p.playlist_id
                )));
            }
            let mut seen = HashSet::with_capacity(p.track_ids.len());
            for &tid in &p.track_ids {
                if !index.contains_key(&tid) {
                    return Err(Error::DanglingReference {
                        playlist_id: p.playlist_id,
                        track_id: tid,
                    });
                }
                if !seen.insert(tid) {
                    return Err(Error::Format(format!(
                        "playlist {} contains track {tid} twice",
                        p.playlist_id
                    )));
                }
            }
        }
        for c in &tag_categories {
            if let Some(&g) = c
                .genre_ids
                .iter()
                .find(|&&g| g == 0 || g > genre_vocab_size)
            {
                return Err(Error::GenreOutOfVocab { genre_id: g });
            }
        }
        Ok(Corpus {
            tracks,
            playlists,
            genre_vocab_size,
            table,
            tag_categories,
            index,
        })
    }

    pub fn tracks(&self) -> &[TrackRecord] {
        &self.tracks
    }

    pub fn playlists(&self) -> &[Playlist] {
        &self.playlists
    }

    pub fn genre_vocab_size(&self) -> u32 {
        self.genre_vocab_size
    }

    pub fn embedding_table(&self) -> &GenreEmbeddingTable {
        &self.table
    }

    pub fn tag_categories(&self) -> &[TagCategory] {
        &self.tag_categories
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Row of `track_id` in `tracks()` (and in the playlist matrix / CF factors).
    pub fn row_of(&self, track_id: u32) -> Option<usize> {
        self.index.get(&track_id).copied()
    }

    pub fn track(&self, track_id: u32) -> Option<&TrackRecord> {
        self.row_of(track_id).map(|r| &self.tracks[r])
    }

    pub fn track_ids(&self) -> Vec<u32> {
        self.tracks.iter().map(|t| t.track_id).collect()
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn table(ids: &[u32], dim: usize) -> GenreEmbeddingTable {
        let vectors = ids
            .iter()
            .map(|&g| {
                let v = (0..dim).map(|k| ((g as usize * 31 + k * 7) % 13) as f64 / 13.0 - 0.5);
                (g, v.collect())
            })
            .collect();
        GenreEmbeddingTable::new(dim, vectors).unwrap()
    }

    pub fn track(id: u32, frames: usize, genres: &[u32]) -> TrackRecord {
        let mel = (0..frames * MEL_BANDS)
            .map(|i| ((i * 7 + id as usize * 13) % 29) as f32 / 29.0)
            .collect();
        TrackRecord::new(id, mel, genres.to_vec()).unwrap()
    }

    pub fn small_corpus() -> Corpus {
        let tracks = vec![
            track(0, 256, &[1]),
            track(1, 300, &[2, 3]),
            track(2, 100, &[1, 3]),
        ];
        let playlists = vec![
            Playlist {
                playlist_id: 0,
                track_ids: vec![0, 1],
            },
            Playlist {
                playlist_id: 1,
                track_ids: vec![1],
            },
        ];
        Corpus::new(
            tracks,
            playlists,
            GENRE_VOCAB,
            table(&[1, 2, 3], GENRE_DIM),
            vec![],
        )
        .unwrap()
    }
}
