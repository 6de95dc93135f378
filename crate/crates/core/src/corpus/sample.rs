use ndarray::Array2;
use rand::Rng;

use super::{Corpus, GenreEmbeddingTable, TrackRecord, CHUNK_FRAMES, MAX_GENRES, MEL_BANDS};
use crate::error::{Error, Result};

/// A fixed-length `CHUNK_FRAMES x MEL_BANDS` slice of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct MelChunk {
    pub data: Vec<f32>,
    pub source_track: u32,
    pub start_frame: usize,
}

impl MelChunk {
    pub fn frames(&self) -> usize {
        self.data.len() / MEL_BANDS
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * MEL_BANDS..(t + 1) * MEL_BANDS]
    }
}

/// Copies `CHUNK_FRAMES` frames starting at `start`, wrapping cyclically
/// past the end of the track.
fn chunk_at(track: &TrackRecord, start: usize) -> MelChunk {
    let mut data = Vec::with_capacity(CHUNK_FRAMES * MEL_BANDS);
    for t in 0..CHUNK_FRAMES {
        data.extend_from_slice(track.frame((start + t) % track.frame_count));
    }
    MelChunk {
        data,
        source_track: track.track_id,
        start_frame: start,
    }
}

/// Random training window. Tracks shorter than a chunk are tiled from frame 0.
pub fn sample_chunk<R: Rng + ?Sized>(track: &TrackRecord, rng: &mut R) -> MelChunk {
    if track.frame_count < CHUNK_FRAMES {
        return chunk_at(track, 0);
    }
    let start = rng.random_range(0..=track.frame_count - CHUNK_FRAMES);
    chunk_at(track, start)
}

/// Deterministic centered window, used for validation.
pub fn center_chunk(track: &TrackRecord) -> MelChunk {
    if track.frame_count < CHUNK_FRAMES {
        return chunk_at(track, 0);
    }
    chunk_at(track, (track.frame_count - CHUNK_FRAMES) / 2)
}

/// Non-overlapping windows at offsets 0, 256, ...; a trailing remainder is
/// dropped and short tracks yield one tiled window.
pub fn window_chunks(track: &TrackRecord) -> Vec<MelChunk> {
    let n = (track.frame_count / CHUNK_FRAMES).max(1);
    (0..n).map(|w| chunk_at(track, w * CHUNK_FRAMES)).collect()
}

/// Padded genre word-vector sequence plus the mask of real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreSequence {
    pub vectors: Array2<f64>,
    pub mask: Vec<bool>,
}

pub fn lookup_genre_sequence(
    track: &TrackRecord,
    table: &GenreEmbeddingTable,
) -> Result<GenreSequence> {
    let mut vectors = Array2::zeros((MAX_GENRES, table.dim()));
    let mut mask = vec![false; MAX_GENRES];
    if track.genre_ids.len() > MAX_GENRES {
        return Err(Error::shape(
            format!("<= {MAX_GENRES} genres"),
            track.genre_ids.len(),
        ));
    }
    for (row, &g) in track.genre_ids.iter().enumerate() {
        let v = table.get(g).ok_or(Error::GenreOutOfVocab { genre_id: g })?;
        vectors
            .row_mut(row)
            .iter_mut()
            .zip(v)
            .for_each(|(d, s)| *d = *s);
        mask[row] = true;
    }
    Ok(GenreSequence { vectors, mask })
}

/// Sparse binary track x playlist membership, stored by column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaylistMatrix {
    n_rows: usize,
    columns: Vec<Vec<usize>>,
}

impl PlaylistMatrix {
    /// Columns are lists of row indices; they are sorted and deduplicated.
    pub fn from_columns(n_rows: usize, mut columns: Vec<Vec<usize>>) -> Result<Self> {
        for c in &mut columns {
            c.sort_unstable();
            c.dedup();
            if c.last().is_some_and(|&r| r >= n_rows) {
                return Err(Error::InvalidArgument(format!(
                    "row index out of range for {n_rows} rows"
                )));
            }
        }
        Ok(PlaylistMatrix { n_rows, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    pub fn column(&self, p: usize) -> &[usize] {
        &self.columns[p]
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.columns[col].binary_search(&row).is_ok()
    }

    /// All `(row, col)` nonzeros, column-major.
    pub fn nonzeros(&self) -> Vec<(usize, usize)> {
        self.columns
            .iter()
            .enumerate()
            .flat_map(|(p, rows)| rows.iter().map(move |&m| (m, p)))
            .collect()
    }
}

pub fn build_playlist_matrix(corpus: &Corpus) -> PlaylistMatrix {
    let columns = corpus
        .playlists()
        .iter()
        .map(|p| {
            p.track_ids
                .iter()
                .map(|tid| {
                    corpus
                        .row_of(*tid)
                        .expect("corpus invariant: no dangling ids")
                })
                .collect()
        })
        .collect();
    PlaylistMatrix::from_columns(corpus.len(), columns).expect("rows come from the corpus index")
}
