use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{window_chunks, TrackRecord};
use crate::error::{Error, Result};
use crate::nn::AudioEncoder;
use crate::rng::rng_for;

/// Per-track embeddings: the mean over non-overlapping windows, plus the
/// per-window vectors the genre probe trains on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackEmbeddings {
    pub ids: Vec<u32>,
    pub mean: Array2<f64>,
    pub windows: Vec<Array2<f64>>,
}

impl TrackEmbeddings {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn position(&self, track_id: u32) -> Option<usize> {
        self.ids.iter().position(|&i| i == track_id)
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[u32]) -> Result<TrackEmbeddings> {
        let lookup: std::collections::HashMap<u32, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let rows =
            ids.iter()
                .map(|id| {
                    lookup.get(id).copied().ok_or_else(|| {
                        Error::InvalidArgument(format!("no embedding for track {id}"))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
        Ok(TrackEmbeddings {
            ids: ids.to_vec(),
            mean: self.mean.select(Axis(0), &rows),
            windows: rows.iter().map(|&r| self.windows[r].clone()).collect(),
        })
    }

    /// One line per track: id, a tab, then space-separated components.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.ids.iter().zip(self.mean.rows()) {
            let _ = write!(out, "{id}\t");
            let vals: Vec<String> = row.iter().map(|v| format!("{}", *v as f32)).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn extract_track_embedding(encoder: &AudioEncoder, track: &TrackRecord) -> Result<Array1<f64>> {
    let windows = encoder.embed(&window_chunks(track))?;
    Ok(windows.mean_axis(Axis(0)).expect("at least one window"))
}

/// Embeds every window of every track in eval mode.
pub fn extract_embeddings(
    encoder: &AudioEncoder,
    tracks: &[&TrackRecord],
) -> Result<TrackEmbeddings> {
    let mut chunks = Vec::new();
    let mut counts = Vec::with_capacity(tracks.len());
    for t in tracks {
        let w = window_chunks(t);
        counts.push(w.len());
        chunks.extend(w);
    }
    let all = encoder.embed(&chunks)?;
    let mut mean = Array2::zeros((tracks.len(), encoder.dim()));
    let mut windows = Vec::with_capacity(tracks.len());
    let mut start = 0;
    for (i, &n) in counts.iter().enumerate() {
        let w = all.slice(ndarray::s![start..start + n, ..]).to_owned();
        mean.row_mut(i)
            .assign(&w.mean_axis(Axis(0)).expect("nonempty"));
        windows.push(w);
        start += n;
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite embedding".into()));
    }
    Ok(TrackEmbeddings {
        ids: tracks.iter().map(|t| t.track_id).collect(),
        mean,
        windows,
    })
}

/// Gaussian pseudo-random embeddings, the chance-level reference.
pub fn random_embeddings(tracks: &[&TrackRecord], dim: usize, seed: u64) -> TrackEmbeddings {
    let mut rng = rng_for(seed, "random-embeddings");
    let mut mean = Array2::zeros((tracks.len(), dim));
    let mut windows = Vec::with_capacity(tracks.len());
    for (i, t) in tracks.iter().enumerate() {
        let n = (t.frame_count / crate::corpus::CHUNK_FRAMES).max(1);
        let w = Array2::from_shape_simple_fn((n, dim), || StandardNormal.sample(&mut rng));
        mean.row_mut(i)
            .assign(&w.mean_axis(Axis(0)).expect("nonempty"));
        windows.push(w);
    }
    TrackEmbeddings {
        ids: tracks.iter().map(|t| t.track_id).collect(),
        mean,
        windows,
    }
}
