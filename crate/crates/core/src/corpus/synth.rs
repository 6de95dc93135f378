//! Synthetic corpora with a known latent cluster per track. The cluster
//! drives the mel band profile, the genre labels, and playlist membership,
//! so all three modalities carry a shared signal.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    Corpus, GenreEmbeddingTable, Playlist, TagCategory, TrackRecord, GENRE_DIM, GENRE_VOCAB,
    MEL_BANDS,
};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_tracks: usize,
    pub n_clusters: usize,
    pub n_playlists: usize,
    pub noise_level: f64,
    pub seed: u64,
    /// Inclusive frame-count range per track.
    pub min_frames: usize,
    pub max_frames: usize,
    /// Probability that a track also carries one of its cluster's sub-genres.
    pub extra_genre_prob: f64,
    /// Share of each playlist drawn from its dominant cluster (>= 0.8).
    pub playlist_purity: f64,
    pub min_playlist_len: usize,
    pub max_playlist_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_tracks: 64,
            n_clusters: 4,
            n_playlists: 16,
            noise_level: 0.1,
            seed: 0,
            min_frames: 256,
            max_frames: 320,
            extra_genre_prob: 0.5,
            playlist_purity: 0.9,
            min_playlist_len: 5,
            max_playlist_len: 30,
        }
    }
}

pub fn generate_synthetic_corpus(
    n_tracks: usize,
    n_clusters: usize,
    n_playlists: usize,
    noise_level: f64,
    seed: u64,
) -> Result<Corpus> {
    SynthConfig {
        n_tracks,
        n_clusters,
        n_playlists,
        noise_level,
        seed,
        ..SynthConfig::default()
    }
    .generate()
}

/// Per-cluster spectral envelope: a few Gaussian bumps over the mel axis.
fn band_profile<R: Rng>(rng: &mut R) -> Vec<f64> {
    let n_bumps = rng.random_range(2..=3);
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(2.0..(MEL_BANDS as f64 - 2.0)),
                rng.random_range(1.5..4.0),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    (0..MEL_BANDS)
        .map(|f| {
            let f = f as f64;
            0.05 + bumps
                .iter()
                .map(|(mu, sigma, amp)| amp * (-(f - mu).powi(2) / (2.0 * sigma * sigma)).exp())
                .sum::<f64>()
        })
        .collect()
}

impl SynthConfig {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_tracks == 0 {
            return bad("n_tracks must be > 0");
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_tracks.min(GENRE_VOCAB as usize) {
            return bad("n_clusters must be in 1..=min(n_tracks, 219)");
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad("noise_level must be finite and >= 0");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if !(0.8..=1.0).contains(&self.playlist_purity) {
            return bad("playlist_purity must be in [0.8, 1]");
        }
        if self.min_playlist_len == 0 || self.min_playlist_len > self.max_playlist_len {
            return bad("playlist length range is empty");
        }
        if !(0.0..=1.0).contains(&self.extra_genre_prob) {
            return bad("extra_genre_prob must be a probability");
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Corpus> {
        self.check()?;
        let k = self.n_clusters;
        let mut rng = rng::rng_for(self.seed, "synth");

        let profiles: Vec<Vec<f64>> = (0..k).map(|_| band_profile(&mut rng)).collect();
        let periods: Vec<f64> = (0..k).map(|_| rng.random_range(8.0..40.0)).collect();

        // sub-genres exist only when the vocabulary has room for two per cluster
        let has_sub = 3 * k <= GENRE_VOCAB as usize;
        let sub_genre = |c: usize, j: usize| (k + 1 + 2 * c + j) as u32;

        let noise = Normal::new(0.0, 1.0).expect("valid normal");
        let mut tracks = Vec::with_capacity(self.n_tracks);
        let mut cluster_of = Vec::with_capacity(self.n_tracks);
        for m in 0..self.n_tracks {
            // round-robin keeps clusters balanced
            let c = m % k;
            let frames = rng.random_range(self.min_frames..=self.max_frames);
            let mut mel = Vec::with_capacity(frames * MEL_BANDS);
            for t in 0..frames {
                let gain = 1.0 + 0.5 * (std::f64::consts::TAU * t as f64 / periods[c]).sin();
                for &p in &profiles[c] {
                    let n: f64 = noise.sample(&mut rng);
                    mel.push((p * gain + self.noise_level * n.abs()) as f32);
                }
            }
            let mut genres = vec![c as u32 + 1];
            if has_sub && rng.random_bool(self.extra_genre_prob) {
                genres.push(sub_genre(c, rng.random_range(0..2)));
            }
            tracks.push(TrackRecord::new(m as u32, mel, genres)?);
            cluster_of.push(c);
        }

        let members: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..self.n_tracks).filter(|&m| cluster_of[m] == c).collect())
            .collect();
        let mut playlists = Vec::with_capacity(self.n_playlists);
        for p in 0..self.n_playlists {
            let c = rng.random_range(0..k);
            let len = rng
                .random_range(self.min_playlist_len..=self.max_playlist_len)
                .min(self.n_tracks);
            let n_dom = ((len as f64 * self.playlist_purity).ceil() as usize).min(members[c].len());
            let others: Vec<usize> = (0..self.n_tracks).filter(|&m| cluster_of[m] != c).collect();
            let n_other = (len - n_dom.min(len)).min(others.len()).min(n_dom / 4);
            let mut ids: Vec<u32> = sample(&mut rng, members[c].len(), n_dom)
                .into_iter()
                .map(|i| members[c][i] as u32)
                .collect();
            ids.extend(
                sample(&mut rng, others.len(), n_other)
                    .into_iter()
                    .map(|i| others[i] as u32),
            );
            playlists.push(Playlist {
                playlist_id: p as u32,
                track_ids: ids,
            });
        }

        let mut vectors = BTreeMap::new();
        for g in 1..=GENRE_VOCAB {
            let v: Vec<f64> = (0..GENRE_DIM).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            vectors.insert(g, v.into_iter().map(|x| x / norm).collect());
        }
        let table = GenreEmbeddingTable::new(GENRE_DIM, vectors)?;

        let mut categories = vec![TagCategory {
            name: "cluster".into(),
            genre_ids: (1..=k as u32).collect(),
        }];
        if has_sub {
            categories.push(TagCategory {
                name: "subgenre".into(),
                genre_ids: (0..k)
                    .flat_map(|c| [sub_genre(c, 0), sub_genre(c, 1)])
                    .collect(),
            });
        }
        Corpus::new(tracks, playlists, GENRE_VOCAB, table, categories)
    }
}
