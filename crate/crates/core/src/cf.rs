//! Playlist-track matrix factorization with the WARP ranking loss.
//!
//! `B ~ X Q` where `X` is `tracks x rank` and `Q` is `rank x playlists`.
//! Playlists play the user role: for a sampled (track, playlist) positive we
//! search for a non-member track that violates the margin and push the two
//! apart, weighted by the harmonic number of the estimated rank.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::corpus::PlaylistMatrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"MUSACFAC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Nonnegative,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpConfig {
    pub rank: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub max_negative_trials: usize,
    pub margin: f64,
    pub seed: u64,
    pub projection: Projection,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            rank: 300,
            learning_rate: 0.05,
            max_epochs: 30,
            max_negative_trials: 100,
            margin: 1.0,
            seed: 0,
            projection: Projection::Nonnegative,
        }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.max_negative_trials == 0 {
            return Err(Error::InvalidArgument(
                "max_negative_trials must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Harmonic number `H_r`; zero for `r = 0`.
pub fn warp_loss_weight(r: usize) -> f64 {
    (1..=r).map(|j| 1.0 / j as f64).sum()
}

pub fn estimate_rank(n_items: usize, n_trials_to_violation: usize) -> usize {
    (n_items - 1) / n_trials_to_violation
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfFactors {
    /// `tracks x rank`.
    pub x: Array2<f64>,
    /// `rank x playlists`.
    pub q: Array2<f64>,
}

impl CfFactors {
    pub fn init(n_tracks: usize, n_playlists: usize, rank: usize, rng: &mut Rng) -> Self {
        let hi = 1.0 / (rank as f64).sqrt();
        let x = Array2::from_shape_simple_fn((n_tracks, rank), || rng.random_range(0.0..=hi));
        let q = Array2::from_shape_simple_fn((rank, n_playlists), || rng.random_range(0.0..=hi));
        CfFactors { x, q }
    }

    pub fn n_tracks(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_playlists(&self) -> usize {
        self.q.ncols()
    }

    pub fn rank(&self) -> usize {
        self.x.ncols()
    }

    pub fn score(&self, track: usize, playlist: usize) -> f64 {
        self.x.row(track).dot(&self.q.column(playlist))
    }

    /// Row `row` of `X`, the vector fed to the CF encoder.
    pub fn cf_vector(&self, row: usize) -> Result<ArrayView1<'_, f64>> {
        if row >= self.n_tracks() {
            return Err(Error::InvalidArgument(format!(
                "track row {row} out of range for {} tracks",
                self.n_tracks()
            )));
        }
        Ok(self.x.row(row))
    }

    pub fn min_entry(&self) -> f64 {
        self.x
            .iter()
            .chain(self.q.iter())
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 4 * (self.x.len() + self.q.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [self.n_tracks(), self.n_playlists(), self.rank()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in self.x.iter().chain(self.q.iter()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("factors file: {m}"));
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(bad("bad header"));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        if word(0) as u32 != VERSION {
            return Err(bad("unsupported version"));
        }
        let (m, m_pl, f) = (word(1), word(2), word(3));
        let body = &bytes[24..];
        if body.len() != 4 * (m * f + f * m_pl) {
            return Err(bad("size does not match header"));
        }
        let vals: Vec<f64> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let (xs, qs) = vals.split_at(m * f);
        Ok(CfFactors {
            x: Array2::from_shape_vec((m, f), xs.to_vec()).expect("checked size"),
            q: Array2::from_shape_vec((f, m_pl), qs.to_vec()).expect("checked size"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Updated {
        track: usize,
        playlist: usize,
        negative: usize,
        trials: usize,
    },
    NoViolation,
    /// The sampled playlist contains every track.
    Skipped,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WarpReport {
    pub steps: usize,
    pub updates: usize,
    pub skipped: usize,
    /// Mean positive score after each epoch.
    pub mean_positive_score: Vec<f64>,
}

pub struct WarpTrainer<'a> {
    matrix: &'a PlaylistMatrix,
    cfg: WarpConfig,
    nonzeros: Vec<(usize, usize)>,
    factors: CfFactors,
    rng: Rng,
    report: WarpReport,
}

impl<'a> WarpTrainer<'a> {
    pub fn new(matrix: &'a PlaylistMatrix, cfg: WarpConfig) -> Result<Self> {
        cfg.validate()?;
        let nonzeros = matrix.nonzeros();
        if nonzeros.is_empty() {
            return Err(Error::Empty("playlist matrix has no nonzeros".into()));
        }
        if matrix.n_rows() < 2 {
            return Err(Error::InvalidArgument("need at least two tracks".into()));
        }
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let factors = CfFactors::init(matrix.n_rows(), matrix.n_cols(), cfg.rank, &mut rng);
        Ok(WarpTrainer {
            matrix,
            cfg,
            nonzeros,
            factors,
            rng,
            report: WarpReport::default(),
        })
    }

    pub fn factors(&self) -> &CfFactors {
        &self.factors
    }

    pub fn report(&self) -> &WarpReport {
        &self.report
    }

    pub fn step(&mut self) -> StepOutcome {
        let m = self.matrix.n_rows();
        let (i, p) = self.nonzeros[self.rng.random_range(0..self.nonzeros.len())];
        self.report.steps += 1;
        if self.matrix.column(p).len() == m {
            self.report.skipped += 1;
            return StepOutcome::Skipped;
        }
        let s_i = self.factors.score(i, p);
        for trials in 1..=self.cfg.max_negative_trials {
            let j = loop {
                let j = self.rng.random_range(0..m);
                if !self.matrix.get(j, p) {
                    break j;
                }
            };
            if self.factors.score(j, p) > s_i - self.cfg.margin {
                let w = self.cfg.learning_rate * warp_loss_weight(estimate_rank(m, trials));
                self.update(i, j, p, w);
                self.report.updates += 1;
                return StepOutcome::Updated {
                    track: i,
                    playlist: p,
                    negative: j,
                    trials,
                };
            }
        }
        StepOutcome::NoViolation
    }

    fn update(&mut self, i: usize, j: usize, p: usize, w: f64) {
        let CfFactors { x, q } = &mut self.factors;
        let clamp = self.cfg.projection == Projection::Nonnegative;
        let proj = |v: f64| if clamp { v.max(0.0) } else { v };
        for f in 0..q.nrows() {
            let (xi, xj, qp) = (x[[i, f]], x[[j, f]], q[[f, p]]);
            x[[i, f]] = proj(xi + w * qp);
            x[[j, f]] = proj(xj - w * qp);
            q[[f, p]] = proj(qp + w * (xi - xj));
        }
    }

    /// One sweep of `nnz` sampled steps.
    pub fn epoch(&mut self) {
        for _ in 0..self.nonzeros.len() {
            self.step();
        }
        let mean = self
            .nonzeros
            .iter()
            .map(|&(i, p)| self.factors.score(i, p))
            .sum::<f64>()
            / self.nonzeros.len() as f64;
        self.report.mean_positive_score.push(mean);
    }

    pub fn finish(self) -> (CfFactors, WarpReport) {
        (self.factors, self.report)
    }
}

pub fn warp_train(matrix: &PlaylistMatrix, cfg: &WarpConfig) -> Result<(CfFactors, WarpReport)> {
    let mut t = WarpTrainer::new(matrix, cfg.clone())?;
    for epoch in 0..cfg.max_epochs {
        t.epoch();
        log::debug!(
            "warp epoch {epoch}: mean positive score {:.4}",
            t.report.mean_positive_score[epoch]
        );
    }
    if t.report.skipped > 0 {
        log::warn!(
            "{} warp steps skipped: playlist has no negatives",
            t.report.skipped
        );
    }
    Ok(t.finish())
}

/// Mean over playlists of the pairwise AUC of member scores against
/// non-member scores. Playlists that contain every track are left out.
pub fn mean_playlist_auc(factors: &CfFactors, matrix: &PlaylistMatrix) -> Option<f64> {
    let scores = factors.x.dot(&factors.q);
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, col) in scores.axis_iter(Axis(1)).enumerate() {
        let members = matrix.column(p);
        if members.is_empty() || members.len() == matrix.n_rows() {
            continue;
        }
        let mut wins = 0.0;
        for &i in members {
            for (j, &s) in col.iter().enumerate() {
                if matrix.get(j, p) {
                    continue;
                }
                wins += if col[i] > s {
                    1.0
                } else if col[i] == s {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total += wins / (members.len() * (matrix.n_rows() - members.len())) as f64;
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}
