use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub track_id: u32,
    pub similarity: f64,
}

/// Descending similarity, then ascending track id.
pub fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.track_id.cmp(&b.track_id))
}

/// Track embeddings normalized to unit length for cosine search.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<u32>,
    unit: Array2<f64>,
}

pub(crate) fn unit(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = v.dot(&v).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(&v / n)
}

impl EmbeddingIndex {
    pub fn new(ids: Vec<u32>, vectors: &Array2<f64>) -> Result<Self> {
        if ids.len() != vectors.nrows() {
            return Err(Error::shape(ids.len(), vectors.nrows()));
        }
        if ids.is_empty() {
            return Err(Error::Empty("embedding index".into()));
        }
        let mut u = Array2::zeros(vectors.dim());
        for (i, row) in vectors.axis_iter(Axis(0)).enumerate() {
            u.row_mut(i).assign(&unit(row)?);
        }
        Ok(EmbeddingIndex { ids, unit: u })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.unit.ncols()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn unit_vectors(&self) -> &Array2<f64> {
        &self.unit
    }

    /// Exact top-`k` by cosine similarity among the rows selected by
    /// `keep`; ties go to the smaller track id.
    pub(crate) fn top_k_filtered(
        &self,
        q: &Array1<f64>,
        k: usize,
        keep: impl Fn(u32) -> bool,
    ) -> Vec<Neighbor> {
        let sims = self.unit.dot(q);
        let mut all: Vec<Neighbor> = self
            .ids
            .iter()
            .zip(sims.iter())
            .filter(|(id, _)| keep(**id))
            .map(|(&track_id, &similarity)| Neighbor {
                track_id,
                similarity,
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable_by(k, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        all
    }
}

pub fn knn_cosine(query: &[f64], index: &EmbeddingIndex, k: usize) -> Result<Vec<Neighbor>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if query.len() != index.dim() {
        return Err(Error::shape(index.dim(), query.len()));
    }
    let q = unit(ArrayView1::from(query))?;
    Ok(index.top_k_filtered(&q, k, |_| true))
}

/// Aggregates per-seed neighbor lists: each seed retrieves its `per_seed`
/// nearest candidates (seeds themselves excluded), and candidates are
/// ranked by occurrence count, then summed similarity, then ascending id.
pub fn continue_playlist(
    seeds: &[(u32, ArrayView1<'_, f64>)],
    candidates: &EmbeddingIndex,
    per_seed: usize,
    k: usize,
) -> Result<Vec<u32>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seed tracks".into()));
    }
    let excluded: HashSet<u32> = seeds.iter().map(|s| s.0).collect();
    let lists: Vec<Result<Vec<Neighbor>>> = par::map_collect(seeds, |(_, v)| {
        let q = unit(v.view())?;
        Ok(candidates.top_k_filtered(&q, per_seed, |id| !excluded.contains(&id)))
    });
    let mut agg: HashMap<u32, (usize, f64)> = HashMap::new();
    for list in lists {
        for n in list? {
            let e = agg.entry(n.track_id).or_insert((0, 0.0));
            e.0 += 1;
            e.1 += n.similarity;
        }
    }
    let mut ranked: Vec<(u32, usize, f64)> =
        agg.into_iter().map(|(id, (c, s))| (id, c, s)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(b.2.total_cmp(&a.2)).then(a.0.cmp(&b.0)));
    Ok(ranked.into_iter().take(k).map(|r| r.0).collect())
}
