//! Approximate cosine search with a forest of random-projection trees.
//!
//! Each internal node splits its points by the hyperplane equidistant from
//! two randomly chosen members. Queries walk all trees at once, always
//! expanding the node whose split margin is least decisive, until enough
//! candidates are gathered; those are then ranked exactly.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use ndarray::{Array1, ArrayView1};
use rand::Rng as _;

use super::knn::{rank_order, unit, EmbeddingIndex, Neighbor};
use crate::error::{Error, Result};
use crate::rng::{rng_indexed, Rng};

#[derive(Debug, Clone)]
enum Node {
    Split {
        normal: Array1<f64>,
        offset: f64,
        left: usize,
        right: usize,
    },
    Leaf(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub leaf_size: usize,
    /// Minimum number of candidates gathered per query, as a multiple of `k`.
    pub search_factor: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 16,
            leaf_size: 32,
            search_factor: 30,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpForest {
    cfg: ForestConfig,
    trees: Vec<Tree>,
}

struct Pending {
    priority: f64,
    tree: usize,
    node: usize,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(other.tree.cmp(&self.tree))
            .then(other.node.cmp(&self.node))
    }
}

fn build_tree(index: &EmbeddingIndex, leaf_size: usize, rng: &mut Rng) -> Tree {
    let u = index.unit_vectors();
    let mut nodes = Vec::new();
    let mut stack = vec![(0..index.len()).collect::<Vec<usize>>()];
    // children indices are patched in when the child is created
    let mut parents: Vec<(usize, bool)> = vec![(usize::MAX, false)];
    while let Some(items) = stack.pop() {
        let (parent, is_right) = parents.pop().expect("parallel stacks");
        let id = nodes.len();
        if parent != usize::MAX {
            if let Node::Split { left, right, .. } = &mut nodes[parent] {
                if is_right {
                    *right = id;
                } else {
                    *left = id;
                }
            }
        }
        if items.len() <= leaf_size {
            nodes.push(Node::Leaf(items));
            continue;
        }
        let a = items[rng.random_range(0..items.len())];
        let mut b = items[rng.random_range(0..items.len())];
        for _ in 0..8 {
            if b != a {
                break;
            }
            b = items[rng.random_range(0..items.len())];
        }
        let mut normal = &u.row(a) - &u.row(b);
        let len = normal.dot(&normal).sqrt();
        if len > 0.0 {
            normal /= len;
        }
        let offset = normal.dot(&(&u.row(a) + &u.row(b))) / 2.0;
        let (mut l, mut r): (Vec<usize>, Vec<usize>) = items
            .iter()
            .partition(|&&i| normal.dot(&u.row(i)) <= offset);
        if l.is_empty() || r.is_empty() {
            // degenerate split (duplicates): halve at random
            let mut all = items;
            for i in (1..all.len()).rev() {
                all.swap(i, rng.random_range(0..=i));
            }
            r = all.split_off(all.len() / 2);
            l = all;
        }
        nodes.push(Node::Split {
            normal,
            offset,
            left: usize::MAX,
            right: usize::MAX,
        });
        stack.push(r);
        parents.push((id, true));
        stack.push(l);
        parents.push((id, false));
    }
    Tree { nodes }
}

impl RpForest {
    pub fn build(index: &EmbeddingIndex, cfg: ForestConfig) -> Result<Self> {
        if cfg.n_trees == 0 || cfg.leaf_size == 0 || cfg.search_factor == 0 {
            return Err(Error::InvalidArgument(
                "forest parameters must be positive".into(),
            ));
        }
        let seeds: Vec<u64> = (0..cfg.n_trees as u64).collect();
        let trees = crate::par::map_collect(&seeds, |&t| {
            build_tree(
                index,
                cfg.leaf_size,
                &mut rng_indexed(cfg.seed, "rp-tree", t),
            )
        });
        Ok(RpForest { cfg, trees })
    }

    pub fn query(&self, index: &EmbeddingIndex, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if query.len() != index.dim() {
            return Err(Error::shape(index.dim(), query.len()));
        }
        let q = unit(ArrayView1::from(query))?;
        let want = (k * self.cfg.search_factor).min(index.len());
        let mut heap: BinaryHeap<Pending> = (0..self.trees.len())
            .map(|tree| Pending {
                priority: f64::INFINITY,
                tree,
                node: 0,
            })
            .collect();
        let mut seen: HashSet<usize> = HashSet::new();
        while seen.len() < want {
            let Some(p) = heap.pop() else { break };
            match &self.trees[p.tree].nodes[p.node] {
                Node::Leaf(items) => seen.extend(items.iter().copied()),
                Node::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let margin = normal.dot(&q) - offset;
                    heap.push(Pending {
                        priority: p.priority.min(margin),
                        tree: p.tree,
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: p.priority.min(-margin),
                        tree: p.tree,
                        node: *left,
                    });
                }
            }
        }
        let u = index.unit_vectors();
        let mut out: Vec<Neighbor> = seen
            .into_iter()
            .map(|i| Neighbor {
                track_id: index.ids()[i],
                similarity: u.row(i).dot(&q),
            })
            .collect();
        out.sort_by(rank_order);
        out.truncate(k);
        Ok(out)
    }
}
