//! Supernode coarsening and synthetic node features for featureless
//! graphs, plus the feature-dimension matching used for zero-shot
//! transfer between models.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, UgnError};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// Disjoint, exhaustive grouping of nodes into supernodes.
#[derive(Debug, Clone)]
pub struct SupernodePartition {
    assignments: Vec<usize>,
    sizes: Vec<usize>,
}

impl SupernodePartition {
    /// Split `n` nodes into `s` contiguous-id blocks whose sizes differ by
    /// at most one: `n mod s` blocks of `ceil(n/s)` followed by blocks of
    /// `floor(n/s)`.
    pub fn new(n: usize, s: usize) -> Result<Self> {
        if s == 0 || s > n {
            return Err(UgnError::InvalidArgument(format!(
                "supernode count {s} outside 1..={n}"
            )));
        }
        let small = n / s;
        let rem = n % s;
        let sizes: Vec<usize> = (0..s)
            .map(|j| if j < rem { small + 1 } else { small })
            .collect();
        Ok(Self::from_sizes(n, sizes))
    }

    /// Split into blocks of a fixed size, with one smaller trailing block
    /// for the remainder (e.g. 82,168 nodes at block size 1000 give 82
    /// blocks of 1000 plus one of 168).
    pub fn with_block_size(n: usize, block: usize) -> Result<Self> {
        if block == 0 || block > n {
            return Err(UgnError::InvalidArgument(format!(
                "block size {block} outside 1..={n}"
            )));
        }
        let full = n / block;
        let rem = n % block;
        let mut sizes = vec![block; full];
        if rem > 0 {
            sizes.push(rem);
        }
        Ok(Self::from_sizes(n, sizes))
    }

    fn from_sizes(n: usize, sizes: Vec<usize>) -> Self {
        let mut assignments = Vec::with_capacity(n);
        for (j, &sz) in sizes.iter().enumerate() {
            assignments.extend(std::iter::repeat(j).take(sz));
        }
        SupernodePartition { assignments, sizes }
    }

    /// Randomize which nodes land in which block while keeping the size
    /// profile.
    pub fn shuffled(n: usize, s: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::new(n, s)?;
        p.assignments.shuffle(rng);
        Ok(p)
    }

    pub fn supernode_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn assignment(&self, node: usize) -> usize {
        self.assignments[node]
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }
}

/// Fraction of each supernode's members that `v` touches in the
/// symmetrized graph: entry j is (connections to S_j) / |S_j|.
pub fn connection_vector(g: &Graph, p: &SupernodePartition, v: usize) -> Result<Vec<f64>> {
    if v >= g.node_count() {
        return Err(UgnError::Graph(format!(
            "node {v} outside 0..{}",
            g.node_count()
        )));
    }
    let mut counts = vec![0usize; p.supernode_count()];
    for (a, b) in g.undirected_edges() {
        if a == v {
            counts[p.assignment(b)] += 1;
        } else if b == v {
            counts[p.assignment(a)] += 1;
        }
    }
    Ok(counts
        .iter()
        .zip(p.sizes())
        .map(|(&c, &sz)| c as f64 / sz as f64)
        .collect())
}

/// Size-normalized incoming and outgoing edge counts per supernode,
/// concatenated as `[incoming, outgoing]`.
pub fn directed_edge_count_vector(
    g: &Graph,
    p: &SupernodePartition,
    v: usize,
) -> Result<Vec<f64>> {
    if !g.directed() {
        return Err(UgnError::Graph(
            "graph is undirected; use connection_vector".into(),
        ));
    }
    if v >= g.node_count() {
        return Err(UgnError::Graph(format!(
            "node {v} outside 0..{}",
            g.node_count()
        )));
    }
    let s = p.supernode_count();
    let mut incoming = vec![0usize; s];
    let mut outgoing = vec![0usize; s];
    for &(a, b) in g.edges() {
        if b == v {
            incoming[p.assignment(a)] += 1;
        }
        if a == v {
            outgoing[p.assignment(b)] += 1;
        }
    }
    let mut out = Vec::with_capacity(2 * s);
    for (&c, &sz) in incoming.iter().zip(p.sizes()) {
        out.push(c as f64 / sz as f64);
    }
    for (&c, &sz) in outgoing.iter().zip(p.sizes()) {
        out.push(c as f64 / sz as f64);
    }
    Ok(out)
}

/// Synthetic node features: per-supernode connection profile plus a
/// uniform random block in [0,1].
#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    features: Tensor,
    supernodes: usize,
    rand_dim: usize,
    directed: bool,
}

impl SyntheticFeatures {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn into_tensor(self) -> Tensor {
        self.features
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn supernodes(&self) -> usize {
        self.supernodes
    }

    pub fn rand_dim(&self) -> usize {
        self.rand_dim
    }

    /// Width of the connection block: `s` undirected, `2s` directed.
    pub fn connection_dim(&self) -> usize {
        if self.directed {
            2 * self.supernodes
        } else {
            self.supernodes
        }
    }
}

/// Build features over the given partition. Row i is the connection (or
/// directed edge-count) vector of node i followed by `rand_dim` uniforms.
pub fn synthesize_with_partition(
    g: &Graph,
    p: &SupernodePartition,
    rand_dim: usize,
    rng: &mut impl Rng,
) -> Result<SyntheticFeatures> {
    let n = g.node_count();
    let conn_dim = if g.directed() {
        2 * p.supernode_count()
    } else {
        p.supernode_count()
    };
    let mut feat = Tensor::zeros(vec![n, conn_dim + rand_dim]);
    for v in 0..n {
        let conn = if g.directed() {
            directed_edge_count_vector(g, p, v)?
        } else {
            connection_vector(g, p, v)?
        };
        for (j, &x) in conn.iter().enumerate() {
            feat.set2(v, j, x);
        }
        for j in 0..rand_dim {
            feat.set2(v, conn_dim + j, rng.gen_range(0.0..1.0));
        }
    }
    Ok(SyntheticFeatures {
        features: feat,
        supernodes: p.supernode_count(),
        rand_dim,
        directed: g.directed(),
    })
}

/// Convenience over [`synthesize_with_partition`] with an even split into
/// `s` supernodes.
pub fn synthesize_features(
    g: &Graph,
    s: usize,
    rand_dim: usize,
    rng: &mut impl Rng,
) -> Result<SyntheticFeatures> {
    let p = SupernodePartition::new(g.node_count(), s)?;
    synthesize_with_partition(g, &p, rand_dim, rng)
}

/// Rebuild features at a different width for cross-model transfer.
///
/// Widening grows the supernode count (keeping the random block);
/// narrowing shrinks the random block first and only then the supernode
/// count. Errors if `target_dim` cannot be reached with at least one
/// supernode.
pub fn match_feature_dim(
    features: &SyntheticFeatures,
    target_dim: usize,
    g: &Graph,
    rng: &mut impl Rng,
) -> Result<SyntheticFeatures> {
    let unit = if features.directed { 2 } else { 1 };
    if target_dim < unit {
        return Err(UgnError::InvalidArgument(format!(
            "target dimension {target_dim} below minimum {unit}"
        )));
    }
    if target_dim == features.width() {
        return Ok(features.clone());
    }
    let (s, r) = if target_dim > features.width() {
        // Grow supernodes as far as the target allows, keep the random
        // block; a leftover below `unit` spills into the random block.
        let s = ((target_dim - features.rand_dim) / unit).max(features.supernodes);
        (s, target_dim - unit * s)
    } else if target_dim >= unit * features.supernodes {
        (features.supernodes, target_dim - unit * features.supernodes)
    } else {
        let s = target_dim / unit;
        (s, target_dim - unit * s)
    };
    if s == 0 || s > g.node_count() {
        return Err(UgnError::InvalidArgument(format!(
            "target dimension {target_dim} needs {s} supernodes, graph has {} nodes",
            g.node_count()
        )));
    }
    let p = SupernodePartition::new(g.node_count(), s)?;
    synthesize_with_partition(g, &p, r, rng)
}
