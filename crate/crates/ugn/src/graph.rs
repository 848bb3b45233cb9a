//! Graph representation and the normalized adjacency operator used by the
//! encoder.

use std::collections::HashSet;

use rand::Rng;

use crate::error::{Result, UgnError};
use crate::tensor::Tensor;

/// A graph over nodes `0..n`. Undirected edges are stored canonically with
/// `u < v`; directed edges keep their orientation. Duplicate edges are
/// dropped during construction.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn new(n: usize, directed: bool, raw_edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(UgnError::Graph("graph must have at least one node".into()));
        }
        let mut seen = HashSet::new();
        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(u, v) in raw_edges {
            if u >= n || v >= n {
                return Err(UgnError::Graph(format!(
                    "edge ({u},{v}) references a node outside 0..{n}"
                )));
            }
            if u == v {
                return Err(UgnError::Graph(format!("self-loop on node {u}")));
            }
            let key = if directed {
                (u, v)
            } else {
                (u.min(v), u.max(v))
            };
            if seen.insert(key) {
                edges.push(key);
            }
        }
        Ok(Graph { n, directed, edges })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    /// Canonicalized, deduplicated edges.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges of the symmetrized graph, each with `u < v`. For undirected
    /// graphs this is the stored edge list; for directed graphs reciprocal
    /// pairs collapse to one edge.
    pub fn undirected_edges(&self) -> Vec<(usize, usize)> {
        if !self.directed {
            return self.edges.clone();
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for &(u, v) in &self.edges {
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                out.push(key);
            }
        }
        out
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        if self.directed {
            self.edges.contains(&(u, v))
        } else {
            self.edges.contains(&(u.min(v), u.max(v)))
        }
    }

    /// Degree in the symmetrized graph, without the implicit self-loop.
    pub fn degree_vector(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for (u, v) in self.undirected_edges() {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    /// Neighbor lists in the symmetrized graph, sorted ascending.
    pub fn adjacency_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (u, v) in self.undirected_edges() {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Symmetrically normalized adjacency with self-loops:
    /// `D^{-1/2} (A + I) D^{-1/2}` over the symmetrized graph.
    ///
    /// Satisfies `Ahat * sqrt(d) = sqrt(d)` where `d_i = degree_i + 1`.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.n;
        let mut a = Tensor::identity(n);
        for (u, v) in self.undirected_edges() {
            a.set2(u, v, 1.0);
            a.set2(v, u, 1.0);
        }
        let dinv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / (0..n).map(|j| a.get2(i, j)).sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let v = a.get2(i, j) * dinv_sqrt[i] * dinv_sqrt[j];
                a.set2(i, j, v);
            }
        }
        a
    }

    /// Weighted variant of [`Self::normalized_adjacency`] for a dense
    /// non-negative weight matrix: `D^{-1/2} (W + I) D^{-1/2}`.
    pub fn normalized_from_weights(weights: &Tensor) -> Result<Tensor> {
        let sh = weights.shape();
        if sh.len() != 2 || sh[0] != sh[1] {
            return Err(UgnError::shape("normalized_from_weights", sh, sh));
        }
        let n = sh[0];
        let mut a = weights.clone();
        for i in 0..n {
            for j in 0..n {
                if a.get2(i, j) < 0.0 {
                    return Err(UgnError::Graph(format!(
                        "negative weight at ({i},{j})"
                    )));
                }
            }
            a.set2(i, i, a.get2(i, i) + 1.0);
        }
        let dinv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / (0..n).map(|j| a.get2(i, j)).sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let v = a.get2(i, j) * dinv_sqrt[i] * dinv_sqrt[j];
                a.set2(i, j, v);
            }
        }
        Ok(a)
    }

    /// Sample `count` distinct node pairs that are not edges of the graph
    /// (in either direction) and are not self-pairs. When `restrict_to` is
    /// given, both endpoints are drawn from that node set.
    ///
    /// Rejection sampling gives up after `100 * count` draws.
    pub fn negative_sample(
        &self,
        count: usize,
        restrict_to: Option<&[usize]>,
        rng: &mut impl Rng,
    ) -> Result<Vec<(usize, usize)>> {
        let pool: Vec<usize> = match restrict_to {
            Some(nodes) => {
                for &v in nodes {
                    if v >= self.n {
                        return Err(UgnError::Sampling(format!(
                            "restricted node {v} outside 0..{}",
                            self.n
                        )));
                    }
                }
                nodes.to_vec()
            }
            None => (0..self.n).collect(),
        };
        if pool.len() < 2 {
            return Err(UgnError::Sampling(
                "need at least two candidate nodes for negative sampling".into(),
            ));
        }
        let positives: HashSet<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let mut chosen = HashSet::new();
        let mut out = Vec::with_capacity(count);
        let budget = count.saturating_mul(100);
        let mut draws = 0usize;
        while out.len() < count {
            if draws >= budget {
                return Err(UgnError::Sampling(format!(
                    "could not find {count} non-edges after {budget} draws"
                )));
            }
            draws += 1;
            let u = pool[rng.gen_range(0..pool.len())];
            let v = pool[rng.gen_range(0..pool.len())];
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if positives.contains(&key) || !chosen.insert(key) {
                continue;
            }
            out.push(key);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> Graph {
        Graph::new(3, false, &[(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn dedup_and_canonicalize() {
        let g = Graph::new(3, false, &[(1, 0), (0, 1), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn self_loop_rejected() {
        assert!(Graph::new(2, false, &[(1, 1)]).is_err());
    }

    #[test]
    fn out_of_range_edge_rejected() {
        assert!(Graph::new(2, false, &[(0, 2)]).is_err());
    }

    #[test]
    fn path_graph_normalized_entries() {
        let ahat = path3().normalized_adjacency();
        assert!((ahat.get2(0, 0) - 0.5).abs() < 1e-15);
        assert!((ahat.get2(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((ahat.get2(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((ahat.get2(0, 2)).abs() < 1e-15);
    }

    #[test]
    fn normalized_fixes_sqrt_degree_vector() {
        let g = Graph::new(5, false, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)]).unwrap();
        let ahat = g.normalized_adjacency();
        let d: Vec<f64> = g
            .degree_vector()
            .iter()
            .map(|&d| ((d + 1) as f64).sqrt())
            .collect();
        let out = ahat
            .matmul(&Tensor::new(vec![5, 1], d.clone()).unwrap())
            .unwrap();
        for i in 0..5 {
            assert!((out.data()[i] - d[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn directed_graph_symmetrized_for_adjacency() {
        let g = Graph::new(2, true, &[(0, 1), (1, 0)]).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.undirected_edges(), vec![(0, 1)]);
        let ahat = g.normalized_adjacency();
        assert!((ahat.get2(1, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn negative_sample_avoids_edges() {
        let g = path3();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let neg = g.negative_sample(1, None, &mut rng).unwrap();
        assert_eq!(neg, vec![(0, 2)]);
    }

    #[test]
    fn negative_sample_exhaustion_errors() {
        // Triangle: no non-edges exist.
        let g = Graph::new(3, false, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert!(g.negative_sample(1, None, &mut rng).is_err());
    }

    #[test]
    fn negative_sample_respects_restriction() {
        let g = Graph::new(6, false, &[(0, 1)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let neg = g.negative_sample(3, Some(&[2, 3, 4]), &mut rng).unwrap();
        for (u, v) in neg {
            assert!([2, 3, 4].contains(&u) && [2, 3, 4].contains(&v));
        }
    }
}
