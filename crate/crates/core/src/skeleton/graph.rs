use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Joint names of the built-in nine-joint body, indexed by joint id.
pub const BODY9_JOINTS: [&str; 9] = [
    "root",
    "neck",
    "head",
    "left_elbow",
    "left_hand",
    "right_elbow",
    "right_hand",
    "left_foot",
    "right_foot",
];

/// A skeleton as a spanning tree over `n` joints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct SkeletonGraph {
    n: usize,
    root: usize,
    edges: Vec<(usize, usize)>,
    parents: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    joints: usize,
    root: usize,
    edges: Vec<(usize, usize)>,
}

impl TryFrom<GraphRepr> for SkeletonGraph {
    type Error = Error;

    fn try_from(r: GraphRepr) -> Result<Self> {
        SkeletonGraph::new(r.joints, r.root, r.edges)
    }
}

impl From<SkeletonGraph> for GraphRepr {
    fn from(g: SkeletonGraph) -> Self {
        GraphRepr {
            joints: g.n,
            root: g.root,
            edges: g.edges,
        }
    }
}

impl SkeletonGraph {
    /// Builds a graph from `(parent, child)` edges, which must form a
    /// spanning tree rooted at `root`.
    pub fn new(n: usize, root: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n == 0 || root >= n {
            return Err(Error::invalid(format!("bad graph: n = {n}, root = {root}")));
        }
        if edges.len() != n - 1 {
            return Err(Error::invalid(format!(
                "a spanning tree over {n} joints needs {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut parents = vec![None; n];
        for &(p, c) in &edges {
            if p >= n || c >= n || p == c {
                return Err(Error::invalid(format!("bad edge ({p}, {c})")));
            }
            if c == root {
                return Err(Error::invalid("the root cannot be a child"));
            }
            if parents[c].replace(p).is_some() {
                return Err(Error::invalid(format!("joint {c} has two parents")));
            }
        }
        // Every joint must reach the root; n - 1 edges then rule out cycles.
        for start in 0..n {
            let mut j = start;
            let mut steps = 0;
            while j != root {
                j = parents[j].ok_or_else(|| {
                    Error::invalid(format!("joint {start} is not connected to the root"))
                })?;
                steps += 1;
                if steps > n {
                    return Err(Error::invalid("cycle in skeleton graph"));
                }
            }
        }
        Ok(SkeletonGraph {
            n,
            root,
            edges,
            parents,
        })
    }

    /// The nine-joint desk-scale body; see [`BODY9_JOINTS`].
    pub fn body9() -> Self {
        SkeletonGraph::new(
            9,
            0,
            vec![(0, 1), (1, 2), (1, 3), (3, 4), (1, 5), (5, 6), (0, 7), (0, 8)],
        )
        .expect("built-in graph is a tree")
    }

    pub fn joints(&self) -> usize {
        self.n
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    /// The first child of the root in edge order; the root→child bone is the
    /// scale reference for normalization.
    pub fn reference_child(&self) -> Option<usize> {
        self.edges
            .iter()
            .find(|&&(p, _)| p == self.root)
            .map(|&(_, c)| c)
    }

    /// Joints from the root down to `joint`, inclusive.
    pub fn path_from_root(&self, joint: usize) -> Vec<usize> {
        let mut path = vec![joint];
        let mut j = joint;
        while let Some(p) = self.parents[j] {
            path.push(p);
            j = p;
        }
        path.reverse();
        path
    }

    /// `D^(-1/2) (A + I) D^(-1/2)` with `A` the undirected adjacency matrix.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.n;
        let mut a = Tensor::identity(n);
        for &(p, c) in &self.edges {
            a.set(&[p, c], 1.0);
            a.set(&[c, p], 1.0);
        }
        let deg: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a.get(&[i, j])).sum::<f64>())
            .collect();
        for i in 0..n {
            for j in 0..n {
                let v = a.get(&[i, j]) / (deg[i] * deg[j]).sqrt();
                a.set(&[i, j], v);
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body9_is_valid() {
        let g = SkeletonGraph::body9();
        assert_eq!(g.joints(), BODY9_JOINTS.len());
        assert_eq!(g.reference_child(), Some(1));
        assert_eq!(g.path_from_root(4), vec![0, 1, 3, 4]);
    }

    #[test]
    fn rejects_non_trees() {
        assert!(SkeletonGraph::new(3, 0, vec![(0, 1)]).is_err());
        assert!(SkeletonGraph::new(3, 0, vec![(0, 1), (2, 1)]).is_err());
        assert!(SkeletonGraph::new(3, 0, vec![(1, 2), (2, 1)]).is_err());
        assert!(SkeletonGraph::new(2, 0, vec![(1, 0)]).is_err());
    }

    #[test]
    fn two_node_adjacency() {
        let g = SkeletonGraph::new(2, 0, vec![(0, 1)]).unwrap();
        let a = g.normalized_adjacency();
        for v in a.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        let single = SkeletonGraph::new(1, 0, vec![]).unwrap();
        assert_eq!(single.normalized_adjacency().data(), &[1.0]);
    }
}
