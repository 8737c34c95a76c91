use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MstEdges {
    pub edges: Vec<MstEdge>,
    pub total: f64,
}

struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Kruskal; equal weights are taken in lexicographic `(a, b)` order.
pub fn mst(m: &DistanceMatrix) -> Result<MstEdges> {
    let n = m.len();
    let mut edges = Vec::with_capacity(n * n / 2);
    for i in 0..n {
        if m.d[i].len() != n {
            return Err(Error::Shape("distance matrix is not square".into()));
        }
        for j in i + 1..n {
            let w = m.d[i][j];
            if w != m.d[j][i] {
                return Err(Error::Shape(format!("distance matrix asymmetric at ({i}, {j})")));
            }
            if w.is_finite() {
                edges.push(MstEdge { a: i, b: j, weight: w });
            }
        }
    }
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight).then((x.a, x.b).cmp(&(y.a, y.b))));
    let mut ds = DisjointSet::new(n);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for e in edges {
        if ds.union(e.a, e.b) {
            out.push(e);
        }
    }
    if out.len() + 1 < n {
        return Err(Error::Degenerate("graph is disconnected".into()));
    }
    let total = out.iter().map(|e| e.weight).sum();
    Ok(MstEdges { edges: out, total })
}
