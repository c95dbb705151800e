//! Exact k-nearest-neighbour search with a kd-tree.
//!
//! Results are ordered by `(distance², row index)`, so ties always resolve
//! to the lower row index.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::kernels::squared_distance;

const LEAF_SIZE: usize = 16;

/// Training inputs (row-major, `n × d`) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    dim: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Size("input dimension must be at least 1".into()));
        }
        if inputs.len() != targets.len() * dim {
            return Err(Error::Shape {
                expected: targets.len() * dim,
                got: inputs.len(),
            });
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite entries".into()));
        }
        Ok(Self {
            inputs,
            targets,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// The first `n` rows.
    pub fn prefix(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            inputs: self.inputs[..n * self.dim].to_vec(),
            targets: self.targets[..n].to_vec(),
            dim: self.dim,
        }
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Dataset {
            inputs,
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            dim: self.dim,
        }
    }
}

/// The `m` nearest training rows to a query, closest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighbourSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighbourSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
        min_rank: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
        min_rank: usize,
    },
}

impl Node {
    fn min_rank(&self) -> usize {
        match *self {
            Node::Leaf { min_rank, .. } | Node::Split { min_rank, .. } => min_rank,
        }
    }
}

/// Immutable kd-tree over a point set.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<f64>,
    ids: Vec<usize>,
    ranks: Vec<usize>,
    nodes: Vec<Node>,
    dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.id.cmp(&other.id))
    }
}

impl KdTree {
    /// Builds an index over the rows of a dataset.
    pub fn build(data: &Dataset) -> Result<Self> {
        Self::from_points(data.inputs(), data.dim(), None)
    }

    /// Builds an index over row-major `points`. If `ranks` is given, queries
    /// can be restricted to rows whose rank is below a threshold.
    pub fn from_points(points: &[f64], dim: usize, ranks: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Size("input dimension must be at least 1".into()));
        }
        let n = points.len() / dim;
        if n == 0 {
            return Err(Error::EmptyInput("cannot index an empty dataset"));
        }
        if points.len() != n * dim {
            return Err(Error::Shape {
                expected: n * dim,
                got: points.len(),
            });
        }
        let ranks = ranks.unwrap_or_else(|| vec![0; n]);
        if ranks.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: ranks.len(),
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        build_node(points, dim, &ranks, &mut order, 0, &mut nodes);
        let mut reordered = Vec::with_capacity(points.len());
        for &i in &order {
            reordered.extend_from_slice(&points[i * dim..(i + 1) * dim]);
        }
        let ranks = order.iter().map(|&i| ranks[i]).collect();
        Ok(Self {
            points: reordered,
            ids: order,
            ranks,
            nodes,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Exact `m` nearest rows to `query`.
    pub fn query(&self, query: &[f64], m: usize) -> Result<NeighbourSet> {
        if m > self.len() {
            return Err(Error::Size(format!(
                "requested {m} neighbours from {} points",
                self.len()
            )));
        }
        self.query_ranked(query, m, usize::MAX)
    }

    /// Up to `m` nearest rows among those with rank `< rank_limit`.
    pub fn query_ranked(&self, query: &[f64], m: usize, rank_limit: usize) -> Result<NeighbourSet> {
        if query.len() != self.dim {
            return Err(Error::Shape {
                expected: self.dim,
                got: query.len(),
            });
        }
        if m == 0 {
            return Err(Error::Size(
                "number of neighbours must be at least 1".into(),
            ));
        }
        let mut heap = BinaryHeap::with_capacity(m + 1);
        self.search(0, query, m, rank_limit, &mut heap);
        let sorted = heap.into_sorted_vec();
        Ok(NeighbourSet {
            indices: sorted.iter().map(|c| c.id).collect(),
            distances: sorted.iter().map(|c| c.dist2.sqrt()).collect(),
        })
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        m: usize,
        rank_limit: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if self.nodes[node].min_rank() >= rank_limit {
            return;
        }
        match self.nodes[node] {
            Node::Leaf { start, end, .. } => {
                for slot in start..end {
                    if self.ranks[slot] >= rank_limit {
                        continue;
                    }
                    let p = &self.points[slot * self.dim..(slot + 1) * self.dim];
                    let cand = Candidate {
                        dist2: squared_distance(p, query),
                        id: self.ids[slot],
                    };
                    if heap.len() < m {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
                ..
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, query, m, rank_limit, heap);
                let worst = if heap.len() < m {
                    f64::INFINITY
                } else {
                    heap.peek().expect("heap is full").dist2
                };
                if diff * diff <= worst {
                    self.search(far, query, m, rank_limit, heap);
                }
            }
        }
    }
}

fn build_node(
    points: &[f64],
    dim: usize,
    ranks: &[usize],
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let min_rank = order.iter().map(|&i| ranks[i]).min().unwrap_or(usize::MAX);
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
            min_rank,
        });
        return id;
    }
    let coord = |i: usize, k: usize| points[i * dim + k];
    let mut split_dim = 0;
    let mut widest = -1.0;
    for k in 0..dim {
        let (lo, hi) = order
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                (lo.min(coord(i, k)), hi.max(coord(i, k)))
            });
        if hi - lo > widest {
            widest = hi - lo;
            split_dim = k;
        }
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        coord(a, split_dim)
            .total_cmp(&coord(b, split_dim))
            .then(a.cmp(&b))
    });
    let value = coord(order[mid], split_dim);
    nodes.push(Node::Leaf {
        start: 0,
        end: 0,
        min_rank,
    });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, dim, ranks, lo, offset, nodes);
    let right = build_node(points, dim, ranks, hi, offset + mid, nodes);
    nodes[id] = Node::Split {
        dim: split_dim,
        value,
        left,
        right,
        min_rank,
    };
    id
}

/// Exhaustive ranking of dataset rows by an arbitrary dissimilarity, for
/// kernels whose metric does not follow Euclidean order.
pub fn rank_by<F>(data: &Dataset, query: &[f64], m: usize, dissimilarity: F) -> Result<NeighbourSet>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if m == 0 || m > data.len() {
        return Err(Error::Size(format!(
            "requested {m} neighbours from {} points",
            data.len()
        )));
    }
    if query.len() != data.dim() {
        return Err(Error::Shape {
            expected: data.dim(),
            got: query.len(),
        });
    }
    let mut scored: Vec<(f64, usize)> = (0..data.len())
        .map(|i| (dissimilarity(data.row(i), query), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(m);
    Ok(NeighbourSet {
        indices: scored.iter().map(|s| s.1).collect(),
        distances: scored
            .iter()
            .map(|s| squared_distance(data.row(s.1), query).sqrt())
            .collect(),
    })
}
