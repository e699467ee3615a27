//! Communication structure of the leader-following network.
//!
//! A weighted follower graph plus leader pinning gains. From these we build
//! the Laplacian `L`, the pinning matrix `P = diag(a_10..a_N0)` and
//! `H = L + P`, and check that the augmented graph has a directed spanning
//! tree rooted at the leader.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StcError};

/// Weighted follower graph with leader pinning.
///
/// `adjacency[(i, j)] = a_ij > 0` means follower `i` receives information
/// from follower `j`; `pinning[i] = a_i0 > 0` means follower `i` hears the
/// leader directly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    pub n_followers: usize,
    pub adjacency: DMatrix<f64>,
    pub pinning: DVector<f64>,
}

impl Topology {
    pub fn new(adjacency: DMatrix<f64>, pinning: DVector<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(StcError::InvalidTopology(format!(
                "adjacency must be square, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if pinning.len() != n {
            return Err(StcError::InvalidTopology(format!(
                "pinning length {} does not match {} followers",
                pinning.len(),
                n
            )));
        }
        for i in 0..n {
            if adjacency[(i, i)] != 0.0 {
                return Err(StcError::InvalidTopology(format!(
                    "nonzero diagonal a_{i}{i} = {}",
                    adjacency[(i, i)]
                )));
            }
            for j in 0..n {
                if adjacency[(i, j)] < 0.0 {
                    return Err(StcError::InvalidTopology(format!(
                        "negative weight a_{i}{j} = {}",
                        adjacency[(i, j)]
                    )));
                }
            }
            if pinning[i] < 0.0 {
                return Err(StcError::InvalidTopology(format!(
                    "negative pinning gain a_{}0 = {}",
                    i,
                    pinning[i]
                )));
            }
        }
        Ok(Self { n_followers: n, adjacency, pinning })
    }

    /// Unit-weight ring over `n` followers with a single pinned follower.
    pub fn ring_with_pinned(n: usize) -> Self {
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let j = (i + 1) % n;
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        let mut pin = DVector::zeros(n);
        pin[0] = 1.0;
        Self::new(a, pin).expect("ring topology is valid")
    }

    /// The follower subgraph is undirected iff the adjacency is symmetric.
    pub fn is_undirected(&self) -> bool {
        let n = self.n_followers;
        (0..n).all(|i| (0..n).all(|j| self.adjacency[(i, j)] == self.adjacency[(j, i)]))
    }
}

/// Laplacian, pinning diagonal and their sum for a given topology.
#[derive(Debug, Clone)]
pub struct GraphMatrices {
    pub laplacian: DMatrix<f64>,
    pub pinning_diag: DMatrix<f64>,
    /// `H = L + P`
    pub h: DMatrix<f64>,
}

/// Build `L`, `P` and `H = L + P` from the topology.
///
/// `l_ii = sum_j a_ij`, `l_ij = -a_ij` for `i != j`.
pub fn build_graph_matrices(topo: &Topology) -> GraphMatrices {
    let n = topo.n_followers;
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            if i != j {
                l[(i, j)] = -topo.adjacency[(i, j)];
                degree += topo.adjacency[(i, j)];
            }
        }
        l[(i, i)] = degree;
    }
    let p = DMatrix::from_diagonal(&topo.pinning);
    let h = &l + &p;
    GraphMatrices { laplacian: l, pinning_diag: p, h }
}

/// Outcome of the Assumption-1 check (directed spanning tree from the leader).
#[derive(Debug, Clone)]
pub struct Assumption1Report {
    /// Every follower reachable from the leader in the augmented digraph.
    pub has_spanning_tree: bool,
    pub undirected: bool,
    /// Smallest eigenvalue of `H`, reported when the subgraph is undirected.
    pub h_min_eig: Option<f64>,
    pub satisfied: bool,
    pub diagnostics: String,
}

/// Check Assumption 1: the augmented graph contains a directed spanning tree
/// with the leader as root. When the follower subgraph is undirected and the
/// augmented graph is connected, also report `min eig(H)` (positive by the
/// symmetric-positive-definite lemma).
pub fn validate_assumption1(topo: &Topology) -> Assumption1Report {
    let n = topo.n_followers;
    // Reachability from the leader: leader -> i when a_i0 > 0,
    // j -> i when a_ij > 0 (i hears j).
    let mut reached = vec![false; n];
    let mut queue: Vec<usize> = Vec::new();
    for i in 0..n {
        if topo.pinning[i] > 0.0 {
            reached[i] = true;
            queue.push(i);
        }
    }
    while let Some(j) = queue.pop() {
        for i in 0..n {
            if !reached[i] && topo.adjacency[(i, j)] > 0.0 {
                reached[i] = true;
                queue.push(i);
            }
        }
    }
    let has_spanning_tree = reached.iter().all(|&r| r);
    let undirected = topo.is_undirected();

    let h_min_eig = if undirected && has_spanning_tree {
        let gm = build_graph_matrices(topo);
        let eig = gm.h.symmetric_eigenvalues();
        Some(eig.iter().cloned().fold(f64::INFINITY, f64::min))
    } else {
        None
    };

    let satisfied = has_spanning_tree;
    let diagnostics = if !has_spanning_tree {
        let unreachable: Vec<usize> =
            (0..n).filter(|&i| !reached[i]).map(|i| i + 1).collect();
        format!("followers {unreachable:?} unreachable from the leader")
    } else if let Some(me) = h_min_eig {
        format!("spanning tree found; undirected subgraph, min eig(H) = {me:.6e}")
    } else {
        "spanning tree found (directed subgraph, no eigenvalue check)".to_string()
    };

    Assumption1Report { has_spanning_tree, undirected, h_min_eig, satisfied, diagnostics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn two_follower_chain() -> Topology {
        Topology::new(
            dmatrix![0.0, 1.0; 1.0, 0.0],
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn chain_graph_matrices() {
        let gm = build_graph_matrices(&two_follower_chain());
        assert_eq!(gm.laplacian, dmatrix![1.0, -1.0; -1.0, 1.0]);
        assert_eq!(gm.pinning_diag, dmatrix![1.0, 0.0; 0.0, 0.0]);
        assert_eq!(gm.h, dmatrix![2.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn empty_graph_is_zero() {
        let topo =
            Topology::new(DMatrix::zeros(3, 3), DVector::zeros(3)).unwrap();
        let gm = build_graph_matrices(&topo);
        assert_eq!(gm.laplacian, DMatrix::zeros(3, 3));
        assert_eq!(gm.h, DMatrix::zeros(3, 3));
    }

    #[test]
    fn star_graph_matches_degree_minus_adjacency() {
        // 6 followers, all linked to follower 1 with unit weights.
        let n = 6;
        let mut a = DMatrix::zeros(n, n);
        for i in 1..n {
            a[(0, i)] = 1.0;
            a[(i, 0)] = 1.0;
        }
        let mut pin = DVector::zeros(n);
        pin[0] = 1.0;
        let topo = Topology::new(a.clone(), pin).unwrap();
        let gm = build_graph_matrices(&topo);
        // Independent per-entry construction: L = D - A.
        for i in 0..n {
            for j in 0..n {
                let expect = if i == j {
                    (0..n).map(|k| a[(i, k)]).sum::<f64>()
                } else {
                    -a[(i, j)]
                };
                assert_eq!(gm.laplacian[(i, j)], expect, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn invalid_topologies_rejected() {
        let err = Topology::new(
            dmatrix![0.0, -1.0; 1.0, 0.0],
            DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, StcError::InvalidTopology(_)));

        let err = Topology::new(
            dmatrix![1.0, 0.0; 0.0, 0.0],
            DVector::zeros(2),
        )
        .unwrap_err();
        assert!(matches!(err, StcError::InvalidTopology(_)));
    }

    #[test]
    fn assumption1_chain_holds_with_min_eig() {
        let report = validate_assumption1(&two_follower_chain());
        assert!(report.satisfied);
        let expect = (3.0 - 5.0_f64.sqrt()) / 2.0;
        assert!((report.h_min_eig.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn assumption1_fails_without_pinning() {
        let topo = Topology::new(
            dmatrix![0.0, 1.0; 1.0, 0.0],
            DVector::zeros(2),
        )
        .unwrap();
        let report = validate_assumption1(&topo);
        assert!(!report.satisfied);
        assert!(report.diagnostics.contains("unreachable"));
    }

    #[test]
    fn assumption1_six_follower_connected() {
        // Connected undirected graph, one pinned node; BFS oracle by hand:
        // ring 1-2-3-4-5-6-1, pin at follower 1 reaches everyone.
        let topo = Topology::ring_with_pinned(6);
        let report = validate_assumption1(&topo);
        assert!(report.satisfied);
        assert!(report.undirected);
        assert!(report.h_min_eig.unwrap() > 0.0);
    }

    #[test]
    fn laplacian_row_sums_and_offdiagonal() {
        let topo = Topology::ring_with_pinned(6);
        let gm = build_graph_matrices(&topo);
        let ones = DVector::from_element(6, 1.0);
        let rowsum = &gm.laplacian * ones;
        assert!(rowsum.amax() == 0.0);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    assert_eq!(gm.laplacian[(i, j)], -topo.adjacency[(i, j)]);
                }
            }
        }
    }
}
