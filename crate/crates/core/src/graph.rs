//! Weighted undirected communication graphs and their Laplacians.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

/// Eigenvalues below this are treated as zero when deciding connectivity.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("graph needs at least one node")]
    Empty,
    #[error("adjacency is not symmetric at ({i}, {j})")]
    Asymmetric { i: usize, j: usize },
    #[error("adjacency has a negative or non-finite weight at ({i}, {j})")]
    InvalidWeight { i: usize, j: usize },
    #[error("self edge at node {0}")]
    SelfEdge(usize),
    #[error("expected a stacked vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("graph is disconnected (lambda_2 = {lambda2:e})")]
    Disconnected { lambda2: f64 },
    #[error("eigensolver produced a non-finite spectrum")]
    EigenFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: DMatrix<f64>,
}

impl Topology {
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self, GraphError> {
        let (rows, cols) = adjacency.shape();
        if rows != cols {
            return Err(GraphError::NotSquare { rows, cols });
        }
        if rows == 0 {
            return Err(GraphError::Empty);
        }
        for i in 0..rows {
            if adjacency[(i, i)] != 0.0 {
                return Err(GraphError::SelfEdge(i));
            }
            for j in 0..rows {
                let a = adjacency[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(GraphError::InvalidWeight { i, j });
                }
                if a != adjacency[(j, i)] {
                    return Err(GraphError::Asymmetric { i, j });
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Unit-weight cycle 0-1-...-(n-1)-0. Two nodes give a single edge.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let mut a = DMatrix::zeros(n, n);
        if n >= 2 {
            for i in 0..n {
                let j = (i + 1) % n;
                a[(i, j)] = 1.0;
                a[(j, i)] = 1.0;
            }
        }
        Self::new(a)
    }

    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        Self::new(a)
    }

    /// Builds from a row-major list of `n * n` weights.
    pub fn from_row_major(n: usize, weights: &[f64]) -> Result<Self, GraphError> {
        if weights.len() != n * n {
            return Err(GraphError::DimensionMismatch {
                expected: n * n,
                got: weights.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(n, n, weights))
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// Weighted degree of node `i`.
    pub fn degree(&self, i: usize) -> f64 {
        self.adjacency.row(i).sum()
    }

    pub fn max_degree(&self) -> f64 {
        (0..self.node_count())
            .map(|i| self.degree(i))
            .fold(0.0, f64::max)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian(self)
    }

    /// `(L ⊗ I_n) y` where `y` stacks one `n`-vector per node.
    pub fn relative_output(&self, y: &DVector<f64>, n: usize) -> Result<DVector<f64>, GraphError> {
        relative_output(self, y, n)
    }
}

pub fn laplacian(top: &Topology) -> DMatrix<f64> {
    let a = top.adjacency();
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).sum();
    }
    l
}

/// Ascending Laplacian eigenvalues, with the eigenvectors in matching column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues.last().expect("spectrum is never empty")
    }

    pub fn is_connected(&self) -> bool {
        self.eigenvalues.len() == 1 || self.lambda2() > CONNECTIVITY_TOL
    }

    /// Errors unless the graph is connected.
    pub fn require_connected(&self) -> Result<(), GraphError> {
        if self.is_connected() {
            Ok(())
        } else {
            Err(GraphError::Disconnected {
                lambda2: self.lambda2(),
            })
        }
    }

    /// Moore-Penrose pseudo-inverse of the Laplacian built from its eigenpairs.
    pub fn laplacian_pinv(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let mut p = DMatrix::zeros(n, n);
        for (k, &lam) in self.eigenvalues.iter().enumerate() {
            if lam > CONNECTIVITY_TOL {
                let v = self.eigenvectors.column(k);
                p += (v * v.transpose()) / lam;
            }
        }
        p
    }
}

pub fn spectrum(l: &DMatrix<f64>) -> Result<Spectrum, GraphError> {
    let eig = SymmetricEigen::new(l.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(GraphError::EigenFailure);
    }
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(l.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

pub fn relative_output(top: &Topology, y: &DVector<f64>, n: usize) -> Result<DVector<f64>, GraphError> {
    let nodes = top.node_count();
    if y.len() != nodes * n {
        return Err(GraphError::DimensionMismatch {
            expected: nodes * n,
            got: y.len(),
        });
    }
    let mut out = DVector::zeros(y.len());
    for i in 0..nodes {
        for j in 0..nodes {
            let a = top.weight(i, j);
            if a == 0.0 {
                continue;
            }
            for d in 0..n {
                out[i * n + d] += a * (y[i * n + d] - y[j * n + d]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_node_laplacian() {
        let t = Topology::ring(2).unwrap();
        let l = t.laplacian();
        assert_eq!(l, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        let s = spectrum(&l).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvalues[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ring_laplacian_is_circulant() {
        let l = Topology::ring(6).unwrap().laplacian();
        for i in 0..6 {
            assert_eq!(l[(i, i)], 2.0);
            assert_eq!(l[(i, (i + 1) % 6)], -1.0);
            assert_eq!(l[(i, (i + 5) % 6)], -1.0);
            assert_eq!(l.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn ring_spectrum() {
        let s = spectrum(&Topology::ring(6).unwrap().laplacian()).unwrap();
        let expected = [0.0, 1.0, 1.0, 3.0, 3.0, 4.0];
        for (a, b) in s.eigenvalues.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
        assert!(s.is_connected());
    }

    #[test]
    fn empty_edges_give_zero_laplacian() {
        let t = Topology::new(DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(t.laplacian(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn disconnected_pairs() {
        #[rustfmt::skip]
        let a = [
            0.0, 1.0, 0.0, 0.0,
            1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 1.0, 0.0,
        ];
        let t = Topology::from_row_major(4, &a).unwrap();
        let s = spectrum(&t.laplacian()).unwrap();
        assert_abs_diff_eq!(s.lambda2(), 0.0, epsilon = 1e-12);
        assert!(s.require_connected().is_err());
    }

    #[test]
    fn rejects_bad_adjacency() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(matches!(Topology::new(asym), Err(GraphError::Asymmetric { .. })));
        let neg = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(matches!(Topology::new(neg), Err(GraphError::InvalidWeight { .. })));
        let selfe = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(Topology::new(selfe), Err(GraphError::SelfEdge(0))));
    }

    #[test]
    fn relative_output_examples() {
        let t = Topology::ring(2).unwrap();
        let r = t.relative_output(&DVector::from_vec(vec![1.0, 0.0]), 1).unwrap();
        assert_eq!(r.as_slice(), &[1.0, -1.0]);

        let ring = Topology::ring(6).unwrap();
        let consensus = DVector::from_fn(12, |k, _| if k % 2 == 0 { 0.3 } else { -1.7 });
        assert_eq!(ring.relative_output(&consensus, 2).unwrap().norm(), 0.0);

        assert!(matches!(
            ring.relative_output(&DVector::zeros(5), 2),
            Err(GraphError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn pseudo_inverse_identities() {
        let t = Topology::ring(6).unwrap();
        let l = t.laplacian();
        let p = spectrum(&l).unwrap().laplacian_pinv();
        let lpl = &l * &p * &l;
        assert!((lpl - &l).norm() < 1e-12);
        let ones = DVector::from_element(6, 1.0);
        assert!((&p * ones).norm() < 1e-12);
    }
}
