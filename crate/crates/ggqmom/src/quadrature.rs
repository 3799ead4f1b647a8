//! Discrete-measure approximant: node/weight container, moment extraction,
//! and Gauss-Christoffel construction from raw moments via the Hankel route.

use crate::error::{Error, Result};
use crate::lagrange::check_nodes;
use crate::polynomial::hermite;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub const WEIGHT_FLOOR: f64 = 1e-14;
const SUM_TOL: f64 = 1e-12;

/// Probability measure supported on finitely many strictly ordered points.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MeasureRaw", into = "MeasureRaw")]
pub struct QuadratureMeasure {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeasureRaw {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl From<QuadratureMeasure> for MeasureRaw {
    fn from(m: QuadratureMeasure) -> Self {
        MeasureRaw {
            nodes: m.nodes,
            weights: m.weights,
        }
    }
}

impl TryFrom<MeasureRaw> for QuadratureMeasure {
    type Error = Error;
    fn try_from(r: MeasureRaw) -> Result<Self> {
        QuadratureMeasure::new(r.nodes, r.weights)
    }
}

impl QuadratureMeasure {
    /// Validating constructor: strict node order, weights above the floor,
    /// total mass within 1e-12 of one.
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::InvalidConfig(
                "nodes and weights must be nonempty and of equal length".into(),
            ));
        }
        check_nodes(&nodes, 0.0)?;
        if weights.iter().any(|&w| w < WEIGHT_FLOOR) {
            return Err(Error::WeightUnderflow);
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidConfig(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(QuadratureMeasure { nodes, weights })
    }

    pub fn point_mass(x: f64) -> Self {
        QuadratureMeasure {
            nodes: vec![x],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    pub fn moment(&self, k: usize) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &b)| b * x.powi(k as i32))
            .sum()
    }
}

/// Raw moments m_0..m_K in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentVector(pub Vec<f64>);

impl MomentVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// m_k = sum_j beta_j x_j^k for 0 <= k <= K.
pub fn moments_of(mu: &QuadratureMeasure, k_max: usize) -> MomentVector {
    let mut m = vec![0.0; k_max + 1];
    for (&x, &b) in mu.nodes().iter().zip(mu.weights()) {
        let mut p = 1.0;
        for mk in m.iter_mut() {
            *mk += b * p;
            p *= x;
        }
    }
    MomentVector(m)
}

/// The unique N-point measure matching moments m_0..m_{2N-1}.
///
/// Recurrence coefficients come from the Cholesky factor of the Hankel matrix
/// (rectangular N x (N+1) layout), nodes from the symmetric tridiagonal Jacobi
/// matrix eigenvalues, weights from squared first eigenvector components. The
/// output is checked against the input moments to 1e-8 relative.
pub fn gauss_christoffel(m: &MomentVector, n: usize) -> Result<QuadratureMeasure> {
    if n == 0 || m.0.len() < 2 * n {
        return Err(Error::InvalidConfig(format!(
            "need 2N moments for an N-point measure (N = {n}, got {})",
            m.0.len()
        )));
    }
    if (m.0[0] - 1.0).abs() > SUM_TOL {
        return Err(Error::InvalidConfig(format!(
            "m_0 = {}, expected 1 for a probability measure",
            m.0[0]
        )));
    }
    let m0 = m.0[0];
    // Hankel H[i][j] = m_{i+j}, i < N, j < N+1.
    let hankel = DMatrix::from_fn(n, n + 1, |i, j| m.0[i + j]);
    let square = hankel.view((0, 0), (n, n)).into_owned();
    let chol = square.cholesky().ok_or(Error::MomentsOutsideCone)?;
    // R = L^{-1} H, upper triangular in the square part, one extra column.
    let r = chol
        .l()
        .solve_lower_triangular(&hankel)
        .ok_or(Error::MomentsOutsideCone)?;
    let mut diag = vec![0.0; n];
    let mut offdiag = vec![0.0; n.saturating_sub(1)];
    diag[0] = r[(0, 1)] / r[(0, 0)];
    for j in 1..n {
        diag[j] = r[(j, j + 1)] / r[(j, j)] - r[(j - 1, j)] / r[(j - 1, j - 1)];
        offdiag[j - 1] = r[(j, j)] / r[(j - 1, j - 1)];
    }
    let (nodes, weights) = jacobi_rule(&diag, &offdiag, m0)?;
    let out = QuadratureMeasure::new(nodes, weights).map_err(|_| Error::IllConditionedMoments)?;
    // round-trip moment check
    let back = moments_of(&out, 2 * n - 1);
    let scale = m.0.iter().fold(1.0_f64, |s, &v| s.max(v.abs()));
    for (a, b) in back.0.iter().zip(&m.0) {
        if (a - b).abs() > 1e-8 * scale {
            return Err(Error::IllConditionedMoments);
        }
    }
    Ok(out)
}

/// Nodes and weights of the quadrature rule attached to a symmetric
/// tridiagonal Jacobi matrix with the given diagonal and off-diagonal.
fn jacobi_rule(diag: &[f64], offdiag: &[f64], total_mass: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = diag.len();
    let jm = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if j + 1 == i || i + 1 == j {
            offdiag[i.min(j)]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jm);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], total_mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(pairs.into_iter().unzip())
}

/// N-point rule with Gaussian nodes/weights: nodes = mean + sqrt(variance) *
/// (roots of He_N), weights the probabilist Gauss-Hermite weights (sum 1).
pub fn gauss_hermite_init(n: usize, mean: f64, variance: f64) -> Result<QuadratureMeasure> {
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one node".into()));
    }
    if !(variance > 0.0) {
        return Err(Error::InvalidConfig("variance must be positive".into()));
    }
    // Jacobi matrix of the standard Gaussian: zero diagonal, offdiag sqrt(k).
    let diag = vec![0.0; n];
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let (mut nodes, weights) = jacobi_rule(&diag, &offdiag, 1.0)?;
    let s = variance.sqrt();
    for x in nodes.iter_mut() {
        *x = mean + s * *x;
    }
    // exact-zero center node for odd N (eigensolver leaves ~1e-17 dust)
    if n % 2 == 1 {
        let mid = n / 2;
        if nodes[mid].abs() < 1e-12 * (1.0 + mean.abs()) {
            nodes[mid] = mean;
        }
    }
    QuadratureMeasure::new(nodes, weights)
}

/// Roots of He_N without the measure wrapper (seeding helper).
pub fn hermite_roots(n: usize) -> Vec<f64> {
    hermite(n)
        .real_roots(1e-8)
        .expect("He_n is nonconstant for n >= 1")
}
