//! Lagrange-basis derivative data at a node set: the coupling coefficients of
//! the node/weight evolution equations.
//!
//! For nodes x_1 < ... < x_N with base polynomial R(x) = prod_k (x - x_k):
//!   l'_ii = sum_{k != i} 1/(x_i - x_k)
//!   l'_ij = (R'_j / R'_i) / (x_j - x_i)          (i != j)
//!   l''_ii = (sum_{k != i} 1/(x_i - x_k))^2 - sum_{k != i} 1/(x_i - x_k)^2
//! with R'_j = prod_{k != j} (x_j - x_k). N = 1 gives all zeros (empty sums).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LagrangeTableau {
    /// Entry (i, j) = l'_i(x_j), row-major N x N.
    pub first_deriv: Vec<Vec<f64>>,
    /// Entry i = l''_i(x_i).
    pub second_deriv_diag: Vec<f64>,
    /// Entry j = R'(x_j).
    pub base_poly_deriv: Vec<f64>,
}

/// Validate strict ordering with a minimum gap; `collision_threshold <= 0`
/// disables the gap check (ordering is still enforced).
pub fn check_nodes(nodes: &[f64], collision_threshold: f64) -> Result<()> {
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::NodesNotOrdered);
        }
        if w[1] - w[0] <= collision_threshold {
            return Err(Error::NodeCollision);
        }
    }
    Ok(())
}

pub fn build_tableau(nodes: &[f64], collision_threshold: f64) -> Result<LagrangeTableau> {
    check_nodes(nodes, collision_threshold)?;
    let n = nodes.len();
    let mut base_poly_deriv = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                base_poly_deriv[j] *= nodes[j] - nodes[k];
            }
        }
    }
    let mut first_deriv = vec![vec![0.0; n]; n];
    let mut second_deriv_diag = vec![0.0; n];
    for i in 0..n {
        let mut inv_sum = 0.0;
        let mut inv_sq_sum = 0.0;
        for k in 0..n {
            if k != i {
                let d = nodes[i] - nodes[k];
                inv_sum += 1.0 / d;
                inv_sq_sum += 1.0 / (d * d);
            }
        }
        first_deriv[i][i] = inv_sum;
        second_deriv_diag[i] = inv_sum * inv_sum - inv_sq_sum;
        for j in 0..n {
            if j != i {
                first_deriv[i][j] =
                    (base_poly_deriv[j] / base_poly_deriv[i]) / (nodes[j] - nodes[i]);
            }
        }
    }
    Ok(LagrangeTableau {
        first_deriv,
        second_deriv_diag,
        base_poly_deriv,
    })
}
