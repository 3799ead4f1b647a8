use approx::assert_relative_eq;
use ggqmom::error::Error;
use ggqmom::lagrange::{build_tableau, check_nodes};
use proptest::prelude::*;

#[test]
fn tableau_on_three_hand_nodes() {
    // nodes {-1, 0, 2}: base polynomial derivative R'(x_j) = prod_{k!=j}(x_j - x_k)
    let t = build_tableau(&[-1.0, 0.0, 2.0], 0.0).unwrap();
    assert_relative_eq!(t.base_poly_deriv[0], 3.0, epsilon = 1e-14);
    assert_relative_eq!(t.base_poly_deriv[1], -2.0, epsilon = 1e-14);
    assert_relative_eq!(t.base_poly_deriv[2], 6.0, epsilon = 1e-14);

    // diagonal: l_i'(x_i) = sum_{k!=i} 1/(x_i - x_k)
    assert_relative_eq!(t.first_deriv[0][0], -4.0 / 3.0, epsilon = 1e-14);
    assert_relative_eq!(t.first_deriv[1][1], 0.5, epsilon = 1e-14);
    assert_relative_eq!(t.first_deriv[2][2], 5.0 / 6.0, epsilon = 1e-14);

    // off-diagonal against the direct formula l_0'(x_1) for l_0 = x(x-2)/3
    assert_relative_eq!(t.first_deriv[0][1], -2.0 / 3.0, epsilon = 1e-14);

    // second derivative diagonal: l_0'' = 2/3 for the same basis function
    assert_relative_eq!(t.second_deriv_diag[0], 2.0 / 3.0, epsilon = 1e-14);
}

#[test]
fn single_node_tableau_is_degenerate_zero() {
    let t = build_tableau(&[0.7], 0.0).unwrap();
    assert_eq!(t.first_deriv, vec![vec![0.0]]);
    assert_eq!(t.second_deriv_diag, vec![0.0]);
    assert_eq!(t.base_poly_deriv, vec![1.0]);
}

#[test]
fn ordering_and_collision_errors() {
    assert!(matches!(
        check_nodes(&[0.0, -1.0], 0.0),
        Err(Error::NodesNotOrdered)
    ));
    assert!(matches!(
        check_nodes(&[0.0, 1e-15], 1e-9),
        Err(Error::NodeCollision)
    ));
    assert!(check_nodes(&[0.0, 1.0], 1e-9).is_ok());
}

fn well_separated_nodes() -> impl Strategy<Value = Vec<f64>> {
    (2usize..6, -2.0f64..2.0).prop_flat_map(|(n, start)| {
        prop::collection::vec(0.3f64..1.5, n - 1).prop_map(move |gaps| {
            let mut nodes = vec![start];
            for g in gaps {
                nodes.push(nodes.last().unwrap() + g);
            }
            nodes
        })
    })
}

proptest! {
    // sum_i l_i = 1, so every column of the derivative table sums to zero
    #[test]
    fn columns_sum_to_zero(nodes in well_separated_nodes()) {
        let n = nodes.len();
        let t = build_tableau(&nodes, 0.0).unwrap();
        for j in 0..n {
            let col: f64 = (0..n).map(|i| t.first_deriv[i][j]).sum();
            prop_assert!(col.abs() < 1e-10, "column {} sums to {}", j, col);
        }
    }

    // derivative entries transform as 1/alpha under x -> alpha x + c
    #[test]
    fn affine_covariance(
        nodes in well_separated_nodes(),
        alpha in 0.5f64..3.0,
        shift in -2.0f64..2.0,
    ) {
        let mapped: Vec<f64> = nodes.iter().map(|x| alpha * x + shift).collect();
        let t0 = build_tableau(&nodes, 0.0).unwrap();
        let t1 = build_tableau(&mapped, 0.0).unwrap();
        let n = nodes.len();
        for i in 0..n {
            for j in 0..n {
                let want = t0.first_deriv[i][j] / alpha;
                let got = t1.first_deriv[i][j];
                prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
            let want2 = t0.second_deriv_diag[i] / (alpha * alpha);
            prop_assert!((t1.second_deriv_diag[i] - want2).abs() < 1e-9 * (1.0 + want2.abs()));
        }
    }

    // interpolation of a polynomial of degree < n differentiates exactly
    #[test]
    fn differentiates_low_degree_exactly(nodes in well_separated_nodes()) {
        let n = nodes.len();
        let t = build_tableau(&nodes, 0.0).unwrap();
        // f(x) = x^(n-1), f'(x) = (n-1) x^(n-2)
        let f: Vec<f64> = nodes.iter().map(|x| x.powi(n as i32 - 1)).collect();
        for j in 0..n {
            let d: f64 = (0..n).map(|i| t.first_deriv[i][j] * f[i]).sum();
            let want = (n as f64 - 1.0) * nodes[j].powi(n as i32 - 2);
            prop_assert!((d - want).abs() < 1e-8 * (1.0 + want.abs()));
        }
    }
}
