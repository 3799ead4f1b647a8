use approx::assert_relative_eq;
use ggqmom::error::Error;
use ggqmom::model::{Model, MvsdeModel, SdeModel};
use ggqmom::polynomial::Polynomial;
use ggqmom::quadrature::{gauss_hermite_init, hermite_roots};
use ggqmom::stationary::{
    asymmetric_stationary, hermite_seed, instability_threshold, scale_solution, solve_stationary,
    stability_probe, symmetric_stationary, ProbeVerdict, DEFAULT_STATIONARY_TOL,
};

fn ou(alpha: f64, sigma: f64) -> Model {
    Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.0, -alpha]),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: sigma,
    })
}

fn quartic_sde(sigma: f64) -> Model {
    Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.0, 0.0, 0.0, -1.0]),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: sigma,
    })
}

fn dawson_shiino(sigma: f64) -> MvsdeModel {
    MvsdeModel {
        effective_potential_deriv: Polynomial::new(vec![0.0, 0.0, 0.0, 1.0]),
        interaction_deriv: Polynomial::new(vec![0.0, 1.0]),
        theta: 1.0,
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: sigma,
    }
}

// --- direct solve -----------------------------------------------------------

#[test]
fn ou_stationary_is_scaled_hermite_rule() {
    for n in [2usize, 4] {
        let model = ou(1.0, 1.0);
        let seed = hermite_seed(&model, 1.0, n).unwrap();
        let sol = solve_stationary(&model, &seed, DEFAULT_STATIONARY_TOL).unwrap();
        assert!(sol.converged, "N={n} residual {}", sol.residual_norm);
        let scale = 1.0 / 2.0f64.sqrt();
        let want = hermite_roots(n);
        let gh = gauss_hermite_init(n, 0.0, 0.5).unwrap();
        for i in 0..n {
            assert!(
                (sol.measure.nodes()[i] - want[i] * scale).abs() < 1e-8,
                "N={n} node {i}"
            );
            assert!((sol.measure.weights()[i] - gh.weights()[i]).abs() < 1e-8);
        }
    }
}

#[test]
fn quartic_two_point_rule() {
    // nodes +-(1/2)^(1/4), weights 1/2; m2 = 1/sqrt(2)
    let model = quartic_sde(1.0);
    let sol = symmetric_stationary(&model, 2, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(sol.converged);
    let c = 0.5f64.powf(0.25);
    assert_relative_eq!(sol.measure.nodes()[1], c, epsilon = 1e-9);
    assert_relative_eq!(sol.measure.weights()[0], 0.5, epsilon = 1e-10);
    assert_relative_eq!(sol.measure.moment(2), 1.0 / 2.0f64.sqrt(), epsilon = 1e-9);
}

#[test]
fn quartic_three_point_rule() {
    // outer nodes +-(3/2)^(1/4) with weight 1/6 each
    let model = quartic_sde(1.0);
    let sol = symmetric_stationary(&model, 3, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(sol.converged);
    let x = 1.5f64.powf(0.25);
    assert_relative_eq!(sol.measure.nodes()[2], x, epsilon = 1e-9);
    assert!(sol.measure.nodes()[1].abs() < 1e-12);
    assert_relative_eq!(sol.measure.weights()[2], 1.0 / 6.0, epsilon = 1e-9);
    assert_relative_eq!(sol.measure.weights()[1], 2.0 / 3.0, epsilon = 1e-9);
}

#[test]
fn quartic_four_point_second_moment_is_half() {
    let model = quartic_sde(1.0);
    let sol = symmetric_stationary(&model, 4, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(sol.converged);
    assert_relative_eq!(sol.measure.moment(2), 0.5, epsilon = 1e-9);
}

#[test]
fn quartic_eight_point_profile() {
    let model = quartic_sde(1.0);
    let sol = symmetric_stationary(&model, 8, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(sol.converged);
    assert_relative_eq!(sol.measure.moment(2), 0.47814944, epsilon = 1e-6);
    let want = [0.32185, 0.88877, 1.35456, 1.77822];
    for (i, w) in want.iter().enumerate() {
        assert!(
            (sol.measure.nodes()[4 + i] - w).abs() < 1e-4,
            "node {} = {}",
            4 + i,
            sol.measure.nodes()[4 + i]
        );
    }
}

#[test]
fn symmetric_solution_is_exactly_mirrored() {
    let model = quartic_sde(0.7);
    for n in [2usize, 3, 4, 5, 8] {
        let sol = symmetric_stationary(&model, n, 0.7, DEFAULT_STATIONARY_TOL).unwrap();
        assert!(sol.converged, "N={n}");
        let x = sol.measure.nodes();
        let w = sol.measure.weights();
        for i in 0..n {
            assert_eq!(x[i], -x[n - 1 - i], "N={n} mirror node {i}");
            assert_eq!(w[i], w[n - 1 - i], "N={n} mirror weight {i}");
        }
    }
}

#[test]
fn symmetric_single_node_is_point_mass_at_origin() {
    let sol = symmetric_stationary(&quartic_sde(0.5), 1, 0.5, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(sol.converged);
    assert_eq!(sol.measure.nodes(), &[0.0]);
    assert_eq!(sol.measure.weights(), &[1.0]);
}

#[test]
fn symmetric_requires_parity() {
    let skew = Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.5, -1.0]), // a(0) != 0
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: 1.0,
    });
    assert!(matches!(
        symmetric_stationary(&skew, 2, 1.0, 1e-10),
        Err(Error::ParityViolated)
    ));
}

#[test]
fn solve_reports_nonconvergence_softly() {
    // impossible tolerance: solver stalls but must not error
    let model = quartic_sde(1.0);
    let seed = gauss_hermite_init(3, 0.0, 0.6).unwrap();
    let sol = solve_stationary(&model, &seed, 1e-30).unwrap();
    assert!(!sol.converged);
    assert!(sol.residual_norm > 0.0);
    assert!(sol.newton_iterations > 0);
}

// --- seeding ----------------------------------------------------------------

#[test]
fn hermite_seed_ou_literal_example() {
    // sigma * sqrt(b^2/|a'|) at sigma = 0.1 spreads He_2 roots to +-0.1
    let model = ou(1.0, 0.1);
    let seed = hermite_seed(&model, 0.1, 2).unwrap();
    assert_relative_eq!(seed.nodes()[0], -0.1, epsilon = 1e-12);
    assert_relative_eq!(seed.nodes()[1], 0.1, epsilon = 1e-12);
    assert_relative_eq!(seed.weights()[0], 0.5, epsilon = 1e-12);
}

#[test]
fn hermite_seed_two_wells() {
    // drift x - x^3: stable roots at +-1, saddle at 0 excluded
    let model = Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.0, 1.0, 0.0, -1.0]),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: 0.2,
    });
    let seed = hermite_seed(&model, 0.2, 2).unwrap();
    assert_eq!(seed.len(), 4);
    // clusters centred near the wells, equal mass each
    assert!((seed.nodes()[0] + seed.nodes()[3]).abs() < 1e-9);
    let left: f64 = seed.weights()[..2].iter().sum();
    assert_relative_eq!(left, 0.5, epsilon = 1e-12);
    // spread = sigma*sqrt(1/|a'(1)|) = 0.2/sqrt(2)
    let spread = 0.2 / 2.0f64.sqrt();
    assert_relative_eq!(
        seed.nodes()[3] - seed.nodes()[2],
        2.0 * spread,
        epsilon = 1e-9
    );
}

#[test]
fn hermite_seed_degenerate_root_uses_reference_profile() {
    // drift -x^3 vanishes to third order at 0: offsets scale as sigma^(1/2)
    let model = quartic_sde(1.0);
    let seed = hermite_seed(&model, 1.0, 2).unwrap();
    let c = 0.5f64.powf(0.25);
    assert_relative_eq!(seed.nodes()[1], c, epsilon = 1e-6);
    assert_relative_eq!(seed.weights()[0], 0.5, epsilon = 1e-8);

    let small = hermite_seed(&model, 1e-4, 2).unwrap();
    assert_relative_eq!(small.nodes()[1], c * 1e-2, epsilon = 1e-8);
}

#[test]
fn no_stable_sites_is_an_error() {
    let repelling = Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.0, 1.0]),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: 1.0,
    });
    assert!(matches!(
        hermite_seed(&repelling, 1.0, 2),
        Err(Error::NoStableClusterSites)
    ));
}

// --- scaling ----------------------------------------------------------------

#[test]
fn scaling_law_is_exact_for_pure_odd_monomial() {
    let model = quartic_sde(1.0);
    let sol = symmetric_stationary(&model, 3, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    for sigma_to in [0.25, 4.0] {
        let scaled = scale_solution(&model, &sol, sigma_to, 2).unwrap();
        assert!(
            scaled.converged,
            "sigma {sigma_to}: {}",
            scaled.residual_norm
        );
        assert!(scaled.residual_norm < 1e-9);
        assert_eq!(scaled.newton_iterations, 0);
        // nodes transform by sigma^(1/2)
        let f = sigma_to.powf(0.5);
        for (xs, x0) in scaled.measure.nodes().iter().zip(sol.measure.nodes()) {
            assert_relative_eq!(*xs, x0 * f, epsilon = 1e-12);
        }
    }
}

#[test]
fn scaling_law_linear_drift_exponent_one() {
    let model = ou(1.0, 1.0);
    let seed = hermite_seed(&model, 1.0, 3).unwrap();
    let sol = solve_stationary(&model, &seed, DEFAULT_STATIONARY_TOL).unwrap();
    let scaled = scale_solution(&model, &sol, 2.0, 1).unwrap();
    assert!(scaled.residual_norm < 1e-9);
    assert_relative_eq!(
        scaled.measure.moment(2),
        4.0 * sol.measure.moment(2),
        epsilon = 1e-9
    );
}

#[test]
fn scaling_law_dawson_shiino_symmetric_branch() {
    let m = dawson_shiino(1.0);
    let model = Model::Mvsde(m);
    let sol = symmetric_stationary(&model, 4, 1.0, DEFAULT_STATIONARY_TOL).unwrap();
    let scaled = scale_solution(&model, &sol, 0.5, 2).unwrap();
    assert!(scaled.residual_norm < 1e-9);
    assert_relative_eq!(
        scaled.measure.moment(2),
        sol.measure.moment(2) * 0.5,
        epsilon = 1e-9
    );
}

#[test]
fn scaling_rejects_inapplicable_forms() {
    // mixed drift is not a pure monomial
    let mixed = Model::Sde(SdeModel {
        drift: Polynomial::new(vec![0.0, -1.0, 0.0, -1.0]),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: 1.0,
    });
    let seed = hermite_seed(&mixed, 1.0, 2).unwrap();
    let sol = solve_stationary(&mixed, &seed, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(matches!(
        scale_solution(&mixed, &sol, 2.0, 2),
        Err(Error::ScalingLawInapplicable)
    ));
    // asymmetric mean-field solution cannot be rescaled
    let ds = Model::Mvsde(dawson_shiino(0.5));
    let upper = asymmetric_stationary(&ds, 4, 0.5, 1.0, 1e-10).unwrap();
    assert!(matches!(
        scale_solution(&ds, &upper, 1.0, 2),
        Err(Error::ScalingLawInapplicable)
    ));
}

// --- probes and thresholds --------------------------------------------------

#[test]
fn probe_flags_symmetric_branch_below_threshold() {
    let m = dawson_shiino(0.5);
    let model = Model::Mvsde(m.clone());
    let sol = symmetric_stationary(&model, 8, 0.5, DEFAULT_STATIONARY_TOL).unwrap();
    let probe = stability_probe(&m, &sol, &vec![1.0; 8]).unwrap();
    assert_eq!(probe.verdict, ProbeVerdict::Unstable);
    assert!(probe.derivative > 0.0);
    // mirrored direction gives the mirrored derivative with the same verdict
    let neg = stability_probe(&m, &sol, &vec![-1.0; 8]).unwrap();
    assert_eq!(neg.verdict, ProbeVerdict::Unstable);
    assert_relative_eq!(neg.derivative, -probe.derivative, epsilon = 1e-12);
}

#[test]
fn probe_clears_upper_branch() {
    let m = dawson_shiino(0.5);
    let model = Model::Mvsde(m.clone());
    let sol = asymmetric_stationary(&model, 8, 0.5, 1.0, 1e-10).unwrap();
    assert!(sol.converged);
    let probe = stability_probe(&m, &sol, &vec![1.0; 8]).unwrap();
    assert_eq!(probe.verdict, ProbeVerdict::IndicativeStable);
    assert!(probe.derivative < -1.0);
}

#[test]
fn probe_rejects_mixed_direction() {
    let m = dawson_shiino(0.5);
    let model = Model::Mvsde(m.clone());
    let sol = symmetric_stationary(&model, 4, 0.5, DEFAULT_STATIONARY_TOL).unwrap();
    assert!(stability_probe(&m, &sol, &[1.0, -1.0, 1.0, 1.0]).is_err());
    assert!(stability_probe(&m, &sol, &[1.0, 0.0, 1.0, 1.0]).is_err());
    assert!(stability_probe(&m, &sol, &[1.0, 1.0]).is_err());
}

#[test]
fn probe_flip_matches_second_moment_threshold() {
    // derivative = 1 - 3 m2(sigma); m2 scales linearly in sigma on this branch
    let flip = 1.0 / (3.0 * 0.47814944);
    for (sigma, want) in [
        (0.68, ProbeVerdict::Unstable),
        (0.70, ProbeVerdict::IndicativeStable),
    ] {
        let m = dawson_shiino(sigma);
        let model = Model::Mvsde(m.clone());
        let sol = symmetric_stationary(&model, 8, sigma, DEFAULT_STATIONARY_TOL).unwrap();
        let probe = stability_probe(&m, &sol, &vec![1.0; 8]).unwrap();
        assert_eq!(probe.verdict, want, "sigma {sigma} vs flip {flip}");
    }
}

#[test]
fn instability_threshold_both_readings() {
    let m = dawson_shiino(1.0);
    let est = instability_threshold(&m, 8).unwrap();
    assert_relative_eq!(est.m2_at_unit_sigma, 0.47814944, epsilon = 1e-5);
    assert_relative_eq!(
        est.primary,
        (3.0 * 0.47814944f64).powf(-0.5),
        epsilon = 1e-4
    );
    assert_relative_eq!(est.alternate, 1.0 / (3.0 * 0.47814944), epsilon = 1e-4);
    assert!(est.primary > 0.83 && est.primary < 0.84);
    assert!(est.alternate > 0.69 && est.alternate < 0.705);
}

#[test]
fn instability_threshold_requires_bistable_form() {
    let mut m = dawson_shiino(1.0);
    m.interaction_deriv = Polynomial::new(vec![0.0, 0.0, 1.0]);
    assert!(instability_threshold(&m, 4).is_err());
    assert!(instability_threshold(&dawson_shiino(1.0), 1).is_err());
}

// --- asymmetric continuation ------------------------------------------------

#[test]
fn upper_branch_mean_at_half_sigma() {
    let model = Model::Mvsde(dawson_shiino(0.5));
    let sol = asymmetric_stationary(&model, 8, 0.5, 1.0, 1e-10).unwrap();
    assert!(sol.converged);
    assert!(sol.residual_norm < 1e-9);
    assert!(
        (sol.measure.moment(1) - 0.9224535).abs() < 5e-4,
        "m1 = {}",
        sol.measure.moment(1)
    );
}

#[test]
fn branches_mirror_each_other() {
    let model = Model::Mvsde(dawson_shiino(0.5));
    let up = asymmetric_stationary(&model, 4, 0.5, 1.0, 1e-10).unwrap();
    let lo = asymmetric_stationary(&model, 4, 0.5, -1.0, 1e-10).unwrap();
    assert_relative_eq!(up.measure.moment(1), -lo.measure.moment(1), epsilon = 1e-8);
    assert_relative_eq!(up.measure.moment(2), lo.measure.moment(2), epsilon = 1e-8);
}

#[test]
fn small_noise_clusters_shrink_onto_the_well() {
    // offsets scale as sigma*sqrt(b^2/(2|a'|)) around the well at +1
    let mk = |sigma: f64| {
        Model::Sde(SdeModel {
            drift: Polynomial::new(vec![0.0, 1.0, 0.0, -1.0]),
            diffusion_poly: Polynomial::constant(1.0),
            noise_amplitude: sigma,
        })
    };
    let mut prev_spread = f64::INFINITY;
    for sigma in [0.2, 0.1, 0.05] {
        let sol = asymmetric_stationary(&mk(sigma), 2, sigma, 1.0, 1e-11).unwrap();
        assert!(sol.converged);
        let x = sol.measure.nodes();
        let spread = x[1] - x[0];
        assert!(spread < prev_spread);
        prev_spread = spread;
        // He_2 roots +-1 at scale sigma/sqrt(2|a'(1)|) = sigma/2
        let predicted = sigma / 2.0;
        assert!(
            ((spread / 2.0) / predicted - 1.0).abs() < 0.05,
            "sigma {sigma}: spread/2 = {} vs {}",
            spread / 2.0,
            predicted
        );
        let center = 0.5 * (x[0] + x[1]);
        assert!((center - 1.0).abs() < 3.0 * sigma);
    }
}

#[test]
fn asymmetric_rejects_non_well_site() {
    let model = Model::Mvsde(dawson_shiino(0.5));
    // site 0 is the saddle of the frozen potential
    assert!(asymmetric_stationary(&model, 4, 0.5, 0.0, 1e-10).is_err());
}
