use csvortex::flux::{j, mass_identities};
use csvortex::geom::Vec2;
use csvortex::profiles::{liouville_eval, LiouvilleParams};
use csvortex::shooting::*;

#[test]
fn scalar_flux_from_quadrature_matches_tail_slope() {
    let sol = integrate_scalar(1, -10.0, Normalization::F, &SolveOptions::default()).unwrap();
    assert_eq!(sol.classification(), Classification::Nontopological);
    let gamma = sol.scalar_flux().unwrap();
    assert!(gamma > 4.0, "flux {gamma} must exceed 2N + 2");
    // V ~ -2 (gamma - N) ln r
    let slope = sol.betas().unwrap().betas[0] + 1.0;
    assert!((gamma - slope).abs() <= 5e-3 * gamma, "{gamma} vs {slope}");
}

#[test]
fn shooting_hits_flux_eight() {
    let opts = ShootOptions::default();
    let (c, sol) = shoot_scalar_for_gamma(1, 8.0, &opts).unwrap();
    assert!((-40.0..=5.0).contains(&c));
    let gamma = sol.scalar_flux().unwrap();
    assert!((gamma - 8.0).abs() <= opts.gamma_tol);
    let r = sol.r_end();
    assert!((sol.local_beta(0, r) - 7.0).abs() <= 5e-3 * 7.0);
}

#[test]
fn su3_nontopological_run_lies_in_omega() {
    let sol = integrate_su3([1, 1], [-8.0, -8.0], &SolveOptions::default()).unwrap();
    assert_eq!(sol.classification(), Classification::Nontopological);
    let b = &sol.betas().unwrap().asymptotic;
    assert!(b[0] > 1.0 && b[1] > 1.0);
    assert!(j(b[0] - 1.0, b[1] - 1.0) > j(2.0, 2.0));
}

#[test]
fn mass_identities_hold_and_improve_with_radius() {
    let n = [1, 1];
    let c = [-8.0, -10.0];
    let far = integrate_su3(n, c, &SolveOptions::default()).unwrap();
    let near = integrate_su3(n, c, &SolveOptions::default().with_r_max(1e3)).unwrap();
    let far = mass_identities(&far).unwrap();
    let near = mass_identities(&near).unwrap();
    assert!(far.max_relative() <= 1e-2);
    assert!(far.relative[0] < near.relative[0]);
    assert!(far.relative[1] < near.relative[1]);
}

#[test]
fn halving_tolerance_moves_betas_less_than_spread() {
    let opts = SolveOptions::default();
    let coarse = integrate_su3([1, 0], [-8.0, -6.0], &opts).unwrap();
    let fine = integrate_su3([1, 0], [-8.0, -6.0], &opts.with_tol(5e-11)).unwrap();
    let (a, b) = (coarse.betas().unwrap(), fine.betas().unwrap());
    for i in 0..2 {
        assert!((a.betas[i] - b.betas[i]).abs() < a.spreads[i], "component {i}");
    }
}

/// Sup distance between `v_2` and the best Liouville profile around the
/// bubble, with the singular exponent read off the slope inside it.
fn liouville_misfit(sol: &RadialSolution) -> f64 {
    let prof = sol.component_profile(1);
    let bubble = prof
        .log_r
        .iter()
        .zip(&prof.values)
        .max_by(|a, b| (2.0 * a.0 + a.1).total_cmp(&(2.0 * b.0 + b.1)))
        .map(|(s, _)| s.exp())
        .unwrap();
    let gamma = sol.r_dv(1, bubble / 10.0);
    let radii: Vec<f64> = (0..200).map(|k| bubble / 5.0 * 25f64.powf(k as f64 / 199.0)).collect();
    let misfit = |lambda: f64| {
        let p = LiouvilleParams::new(gamma, 0, lambda, Vec2::ZERO).unwrap();
        radii
            .iter()
            .map(|&r| (sol.v(1, r) - liouville_eval(&p, Vec2::new(r, 0.0)).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    // golden-section search over the scaling parameter
    let (mut lo, mut hi) = (-200.0, 50.0);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..120 {
        let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if misfit(x1) < misfit(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    misfit(0.5 * (lo + hi))
}

#[test]
fn second_component_approaches_liouville_profile() {
    let opts = SolveOptions::default().with_r_max(1e6);
    let misfits: Vec<f64> = [-30.0, -40.0, -50.0, -60.0]
        .iter()
        .map(|&c2| liouville_misfit(&integrate_su3([1, 0], [-3.0, c2], &opts).unwrap()))
        .collect();
    assert!(misfits.windows(2).all(|w| w[1] < w[0]), "{misfits:?}");
    assert!(misfits[3] < 1e-5);
}
