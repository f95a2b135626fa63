//! Line-solver validation against closed-form references: analytic Green
//! kernels for the boundary-integral densities and manufactured solutions
//! for the full Dirichlet pipeline.

use adiheat_core::geometry::{find_line_intersections, ImplicitDomain, LineIntersections};
use adiheat_core::grid::{Axis, BoundingBox, Grid3, GridLine};
use adiheat_core::kfbi::{
    green, helmholtz_line_factorization_radiating, solve_bie, solve_dirichlet_line, Line1DProblem,
};

fn unit_grid(n: usize) -> Grid3 {
    Grid3::new(BoundingBox::new([0.0; 3], [1.0; 3]).unwrap(), n).unwrap()
}

/// Crossings for the slab (or pair of slabs) where the product polynomial
/// is negative along the center x-line.
fn cuts_for(grid: &Grid3, roots: &[f64]) -> LineIntersections {
    let roots = roots.to_vec();
    let dom = ImplicitDomain::new("slabs", move |p| {
        roots.iter().map(|r| p[0] - r).product()
    });
    let mid = grid.n() / 2;
    let line = GridLine { axis: Axis::X, a: mid, b: mid };
    find_line_intersections(&dom, grid, line).unwrap()
}

/// Convenience: matrix-free density for zero source, where the BIE
/// right-hand side is exactly the Dirichlet data.
fn discrete_density(n: usize, kappa: f64, crossings: &[f64], g: &[f64]) -> (Vec<f64>, usize) {
    let h = 1.0 / n as f64;
    let kappa2 = kappa * kappa;
    let fact = helmholtz_line_factorization_radiating(n, h, kappa2).unwrap();
    let (density, iters) =
        solve_bie(n, 0.0, h, kappa2, crossings, g, &fact, None).unwrap();
    (density.values, iters)
}

#[test]
fn single_interval_density_matches_analytic_green_kernel() {
    let crossings = [0.312, 0.688];
    let g = [0.7, -0.4];
    let kappa = 10.0;
    let exact = green::direct_density(kappa, &crossings, &g);
    let mut errs = Vec::new();
    for &n in &[256usize, 512, 1024] {
        let (phi, iters) = discrete_density(n, kappa, &crossings, &g);
        assert!(iters <= 10, "iterations {iters}");
        let err = phi
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        errs.push(err);
    }
    // Second-order agreement with the analytic kernel solve.
    assert!(errs[0] < 2e-4, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
}

#[test]
fn two_interval_density_matches_analytic_four_by_four() {
    let crossings = [0.15, 0.35, 0.6, 0.85];
    let g = [1.0, -0.5, 0.25, 2.0];
    let kappa = 7.0;
    let exact = green::direct_density(kappa, &crossings, &g);
    let mut errs = Vec::new();
    for &n in &[256usize, 512, 1024] {
        let (phi, iters) = discrete_density(n, kappa, &crossings, &g);
        assert!(iters <= 12, "iterations {iters}");
        let err = phi
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        errs.push(err);
    }
    assert!(errs[0] < 2e-4, "{errs:?}");
    assert!(errs[0] / errs[1] > 3.0, "{errs:?}");
    assert!(errs[1] / errs[2] > 3.0, "{errs:?}");
}

#[test]
fn dirichlet_pipeline_stays_within_five_h_squared_of_exact() {
    // Manufactured u = sin(pi x) on (0.3, 0.7), kappa^2 = 2/tau at tau=0.5.
    let kappa2: f64 = 4.0;
    let pi = std::f64::consts::PI;
    for &n in &[32usize, 64, 128] {
        let grid = unit_grid(n);
        let h = grid.h(Axis::X);
        let cuts = cuts_for(&grid, &[0.3, 0.7]);
        let rhs: Vec<f64> =
            (0..=n).map(|m| -(pi * pi + kappa2) * (pi * h * m as f64).sin()).collect();
        let g = [(pi * cuts.crossings[0]).sin(), (pi * cuts.crossings[1]).sin()];
        let fact = helmholtz_line_factorization_radiating(n, h, kappa2).unwrap();
        let p = Line1DProblem { grid: &grid, cuts: &cuts, kappa2, rhs: &rhs, g: &g };
        let sol = solve_dirichlet_line(&p, &fact, None).unwrap();
        let (first, last) = cuts.interval_nodes(&grid, 0).unwrap();
        let err = (first..=last)
            .map(|m| (sol.field[m] - (pi * h * m as f64).sin()).abs())
            .fold(0.0f64, f64::max);
        assert!(err <= 5.0 * h * h, "n = {n}: {err} > {}", 5.0 * h * h);
    }
}

#[test]
fn constant_solution_is_recovered_to_near_machine_precision() {
    // u = 1 on (0.3, 0.7), f = -kappa^2: value, slope, and third-derivative
    // jumps of the representation all vanish, so the quadratic jump
    // corrections are accurate to fourth order and the constant comes back
    // essentially exactly on a fine line.
    let kappa2: f64 = 3.0;
    let mut errs = Vec::new();
    for &n in &[64usize, 512] {
        let grid = unit_grid(n);
        let h = grid.h(Axis::X);
        let cuts = cuts_for(&grid, &[0.3, 0.7]);
        let rhs = vec![-kappa2; n + 1];
        let g = [1.0, 1.0];
        let fact = helmholtz_line_factorization_radiating(n, h, kappa2).unwrap();
        let p = Line1DProblem { grid: &grid, cuts: &cuts, kappa2, rhs: &rhs, g: &g };
        let sol = solve_dirichlet_line(&p, &fact, None).unwrap();
        let (first, last) = cuts.interval_nodes(&grid, 0).unwrap();
        let err = (first..=last)
            .map(|m| (sol.field[m] - 1.0).abs())
            .fold(0.0f64, f64::max);
        errs.push(err);
    }
    assert!(errs[0] < 1e-6, "{errs:?}");
    assert!(errs[1] < 1e-10, "{errs:?}");
}

#[test]
#[ignore = "measurement probe for sizing the fine-grid oracle comparison"]
fn probe_density_error_versus_kappa_h() {
    let crossings = [0.312, 0.688];
    let g = [0.7, -0.4];
    for &kappa in &[1.0f64, 10.0, 100.0] {
        let exact = green::direct_density(kappa, &crossings, &g);
        for &n in &[1usize << 10, 1 << 12, 1 << 14, 1 << 16] {
            let (phi, iters) = discrete_density(n, kappa, &crossings, &g);
            let err = phi
                .iter()
                .zip(&exact)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let kh = kappa / n as f64;
            println!(
                "kappa {kappa:>5}: n = {n:>6}, iters {iters:>2}, err {err:.3e}, err/(kh)^2 {:.3e}",
                err / (kh * kh)
            );
        }
    }
}
