//! Each kernel against a plain-loop reimplementation on random small inputs.

mod common;

use common::oracles;

const INSTANCES: usize = 60;
const TOL: f64 = 1e-5;

#[test]
fn conv2d_matches_loops() {
    let e = oracles::conv2d(INSTANCES);
    assert!(e <= TOL, "{e}");
}

#[test]
fn gaussian_down_matches_loops() {
    let e = oracles::gaussian_down(INSTANCES);
    assert!(e <= TOL, "{e}");
}

#[test]
fn laplacian_pyramid_matches_loops() {
    let e = oracles::laplacian_pyramid(INSTANCES);
    assert!(e <= TOL, "{e}");
}

#[test]
fn lap_l1_matches_loops() {
    let e = oracles::lap_l1(INSTANCES);
    assert!(e <= TOL, "{e}");
}

#[test]
fn lanczos_down_matches_loops() {
    let e = oracles::lanczos_down(INSTANCES);
    assert!(e <= TOL, "{e}");
}

#[test]
fn mse_region_matches_loops() {
    let e = oracles::mse_region(INSTANCES);
    assert!(e <= TOL, "{e}");
}
