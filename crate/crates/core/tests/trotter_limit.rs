//! Finite-N correlator quantities approach their Trotter-limit counterparts.

use std::f64::consts::PI;

use qtm_core::bethe::QFunctionBundle;
use qtm_core::contour::{build_nested_grids, build_nlie_grid, GridConfig};
use qtm_core::correlator::CorrelatorContext;
use qtm_core::lie::TrotterLimitPair;
use qtm_core::model::{DisorderParam, ModelParams};
use qtm_core::nlie::{IterConfig, NlieOperator, Trotter};
use qtm_core::Complex64;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn psi_drifts_towards_the_trotter_limit() {
    let p = ModelParams::from_field(PI / 4.0, 1.0, 1.0, 0.2).unwrap();
    let alpha = DisorderParam::real(0.2);
    let cfg = GridConfig::default();
    let iter = IterConfig::default();

    let (outer, work) = build_nested_grids(&p, &cfg).unwrap();
    let op = NlieOperator::new(&p, &outer);
    let sol_k = op.solve(&p, p.kappa, Trotter::Infinite, &iter, None).unwrap();
    let sol_ka = op.solve(&p, p.kappa + alpha.alpha, Trotter::Infinite, &iter, Some(&sol_k.log_a_values)).unwrap();
    let limit = CorrelatorContext::new(TrotterLimitPair { sol_k, sol_ka }, &work).unwrap();

    let pairs = [(c(0.1, 0.0), c(-0.15, 0.0)), (c(0.5, 0.02), c(-0.4, -0.02))];
    let reference: Vec<Complex64> = pairs.iter().map(|(a, b)| limit.psi(*a, *b).unwrap().value).collect();

    let grid = build_nlie_grid(&p, &cfg, &[]).unwrap();
    let mut drift = Vec::new();
    for n in [8usize, 16, 32] {
        let ctx = CorrelatorContext::new(QFunctionBundle::solve(&p, alpha, n, &cfg, &iter).unwrap(), &grid).unwrap();
        let worst = pairs
            .iter()
            .zip(&reference)
            .map(|((a, b), r)| (ctx.psi(*a, *b).unwrap().value - r).norm())
            .fold(0.0, f64::max);
        drift.push(worst);
    }
    assert!(drift[1] < drift[0] && drift[2] < drift[1], "{drift:?}");
    assert!(drift[2] < 1e-3, "{drift:?}");
    // second-order Trotter error: doubling N cuts the gap by about four
    assert!(drift[1] / drift[2] > 3.0, "{drift:?}");
}
