mod common;

use std::f64::consts::PI;

use common::{field, rel, terms, zero_mean_terms};
use proptest::prelude::*;
use sllg_core::field::{curl, dealias, divergence, gradient, laplacian, perp_gradient, poisson_solve};
use sllg_core::Grid;

fn grid() -> Grid {
    Grid::new(32).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parseval_matches_coefficient_sum(t in zero_mean_terms(9, 12)) {
        let g = grid();
        let f = field(&g, &t);
        let analytic = 4.0 * PI * PI * t.iter().map(|x| 0.5 * (x.2 * x.2 + x.3 * x.3)).sum::<f64>();
        let fft = f.spectrum().full_power() / (g.len() as f64) * g.cell_area();
        prop_assert!(rel(f.inner(&f), analytic) <= 1e-12);
        prop_assert!(rel(fft, analytic) <= 1e-12);
    }

    #[test]
    fn gradient_poisson_divergence_is_identity_on_gradients(t in zero_mean_terms(9, 12)) {
        let g = grid();
        let v = gradient(&field(&g, &t));
        let back = gradient(&poisson_solve(&divergence(&v)).unwrap());
        let scale = v[0].max_abs().max(v[1].max_abs());
        for k in 0..2 {
            prop_assert!((&back[k] - &v[k]).max_abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn laplacian_is_divergence_of_gradient(t in terms(15, 12)) {
        let f = field(&grid(), &t);
        let lap = laplacian(&f);
        let d = divergence(&gradient(&f));
        prop_assert!((&lap - &d).max_abs() <= 1e-12 * lap.max_abs().max(1.0));
    }

    #[test]
    fn perp_gradient_is_divergence_free(t in terms(15, 12)) {
        let f = field(&grid(), &t);
        let p = perp_gradient(&f);
        let scale = p[0].max_abs().max(p[1].max_abs()).max(1.0);
        prop_assert!(divergence(&p).max_abs() <= 1e-12 * scale);
        prop_assert!(curl(&gradient(&f)).max_abs() <= 1e-12 * scale);
    }

    #[test]
    fn dealias_is_idempotent_and_keeps_low_modes(t in terms(9, 10)) {
        let f = field(&grid(), &t);
        let once = dealias(&f);
        prop_assert!((&dealias(&once) - &once).max_abs() <= 1e-14 * f.max_abs().max(1.0));
        // Modes up to 9 lie below the 32/3 cutoff.
        prop_assert!((&once - &f).max_abs() <= 1e-13 * f.max_abs().max(1.0));
    }
}

#[test]
fn single_mode_closed_forms() {
    let g = grid();
    let f = field(&g, &vec![(2, 3, 1.0, 0.0)]);
    let want = f.scale(-13.0);
    assert!((&laplacian(&f) - &want).max_abs() < 1e-12);
    let u = poisson_solve(&f).unwrap();
    assert!((&u - &f.scale(-1.0 / 13.0)).max_abs() < 1e-15);
}
