mod common;

use common::{rel, sphere_field, terms, Terms};
use proptest::prelude::*;
use sllg_core::diagnostics::{deterministic_defect, martingale_residual, qv_estimate};
use sllg_core::flow::{tension, tension_projected};
use sllg_core::{evolve, trajectory_rng, EvolveOptions, FlowState, Grid, NoiseModel, StepScheme, VectorField3};

fn smooth_terms() -> impl Strategy<Value = [Terms; 3]> {
    [terms(3, 6), terms(3, 6), terms(3, 6)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_term_never_changes_the_norm_to_first_order(t in smooth_terms(), seed in any::<u64>()) {
        let g = Grid::new(32).unwrap();
        let u = sphere_field(&g, [&t[0], &t[1], &t[2]], 0.2);
        let m = NoiseModel::build(&g, 0.3, 3.0, 6).unwrap();
        let dw = m.sample_increment(1e-3, &mut trajectory_rng(seed, 0)).dw;
        let dot = u.dot(&u.cross(&dw));
        prop_assert!(dot.max_abs() <= 1e-16);
    }

    #[test]
    fn projection_is_idempotent_and_lipschitz(t in smooth_terms(), s in smooth_terms(), eps in 0.0..0.3f64) {
        let g = Grid::new(16).unwrap();
        let base = |t: &[Terms; 3]| {
            VectorField3::new([0, 1, 2].map(|i| common::field(&g, &t[i])))
        };
        // Raw fields with |u| ≥ 1/2 pointwise.
        let lift = |v: VectorField3| {
            let mag = v.magnitude();
            let scale = mag.map(|m| if m < 0.5 { 0.5 / m.max(1e-12) } else { 1.0 });
            v.scale_by(&scale)
        };
        let u = lift(base(&t).add(&VectorField3::constant(&g, [0.0, 0.0, 2.0])));
        let v = lift(u.add(&base(&s).scale(eps)));
        let pu = u.project_to_sphere();
        let pv = v.project_to_sphere();
        prop_assert!(pu.project_to_sphere().sub(&pu).norm(sllg_core::Norm::Inf) <= 1e-15);
        // u ↦ u/|u| has Lipschitz constant 1/r on {|u| ≥ r}.
        let d_in = u.sub(&v).magnitude();
        let d_out = pu.sub(&pv).magnitude();
        for (a, b) in d_out.values().iter().zip(d_in.values()) {
            prop_assert!(*a <= 2.0 * b + 1e-15);
        }
    }

    #[test]
    fn tension_normal_part_vanishes_under_refinement(t in smooth_terms()) {
        // Dealiasing the cubic term leaves a normal component that decays
        // spectrally with the grid.
        let normal = |n: usize| {
            let g = Grid::new(n).unwrap();
            let u = sphere_field(&g, [&t[0], &t[1], &t[2]], 0.2);
            u.dot(&tension(&u)).max_abs()
        };
        let (coarse, fine) = (normal(32), normal(128));
        prop_assert!(fine <= coarse.max(1e-12), "{coarse:e} -> {fine:e}");
        let g = Grid::new(64).unwrap();
        let u = sphere_field(&g, [&t[0], &t[1], &t[2]], 0.2);
        let p = tension_projected(&u);
        prop_assert!(u.dot(&p).max_abs() <= 1e-12 * p.norm(sllg_core::Norm::Inf).max(1.0));
    }
}

fn smooth_data(g: &Grid) -> VectorField3 {
    sllg_core::make_initial(
        &sllg_core::InitialData::RandomSmooth(sllg_core::RandomSmoothParams {
            seed: 2,
            modes: 2,
            amplitude: 0.3,
        }),
        g,
    )
    .unwrap()
}

#[test]
fn quadratic_variation_is_additive_over_restarted_segments() {
    let g = Grid::new(32).unwrap();
    let m = NoiseModel::build(&g, 0.1, 3.0, 6).unwrap();
    let scheme = StepScheme::default().with_dt(1e-3);
    let u0 = smooth_data(&g);
    let whole = evolve(
        FlowState::new(u0.clone(), trajectory_rng(5, 0), 1e-3),
        &m,
        &scheme,
        &EvolveOptions::new(0.04, 5),
        &mut [],
    )
    .unwrap();
    let first = evolve(
        FlowState::new(u0, trajectory_rng(5, 0), 1e-3),
        &m,
        &scheme,
        &EvolveOptions::new(0.02, 5),
        &mut [],
    )
    .unwrap();
    let second = evolve(first.state, &m, &scheme, &EvolveOptions::new(0.04, 5), &mut []).unwrap();
    let q_whole = *qv_estimate(&whole.record).last().unwrap();
    let q_split = qv_estimate(&first.record).last().unwrap() + qv_estimate(&second.record).last().unwrap();
    assert!(q_whole > 0.0);
    assert!(rel(q_whole, q_split) <= 1e-13, "{q_whole} vs {q_split}");
    assert_eq!(whole.state.u, second.state.u);
}

#[test]
fn noiseless_energy_defect_converges_at_first_order() {
    let g = Grid::new(64).unwrap();
    let silent = NoiseModel::deterministic(&g);
    let u0 = smooth_data(&g);
    let defect = |dt: f64| {
        let scheme = StepScheme::default().with_dt(dt);
        let rec = evolve(
            FlowState::new(u0.clone(), trajectory_rng(0, 0), dt),
            &silent,
            &scheme,
            &EvolveOptions { t_final: 0.08, record_stride: 1, track_qv: false },
            &mut [],
        )
        .unwrap()
        .record;
        deterministic_defect(&rec)
    };
    let d: Vec<f64> = [4e-4, 2e-4, 1e-4].map(defect).to_vec();
    for w in d.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 0.9, "defects {d:?}, order {order}");
    }
}

#[test]
fn noiseless_defect_extrapolates_to_zero() {
    // M̂(T) = c·dt + O(dt²), so 2·M̂(dt/2) − M̂(dt) removes the leading term.
    let g = Grid::new(64).unwrap();
    let silent = NoiseModel::deterministic(&g);
    let u0 = sllg_core::make_initial(&sllg_core::InitialData::RandomSmooth(Default::default()), &g).unwrap();
    let residual = |dt: f64| {
        let rec = evolve(
            FlowState::new(u0.clone(), trajectory_rng(0, 0), dt),
            &silent,
            &StepScheme::default().with_dt(dt),
            &EvolveOptions::new(0.1, 100),
            &mut [],
        )
        .unwrap()
        .record;
        *martingale_residual(&rec, 0.0).last().unwrap()
    };
    let (coarse, fine) = (residual(1e-4), residual(5e-5));
    let extrapolated = 2.0 * fine - coarse;
    assert!(extrapolated.abs() <= 1e-2 * coarse.abs(), "M̂ = {coarse:e}, {fine:e}; extrapolated {extrapolated:e}");
}

#[test]
fn constant_map_under_constant_mode_noise_stays_flat() {
    // With only the constant mode the increment is a rigid rotation, so the
    // map stays constant: E = 0, Q̂ = 0 and c_φ = 0 give M̂ ≡ 0.
    let g = Grid::new(16).unwrap();
    let m = NoiseModel::build(&g, 0.4, 3.0, 0).unwrap();
    assert_eq!(m.c_phi(), 0.0);
    let u0 = VectorField3::constant(&g, [0.0, 0.0, 1.0]);
    let ev = evolve(
        FlowState::new(u0, trajectory_rng(3, 0), 1e-3),
        &m,
        &StepScheme::default().with_dt(1e-3),
        &EvolveOptions::new(0.01, 1),
        &mut [],
    )
    .unwrap();
    let first = ev.record.samples[0].clone();
    assert!(first.energy < 1e-28);
    assert!(martingale_residual(&ev.record, m.c_phi()).iter().all(|v| v.abs() < 1e-28));
    assert!(qv_estimate(&ev.record).iter().all(|q| q.abs() < 1e-28));
    // The rotation moved the pole but kept the map constant.
    let u = &ev.state.u;
    assert!(u.component(2).values()[0] < 1.0);
    for i in 0..3 {
        let c = u.component(i);
        assert!(c.values().iter().all(|v| (v - c.values()[0]).abs() < 1e-14));
    }
}
