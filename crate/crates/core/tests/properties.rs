//! Structural invariants checked on random inputs.

use proptest::prelude::*;

use hyperlab::criteria::{check_theorem_a, reverify, WitnessSchedule};
use hyperlab::group::{aperiodicity_horizon, haar_measure, translate};
use hyperlab::lab::validate_config;
use hyperlab::sampling::{random_sparse_z, random_weight, rng_for};
use hyperlab::translation::{apply_s_power, apply_t_power};
use hyperlab::weights::{forward_product, ratio_product};
use hyperlab::{CompactRegion, GroupModel, GroupPoint, LatticeFunction, NormParam, WeightSpec};

fn z() -> GroupModel {
    GroupModel::z()
}

fn function(seed: u64) -> LatticeFunction {
    random_sparse_z(&mut rng_for(seed, 0), -30, 30, 0.4)
}

fn weight(seed: u64, family: usize) -> WeightSpec {
    random_weight(&mut rng_for(seed, 1), family)
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}

fn max_gap(f: &LatticeFunction, g: &LatticeFunction) -> f64 {
    f.sub(g).unwrap().sup_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn haar_measure_and_norms_are_translation_invariant(seed in any::<u64>(), s in -200i64..200, p in 1.0f64..4.0) {
        let q = NormParam::new(p).unwrap();
        let f = function(seed);
        let region = f.support();
        let a = GroupPoint::scalar(1);
        prop_assert_eq!(haar_measure(&z(), &region.translated(&z(), &a, s)), haar_measure(&z(), &region));
        let moved = f.shifted(&GroupPoint::scalar(s)).unwrap();
        prop_assert!(close(moved.lp_norm(q), f.lp_norm(q), 1e-12));
    }

    #[test]
    fn powers_compose(seed in any::<u64>(), family in 0usize..4, m in 0u64..40, n in 0u64..40) {
        let (f, w, a) = (function(seed), weight(seed, family), GroupPoint::scalar(1));
        let two_steps = apply_t_power(&a, &w, m, &apply_t_power(&a, &w, n, &f));
        let one_step = apply_t_power(&a, &w, m + n, &f);
        prop_assert_eq!(two_steps.support(), one_step.support());
        prop_assert!(max_gap(&two_steps, &one_step) <= 1e-9 * one_step.sup_norm().max(1.0));
    }

    #[test]
    fn forward_products_form_a_cocycle(seed in any::<u64>(), family in 0usize..4, x in -40i64..40, m in 0u64..60, n in 0u64..60) {
        let (w, a) = (weight(seed, family), GroupPoint::scalar(1));
        let x = GroupPoint::scalar(x);
        let whole = forward_product(&z(), &w, &a, &x, m + n).log_value;
        let moved = translate(&z(), &x, &a, -(m as i64)).unwrap();
        let parts = forward_product(&z(), &w, &a, &x, m).log_value + forward_product(&z(), &w, &a, &moved, n).log_value;
        prop_assert!(close(whole, parts, 1e-12));
    }

    #[test]
    fn disjoint_supports_add_in_pth_power(seed in any::<u64>(), gap in 61i64..500, p in 1.0f64..4.0) {
        let q = NormParam::new(p).unwrap();
        let f = function(seed);
        let g = function(seed.wrapping_add(1)).shifted(&GroupPoint::scalar(gap)).unwrap();
        prop_assert!(f.support().is_disjoint(&g.support()));
        let sum = f.add(&g).unwrap().lp_norm_pow(q);
        prop_assert!(close(sum, f.lp_norm_pow(q) + g.lp_norm_pow(q), 1e-12));
    }

    #[test]
    fn ratio_products_are_reciprocal(seed in any::<u64>(), fj in 0usize..4, fl in 0usize..4, x in -30i64..30, n in 0u64..300) {
        let (wj, wl, a) = (weight(seed, fj), weight(seed ^ 0x5bd1, fl), GroupPoint::scalar(1));
        let x = GroupPoint::scalar(x);
        let sum = ratio_product(&z(), &wj, &wl, &a, &x, n).log_value + ratio_product(&z(), &wl, &wj, &a, &x, n).log_value;
        prop_assert!(sum.abs() <= 1e-12);
    }

    #[test]
    fn backward_shift_inverts_forward_shift(seed in any::<u64>(), family in 0usize..4, n in 0u64..80) {
        let (h, w, a) = (function(seed), weight(seed, family), GroupPoint::scalar(1));
        let back = apply_s_power(&a, &w, n, &apply_t_power(&a, &w, n, &h));
        prop_assert_eq!(back.support(), h.support());
        prop_assert!(max_gap(&back, &h) <= 1e-12);
    }

    #[test]
    fn support_leaves_region_beyond_horizon(lo in -20i64..20, len in 0i64..15, extra in 1u64..100) {
        let k = CompactRegion::interval(lo, lo + len);
        let a = GroupPoint::scalar(1);
        let horizon = aperiodicity_horizon(&z(), &k, &a).unwrap().horizon().unwrap();
        prop_assert_eq!(horizon, len as u64);
        let f = LatticeFunction::indicator(&z(), &k).unwrap();
        let moved = apply_t_power(&a, &WeightSpec::salas(), horizon + extra, &f);
        prop_assert!(moved.support().is_disjoint(&k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn witnesses_reverify(v_neg in 1.2f64..4.0, v_pos in 0.25f64..0.8, pivot in -3i64..3, len in 0i64..6) {
        let w = WeightSpec::step(v_neg, v_pos, pivot).unwrap();
        let k = CompactRegion::interval(0, len);
        let q = NormParam::new(2.0).unwrap();
        let sched = WitnessSchedule::defaults(haar_measure(&z(), &k), q, 4, 400).unwrap();
        let a = GroupPoint::scalar(1);
        let verdict = check_theorem_a(&z(), &w, &a, &k, &sched).unwrap();
        prop_assert!(reverify(&z(), &[w], &a, &k, &sched, None, &verdict).is_ok());
        if let Some(wit) = verdict.witness() {
            prop_assert!(wit.entries.windows(2).all(|e| e[0].n < e[1].n));
        }
    }

    #[test]
    fn normalized_configs_round_trip(lo in -10i64..0, hi in 0i64..10, v_neg in 1.0f64..4.0, seed in any::<u64>()) {
        let raw = serde_json::json!({
            "command": "check-hc",
            "model": {"kind": "integer_lattice", "dim": 1},
            "a": [1],
            "weights": [{"family": "step", "v_neg": v_neg, "v_pos": 0.5}],
            "K": {"interval": [lo, hi]},
            "seed": seed
        })
        .to_string();
        let cfg = validate_config(&raw).unwrap();
        let again = validate_config(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(cfg, again);
    }
}
