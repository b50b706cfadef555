mod common;

use common::{brute_force_margin, small_regions};
use proptest::prelude::*;
use qnet::capacity::{check_admissible, check_admissible_with, AdmissibilityOptions, Verdict};
use qnet::model::{ConstraintProcess, NetworkTopology};
use qnet::regions::{independent_set_region, switch_region, ContentionGraph, DepartureRegion};

fn lp_margin(region: &DepartureRegion, w: &[f64]) -> f64 {
    let t = NetworkTopology::single_hop(region.dim());
    check_admissible(
        w,
        &t,
        &ConstraintProcess::static_region(),
        std::slice::from_ref(region),
    )
    .unwrap()
    .margin
}

fn arb_region() -> impl Strategy<Value = DepartureRegion> {
    (2usize..=3).prop_flat_map(|m| {
        prop::collection::btree_set(prop::collection::vec(0u64..3, m), 1..7).prop_map(move |set| {
            let mut vertices = vec![vec![0; m]];
            vertices.extend(set.into_iter().filter(|v| v.iter().any(|&c| c > 0)));
            DepartureRegion::new("random", vertices).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn lp_matches_vertex_enumeration(
        region in arb_region(),
        w in prop::collection::vec(0.05f64..1.0, 3),
    ) {
        let w = &w[..region.dim()];
        let want = brute_force_margin(&region, w).max(-1.0);
        let got = lp_margin(&region, w);
        prop_assert!((got - want).abs() < 1e-6, "lp {got} oracle {want}");
    }
}

#[test]
fn hand_built_regions_agree() {
    for region in small_regions() {
        let m = region.dim();
        for k in 1..=5 {
            let w: Vec<f64> = (0..m).map(|i| 0.1 * k as f64 + 0.05 * i as f64).collect();
            let want = brute_force_margin(&region, &w).max(-1.0);
            assert!((lp_margin(&region, &w) - want).abs() < 1e-9);
        }
    }
}

#[test]
fn switch_margin_is_the_uniform_closed_form() {
    let r = switch_region(3).unwrap();
    for rate in [0.1, 0.2, 0.3, 0.33, 0.34] {
        let want = 1.0 / (3.0 * rate) - 1.0;
        assert!((lp_margin(&r, &[rate; 9]) - want).abs() < 1e-9);
    }
}

#[test]
fn relaxed_form_agrees_on_downward_closed_regions() {
    let r = independent_set_region(&ContentionGraph::path(5)).unwrap();
    let t = NetworkTopology::single_hop(5);
    let c = ConstraintProcess::static_region();
    let w = [0.2, 0.3, 0.1, 0.4, 0.25];
    let exact = check_admissible(&w, &t, &c, std::slice::from_ref(&r)).unwrap();
    let relaxed = check_admissible_with(
        &w,
        &t,
        &c,
        std::slice::from_ref(&r),
        AdmissibilityOptions { relaxed: true },
    )
    .unwrap();
    assert!((exact.margin - relaxed.margin).abs() < 1e-9);
    assert_eq!(exact.verdict, Verdict::from_margin(exact.margin));
    assert!(exact.residual < 1e-9);
}
