use gmraim::theory::{
    binom_tail, binomial, has_benign_subset, benign_majority, has_benign_fix, recovery_guaranteed, detection_guaranteed,
    feasibility_frontier, InfrastructureCount, InfrastructureCounts,
};
use num_bigint::BigUint;
use proptest::prelude::*;

fn masks_with_popcount(n: u32, lo: u32, hi: u32) -> u64 {
    if lo > hi {
        return 1;
    }
    (0u64..1 << n)
        .filter(|m| (lo..=hi).contains(&m.count_ones()))
        .count() as u64
}

/// Benign side: every all-benign subset of at least `n_min` anchors.
/// Adversarial side: `i ≥ 1` adversarial anchors joined by at least
/// `n_min − i` of the `n_min − 1` benign slots they can absorb.
fn majority_oracle(n_anc: u32, n_adv: u32, n_min: u32) -> (u64, u64) {
    let benign = n_anc - n_adv;
    let lhs = masks_with_popcount(benign, n_min, benign);
    let mut rhs = 0;
    for adv in 1u64..1 << n_adv {
        let i = adv.count_ones();
        rhs += masks_with_popcount(n_min - 1, n_min.saturating_sub(i), n_min - 1);
    }
    (lhs, rhs)
}

fn counts(list: &[(&str, u32, u32, u32)]) -> InfrastructureCounts {
    InfrastructureCounts {
        infrastructures: list
            .iter()
            .map(|&(name, a, v, k)| InfrastructureCount::new(name, a, v, k).unwrap())
            .collect(),
    }
}

#[test]
fn two_infrastructure_examples() {
    let c = detection_guaranteed(&counts(&[("gnss", 7, 2, 4), ("wifi", 6, 0, 3)])).unwrap();
    assert_eq!(
        (c.holds, c.lhs, c.rhs),
        (true, BigUint::from(48u32), BigUint::from(6u32))
    );

    let (g_l, g_r) = majority_oracle(7, 2, 4);
    let (w_l, w_r) = majority_oracle(3, 3, 3);
    assert_eq!((g_l + w_l, g_r + w_r), (7, 22));
    let c = detection_guaranteed(&counts(&[("gnss", 7, 2, 4), ("wifi", 3, 3, 3)])).unwrap();
    assert_eq!(
        (c.holds, c.lhs, c.rhs),
        (false, BigUint::from(7u32), BigUint::from(22u32))
    );
}

#[test]
fn equality_case_is_not_guaranteed() {
    let c = benign_majority(7, 2, 4).unwrap();
    assert!(!c.holds);
    assert_eq!(c.lhs, c.rhs);
    assert_eq!(c.lhs, BigUint::from(6u32));
}

#[test]
fn inconsistent_counts_rejected() {
    assert!(benign_majority(3, 4, 4).is_err());
    assert!(InfrastructureCount::new("x", 3, 1, 0).is_err());
    assert!(feasibility_frontier(&[3, 4], &[3]).is_err());
    assert!(feasibility_frontier(&[40, 40, 40, 40], &[3, 3, 3, 3]).is_err());
}

#[test]
fn frontier_marks_maximal_allocations() {
    let rows = feasibility_frontier(&[7, 6], &[4, 3]).unwrap();
    assert_eq!(rows.len(), 8 * 7);
    assert_eq!(rows[0].n_adv, vec![0, 0]);
    for r in rows.iter().filter(|r| r.maximal) {
        assert!(r.detection);
        for m in 0..2 {
            let mut up = r.n_adv.clone();
            up[m] += 1;
            if let Some(next) = rows.iter().find(|x| x.n_adv == up) {
                assert!(!next.detection);
            }
        }
    }
}

proptest! {
    #[test]
    fn tail_matches_enumeration(n in 0u32..=20, a in 0u32..=21, b in 0u32..=21) {
        let (lo, hi) = (a.min(b), a.max(b));
        let hi = hi.min(n);
        prop_assert_eq!(binom_tail(n, lo, hi), BigUint::from(masks_with_popcount(n, lo, hi)));
    }

    #[test]
    fn binomial_symmetry(n in 0u32..60, k in 0u32..60) {
        prop_assume!(k <= n);
        prop_assert_eq!(binomial(n, k), binomial(n, n - k));
    }

    #[test]
    fn majority_matches_oracle(n_anc in 1u32..=12, adv_frac in 0.0f64..=1.0, n_min in 1u32..=6) {
        let n_adv = ((n_anc as f64) * adv_frac).round() as u32;
        let c = benign_majority(n_anc, n_adv, n_min).unwrap();
        let (l, r) = majority_oracle(n_anc, n_adv, n_min);
        prop_assert_eq!(c.lhs, BigUint::from(l));
        prop_assert_eq!(c.rhs, BigUint::from(r));
        prop_assert_eq!(c.holds, l > r);
    }

    #[test]
    fn single_infrastructure_reduces_to_per_infrastructure_checks(n_anc in 1u32..=30, adv_frac in 0.0f64..=1.0, n_min in 1u32..=8) {
        let n_adv = ((n_anc as f64) * adv_frac).round() as u32;
        let c = counts(&[("m", n_anc, n_adv, n_min)]);
        prop_assert_eq!(detection_guaranteed(&c).unwrap(), benign_majority(n_anc, n_adv, n_min).unwrap());
        prop_assert_eq!(recovery_guaranteed(&c).unwrap(), has_benign_subset(n_anc, n_adv, n_min));
        // A benign subset above the minimum implies a benign fix.
        prop_assert!(!has_benign_subset(n_anc, n_adv, n_min) || has_benign_fix(n_anc, n_adv, n_min));
    }

    #[test]
    fn more_adversaries_never_help(n_anc in 2u32..=30, n_adv in 0u32..30, n_min in 1u32..=8) {
        prop_assume!(n_adv < n_anc);
        let before = benign_majority(n_anc, n_adv, n_min).unwrap().holds;
        let after = benign_majority(n_anc, n_adv + 1, n_min).unwrap().holds;
        prop_assert!(before || !after);
        prop_assert!(has_benign_subset(n_anc, n_adv, n_min) || !has_benign_subset(n_anc, n_adv + 1, n_min));
    }

    #[test]
    fn benign_infrastructure_preserves_guarantee(a in 4u32..=12, v in 0u32..=12, extra in 3u32..=10) {
        prop_assume!(v <= a);
        let one = counts(&[("gnss", a, v, 4)]);
        let two = counts(&[("gnss", a, v, 4), ("wifi", extra, 0, 3)]);
        let (h1, h2) = (detection_guaranteed(&one).unwrap().holds, detection_guaranteed(&two).unwrap().holds);
        prop_assert!(!h1 || h2);
    }
}
