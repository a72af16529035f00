use evseg::belief::{
    bayesian_from_probabilities, combine_dempster, combine_many, vacuous, FocalSet, Frame, MassFunction,
};
use evseg::enn::{enn_forward, enn_masses, PrototypeBank};
use evseg::fusion::fuse_pixel;
use proptest::prelude::*;

fn frame(n: usize) -> Frame {
    Frame::new((0..n as u8).collect()).unwrap()
}

/// Raw (bitmask, weight) pairs; normalized into a mass function by `build`.
fn raw_mass(n: usize) -> impl Strategy<Value = Vec<(u16, f64)>> {
    let top = (1u16 << n) - 1;
    prop::collection::vec((1..=top, 0.01f64..1.0), 1..6)
}

fn build(n: usize, raw: &[(u16, f64)]) -> MassFunction {
    let total: f64 = raw.iter().map(|r| r.1).sum();
    MassFunction::new(frame(n), raw.iter().map(|&(b, w)| (FocalSet(b), w / total))).unwrap()
}

fn probabilities(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn vacuous_is_neutral(n in 2usize..5, raw in raw_mass(4)) {
        let raw: Vec<_> = raw.into_iter().map(|(b, w)| (b & ((1 << n) - 1), w)).filter(|r| r.0 != 0).collect();
        prop_assume!(!raw.is_empty());
        let m = build(n, &raw);
        let r = combine_dempster(&m, &vacuous(&frame(n))).unwrap();
        prop_assert_eq!(r.conflict, 0.0);
        for (set, v) in m.focal_sets() {
            prop_assert!((r.mass.mass(set) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn combination_is_normalized_and_commutative(a in raw_mass(3), b in raw_mass(3)) {
        let (m1, m2) = (build(3, &a), build(3, &b));
        if let Ok(ab) = combine_dempster(&m1, &m2) {
            prop_assert!((ab.mass.total() - 1.0).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&ab.conflict));
            let ba = combine_dempster(&m2, &m1).unwrap();
            prop_assert_eq!(ab, ba);
        }
    }

    #[test]
    fn bayesian_stays_bayesian(p in probabilities(4), raw in raw_mass(4)) {
        let f = frame(4);
        let bayes = bayesian_from_probabilities(&f, &p).unwrap();
        let m = build(4, &raw);
        if let Ok(r) = combine_dempster(&bayes, &m) {
            prop_assert!(r.mass.is_bayesian());
        }
    }

    #[test]
    fn fusion_matches_generic_rule(p in probabilities(4), m in probabilities(5)) {
        let f = frame(4);
        let bayes = bayesian_from_probabilities(&f, &p).unwrap();
        let entries = (0..4).map(|k| (FocalSet::singleton(k), m[k])).chain([(f.omega(), m[4])]);
        let evidential = MassFunction::new(f.clone(), entries).unwrap();
        let generic = combine_dempster(&bayes, &evidential).unwrap();
        let (fused, kappa) = fuse_pixel(&p, &m).unwrap();
        prop_assert!((generic.conflict - kappa).abs() < 1e-12);
        for (k, v) in fused.iter().enumerate() {
            prop_assert!((generic.mass.mass(FocalSet::singleton(k)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_prototype_ignorance_grows_with_distance(d1 in 0.0f64..3.0, extra in 0.01f64..3.0) {
        let bank = PrototypeBank {
            feature_dim: 1,
            classes: 2,
            prototypes: vec![0.0],
            memberships_raw: vec![0.8, 0.3],
            alpha_raw: vec![0.7],
            gamma_raw: vec![0.9],
        };
        let near = enn_masses(&[d1], &bank).unwrap();
        let far = enn_masses(&[d1 + extra], &bank).unwrap();
        prop_assert!(far[2] > near[2]);
        prop_assert!((far[0] * near[1] - near[0] * far[1]).abs() < 1e-14);
    }
}

#[test]
fn combine_many_accumulates_conflict() {
    let f = frame(2);
    let a = MassFunction::new(f.clone(), [(FocalSet::singleton(0), 0.5), (f.omega(), 0.5)]).unwrap();
    let b = MassFunction::new(f.clone(), [(FocalSet::singleton(1), 0.5), (f.omega(), 0.5)]).unwrap();
    let ab = combine_dempster(&a, &b).unwrap();
    let aba = combine_dempster(&ab.mass, &a).unwrap();
    let all = combine_many(&[a.clone(), b, a]).unwrap();
    assert_eq!(ab.conflict, 0.25);
    assert_eq!(all.mass, aba.mass);
    assert!((all.conflict - (1.0 - (1.0 - ab.conflict) * (1.0 - aba.conflict))).abs() < 1e-15);
}

#[test]
fn enn_forward_has_only_singletons_and_omega() {
    let f = frame(3);
    let bank = PrototypeBank {
        feature_dim: 2,
        classes: 3,
        prototypes: vec![0.0, 0.0, 1.0, 1.0],
        memberships_raw: vec![1.0, 0.2, 0.1, 0.1, 0.3, 1.0],
        alpha_raw: vec![0.0, 1.0],
        gamma_raw: vec![1.0, 0.5],
    };
    let m = enn_forward(&[0.4, 0.6], &bank, &f).unwrap();
    assert!(m.focal_sets().all(|(s, _)| s.is_singleton() || s == f.omega()));
    assert!((m.total() - 1.0).abs() < 1e-12);
}
