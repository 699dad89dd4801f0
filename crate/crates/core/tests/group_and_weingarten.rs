use nalgebra::DMatrix;
use num_traits::{One, Zero};
use proptest::prelude::*;

use seqtn::rational::{int, ratio, Rational};
use seqtn::weingarten::{gram_matrix, permutation_operator, weingarten_by_characters, weingarten_by_inverse, weingarten_table};
use seqtn::{GroupOrder, Permutation};

fn perm(k: usize) -> impl Strategy<Value = Permutation> {
    Just((1..=k).collect::<Vec<usize>>()).prop_shuffle().prop_map(|v| Permutation::from_images(&v).unwrap())
}

fn triple() -> impl Strategy<Value = (Permutation, Permutation, Permutation)> {
    (1usize..=7).prop_flat_map(|k| (perm(k), perm(k), perm(k)))
}

proptest! {
    #[test]
    fn group_axioms((a, b, c) in triple()) {
        let ab_c = a.compose(&b).unwrap().compose(&c).unwrap();
        let a_bc = a.compose(&b.compose(&c).unwrap()).unwrap();
        prop_assert_eq!(ab_c, a_bc);
        prop_assert!(a.compose(&a.inverse()).unwrap().is_identity());
        prop_assert_eq!(a.compose(&Permutation::identity(a.degree())).unwrap(), a.clone());
        prop_assert_eq!(a.inverse().cycle_count(), a.cycle_count());
    }

    #[test]
    fn conjugation_keeps_cycle_type((a, g, _) in triple()) {
        let c = a.conjugate(&g).unwrap();
        prop_assert_eq!(c.cycle_type(), a.cycle_type());
        // #(στ) is a class function of the pair under simultaneous conjugation
        let x = a.compose(&g).unwrap().cycle_count();
        let y = c.compose(&g.conjugate(&g).unwrap()).unwrap().cycle_count();
        prop_assert_eq!(x, y);
    }

    #[test]
    fn display_roundtrip(a in (1usize..=7).prop_flat_map(perm)) {
        let text = a.to_string();
        prop_assert_eq!(Permutation::parse(a.degree(), &text).unwrap(), a);
    }

    #[test]
    fn cycles_partition_points(a in (1usize..=7).prop_flat_map(perm)) {
        let cycles = a.cycles();
        prop_assert_eq!(cycles.iter().map(|c| c.len()).sum::<usize>(), a.degree());
        prop_assert_eq!(cycles.len(), a.cycle_count());
        prop_assert_eq!(cycles.iter().filter(|c| c.len() == 1).count(), a.fixed_points().len());
    }
}

#[test]
fn characters_agree_with_gram_inverse() {
    for k in 1..=4 {
        for q in k as u64..=6 {
            assert_eq!(weingarten_by_characters(k, q).unwrap(), weingarten_by_inverse(k, q).unwrap(), "k={k} q={q}");
        }
    }
}

#[test]
fn three_replica_closed_forms() {
    for q in 3..=7i64 {
        let wg = weingarten_table(3, q as u64).unwrap();
        let den = q * (q * q - 1) * (q * q - 4);
        assert_eq!(wg.value(&[1, 1, 1]).unwrap(), &ratio(q * q - 2, den));
        assert_eq!(wg.value(&[2, 1]).unwrap(), &ratio(-1, (q * q - 1) * (q * q - 4)));
        assert_eq!(wg.value(&[3]).unwrap(), &ratio(2, den));
    }
}

#[test]
fn weingarten_inverts_gram() {
    for (k, q) in [(2, 2), (3, 3), (3, 5), (4, 4)] {
        let g = GroupOrder::shared(k).unwrap();
        let gram = gram_matrix(k, q).unwrap();
        let wg = weingarten_table(k, q).unwrap();
        for s in 0..g.len() {
            for r in 0..g.len() {
                let acc = (0..g.len()).fold(Rational::zero(), |acc, t| {
                    let st = g.get(s).compose(&g.get(t).inverse()).unwrap();
                    acc + wg.of(&st) * &gram[(t, r)]
                });
                assert_eq!(acc, if s == r { Rational::one() } else { Rational::zero() });
            }
        }
    }
}

#[test]
fn pseudo_inverse_above_q() {
    // k > q: W G W = W and G W G = G
    for (k, q) in [(3, 2), (4, 2), (4, 3)] {
        let g = GroupOrder::shared(k).unwrap();
        let gram = gram_matrix(k, q).unwrap();
        let wg = weingarten_table(k, q).unwrap();
        let n = g.len();
        let w = seqtn::RationalMatrix::from_fn(n, n, |s, t| wg.of(&g.get(s).compose(&g.get(t).inverse()).unwrap()).clone());
        let gw = gram.mul(&w).unwrap();
        assert_eq!(gw.mul(&gram).unwrap(), gram);
        assert_eq!(w.mul(&gw).unwrap(), w);
    }
}

#[test]
fn permutation_operator_traces() {
    for q in [2usize, 3] {
        for k in [2usize, 3] {
            let g = GroupOrder::shared(k).unwrap();
            let dim = q.pow(k as u32);
            let mut zero = DMatrix::<f64>::zeros(dim, dim);
            zero[(0, 0)] = 1.0;
            for s in g.iter() {
                let ps = permutation_operator(s, q).unwrap();
                assert_eq!((&zero * &ps).trace(), 1.0);
                for t in g.iter() {
                    let pt = permutation_operator(t, q).unwrap();
                    let cycles = s.compose(t).unwrap().cycle_count();
                    assert_eq!((&ps * &pt).trace(), (q as f64).powi(cycles as i32));
                }
            }
        }
    }
}

#[test]
fn two_replica_values() {
    let wg = weingarten_table(2, 3).unwrap();
    assert_eq!(wg.value(&[1, 1]).unwrap(), &ratio(1, 8));
    assert_eq!(wg.value(&[2]).unwrap(), &ratio(-1, 24));
    assert_eq!(int(1), Rational::one());
}
