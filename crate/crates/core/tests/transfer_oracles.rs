use std::sync::Arc;

use num_traits::One;

use seqtn::rational::{int, ratio, to_f64, Rational};
use seqtn::spectra::{conjecture_check, eigen_full, lambda2_1d, lambda2_2d, ExactMode, Vectors};
use seqtn::transfer1d::{avg_purity, avg_renyi_alpha_trace, build_transfer, identity_transfer, region_contract, RegionSpec, Subsystem};
use seqtn::transfer2d::{assemble_curly, assemble_from, build_bulk};
use seqtn::{GroupOrder, Params, Permutation};

fn p(d: u64, bond: u64) -> Params {
    Params::new(d, bond).unwrap()
}

fn sorted_moduli(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let spec = eigen_full(m, Vectors::None).unwrap();
    let mut v: Vec<f64> = spec.values.iter().map(|z| z.norm()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

#[test]
fn identity_word_is_normalized() {
    for k in 2..=3 {
        let e = Permutation::identity(k);
        for (c, a, r, b, f) in [(0, 1, 0, 1, 0), (2, 1, 3, 2, 1), (1, 2, 1, 1, 0)] {
            let region = RegionSpec::new(c, a, r, b, f).unwrap();
            assert!(region_contract(&region, &e, &e, p(2, 3)).unwrap().is_one(), "k={k} {c},{a},{r},{b},{f}");
        }
    }
}

#[test]
fn first_site_purity_is_page() {
    for d in 2..=4u64 {
        for bond in 2..=4u64 {
            let region = RegionSpec::new(0, 1, 1, 1, 1).unwrap();
            let got = avg_purity(Subsystem::A, &region, p(d, bond)).unwrap();
            assert_eq!(got, ratio((d + bond) as i64, (d * bond + 1) as i64));
        }
    }
}

#[test]
fn third_moment_of_first_site() {
    for (d, bond) in [(2u64, 2u64), (2, 3), (3, 2)] {
        let (da, db) = (int(d as i64), int(bond as i64));
        let n = &da * &db;
        let expect = (&da * &da + &db * &db + int(3) * &da * &db + int(1)) / ((&n + int(1)) * (&n + int(2)));
        let region = RegionSpec::new(0, 1, 2, 1, 1).unwrap();
        assert_eq!(avg_renyi_alpha_trace(3, Subsystem::A, &region, p(d, bond)).unwrap(), expect);
    }
}

#[test]
fn every_transfer_shares_the_identity_spectrum() {
    for k in 2..=4 {
        let params = p(2, 3);
        let reference = sorted_moduli(&identity_transfer(k, params).unwrap().to_f64());
        let g = GroupOrder::shared(k).unwrap();
        let step = if k == 4 { 5 } else { 1 };
        for rho in g.iter().step_by(step) {
            let got = sorted_moduli(&build_transfer(rho, params).unwrap().to_f64());
            for (x, y) in got.iter().zip(&reference) {
                assert!((x - y).abs() < 1e-9, "k={k} ρ={rho}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn second_eigenvalue_does_not_depend_on_k() {
    for (d, bond) in [(2, 2), (2, 3), (3, 2)] {
        let mu2 = to_f64(&lambda2_1d(p(d, bond)));
        for k in 2..=4 {
            let rep = conjecture_check(k, p(d, bond), ExactMode::Off).unwrap();
            assert!(rep.passed(), "{:?}", rep.failures);
            assert!((rep.lambda2 - mu2).abs() < 1e-10);
        }
    }
}

#[test]
fn exact_kernel_at_three_replicas() {
    let rep = conjecture_check(3, p(2, 2), ExactMode::On).unwrap();
    let exact = rep.exact.unwrap();
    assert_eq!(exact.kernel_dim, Some(3));
    assert!(exact.transposition_block);
}

#[test]
fn two_replica_transfer_closed_form() {
    for (d, bond) in [(2i64, 2i64), (3, 2), (2, 5)] {
        let t = identity_transfer(2, p(d as u64, bond as u64)).unwrap().matrix;
        let den = d * d * bond * bond - 1;
        assert_eq!(t[(0, 0)], Rational::one());
        assert_eq!(t[(0, 1)], ratio(d * d * bond - bond, den));
        assert_eq!(t[(1, 0)], int(0));
        assert_eq!(t[(1, 1)], ratio(d * bond * bond - d, den));
    }
}

#[test]
fn swapped_legs_keep_the_spectrum() {
    let params = p(2, 2);
    let e = Permutation::identity(2);
    let bulk = build_bulk(&e, params).unwrap();
    let swapped = Arc::new(bulk.swap_legs());
    for h in 1..=4 {
        let a = sorted_moduli(&assemble_from(bulk.clone(), h).unwrap().to_dense_f64().unwrap());
        let b = sorted_moduli(&assemble_from(swapped.clone(), h).unwrap().to_dense_f64().unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9, "h={h}: {x} vs {y}");
        }
    }
}

#[test]
fn two_dimensional_gap_matches_closed_form() {
    for (d, bond) in [(2, 2), (2, 3), (3, 2)] {
        let params = p(d, bond);
        let mu2 = to_f64(&lambda2_2d(params));
        for h in 1..=3 {
            let t = assemble_curly(&Permutation::identity(2), h, params).unwrap().to_dense_f64().unwrap();
            let spec = eigen_full(&t, Vectors::None).unwrap();
            assert!((spec.groups[0].value.re - 1.0).abs() < 1e-10);
            assert!((spec.groups[1].value.re - mu2).abs() < 1e-10, "h={h}: {} vs {mu2}", spec.groups[1].value.re);
        }
    }
}

#[test]
fn bulk_transposition_entry() {
    let x = Permutation::parse(2, "(1 2)").unwrap();
    let bulk = build_bulk(&Permutation::identity(2), p(2, 2)).unwrap();
    assert_eq!(bulk.get(1, 1, 1), &ratio(10, 21));
    let bulk_x = build_bulk(&x, p(2, 2)).unwrap();
    assert_eq!(bulk_x.get(0, 0, 0), &ratio(10, 21));
}
