//! Acceptance gate. One PASS/FAIL line per criterion.
//!
//! Criteria listed in `BLOCKED` fail for mathematical reasons recorded next to
//! them; they are still evaluated in full and must keep failing, otherwise the
//! entry is stale and the run errors.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{One, Zero};

use seqtn::ensemble::{bound_suite, decay_experiment, mc_average, mc_twirl, tail_check, Geometry, McConfig, MeasureId};
use seqtn::rational::{int, ratio, to_f64, Rational};
use seqtn::spectra::{conjecture_check, eigen_full, lambda2_1d, lambda2_2d, xi_closed_form, Dim, ExactMode, Vectors};
use seqtn::transfer1d::{avg_hs_norm, avg_purity, build_transfer, identity_transfer, structural_checks, RegionSpec, Subsystem};
use seqtn::transfer2d::{avg_measures_2d, lemma_checks, Measure2D, Region2D};
use seqtn::weingarten::{permutation_operator, twirl_apply, twirl_of_permutation};
use seqtn::{GroupOrder, Params, Permutation};

const BLOCKED: &[(u32, &str)] = &[
    (3, "block recursion onto C_{k-1} fails at k=5, d=D=2 where k > dD and Wg is the pseudo-inverse"),
    (5, "entrywise no-fixed-point prefactor exceeds beta/9 at (d,D) = (2,2), (2,3), (3,2)"),
];

const GRID: [(u64, u64); 4] = [(2, 2), (2, 3), (3, 2), (3, 3)];

fn p(d: u64, b: u64) -> Params {
    Params::new(d, b).unwrap()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(mc: f64, se: f64, exact: f64, n_se: f64) -> bool {
    (mc - exact).abs() <= n_se * se
}

fn c1_exact_transfer() -> Outcome {
    let t = build_transfer(&Permutation::identity(2), p(2, 2)).unwrap();
    let want = [[int(1), ratio(2, 5)], [int(0), ratio(2, 5)]];
    let mut ok = (0..2).all(|i| (0..2).all(|j| t.matrix[(i, j)] == want[i][j]));
    let mut bad = Vec::new();
    for d in 2..=4u64 {
        for b in 2..=4u64 {
            let m = identity_transfer(2, p(d, b)).unwrap().matrix;
            let (di, bi) = (int(d as i64), int(b as i64));
            let den = &di * &di * &bi * &bi - int(1);
            let alpha = (&di * &di * &bi - &bi) / &den;
            let beta = (&di * &bi * &bi - &di) / &den;
            if m[(0, 0)] != Rational::one() || m[(0, 1)] != alpha || !m[(1, 0)].is_zero() || m[(1, 1)] != beta {
                ok = false;
                bad.push(format!("({d},{b})"));
            }
        }
    }
    outcome(ok, if bad.is_empty() { "T_e(2,2) = [[1,2/5],[0,2/5]]; 9 grid points match".into() } else { format!("mismatch at {}", bad.join(" ")) })
}

fn c2_conjecture() -> Outcome {
    let mut fails = Vec::new();
    let mut n = 0;
    for k in 2..=5 {
        for (d, b) in GRID {
            let r = conjecture_check(k, p(d, b), ExactMode::On).unwrap();
            n += 1;
            if !r.passed() {
                fails.push(format!("k={k} ({d},{b}): {}", r.failures.join("; ")));
            }
        }
    }
    let t0 = Instant::now();
    let r6 = conjecture_check(6, p(2, 2), ExactMode::On).unwrap();
    let t6 = t0.elapsed();
    if !r6.passed() {
        fails.push(format!("k=6 (2,2): {}", r6.failures.join("; ")));
    }
    if t6 > Duration::from_secs(600) {
        fails.push(format!("k=6 took {t6:?}"));
    }
    let kern = r6.exact.as_ref().and_then(|e| e.kernel_dim);
    let ok = fails.is_empty() && kern == Some(15);
    outcome(ok, if ok { format!("{n} grid points plus k=6 (kernel 15, {:.1}s)", t6.as_secs_f64()) } else { fails.join(" | ") })
}

fn c3_structural() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    for k in 2..=5 {
        for (d, b) in GRID {
            let r = structural_checks(k, p(d, b)).unwrap();
            if !r.passed() {
                let first = &r.violations[0];
                fails.push(format!("k={k} ({d},{b}) {:?} e.g. {}", r.failed_identities(), first.detail));
            }
        }
    }
    let el = t0.elapsed();
    let ok = fails.is_empty() && el < Duration::from_secs(120);
    outcome(ok, if fails.is_empty() { "all identities hold".into() } else { fails.join(" | ") })
}

fn c4_props() -> Outcome {
    let mut fails = Vec::new();
    for k in 2..=5 {
        for (d, b) in GRID {
            let c = identity_transfer(k, p(d, b)).unwrap().to_f64();
            let s = eigen_full(&c, Vectors::All).unwrap();
            let g = &s.groups[0];
            let mut why = Vec::new();
            if s.max_imag() > 1e-9 {
                why.push(format!("imag {:.1e}", s.max_imag()));
            }
            if s.min_real() < -1e-9 {
                why.push(format!("min real {:.1e}", s.min_real()));
            }
            if (g.value.re - 1.0).abs() > 1e-9 || g.multiplicity != 1 {
                why.push("λ₁ ≠ 1 simple".into());
            }
            if s.diagonalizable() != Some(true) || s.residual.map_or(true, |r| r > 1e-8) {
                why.push(format!("residual {:?}", s.residual));
            }
            if !why.is_empty() {
                fails.push(format!("k={k} ({d},{b}) {}", why.join(", ")));
            }
        }
    }
    outcome(fails.is_empty(), if fails.is_empty() { "real, non-negative, λ₁ = 1 simple, diagonalizable on 16 points".into() } else { fails.join(" | ") })
}

fn c5_lemmas() -> Outcome {
    let t0 = Instant::now();
    let mut fails = Vec::new();
    for (d, b) in GRID {
        for h in 1..=6 {
            let r = lemma_checks(2, h, p(d, b)).unwrap();
            if !r.passed() {
                fails.push(format!("k=2 h={h} ({d},{b}): {}", r.failures.join("; ")));
            }
        }
        for h in 1..=3 {
            let r = lemma_checks(4, h, p(d, b)).unwrap();
            if !r.passed() {
                fails.push(format!("k=4 h={h} ({d},{b}): {}", r.failures.join("; ")));
            }
        }
    }
    let el = t0.elapsed();
    if el > Duration::from_secs(900) {
        fails.push(format!("took {el:?}"));
    }
    outcome(fails.is_empty(), if fails.is_empty() { "k=2 h≤6 and k=4 h≤3 on 4 points".into() } else { fails.join(" | ") })
}

fn c6_lengths() -> Outcome {
    let x1 = xi_closed_form(Dim::One, p(2, 2)).xi;
    let x2 = xi_closed_form(Dim::Two, p(2, 2)).xi;
    let mut fails = Vec::new();
    if (x1 - 1.0914).abs() > 1e-4 {
        fails.push(format!("ξ_1D = {x1}"));
    }
    if (x2 - 0.6031).abs() > 1e-4 {
        fails.push(format!("ξ_2D = {x2}"));
    }
    let (lo1, hi2) = (ratio(3, 4), ratio(8, 21));
    for d in 2..=5u64 {
        let mut prev: Option<(f64, f64)> = None;
        for b in 2..=32u64 {
            let pp = p(d, b);
            let (a, c) = (xi_closed_form(Dim::One, pp).xi, xi_closed_form(Dim::Two, pp).xi);
            if let Some((pa, pc)) = prev {
                if a <= pa || c >= pc {
                    fails.push(format!("monotonicity at d={d} D={b}"));
                }
            }
            prev = Some((a, c));
            let z1 = lambda2_1d(pp) * int(d as i64);
            let z2 = lambda2_2d(pp) * int(d as i64);
            if z1 < lo1 || z1 >= Rational::one() || z2 <= Rational::zero() || z2 > hi2 {
                fails.push(format!("ζ range at d={d} D={b}"));
            }
        }
    }
    if lambda2_2d(p(2, 2)) * int(2) != hi2 {
        fails.push("ζ_2D(2,2) ≠ 8/21".into());
    }
    outcome(fails.is_empty(), if fails.is_empty() { format!("ξ_1D = {x1:.6}, ξ_2D = {x2:.6}; grid monotone; ζ ranges hold") } else { fails.join(" | ") })
}

fn c7_fig2() -> Outcome {
    let t0 = Instant::now();
    let base = RegionSpec::new(0, 1, 5, 1, 1).unwrap();
    let rs = [5, 7, 9, 11, 13, 15];
    let mut parts = Vec::new();
    let mut ok = true;
    for ((d, b), tol) in [((2, 2), 0.10), ((2, 3), 0.12)] {
        let r = decay_experiment(&base, &rs, p(d, b), MeasureId::VnMi, 2000, 7).unwrap();
        ok &= r.rel_err <= tol;
        parts.push(format!("({d},{b}) ξ̂ = {:.4} ± {:.4} vs {:.4} ({:.1}%)", r.xi_hat, r.xi_stderr, r.xi_closed_form, 100.0 * r.rel_err));
    }
    ok &= t0.elapsed() < Duration::from_secs(1200);
    outcome(ok, parts.join(", "))
}

fn c8_mc_vs_exact() -> Outcome {
    let pp = p(2, 2);
    let mut parts = Vec::new();
    let mut ok = true;
    let region = RegionSpec::new(0, 1, 1, 1, 1).unwrap();
    let exact = avg_purity(Subsystem::A, &region, pp).unwrap();
    ok &= exact == ratio(4, 5);
    let cfg = McConfig { geometry: Geometry::Mps { region }, params: pp, measure: MeasureId::PurityA, samples: 50_000, seed: 8, tag: 0 };
    let mc = mc_average(&cfg).unwrap();
    ok &= within(mc.mean, mc.stderr, 0.8, 3.0);
    parts.push(format!("E tr ρ_A² exact {exact}, MC {:.5} ± {:.5}", mc.mean, mc.stderr));
    for r in [3, 5] {
        let region = RegionSpec::new(0, 1, r, 1, 1).unwrap();
        let exact = to_f64(&avg_hs_norm(&region, pp).unwrap());
        let cfg = McConfig { geometry: Geometry::Mps { region }, params: pp, measure: MeasureId::HsNorm, samples: 50_000, seed: 8, tag: r as u64 };
        let mc = mc_average(&cfg).unwrap();
        ok &= within(mc.mean, mc.stderr, exact, 3.0);
        parts.push(format!("E N(r={r}) exact {exact:.6}, MC {:.6} ± {:.6}", mc.mean, mc.stderr));
    }
    outcome(ok, parts.join("; "))
}

fn c9_isotns() -> Outcome {
    let pp = p(2, 2);
    let mut parts = Vec::new();
    let mut ok = true;
    for c in [0, 1] {
        let region = Region2D { c, a: 1, r: 0, b: 0, h: 1 };
        let exact = avg_measures_2d(Measure2D::Purity, &region, pp).unwrap().value;
        let geometry = Geometry::iso_columns(2, 3, c, 1, 0, 0, 1).unwrap();
        let mc = mc_average(&McConfig { geometry, params: pp, measure: MeasureId::PurityA, samples: 20_000, seed: 9, tag: c as u64 }).unwrap();
        ok &= within(mc.mean, mc.stderr, exact, 3.0);
        parts.push(format!("column {c}: exact {exact:.5}, MC {:.5} ± {:.5}", mc.mean, mc.stderr));
    }
    outcome(ok, parts.join("; "))
}

fn c10_bounds() -> Outcome {
    let pp = p(2, 2);
    let mut ok = true;
    let mut parts = Vec::new();
    for region in [RegionSpec::new(0, 1, 1, 1, 1).unwrap(), RegionSpec::new(2, 2, 2, 1, 1).unwrap()] {
        let rep = bound_suite(&region, pp, 1000, 10).unwrap();
        ok &= rep.norm_bound_violations == 0 && rep.schatten_violations == 0;
        parts.push(format!("{}+{} violations", rep.norm_bound_violations, rep.schatten_violations));
    }
    let base = RegionSpec::new(0, 1, 5, 1, 1).unwrap();
    let rs = [5u32, 9, 13];
    let xi = xi_closed_form(Dim::One, pp).xi;
    // smallest K with E N(r) ≤ K e^{−r/ξ} on the checked distances
    let k_n = rs
        .iter()
        .map(|&r| to_f64(&avg_hs_norm(&RegionSpec { r: r as usize, ..base }, pp).unwrap()) * (r as f64 / xi).exp())
        .fold(0.0, f64::max);
    let k_t = (pp.bond * pp.bond) as f64 / std::f64::consts::SQRT_2 * k_n.sqrt();
    for (m, k) in [(MeasureId::HsNorm, k_n), (MeasureId::TraceDist, k_t)] {
        let rows = tail_check(&base, &rs, pp, m, 0.5, k, 2000, 10).unwrap();
        ok &= rows.iter().all(|r| r.ok);
        parts.push(format!("{m} tail fractions {:?}", rows.iter().map(|r| format!("{:.3}≤{:.3}", r.exceed_fraction, r.allowed)).collect::<Vec<_>>()));
    }
    outcome(ok, parts.join("; "))
}

fn c11_twirl() -> Outcome {
    let mut x = DMatrix::<Complex64>::zeros(4, 4);
    x[(1, 1)] = Complex64::new(1.0, 0.0);
    let exact = twirl_apply(&x, 2, 2).unwrap();
    let (mean, se) = mc_twirl(&x, 2, 2, 20_000, 11).unwrap();
    let mut worst = 0.0f64;
    let mut ok = true;
    for i in 0..4 {
        for j in 0..4 {
            let (dm, s) = (mean[(i, j)] - exact[(i, j)], se[(i, j)]);
            ok &= dm.re.abs() <= 5.0 * s.re + 1e-12 && dm.im.abs() <= 5.0 * s.im + 1e-12;
            worst = worst.max(dm.re.abs() / s.re.max(1e-300)).max(dm.im.abs() / s.im.max(1e-300));
        }
    }
    // fixed points: the twirl of P_ρ is P_ρ. For k ≤ q the exact coefficients
    // are the indicator of ρ; for k > q the P_σ are dependent, so the
    // coefficients are checked by resumming them into an operator.
    for k in 2..=3 {
        for q in [2u64, 3] {
            let g = GroupOrder::shared(k).unwrap();
            let ops: Vec<DMatrix<f64>> = g.iter().map(|s| permutation_operator(s, q as usize).unwrap()).collect();
            for (idx, rho) in g.iter().enumerate() {
                let c = twirl_of_permutation(rho, q).unwrap();
                if k as u64 <= q {
                    ok &= c.iter().enumerate().all(|(i, v)| if i == idx { v.is_one() } else { v.is_zero() });
                }
                let resummed = c.iter().zip(&ops).fold(DMatrix::zeros(ops[0].nrows(), ops[0].ncols()), |acc, (v, op)| acc + op * to_f64(v));
                ok &= (resummed - &ops[idx]).amax() < 1e-12;
                let pr = ops[idx].map(|v| Complex64::new(v, 0.0));
                ok &= (twirl_apply(&pr, k, q as usize).unwrap() - &pr).camax() < 1e-10;
            }
        }
    }
    outcome(ok, format!("max |MC − exact|/stderr = {worst:.2}; permutation operators fixed"))
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn() -> Outcome); 11] = [
        (1, "exact transfer identity", c1_exact_transfer),
        (2, "second eigenvalue of C_k", c2_conjecture),
        (3, "conjugation, recursion, similarity", c3_structural),
        (4, "spectral properties of C_k", c4_props),
        (5, "2D column transfer lemmas", c5_lemmas),
        (6, "closed-form correlation lengths", c6_lengths),
        (7, "decay fit of von Neumann MI", c7_fig2),
        (8, "MC against exact 1D contractions", c8_mc_vs_exact),
        (9, "isoTNS purity oracle", c9_isotns),
        (10, "norm bounds and tail envelope", c10_bounds),
        (11, "twirl oracle", c11_twirl),
    ];
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let t0 = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {} ({:.1}s)", o.detail, t0.elapsed().as_secs_f64());
        match (BLOCKED.iter().find(|b| b.0 == id), o.pass) {
            (Some((_, why)), false) => println!("       blocked: {why}"),
            (Some(_), true) => unexpected.push(format!("criterion {id} passes but is listed as blocked")),
            (None, false) => unexpected.push(format!("criterion {id} failed")),
            (None, true) => {}
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            eprintln!("{u}");
        }
        ExitCode::FAILURE
    }
}
