//! Replica transfer matrices of random MPS and exact averaged contractions.
//!
//! `⟨τ|T_ρ|θ⟩ = Σ_σ Wg(στ⁻¹, dD) d^{#(σρ)} D^{#(σθ⁻¹)}`, rows and columns in
//! [`GroupOrder`] order. `T_e` is written `C_k` in the structural checks.

use std::collections::HashMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permgroup::{GroupOrder, Permutation};
use crate::rational::{to_f64, Rational, RationalMatrix};
use crate::weingarten::{weingarten_table, WeingartenTable};

/// Replica ceiling for 1D transfer matrices.
pub const MAX_REPLICAS: usize = 7;

/// Physical dimension `d` and bond dimension `D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Params {
    pub d: u64,
    #[serde(rename = "D")]
    pub bond: u64,
}

impl Params {
    pub fn new(d: u64, bond: u64) -> Result<Self> {
        if d < 2 || bond < 2 {
            return Err(Error::InvalidArgument(format!("need d ≥ 2 and D ≥ 2, got d={d}, D={bond}")));
        }
        Ok(Self { d, bond })
    }
}

#[derive(Clone, Debug)]
pub struct TransferMatrix1D {
    pub k: usize,
    pub params: Params,
    pub rho: Permutation,
    pub matrix: RationalMatrix,
}

impl TransferMatrix1D {
    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        self.matrix.to_f64()
    }
}

/// `M[τ, θ] = Σ_σ Wg(στ⁻¹, q) x[σ] y[σθ⁻¹]`, where `x` is indexed by group
/// element and `y` by cycle count. Exact.
pub(crate) fn weingarten_sandwich(
    group: &GroupOrder,
    wg: &WeingartenTable,
    x: &[BigInt],
    y: &[BigInt],
) -> Result<RationalMatrix> {
    let t = group.table()?;
    let n = group.len();
    let den = wg.classes().iter().enumerate().fold(BigInt::one(), |acc, (c, _)| acc.lcm(wg.by_class(c).denom()));
    let scaled: Vec<BigInt> = (0..wg.classes().len()).map(|c| wg.by_class(c).numer() * (&den / wg.by_class(c).denom())).collect();

    let max_w = scaled.iter().map(|v| v.abs()).max().unwrap_or_default();
    let max_x = x.iter().map(|v| v.abs()).max().unwrap_or_default();
    let max_y = y.iter().map(|v| v.abs()).max().unwrap_or_default();
    let bound = max_w * max_x * max_y * BigInt::from(n);
    let numerators: Vec<BigInt> = if bound.bits() < 126 {
        let w: Vec<i128> = scaled.iter().map(|v| v.to_i128().unwrap()).collect();
        let x: Vec<i128> = x.iter().map(|v| v.to_i128().unwrap()).collect();
        let y: Vec<i128> = y.iter().map(|v| v.to_i128().unwrap()).collect();
        let ymat: Vec<i128> = (0..n * n).map(|i| y[t.cycles(t.mul(i / n, t.inv(i % n)))]).collect();
        let rows = crate::par::map_range(n, |tau| {
            let inv_tau = t.inv(tau);
            let mut acc = vec![0i128; n];
            for s in 0..n {
                let v = w[t.class(t.mul(s, inv_tau))] * x[s];
                if v == 0 {
                    continue;
                }
                for (a, ys) in acc.iter_mut().zip(&ymat[s * n..(s + 1) * n]) {
                    *a += v * ys;
                }
            }
            acc
        });
        rows.into_iter().flatten().map(BigInt::from).collect()
    } else {
        let rows = crate::par::map_range(n, |tau| {
            let inv_tau = t.inv(tau);
            (0..n)
                .map(|theta| {
                    let inv_theta = t.inv(theta);
                    (0..n).fold(BigInt::zero(), |acc, s| {
                        acc + &scaled[t.class(t.mul(s, inv_tau))] * &x[s] * &y[t.cycles(t.mul(s, inv_theta))]
                    })
                })
                .collect::<Vec<_>>()
        });
        rows.into_iter().flatten().collect()
    };
    let data = numerators.into_iter().map(|num| BigRational::new(num, den.clone())).collect();
    Ok(RationalMatrix::from_vec(n, n, data))
}

pub(crate) fn powers(base: u64, k: usize) -> Vec<BigInt> {
    (0..=k as u32).map(|e| BigInt::from(base).pow(e)).collect()
}

fn check_replicas(k: usize) -> Result<()> {
    if !(1..=MAX_REPLICAS).contains(&k) {
        return Err(Error::SizeLimit(format!("replica count {k} outside 1..={MAX_REPLICAS}")));
    }
    Ok(())
}

pub fn build_transfer(rho: &Permutation, params: Params) -> Result<TransferMatrix1D> {
    let k = rho.degree();
    check_replicas(k)?;
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let wg = weingarten_table(k, params.d * params.bond)?;
    let r = g.index_of(rho).unwrap();
    let dp = powers(params.d, k);
    let x: Vec<BigInt> = (0..g.len()).map(|s| dp[t.cycles(t.mul(s, r))].clone()).collect();
    let matrix = weingarten_sandwich(&g, &wg, &x, &powers(params.bond, k))?;
    Ok(TransferMatrix1D { k, params, rho: rho.clone(), matrix })
}

/// `C_k = T_e`.
pub fn identity_transfer(k: usize, params: Params) -> Result<TransferMatrix1D> {
    build_transfer(&Permutation::identity(k), params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryVectors {
    /// All ones.
    pub initial: Vec<Rational>,
    /// Indicator of the identity.
    pub final_: Vec<Rational>,
}

pub fn boundary_vectors(k: usize) -> Result<BoundaryVectors> {
    let n = GroupOrder::shared(k)?.len();
    let mut final_ = vec![Rational::zero(); n];
    final_[0] = Rational::one();
    Ok(BoundaryVectors { initial: vec![Rational::one(); n], final_ })
}

/// Contraction of the last site, whose bond is part of the physical space:
/// `v[τ] = Σ_σ Wg(στ⁻¹, dD) (dD)^{#(σρ)}`.
pub fn final_site_vector(rho: &Permutation, params: Params) -> Result<Vec<Rational>> {
    let k = rho.degree();
    check_replicas(k)?;
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let q = params.d * params.bond;
    let wg = weingarten_table(k, q)?;
    let qp = powers(q, k);
    let r = g.index_of(rho).unwrap();
    Ok((0..g.len())
        .map(|tau| {
            let it = t.inv(tau);
            (0..g.len()).fold(Rational::zero(), |acc, s| {
                acc + wg.by_class(t.class(t.mul(s, it))) * BigRational::from_integer(qp[t.cycles(t.mul(s, r))].clone())
            })
        })
        .collect())
}

/// Builds and memoizes transfer matrices for one (k, d, D).
pub struct TransferCache {
    params: Params,
    k: usize,
    mats: HashMap<Permutation, Arc<TransferMatrix1D>>,
}

impl TransferCache {
    pub fn new(k: usize, params: Params) -> Self {
        Self { params, k, mats: HashMap::new() }
    }

    pub fn get(&mut self, rho: &Permutation) -> Result<Arc<TransferMatrix1D>> {
        if rho.degree() != self.k {
            return Err(Error::DegreeMismatch(rho.degree(), self.k));
        }
        if let Some(m) = self.mats.get(rho) {
            return Ok(m.clone());
        }
        let m = Arc::new(build_transfer(rho, self.params)?);
        self.mats.insert(rho.clone(), m.clone());
        Ok(m)
    }
}

/// `⟨I_k| Π_i T_{ρ_i}^{p_i} |F_k⟩` exactly.
pub fn contract(word: &[(Permutation, usize)], params: Params) -> Result<Rational> {
    let k = word.first().map_or(1, |(p, _)| p.degree());
    let mut cache = TransferCache::new(k, params);
    contract_with(&mut cache, word, &boundary_vectors(k)?.final_)
}

fn contract_with(cache: &mut TransferCache, word: &[(Permutation, usize)], last: &[Rational]) -> Result<Rational> {
    let mut v = last.to_vec();
    for (rho, power) in word.iter().rev() {
        let m = cache.get(rho)?;
        for _ in 0..*power {
            v = m.matrix.mul_vec(&v);
        }
    }
    Ok(v.iter().fold(Rational::zero(), |acc, x| acc + x))
}

/// Sites: `c` prefix, `a` in A, `r` gap, `b` in B, `f` suffix (the last of
/// which carries the bond).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub c: usize,
    pub a: usize,
    pub r: usize,
    pub b: usize,
    pub f: usize,
}

impl RegionSpec {
    pub fn new(c: usize, a: usize, r: usize, b: usize, f: usize) -> Result<Self> {
        if a == 0 || b == 0 {
            return Err(Error::InvalidArgument("regions A and B need at least one site".into()));
        }
        Ok(Self { c, a, r, b, f })
    }

    /// Parses `c,a,r,b,f`.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad region {text:?}"))))
            .collect::<Result<_>>()?;
        match v[..] {
            [c, a, r, b, f] => Self::new(c, a, r, b, f),
            _ => Err(Error::InvalidArgument(format!("region needs five counts c,a,r,b,f: {text:?}"))),
        }
    }

    pub fn sites(&self) -> usize {
        self.c + self.a + self.r + self.b + self.f
    }

    /// 0-based site indices of A and B.
    pub fn a_sites(&self) -> std::ops::Range<usize> {
        self.c..self.c + self.a
    }

    pub fn b_sites(&self) -> std::ops::Range<usize> {
        let s = self.c + self.a + self.r;
        s..s + self.b
    }
}

/// Which subsystem carries the nontrivial permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subsystem {
    A,
    B,
    AB,
}

/// `⟨I| T_e^c T_α^a T_e^r T_β^b …|F⟩` where the trailing `f` sites collapse.
pub fn region_contract(region: &RegionSpec, alpha: &Permutation, beta: &Permutation, params: Params) -> Result<Rational> {
    let k = alpha.degree();
    let e = Permutation::identity(k);
    let mut cache = TransferCache::new(k, params);
    region_contract_with(&mut cache, region, alpha, beta, &e)
}

fn region_contract_with(
    cache: &mut TransferCache,
    region: &RegionSpec,
    alpha: &Permutation,
    beta: &Permutation,
    e: &Permutation,
) -> Result<Rational> {
    if region.f >= 1 {
        let word = [(e.clone(), region.c), (alpha.clone(), region.a), (e.clone(), region.r), (beta.clone(), region.b)];
        contract_with(cache, &word, &boundary_vectors(e.degree())?.final_)
    } else {
        let last = final_site_vector(beta, cache.params)?;
        let word = [(e.clone(), region.c), (alpha.clone(), region.a), (e.clone(), region.r), (beta.clone(), region.b - 1)];
        contract_with(cache, &word, &last)
    }
}

/// `E tr ρ_R^α` with the cyclic shift `i ↦ i+1 mod α` on the sites of R.
pub fn avg_renyi_alpha_trace(alpha: usize, which: Subsystem, region: &RegionSpec, params: Params) -> Result<Rational> {
    if alpha < 2 {
        return Err(Error::InvalidArgument("α must be at least 2".into()));
    }
    if alpha > 6 {
        return Err(Error::SizeLimit(format!("α = {alpha} needs more than 6 replicas")));
    }
    let shift: Vec<usize> = (1..=alpha).map(|i| i % alpha + 1).collect();
    let x = Permutation::from_images(&shift)?;
    let e = Permutation::identity(alpha);
    let (pa, pb) = match which {
        Subsystem::A => (&x, &e),
        Subsystem::B => (&e, &x),
        Subsystem::AB => (&x, &x),
    };
    region_contract(region, pa, pb, params)
}

/// Exact `(E tr ρ_AB², E tr ρ_A², E tr ρ_B²)`.
pub fn renyi2_terms(region: &RegionSpec, params: Params) -> Result<[Rational; 3]> {
    let x = Permutation::parse(2, "(1 2)")?;
    let e = Permutation::identity(2);
    let mut cache = TransferCache::new(2, params);
    let ab = region_contract_with(&mut cache, region, &x, &x, &e)?;
    let a = region_contract_with(&mut cache, region, &x, &e, &e)?;
    let b = region_contract_with(&mut cache, region, &e, &x, &e)?;
    Ok([ab, a, b])
}

/// Annealed `E I₂(A:B) = log E tr ρ_AB² − log E tr ρ_A² − log E tr ρ_B²`.
pub fn avg_renyi2_mi(region: &RegionSpec, params: Params) -> Result<f64> {
    let [ab, a, b] = renyi2_terms(region, params)?;
    Ok(ln_rational(&ab) - ln_rational(&a) - ln_rational(&b))
}

/// Natural log of a positive rational without losing precision on tiny ratios.
pub fn ln_rational(x: &Rational) -> f64 {
    let num = x.numer();
    let den = x.denom();
    let shift_n = num.bits().saturating_sub(900);
    let shift_d = den.bits().saturating_sub(900);
    let n = (num >> shift_n).to_f64().unwrap();
    let d = (den >> shift_d).to_f64().unwrap();
    n.ln() - d.ln() + (shift_n as f64 - shift_d as f64) * std::f64::consts::LN_2
}

/// `E N(A:B) = E‖ρ_AB − ρ_A⊗ρ_B‖₂²` through four replicas.
pub fn avg_hs_norm(region: &RegionSpec, params: Params) -> Result<Rational> {
    let t12 = Permutation::parse(4, "(1 2)")?;
    let t34 = Permutation::parse(4, "(3 4)")?;
    let t13 = Permutation::parse(4, "(1 3)")?;
    let e = Permutation::identity(4);
    let mut cache = TransferCache::new(4, params);
    let first = region_contract_with(&mut cache, region, &t12, &t12, &e)?;
    let second = region_contract_with(&mut cache, region, &t12, &t34, &e)?;
    let cross = region_contract_with(&mut cache, region, &t12, &t13, &e)?;
    Ok(first + second - cross * BigRational::from_integer(BigInt::from(2)))
}

/// Average purity `E tr ρ²` of a subsystem.
pub fn avg_purity(which: Subsystem, region: &RegionSpec, params: Params) -> Result<Rational> {
    avg_renyi_alpha_trace(2, which, region, params)
}

/// One violated structural identity.
#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub identity: &'static str,
    pub k: usize,
    pub d: u64,
    #[serde(rename = "D")]
    pub bond: u64,
    pub tau: String,
    pub theta: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct StructuralReport {
    pub conjugation_checked: usize,
    pub recursion_checked: usize,
    pub similarity_checked: usize,
    pub violations: Vec<Violation>,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn failed_identities(&self) -> Vec<&'static str> {
        let mut ids: Vec<&'static str> = self.violations.iter().map(|v| v.identity).collect();
        ids.dedup();
        ids
    }
}

/// Exhaustive checks of conjugation covariance, the recursion onto `C_{k−1}`
/// for columns fixing k, and `⟨τ|T_ρ|θ⟩ = ⟨ρτ|C_k|ρθ⟩`. At most `limit`
/// violations are recorded per identity.
pub fn structural_checks(k: usize, params: Params) -> Result<StructuralReport> {
    if !(2..=5).contains(&k) {
        return Err(Error::SizeLimit(format!("structural checks need 2 ≤ k ≤ 5, got {k}")));
    }
    const LIMIT: usize = 20;
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let n = g.len();
    let c = identity_transfer(k, params)?.matrix;
    let mut report = StructuralReport::default();
    let record = |report: &mut StructuralReport, identity, tau: usize, theta: usize, detail: String| {
        if report.violations.iter().filter(|v| v.identity == identity).count() < LIMIT {
            report.violations.push(Violation {
                identity,
                k,
                d: params.d,
                bond: params.bond,
                tau: g.get(tau).to_string(),
                theta: g.get(theta).to_string(),
                detail,
            });
        }
    };

    for pi in 0..n {
        let pinv = t.inv(pi);
        for tau in 0..n {
            let ct = t.mul(t.mul(pi, tau), pinv);
            for theta in 0..n {
                let cth = t.mul(t.mul(pi, theta), pinv);
                report.conjugation_checked += 1;
                if c[(tau, theta)] != c[(ct, cth)] {
                    record(&mut report, "conjugation", tau, theta, format!("π = {}", g.get(pi)));
                }
            }
        }
    }

    let lower_group = GroupOrder::shared(k - 1)?;
    let lower = identity_transfer(k - 1, params)?.matrix;
    for theta in 0..n {
        let Some(theta_down) = g.get(theta).restrict() else { continue };
        let jt = lower_group.index_of(&theta_down).unwrap();
        for tau in 0..n {
            report.recursion_checked += 1;
            let expected = match g.get(tau).restrict() {
                Some(tau_down) => lower[(lower_group.index_of(&tau_down).unwrap(), jt)].clone(),
                None => Rational::zero(),
            };
            if c[(tau, theta)] != expected {
                record(&mut report, "recursion", tau, theta, format!("{} vs {}", c[(tau, theta)], expected));
            }
        }
    }

    for rho in 0..n {
        let tr = build_transfer(g.get(rho), params)?.matrix;
        for tau in 0..n {
            for theta in 0..n {
                report.similarity_checked += 1;
                if tr[(tau, theta)] != c[(t.mul(rho, tau), t.mul(rho, theta))] {
                    record(&mut report, "similarity", tau, theta, format!("ρ = {}", g.get(rho)));
                }
            }
        }
    }
    Ok(report)
}

/// Float view of an exact value.
pub fn approx(x: &Rational) -> f64 {
    to_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{int, ratio};

    fn params(d: u64, bond: u64) -> Params {
        Params::new(d, bond).unwrap()
    }

    #[test]
    fn params_validated() {
        assert!(Params::new(1, 2).is_err());
        assert!(Params::new(2, 1).is_err());
    }

    #[test]
    fn two_replica_identity_transfer() {
        let t = identity_transfer(2, params(2, 2)).unwrap().matrix;
        assert_eq!(t.to_rows(), vec![vec![int(1), ratio(2, 5)], vec![int(0), ratio(2, 5)]]);
    }

    #[test]
    fn boundary() {
        let b = boundary_vectors(2).unwrap();
        assert_eq!(b.initial, vec![int(1), int(1)]);
        assert_eq!(b.final_, vec![int(1), int(0)]);
        let b3 = boundary_vectors(3).unwrap();
        let overlap = b3.initial.iter().zip(&b3.final_).fold(int(0), |acc, (x, y)| acc + x * y);
        assert_eq!(overlap, int(1));
    }

    #[test]
    fn final_site_vector_is_indicator_when_k_fits() {
        let x = Permutation::parse(3, "(1 2 3)").unwrap();
        let v = final_site_vector(&x, params(2, 2)).unwrap();
        let g = GroupOrder::shared(3).unwrap();
        let expect: Vec<Rational> =
            g.iter().map(|p| if *p == x.inverse() { int(1) } else { int(0) }).collect();
        assert_eq!(v, expect);
    }

    #[test]
    fn region_parsing() {
        let r = RegionSpec::parse("0, 1,5,1,1").unwrap();
        assert_eq!(r, RegionSpec { c: 0, a: 1, r: 5, b: 1, f: 1 });
        assert_eq!(r.sites(), 8);
        assert_eq!(r.b_sites(), 6..7);
        assert!(RegionSpec::parse("0,0,5,1,1").is_err());
        assert!(RegionSpec::parse("1,2").is_err());
    }

    #[test]
    fn mismatched_word_rejected() {
        let word = [(Permutation::identity(2), 1), (Permutation::identity(3), 1)];
        assert!(matches!(contract(&word, params(2, 2)), Err(Error::DegreeMismatch(3, 2))));
    }

    #[test]
    fn suffix_without_sites_uses_final_vector() {
        // B as the final site: purity of a dD-dimensional site against the rest
        let region = RegionSpec::new(0, 1, 2, 1, 0).unwrap();
        let with = RegionSpec::new(0, 1, 2, 1, 1).unwrap();
        let p = params(2, 2);
        assert_eq!(
            avg_purity(Subsystem::A, &region, p).unwrap(),
            avg_purity(Subsystem::A, &with, p).unwrap()
        );
        let pb = avg_purity(Subsystem::B, &region, p).unwrap();
        assert!(pb > ratio(0, 1) && pb <= int(1));
    }

    #[test]
    fn ln_of_tiny_rational() {
        let x = Rational::new(BigInt::one(), BigInt::from(10).pow(400));
        assert!((ln_rational(&x) + 400.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn checks_reject_large_k() {
        assert!(structural_checks(6, params(2, 2)).is_err());
    }
}
