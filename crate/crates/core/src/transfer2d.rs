//! isoTNS transfer tensors and height-h column ("curly") transfer matrices.
//!
//! Geometry: rows grow upward from the orthogonality hypersurface (the bottom
//! row), columns grow to the right. Every site draws a unitary of `U(dD²)`
//! acting on `|0⟩_d ⊗ left ⊗ down` and emitting `phys ⊗ right ⊗ up`, so one
//! replica label `τ` sits on the two input legs and the bulk tensor is
//!
//! `t_ρ[τ; θ, ν] = Σ_σ Wg(στ⁻¹, dD²) d^{#(σρ)} D^{#(σθ⁻¹)} D^{#(σν⁻¹)}`
//!
//! with `θ` on the right leg and `ν` on the up leg. A column of height h has
//! `𝒯_ρ[o, i] = Π_y t_ρ[o_y; i_y, o_{y+1}]` with `o_{h+1} = e`, indices
//! `Σ_y digit_y · (k!)^{y−1}` (bottom digit least significant).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::permgroup::{GroupOrder, Permutation};
use crate::rational::{int, to_f64, Rational, RationalJson, RationalMatrix};
use crate::spectra::{eigen_full, lambda2_2d, Vectors, GROUP_TOL};
use crate::transfer1d::{identity_transfer, Params};
use crate::weingarten::weingarten_table;

#[derive(Clone, Debug)]
pub struct BulkTensor {
    pub k: usize,
    pub params: Params,
    pub rho: Permutation,
    n: usize,
    exact: Vec<Rational>,
    approx: Vec<f64>,
}

impl BulkTensor {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `t[τ; θ, ν]`.
    pub fn get(&self, tau: usize, theta: usize, nu: usize) -> &Rational {
        &self.exact[(tau * self.n + theta) * self.n + nu]
    }

    pub fn get_f64(&self, tau: usize, theta: usize, nu: usize) -> f64 {
        self.approx[(tau * self.n + theta) * self.n + nu]
    }

    /// Four-leg view (left, right, down, up); the input legs share one label.
    pub fn entry(&self, left: usize, right: usize, down: usize, up: usize) -> Rational {
        if left == down {
            self.get(left, right, up).clone()
        } else {
            Rational::zero()
        }
    }

    /// Exchanges the roles of the right and up legs.
    pub fn swap_legs(&self) -> BulkTensor {
        let n = self.n;
        let idx = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
        let mut exact = self.exact.clone();
        let mut approx = self.approx.clone();
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    exact[idx(a, b, c)] = self.exact[idx(a, c, b)].clone();
                    approx[idx(a, b, c)] = self.approx[idx(a, c, b)];
                }
            }
        }
        BulkTensor { exact, approx, ..self.clone() }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k != 2 && k != 4 {
        return Err(Error::SizeLimit(format!("2D transfer tensors support k ∈ {{2, 4}}, got {k}")));
    }
    Ok(())
}

/// `(1/L) Σ_σ w[class(στ⁻¹)] Π_j f_j(σ)` for each τ, where each factor is a
/// power indexed by the cycle count of `σ·g` for a group element `g` fixed per
/// output slot. Exact, with i128 accumulation.
fn replica_sum(k: usize, q: u64, weights: impl Fn(usize, usize) -> Option<i128> + Sync, outputs: usize) -> Result<Vec<Rational>> {
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let n = g.len();
    let wg = weingarten_table(k, q)?;
    let classes = wg.classes().len();
    let den = (0..classes).fold(BigInt::one(), |acc, c| acc.lcm(wg.by_class(c).denom()));
    let w: Vec<i128> = (0..classes)
        .map(|c| (wg.by_class(c).numer() * (&den / wg.by_class(c).denom())).to_i128())
        .collect::<Option<_>>()
        .ok_or_else(|| Error::SizeLimit("Weingarten numerators exceed 128 bits".into()))?;
    let rows = crate::par::map_range(n, |tau| {
        let it = t.inv(tau);
        (0..outputs)
            .map(|slot| {
                let mut acc: i128 = 0;
                for s in 0..n {
                    let c = w[t.class(t.mul(s, it))];
                    if c == 0 {
                        continue;
                    }
                    let f = weights(s, slot)?;
                    acc = acc.checked_add(c.checked_mul(f)?)?;
                }
                Some(acc)
            })
            .collect::<Option<Vec<i128>>>()
    });
    let mut out = Vec::with_capacity(n * outputs);
    for row in rows {
        let row = row.ok_or_else(|| Error::SizeLimit("2D transfer entries overflow 128-bit accumulation".into()))?;
        out.extend(row.into_iter().map(|x| BigRational::new(BigInt::from(x), den.clone())));
    }
    Ok(out)
}

fn pow_table(base: u64, k: usize) -> Result<Vec<i128>> {
    (0..=k as u32)
        .map(|e| (base as i128).checked_pow(e).ok_or_else(|| Error::SizeLimit(format!("{base}^{e} overflows"))))
        .collect()
}

type BulkKey = (Permutation, Params);

fn bulk_cache() -> &'static Mutex<HashMap<BulkKey, Arc<BulkTensor>>> {
    static CACHE: OnceLock<Mutex<HashMap<BulkKey, Arc<BulkTensor>>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Bulk tensor, memoized per (ρ, d, D).
pub fn build_bulk(rho: &Permutation, params: Params) -> Result<Arc<BulkTensor>> {
    let k = rho.degree();
    check_k(k)?;
    let key = (rho.clone(), params);
    if let Some(b) = bulk_cache().lock().unwrap().get(&key) {
        return Ok(b.clone());
    }
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let n = g.len();
    let r = g.index_of(rho).unwrap();
    let dp = pow_table(params.d, k)?;
    let bp = pow_table(params.bond, k)?;
    let weights = |s: usize, slot: usize| {
        let (theta, nu) = (slot / n, slot % n);
        dp[t.cycles(t.mul(s, r))]
            .checked_mul(bp[t.cycles(t.mul(s, t.inv(theta)))])?
            .checked_mul(bp[t.cycles(t.mul(s, t.inv(nu)))])
    };
    let exact = replica_sum(k, params.d * params.bond * params.bond, weights, n * n)?;
    let approx = exact.iter().map(to_f64).collect();
    let bulk = Arc::new(BulkTensor { k, params, rho: rho.clone(), n, exact, approx });
    bulk_cache().lock().unwrap().insert(key, bulk.clone());
    Ok(bulk)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundaryKind {
    Top,
    Right,
    Corner,
}

/// Boundary tensors keep their outgoing bond as physical space. Top and right
/// sites carry `[τ; θ]` (the remaining bond leg), the corner carries `[τ]`.
#[derive(Clone, Debug)]
pub struct BoundaryTensor2D {
    pub kind: BoundaryKind,
    pub k: usize,
    pub rho: Permutation,
    pub data: Vec<Rational>,
}

impl BoundaryTensor2D {
    /// Two-leg form over the shared inputs and the open bond leg (top/right),
    /// or over the two input legs (corner).
    pub fn as_matrix(&self) -> RationalMatrix {
        let n = GroupOrder::shared(self.k).map(|g| g.len()).unwrap_or(1);
        match self.kind {
            BoundaryKind::Corner => RationalMatrix::from_fn(n, n, |a, b| if a == b { self.data[a].clone() } else { Rational::zero() }),
            _ => RationalMatrix::from_fn(n, n, |a, b| self.data[a * n + b].clone()),
        }
    }
}

pub fn build_boundary(kind: BoundaryKind, rho: &Permutation, params: Params) -> Result<BoundaryTensor2D> {
    let k = rho.degree();
    check_k(k)?;
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let n = g.len();
    let r = g.index_of(rho).unwrap();
    let q = params.d * params.bond * params.bond;
    let data = match kind {
        BoundaryKind::Top | BoundaryKind::Right => {
            let pp = pow_table(params.d * params.bond, k)?;
            let bp = pow_table(params.bond, k)?;
            replica_sum(k, q, |s, theta| pp[t.cycles(t.mul(s, r))].checked_mul(bp[t.cycles(t.mul(s, t.inv(theta)))]), n)?
        }
        BoundaryKind::Corner => {
            let pp = pow_table(q, k)?;
            replica_sum(k, q, |s, _| Some(pp[t.cycles(t.mul(s, r))]), 1)?
        }
    };
    Ok(BoundaryTensor2D { kind, k, rho: rho.clone(), data })
}

/// Largest column height per replica count.
pub fn max_height(k: usize) -> usize {
    if k == 2 {
        8
    } else {
        3
    }
}

/// Dense matrices are formed up to this dimension; beyond, entries are lazy.
const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Debug)]
pub enum Storage {
    Exact(RationalMatrix),
    Dense(DMatrix<f64>),
    Lazy,
}

#[derive(Clone, Debug)]
pub struct CurlyTransfer {
    pub k: usize,
    pub h: usize,
    pub params: Params,
    pub rho: Permutation,
    pub dim: usize,
    pub storage: Storage,
    bulk: Arc<BulkTensor>,
}

fn digits(mut idx: usize, n: usize, h: usize) -> Vec<usize> {
    let mut out = vec![0; h];
    for d in out.iter_mut() {
        *d = idx % n;
        idx /= n;
    }
    out
}

impl CurlyTransfer {
    pub fn bulk(&self) -> &BulkTensor {
        &self.bulk
    }

    pub fn entry_f64(&self, row: usize, col: usize) -> f64 {
        match &self.storage {
            Storage::Exact(m) => to_f64(&m[(row, col)]),
            Storage::Dense(m) => m[(row, col)],
            Storage::Lazy => column_entry(&self.bulk, self.h, row, col, |b, a, c, d| b.get_f64(a, c, d), 1.0, |x, y| x * y),
        }
    }

    pub fn exact(&self) -> Option<&RationalMatrix> {
        match &self.storage {
            Storage::Exact(m) => Some(m),
            _ => None,
        }
    }

    pub fn to_dense_f64(&self) -> Result<DMatrix<f64>> {
        match &self.storage {
            Storage::Exact(m) => Ok(m.to_f64()),
            Storage::Dense(m) => Ok(m.clone()),
            Storage::Lazy => Err(Error::SizeLimit(format!("curly transfer of dimension {} is not materialized", self.dim))),
        }
    }

    /// `𝒯 v` by contracting one row of the column at a time.
    pub fn matvec_f64(&self, v: &[f64]) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(m) => (m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec(),
            _ => chain_apply(&self.bulk, self.h, v),
        }
    }
}

fn column_entry<T: Clone>(
    bulk: &BulkTensor,
    h: usize,
    row: usize,
    col: usize,
    get: impl Fn(&BulkTensor, usize, usize, usize) -> T,
    one: T,
    mul: impl Fn(T, T) -> T,
) -> T {
    let n = bulk.n;
    let o = digits(row, n, h);
    let i = digits(col, n, h);
    (0..h).fold(one, |acc, y| {
        let up = if y + 1 < h { o[y + 1] } else { 0 };
        mul(acc, get(bulk, o[y], i[y], up))
    })
}

/// `(𝒯 v)[o] = Σ_i Π_y t[o_y; i_y, o_{y+1}] v[i]`, replacing input digits by
/// output digits from the top of the column down. Cost `h · n^{h+1}`.
fn chain_apply(bulk: &BulkTensor, h: usize, v: &[f64]) -> Vec<f64> {
    let n = bulk.n;
    let mut w = v.to_vec();
    for y in (0..h).rev() {
        let stride = n.pow(y as u32);
        let above = n.pow(y as u32 + 1);
        let next = crate::par::map_range(w.len(), |idx| {
            let o_y = (idx / stride) % n;
            let up = if y + 1 < h { (idx / above) % n } else { 0 };
            let base = idx - o_y * stride;
            (0..n).map(|i_y| bulk.get_f64(o_y, i_y, up) * w[base + i_y * stride]).sum()
        });
        w = next;
    }
    w
}

pub fn assemble_curly(rho: &Permutation, h: usize, params: Params) -> Result<CurlyTransfer> {
    let bulk = build_bulk(rho, params)?;
    assemble_from(bulk, h)
}

/// Column assembly from a given bulk tensor (for instance a leg-swapped one).
pub fn assemble_from(bulk: Arc<BulkTensor>, h: usize) -> Result<CurlyTransfer> {
    let k = bulk.k;
    if h == 0 || h > max_height(k) {
        return Err(Error::SizeLimit(format!("column height {h} outside 1..={} for k = {k}", max_height(k))));
    }
    let n = bulk.n;
    let dim = n.pow(h as u32);
    let storage = if k == 2 {
        let rows = crate::par::map_range(dim, |row| {
            (0..dim)
                .map(|col| column_entry(&bulk, h, row, col, |b, a, c, d| b.get(a, c, d).clone(), Rational::one(), |x, y| x * y))
                .collect::<Vec<_>>()
        });
        Storage::Exact(RationalMatrix::from_rows(rows)?)
    } else if dim <= DENSE_LIMIT {
        Storage::Dense(DMatrix::from_fn(dim, dim, |r, c| column_entry(&bulk, h, r, c, |b, a, x, y| b.get_f64(a, x, y), 1.0, |x, y| x * y)))
    } else {
        Storage::Lazy
    };
    Ok(CurlyTransfer { k, h, params: bulk.params, rho: bulk.rho.clone(), dim, storage, bulk })
}

/// `𝒥 = 1^{⊗h}` (left ancillas) and `ℱ = F^{⊗h}` (collapsed columns).
pub fn curly_boundary_vectors(k: usize, h: usize) -> Result<(Vec<Rational>, Vec<Rational>)> {
    check_k(k)?;
    let dim = GroupOrder::shared(k)?.len().pow(h as u32);
    let mut f = vec![Rational::zero(); dim];
    f[0] = Rational::one();
    Ok((vec![Rational::one(); dim], f))
}

/// Columns `c` before A, `a` in A, `r` between, `b` in B (0 for a single
/// region), all spanning rows `1..=h`; at least one column follows B and at
/// least one row lies above the regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Region2D {
    pub c: usize,
    pub a: usize,
    pub r: usize,
    pub b: usize,
    pub h: usize,
}

impl Region2D {
    pub fn parse(text: &str) -> Result<Self> {
        let v: Vec<usize> = text
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad region {text:?}"))))
            .collect::<Result<_>>()?;
        match v[..] {
            [c, a, r, b, h] if a >= 1 && h >= 1 => Ok(Self { c, a, r, b, h }),
            [_, _, _, _, _] => Err(Error::InvalidArgument("region A and the height need at least one site".into())),
            _ => Err(Error::InvalidArgument(format!("region needs five counts c,a,r,b,h: {text:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Measure2D {
    Purity,
    Renyi2,
    HsNorm,
}

impl std::str::FromStr for Measure2D {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "purity" => Ok(Self::Purity),
            "renyi2" => Ok(Self::Renyi2),
            "hsnorm" => Ok(Self::HsNorm),
            _ => Err(Error::InvalidArgument(format!("unknown 2D measure {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Value2D {
    pub value: f64,
    pub exact: Option<RationalJson>,
}

/// `⟨𝒥| Π 𝒯_{ρ_i}^{p_i} |ℱ⟩` for k = 2, exactly.
pub fn contract_exact(word: &[(Permutation, usize)], h: usize, params: Params) -> Result<Rational> {
    let (ones, mut v) = curly_boundary_vectors(2, h)?;
    for (rho, p) in word.iter().rev() {
        if rho.degree() != 2 {
            return Err(Error::DegreeMismatch(rho.degree(), 2));
        }
        let m = assemble_curly(rho, h, params)?;
        let m = m.exact().unwrap();
        for _ in 0..*p {
            v = m.mul_vec(&v);
        }
    }
    Ok(v.iter().zip(&ones).fold(Rational::zero(), |acc, (x, y)| acc + x * y))
}

/// `⟨𝒥| Π 𝒯_{ρ_i}^{p_i} |ℱ⟩` in floating point.
pub fn contract_f64(word: &[(Permutation, usize)], h: usize, params: Params) -> Result<f64> {
    let k = word.first().map_or(2, |(p, _)| p.degree());
    check_k(k)?;
    let dim = GroupOrder::shared(k)?.len().pow(h as u32);
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    for (rho, p) in word.iter().rev() {
        if rho.degree() != k {
            return Err(Error::DegreeMismatch(rho.degree(), k));
        }
        if *p == 0 {
            continue;
        }
        let bulk = build_bulk(rho, params)?;
        for _ in 0..*p {
            v = chain_apply(&bulk, h, &v);
        }
    }
    Ok(v.iter().sum())
}

pub fn avg_measures_2d(measure: Measure2D, region: &Region2D, params: Params) -> Result<Value2D> {
    let h = region.h;
    let word = |k: usize, x: &str, y: &str| -> Result<Vec<(Permutation, usize)>> {
        let e = Permutation::identity(k);
        Ok(vec![(e.clone(), region.c), (Permutation::parse(k, x)?, region.a), (e, region.r), (Permutation::parse(k, y)?, region.b)])
    };
    match measure {
        Measure2D::Purity => {
            let v = contract_exact(&word(2, "(1 2)", "e")?, h, params)?;
            Ok(Value2D { value: to_f64(&v), exact: Some(RationalJson::from(&v)) })
        }
        Measure2D::Renyi2 => {
            if region.b == 0 {
                return Err(Error::InvalidArgument("Rényi-2 mutual information needs b ≥ 1".into()));
            }
            let ab = contract_exact(&word(2, "(1 2)", "(1 2)")?, h, params)?;
            let a = contract_exact(&word(2, "(1 2)", "e")?, h, params)?;
            let b = contract_exact(&word(2, "e", "(1 2)")?, h, params)?;
            let value = crate::transfer1d::ln_rational(&ab) - crate::transfer1d::ln_rational(&a) - crate::transfer1d::ln_rational(&b);
            Ok(Value2D { value, exact: None })
        }
        Measure2D::HsNorm => {
            if region.b == 0 {
                return Err(Error::InvalidArgument("the Hilbert–Schmidt measure needs b ≥ 1".into()));
            }
            let first = contract_f64(&word(4, "(1 2)", "(1 2)")?, h, params)?;
            let second = contract_f64(&word(4, "(1 2)", "(3 4)")?, h, params)?;
            let cross = contract_f64(&word(4, "(1 2)", "(1 3)")?, h, params)?;
            Ok(Value2D { value: first + second - 2.0 * cross, exact: None })
        }
    }
}

/// Block label of a row/column index: the highest non-identity digit
/// position (1 for the first block) and, above the first block, the
/// fixed-point block of that digit.
fn block_key(idx: usize, n: usize, h: usize, sub: &[usize]) -> (usize, usize) {
    let ds = digits(idx, n, h);
    match (1..h).rev().find(|&y| ds[y] != 0) {
        Some(y) => (y + 1, sub[ds[y]]),
        None => (1, 0),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockBound {
    /// Position of the defining digit, counted from the bottom (≥ 2).
    pub j: usize,
    /// "transposition", "single fixed point" or "no fixed point".
    pub class: String,
    /// Upper bound on the spectral radius of the diagonal block.
    pub radius_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassPrefactors {
    pub transposition_diagonal_is_beta: bool,
    pub single_fixed_max: f64,
    pub single_fixed_ok: bool,
    pub no_fixed_max: f64,
    pub no_fixed_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LemmaReport {
    pub k: usize,
    pub h: usize,
    pub d: u64,
    #[serde(rename = "D")]
    pub bond: u64,
    pub beta: RationalJson,
    pub zero_blocks_exact: bool,
    pub zero_violations: usize,
    pub first_block_matches: bool,
    /// k = 2: largest column sum of a rescaled diagonal block (exact).
    pub max_rescaled_column_sum: Option<RationalJson>,
    pub substochastic: Option<bool>,
    pub class_prefactors: Option<ClassPrefactors>,
    pub block_bounds: Vec<BlockBound>,
    pub lambda1: f64,
    pub lambda1_multiplicity: usize,
    pub lambda2: f64,
    pub lambda2_multiplicity: usize,
    /// "dense" or "block reduction".
    pub spectrum_method: &'static str,
    pub failures: Vec<String>,
}

impl LemmaReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Block triangularity, first-block identity, rescaled-block bounds and the
/// leading spectrum of `𝒯_e`.
pub fn lemma_checks(k: usize, h: usize, params: Params) -> Result<LemmaReport> {
    check_k(k)?;
    let limit = if k == 2 { 6 } else { 3 };
    if h == 0 || h > limit {
        return Err(Error::SizeLimit(format!("lemma checks need 1 ≤ h ≤ {limit} for k = {k}")));
    }
    let g = GroupOrder::shared(k)?;
    let n = g.len();
    let e = Permutation::identity(k);
    let curly = assemble_curly(&e, h, params)?;
    let bulk = curly.bulk.clone();
    let beta = lambda2_2d(params);
    let beta_f = to_f64(&beta);
    let mut failures = Vec::new();

    let mut sub = vec![0usize; n];
    for (b, range) in g.fixed_point_blocks().into_iter().enumerate() {
        for i in range {
            sub[i] = b;
        }
    }
    let keys: Vec<(usize, usize)> = (0..curly.dim).map(|i| block_key(i, n, h, &sub)).collect();

    // exact zero pattern below the block diagonal
    let zero: Vec<bool> = bulk.exact.iter().map(Zero::is_zero).collect();
    let is_zero = |row: usize, col: usize| {
        let (mut o, mut i) = (row, col);
        for _ in 0..h {
            let up = (o / n) % n;
            if zero[((o % n) * n + i % n) * n + up] {
                return true;
            }
            o /= n;
            i /= n;
        }
        false
    };
    let violations: usize = crate::par::map_range(curly.dim, |row| {
        (0..curly.dim).filter(|&col| keys[row] > keys[col] && !is_zero(row, col)).count()
    })
    .into_iter()
    .sum();
    if violations > 0 {
        failures.push(format!("{violations} nonzero entries below the block diagonal"));
    }

    // first block equals the 1D identity transfer with d → dD
    let n_mat = RationalMatrix::from_fn(n, n, |o, i| bulk.get(o, i, 0).clone());
    let one_d = identity_transfer(k, Params::new(params.d * params.bond, params.bond)?)?.matrix;
    let mut first_block_matches = n_mat == one_d;
    if k == 2 {
        let (d, b) = (int(params.d as i64), int(params.bond as i64));
        let alpha = (&d * &d * &b * &b * &b - &b) / (&d * &d * &b * &b * &b * &b - int(1));
        first_block_matches &= n_mat.to_rows() == vec![vec![int(1), alpha], vec![int(0), beta.clone()]];
    }
    if !first_block_matches {
        failures.push("first diagonal block differs from the 1D transfer matrix with d → dD".into());
    }

    // column sums of L_v over the lower j−1 digits, for every top value v
    let lower_column_sums = |j: usize| -> Vec<Vec<f64>> {
        let m = n.pow(j as u32 - 1);
        (0..n)
            .map(|v| {
                (0..m)
                    .map(|col| {
                        let i = digits(col, n, j - 1);
                        // s[o] = Σ over digits below of Π |t|, carried upward
                        let mut s = vec![1.0; n];
                        for (y, &iy) in i.iter().enumerate() {
                            let top = y + 1 == j - 1;
                            let next: Vec<f64> = (0..n)
                                .map(|up| {
                                    if top && up != v {
                                        return 0.0;
                                    }
                                    (0..n).map(|o| s[o] * bulk.get_f64(o, iy, up).abs()).sum()
                                })
                                .collect();
                            s = next;
                        }
                        s[v]
                    })
                    .collect()
            })
            .collect()
    };

    let class_name = |b: usize| -> String {
        let p = g.get(g.fixed_point_blocks()[b].start);
        match p.fixed_points().len() {
            f if f + 2 == k => "transposition".to_string(),
            f if f + 3 == k => "single fixed point".to_string(),
            0 => "no fixed point".to_string(),
            _ => format!("{} fixed points", p.fixed_points().len()),
        }
    };

    let mut block_bounds = Vec::new();
    let mut max_rescaled: Option<Rational> = None;
    let mut class_prefactors = None;
    if k == 2 {
        // blocks j ≥ 2 divided by β are strictly column substochastic
        let m = curly.exact().unwrap();
        let mut ok = true;
        for j in 2..=h {
            let idx: Vec<usize> = (0..curly.dim).filter(|&i| keys[i] == (j, 1)).collect();
            for &col in &idx {
                let mut sum = Rational::zero();
                for &row in &idx {
                    let x = &m[(row, col)] / &beta;
                    if x.is_negative() {
                        ok = false;
                    }
                    sum += x;
                }
                if max_rescaled.as_ref().is_none_or(|mx| &sum > mx) {
                    max_rescaled = Some(sum);
                }
            }
            let sums = lower_column_sums(j);
            let radius = beta_f * sums[1].iter().copied().fold(0.0, f64::max);
            block_bounds.push(BlockBound { j, class: class_name(1), radius_bound: radius });
        }
        if let Some(mx) = &max_rescaled {
            if mx >= &Rational::one() || !ok {
                failures.push(format!("rescaled block not strictly column substochastic (max column sum {mx})"));
            }
        }
    } else {
        let blocks = g.fixed_point_blocks();
        let half = &beta / int(2);
        let ninth = &beta / int(9);
        let mut transposition_diagonal_is_beta = true;
        let mut single_max = Rational::zero();
        let mut none_max = Rational::zero();
        for (b, range) in blocks.iter().enumerate().skip(1) {
            let class = class_name(b);
            for v in range.clone() {
                for w in range.clone() {
                    let x = n_mat[(v, w)].abs();
                    match class.as_str() {
                        "transposition" => transposition_diagonal_is_beta &= n_mat[(v, w)] == beta,
                        "single fixed point" => single_max = single_max.max(x),
                        _ => none_max = none_max.max(x),
                    }
                }
            }
        }
        let single_fixed_ok = single_max < half;
        let no_fixed_ok = none_max < ninth;
        if !(transposition_diagonal_is_beta && single_fixed_ok && no_fixed_ok) {
            failures.push(format!(
                "class prefactors: transposition diagonal = β {transposition_diagonal_is_beta}, single fixed point max {:.5} vs β/2 = {:.5}, no fixed point max {:.5} vs β/9 = {:.5}",
                to_f64(&single_max),
                to_f64(&half),
                to_f64(&none_max),
                to_f64(&ninth)
            ));
        }
        class_prefactors = Some(ClassPrefactors {
            transposition_diagonal_is_beta,
            single_fixed_max: to_f64(&single_max),
            single_fixed_ok,
            no_fixed_max: to_f64(&none_max),
            no_fixed_ok,
        });
        for j in 2..=h {
            let sums = lower_column_sums(j);
            for (b, range) in blocks.iter().enumerate().skip(1) {
                let n_norm = range
                    .clone()
                    .map(|w| range.clone().map(|v| to_f64(&n_mat[(v, w)].abs())).sum::<f64>())
                    .fold(0.0, f64::max);
                let l_norm = range.clone().flat_map(|v| sums[v].iter().copied()).fold(0.0, f64::max);
                block_bounds.push(BlockBound { j, class: class_name(b), radius_bound: n_norm * l_norm });
            }
        }
    }
    for bb in &block_bounds {
        if !(bb.radius_bound < beta_f) {
            failures.push(format!("block j={} ({}) has radius bound {} ≥ β", bb.j, bb.class, bb.radius_bound));
        }
    }

    let (dense, spectrum_method) = match curly.to_dense_f64() {
        Ok(m) => (m, "dense"),
        Err(_) => (n_mat.to_f64(), "block reduction"),
    };
    let spec = eigen_full(&dense, Vectors::None)?;
    let g1 = &spec.groups[0];
    let (l2, m2) = spec.groups.get(1).map_or((0.0, 0), |g| (g.value.re, g.multiplicity));
    let expected2 = if k == 2 { 1 } else { 6 };
    if (g1.value.re - 1.0).abs() > GROUP_TOL || g1.multiplicity != 1 {
        failures.push(format!("leading eigenvalue {} with multiplicity {}", g1.value, g1.multiplicity));
    }
    if (l2 - beta_f).abs() > GROUP_TOL || m2 != expected2 {
        failures.push(format!("second eigenvalue {l2} (multiplicity {m2}), expected β = {beta_f} with multiplicity {expected2}"));
    }

    Ok(LemmaReport {
        k,
        h,
        d: params.d,
        bond: params.bond,
        beta: RationalJson::from(&beta),
        zero_blocks_exact: violations == 0,
        zero_violations: violations,
        first_block_matches,
        max_rescaled_column_sum: max_rescaled.as_ref().map(RationalJson::from),
        substochastic: (k == 2).then(|| max_rescaled.as_ref().is_none_or(|m| m < &Rational::one())),
        class_prefactors,
        block_bounds,
        lambda1: g1.value.re,
        lambda1_multiplicity: g1.multiplicity,
        lambda2: l2,
        lambda2_multiplicity: m2,
        spectrum_method,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::ratio;

    fn p22() -> Params {
        Params::new(2, 2).unwrap()
    }

    #[test]
    fn bulk_all_identity_entry_is_one() {
        for (d, b) in [(2, 2), (2, 3), (3, 2)] {
            let t = build_bulk(&Permutation::identity(2), Params::new(d, b).unwrap()).unwrap();
            assert_eq!(t.get(0, 0, 0), &int(1));
            assert_eq!(t.entry(0, 0, 0, 0), int(1));
            assert_eq!(t.entry(0, 0, 1, 0), int(0));
        }
    }

    #[test]
    fn m_matrix_entries() {
        let t = build_bulk(&Permutation::identity(2), p22()).unwrap();
        // M[(τ,τ), (θ,ν)] = t[τ; θ, ν]
        assert_eq!(t.get(0, 1, 0), &ratio(10, 21));
        assert_eq!(t.get(0, 0, 1), &ratio(10, 21));
        assert_eq!(t.get(1, 1, 0), &ratio(4, 21));
        assert_eq!(t.get(0, 1, 1), &ratio(4, 21));
        assert_eq!(t.get(1, 0, 0), &int(0));
        assert_eq!(t.get(1, 1, 1), &ratio(10, 21));
    }

    #[test]
    fn rejects_other_k() {
        assert!(build_bulk(&Permutation::identity(3), p22()).is_err());
        assert!(assemble_curly(&Permutation::identity(2), 9, p22()).is_err());
    }

    #[test]
    fn boundary_collapse() {
        let e = Permutation::identity(2);
        let corner = build_boundary(BoundaryKind::Corner, &e, p22()).unwrap();
        assert_eq!(corner.as_matrix().to_rows(), vec![vec![int(1), int(0)], vec![int(0), int(0)]]);
        for kind in [BoundaryKind::Top, BoundaryKind::Right] {
            let b = build_boundary(kind, &e, p22()).unwrap().as_matrix();
            assert_eq!(b.column(0), vec![int(1), int(0)]);
        }
    }

    #[test]
    fn first_column_block_h1() {
        let c = assemble_curly(&Permutation::identity(2), 1, p22()).unwrap();
        assert_eq!(c.exact().unwrap().to_rows(), vec![vec![int(1), ratio(10, 21)], vec![int(0), ratio(4, 21)]]);
    }

    #[test]
    fn normalization() {
        let e = Permutation::identity(2);
        assert_eq!(contract_exact(&[(e.clone(), 3)], 2, p22()).unwrap(), int(1));
        let e4 = Permutation::identity(4);
        assert!((contract_f64(&[(e4, 2)], 2, p22()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_matches_dense() {
        let x = Permutation::parse(4, "(1 2)").unwrap();
        let c = assemble_curly(&x, 2, p22()).unwrap();
        let v: Vec<f64> = (0..c.dim).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let dense = c.matvec_f64(&v);
        let chain = chain_apply(c.bulk(), 2, &v);
        for (a, b) in dense.iter().zip(&chain) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        let lazy = assemble_curly(&x, 3, p22()).unwrap();
        assert!(matches!(lazy.storage, Storage::Lazy));
        assert!(lazy.to_dense_f64().is_err());
        let entry = lazy.entry_f64(24 * 24 + 3, 24 * 24 * 2 + 5);
        let expect = c.bulk().get_f64(3, 5, 0) * c.bulk().get_f64(0, 0, 1) * c.bulk().get_f64(1, 2, 0);
        assert!((entry - expect).abs() < 1e-15);
    }

    #[test]
    fn region_parsing() {
        assert_eq!(Region2D::parse("0,1,2,1,2").unwrap(), Region2D { c: 0, a: 1, r: 2, b: 1, h: 2 });
        assert!(Region2D::parse("0,0,2,1,2").is_err());
        assert!(Region2D::parse("0,1").is_err());
    }
}
