//! Unitary Weingarten function and the k-fold twirl over exact rationals.
//!
//! For k ≤ q the table is the inverse of the permutation Gram matrix. For
//! k > q the Gram matrix is singular and the table is the character sum
//! restricted to partitions with at most q rows (the pseudo-inverse).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::permgroup::{partitions, GroupOrder, Permutation};
use crate::rational::{int, Rational, RationalMatrix};

/// Largest degree for which the full Gram matrix is inverted directly.
const FULL_INVERSE_DEGREE: usize = 4;

pub fn gram_matrix(k: usize, q: u64) -> Result<RationalMatrix> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be positive".into()));
    }
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let powers = power_table(q, k);
    let n = g.len();
    Ok(RationalMatrix::from_fn(n, n, |s, u| powers[t.cycles(t.mul(s, t.inv(u)))].clone()))
}

fn power_table(q: u64, k: usize) -> Vec<Rational> {
    (0..=k as u32).map(|e| BigRational::from_integer(BigInt::from(q).pow(e))).collect()
}

/// Weingarten values indexed by cycle type.
#[derive(Clone, Debug, PartialEq)]
pub struct WeingartenTable {
    k: usize,
    q: u64,
    classes: Vec<Vec<usize>>,
    values: Vec<Rational>,
}

impl WeingartenTable {
    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn dimension(&self) -> u64 {
        self.q
    }

    /// Cycle types in the order of [`partitions`].
    pub fn classes(&self) -> &[Vec<usize>] {
        &self.classes
    }

    /// Value on the class with index `class` (see [`crate::permgroup::CayleyTable::class`]).
    pub fn by_class(&self, class: usize) -> &Rational {
        &self.values[class]
    }

    pub fn value(&self, cycle_type: &[usize]) -> Option<&Rational> {
        self.classes.iter().position(|c| c == cycle_type).map(|i| &self.values[i])
    }

    pub fn of(&self, p: &Permutation) -> &Rational {
        self.value(&p.cycle_type()).expect("degree matches table")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<usize>, &Rational)> {
        self.classes.iter().zip(&self.values)
    }
}

/// Cached table for (k, q). Direct Gram inverse for small k, the class-function
/// reduction of the same linear system above that, characters when k > q.
pub fn weingarten_table(k: usize, q: u64) -> Result<Arc<WeingartenTable>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<WeingartenTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(t) = cache.lock().unwrap().get(&(k, q)) {
        return Ok(t.clone());
    }
    let table = if k as u64 > q {
        weingarten_by_characters(k, q)?
    } else if k <= FULL_INVERSE_DEGREE {
        weingarten_by_inverse(k, q)?
    } else {
        weingarten_by_class_solve(k, q)?
    };
    let table = Arc::new(table);
    Ok(cache.lock().unwrap().entry((k, q)).or_insert(table).clone())
}

/// First column of the inverted Gram matrix, read off per cycle type.
pub fn weingarten_by_inverse(k: usize, q: u64) -> Result<WeingartenTable> {
    let g = GroupOrder::shared(k)?;
    let w = gram_matrix(k, q)?.inverse()?;
    let classes = partitions(k);
    let values = classes
        .iter()
        .map(|c| {
            let i = g.iter().position(|p| &p.cycle_type() == c).unwrap();
            w[(i, 0)].clone()
        })
        .collect();
    Ok(WeingartenTable { k, q, classes, values })
}

/// Solves `Σ_τ q^{#(στ⁻¹)} Wg(τ) = δ_{σ,e}` for a class function Wg.
pub fn weingarten_by_class_solve(k: usize, q: u64) -> Result<WeingartenTable> {
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let classes = partitions(k);
    let m = classes.len();
    let reps: Vec<usize> = (0..m).map(|c| (0..g.len()).find(|&i| t.class(i) == c).unwrap()).collect();
    let mut counts = vec![vec![0i64; k + 1]; m * m];
    for (i, &rep) in reps.iter().enumerate() {
        for u in 0..g.len() {
            counts[i * m + t.class(u)][t.cycles(t.mul(rep, t.inv(u)))] += 1;
        }
    }
    let powers = power_table(q, k);
    let a = RationalMatrix::from_fn(m, m, |i, j| {
        counts[i * m + j]
            .iter()
            .zip(&powers)
            .filter(|(c, _)| **c != 0)
            .fold(Rational::zero(), |acc, (c, p)| acc + p * int(*c))
    });
    let identity_class = classes.iter().position(|c| c.iter().all(|&x| x == 1)).unwrap();
    let rhs: Vec<Rational> = (0..m).map(|i| if i == identity_class { Rational::one() } else { Rational::zero() }).collect();
    let values = a.inverse()?.mul_vec(&rhs);
    Ok(WeingartenTable { k, q, classes, values })
}

/// `(1/k!²) Σ_{λ ⊢ k, ℓ(λ) ≤ q} (f^λ)² χ^λ(σ) / s_λ(1^q)`.
pub fn weingarten_by_characters(k: usize, q: u64) -> Result<WeingartenTable> {
    if k == 0 || q == 0 {
        return Err(Error::InvalidArgument("k and q must be positive".into()));
    }
    let classes = partitions(k);
    let kfact: i64 = (1..=k as i64).product();
    let lambdas: Vec<&Vec<usize>> = classes.iter().filter(|l| l.len() as u64 <= q).collect();
    let mut values = Vec::with_capacity(classes.len());
    for mu in &classes {
        let mut acc = Rational::zero();
        for lambda in &lambdas {
            let f = standard_tableaux(lambda);
            let chi = character(lambda, mu);
            if chi == 0 {
                continue;
            }
            acc += int(f * f) * int(chi) / schur_at_ones(lambda, q);
        }
        values.push(acc / int(kfact * kfact));
    }
    Ok(WeingartenTable { k, q, classes, values })
}

fn hooks(lambda: &[usize]) -> Vec<(i64, i64)> {
    // (content, hook length) per cell
    let conj: Vec<usize> = (0..lambda.first().copied().unwrap_or(0))
        .map(|j| lambda.iter().filter(|&&r| r > j).count())
        .collect();
    let mut out = Vec::new();
    for (i, &row) in lambda.iter().enumerate() {
        for j in 0..row {
            let hook = (row - j - 1) + (conj[j] - i - 1) + 1;
            out.push((j as i64 - i as i64, hook as i64));
        }
    }
    out
}

/// Number of standard Young tableaux of shape λ (hook length formula).
pub fn standard_tableaux(lambda: &[usize]) -> i64 {
    let n: usize = lambda.iter().sum();
    let num: BigInt = (1..=n as u64).map(BigInt::from).product();
    let den: BigInt = hooks(lambda).iter().map(|&(_, h)| BigInt::from(h)).product();
    i64::try_from(num / den).expect("fits for k ≤ 8")
}

/// Dimension of the GL(q) irrep λ, i.e. s_λ(1, …, 1).
pub fn schur_at_ones(lambda: &[usize], q: u64) -> Rational {
    hooks(lambda)
        .into_iter()
        .fold(Rational::one(), |acc, (c, h)| acc * BigRational::new(BigInt::from(q as i64 + c), BigInt::from(h)))
}

/// Irreducible character χ^λ on the class μ, by the Murnaghan–Nakayama rule.
pub fn character(lambda: &[usize], mu: &[usize]) -> i64 {
    let l = lambda.len();
    let beta: Vec<usize> = lambda.iter().enumerate().map(|(i, &x)| x + (l - 1 - i)).collect();
    let mut memo = HashMap::new();
    mn(beta, mu, &mut memo)
}

fn mn(beta: Vec<usize>, mu: &[usize], memo: &mut HashMap<(Vec<usize>, usize), i64>) -> i64 {
    let Some((&r, rest)) = mu.split_first() else { return 1 };
    let key = (beta.clone(), mu.len());
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let mut total = 0;
    for i in 0..beta.len() {
        let b = beta[i];
        if b < r || beta.contains(&(b - r)) {
            continue;
        }
        // removing a rim hook of length r moves one bead down by r
        let height = beta.iter().filter(|&&x| x > b - r && x < b).count();
        let mut next = beta.clone();
        next[i] = b - r;
        let sign = if height % 2 == 0 { 1 } else { -1 };
        total += sign * mn(next, rest, memo);
    }
    memo.insert(key, total);
    total
}

/// `c[σ, τ] = Wg(στ⁻¹, q)` in group order.
pub fn twirl_coefficients(k: usize, q: u64) -> Result<RationalMatrix> {
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let wg = weingarten_table(k, q)?;
    let n = g.len();
    Ok(RationalMatrix::from_fn(n, n, |s, u| wg.by_class(t.class(t.mul(s, t.inv(u)))).clone()))
}

/// Coefficients of the twirl of `P_ρ` in the permutation basis, exactly.
/// Uses `tr(P_ρ P_τᵀ) = q^{#(ρτ⁻¹)}`.
pub fn twirl_of_permutation(rho: &Permutation, q: u64) -> Result<Vec<Rational>> {
    let k = rho.degree();
    let g = GroupOrder::shared(k)?;
    let t = g.table()?;
    let r = g.index_of(rho).unwrap();
    let c = twirl_coefficients(k, q)?;
    let powers = power_table(q, k);
    let traces: Vec<Rational> = (0..g.len()).map(|u| powers[t.cycles(t.mul(r, t.inv(u)))].clone()).collect();
    Ok(c.mul_vec(&traces))
}

/// Dense matrix of `P_σ` on (C^q)^{⊗k}: slot `σ(j)` of the output carries slot `j` of the input.
pub fn permutation_operator(sigma: &Permutation, q: usize) -> Result<DMatrix<f64>> {
    let k = sigma.degree();
    let dim = checked_power(q, k)?;
    let mut m = DMatrix::zeros(dim, dim);
    let mut digits = vec![0usize; k];
    let mut out_digits = vec![0usize; k];
    for col in 0..dim {
        decode(col, q, &mut digits);
        for j in 0..k {
            out_digits[sigma.apply(j + 1) - 1] = digits[j];
        }
        m[(encode(&out_digits, q), col)] = 1.0;
    }
    Ok(m)
}

/// `Σ_{σ,τ} Wg(στ⁻¹) P_σ tr(X P_τᵀ)` evaluated densely.
pub fn twirl_apply(x: &DMatrix<Complex64>, k: usize, q: usize) -> Result<DMatrix<Complex64>> {
    let g = GroupOrder::shared(k)?;
    let dim = checked_power(q, k)?;
    if x.nrows() != dim || x.ncols() != dim {
        return Err(Error::InvalidArgument(format!("operator must be {dim}x{dim}")));
    }
    let ops: Vec<DMatrix<f64>> = g.iter().map(|p| permutation_operator(p, q)).collect::<Result<_>>()?;
    let traces: Vec<Complex64> = ops
        .iter()
        .map(|p| {
            // tr(X Pᵀ) = Σ_ij X_ij P_ij
            x.iter().zip(p.iter()).map(|(a, b)| a * b).sum()
        })
        .collect();
    let c = twirl_coefficients(k, q as u64)?.to_f64();
    let mut out = DMatrix::<Complex64>::zeros(dim, dim);
    for (s, ps) in ops.iter().enumerate() {
        let weight: Complex64 = (0..g.len()).map(|u| traces[u] * c[(s, u)]).sum();
        out += ps.map(|v| Complex64::new(v, 0.0)) * weight;
    }
    Ok(out)
}

fn checked_power(q: usize, k: usize) -> Result<usize> {
    q.checked_pow(k as u32)
        .filter(|&d| d <= 1 << 12)
        .ok_or_else(|| Error::SizeLimit(format!("dense operator on ({q})^{k}")))
}

fn decode(mut x: usize, q: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = x % q;
        x /= q;
    }
}

fn encode(digits: &[usize], q: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * q + d)
}
