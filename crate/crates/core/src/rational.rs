//! Dense matrices over arbitrary-precision rationals.

use std::fmt;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = BigRational;

pub fn ratio(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // fall back to a scaled quotient when the parts overflow f64
        let shift = x.numer().bits().max(x.denom().bits()).saturating_sub(1000) as usize;
        let n = (x.numer() >> shift).to_f64().unwrap_or(f64::NAN);
        let d = (x.denom() >> shift).to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Lossless JSON form `{"num": "...", "den": "..."}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalJson {
    pub num: String,
    pub den: String,
}

impl From<&Rational> for RationalJson {
    fn from(x: &Rational) -> Self {
        Self { num: x.numer().to_string(), den: x.denom().to_string() }
    }
}

impl TryFrom<&RationalJson> for Rational {
    type Error = Error;

    fn try_from(j: &RationalJson) -> Result<Self> {
        let parse = |s: &str| s.parse::<BigInt>().map_err(|_| Error::InvalidArgument(format!("not an integer: {s:?}")));
        let den = parse(&j.den)?;
        if den.is_zero() {
            return Err(Error::InvalidArgument("zero denominator".into()));
        }
        Ok(BigRational::new(parse(&j.num)?, den))
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rational>,
}

impl RationalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Rational::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Rational::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Rational) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<Rational>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub(crate) fn from_vec(rows: usize, cols: usize, data: Vec<Rational>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn row(&self, i: usize) -> &[Rational] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<Rational> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<Rational>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::InvalidArgument(format!(
                "shape mismatch {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = &self[(i, l)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(l, j)];
                    if !b.is_zero() {
                        out[(i, j)] += a * b;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[Rational]) -> Vec<Rational> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .filter(|(a, b)| !a.is_zero() && !b.is_zero())
                    .fold(Rational::zero(), |acc, (a, b)| acc + a * b)
            })
            .collect()
    }

    /// Row vector times matrix.
    pub fn vec_mul(&self, v: &[Rational]) -> Vec<Rational> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![Rational::zero(); self.cols];
        for (i, a) in v.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (o, b) in out.iter_mut().zip(self.row(i)) {
                if !b.is_zero() {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: &Rational) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self - s·I`.
    pub fn shift(&self, s: &Rational) -> Self {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] -= s;
        }
        m
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])].clone())
    }

    /// Gauss-Jordan inverse with full pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::InvalidArgument("inverse of a non-square matrix".into()));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let mut col_perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pr, pc) = pivot(&a, k).ok_or(Error::Singular)?;
            a.swap_rows(k, pr);
            inv.swap_rows(k, pr);
            if pc != k {
                a.swap_cols(k, pc);
                col_perm.swap(k, pc);
            }
            let p = a[(k, k)].clone();
            for j in 0..n {
                a[(k, j)] /= &p;
                inv[(k, j)] /= &p;
            }
            for i in 0..n {
                if i == k || a[(i, k)].is_zero() {
                    continue;
                }
                let f = a[(i, k)].clone();
                for j in 0..n {
                    if !a[(k, j)].is_zero() {
                        let t = &f * &a[(k, j)];
                        a[(i, j)] -= t;
                    }
                    if !inv[(k, j)].is_zero() {
                        let t = &f * &inv[(k, j)];
                        inv[(i, j)] -= t;
                    }
                }
            }
        }
        // undo the column exchanges: they permute rows of the inverse
        let mut out = Self::zeros(n, n);
        for (k, &c) in col_perm.iter().enumerate() {
            for j in 0..n {
                out[(c, j)] = inv[(k, j)].clone();
            }
        }
        Ok(out)
    }

    /// Exact rank by fraction-free (Bareiss) elimination on the integer-scaled matrix.
    pub fn rank(&self) -> usize {
        let mut a = self.integer_rows();
        let (m, n) = (self.rows, self.cols);
        let mut rank = 0;
        let mut prev = BigInt::one();
        for col in 0..n {
            if rank == m {
                break;
            }
            let Some(p) = (rank..m).find(|&i| !a[i][col].is_zero()) else { continue };
            a.swap(rank, p);
            for i in rank + 1..m {
                for j in col + 1..n {
                    let v = (&a[rank][col] * &a[i][j] - &a[i][col] * &a[rank][j]) / &prev;
                    a[i][j] = v;
                }
                a[i][col] = BigInt::zero();
            }
            prev = a[rank][col].clone();
            rank += 1;
        }
        rank
    }

    /// Rank over the prime field F_p, or `None` when some denominator vanishes mod p.
    pub fn rank_mod(&self, p: u64) -> Option<usize> {
        self.residues(p).map(|a| rank_mod_rows(a, p))
    }

    /// Residues mod p, or `None` when some denominator vanishes mod p.
    fn residues(&self, p: u64) -> Option<Vec<Vec<u64>>> {
        let pb = BigInt::from(p);
        let mut a: Vec<Vec<u64>> = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let mut row = Vec::with_capacity(self.cols);
            for x in self.row(i) {
                let den = x.denom().mod_floor(&pb).to_u64().unwrap();
                if den == 0 {
                    return None;
                }
                let num = x.numer().mod_floor(&pb).to_u64().unwrap();
                row.push(mul_mod(num, pow_mod(den, p - 2, p), p));
            }
            a.push(row);
        }
        Some(a)
    }

    /// Kernel basis over Q, reconstructed from reduced echelon forms modulo
    /// successive primes and verified exactly. Vectors are normalized to 1 on
    /// their free coordinate. `None` if `max_primes` did not suffice.
    pub fn kernel(&self, max_primes: usize) -> Option<Vec<Vec<Rational>>> {
        let mut modulus = BigInt::one();
        let mut acc: Vec<Vec<BigInt>> = Vec::new();
        let mut shape: Option<(Vec<usize>, Vec<usize>)> = None;
        let mut used = 0;
        let mut last: Option<Vec<Vec<Rational>>> = None;
        for p in large_primes() {
            if used == max_primes {
                return None;
            }
            let Some(a) = self.residues(p) else { continue };
            let (pivots, free, basis) = kernel_mod_rows(a, p);
            match &shape {
                Some((piv, _)) if pivots.len() < piv.len() => continue,
                Some((piv, _)) if pivots == *piv => {}
                _ => {
                    shape = Some((pivots, free));
                    modulus = BigInt::one();
                    acc = vec![vec![BigInt::zero(); self.cols]; basis.len()];
                    last = None;
                }
            }
            used += 1;
            let pb = BigInt::from(p);
            for (v, r) in acc.iter_mut().zip(&basis) {
                for (x, &rp) in v.iter_mut().zip(r) {
                    *x = crt(x, &modulus, rp, &pb);
                }
            }
            modulus *= &pb;
            let candidate: Option<Vec<Vec<Rational>>> =
                acc.iter().map(|v| v.iter().map(|x| reconstruct(x, &modulus)).collect()).collect();
            // verify only once the reconstruction has stabilized
            if candidate.is_some() && candidate == last {
                let vs = candidate.unwrap();
                if vs.iter().all(|v| self.mul_vec(v).iter().all(Zero::is_zero)) {
                    return Some(vs);
                }
                last = None;
            } else {
                last = candidate;
            }
        }
        None
    }

    fn integer_rows(&self) -> Vec<Vec<BigInt>> {
        (0..self.rows)
            .map(|i| {
                let row = self.row(i);
                let l = row.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
                row.iter().map(|x| x.numer() * (&l / x.denom())).collect()
            })
            .collect()
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    fn swap_cols(&mut self, a: usize, b: usize) {
        for i in 0..self.rows {
            self.data.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| to_f64(&self[(i, j)]))
    }

    pub fn to_json(&self) -> Vec<Vec<RationalJson>> {
        (0..self.rows).map(|i| self.row(i).iter().map(RationalJson::from).collect()).collect()
    }

    pub fn max_abs(&self) -> Rational {
        self.data.iter().map(|x| x.abs()).max().unwrap_or_else(Rational::zero)
    }
}

fn pivot(a: &RationalMatrix, k: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize, Rational)> = None;
    for i in k..a.rows {
        for j in k..a.cols {
            let v = a[(i, j)].abs();
            if !v.is_zero() && best.as_ref().is_none_or(|b| v > b.2) {
                best = Some((i, j, v));
            }
        }
    }
    best.map(|(i, j, _)| (i, j))
}

pub(crate) fn mul_mod(a: u64, b: u64, p: u64) -> u64 {
    ((a as u128 * b as u128) % p as u128) as u64
}

pub(crate) fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, b, p);
        }
        b = mul_mod(b, b, p);
        e >>= 1;
    }
    r
}

pub(crate) fn rank_mod_rows(mut a: Vec<Vec<u64>>, p: u64) -> usize {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let Some(piv) = (rank..m).find(|&i| a[i][col] != 0) else { continue };
        a.swap(rank, piv);
        let inv = pow_mod(a[rank][col], p - 2, p);
        let pivot_row = a[rank].clone();
        for row in a.iter_mut().skip(rank + 1) {
            if row[col] == 0 {
                continue;
            }
            let f = mul_mod(row[col], inv, p);
            for j in col..n {
                if pivot_row[j] != 0 {
                    row[j] = (row[j] + p - mul_mod(f, pivot_row[j], p)) % p;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Reduced echelon form mod p: pivot columns, free columns and the kernel
/// basis with a 1 on each free column.
fn kernel_mod_rows(mut a: Vec<Vec<u64>>, p: u64) -> (Vec<usize>, Vec<usize>, Vec<Vec<u64>>) {
    let m = a.len();
    let n = a.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let Some(piv) = (rank..m).find(|&i| a[i][col] != 0) else { continue };
        a.swap(rank, piv);
        let inv = pow_mod(a[rank][col], p - 2, p);
        for x in a[rank].iter_mut() {
            *x = mul_mod(*x, inv, p);
        }
        let pivot_row = a[rank].clone();
        for (i, row) in a.iter_mut().enumerate() {
            if i == rank || row[col] == 0 {
                continue;
            }
            let f = row[col];
            for j in col..n {
                if pivot_row[j] != 0 {
                    row[j] = (row[j] + p - mul_mod(f, pivot_row[j], p)) % p;
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    let basis = free
        .iter()
        .map(|&f| {
            let mut v = vec![0u64; n];
            v[f] = 1;
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = (p - a[r][f]) % p;
            }
            v
        })
        .collect();
    (pivots, free, basis)
}

fn crt(x: &BigInt, m: &BigInt, r: u64, p: &BigInt) -> BigInt {
    // x + m·t ≡ r (mod p)
    let pu = p.to_u64().unwrap();
    let xm = x.mod_floor(p).to_u64().unwrap();
    let mm = m.mod_floor(p).to_u64().unwrap();
    let t = mul_mod((r + pu - xm) % pu, pow_mod(mm, pu - 2, pu), pu);
    x + m * BigInt::from(t)
}

/// Rational reconstruction: `a/b ≡ x (mod m)` with `|a|, |b| < sqrt(m/2)`.
fn reconstruct(x: &BigInt, m: &BigInt) -> Option<Rational> {
    let bound = (m / 2u32).sqrt();
    let (mut r0, mut r1) = (m.clone(), x.mod_floor(m));
    let (mut t0, mut t1) = (BigInt::zero(), BigInt::one());
    while r1 > bound {
        let q = &r0 / &r1;
        let r2 = &r0 - &q * &r1;
        let t2 = &t0 - &q * &t1;
        r0 = std::mem::replace(&mut r1, r2);
        t0 = std::mem::replace(&mut t1, t2);
    }
    if t1.is_zero() || t1.abs() > bound {
        return None;
    }
    Some(Rational::new(r1, t1))
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Descending primes below 2^62.
pub(crate) fn large_primes() -> impl Iterator<Item = u64> {
    (0..).map(|i| (1u64 << 62) - 1 - 2 * i).filter(|&n| is_prime(n))
}

impl Index<(usize, usize)> for RationalMatrix {
    type Output = Rational;

    fn index(&self, (i, j): (usize, usize)) -> &Rational {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RationalMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Rational {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Display for RationalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(ToString::to_string).collect();
            writeln!(f, "[{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl fmt::Debug for RationalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RationalMatrix {}x{}\n{}", self.rows, self.cols, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[i64]]) -> RationalMatrix {
        RationalMatrix::from_rows(rows.iter().map(|r| r.iter().map(|&x| int(x)).collect()).collect()).unwrap()
    }

    #[test]
    fn inverse_roundtrip() {
        let a = m(&[&[0, 2, 1], &[1, 1, 0], &[3, 0, 5]]);
        let inv = a.inverse().unwrap();
        assert_eq!(a.mul(&inv).unwrap(), RationalMatrix::identity(3));
        assert_eq!(inv.mul(&a).unwrap(), RationalMatrix::identity(3));
    }

    #[test]
    fn singular() {
        let a = m(&[&[1, 2], &[2, 4]]);
        assert!(matches!(a.inverse(), Err(Error::Singular)));
        assert_eq!(a.rank(), 1);
    }

    #[test]
    fn ranks() {
        let a = RationalMatrix::from_fn(4, 5, |i, j| ratio((i * j) as i64 + 1, (i + 2) as i64));
        assert_eq!(a.rank(), 2);
        assert_eq!(a.rank_mod(1_000_000_007), Some(2));
        assert_eq!(RationalMatrix::identity(5).rank(), 5);
        assert_eq!(RationalMatrix::zeros(3, 3).rank(), 0);
        // denominators divisible by p are refused
        assert_eq!(RationalMatrix::from_fn(1, 1, |_, _| ratio(1, 7)).rank_mod(7), None);
    }

    #[test]
    fn kernel_over_q() {
        let a = m(&[&[1, 2, 3], &[2, 4, 6], &[1, 0, -1]]);
        let k = a.kernel(8).unwrap();
        assert_eq!(k, vec![vec![int(1), int(-2), int(1)]]);
        let b = RationalMatrix::from_rows(vec![vec![ratio(1, 3), ratio(-2, 7)], vec![ratio(2, 3), ratio(-4, 7)]]).unwrap();
        assert_eq!(b.kernel(8).unwrap(), vec![vec![ratio(6, 7), int(1)]]);
        assert!(RationalMatrix::identity(3).kernel(4).unwrap().is_empty());
    }

    #[test]
    fn primes_are_prime() {
        let ps: Vec<u64> = large_primes().take(3).collect();
        assert!(ps.windows(2).all(|w| w[0] > w[1]));
        assert!(is_prime(2_305_843_009_213_693_951));
        assert!(!is_prime(2_305_843_009_213_693_953));
    }

    #[test]
    fn json_roundtrip() {
        let x = ratio(-3, 14);
        let j = RationalJson::from(&x);
        assert_eq!(j, RationalJson { num: "-3".into(), den: "14".into() });
        assert_eq!(Rational::try_from(&j).unwrap(), x);
    }
}
