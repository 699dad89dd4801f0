//! Permutations of {1..k}, the ordered group S_k and its multiplication table.
//!
//! Internally images are stored 0-based; everything user facing is 1-based.

use std::cmp::Reverse;
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported degree. 8! = 40320 elements.
pub const MAX_DEGREE: usize = 8;

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation {
    images: Vec<u8>,
}

impl Permutation {
    pub fn identity(k: usize) -> Self {
        Self { images: (0..k as u8).collect() }
    }

    /// Builds a permutation from 1-based images.
    pub fn from_images(images: &[usize]) -> Result<Self> {
        let k = images.len();
        if k > u8::MAX as usize {
            return Err(Error::SizeLimit(format!("degree {k}")));
        }
        let mut seen = vec![false; k];
        for &x in images {
            if x == 0 || x > k || seen[x - 1] {
                return Err(Error::InvalidPermutation(format!("{images:?} is not a bijection on 1..{k}")));
            }
            seen[x - 1] = true;
        }
        Ok(Self { images: images.iter().map(|&x| (x - 1) as u8).collect() })
    }

    fn from_raw(images: Vec<u8>) -> Self {
        Self { images }
    }

    /// Builds a permutation of degree `k` from disjoint 1-based cycles.
    pub fn from_cycles(k: usize, cycles: &[Vec<usize>]) -> Result<Self> {
        let mut images: Vec<usize> = (1..=k).collect();
        let mut used = vec![false; k + 1];
        for cycle in cycles {
            for (pos, &x) in cycle.iter().enumerate() {
                if x == 0 || x > k || used[x] {
                    return Err(Error::InvalidPermutation(format!("bad cycle {cycle:?} for degree {k}")));
                }
                used[x] = true;
                images[x - 1] = cycle[(pos + 1) % cycle.len()];
            }
        }
        Self::from_images(&images)
    }

    /// Parses cycle notation such as `(1 2)(3 4)`, `(1,2,3)` or `e`.
    pub fn parse(k: usize, text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "e" || text == "()" {
            return Ok(Self::identity(k));
        }
        let mut cycles = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            let open = rest
                .strip_prefix('(')
                .ok_or_else(|| Error::InvalidPermutation(format!("expected '(' in {text:?}")))?;
            let close = open
                .find(')')
                .ok_or_else(|| Error::InvalidPermutation(format!("unclosed cycle in {text:?}")))?;
            let cycle = open[..close]
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|_| Error::InvalidPermutation(format!("bad entry {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            cycles.push(cycle);
            rest = open[close + 1..].trim_start();
        }
        Self::from_cycles(k, &cycles)
    }

    pub fn degree(&self) -> usize {
        self.images.len()
    }

    /// 1-based image array.
    pub fn images(&self) -> Vec<usize> {
        self.images.iter().map(|&x| x as usize + 1).collect()
    }

    /// Image of the 1-based point `i`.
    pub fn apply(&self, i: usize) -> usize {
        self.images[i - 1] as usize + 1
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(i, &x)| i == x as usize)
    }

    fn check_degree(&self, other: &Self) -> Result<()> {
        if self.degree() != other.degree() {
            return Err(Error::DegreeMismatch(self.degree(), other.degree()));
        }
        Ok(())
    }

    /// `(self ∘ other)(i) = self(other(i))`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.check_degree(other)?;
        Ok(self.compose_unchecked(other))
    }

    fn compose_unchecked(&self, other: &Self) -> Self {
        Self::from_raw(other.images.iter().map(|&j| self.images[j as usize]).collect())
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0u8; self.degree()];
        for (i, &x) in self.images.iter().enumerate() {
            inv[x as usize] = i as u8;
        }
        Self::from_raw(inv)
    }

    /// `g ∘ self ∘ g⁻¹`.
    pub fn conjugate(&self, g: &Self) -> Result<Self> {
        self.check_degree(g)?;
        Ok(g.compose_unchecked(self).compose_unchecked(&g.inverse()))
    }

    /// Disjoint cycles as 1-based point lists, each starting at its smallest point.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let k = self.degree();
        let mut seen = vec![false; k];
        let mut out = Vec::new();
        for start in 0..k {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut j = start;
            while !seen[j] {
                seen[j] = true;
                cycle.push(j + 1);
                j = self.images[j] as usize;
            }
            out.push(cycle);
        }
        out
    }

    /// Number of disjoint cycles, fixed points included.
    pub fn cycle_count(&self) -> usize {
        let k = self.degree();
        let mut seen = vec![false; k];
        let mut count = 0;
        for start in 0..k {
            if !seen[start] {
                count += 1;
                let mut j = start;
                while !seen[j] {
                    seen[j] = true;
                    j = self.images[j] as usize;
                }
            }
        }
        count
    }

    /// Cycle lengths sorted in descending order (a partition of k).
    pub fn cycle_type(&self) -> Vec<usize> {
        let mut t: Vec<usize> = self.cycles().iter().map(Vec::len).collect();
        t.sort_unstable_by(|a, b| b.cmp(a));
        t
    }

    pub fn fixed_points(&self) -> Vec<usize> {
        (1..=self.degree()).filter(|&i| self.apply(i) == i).collect()
    }

    pub fn moved_points(&self) -> Vec<usize> {
        (1..=self.degree()).filter(|&i| self.apply(i) != i).collect()
    }

    pub fn is_transposition(&self) -> bool {
        self.moved_points().len() == 2
    }

    /// Deletes the point k, which must be fixed.
    pub fn restrict(&self) -> Option<Self> {
        let k = self.degree();
        if k == 0 || self.images[k - 1] as usize != k - 1 {
            return None;
        }
        Some(Self::from_raw(self.images[..k - 1].to_vec()))
    }

    /// Adds k+1 as a fixed point.
    pub fn extend(&self) -> Self {
        let mut images = self.images.clone();
        images.push(self.degree() as u8);
        Self::from_raw(images)
    }

    fn order_key(&self) -> (Reverse<usize>, Vec<usize>, Reverse<Vec<usize>>, Vec<u8>) {
        (
            Reverse(self.fixed_points().len()),
            self.moved_points(),
            Reverse(self.cycle_type()),
            self.images.clone(),
        )
    }
}

impl fmt::Display for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "e");
        }
        for cycle in self.cycles().into_iter().filter(|c| c.len() > 1) {
            let parts: Vec<String> = cycle.iter().map(usize::to_string).collect();
            write!(f, "({})", parts.join(" "))?;
        }
        Ok(())
    }
}

impl fmt::Debug for Permutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// All partitions of `k` in reverse lexicographic order, `[k]` first.
pub fn partitions(k: usize) -> Vec<Vec<usize>> {
    fn rec(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(cur.clone());
            return;
        }
        for part in (1..=rest.min(max)).rev() {
            cur.push(part);
            rec(rest - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, k, &mut Vec::new(), &mut out);
    out
}

/// Multiplication table of S_k over [`GroupOrder`] indices.
pub struct CayleyTable {
    n: usize,
    mul: Vec<u16>,
    inv: Vec<u16>,
    cycles: Vec<u8>,
    class: Vec<u8>,
}

impl CayleyTable {
    /// Index of `elems[a] ∘ elems[b]`.
    #[inline]
    pub fn mul(&self, a: usize, b: usize) -> usize {
        self.mul[a * self.n + b] as usize
    }

    #[inline]
    pub fn inv(&self, a: usize) -> usize {
        self.inv[a] as usize
    }

    #[inline]
    pub fn cycles(&self, a: usize) -> usize {
        self.cycles[a] as usize
    }

    /// Position of the cycle type of `elems[a]` in [`partitions`]`(k)`.
    #[inline]
    pub fn class(&self, a: usize) -> usize {
        self.class[a] as usize
    }
}

/// S_k listed in block order: identity first, then by decreasing number of
/// fixed points, grouped by the set of moved points, then by conjugacy
/// class, then lexicographically on images.
pub struct GroupOrder {
    k: usize,
    elems: Vec<Permutation>,
    index: HashMap<Permutation, usize>,
    table: OnceLock<CayleyTable>,
}

/// Largest degree for which the full multiplication table is built.
const TABLE_DEGREE_LIMIT: usize = 7;

impl GroupOrder {
    pub fn enumerate(k: usize) -> Result<Self> {
        if k == 0 || k > MAX_DEGREE {
            return Err(Error::SizeLimit(format!("degree must be in 1..={MAX_DEGREE}, got {k}")));
        }
        let mut elems = Vec::new();
        let mut current: Vec<u8> = (0..k as u8).collect();
        loop {
            elems.push(Permutation::from_raw(current.clone()));
            if !next_permutation(&mut current) {
                break;
            }
        }
        elems.sort_by_cached_key(Permutation::order_key);
        let index = elems.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Ok(Self { k, elems, index, table: OnceLock::new() })
    }

    /// Process-wide cached instance.
    pub fn shared(k: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GroupOrder>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(g) = cache.lock().unwrap().get(&k) {
            return Ok(g.clone());
        }
        let g = Arc::new(Self::enumerate(k)?);
        Ok(cache.lock().unwrap().entry(k).or_insert(g).clone())
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elements(&self) -> &[Permutation] {
        &self.elems
    }

    pub fn get(&self, i: usize) -> &Permutation {
        &self.elems[i]
    }

    pub fn index_of(&self, p: &Permutation) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Permutation> {
        self.elems.iter()
    }

    /// Indices of all transpositions.
    pub fn transpositions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.elems[i].is_transposition()).collect()
    }

    /// Contiguous index ranges sharing the same set of moved points.
    pub fn fixed_point_blocks(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.elems[i].moved_points() != self.elems[start].moved_points() {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn table(&self) -> Result<&CayleyTable> {
        if self.k > TABLE_DEGREE_LIMIT {
            return Err(Error::SizeLimit(format!("multiplication table for degree {}", self.k)));
        }
        Ok(self.table.get_or_init(|| self.build_table()))
    }

    fn build_table(&self) -> CayleyTable {
        let n = self.len();
        let parts = partitions(self.k);
        let mut mul = vec![0u16; n * n];
        for a in 0..n {
            for b in 0..n {
                let c = self.elems[a].compose_unchecked(&self.elems[b]);
                mul[a * n + b] = self.index[&c] as u16;
            }
        }
        let inv = self.elems.iter().map(|p| self.index[&p.inverse()] as u16).collect();
        let cycles = self.elems.iter().map(|p| p.cycle_count() as u8).collect();
        let class = self
            .elems
            .iter()
            .map(|p| {
                let t = p.cycle_type();
                parts.iter().position(|q| *q == t).unwrap() as u8
            })
            .collect();
        CayleyTable { n, mul, inv, cycles, class }
    }
}

fn next_permutation(a: &mut [u8]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: usize, s: &str) -> Permutation {
        Permutation::parse(k, s).unwrap()
    }

    #[test]
    fn small_orders() {
        let names = |k| GroupOrder::enumerate(k).unwrap().iter().map(|q| q.to_string()).collect::<Vec<_>>();
        assert_eq!(names(1), ["e"]);
        assert_eq!(names(2), ["e", "(1 2)"]);
        assert_eq!(names(3), ["e", "(1 2)", "(1 3)", "(2 3)", "(1 2 3)", "(1 3 2)"]);
    }

    #[test]
    fn degree_limits() {
        assert!(GroupOrder::enumerate(0).is_err());
        assert!(GroupOrder::enumerate(9).is_err());
    }

    #[test]
    fn s4_layout() {
        let g = GroupOrder::enumerate(4).unwrap();
        let blocks: Vec<usize> = g.fixed_point_blocks().iter().map(|r| r.len()).collect();
        assert_eq!(blocks, [1, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 9]);
        // single fixed point groups run from fixed point 4 down to 1
        assert_eq!(g.get(7).fixed_points(), [4]);
        assert_eq!(g.get(13).fixed_points(), [1]);
        // four-cycles precede double transpositions
        assert_eq!(g.get(15).cycle_type(), [4]);
        assert_eq!(g.get(21).cycle_type(), [2, 2]);
    }

    #[test]
    fn composition() {
        assert_eq!(p(3, "(1 2)").compose(&p(3, "(2 3)")).unwrap(), p(3, "(1 2 3)"));
        let q = p(5, "(1 4 2)(3 5)");
        assert!(q.compose(&q.inverse()).unwrap().is_identity());
        assert_eq!(Permutation::identity(5).compose(&q).unwrap(), q);
        assert!(matches!(q.compose(&Permutation::identity(4)), Err(Error::DegreeMismatch(5, 4))));
    }

    #[test]
    fn cycle_counts() {
        assert_eq!(Permutation::identity(3).cycle_count(), 3);
        assert_eq!(p(3, "(1 2 3)").cycle_count(), 1);
        assert_eq!(p(4, "(1 2)(3 4)").cycle_count(), 2);
    }

    #[test]
    fn conjugation() {
        assert_eq!(p(3, "(1 2)").conjugate(&p(3, "(2 3)")).unwrap(), p(3, "(1 3)"));
        assert!(Permutation::identity(3).conjugate(&p(3, "(1 3 2)")).unwrap().is_identity());
    }

    #[test]
    fn parse_and_display() {
        assert_eq!(p(4, "(1,3)(2 4)").to_string(), "(1 3)(2 4)");
        assert_eq!(p(4, "e").to_string(), "e");
        assert!(Permutation::parse(3, "(1 1)").is_err());
        assert!(Permutation::parse(3, "(1 4)").is_err());
        assert!(Permutation::parse(3, "1 2").is_err());
        assert!(Permutation::from_images(&[1, 1, 3]).is_err());
    }

    #[test]
    fn restriction() {
        assert_eq!(p(4, "(1 2)").restrict().unwrap(), p(3, "(1 2)"));
        assert!(p(4, "(1 4)").restrict().is_none());
        assert_eq!(p(3, "(1 2)").extend(), p(4, "(1 2)"));
    }

    #[test]
    fn table_matches_compose() {
        let g = GroupOrder::enumerate(4).unwrap();
        let t = g.table().unwrap();
        for a in 0..g.len() {
            assert_eq!(t.mul(a, t.inv(a)), 0);
            for b in 0..g.len() {
                assert_eq!(g.get(t.mul(a, b)), &g.get(a).compose(g.get(b)).unwrap());
            }
        }
    }

    #[test]
    fn partition_counts() {
        let counts: Vec<usize> = (1..=8).map(|k| partitions(k).len()).collect();
        assert_eq!(counts, [1, 2, 3, 5, 7, 11, 15, 22]);
    }
}
