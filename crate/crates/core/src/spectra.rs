//! Eigen-analysis of transfer matrices, correlation lengths and the
//! second-eigenvalue conjecture checker.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::permgroup::GroupOrder;
use crate::rational::{int, to_f64, Rational, RationalJson, RationalMatrix};
use crate::transfer1d::{identity_transfer, Params};

pub const GROUP_TOL: f64 = 1e-8;

/// One distinct eigenvalue with its multiplicity and, if requested,
/// biorthonormal right/left eigenvector blocks (`Lᵀ R = I`).
#[derive(Clone, Debug)]
pub struct EigenGroup {
    pub value: Complex64,
    pub multiplicity: usize,
    pub geometric: Option<usize>,
    pub right: Option<DMatrix<f64>>,
    pub left: Option<DMatrix<f64>>,
}

impl EigenGroup {
    pub fn modulus(&self) -> f64 {
        self.value.norm()
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumReport {
    pub dim: usize,
    /// Sorted by modulus, descending.
    pub values: Vec<Complex64>,
    pub groups: Vec<EigenGroup>,
    pub tolerance: f64,
    /// `max ‖A R − λ R‖ / ‖A‖` over groups with eigenvectors.
    pub residual: Option<f64>,
    /// `max ‖Lᵀ R − I‖` over all computed groups, including cross terms.
    pub biorthogonality: Option<f64>,
}

impl SpectrumReport {
    pub fn spectral_radius(&self) -> f64 {
        self.values.first().map_or(0.0, |v| v.norm())
    }

    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn min_real(&self) -> f64 {
        self.values.iter().map(|v| v.re).fold(f64::INFINITY, f64::min)
    }

    pub fn multiplicities(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.multiplicity).collect()
    }

    /// True when every group's geometric multiplicity matches its algebraic one.
    pub fn diagonalizable(&self) -> Option<bool> {
        self.groups.iter().map(|g| g.geometric.map(|m| m == g.multiplicity)).collect::<Option<Vec<_>>>().map(|v| v.iter().all(|&b| b))
    }
}

/// How many leading groups receive eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Vectors {
    None,
    Leading(usize),
    All,
}

/// Parlett–Reinsch balancing by powers of two. Returns the balanced copy.
/// Reducible matrices can drive the scale factors without bound, so each
/// factor is kept within `2^±32` and the sweeps are capped.
fn balance(a: &DMatrix<f64>) -> DMatrix<f64> {
    const RADIX: f64 = 2.0;
    const CAP: f64 = 4_294_967_296.0;
    let n = a.nrows();
    let mut b = a.clone();
    let mut total = vec![1.0f64; n];
    for _ in 0..64 {
        let mut done = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += b[(j, i)].abs();
                    r += b[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / RADIX && total[i] * f < CAP {
                f *= RADIX;
                cc *= RADIX * RADIX;
            }
            while cc > r * RADIX && total[i] * f > 1.0 / CAP {
                f /= RADIX;
                cc /= RADIX * RADIX;
            }
            if c * f + r / f < 0.95 * s {
                done = false;
                total[i] *= f;
                for j in 0..n {
                    b[(i, j)] /= f;
                }
                for j in 0..n {
                    b[(j, i)] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
    b
}

fn fingerprint(a: &DMatrix<f64>) -> String {
    format!("dim={} frobenius={:.6e} trace={:.6e}", a.nrows(), a.norm(), a.trace())
}

/// Eigenvalues (balanced real Schur form) plus eigenvectors from the SVD null
/// spaces of `A − λI`, grouped at relative tolerance [`GROUP_TOL`].
pub fn eigen_full(a: &DMatrix<f64>, vectors: Vectors) -> Result<SpectrumReport> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!("matrix is {}×{}", a.nrows(), a.ncols())));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen(format!("non-finite entries; {}", fingerprint(a))));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(SpectrumReport { dim: 0, values: vec![], groups: vec![], tolerance: GROUP_TOL, residual: None, biorthogonality: None });
    }
    // the deflation threshold of the QR sweep is relaxed step by step; at
    // machine epsilon it stalls on the exact zero blocks of transfer matrices
    let balanced = balance(a);
    let schur = [1e-15, 1e-14, 1e-13]
        .iter()
        .find_map(|&eps| balanced.clone().try_schur(eps, 100 * n).or_else(|| a.clone().try_schur(eps, 100 * n)))
        .ok_or_else(|| Error::Eigen(format!("Schur iteration did not converge; {}", fingerprint(a))))?;
    let mut values: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.re.total_cmp(&x.re)).then(y.im.total_cmp(&x.im)));
    let radius = values[0].norm();
    let tol = GROUP_TOL * radius.max(f64::MIN_POSITIVE);

    let mut clusters: Vec<Vec<Complex64>> = Vec::new();
    for &v in &values {
        match clusters.iter_mut().find(|c| (c[0] - v).norm() <= tol) {
            Some(c) => c.push(v),
            None => clusters.push(vec![v]),
        }
    }
    let mut groups: Vec<EigenGroup> = clusters
        .into_iter()
        .map(|c| {
            let mean = c.iter().sum::<Complex64>() / c.len() as f64;
            EigenGroup { value: mean, multiplicity: c.len(), geometric: None, right: None, left: None }
        })
        .collect();
    groups.sort_by(|x, y| y.modulus().total_cmp(&x.modulus()).then(y.value.re.total_cmp(&x.value.re)));

    let wanted = match vectors {
        Vectors::None => 0,
        Vectors::Leading(m) => m.min(groups.len()),
        Vectors::All => groups.len(),
    };
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut residual: Option<f64> = None;
    for g in groups.iter_mut().take(wanted) {
        if g.value.im.abs() > tol {
            continue;
        }
        let lambda = g.value.re;
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(true, true);
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        let threshold = 1e-7 * scale;
        let geometric = order.iter().take(g.multiplicity).filter(|&&i| svd.singular_values[i] <= threshold).count();
        let take = geometric.max(1);
        let right = DMatrix::from_fn(n, take, |r, c| vt[(order[c], r)]);
        let left = DMatrix::from_fn(n, take, |r, c| u[(r, order[c])]);
        let overlap = left.transpose() * &right;
        let left = match overlap.clone().try_inverse() {
            Some(inv) => left * inv.transpose(),
            // a defective eigenvalue has left and right vectors orthogonal
            None if geometric < g.multiplicity => left,
            None => return Err(Error::Eigen(format!("left/right eigenvectors for λ = {lambda} are orthogonal; {}", fingerprint(a)))),
        };
        let res = (a * &right - &right * lambda).norm() / scale;
        residual = Some(residual.map_or(res, |r: f64| r.max(res)));
        g.geometric = Some(geometric);
        g.right = Some(right);
        g.left = Some(left);
    }

    let computed: Vec<&EigenGroup> = groups.iter().filter(|g| g.right.is_some()).collect();
    let biorthogonality = if computed.is_empty() {
        None
    } else {
        let mut worst: f64 = 0.0;
        for (i, gi) in computed.iter().enumerate() {
            for (j, gj) in computed.iter().enumerate() {
                let m = gi.left.as_ref().unwrap().transpose() * gj.right.as_ref().unwrap();
                let target = if i == j { DMatrix::identity(m.nrows(), m.ncols()) } else { DMatrix::zeros(m.nrows(), m.ncols()) };
                worst = worst.max((m - target).amax());
            }
        }
        Some(worst)
    };

    Ok(SpectrumReport { dim: n, values, groups, tolerance: GROUP_TOL, residual, biorthogonality })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Dim {
    #[serde(rename = "1d")]
    One,
    #[serde(rename = "2d")]
    Two,
}

impl std::str::FromStr for Dim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1d" => Ok(Dim::One),
            "2d" => Ok(Dim::Two),
            _ => Err(Error::InvalidArgument(format!("dimension must be 1d or 2d, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationLength {
    pub dim: Dim,
    pub d: u64,
    #[serde(rename = "D")]
    pub bond: u64,
    pub lambda2: RationalJson,
    pub lambda2_f64: f64,
    pub xi: f64,
    pub zeta: RationalJson,
    pub zeta_f64: f64,
}

/// `(dD² − d)/(d²D² − 1)`.
pub fn lambda2_1d(params: Params) -> Rational {
    let (d, b) = (int(params.d as i64), int(params.bond as i64));
    (&d * &b * &b - &d) / (&d * &d * &b * &b - int(1))
}

/// `(dD³ − dD)/(d²D⁴ − 1)`.
pub fn lambda2_2d(params: Params) -> Rational {
    let (d, b) = (int(params.d as i64), int(params.bond as i64));
    let b2 = &b * &b;
    (&d * &b2 * &b - &d * &b) / (&d * &d * &b2 * &b2 - int(1))
}

pub fn xi_closed_form(dim: Dim, params: Params) -> CorrelationLength {
    let lambda2 = match dim {
        Dim::One => lambda2_1d(params),
        Dim::Two => lambda2_2d(params),
    };
    let zeta = &lambda2 * int(params.d as i64);
    let l = to_f64(&lambda2);
    CorrelationLength {
        dim,
        d: params.d,
        bond: params.bond,
        lambda2: RationalJson::from(&lambda2),
        lambda2_f64: l,
        xi: -1.0 / l.ln(),
        zeta: RationalJson::from(&zeta),
        zeta_f64: to_f64(&zeta),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactMode {
    Off,
    On,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExactMu2 {
    /// "bareiss" or "modular".
    pub method: &'static str,
    /// Kernel dimension of `C_k − μ₂I` over Q, when pinned exactly.
    pub kernel_dim: Option<usize>,
    /// Lower bound from explicitly verified rational kernel vectors.
    pub kernel_lower: usize,
    /// Upper bound from the rank modulo a prime.
    pub kernel_upper: Option<usize>,
    /// The transposition diagonal block equals `μ₂·I` and each transposition
    /// column is supported on `{e, t}`.
    pub transposition_block: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConjectureReport {
    pub k: usize,
    pub d: u64,
    #[serde(rename = "D")]
    pub bond: u64,
    pub lambda1: f64,
    pub lambda1_multiplicity: usize,
    pub lambda2: f64,
    pub lambda2_multiplicity: usize,
    pub mu2: RationalJson,
    pub expected_multiplicity: usize,
    pub max_imag: f64,
    pub min_real: f64,
    pub exact: Option<ExactMu2>,
    pub failures: Vec<String>,
}

impl ConjectureReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Float spectrum of `C_k` against `λ₂ = μ₂` with multiplicity `k(k−1)/2`,
/// plus optional exact confirmation that `μ₂` is an eigenvalue.
pub fn conjecture_check(k: usize, params: Params, exact: ExactMode) -> Result<ConjectureReport> {
    if !(2..=7).contains(&k) {
        return Err(Error::SizeLimit(format!("conjecture checks need 2 ≤ k ≤ 7, got {k}")));
    }
    let c = identity_transfer(k, params)?.matrix;
    let spec = eigen_full(&c.to_f64(), Vectors::None)?;
    let mu2 = lambda2_1d(params);
    let mu2f = to_f64(&mu2);
    let expected = k * (k - 1) / 2;
    let mut failures = Vec::new();

    let g1 = &spec.groups[0];
    if (g1.value.re - 1.0).abs() > GROUP_TOL || g1.multiplicity != 1 {
        failures.push(format!("leading eigenvalue {} with multiplicity {}", g1.value, g1.multiplicity));
    }
    let (l2, m2) = spec.groups.get(1).map_or((0.0, 0), |g| (g.value.re, g.multiplicity));
    if (l2 - mu2f).abs() > GROUP_TOL {
        failures.push(format!("second eigenvalue {l2} differs from μ₂ = {mu2f}"));
    }
    if m2 != expected {
        failures.push(format!("second eigenvalue {l2} has multiplicity {m2}, expected {expected}"));
    }
    let radius = spec.spectral_radius();
    if spec.max_imag() > 1e-9 * radius {
        failures.push(format!("eigenvalue with imaginary part {}", spec.max_imag()));
    }
    if spec.min_real() < -1e-9 {
        failures.push(format!("negative eigenvalue {}", spec.min_real()));
    }

    let exact = match exact {
        ExactMode::Off => None,
        ExactMode::On => {
            let e = exact_mu2(&c, &mu2, k)?;
            let lower_ok = e.kernel_lower >= 1;
            if !lower_ok {
                failures.push("μ₂ not confirmed as an exact eigenvalue".into());
            }
            if let Some(dim) = e.kernel_dim {
                if dim != expected {
                    failures.push(format!("exact kernel of C_k − μ₂I has dimension {dim}, expected {expected}"));
                }
            }
            Some(e)
        }
    };

    Ok(ConjectureReport {
        k,
        d: params.d,
        bond: params.bond,
        lambda1: g1.value.re,
        lambda1_multiplicity: g1.multiplicity,
        lambda2: l2,
        lambda2_multiplicity: m2,
        mu2: RationalJson::from(&mu2),
        expected_multiplicity: expected,
        max_imag: spec.max_imag(),
        min_real: spec.min_real(),
        exact,
        failures,
    })
}

fn exact_mu2(c: &RationalMatrix, mu2: &Rational, k: usize) -> Result<ExactMu2> {
    let g = GroupOrder::shared(k)?;
    let n = g.len();
    let shifted = c.shift(mu2);
    let transpositions = g.transpositions();
    let transposition_block = transpositions.iter().all(|&t| {
        (0..n).all(|i| {
            let x = &c[(i, t)];
            if i == t {
                x == mu2
            } else {
                i == 0 || x.is_zero()
            }
        })
    }) && (1..n).all(|i| c[(i, 0)].is_zero());

    // e_t + u e_e with u = C[e, t]/(μ₂ − 1) whenever the transposition
    // columns and the e column have the required support
    let mut explicit = 0;
    if transposition_block {
        let denom = mu2 - Rational::one();
        for &t in &transpositions {
            let mut v = vec![Rational::zero(); n];
            v[t] = Rational::one();
            v[0] = &c[(0, t)] / &denom;
            if shifted.mul_vec(&v).iter().all(Zero::is_zero) {
                explicit += 1;
            }
        }
    }

    if n <= 120 {
        let dim = n - shifted.rank();
        return Ok(ExactMu2 { method: "bareiss", kernel_dim: Some(dim), kernel_lower: dim, kernel_upper: Some(dim), transposition_block });
    }

    let p = crate::rational::large_primes().find(|&p| shifted.rank_mod(p).is_some()).unwrap();
    let upper = n - shifted.rank_mod(p).unwrap();
    let lower = if explicit == transpositions.len() {
        explicit
    } else {
        shifted.kernel(64).map_or(explicit, |basis| basis.len().max(explicit))
    };
    let kernel_dim = (lower == upper).then_some(lower);
    Ok(ExactMu2 { method: "modular", kernel_dim, kernel_lower: lower, kernel_upper: Some(upper), transposition_block })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Decay rate `1/ξ`.
    pub rate: f64,
    pub xi: f64,
    /// `K` in `K e^{−r/ξ}`.
    pub prefactor: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

/// Least-squares fit of `ln(value)` against r.
pub fn decay_extrapolate(values: &BTreeMap<u32, f64>) -> Result<DecayFit> {
    if values.len() < 3 {
        return Err(Error::Fit(format!("need at least 3 distances, got {}", values.len())));
    }
    if let Some((r, v)) = values.iter().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!("non-positive value {v} at r = {r}")));
    }
    let xs: Vec<f64> = values.keys().map(|&r| r as f64).collect();
    let ys: Vec<f64> = values.values().map(|v| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum::<f64>() / n).sqrt();
    let rate = -slope;
    Ok(DecayFit { rate, xi: 1.0 / rate, prefactor: intercept.exp(), residual })
}
