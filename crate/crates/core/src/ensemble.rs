//! Monte Carlo over sequentially generated random MPS and isoTNS.
//!
//! Every sample owns a ChaCha8 stream: `ChaCha8Rng::seed_from_u64(seed)`
//! with `set_stream(tag << 40 | index)`, so results do not depend on how
//! samples are spread over threads.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectra::{decay_extrapolate, xi_closed_form, DecayFit, Dim};
use crate::transfer1d::{Params, RegionSpec};

/// Largest reduced density matrix dimension.
pub const MAX_REDUCED_DIM: usize = 1 << 12;
/// Largest dense isoTNS state.
pub const MAX_DENSE_DIM: usize = 1 << 22;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const C1: Complex64 = Complex64 { re: 1.0, im: 0.0 };

pub fn sample_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 40) | index);
    rng
}

/// Haar unitary from a Ginibre matrix, QR, and the phase fix `Q·diag(r_ii/|r_ii|)`.
pub fn haar_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<Complex64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        let x = r[(j, j)];
        let phase = if x.norm() > 0.0 { x / x.norm() } else { C1 };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// `A[s][α][β]` with physical, left and right dimensions.
#[derive(Clone, Debug)]
pub struct SiteTensor {
    pub phys: usize,
    pub left: usize,
    pub right: usize,
    data: Vec<Complex64>,
}

impl SiteTensor {
    pub fn get(&self, s: usize, a: usize, b: usize) -> Complex64 {
        self.data[(s * self.left + a) * self.right + b]
    }

    /// `A_s` as a left × right matrix.
    fn slice(&self, s: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(s, a, b))
    }
}

#[derive(Clone, Debug)]
pub struct MpsState {
    pub params: Params,
    pub sites: Vec<SiteTensor>,
}

#[derive(Clone, Debug)]
pub struct IsoState {
    pub rows: usize,
    pub cols: usize,
    pub params: Params,
    /// Physical dimension per site, row-major from the bottom-left corner.
    pub dims: Vec<usize>,
    /// Amplitudes with the first site most significant.
    pub psi: DVector<Complex64>,
}

#[derive(Clone, Debug)]
pub enum EnsembleState {
    Mps(MpsState),
    IsoTns(IsoState),
}

/// Left to right, bond register starting in |0⟩, one fresh `U(dD)` per site:
/// `A[s][α][β] = U[(s, β), (0, α)]`. The last site keeps its bond, so its
/// physical dimension is dD.
pub fn sample_mps<R: Rng + ?Sized>(n: usize, params: Params, rng: &mut R) -> Result<MpsState> {
    if n < 2 {
        return Err(Error::InvalidArgument("an MPS needs at least 2 sites".into()));
    }
    let (d, bd) = (params.d as usize, params.bond as usize);
    let mut sites = Vec::with_capacity(n);
    for i in 0..n {
        let u = haar_unitary(d * bd, rng);
        let left = if i == 0 { 1 } else { bd };
        let last = i + 1 == n;
        let (phys, right) = if last { (d * bd, 1) } else { (d, bd) };
        let mut data = vec![C0; phys * left * right];
        for s in 0..phys {
            for a in 0..left {
                for b in 0..right {
                    let out = if last { s } else { s * bd + b };
                    data[(s * left + a) * right + b] = u[(out, a)];
                }
            }
        }
        sites.push(SiteTensor { phys, left, right, data });
    }
    Ok(MpsState { params, sites })
}

impl MpsState {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.phys).collect()
    }

    /// Dense amplitudes, first site most significant.
    pub fn to_dense(&self) -> Result<DVector<Complex64>> {
        let total: usize = self.dims().iter().product();
        if total > MAX_DENSE_DIM {
            return Err(Error::SizeLimit(format!("dense MPS of dimension {total}")));
        }
        // v[(p, β)]
        let mut v = vec![C1];
        let mut p = 1;
        let mut bond = 1;
        for site in &self.sites {
            let mut next = vec![C0; p * site.phys * site.right];
            for q in 0..p {
                for s in 0..site.phys {
                    for b in 0..site.right {
                        let mut acc = C0;
                        for a in 0..bond {
                            acc += v[q * bond + a] * site.get(s, a, b);
                        }
                        next[(q * site.phys + s) * site.right + b] = acc;
                    }
                }
            }
            v = next;
            p *= site.phys;
            bond = site.right;
        }
        Ok(DVector::from_vec(v))
    }

    /// Reduced density matrix of the given sites (ascending) by environment
    /// contraction. Sites after the last kept one collapse to the identity.
    pub fn reduced_density(&self, region: &[usize]) -> Result<DMatrix<Complex64>> {
        check_region(region, self.len())?;
        let out: usize = region.iter().map(|&i| self.sites[i].phys).product();
        if out > MAX_REDUCED_DIM {
            return Err(Error::SizeLimit(format!("reduced density of dimension {out}")));
        }
        let last = *region.last().unwrap();
        let mut m = DMatrix::from_element(1, 1, C1);
        let mut p = 1;
        for (i, site) in self.sites.iter().enumerate().take(last + 1) {
            let eye = DMatrix::<Complex64>::identity(p, p);
            if region.contains(&i) {
                let a = DMatrix::from_fn(site.phys * site.right, site.left, |r, c| site.get(r / site.right, c, r % site.right));
                let k = eye.kronecker(&a);
                m = &k * m * k.adjoint();
                p *= site.phys;
            } else {
                let mut acc = DMatrix::zeros(p * site.right, p * site.right);
                for s in 0..site.phys {
                    let k = eye.kronecker(&site.slice(s).transpose());
                    acc += &k * &m * k.adjoint();
                }
                m = acc;
            }
        }
        let bond = self.sites[last].right;
        Ok(DMatrix::from_fn(p, p, |r, c| (0..bond).map(|b| m[(r * bond + b, c * bond + b)]).sum()))
    }
}

fn check_region(region: &[usize], n: usize) -> Result<()> {
    if region.is_empty() {
        return Err(Error::InvalidArgument("empty region".into()));
    }
    if region.windows(2).any(|w| w[0] >= w[1]) || *region.last().unwrap() >= n {
        return Err(Error::InvalidArgument(format!("region {region:?} must be ascending site indices below {n}")));
    }
    Ok(())
}

/// Moves tensor axes: output axis i is input axis `order[i]`.
fn permute_axes(data: &[Complex64], dims: &[usize], order: &[usize]) -> Vec<Complex64> {
    let k = dims.len();
    let mut strides = vec![1; k];
    for i in (0..k.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let new_dims: Vec<usize> = order.iter().map(|&o| dims[o]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; k];
    for _ in 0..data.len() {
        let src: usize = (0..k).map(|i| idx[i] * strides[order[i]]).sum();
        out.push(data[src]);
        for i in (0..k).rev() {
            idx[i] += 1;
            if idx[i] < new_dims[i] {
                break;
            }
            idx[i] = 0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Leg {
    Phys(usize),
    Right(usize),
    Up(usize),
}

/// Sequential isoTNS on `rows × cols`, generated row by row from the
/// bottom-left corner. Each site applies `U(dD²)` to `|0⟩_d ⊗ left ⊗ down`
/// and emits `phys ⊗ right ⊗ up`; boundary inputs are |0⟩, and the right
/// column and top row keep their outgoing bonds as physical space.
pub fn sample_isotns<R: Rng + ?Sized>(rows: usize, cols: usize, params: Params, rng: &mut R) -> Result<IsoState> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument("lattice needs at least one row and column".into()));
    }
    let (d, bd) = (params.d as usize, params.bond as usize);
    let total = (d as f64).powi((rows * cols) as i32) * (bd as f64).powi((rows + cols) as i32);
    if total > MAX_DENSE_DIM as f64 {
        return Err(Error::SizeLimit(format!("isoTNS of dimension {total:.0} exceeds the dense ceiling {MAX_DENSE_DIM}")));
    }
    let site = |y: usize, x: usize| y * cols + x;
    let mut psi = vec![C1];
    let mut legs: Vec<(Leg, usize)> = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let i = site(y, x);
            let u = haar_unitary(d * bd * bd, rng);
            let left = (x > 0).then(|| Leg::Right(site(y, x - 1)));
            let down = (y > 0).then(|| Leg::Up(site(y - 1, x)));
            let inputs: Vec<Leg> = [left, down].into_iter().flatten().collect();
            // bring the input legs to the end
            let rest: Vec<usize> = (0..legs.len()).filter(|&j| !inputs.contains(&legs[j].0)).collect();
            let tail: Vec<usize> = inputs.iter().map(|l| legs.iter().position(|(m, _)| m == l).unwrap()).collect();
            let order: Vec<usize> = rest.iter().chain(&tail).copied().collect();
            let dims: Vec<usize> = legs.iter().map(|l| l.1).collect();
            let data = permute_axes(&psi, &dims, &order);
            let rest_dim: usize = rest.iter().map(|&j| dims[j]).product();
            let in_dim: usize = tail.iter().map(|&j| dims[j]).product();
            let out_dim = d * bd * bd;
            let col_of = |c: usize| -> usize {
                // input index (l, dn) of the present legs mapped into (0_d, l, dn)
                let (l, dn) = match (left.is_some(), down.is_some()) {
                    (true, true) => (c / bd, c % bd),
                    (true, false) => (c, 0),
                    (false, true) => (0, c),
                    (false, false) => (0, 0),
                };
                l * bd + dn
            };
            let mut next = vec![C0; rest_dim * out_dim];
            for r in 0..rest_dim {
                for c in 0..in_dim {
                    let amp = data[r * in_dim + c];
                    if amp == C0 {
                        continue;
                    }
                    let uc = col_of(c);
                    for o in 0..out_dim {
                        next[r * out_dim + o] += amp * u[(o, uc)];
                    }
                }
            }
            psi = next;
            legs = rest.iter().map(|&j| legs[j]).collect();
            legs.extend([(Leg::Phys(i), d), (Leg::Right(i), bd), (Leg::Up(i), bd)]);
        }
    }
    // site order, each site holding (phys, right bond on the last column, up bond on the top row)
    let mut order = Vec::new();
    let mut site_dims = Vec::new();
    for y in 0..rows {
        for x in 0..cols {
            let i = site(y, x);
            let mut dim = 1;
            for leg in [Leg::Phys(i), Leg::Right(i), Leg::Up(i)] {
                if let Some(j) = legs.iter().position(|(l, _)| *l == leg) {
                    order.push(j);
                    dim *= legs[j].1;
                }
            }
            site_dims.push(dim);
        }
    }
    let dims: Vec<usize> = legs.iter().map(|l| l.1).collect();
    let psi = permute_axes(&psi, &dims, &order);
    Ok(IsoState { rows, cols, params, dims: site_dims, psi: DVector::from_vec(psi) })
}

impl IsoState {
    pub fn site(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn reduced_density(&self, region: &[usize]) -> Result<DMatrix<Complex64>> {
        dense_reduced_density(self.psi.as_slice(), &self.dims, region)
    }
}

/// `ρ_R = tr_{R̄} |ψ⟩⟨ψ|` for a dense state over sites of the given dimensions.
pub fn dense_reduced_density(psi: &[Complex64], dims: &[usize], region: &[usize]) -> Result<DMatrix<Complex64>> {
    check_region(region, dims.len())?;
    let out: usize = region.iter().map(|&i| dims[i]).product();
    if out > MAX_REDUCED_DIM {
        return Err(Error::SizeLimit(format!("reduced density of dimension {out}")));
    }
    let rest: Vec<usize> = (0..dims.len()).filter(|i| !region.contains(i)).collect();
    let order: Vec<usize> = region.iter().chain(&rest).copied().collect();
    let data = permute_axes(psi, dims, &order);
    let m = DMatrix::from_row_slice(out, data.len() / out, &data);
    Ok(&m * m.adjoint())
}

/// Partial trace keeping factor `keep` of a bipartite `dims[0] ⊗ dims[1]` operator.
pub fn partial_trace(rho: &DMatrix<Complex64>, dims: [usize; 2], keep: usize) -> DMatrix<Complex64> {
    let [da, db] = dims;
    if keep == 0 {
        DMatrix::from_fn(da, da, |i, j| (0..db).map(|b| rho[(i * db + b, j * db + b)]).sum())
    } else {
        DMatrix::from_fn(db, db, |i, j| (0..da).map(|a| rho[(a * db + i, a * db + j)]).sum())
    }
}

/// Real eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().collect()
}

const CLAMP: f64 = 1e-14;

/// Von Neumann entropy, natural log, eigenvalues clamped at 1e−14.
pub fn von_neumann(rho: &DMatrix<Complex64>) -> f64 {
    hermitian_eigenvalues(rho).into_iter().map(|l| l.min(1.0)).filter(|&l| l > CLAMP).map(|l| -l * l.ln()).sum()
}

/// Rényi entropy of order α ≠ 1.
pub fn renyi(rho: &DMatrix<Complex64>, alpha: f64) -> f64 {
    let s: f64 = hermitian_eigenvalues(rho).into_iter().map(|l| l.clamp(0.0, 1.0)).filter(|&l| l > CLAMP).map(|l| l.powf(alpha)).sum();
    s.ln() / (1.0 - alpha)
}

pub fn purity(rho: &DMatrix<Complex64>) -> f64 {
    (rho * rho).trace().re
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureId {
    VnMi,
    RenyiMi(u32),
    HsNorm,
    TraceDist,
    PurityA,
    PurityB,
    PurityAb,
}

impl std::str::FromStr for MeasureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(a) = s.strip_prefix("renyi_mi:").or_else(|| s.strip_prefix("renyi_mi_")) {
            let a: u32 = a.parse().map_err(|_| Error::InvalidArgument(format!("bad Rényi order in {s:?}")))?;
            if a < 2 {
                return Err(Error::InvalidArgument("Rényi order must be at least 2".into()));
            }
            return Ok(Self::RenyiMi(a));
        }
        match s {
            "vn_mi" => Ok(Self::VnMi),
            "renyi_mi" | "renyi2" => Ok(Self::RenyiMi(2)),
            "hs_norm" | "hsnorm" => Ok(Self::HsNorm),
            "trace_dist" => Ok(Self::TraceDist),
            "purity_a" | "purity" => Ok(Self::PurityA),
            "purity_b" => Ok(Self::PurityB),
            "purity_ab" => Ok(Self::PurityAb),
            _ => Err(Error::InvalidArgument(format!("unknown measure {s:?}"))),
        }
    }
}

impl std::fmt::Display for MeasureId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::VnMi => write!(f, "vn_mi"),
            Self::RenyiMi(a) => write!(f, "renyi_mi:{a}"),
            Self::HsNorm => write!(f, "hs_norm"),
            Self::TraceDist => write!(f, "trace_dist"),
            Self::PurityA => write!(f, "purity_a"),
            Self::PurityB => write!(f, "purity_b"),
            Self::PurityAb => write!(f, "purity_ab"),
        }
    }
}

/// Correlation data of one sample for regions A and B.
#[derive(Clone, Debug, Serialize)]
pub struct Correlations {
    pub vn_mi: f64,
    pub hs_norm: f64,
    pub trace_dist: f64,
    /// `‖X‖₂`, `‖X‖₁` and numerical rank of `X = ρ_AB − ρ_A ⊗ ρ_B`.
    pub schatten2: f64,
    pub schatten1: f64,
    pub rank: usize,
}

/// Everything derived from `ρ_AB` with `dims = [d_A, d_B]`.
pub struct Bipartite {
    pub rho_ab: DMatrix<Complex64>,
    pub rho_a: DMatrix<Complex64>,
    pub rho_b: DMatrix<Complex64>,
}

impl Bipartite {
    pub fn new(rho_ab: DMatrix<Complex64>, dims: [usize; 2]) -> Self {
        let rho_a = partial_trace(&rho_ab, dims, 0);
        let rho_b = partial_trace(&rho_ab, dims, 1);
        Self { rho_ab, rho_a, rho_b }
    }

    pub fn difference(&self) -> DMatrix<Complex64> {
        &self.rho_ab - self.rho_a.kronecker(&self.rho_b)
    }

    pub fn measure(&self, id: MeasureId) -> f64 {
        match id {
            MeasureId::VnMi => von_neumann(&self.rho_a) + von_neumann(&self.rho_b) - von_neumann(&self.rho_ab),
            MeasureId::RenyiMi(a) => {
                let a = a as f64;
                renyi(&self.rho_a, a) + renyi(&self.rho_b, a) - renyi(&self.rho_ab, a)
            }
            MeasureId::HsNorm => self.difference().norm_squared(),
            MeasureId::TraceDist => 0.5 * hermitian_eigenvalues(&self.difference()).iter().map(|l| l.abs()).sum::<f64>(),
            MeasureId::PurityA => purity(&self.rho_a),
            MeasureId::PurityB => purity(&self.rho_b),
            MeasureId::PurityAb => purity(&self.rho_ab),
        }
    }

    pub fn correlations(&self) -> Correlations {
        let x = self.difference();
        let ev = hermitian_eigenvalues(&x);
        let schatten1: f64 = ev.iter().map(|l| l.abs()).sum();
        let schatten2 = x.norm();
        let cut = 1e-12 * ev.iter().fold(0.0f64, |m, l| m.max(l.abs())).max(f64::MIN_POSITIVE);
        Correlations {
            vn_mi: self.measure(MeasureId::VnMi),
            hs_norm: schatten2 * schatten2,
            trace_dist: 0.5 * schatten1,
            schatten2,
            schatten1,
            rank: ev.iter().filter(|l| l.abs() > cut).count(),
        }
    }
}

/// Region pair on either geometry. MPS regions are site indices; isoTNS
/// regions are `(row, col)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Geometry {
    Mps { region: RegionSpec },
    IsoTns { rows: usize, cols: usize, a: Vec<(usize, usize)>, b: Vec<(usize, usize)> },
}

impl Geometry {
    /// Columns `[c, c+a)` and `[c+a+r, c+a+r+b)` of the bottom `h` rows.
    pub fn iso_columns(rows: usize, cols: usize, c: usize, a: usize, r: usize, b: usize, h: usize) -> Result<Self> {
        if h == 0 || h > rows || c + a + r + b > cols || a == 0 {
            return Err(Error::InvalidArgument(format!("regions do not fit a {rows}×{cols} lattice")));
        }
        let cells = |start: usize, width: usize| -> Vec<(usize, usize)> {
            (0..h).flat_map(|y| (start..start + width).map(move |x| (y, x))).collect()
        };
        Ok(Self::IsoTns { rows, cols, a: cells(c, a), b: cells(c + a + r, b) })
    }
}

/// A sample reduced to A ∪ B. With B empty, `dims[1] = 1`.
pub fn sample_bipartite(geometry: &Geometry, params: Params, rng: &mut ChaCha8Rng) -> Result<Bipartite> {
    match geometry {
        Geometry::Mps { region } => {
            let state = sample_mps(region.sites(), params, rng)?;
            let a: Vec<usize> = region.a_sites().collect();
            let b: Vec<usize> = region.b_sites().collect();
            let sites: Vec<usize> = a.iter().chain(&b).copied().collect();
            let rho = state.reduced_density(&sites)?;
            let da: usize = a.iter().map(|&i| state.sites[i].phys).product();
            Ok(Bipartite::new(rho, [da, rho_dim(&state.dims(), &b)]))
        }
        Geometry::IsoTns { rows, cols, a, b } => {
            let state = sample_isotns(*rows, *cols, params, rng)?;
            let ia: Vec<usize> = a.iter().map(|&(y, x)| state.site(y, x)).collect();
            let ib: Vec<usize> = b.iter().map(|&(y, x)| state.site(y, x)).collect();
            if ia.iter().any(|i| ib.contains(i)) {
                return Err(Error::InvalidArgument("regions A and B overlap".into()));
            }
            // A before B in the joint ordering requires sorted, disjoint blocks
            let mut sites: Vec<usize> = ia.iter().chain(&ib).copied().collect();
            sites.sort_unstable();
            if sites.iter().take(ia.len()).any(|i| !ia.contains(i)) {
                return Err(Error::InvalidArgument("region A must precede region B in site order".into()));
            }
            let rho = state.reduced_density(&sites)?;
            let da = rho_dim(&state.dims, &ia);
            Ok(Bipartite::new(rho, [da, rho_dim(&state.dims, &ib)]))
        }
    }
}

fn rho_dim(dims: &[usize], sites: &[usize]) -> usize {
    sites.iter().map(|&i| dims[i]).product()
}

#[derive(Clone, Debug, Serialize)]
pub struct McConfig {
    pub geometry: Geometry,
    pub params: Params,
    pub measure: MeasureId,
    pub samples: usize,
    pub seed: u64,
    /// Stream tag separating independent experiments under one seed.
    pub tag: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct McResult {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Checks run on every hundredth sample.
fn spot_check(bp: &Bipartite) -> Result<()> {
    let rho = &bp.rho_ab;
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::CheckFailed(format!("reduced density has trace {tr}")));
    }
    if (rho - rho.adjoint()).camax() > 1e-10 {
        return Err(Error::CheckFailed("reduced density is not Hermitian".into()));
    }
    if hermitian_eigenvalues(rho).iter().any(|&l| l < -1e-10) {
        return Err(Error::CheckFailed("reduced density has a negative eigenvalue".into()));
    }
    Ok(())
}

pub fn mc_average(config: &McConfig) -> Result<McResult> {
    if config.samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let needs_b = !matches!(config.measure, MeasureId::PurityA | MeasureId::PurityAb);
    let (a_empty, b_empty) = match &config.geometry {
        Geometry::Mps { region } => (region.a == 0, region.b == 0),
        Geometry::IsoTns { a, b, .. } => (a.is_empty(), b.is_empty()),
    };
    if a_empty || (needs_b && b_empty) {
        return Err(Error::InvalidArgument(format!("{} needs non-empty regions A and B", config.measure)));
    }
    let values = crate::par::map_range(config.samples, |i| {
        let mut rng = sample_rng(config.seed, config.tag, i as u64);
        let bp = sample_bipartite(&config.geometry, config.params, &mut rng)?;
        if i % 100 == 0 {
            spot_check(&bp)?;
        }
        Ok(bp.measure(config.measure))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, stderr) = mean_stderr(&values);
    Ok(McResult { mean, stderr, samples: config.samples, seed: config.seed, values })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayPoint {
    pub r: u32,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayResult {
    pub params: Params,
    pub measure: MeasureId,
    pub points: Vec<DecayPoint>,
    pub fit: DecayFit,
    pub xi_hat: f64,
    pub xi_stderr: f64,
    pub xi_closed_form: f64,
    pub rel_err: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// MC means over a grid of gaps r, a log-linear fit, and a bootstrap error
/// on ξ̂ from resampling each r independently.
pub fn decay_experiment(base: &RegionSpec, rs: &[u32], params: Params, measure: MeasureId, samples: usize, seed: u64) -> Result<DecayResult> {
    if rs.len() < 3 {
        return Err(Error::Fit("need at least 3 distances".into()));
    }
    let mut points = Vec::new();
    let mut all = Vec::new();
    for &r in rs {
        let region = RegionSpec { r: r as usize, ..*base };
        let cfg = McConfig { geometry: Geometry::Mps { region }, params, measure, samples, seed, tag: r as u64 + 1 };
        let res = mc_average(&cfg)?;
        points.push(DecayPoint { r, mean: res.mean, stderr: res.stderr, samples, seed });
        all.push(res.values);
    }
    let fit = decay_extrapolate(&points.iter().map(|p| (p.r, p.mean)).collect())?;
    let mut rng = sample_rng(seed, 0xB007, 0);
    let mut xis = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let means: BTreeMap<u32, f64> = rs
            .iter()
            .zip(&all)
            .map(|(&r, vals)| (r, (0..vals.len()).map(|_| vals[rng.random_range(0..vals.len())]).sum::<f64>() / vals.len() as f64))
            .collect();
        if let Ok(f) = decay_extrapolate(&means) {
            xis.push(f.xi);
        }
    }
    let (_, xi_se) = mean_stderr(&xis);
    let xi_stderr = xi_se * (xis.len() as f64).sqrt();
    let xi_closed_form = xi_closed_form(Dim::One, params).xi;
    Ok(DecayResult {
        params,
        measure,
        points,
        xi_hat: fit.xi,
        rel_err: (fit.xi - xi_closed_form).abs() / xi_closed_form,
        fit,
        xi_stderr,
        xi_closed_form,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub r: u32,
    pub threshold: f64,
    pub exceed_fraction: f64,
    pub envelope: f64,
    pub allowed: f64,
    pub ok: bool,
}

/// Exceedance of `K e^{−(1−ε) r/ℓ}` against the envelope `e^{−ε r/ℓ}`, with
/// `ℓ = ξ` for the Hilbert–Schmidt measure and `ℓ = 2ξ` for trace distance.
/// `k_const` must satisfy `E X ≤ K e^{−r/ℓ}`.
pub fn tail_check(
    base: &RegionSpec,
    rs: &[u32],
    params: Params,
    measure: MeasureId,
    eps: f64,
    k_const: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<TailRow>> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument("ε must lie in (0, 1)".into()));
    }
    let xi = xi_closed_form(Dim::One, params).xi;
    let scale = match measure {
        MeasureId::HsNorm => xi,
        MeasureId::TraceDist => 2.0 * xi,
        _ => return Err(Error::InvalidArgument("tail checks use hs_norm or trace_dist".into())),
    };
    rs.iter()
        .map(|&r| {
            let region = RegionSpec { r: r as usize, ..*base };
            let cfg = McConfig { geometry: Geometry::Mps { region }, params, measure, samples, seed, tag: 0x7A11_0000 + r as u64 };
            let res = mc_average(&cfg)?;
            let threshold = k_const * (-(1.0 - eps) * r as f64 / scale).exp();
            let exceed = res.values.iter().filter(|&&v| v >= threshold).count() as f64 / samples as f64;
            let envelope = (-eps * r as f64 / scale).exp().min(1.0);
            let allowed = envelope + 3.0 * (envelope * (1.0 - envelope) / samples as f64).sqrt();
            Ok(TailRow { r, threshold, exceed_fraction: exceed, envelope, allowed, ok: exceed <= allowed })
        })
        .collect()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BoundReport {
    pub samples: usize,
    pub norm_bound_violations: usize,
    pub schatten_violations: usize,
}

/// `½√N ≤ T ≤ (D²/√2)√N` and `‖X‖₂ ≤ ‖X‖₁ ≤ √rank ‖X‖₂` on fresh samples.
pub fn bound_suite(region: &RegionSpec, params: Params, samples: usize, seed: u64) -> Result<BoundReport> {
    let geometry = Geometry::Mps { region: *region };
    let dsq = (params.bond * params.bond) as f64;
    let flags = crate::par::map_range(samples, |i| {
        let mut rng = sample_rng(seed, 0xB0DD, i as u64);
        let c = sample_bipartite(&geometry, params, &mut rng)?.correlations();
        let slack = 1e-12;
        let sq = c.hs_norm.sqrt();
        let norm_ok = 0.5 * sq <= c.trace_dist + slack && c.trace_dist <= dsq / std::f64::consts::SQRT_2 * sq + slack;
        let schatten_ok = c.schatten2 <= c.schatten1 + slack && c.schatten1 <= (c.rank as f64).sqrt() * c.schatten2 + slack;
        Ok((norm_ok, schatten_ok))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport {
        samples,
        norm_bound_violations: flags.iter().filter(|f| !f.0).count(),
        schatten_violations: flags.iter().filter(|f| !f.1).count(),
    })
}

/// MC estimate of `E[U^{⊗k} X U^{†⊗k}]` over Haar `U(q)`: entrywise mean and
/// standard error of the real and imaginary parts.
pub fn mc_twirl(x: &DMatrix<Complex64>, k: usize, q: usize, samples: usize, seed: u64) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let dim = q.checked_pow(k as u32).filter(|&n| n <= 256 && n == x.nrows() && x.is_square());
    let Some(dim) = dim else {
        return Err(Error::InvalidArgument(format!("operator must be q^k × q^k with q^k ≤ 256 (q={q}, k={k})")));
    };
    let outs = crate::par::map_range(samples, |i| {
        let mut rng = sample_rng(seed, 0x7C1, i as u64);
        let u = haar_unitary(q, &mut rng);
        let mut uk = DMatrix::from_element(1, 1, C1);
        for _ in 0..k {
            uk = uk.kronecker(&u);
        }
        &uk * x * uk.adjoint()
    });
    let n = samples as f64;
    let mean = outs.iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + m) / Complex64::new(n, 0.0);
    let stderr = DMatrix::from_fn(dim, dim, |i, j| {
        let m = mean[(i, j)];
        let (vr, vi) = outs.iter().fold((0.0, 0.0), |(a, b), o| (a + (o[(i, j)].re - m.re).powi(2), b + (o[(i, j)].im - m.im).powi(2)));
        Complex64::new((vr / (n - 1.0) / n).sqrt(), (vi / (n - 1.0) / n).sqrt())
    });
    Ok((mean, stderr))
}

/// `ensemble run` configuration: `key = value` lines, `#` comments.
///
/// ```text
/// geometry = mps          # or isotns
/// d = 2
/// D = 2
/// c = 0
/// a = 1
/// b = 1
/// f = 1                   # mps only
/// r = 5, 7, 9, 11         # gap grid
/// rows = 2                # isotns only
/// cols = 3
/// h = 1                   # isotns region height
/// measure = vn_mi         # vn_mi, renyi_mi:α, hs_norm, trace_dist, purity_a, purity_b, purity_ab
/// samples = 2000
/// seed = 7
/// ```
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub geometry: String,
    pub params: Params,
    pub c: usize,
    pub a: usize,
    pub b: usize,
    pub f: usize,
    pub rs: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub h: usize,
    pub measure: MeasureId,
    pub samples: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key = value", no + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let known = ["geometry", "d", "D", "c", "a", "b", "f", "r", "rows", "cols", "h", "measure", "samples", "seed"];
        if let Some(k) = map.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::InvalidArgument(format!("unknown config key {k:?}")));
        }
        let num = |key: &str, default: usize| -> Result<usize> {
            map.get(key).map_or(Ok(default), |v| v.parse().map_err(|_| Error::InvalidArgument(format!("{key} must be a non-negative integer"))))
        };
        let geometry = map.get("geometry").cloned().unwrap_or_else(|| "mps".into());
        if geometry != "mps" && geometry != "isotns" {
            return Err(Error::InvalidArgument(format!("geometry must be mps or isotns, got {geometry:?}")));
        }
        let rs = map
            .get("r")
            .map_or(Ok(vec![5]), |v| v.split(',').map(|x| x.trim().parse::<u32>().map_err(|_| Error::InvalidArgument(format!("bad r list {v:?}")))).collect::<Result<Vec<_>>>())?;
        Ok(Self {
            params: Params::new(num("d", 2)? as u64, num("D", 2)? as u64)?,
            c: num("c", 0)?,
            a: num("a", 1)?,
            b: num("b", 1)?,
            f: num("f", 1)?,
            rs,
            rows: num("rows", 2)?,
            cols: num("cols", 3)?,
            h: num("h", 1)?,
            measure: map.get("measure").map_or(Ok(MeasureId::VnMi), |m| m.parse())?,
            samples: num("samples", 1000)?,
            seed: num("seed", 0)? as u64,
            geometry,
        })
    }

    pub fn geometry_for(&self, r: u32) -> Result<Geometry> {
        if self.geometry == "mps" {
            Ok(Geometry::Mps { region: RegionSpec::new(self.c, self.a, r as usize, self.b, self.f)? })
        } else {
            Geometry::iso_columns(self.rows, self.cols, self.c, self.a, r as usize, self.b, self.h)
        }
    }
}
