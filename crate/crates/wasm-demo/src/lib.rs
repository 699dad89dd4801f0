//! Browser bindings: closed-form correlation lengths, the spectrum of C_k,
//! and a small Monte Carlo decay curve. Every export returns JSON text.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use seqtn::ensemble::{decay_experiment, MeasureId};
use seqtn::spectra::{eigen_full, lambda2_1d, xi_closed_form, Dim, Vectors};
use seqtn::transfer1d::{identity_transfer, RegionSpec};
use seqtn::Params;

/// Caps for interactive use.
pub const MAX_BOND: u64 = 64;
pub const MAX_SAMPLES: usize = 1000;

#[derive(Serialize)]
pub struct XiPoint {
    #[serde(rename = "D")]
    pub bond: u64,
    pub xi_1d: f64,
    pub xi_2d: f64,
}

pub fn xi_points(d: u64, bond_max: u64) -> seqtn::Result<Vec<XiPoint>> {
    if bond_max > MAX_BOND {
        return Err(seqtn::Error::SizeLimit(format!("D ≤ {MAX_BOND} in the demo")));
    }
    (2..=bond_max.max(2))
        .map(|b| {
            let p = Params::new(d, b)?;
            Ok(XiPoint { bond: b, xi_1d: xi_closed_form(Dim::One, p).xi, xi_2d: xi_closed_form(Dim::Two, p).xi })
        })
        .collect()
}

#[derive(Serialize)]
pub struct Eigen {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

#[derive(Serialize)]
pub struct Spectrum {
    pub k: usize,
    pub dim: usize,
    pub groups: Vec<Eigen>,
    pub mu2: f64,
}

/// Spectrum of `C_k` for k ≤ 4.
pub fn spectrum(k: usize, d: u64, bond: u64) -> seqtn::Result<Spectrum> {
    if !(2..=4).contains(&k) {
        return Err(seqtn::Error::SizeLimit("the demo computes C_k for k ≤ 4".into()));
    }
    let params = Params::new(d, bond)?;
    let t = identity_transfer(k, params)?;
    let rep = eigen_full(&t.to_f64(), Vectors::None)?;
    Ok(Spectrum {
        k,
        dim: rep.dim,
        groups: rep.groups.iter().map(|g| Eigen { re: g.value.re, im: g.value.im, multiplicity: g.multiplicity }).collect(),
        mu2: seqtn::rational::to_f64(&lambda2_1d(params)),
    })
}

#[derive(Serialize)]
pub struct DecayCurve {
    pub r: Vec<u32>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub xi_hat: f64,
    pub xi_closed_form: f64,
}

/// Sampled von Neumann MI between two single sites at gaps 1, 3, ..., 9.
pub fn decay(d: u64, bond: u64, samples: usize, seed: u64) -> seqtn::Result<DecayCurve> {
    if samples > MAX_SAMPLES || bond > 4 || d > 4 {
        return Err(seqtn::Error::SizeLimit(format!("demo limits: d, D ≤ 4 and at most {MAX_SAMPLES} samples")));
    }
    let base = RegionSpec::new(0, 1, 1, 1, 1)?;
    let res = decay_experiment(&base, &[1, 3, 5, 7, 9], Params::new(d, bond)?, MeasureId::VnMi, samples, seed)?;
    Ok(DecayCurve {
        r: res.points.iter().map(|p| p.r).collect(),
        mean: res.points.iter().map(|p| p.mean).collect(),
        stderr: res.points.iter().map(|p| p.stderr).collect(),
        xi_hat: res.xi_hat,
        xi_closed_form: res.xi_closed_form,
    })
}

fn to_js<T: Serialize>(r: seqtn::Result<T>) -> Result<String, JsValue> {
    match r {
        Ok(v) => serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())),
        Err(e) => Err(JsValue::from_str(&e.to_string())),
    }
}

#[wasm_bindgen]
pub fn xi_curves(d: u32, bond_max: u32) -> Result<String, JsValue> {
    to_js(xi_points(d as u64, bond_max as u64))
}

#[wasm_bindgen]
pub fn transfer_spectrum(k: u32, d: u32, bond: u32) -> Result<String, JsValue> {
    to_js(spectrum(k as usize, d as u64, bond as u64))
}

#[wasm_bindgen]
pub fn decay_curve(d: u32, bond: u32, samples: u32, seed: u32) -> Result<String, JsValue> {
    to_js(decay(d as u64, bond as u64, samples as usize, seed as u64))
}
