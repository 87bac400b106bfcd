//! Lossy gradient operators and their ω contract.

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{Lane, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Compressor {
    Identity,
    /// Keep `k` uniformly chosen coordinates, rescaled by `d/k`.
    RandK { k: usize },
    /// Keep the `k` largest magnitudes, unscaled; ties go to the lowest index.
    TopK { k: usize },
    /// Componentwise sign with `sign(0) = 0`.
    Sign,
    /// Top-k of `v/‖v‖₂`.
    NormalizedTopK { k: usize },
}

impl Compressor {
    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Compressor::RandK { k } | Compressor::TopK { k } | Compressor::NormalizedTopK { k } if k == 0 || k > d => {
                Err(Error::Config {
                    field: "compressor.k".into(),
                    msg: format!("k must lie in 1..={d}, got {k}"),
                })
            }
            _ => Ok(()),
        }
    }

    /// `ω` with `𝔼‖C(x) − x‖² ≤ ω‖x‖²`; `None` for biased operators.
    pub fn omega(&self, d: usize) -> Option<f64> {
        match *self {
            Compressor::Identity => Some(0.0),
            Compressor::RandK { k } => Some(d as f64 / k as f64 - 1.0),
            _ => None,
        }
    }

    pub fn is_unbiased(&self) -> bool {
        matches!(self, Compressor::Identity | Compressor::RandK { .. })
    }
}

/// Sorted uniform `k`-subset of `0..d`.
pub(crate) fn rand_k_subset<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> Vec<usize> {
    if k == d {
        return (0..d).collect();
    }
    let mut idx = index::sample(rng, d, k).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn top_k_into(v: &[f64], k: usize, out: &mut [f64]) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    out.iter_mut().for_each(|o| *o = 0.0);
    for &j in &order[..k] {
        out[j] = v[j];
    }
}

/// Apply `c` to `v`, drawing any randomness from `rng`.
pub(crate) fn compress_into<R: Rng + ?Sized>(c: &Compressor, v: &[f64], rng: &mut R, out: &mut [f64]) {
    let d = v.len();
    match *c {
        Compressor::Identity => out.copy_from_slice(v),
        Compressor::RandK { k } => {
            let scale = d as f64 / k as f64;
            out.iter_mut().for_each(|o| *o = 0.0);
            for j in rand_k_subset(d, k, rng) {
                out[j] = scale * v[j];
            }
        }
        Compressor::TopK { k } => top_k_into(v, k, out),
        Compressor::Sign => {
            for (o, &x) in out.iter_mut().zip(v) {
                *o = sign(x);
            }
        }
        Compressor::NormalizedTopK { k } => {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                out.copy_from_slice(v);
            } else {
                let unit: Vec<f64> = v.iter().map(|x| x / norm).collect();
                top_k_into(&unit, k, out);
            }
        }
    }
}

/// Compress `v` with the compressor lane of `stream` at iteration `step`.
pub fn compress(c: &Compressor, v: &[f64], stream: &RngStream, step: u64) -> Result<Vec<f64>> {
    c.validate(v.len())?;
    let mut out = vec![0.0; v.len()];
    compress_into(c, v, &mut stream.rng(Lane::Compressor, step), &mut out);
    Ok(out)
}
