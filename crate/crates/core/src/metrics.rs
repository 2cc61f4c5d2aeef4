//! Distances, the recovery cost, the filtering probability, error matrices,
//! and the Husimi Q-function.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock_core::{hs_inner, FieldDensityMatrix, C64};
use crate::measurement::PROBABILITY_FLOOR;

/// Imaginary residue in a Q value that signals a non-Hermitian input.
pub const Q_IMAG_TOL: f64 = 1e-10;

/// Exponent `r` of the cost `d / P^r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    r: f64,
}

impl CostSpec {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::validation(format!("cost exponent r must be >= 0, got {r}")));
        }
        Ok(Self { r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

fn check_dims(a: &FieldDensityMatrix, b: &FieldDensityMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Frobenius norm of `w1 - w2`.
pub fn distance(w1: &FieldDensityMatrix, w2: &FieldDensityMatrix) -> Result<f64> {
    check_dims(w1, w2)?;
    Ok(frobenius_distance(w1.entries(), w2.entries()))
}

pub(crate) fn frobenius_distance(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `d / p^r`. With `r = 0` the probability is ignored. A probability below
/// the floor (with `r > 0`) yields `+inf`, which every comparison ranks last.
pub fn cost(d: f64, p: f64, spec: CostSpec) -> f64 {
    if spec.r == 0.0 {
        return d;
    }
    if !(p >= PROBABILITY_FLOOR) {
        return f64::INFINITY;
    }
    d / p.powf(spec.r)
}

/// `Tr(w0 wt)`, the probability that `wt` passes a projective test on the
/// pure state `w0`.
pub fn filtering_probability(w0: &FieldDensityMatrix, wt: &FieldDensityMatrix) -> Result<f64> {
    check_dims(w0, wt)?;
    Ok(hs_inner(w0.entries(), wt.entries()))
}

/// `w - target`.
pub fn error_matrix(w: &FieldDensityMatrix, target: &FieldDensityMatrix) -> Result<DMatrix<C64>> {
    check_dims(w, target)?;
    Ok(w.entries() - target.entries())
}

/// Rectangular sampling of the complex `beta` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QGridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub re_points: usize,
    pub im_points: usize,
}

impl Default for QGridSpec {
    fn default() -> Self {
        Self {
            re_min: -3.0,
            re_max: 3.0,
            im_min: -3.0,
            im_max: 3.0,
            re_points: 121,
            im_points: 121,
        }
    }
}

impl QGridSpec {
    pub fn square(half_width: f64, points: usize) -> Self {
        Self {
            re_min: -half_width,
            re_max: half_width,
            im_min: -half_width,
            im_max: half_width,
            re_points: points,
            im_points: points,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.re_points < 2 || self.im_points < 2 {
            return Err(Error::validation("Q grid needs at least 2 points per axis"));
        }
        let finite = [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.re_min >= self.re_max || self.im_min >= self.im_max {
            return Err(Error::validation("Q grid ranges must be finite with min < max"));
        }
        Ok(())
    }

    pub fn re_axis(&self) -> Vec<f64> {
        linspace(self.re_min, self.re_max, self.re_points)
    }

    pub fn im_axis(&self) -> Vec<f64> {
        linspace(self.im_min, self.im_max, self.im_points)
    }

    pub fn cell_area(&self) -> f64 {
        (self.re_max - self.re_min) / (self.re_points - 1) as f64
            * (self.im_max - self.im_min)
            / (self.im_points - 1) as f64
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + step * i as f64 })
        .collect()
}

/// Q values on a grid; `values[j][i]` is at `(re_axis[i], im_axis[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct QGrid {
    pub re_axis: Vec<f64>,
    pub im_axis: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QGrid {
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Location `(re, im)` and value of the grid maximum (first in row order).
    pub fn argmax(&self) -> (f64, f64, f64) {
        let mut best = (self.re_axis[0], self.im_axis[0], f64::NEG_INFINITY);
        for (j, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                if *v > best.2 {
                    best = (self.re_axis[i], self.im_axis[j], *v);
                }
            }
        }
        best
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().flatten().sum()
    }
}

/// Coherent-state amplitudes `<m|beta> = e^{-|beta|^2/2} beta^m / sqrt(m!)`.
pub fn coherent_amplitudes(beta: C64, dim: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(dim);
    let mut c = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    for m in 0..dim {
        if m > 0 {
            c = c * beta / (m as f64).sqrt();
        }
        out.push(c);
    }
    out
}

/// `Q(beta) = <beta| w |beta>`, without a `1/pi` prefactor. `w` may be a
/// density matrix or a (Hermitian) error matrix.
pub fn q_value(w: &DMatrix<C64>, beta: C64) -> Result<f64> {
    let amps = coherent_amplitudes(beta, w.nrows());
    let mut acc = C64::new(0.0, 0.0);
    for (n, an) in amps.iter().enumerate() {
        let mut row = C64::new(0.0, 0.0);
        for (m, am) in amps.iter().enumerate() {
            row += w[(n, m)] * am;
        }
        acc += an.conj() * row;
    }
    if acc.im.abs() > Q_IMAG_TOL {
        return Err(Error::Internal(format!(
            "Q-function has imaginary residue {:e} at beta = {beta}",
            acc.im
        )));
    }
    Ok(acc.re)
}

pub fn q_function(w: &DMatrix<C64>, spec: &QGridSpec) -> Result<QGrid> {
    spec.validate()?;
    if w.nrows() != w.ncols() {
        return Err(Error::validation("Q-function needs a square matrix"));
    }
    let re_axis = spec.re_axis();
    let im_axis = spec.im_axis();
    let values = im_axis
        .par_iter()
        .map(|&im| {
            re_axis
                .iter()
                .map(|&re| q_value(w, C64::new(re, im)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QGrid {
        re_axis,
        im_axis,
        values,
    })
}
