//! Field, atom, and composite states over a truncated Fock basis.
//!
//! Composite basis ordering: the atom index runs fastest and the excited
//! state comes first, so basis vector `2n` is `|n, a>` and `2n + 1` is
//! `|n, b>`.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const KET_NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

/// Two-level atom index in the composite basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomLevel {
    Excited = 0,
    Ground = 1,
}

#[inline]
pub fn composite_index(n: usize, level: AtomLevel) -> usize {
    2 * n + level as usize
}

/// Normalized pure field state `sum_n c_n |n>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldKet {
    coeffs: Vec<C64>,
}

impl FieldKet {
    pub fn new(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::validation("field ket needs at least one amplitude"));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::validation("field ket has non-finite amplitude"));
        }
        let norm_sqr: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if (norm_sqr - 1.0).abs() > KET_NORM_TOL {
            return Err(Error::validation(format!(
                "field ket is not normalized: sum |c_n|^2 = {norm_sqr}"
            )));
        }
        Ok(Self { coeffs })
    }

    /// Rescales `coeffs` to unit norm. Fails only for the zero vector.
    pub fn normalized(coeffs: Vec<C64>) -> Result<Self> {
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::validation("cannot normalize a zero field ket"));
        }
        Self::new(coeffs.into_iter().map(|c| c / norm).collect())
    }

    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::validation(format!("Fock level {n} exceeds n_max {n_max}")));
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); n_max + 1];
        coeffs[n] = C64::new(1.0, 0.0);
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn n_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Highest Fock level carrying a nonzero amplitude.
    pub fn max_photon_number(&self) -> usize {
        self.coeffs
            .iter()
            .rposition(|c| c.norm_sqr() > 0.0)
            .unwrap_or(0)
    }

    /// Re-expresses the ket in a larger (or equal) truncation.
    pub fn embed(&self, n_max: usize) -> Result<Self> {
        if n_max < self.max_photon_number() {
            return Err(Error::validation(format!(
                "cannot embed ket with support up to {} into n_max {n_max}",
                self.max_photon_number()
            )));
        }
        let mut coeffs = vec![C64::new(0.0, 0.0); n_max + 1];
        for (dst, src) in coeffs.iter_mut().zip(&self.coeffs) {
            *dst = *src;
        }
        Ok(Self { coeffs })
    }
}

/// Field density matrix `w_{n,m} = <n|w|m>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDensityMatrix {
    entries: DMatrix<C64>,
}

impl FieldDensityMatrix {
    /// Validates Hermiticity and unit trace.
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        check_square(&entries, "field density matrix")?;
        check_hermitian_unit_trace(&entries, "field density matrix")?;
        Ok(Self { entries })
    }

    pub(crate) fn from_entries_unchecked(entries: DMatrix<C64>) -> Self {
        Self { entries }
    }

    /// Symmetrizes `(w + w†)/2` and rescales to unit trace before validating.
    pub fn sanitized(entries: DMatrix<C64>) -> Result<Self> {
        check_square(&entries, "field density matrix")?;
        Self::new(sanitize(entries)?)
    }

    pub fn diagonal(populations: &[f64]) -> Result<Self> {
        let d = populations.len();
        let mut m = DMatrix::zeros(d, d);
        for (i, p) in populations.iter().enumerate() {
            m[(i, i)] = C64::new(*p, 0.0);
        }
        Self::new(m)
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_max(&self) -> usize {
        self.dim() - 1
    }

    pub fn get(&self, n: usize, m: usize) -> C64 {
        self.entries[(n, m)]
    }

    pub fn population(&self, n: usize) -> f64 {
        self.entries[(n, n)].re
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn mean_photon_number(&self) -> f64 {
        (0..self.dim()).map(|n| n as f64 * self.population(n)).sum()
    }

    /// Highest level with population above `tol`.
    pub fn support_top(&self, tol: f64) -> usize {
        (0..self.dim())
            .rev()
            .find(|&n| self.population(n) > tol)
            .unwrap_or(0)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn validate_psd(&self) -> Result<()> {
        let min = self.eigenvalues()[0];
        if min < -PSD_TOL {
            return Err(Error::validation(format!(
                "density matrix is not positive semidefinite: smallest eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    /// Re-expresses the state in a larger truncation, zero-padding new levels.
    pub fn embed(&self, n_max: usize) -> Result<Self> {
        if n_max + 1 < self.dim() {
            return Err(Error::validation(format!(
                "cannot embed dimension {} into n_max {n_max}",
                self.dim()
            )));
        }
        let d = n_max + 1;
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.entries);
        Ok(Self { entries: m })
    }
}

/// Pure two-level atomic state `cos(theta)|a> + sin(theta) e^{i phi}|b>`.
///
/// The global phase is fixed so the excited amplitude is real and
/// nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomKet {
    theta: f64,
    phi: f64,
}

impl AtomKet {
    /// `theta` must lie in `[0, pi/2]`; `phi` is wrapped into `[0, 2 pi)`.
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::validation("atom angles must be finite"));
        }
        if !(0.0..=FRAC_PI_2).contains(&theta) {
            return Err(Error::validation(format!(
                "atom mixing angle {theta} outside [0, pi/2]"
            )));
        }
        Ok(Self {
            theta,
            phi: wrap_phase(phi),
        })
    }

    pub fn excited() -> Self {
        Self { theta: 0.0, phi: 0.0 }
    }

    pub fn ground() -> Self {
        Self {
            theta: FRAC_PI_2,
            phi: 0.0,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn alpha(&self) -> C64 {
        C64::new(self.theta.cos(), 0.0)
    }

    pub fn beta(&self) -> C64 {
        C64::from_polar(self.theta.sin(), self.phi)
    }

    /// `[alpha, beta]`, in composite-basis order.
    pub fn amplitudes(&self) -> [C64; 2] {
        [self.alpha(), self.beta()]
    }

    /// The state orthogonal to `self` in the same parameterization.
    pub fn orthogonal(&self) -> Self {
        Self {
            theta: FRAC_PI_2 - self.theta,
            phi: wrap_phase(self.phi + std::f64::consts::PI),
        }
    }
}

pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Field-atom density matrix over the `|n>|s>` basis, atom index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDensityMatrix {
    entries: DMatrix<C64>,
}

impl CompositeDensityMatrix {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        check_square(&entries, "composite density matrix")?;
        if !entries.nrows().is_multiple_of(2) || entries.nrows() < 2 {
            return Err(Error::validation(
                "composite density matrix dimension must be an even number >= 2",
            ));
        }
        check_hermitian_unit_trace(&entries, "composite density matrix")?;
        Ok(Self { entries })
    }

    pub(crate) fn from_entries_unchecked(entries: DMatrix<C64>) -> Self {
        Self { entries }
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn field_dim(&self) -> usize {
        self.dim() / 2
    }

    pub fn n_max(&self) -> usize {
        self.field_dim() - 1
    }

    pub fn get(&self, n: usize, s: AtomLevel, m: usize, t: AtomLevel) -> C64 {
        self.entries[(composite_index(n, s), composite_index(m, t))]
    }

    pub fn population(&self, n: usize, s: AtomLevel) -> f64 {
        let i = composite_index(n, s);
        self.entries[(i, i)].re
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn purity(&self) -> f64 {
        hs_inner(&self.entries, &self.entries)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// `|phi><phi|`.
pub fn pure_density(ket: &FieldKet) -> Result<FieldDensityMatrix> {
    // re-check: FieldKet can only be built normalized, but coefficients may
    // have been produced by an embedding of a normalized ket
    let norm_sqr: f64 = ket.coeffs().iter().map(|c| c.norm_sqr()).sum();
    if (norm_sqr - 1.0).abs() > KET_NORM_TOL {
        return Err(Error::validation(format!(
            "pure_density needs a normalized ket, got norm^2 = {norm_sqr}"
        )));
    }
    let c = ket.coeffs();
    let d = c.len();
    Ok(FieldDensityMatrix::from_entries_unchecked(DMatrix::from_fn(
        d,
        d,
        |n, m| c[n] * c[m].conj(),
    )))
}

/// `w_F ⊗ |psi><psi|`.
pub fn compose_with_atom(field: &FieldDensityMatrix, atom: &AtomKet) -> CompositeDensityMatrix {
    let d = field.dim();
    let amp = atom.amplitudes();
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    for n in 0..d {
        for m in 0..d {
            let w = field.get(n, m);
            if w == C64::new(0.0, 0.0) {
                continue;
            }
            for s in 0..2 {
                for t in 0..2 {
                    out[(2 * n + s, 2 * m + t)] = w * amp[s] * amp[t].conj();
                }
            }
        }
    }
    CompositeDensityMatrix::from_entries_unchecked(out)
}

/// `Tr_A w`.
pub fn partial_trace_atom(w: &CompositeDensityMatrix) -> FieldDensityMatrix {
    let d = w.field_dim();
    let e = w.entries();
    FieldDensityMatrix::from_entries_unchecked(DMatrix::from_fn(d, d, |n, m| {
        e[(2 * n, 2 * m)] + e[(2 * n + 1, 2 * m + 1)]
    }))
}

/// `Tr(w^2)`.
pub fn purity(w: &FieldDensityMatrix) -> f64 {
    hs_inner(w.entries(), w.entries())
}

/// Real part of the Hilbert-Schmidt product `Tr(a b)` for Hermitian `a`, `b`.
pub(crate) fn hs_inner(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let d = a.nrows();
    let mut acc = 0.0;
    for n in 0..d {
        for m in 0..d {
            acc += (a[(n, m)] * b[(m, n)]).re;
        }
    }
    acc
}

pub(crate) fn sanitize(mut m: DMatrix<C64>) -> Result<DMatrix<C64>> {
    let adj = m.adjoint();
    m += adj;
    m.scale_mut(0.5);
    let tr = m.trace().re;
    if !(tr > 0.0) || !tr.is_finite() {
        return Err(Error::Internal(format!("cannot renormalize trace {tr}")));
    }
    m.scale_mut(1.0 / tr);
    Ok(m)
}

fn check_square(m: &DMatrix<C64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::validation(format!(
            "{what} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_hermitian_unit_trace(m: &DMatrix<C64>, what: &str) -> Result<()> {
    let d = m.nrows();
    for n in 0..d {
        for k in n..d {
            let dev = (m[(n, k)] - m[(k, n)].conj()).norm();
            if !dev.is_finite() || dev > HERMITIAN_TOL {
                return Err(Error::validation(format!(
                    "{what} is not Hermitian at ({n},{k}): deviation {dev:e}"
                )));
            }
        }
    }
    let tr = m.trace();
    if (tr - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
        return Err(Error::validation(format!(
            "{what} does not have unit trace: {tr}"
        )));
    }
    Ok(())
}
