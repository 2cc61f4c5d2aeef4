//! Resonant Jaynes-Cummings evolution of the field-atom system during one
//! atomic transit.
//!
//! In the interaction picture
//!
//! ```text
//! U|n,a> = C_n |n,a>     - i S_n     |n+1,b>
//! U|n,b> = C_{n-1} |n,b> - i S_{n-1} |n-1,a>
//! ```
//!
//! with `C_n = cos(g tau sqrt(n+1))`, `S_n = sin(g tau sqrt(n+1))`, and
//! `C_{-1} = 1`, `S_{-1} = 0`. The partner of `|n_max, a>` lies outside the
//! truncation, so `U` acts as the identity there and [`evolve_composite`]
//! refuses states that populate it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock_core::{composite_index, AtomLevel, CompositeDensityMatrix, C64};

/// Largest population tolerated in `|n_max, a>` before evolution.
pub const GUARD_BAND_TOL: f64 = 1e-10;

/// Interaction strength `g tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JcInteraction {
    g_tau: f64,
}

impl JcInteraction {
    pub fn new(g_tau: f64) -> Result<Self> {
        if !g_tau.is_finite() || g_tau < 0.0 {
            return Err(Error::validation(format!(
                "interaction strength g_tau must be finite and >= 0, got {g_tau}"
            )));
        }
        Ok(Self { g_tau })
    }

    pub fn g_tau(&self) -> f64 {
        self.g_tau
    }

    /// `(C_n, S_n)`; `n = -1` is passed as `None`.
    pub fn rabi(&self, n: Option<usize>) -> (f64, f64) {
        match n {
            None => (1.0, 0.0),
            Some(n) => {
                let x = self.g_tau * ((n + 1) as f64).sqrt();
                (x.cos(), x.sin())
            }
        }
    }
}

/// Dense JC propagator on the composite space of field dimension
/// `n_max + 1`.
pub fn jc_unitary(interaction: JcInteraction, n_max: usize) -> Result<DMatrix<C64>> {
    if n_max < 1 {
        return Err(Error::validation("jc_unitary needs n_max >= 1"));
    }
    let dim = 2 * (n_max + 1);
    let mut u = DMatrix::zeros(dim, dim);
    let minus_i = C64::new(0.0, -1.0);

    // |0,b> is decoupled
    let g0 = composite_index(0, AtomLevel::Ground);
    u[(g0, g0)] = C64::new(1.0, 0.0);

    // 2x2 blocks {|n,a>, |n+1,b>}
    for n in 0..n_max {
        let (c, s) = interaction.rabi(Some(n));
        let a = composite_index(n, AtomLevel::Excited);
        let b = composite_index(n + 1, AtomLevel::Ground);
        u[(a, a)] = C64::new(c, 0.0);
        u[(b, a)] = minus_i * s;
        u[(b, b)] = C64::new(c, 0.0);
        u[(a, b)] = minus_i * s;
    }

    let top = composite_index(n_max, AtomLevel::Excited);
    u[(top, top)] = C64::new(1.0, 0.0);
    Ok(u)
}

/// `U w U†`.
pub fn evolve_composite(
    w: &CompositeDensityMatrix,
    interaction: JcInteraction,
) -> Result<CompositeDensityMatrix> {
    let n_max = w.n_max();
    let top = w.population(n_max, AtomLevel::Excited);
    if top > GUARD_BAND_TOL {
        return Err(Error::TruncationLeak {
            level: n_max,
            population: top,
            context: "|n_max, a> populated before JC evolution",
        });
    }
    if n_max == 0 {
        // only |0,a> (empty, by the guard) and the invariant |0,b>
        return Ok(w.clone());
    }
    let u = jc_unitary(interaction, n_max)?;
    let out = &u * w.entries() * u.adjoint();
    Ok(CompositeDensityMatrix::from_entries_unchecked(out))
}
