//! Conditional measurement of the atom after its transit.
//!
//! The reference path forms the composite state, evolves it with the dense
//! JC propagator, and sandwiches each 2x2 atomic block with the final atomic
//! amplitudes. [`CmOperator`] gives the same map as a tridiagonal field
//! operator `K = <psi_f| U |psi_i>`, so that `P w_out = K w K†`; the
//! optimizer evaluates candidates through it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock_core::{
    compose_with_atom, sanitize, AtomKet, CompositeDensityMatrix, FieldDensityMatrix, C64,
};
use crate::jaynes_cummings::{evolve_composite, JcInteraction, GUARD_BAND_TOL};
use crate::recovery_optimizer::CmParams;

/// Success probabilities below this are treated as unrealizable branches.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CmOutcome {
    pub field_state: FieldDensityMatrix,
    pub probability: f64,
}

/// Unnormalized post-selected field `<psi_f| w |psi_f>` (atom traced out).
pub fn project_unnormalized(w: &CompositeDensityMatrix, final_atom: &AtomKet) -> DMatrix<C64> {
    let d = w.field_dim();
    let f = final_atom.amplitudes();
    let e = w.entries();
    DMatrix::from_fn(d, d, |n, m| {
        let mut acc = C64::new(0.0, 0.0);
        for s in 0..2 {
            for t in 0..2 {
                acc += f[s].conj() * e[(2 * n + s, 2 * m + t)] * f[t];
            }
        }
        acc
    })
}

pub fn conditional_measure(w: &CompositeDensityMatrix, final_atom: &AtomKet) -> Result<CmOutcome> {
    let projected = project_unnormalized(w, final_atom);
    let probability = projected.trace().re;
    if !(probability >= PROBABILITY_FLOOR) {
        return Err(Error::ZeroProbability(probability));
    }
    let field_state = FieldDensityMatrix::new(sanitize(projected)?)?;
    Ok(CmOutcome {
        field_state,
        probability: probability.min(1.0),
    })
}

/// Prepare the atom, let it cross the cavity, and post-select it.
pub fn cm_step(field: &FieldDensityMatrix, params: &CmParams) -> Result<CmOutcome> {
    let composite = compose_with_atom(field, &params.initial_atom()?);
    let evolved = evolve_composite(&composite, params.interaction()?)?;
    conditional_measure(&evolved, &params.final_atom()?)
}

/// Field-space Kraus operator `<psi_f| U(g tau) |psi_i>` of one CM,
/// stored by its three diagonals.
#[derive(Debug, Clone)]
pub struct CmOperator {
    /// `K[n][n]`
    diag: Vec<C64>,
    /// `K[n-1][n]`, index `n >= 1`
    upper: Vec<C64>,
    /// `K[n+1][n]`, index `n < n_max`
    lower: Vec<C64>,
}

impl CmOperator {
    pub fn new(
        initial: &AtomKet,
        interaction: JcInteraction,
        final_atom: &AtomKet,
        n_max: usize,
    ) -> Self {
        let d = n_max + 1;
        let [ai, bi] = initial.amplitudes();
        let [af, bf] = final_atom.amplitudes();
        let (af, bf) = (af.conj(), bf.conj());
        let minus_i = C64::new(0.0, -1.0);

        let mut diag = Vec::with_capacity(d);
        let mut upper = vec![C64::new(0.0, 0.0); d];
        let mut lower = vec![C64::new(0.0, 0.0); d];
        for n in 0..d {
            // the top |n_max, a> state is left untouched by the truncated U
            let (c_n, s_n) = if n < n_max {
                interaction.rabi(Some(n))
            } else {
                (1.0, 0.0)
            };
            let (c_prev, s_prev) = interaction.rabi(n.checked_sub(1));
            diag.push(af * ai * c_n + bf * bi * c_prev);
            if n >= 1 {
                upper[n] = af * bi * minus_i * s_prev;
            }
            if n < n_max {
                lower[n] = bf * ai * minus_i * s_n;
            }
        }
        Self { diag, upper, lower }
    }

    pub fn from_params(params: &CmParams, n_max: usize) -> Result<Self> {
        Ok(Self::new(
            &params.initial_atom()?,
            params.interaction()?,
            &params.final_atom()?,
            n_max,
        ))
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let d = self.dim();
        let mut k = DMatrix::zeros(d, d);
        for n in 0..d {
            k[(n, n)] = self.diag[n];
            if n >= 1 {
                k[(n - 1, n)] = self.upper[n];
            }
            if n + 1 < d {
                k[(n + 1, n)] = self.lower[n];
            }
        }
        k
    }

    /// `K w K†` (unnormalized post-measurement field).
    pub fn apply(&self, w: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.dim();
        debug_assert_eq!(w.nrows(), d);
        // row k of K: K[k][k-1] = lower[k-1], K[k][k] = diag[k], K[k][k+1] = upper[k+1]
        let row = |k: usize| -> [(usize, C64); 3] {
            [
                (k.wrapping_sub(1), if k >= 1 { self.lower[k - 1] } else { C64::new(0.0, 0.0) }),
                (k, self.diag[k]),
                (k + 1, if k + 1 < d { self.upper[k + 1] } else { C64::new(0.0, 0.0) }),
            ]
        };
        let mut kw = DMatrix::<C64>::zeros(d, d);
        for k in 0..d {
            for (n, coef) in row(k) {
                if n < d && coef != C64::new(0.0, 0.0) {
                    for m in 0..d {
                        kw[(k, m)] += coef * w[(n, m)];
                    }
                }
            }
        }
        let mut out = DMatrix::<C64>::zeros(d, d);
        for l in 0..d {
            for (m, coef) in row(l) {
                if m < d && coef != C64::new(0.0, 0.0) {
                    let cc = coef.conj();
                    for k in 0..d {
                        out[(k, l)] += kw[(k, m)] * cc;
                    }
                }
            }
        }
        out
    }
}

/// Guard check shared by the fast path: the input field must leave the top
/// Fock level empty so `|n_max, a>` is never populated.
pub(crate) fn check_field_guard(field: &FieldDensityMatrix) -> Result<()> {
    let top = field.n_max();
    let pop = field.population(top);
    if pop > GUARD_BAND_TOL {
        return Err(Error::TruncationLeak {
            level: top,
            population: pop,
            context: "top Fock level populated before a conditional measurement",
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissipation::{apply_damping, DampingSpec};
    use crate::fock_core::test_support::{random_composite, random_density};
    use crate::fock_core::{partial_trace_atom, pure_density, FieldKet};
    use crate::metrics::distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, PI, SQRT_2, TAU};

    fn published_params() -> CmParams {
        CmParams {
            theta_i: 3.0 * PI / 8.0,
            phi_i: 5.0 * PI / 4.0,
            theta_f: 3.0 * PI / 8.0,
            phi_f: PI / 4.0,
            g_tau: 37.95,
        }
    }

    fn example_target(n_max: usize) -> FieldDensityMatrix {
        let ket = FieldKet::new(vec![
            C64::new(FRAC_1_SQRT_2, 0.0),
            C64::from_polar(FRAC_1_SQRT_2, FRAC_PI_3),
        ])
        .unwrap();
        pure_density(&ket.embed(n_max).unwrap()).unwrap()
    }

    #[test]
    fn projecting_on_prepared_state_is_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = random_density(&mut rng, 3, 3);
        let psi = AtomKet::new(0.7, 2.0).unwrap();
        let w = compose_with_atom(&f, &psi);
        let out = conditional_measure(&w, &psi).unwrap();
        assert!((out.probability - 1.0).abs() < 1e-12);
        assert!(distance(&out.field_state, &f).unwrap() < 1e-12);
    }

    #[test]
    fn orthogonal_projection_is_rejected() {
        let f = example_target(2);
        let psi = AtomKet::new(0.7, 2.0).unwrap();
        let w = compose_with_atom(&f, &psi);
        let err = conditional_measure(&w, &psi.orthogonal()).unwrap_err();
        assert!(matches!(err, Error::ZeroProbability(_)));
    }

    #[test]
    fn identity_step_leaves_field_unchanged() {
        let f = example_target(3);
        let params = CmParams {
            theta_i: 0.4,
            phi_i: 1.3,
            theta_f: 0.4,
            phi_f: 1.3,
            g_tau: 0.0,
        };
        let out = cm_step(&f, &params).unwrap();
        assert!((out.probability - 1.0).abs() < 1e-12);
        assert!(distance(&out.field_state, &f).unwrap() < 1e-12);
    }

    #[test]
    fn one_photon_pumped_to_two() {
        let f = pure_density(&FieldKet::fock(1, 4).unwrap()).unwrap();
        let params = CmParams {
            theta_i: 0.0,
            phi_i: 0.0,
            theta_f: FRAC_PI_2,
            phi_f: 0.0,
            g_tau: PI / (2.0 * SQRT_2),
        };
        let out = cm_step(&f, &params).unwrap();
        assert!((out.probability - 1.0).abs() < 1e-12);
        assert!((out.field_state.population(2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn published_single_cm() {
        let target = example_target(4);
        let damped = apply_damping(&target, DampingSpec::new(0.3).unwrap());
        let out = cm_step(&damped, &published_params()).unwrap();
        assert!((out.probability - 0.74).abs() <= 0.02, "P = {}", out.probability);
        let before = distance(&damped, &target).unwrap();
        let after = distance(&out.field_state, &target).unwrap();
        assert!(after < before);
    }

    #[test]
    fn fast_operator_matches_composite_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n_max = rng.gen_range(1..9);
            let f = random_density(&mut rng, n_max - 1, n_max);
            let params = CmParams {
                theta_i: rng.gen_range(0.0..FRAC_PI_2),
                phi_i: rng.gen_range(0.0..TAU),
                theta_f: rng.gen_range(0.0..FRAC_PI_2),
                phi_f: rng.gen_range(0.0..TAU),
                g_tau: rng.gen_range(0.0..50.0),
            };
            let reference = cm_step(&f, &params).unwrap();
            let k = CmOperator::from_params(&params, n_max).unwrap();
            let raw = k.apply(f.entries());
            let p = raw.trace().re;
            assert!((p - reference.probability).abs() < 1e-13);
            let fast = raw / C64::new(p, 0.0);
            assert!((fast - reference.field_state.entries()).norm() < 1e-12);

            let dense = k.to_dense();
            let via_dense = &dense * f.entries() * dense.adjoint();
            assert!((via_dense - k.apply(f.entries())).norm() < 1e-13);
        }
    }

    #[test]
    fn guard_rejects_populated_top_level() {
        let f = pure_density(&FieldKet::fock(2, 2).unwrap()).unwrap();
        assert!(matches!(
            check_field_guard(&f),
            Err(Error::TruncationLeak { level: 2, .. })
        ));
        assert!(check_field_guard(&example_target(2)).is_ok());
    }

    #[test]
    fn completeness_over_atomic_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w = random_composite(&mut rng, 4);
            let psi = AtomKet::new(rng.gen_range(0.0..FRAC_PI_2), rng.gen_range(0.0..TAU)).unwrap();
            let a = conditional_measure(&w, &psi).unwrap();
            let b = conditional_measure(&w, &psi.orthogonal()).unwrap();
            assert!((a.probability + b.probability - 1.0).abs() < 1e-10);
            let sum = a.field_state.entries() * C64::new(a.probability, 0.0)
                + b.field_state.entries() * C64::new(b.probability, 0.0);
            assert!((sum - partial_trace_atom(&w).entries()).norm() < 1e-10);
        }
    }

    #[test]
    fn probability_equals_trace_of_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let w = random_composite(&mut rng, 5);
        let psi = AtomKet::new(FRAC_PI_4, 1.0).unwrap();
        let raw = project_unnormalized(&w, &psi);
        let out = conditional_measure(&w, &psi).unwrap();
        assert!((raw.trace().re - out.probability).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn cm_widens_support_by_at_most_one(
            seed in 0u64..10_000,
            support in 0usize..5,
            ti in 0.0..FRAC_PI_2, pi in 0.0..TAU,
            tf in 0.0..FRAC_PI_2, pf in 0.0..TAU,
            g in 0.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_density(&mut rng, support, 7);
            let params = CmParams { theta_i: ti, phi_i: pi, theta_f: tf, phi_f: pf, g_tau: g };
            match cm_step(&f, &params) {
                Ok(out) => {
                    for n in support + 2..=7 {
                        proptest::prop_assert!(out.field_state.population(n).abs() < 1e-14);
                    }
                    proptest::prop_assert!(out.probability <= 1.0 + 1e-12);
                    proptest::prop_assert!(out.field_state.validate_psd().is_ok());
                }
                Err(Error::ZeroProbability(_)) => {}
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
