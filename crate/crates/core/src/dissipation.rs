//! Zero-temperature cavity damping.
//!
//! [`apply_damping`] evaluates the closed-form solution of the amplitude
//! damping master equation in the Fock basis. [`rk4_evolve`] integrates the
//! master equation directly and serves as an independent check.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fock_core::{FieldDensityMatrix, C64};

/// Trace drift beyond which an RK4 run is rejected.
pub const RK4_MAX_TRACE_DRIFT: f64 = 1e-6;

/// Damping exposure `gamma * t`. The solution depends on `gamma` and `t`
/// only through this product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingSpec {
    gamma_t: f64,
}

impl DampingSpec {
    pub fn new(gamma_t: f64) -> Result<Self> {
        if !gamma_t.is_finite() || gamma_t < 0.0 {
            return Err(Error::validation(format!(
                "damping exposure gamma_t must be finite and >= 0, got {gamma_t}"
            )));
        }
        Ok(Self { gamma_t })
    }

    pub fn none() -> Self {
        Self { gamma_t: 0.0 }
    }

    pub fn gamma_t(&self) -> f64 {
        self.gamma_t
    }

    /// Survival factor `e^{-2 gamma t}` of a single photon.
    pub fn eta(&self) -> f64 {
        (-2.0 * self.gamma_t).exp()
    }
}

/// `C(n, k)` by the multiplicative formula.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Closed-form damped state:
/// `w_{n,m}(t) = sum_k w_{n+k,m+k}(0) sqrt(C(n+k,n) eta^n (1-eta)^k) sqrt(C(m+k,m) eta^m (1-eta)^k)`
/// with `eta = e^{-2 gamma t}` and `k` running to the top of the truncation.
pub fn apply_damping(w0: &FieldDensityMatrix, spec: DampingSpec) -> FieldDensityMatrix {
    let d = w0.dim();
    let eta = spec.eta();
    let loss = 1.0 - eta;

    // amp[n][k] = sqrt(C(n+k, n) eta^n (1-eta)^k)
    let amp: Vec<Vec<f64>> = (0..d)
        .map(|n| {
            (0..d - n)
                .map(|k| (binomial(n + k, n) * eta.powi(n as i32) * loss.powi(k as i32)).sqrt())
                .collect()
        })
        .collect();

    let out = DMatrix::from_fn(d, d, |n, m| {
        let k_max = d - n.max(m);
        (0..k_max).fold(C64::new(0.0, 0.0), |acc, k| {
            acc + w0.get(n + k, m + k) * (amp[n][k] * amp[m][k])
        })
    });
    FieldDensityMatrix::from_entries_unchecked(out)
}

/// Truncated annihilation operator, `a|n> = sqrt(n)|n-1>`.
pub fn annihilation(dim: usize) -> DMatrix<C64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        if j == i + 1 {
            C64::new((j as f64).sqrt(), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Right-hand side of the damping master equation per unit `gamma t`:
/// `2 a w a† - a†a w - w a†a`.
pub fn lindblad_rhs(w: &DMatrix<C64>) -> DMatrix<C64> {
    let d = w.nrows();
    // a w a† has (n, m) entry sqrt((n+1)(m+1)) w_{n+1, m+1}; a†a = diag(n)
    DMatrix::from_fn(d, d, |n, m| {
        let jump = if n + 1 < d && m + 1 < d {
            w[(n + 1, m + 1)] * (((n + 1) * (m + 1)) as f64).sqrt()
        } else {
            C64::new(0.0, 0.0)
        };
        jump * 2.0 - w[(n, m)] * (n + m) as f64
    })
}

/// Classical fourth-order Runge-Kutta integration of [`lindblad_rhs`] over
/// the exposure `spec.gamma_t()` in `steps` equal steps.
pub fn rk4_evolve(
    w0: &FieldDensityMatrix,
    spec: DampingSpec,
    steps: usize,
) -> Result<FieldDensityMatrix> {
    if steps == 0 {
        return Err(Error::validation("rk4_evolve needs at least one step"));
    }
    let h = spec.gamma_t() / steps as f64;
    let mut w = w0.entries().clone();
    if h > 0.0 {
        for _ in 0..steps {
            let k1 = lindblad_rhs(&w);
            let k2 = lindblad_rhs(&(&w + &k1 * C64::from(h / 2.0)));
            let k3 = lindblad_rhs(&(&w + &k2 * C64::from(h / 2.0)));
            let k4 = lindblad_rhs(&(&w + &k3 * C64::from(h)));
            let two = C64::from(2.0);
            w += (k1 + k2 * two + k3 * two + k4) * C64::from(h / 6.0);
        }
    }
    let drift = (w.trace() - w0.trace()).norm();
    if !drift.is_finite() || drift > RK4_MAX_TRACE_DRIFT {
        return Err(Error::IntegrationQuality { drift, steps });
    }
    Ok(FieldDensityMatrix::from_entries_unchecked(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock_core::test_support::random_density;
    use crate::fock_core::{pure_density, purity, FieldKet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_3};

    fn example_state(n_max: usize) -> FieldDensityMatrix {
        let ket = FieldKet::new(vec![
            C64::new(FRAC_1_SQRT_2, 0.0),
            C64::from_polar(FRAC_1_SQRT_2, FRAC_PI_3),
        ])
        .unwrap();
        pure_density(&ket.embed(n_max).unwrap()).unwrap()
    }

    fn frob(a: &FieldDensityMatrix, b: &FieldDensityMatrix) -> f64 {
        (a.entries() - b.entries()).norm()
    }

    #[test]
    fn binomial_matches_pascal() {
        let mut row = vec![1.0f64];
        for n in 1..=30usize {
            let mut next = vec![1.0; n + 1];
            for k in 1..n {
                next[k] = row[k - 1] + row[k];
            }
            row = next;
            for (k, v) in row.iter().enumerate() {
                assert!((binomial(n, k) - v).abs() <= 1e-15 * v, "C({n},{k})");
            }
        }
        assert_eq!(binomial(3, 5), 0.0);
    }

    #[test]
    fn negative_exposure_rejected() {
        assert!(DampingSpec::new(-0.1).is_err());
        assert!(DampingSpec::new(f64::NAN).is_err());
        assert!(DampingSpec::new(0.0).is_ok());
    }

    #[test]
    fn zero_exposure_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_density(&mut rng, 5, 6);
        let out = apply_damping(&w, DampingSpec::none());
        assert_eq!(out, w);
        let rk = rk4_evolve(&w, DampingSpec::none(), 10).unwrap();
        assert_eq!(rk, w);
    }

    #[test]
    fn vacuum_is_fixed_point() {
        let w = pure_density(&FieldKet::fock(0, 4).unwrap()).unwrap();
        for gt in [0.1, 1.0, 7.5] {
            assert_eq!(apply_damping(&w, DampingSpec::new(gt).unwrap()), w);
        }
    }

    #[test]
    fn single_photon_decay() {
        let w = pure_density(&FieldKet::fock(1, 3).unwrap()).unwrap();
        let spec = DampingSpec::new(0.3).unwrap();
        let out = apply_damping(&w, spec);
        let p1 = (-0.6f64).exp();
        assert!((out.population(1) - p1).abs() < 1e-15);
        assert!((out.population(0) - (1.0 - p1)).abs() < 1e-15);
        for n in 0..4 {
            for m in 0..4 {
                if n != m {
                    assert_eq!(out.get(n, m), C64::new(0.0, 0.0));
                }
            }
        }
        let rk = rk4_evolve(&w, spec, 1000).unwrap();
        assert!(frob(&out, &rk) < 1e-10);
    }

    #[test]
    fn coherence_decays_at_half_rate() {
        let w = example_state(3);
        let spec = DampingSpec::new(0.3).unwrap();
        let out = apply_damping(&w, spec);
        let expect = w.get(0, 1) * (-0.3f64).exp();
        assert!((out.get(0, 1) - expect).norm() < 1e-15);
        let rk = rk4_evolve(&w, spec, 1000).unwrap();
        assert!((rk.get(0, 1) - expect).norm() < 1e-12);
    }

    #[test]
    fn dissipated_example_purity() {
        let out = apply_damping(&example_state(3), DampingSpec::new(0.3).unwrap());
        // oracle: purity as the sum of squared eigenvalues
        let oracle: f64 = out.eigenvalues().iter().map(|l| l * l).sum();
        let p = purity(&out);
        assert!((p - oracle).abs() < 1e-12);
        assert!(p > 0.5 && p < 1.0, "purity {p}");
    }

    #[test]
    fn rhs_examples() {
        let vac = pure_density(&FieldKet::fock(0, 3).unwrap()).unwrap();
        assert!(lindblad_rhs(vac.entries()).norm() == 0.0);

        let one = pure_density(&FieldKet::fock(1, 3).unwrap()).unwrap();
        let r = lindblad_rhs(one.entries());
        let mut expect = DMatrix::zeros(4, 4);
        expect[(0, 0)] = C64::new(2.0, 0.0);
        expect[(1, 1)] = C64::new(-2.0, 0.0);
        assert!((r - expect).norm() < 1e-15);
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let w = random_density(&mut rng, 5, 6);
            let r = lindblad_rhs(w.entries());
            assert!(r.trace().norm() < 1e-12);
            assert!((&r - r.adjoint()).norm() < 1e-12);
        }
    }

    #[test]
    fn rhs_matches_operator_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_density(&mut rng, 4, 5);
        let a = annihilation(6);
        let ad = a.adjoint();
        let num = &ad * &a;
        let e = w.entries();
        let direct = &a * e * &ad * C64::new(2.0, 0.0) - &num * e - e * &num;
        assert!((direct - lindblad_rhs(e)).norm() < 1e-14);
    }

    #[test]
    fn rk4_large_exposure_approaches_vacuum() {
        let w = pure_density(&FieldKet::fock(2, 4).unwrap()).unwrap();
        let out = rk4_evolve(&w, DampingSpec::new(5.0).unwrap(), 5000).unwrap();
        assert!(out.population(0) >= 0.99);
    }

    #[test]
    fn rk4_rejects_zero_steps_and_coarse_steps() {
        let w = pure_density(&FieldKet::fock(6, 8).unwrap()).unwrap();
        assert!(rk4_evolve(&w, DampingSpec::new(0.3).unwrap(), 0).is_err());
        // step far outside the stability region blows up the trace
        let err = rk4_evolve(&w, DampingSpec::new(50.0).unwrap(), 5).unwrap_err();
        assert!(matches!(err, Error::IntegrationQuality { .. }), "{err}");
    }

    #[test]
    fn energy_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_density(&mut rng, 6, 6);
        let mut last = w.mean_photon_number();
        for i in 1..20 {
            let out = apply_damping(&w, DampingSpec::new(0.05 * i as f64).unwrap());
            let e = out.mean_photon_number();
            assert!(e <= last + 1e-14);
            last = e;
        }
    }

    proptest::proptest! {
        #[test]
        fn damping_preserves_trace_and_hermiticity(seed in 0u64..10_000, n_max in 1usize..=12, gt in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_density(&mut rng, n_max, n_max);
            let out = apply_damping(&w, DampingSpec::new(gt).unwrap());
            proptest::prop_assert!((out.trace() - C64::new(1.0, 0.0)).norm() < 1e-10);
            proptest::prop_assert!((out.entries() - out.entries().adjoint()).norm() < 1e-12);
            proptest::prop_assert!(out.validate_psd().is_ok());
        }

        #[test]
        fn damping_is_a_semigroup(seed in 0u64..10_000, s in 0.0f64..1.5, t in 0.0f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_density(&mut rng, 8, 8);
            let two = apply_damping(
                &apply_damping(&w, DampingSpec::new(s).unwrap()),
                DampingSpec::new(t).unwrap(),
            );
            let one = apply_damping(&w, DampingSpec::new(s + t).unwrap());
            proptest::prop_assert!(frob(&one, &two) < 1e-10);
        }
    }
}
