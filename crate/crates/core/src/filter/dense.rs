use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::model::SystemMatrices;

use super::{FilterState, StatePrior};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Conditions `N(a, R)` on `y = F θ + v`, `v ~ N(0, Ṽ)`.
fn condition(
    a: DVector<f64>,
    r: DMatrix<f64>,
    y: &[f64],
    mats: &SystemMatrices,
    index: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let ni = mats.f.nrows();
    if y.len() != ni {
        return Err(Error::Input(format!(
            "{} observed values for {ni} observed sites",
            y.len()
        )));
    }
    if ni == 0 {
        return Ok((a, r, 0.0));
    }
    let f = &mats.f;
    let q = f * &r * f.transpose() + &mats.v_tilde;
    let (l, _) = spd_cholesky(&q).ok_or_else(|| Error::Numerical {
        index,
        message: "innovation covariance not positive definite".into(),
    })?;
    let e = DVector::from_column_slice(y) - f * &a;
    let u = l
        .solve_lower_triangular(&e)
        .ok_or_else(|| Error::Numerical {
            index,
            message: "singular factor".into(),
        })?;
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let ll = -0.5 * (ni as f64 * LN_2PI + logdet + u.dot(&u));
    let rft = &r * f.transpose();
    // gain = R Fᵀ Q⁻¹
    let z = l
        .solve_lower_triangular(&rft.transpose())
        .ok_or_else(|| Error::Numerical {
            index,
            message: "singular factor".into(),
        })?;
    let zt = z.transpose();
    let m = a + &zt * u;
    let mut c = r - &zt * z;
    symmetrize(&mut c);
    Ok((m, c, ll))
}

/// Initialisation update at the first record: conditions the prior directly
/// on the observed values.
pub fn filter_init(
    prior: &StatePrior,
    time: f64,
    y: &[f64],
    mats: &SystemMatrices,
) -> Result<(FilterState, f64)> {
    let (m, c, ll) = condition(prior.m0.clone(), prior.c0.clone(), y, mats, 0)?;
    Ok((
        FilterState {
            m,
            c,
            loglik_total: ll,
            loglik_window: ll,
            t_last: Some(time),
        },
        ll,
    ))
}

/// One propagate-then-condition step: `R = G C Gᵀ + W̃`, then the
/// one-step-forecast likelihood and the conditional Gaussian update.
pub fn filter_step(
    state: &FilterState,
    time: f64,
    y: &[f64],
    mats: &SystemMatrices,
) -> Result<(FilterState, f64)> {
    let t0 = state
        .t_last
        .ok_or_else(|| Error::State("filter_step called before filter_init".into()))?;
    if !(time > t0) {
        return Err(Error::Ordering {
            last: t0,
            next: time,
        });
    }
    let a = &mats.g * &state.m;
    let mut r = &mats.g * &state.c * mats.g.transpose() + &mats.w_tilde;
    symmetrize(&mut r);
    let (m, c, ll) = condition(a, r, y, mats, 0)?;
    Ok((
        FilterState {
            m,
            c,
            loglik_total: state.loglik_total + ll,
            loglik_window: state.loglik_window + ll,
            t_last: Some(time),
        },
        ll,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_incidence, DlmSpec, Family, Location, StaticParams};
    use std::f64::consts::PI;

    fn one_site() -> DlmSpec {
        DlmSpec::new(Family::Sinusoid, vec![Location::new(0, "a", 0.0, 0.0)]).unwrap()
    }

    #[test]
    fn zero_prior_covariance_gives_observation_noise_only() {
        let spec = one_site();
        let params = StaticParams::uniform(&spec, 0.1, 0.4, 0.1, 0.1);
        let prior = StatePrior::new(
            DVector::from_vec(vec![1.0, 2.0, 10.0]),
            DMatrix::zeros(3, 3),
        )
        .unwrap();
        let inc = build_incidence(&[true]);
        let mats = SystemMatrices::assemble(&spec, &params, 0.0, 0.0, &inc, None).unwrap();
        let (st, ll) = filter_init(&prior, 0.0, &[11.5], &mats).unwrap();
        // F m0 = 1 + 10 = 11
        let expected = -0.5 * (2.0 * PI * 0.4).ln() - 0.5 * 0.25 / 0.4;
        assert!((ll - expected).abs() < 1e-12);
        assert_eq!(st.m, prior.m0);
    }

    #[test]
    fn all_missing_first_record_keeps_prior() {
        let spec = one_site();
        let params = StaticParams::uniform(&spec, 0.1, 0.4, 0.1, 0.1);
        let prior = StatePrior::default_for(&spec);
        let inc = build_incidence(&[false]);
        let mats = SystemMatrices::assemble(&spec, &params, 0.0, 0.0, &inc, None).unwrap();
        let (st, ll) = filter_init(&prior, 0.0, &[], &mats).unwrap();
        assert_eq!(ll, 0.0);
        assert_eq!(st.m, prior.m0);
        assert_eq!(st.c, prior.c0);
    }

    #[test]
    fn all_missing_step_is_pure_propagation() {
        let spec = DlmSpec::new(Family::Fourier(1), vec![Location::new(0, "a", 0.0, 0.0)]).unwrap();
        let params = StaticParams::uniform(&spec, 0.1, 0.4, 0.2, 0.1);
        let prior = StatePrior::default_for(&spec);
        let full = build_incidence(&[true]);
        let none = build_incidence(&[false]);
        let m0 = SystemMatrices::assemble(&spec, &params, 0.0, 0.0, &full, None).unwrap();
        let (s1, _) = filter_init(&prior, 0.0, &[16.0], &m0).unwrap();
        let m1 = SystemMatrices::assemble(&spec, &params, 2.0, 2.0, &none, None).unwrap();
        let (s2, ll) = filter_step(&s1, 2.0, &[], &m1).unwrap();
        assert_eq!(ll, 0.0);
        assert!((&s2.m - &m1.g * &s1.m).abs().max() < 1e-15);
        let expect = &m1.g * &s1.c * m1.g.transpose() + &m1.w_tilde;
        assert!((&s2.c - expect).abs().max() < 1e-14);
    }

    #[test]
    fn ordering_is_enforced() {
        let spec = one_site();
        let params = StaticParams::uniform(&spec, 0.1, 0.4, 0.1, 0.1);
        let prior = StatePrior::default_for(&spec);
        let inc = build_incidence(&[true]);
        let mats = SystemMatrices::assemble(&spec, &params, 0.0, 0.0, &inc, None).unwrap();
        let (s, _) = filter_init(&prior, 5.0, &[17.0], &mats).unwrap();
        assert!(matches!(
            filter_step(&s, 5.0, &[17.0], &mats),
            Err(Error::Ordering { .. })
        ));
    }

    #[test]
    fn covariance_never_grows_without_system_noise() {
        // Humidity family with W -> 0 and K -> 0 (psi huge, sigma2 tiny).
        let spec = DlmSpec::new(
            Family::HumidityConditional,
            vec![Location::new(0, "a", 0.0, 0.0)],
        )
        .unwrap();
        let mut params = StaticParams::uniform(&spec, 0.0, 0.5, 0.0, 1.0);
        params.sigma2 = vec![0.0, 0.0];
        let prior = StatePrior::default_for(&spec);
        let inc = build_incidence(&[true]);
        let regs = [Some(12.0)];
        let m0 = SystemMatrices::assemble(&spec, &params, 0.0, 0.0, &inc, Some(&regs)).unwrap();
        let (mut s, _) = filter_init(&prior, 0.0, &[80.0], &m0).unwrap();
        for t in 1..20 {
            let regs = [Some(10.0 + t as f64 * 0.3)];
            let m =
                SystemMatrices::assemble(&spec, &params, t as f64, 1.0, &inc, Some(&regs)).unwrap();
            let (next, _) = filter_step(&s, t as f64, &[80.0 - t as f64], &m).unwrap();
            assert!(next.c.trace() <= s.c.trace() + 1e-12);
            s = next;
        }
    }
}
