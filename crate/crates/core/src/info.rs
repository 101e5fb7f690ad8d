//! Predicted and realized information about the uncertain parameters.
//!
//! The one-step information index measures how much the parameter-induced
//! excess output covariance stands out against the nominal innovation
//! covariance. Multi-step prediction comes in two flavours: *pessimistic*
//! assumes no measurement ever tightens the state estimate (prediction-only
//! covariance in the denominator), *optimistic* assumes every measurement is
//! processed by a nominal Kalman filter. Both rate the same excess-covariance
//! numerator, so optimistic >= pessimistic holds pathwise.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimation::{predict_irreducible, IrreducibleState};
use crate::tensor::MomentSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfoMode {
    Pessimistic,
    Optimistic,
}

/// Per-step predicted information with damped and plain accumulations.
#[derive(Debug, Clone)]
pub struct InfoPrediction {
    pub mode: InfoMode,
    /// Number of inexact parameters used in the damping exponent.
    pub p: f64,
    pub i_z: Vec<f64>,
    pub i_cum: Vec<f64>,
    pub i_sigma: Vec<f64>,
}

/// One-step information and the exact log-determinant gain it linearizes.
#[derive(Debug, Clone)]
pub struct OneStepInfo {
    pub i_z: f64,
    pub logdet_gain: f64,
    pub delta_alpha: DMatrix<f64>,
}

fn spd_inverse(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(0.5 * (s + s.transpose()))
        .map(|c| c.inverse())
        .ok_or(Error::SingularInnovation)
}

fn spd_logdet(s: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(0.5 * (s + s.transpose())).ok_or(Error::SingularInnovation)?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Parameter-induced excess of the one-step state covariance:
/// `quad(beta, alpha + xbar xbar^T) + quad(gamma, u u^T) + A + A^T`
/// with `A = bilinear(nu, xbar, u)`.
pub fn excess_covariance(
    xbar: &DVector<f64>,
    alpha: &DMatrix<f64>,
    moments: &MomentSet,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let second = alpha + xbar * xbar.transpose();
    let a = moments.nu.bilinear_contract(xbar, u)?;
    let out = moments.beta.quad_contract(&second)?
        + moments.gamma.quad_contract(&(u * u.transpose()))?
        + &a
        + a.transpose();
    Ok(0.5 * (&out + out.transpose()))
}

/// One-step information index
/// `I_z = (1/L) tr[(H alpha_nom H^T + R)^{-1} H delta_alpha H^T]`
/// where `alpha_nom = Fbar alpha Fbar^T + Q` is the nominal Kalman prediction,
/// together with the exact output log-determinant gain it linearizes.
pub fn info_one_step(
    xbar: &DVector<f64>,
    alpha: &DMatrix<f64>,
    moments: &MomentSet,
    u: &DVector<f64>,
    fbar: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<OneStepInfo> {
    let l = h.nrows() as f64;
    let delta_alpha = excess_covariance(xbar, alpha, moments, u)?;
    let alpha_nom = fbar * alpha * fbar.transpose() + q;
    let s_nom = h * &alpha_nom * h.transpose() + r;
    let s_inv = spd_inverse(&s_nom)?;
    let i_z = (&s_inv * h * &delta_alpha * h.transpose()).trace() / l;
    let s_full = h * (&alpha_nom + &delta_alpha) * h.transpose() + r;
    let logdet_gain = spd_logdet(&s_full)? - spd_logdet(&s_nom)?;
    Ok(OneStepInfo {
        i_z,
        logdet_gain,
        delta_alpha,
    })
}

/// Damped accumulation `I_cum(k) = I_cum(k-1) + exp(-I_cum(k-1)/P) I_z(k)`
/// plus the plain running sum.
pub fn info_accumulate(i_z: &[f64], p: f64) -> (Vec<f64>, Vec<f64>) {
    let mut i_cum = Vec::with_capacity(i_z.len());
    let mut i_sigma = Vec::with_capacity(i_z.len());
    let mut cum = 0.0;
    let mut sigma = 0.0;
    for &v in i_z {
        cum += (-cum / p).exp() * v;
        sigma += v;
        i_cum.push(cum);
        i_sigma.push(sigma);
    }
    (i_cum, i_sigma)
}

/// Multi-step information prediction along a nominal control sequence.
///
/// The numerator (excess covariance) always follows the prediction-only
/// recursion of the mean-parameter system; the denominator covariance follows
/// the mode: prediction-only for `Pessimistic`, nominal Kalman filtering for
/// `Optimistic`.
#[allow(clippy::too_many_arguments)]
pub fn info_multistep(
    mode: InfoMode,
    x0: &DVector<f64>,
    alpha0: &DMatrix<f64>,
    moments: &MomentSet,
    controls: &[DVector<f64>],
    fbar: &DMatrix<f64>,
    gbar: &DMatrix<f64>,
    h: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: f64,
) -> Result<InfoPrediction> {
    let l = h.nrows() as f64;
    let xi = moments.scaled_xi(1.0); // parameter block only
    let mut irr = IrreducibleState {
        xbar: x0.clone(),
        alpha: alpha0.clone(),
    };
    let mut alpha_mode = alpha0.clone();
    let mut i_z = Vec::with_capacity(controls.len());
    for u in controls {
        let delta_alpha = excess_covariance(&irr.xbar, &irr.alpha, &xi, u)?;
        let alpha_nom = fbar * &alpha_mode * fbar.transpose() + q;
        let s_nom = h * &alpha_nom * h.transpose() + r;
        let s_inv = spd_inverse(&s_nom)?;
        i_z.push((&s_inv * h * &delta_alpha * h.transpose()).trace() / l);

        irr = predict_irreducible(&irr, u, fbar, gbar, &xi, q)?;
        alpha_mode = match mode {
            InfoMode::Pessimistic => irr.alpha.clone(),
            InfoMode::Optimistic => {
                let gain = &alpha_nom * h.transpose() * &s_inv;
                let updated = &alpha_nom - &gain * h * &alpha_nom;
                0.5 * (&updated + updated.transpose())
            }
        };
    }
    let (i_cum, i_sigma) = info_accumulate(&i_z, p);
    Ok(InfoPrediction {
        mode,
        p,
        i_z,
        i_cum,
        i_sigma,
    })
}

/// Log-determinant of the packed parameter covariance restricted to the
/// uncertain-entry support. Realized information between two moment sets is
/// half the difference of these values.
pub fn restricted_logdet(moments: &MomentSet, support: &[usize]) -> Result<f64> {
    if support.is_empty() {
        return Ok(0.0);
    }
    let packed = moments.packed_param_cov();
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |i, j| packed[(support[i], support[j])]);
    spd_logdet(&sub)
}
