//! State and parameter estimation for systems with random `F` and `G`.
//!
//! Two recursions are provided. The *reducible* filter carries the full second
//! moment description `{xbar, alpha, Fbar, Gbar, beta, gamma, nu, phi, psi}`
//! and propagates it exactly under joint Gaussianity: the prediction uses the
//! fourth-moment factorization of Gaussian products and the update is exact
//! conditioning of the joint Gaussian on the measurement. The *irreducible*
//! filter keeps parameter uncertainty fixed (no state-parameter cross moments)
//! and reduces to the standard Kalman recursion when the parameter block is
//! zero.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::tensor::{MomentSet, Tensor3, Tensor4};

/// Mean and covariance of the state under fixed parameter statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct IrreducibleState {
    pub xbar: DVector<f64>,
    pub alpha: DMatrix<f64>,
}

/// Full joint second-moment description of `(x, F, G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducibleState {
    pub xbar: DVector<f64>,
    pub alpha: DMatrix<f64>,
    pub fbar: DMatrix<f64>,
    pub gbar: DMatrix<f64>,
    pub moments: MomentSet,
}

impl ReducibleState {
    pub fn new(
        xbar: DVector<f64>,
        alpha: DMatrix<f64>,
        fbar: DMatrix<f64>,
        gbar: DMatrix<f64>,
        moments: MomentSet,
    ) -> Self {
        ReducibleState {
            xbar,
            alpha,
            fbar,
            gbar,
            moments,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.xbar.len()
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// `S^{-1}` through Cholesky; singular innovation covariance is an error.
fn inv_spd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(symmetrize(s))
        .map(|c| c.inverse())
        .ok_or(Error::SingularInnovation)
}

/// Time update of the irreducible filter.
///
/// `xbar' = Fbar xbar + Gbar u` and
/// `alpha' = Fbar alpha Fbar^T + Q + quad(beta, alpha + xbar xbar^T)
///   + quad(gamma, u u^T) + A + A^T` with `A = bilinear(nu, xbar, u)`.
/// The moment set must carry no state cross moments.
pub fn predict_irreducible(
    state: &IrreducibleState,
    u: &DVector<f64>,
    fbar: &DMatrix<f64>,
    gbar: &DMatrix<f64>,
    moments: &MomentSet,
    q: &DMatrix<f64>,
) -> Result<IrreducibleState> {
    if moments.phi.as_ref().map_or(false, |t| !t.is_zero())
        || moments.psi.as_ref().map_or(false, |t| !t.is_zero())
    {
        return Err(Error::Config(
            "predict_irreducible: moment set carries state cross moments".into(),
        ));
    }
    let xbar = fbar * &state.xbar + gbar * u;
    let second = &state.alpha + &state.xbar * state.xbar.transpose();
    let a = moments.nu.bilinear_contract(&state.xbar, u)?;
    let alpha = fbar * &state.alpha * fbar.transpose()
        + q
        + moments.beta.quad_contract(&second)?
        + moments.gamma.quad_contract(&(u * u.transpose()))?
        + &a
        + a.transpose();
    Ok(IrreducibleState {
        xbar,
        alpha: symmetrize(&alpha),
    })
}

/// Standard Kalman measurement update.
pub fn update_irreducible(
    state: &IrreducibleState,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<IrreducibleState> {
    let s = h * &state.alpha * h.transpose() + r;
    let s_inv = inv_spd(&s)?;
    let gain = &state.alpha * h.transpose() * &s_inv;
    let xbar = &state.xbar + &gain * (z - h * &state.xbar);
    let alpha = &state.alpha - &gain * h * &state.alpha;
    Ok(IrreducibleState {
        xbar,
        alpha: symmetrize(&alpha),
    })
}

/// Time update of the reducible filter (exact Gaussian moment propagation).
pub fn predict_reducible(
    state: &ReducibleState,
    u: &DVector<f64>,
    q: &DMatrix<f64>,
) -> Result<ReducibleState> {
    let n = state.state_dim();
    let m = state.gbar.ncols();
    let phi = state.moments.phi_or_zero();
    let psi = state.moments.psi_or_zero();
    let beta = &state.moments.beta;
    let gamma = &state.moments.gamma;
    let nu = &state.moments.nu;
    let fbar = &state.fbar;
    let xbar = &state.xbar;

    // E[x'] picks up the parameter-state correlation through trace_pair
    let xbar_next = fbar * xbar + &state.gbar * u + phi.trace_pair()?;

    let second = &state.alpha + xbar * xbar.transpose();
    let a = nu.bilinear_contract(xbar, u)?
        + fbar * phi.cross_vec_contract(xbar)?.transpose()
        + fbar * psi.cross_vec_contract(u)?.transpose();
    let alpha_next = fbar * &state.alpha * fbar.transpose()
        + q
        + beta.quad_contract(&second)?
        + gamma.quad_contract(&(u * u.transpose()))?
        + phi.gram3_perm(&phi)?
        + &a
        + a.transpose();

    // cross moments propagate through the mean dynamics plus the parameter block
    let mut phi_next = Tensor3::zeros(n, n, n);
    for i in 0..n {
        for p in 0..n {
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += phi.get(i, p, l) * fbar[(k, l)] + beta.get(i, p, k, l) * xbar[l];
                }
                for l in 0..m {
                    acc += nu.get(i, p, k, l) * u[l];
                }
                phi_next.set(i, p, k, acc);
            }
        }
    }
    let mut psi_next = Tensor3::zeros(n, m, n);
    for i in 0..n {
        for p in 0..m {
            for k in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += psi.get(i, p, l) * fbar[(k, l)] + nu.get(k, l, i, p) * xbar[l];
                }
                for l in 0..m {
                    acc += gamma.get(i, p, k, l) * u[l];
                }
                psi_next.set(i, p, k, acc);
            }
        }
    }

    Ok(ReducibleState {
        xbar: xbar_next,
        alpha: symmetrize(&alpha_next),
        fbar: state.fbar.clone(),
        gbar: state.gbar.clone(),
        moments: MomentSet {
            beta: beta.clone(),
            gamma: gamma.clone(),
            nu: nu.clone(),
            phi: Some(phi_next),
            psi: Some(psi_next),
        },
    })
}

/// Measurement update of the reducible filter: exact conditioning of the joint
/// Gaussian `(x, F, G)` on `z = H x + v`.
pub fn update_reducible(
    state: &ReducibleState,
    z: &DVector<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<ReducibleState> {
    let n = state.state_dim();
    let m = state.gbar.ncols();
    let s = h * &state.alpha * h.transpose() + r;
    let s_inv = inv_spd(&s)?;
    // precision-weighted quantities: a = H^T S^-1 H, b = H^T S^-1 (z - H xbar)
    let a = h.transpose() * &s_inv * h;
    let b = h.transpose() * &s_inv * (z - h * &state.xbar);

    let phi = state.moments.phi_or_zero();
    let psi = state.moments.psi_or_zero();

    let xbar = &state.xbar + &state.alpha * &b;
    let mut fbar = state.fbar.clone();
    let mut gbar = state.gbar.clone();
    for i in 0..n {
        for p in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += phi.get(i, p, k) * b[k];
            }
            fbar[(i, p)] += acc;
        }
        for p in 0..m {
            let mut acc = 0.0;
            for k in 0..n {
                acc += psi.get(i, p, k) * b[k];
            }
            gbar[(i, p)] += acc;
        }
    }

    let alpha = symmetrize(&(&state.alpha - &state.alpha * &a * &state.alpha));

    // phi A phi^T style corrections for every moment block
    let contract3 = |ta: &Tensor3, tb: &Tensor3| -> Tensor4 {
        let [d0, d1, _] = ta.dims();
        let [e0, e1, _] = tb.dims();
        let mut out = Tensor4::zeros(d0, d1, e0, e1);
        for i in 0..d0 {
            for p in 0..d1 {
                for j in 0..e0 {
                    for q in 0..e1 {
                        let mut acc = 0.0;
                        for mm in 0..n {
                            for nn in 0..n {
                                acc += ta.get(i, p, mm) * a[(mm, nn)] * tb.get(j, q, nn);
                            }
                        }
                        out.set(i, p, j, q, acc);
                    }
                }
            }
        }
        out
    };
    let sub4 = |t: &Tensor4, c: &Tensor4| -> Tensor4 {
        let [d0, d1, d2, d3] = t.dims();
        let mut out = t.clone();
        for i in 0..d0 {
            for p in 0..d1 {
                for j in 0..d2 {
                    for q in 0..d3 {
                        out.set(i, p, j, q, t.get(i, p, j, q) - c.get(i, p, j, q));
                    }
                }
            }
        }
        out
    };
    let beta = sub4(&state.moments.beta, &contract3(&phi, &phi)).symmetrized()?;
    let gamma = sub4(&state.moments.gamma, &contract3(&psi, &psi)).symmetrized()?;
    let nu = sub4(&state.moments.nu, &contract3(&phi, &psi));

    let alpha_a = &state.alpha * &a; // for phi' = phi - phi A alpha
    let mut phi_next = Tensor3::zeros(n, n, n);
    let mut psi_next = Tensor3::zeros(n, m, n);
    for i in 0..n {
        for k in 0..n {
            for p in 0..n {
                let mut acc = phi.get(i, p, k);
                for mm in 0..n {
                    acc -= phi.get(i, p, mm) * alpha_a[(k, mm)];
                }
                phi_next.set(i, p, k, acc);
            }
            for p in 0..m {
                let mut acc = psi.get(i, p, k);
                for mm in 0..n {
                    acc -= psi.get(i, p, mm) * alpha_a[(k, mm)];
                }
                psi_next.set(i, p, k, acc);
            }
        }
    }

    Ok(ReducibleState {
        xbar,
        alpha,
        fbar,
        gbar,
        moments: MomentSet {
            beta,
            gamma,
            nu,
            phi: Some(phi_next),
            psi: Some(psi_next),
        },
    })
}

/// Innovation adequacy statistic and its normal score.
///
/// `theta = (z - H xbar)^T (R + H alpha H^T)^{-1} (z - H xbar)` is chi-squared
/// with `L` degrees of freedom when the model is adequate; the returned score
/// `sqrt(2 theta) - sqrt(2 L - 1)` is approximately standard normal.
pub fn adequacy(
    z: &DVector<f64>,
    xbar: &DVector<f64>,
    alpha: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let innov = z - h * xbar;
    let s = h * alpha * h.transpose() + r;
    let s_inv = inv_spd(&s)?;
    let theta = (innov.transpose() * &s_inv * &innov)[(0, 0)];
    let l = h.nrows() as f64;
    let score = (2.0 * theta).sqrt() - (2.0 * l - 1.0).sqrt();
    Ok((theta, score))
}
