//! Finite-horizon controller synthesis: certainty-equivalent, cautious and
//! dual gain schedules, affine target tracking, and probing fallback.
//!
//! All three controllers share one backward Riccati-type recursion; they
//! differ in the weight tensor fed to the parameter contractions. The
//! certainty-equivalent schedule drops parameter uncertainty entirely, the
//! cautious schedule rates it through `dual_contract` terms, and the dual
//! schedule additionally carries a scalar co-state `lambda` that prices the
//! information carried by future measurements.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::standard_normal_vec;
use crate::model::{CostSpec, LdsModel};
use crate::tensor::MomentSet;

/// Controls larger than this (sup-norm) are treated as a synthesis failure
/// and replaced by a probing input.
pub const U_MAX: f64 = 1e3;

/// Relative eigenvalue threshold below which `T(k)` counts as singular.
const T_COND_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainKind {
    CertaintyEquivalent,
    Cautious,
    Dual,
}

/// Parameter uncertainty fed to the synthesis, either one set for the whole
/// horizon or one per step.
#[derive(Debug, Clone)]
pub enum XiSchedule {
    Constant(MomentSet),
    PerStep(Vec<MomentSet>),
}

impl XiSchedule {
    fn at(&self, k: usize) -> &MomentSet {
        match self {
            XiSchedule::Constant(m) => m,
            XiSchedule::PerStep(v) => &v[k.min(v.len() - 1)],
        }
    }
}

/// Covariance trajectory of the nominal (mean-parameter) Kalman filter.
#[derive(Debug, Clone)]
pub struct NominalTrajectory {
    /// `alpha*(k|k)`, length `K+1`.
    pub alpha_filt: Vec<DMatrix<f64>>,
    /// `alpha*(k+1|k)`, length `K`.
    pub alpha_pred: Vec<DMatrix<f64>>,
    /// Residual projectors `D(k)`; `D(0) = I`, length `K+1`.
    pub d: Vec<DMatrix<f64>>,
    /// `H^T (H alpha*(k|k-1) H^T + R)^{-1} H`, zeros at `k = 0`, length `K+1`.
    pub s_mat: Vec<DMatrix<f64>>,
}

impl NominalTrajectory {
    pub fn new(model: &LdsModel, alpha0: &DMatrix<f64>, horizon: usize) -> Result<Self> {
        let n = model.n;
        let mut alpha_filt = Vec::with_capacity(horizon + 1);
        let mut alpha_pred = Vec::with_capacity(horizon);
        let mut d = Vec::with_capacity(horizon + 1);
        let mut s_mat = Vec::with_capacity(horizon + 1);
        alpha_filt.push(0.5 * (alpha0 + alpha0.transpose()));
        d.push(DMatrix::identity(n, n));
        s_mat.push(DMatrix::zeros(n, n));
        for k in 0..horizon {
            let pred = &model.fbar * &alpha_filt[k] * model.fbar.transpose() + &model.q;
            let s = &model.h * &pred * model.h.transpose() + &model.r;
            let s_inv = Cholesky::new(0.5 * (&s + s.transpose()))
                .map(|c| c.inverse())
                .ok_or(Error::SingularInnovation)?;
            let proj = DMatrix::identity(n, n) - &pred * model.h.transpose() * &s_inv * &model.h;
            let filt = &proj * &pred;
            s_mat.push(model.h.transpose() * &s_inv * &model.h);
            alpha_filt.push(0.5 * (&filt + filt.transpose()));
            alpha_pred.push(pred);
            d.push(proj);
        }
        Ok(NominalTrajectory {
            alpha_filt,
            alpha_pred,
            d,
            s_mat,
        })
    }
}

/// Backward-synthesized gain schedule over one horizon.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub kind: GainKind,
    pub horizon: usize,
    /// Feedback gains `C(k)`, length `K`.
    pub c: Vec<DMatrix<f64>>,
    /// Control Hessians `T(k)`, length `K`.
    pub t: Vec<DMatrix<f64>>,
    /// Affine feedforward `-T(k)^{-1} G^T p(k+1)`, length `K`.
    pub u_ff: Vec<DVector<f64>>,
    /// Cost-to-go weights `A(k|k)`, length `K+1`.
    pub a: Vec<DMatrix<f64>>,
    /// Pre-stage weights `A(k|k+1)`, length `K`.
    pub a_pre: Vec<DMatrix<f64>>,
    /// Estimation-error weights `K(k|k)`, length `K+1`.
    pub kmat: Vec<DMatrix<f64>>,
    /// `C^T T C` per step, length `K`.
    pub ctc: Vec<DMatrix<f64>>,
    /// Information co-state, length `K+1`, identically zero unless `Dual`.
    pub lambda: Vec<f64>,
    /// Steps where `T(k)` was singular or badly conditioned.
    pub singular: Vec<bool>,
    /// Predicted cumulative information trace (informational; zeros unless set).
    pub i_cum: Vec<f64>,
    /// Affine co-states `p(k)` of the target-tracking recursion, length `K+1`.
    pub p_aff: Vec<DVector<f64>>,
    /// Terminal target the affine terms steer toward.
    pub rho: DVector<f64>,
    pub nominal: NominalTrajectory,
}

fn regularized_inverse(t: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = 0.5 * (t + t.transpose());
    let eigs = sym.symmetric_eigenvalues();
    let max_eig = eigs.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = !(min_eig > T_COND_TOL * max_eig.max(1e-300));
    if !singular {
        if let Some(chol) = Cholesky::new(sym.clone()) {
            return (chol.inverse(), false);
        }
    }
    let reg = &sym + DMatrix::identity(t.nrows(), t.ncols()) * (T_COND_TOL * max_eig + 1e-12);
    let inv = Cholesky::new(reg.clone())
        .map(|c| c.inverse())
        .unwrap_or_else(|| DMatrix::identity(t.nrows(), t.ncols()));
    (inv, true)
}

/// Synthesize a gain schedule of the requested kind.
///
/// `p_count` is the number of inexact parameters (the damping scale of the
/// information co-state); it only matters for `Dual`.
pub fn solve_schedule(
    model: &LdsModel,
    cost: &CostSpec,
    kind: GainKind,
    xi: &XiSchedule,
    alpha0: &DMatrix<f64>,
    p_count: f64,
) -> Result<GainSchedule> {
    let horizon = cost.horizon;
    let (n, m, l) = (model.n, model.m, model.l);
    cost.validate(n)?;
    let nominal = NominalTrajectory::new(model, alpha0, horizon)?;
    let b_stage = cost.b_stage(m);
    let zero_xi = MomentSet::zeros(n, m);

    let mut c = vec![DMatrix::zeros(m, n); horizon];
    let mut t = vec![DMatrix::zeros(m, m); horizon];
    let mut ctc = vec![DMatrix::zeros(n, n); horizon];
    let mut a_pre = vec![DMatrix::zeros(n, n); horizon];
    let mut a = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut kmat = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut lambda = vec![0.0; horizon + 1];
    let mut singular = vec![false; horizon];

    a[horizon] = cost.a_terminal.clone();
    for k in (0..horizon).rev() {
        let xi_k = match kind {
            GainKind::CertaintyEquivalent => &zero_xi,
            _ => xi.at(k),
        };
        let a_next = &a[k + 1];
        let mut w = a_next + &kmat[k + 1];
        if kind == GainKind::Dual && p_count > 0.0 {
            w += &nominal.s_mat[k + 1] * (lambda[k + 1] / l as f64);
        }
        let w = 0.5 * (&w + w.transpose());

        let t_k = model.gbar.transpose() * a_next * &model.gbar
            + &b_stage
            + xi_k.gamma.dual_contract(&w)?;
        let c_tilde =
            model.gbar.transpose() * a_next * &model.fbar + xi_k.nu.dual_contract(&w)?.transpose();
        let (t_inv, sing) = regularized_inverse(&t_k);
        singular[k] = sing;
        let c_k = &t_inv * &c_tilde;
        let ctc_k = {
            let raw = c_tilde.transpose() * &c_k;
            0.5 * (&raw + raw.transpose())
        };

        let pre = model.fbar.transpose() * a_next * &model.fbar + xi_k.beta.dual_contract(&w)?
            - &ctc_k;
        let pre = 0.5 * (&pre + pre.transpose());
        a[k] = &pre + &cost.a_stage;
        a_pre[k] = pre;

        let kmat_pred = model.fbar.transpose() * &kmat[k + 1] * &model.fbar + &ctc_k;
        let km = nominal.d[k].transpose() * &kmat_pred * &nominal.d[k];
        kmat[k] = 0.5 * (&km + km.transpose());

        if kind == GainKind::Dual && p_count > 0.0 {
            let t_dot = xi_k.gamma.dual_contract(&w)?;
            let c_dot = xi_k.nu.dual_contract(&w)?.transpose();
            let inner = c_dot.transpose() * &c_k + c_k.transpose() * &c_dot
                - c_k.transpose() * &t_dot * &c_k;
            lambda[k] = lambda[k + 1]
                - (&inner * &nominal.alpha_filt[k]).trace() / (2.0 * p_count);
        }

        c[k] = c_k;
        t[k] = t_k;
        ctc[k] = ctc_k;
    }

    // affine tracking terms toward the terminal target
    let mut p_aff = vec![DVector::zeros(n); horizon + 1];
    p_aff[horizon] = -(&cost.a_terminal * &cost.rho);
    let mut u_ff = vec![DVector::zeros(m); horizon];
    for k in (0..horizon).rev() {
        let (t_inv, _) = regularized_inverse(&t[k]);
        u_ff[k] = -(&t_inv * model.gbar.transpose() * &p_aff[k + 1]);
        p_aff[k] = (&model.fbar - &model.gbar * &c[k]).transpose() * &p_aff[k + 1];
    }

    Ok(GainSchedule {
        kind,
        horizon,
        c,
        t,
        u_ff,
        a,
        a_pre,
        kmat,
        ctc,
        lambda,
        singular,
        i_cum: vec![0.0; horizon],
        p_aff,
        rho: cost.rho.clone(),
        nominal,
    })
}

/// Certainty-equivalent schedule (parameter uncertainty ignored).
pub fn solve_ce(model: &LdsModel, cost: &CostSpec, alpha0: &DMatrix<f64>) -> Result<GainSchedule> {
    let xi = XiSchedule::Constant(MomentSet::zeros(model.n, model.m));
    solve_schedule(model, cost, GainKind::CertaintyEquivalent, &xi, alpha0, 0.0)
}

/// Cautious schedule: uncertainty-weighted gains, no information co-state.
pub fn solve_cautious(
    model: &LdsModel,
    cost: &CostSpec,
    xi: &XiSchedule,
    alpha0: &DMatrix<f64>,
) -> Result<GainSchedule> {
    solve_schedule(model, cost, GainKind::Cautious, xi, alpha0, 0.0)
}

/// Dual schedule: cautious gains with anticipated-information decay of the
/// uncertainty tensors plus the information co-state `lambda`.
///
/// `i_cum` is the predicted cumulative information available before each step
/// (`i_cum[k-1]` measurements processed by step `k`); the step-`k` tensors are
/// the initial ones scaled by `exp(-I/P)`. Without a prediction the initial
/// tensors are used throughout.
pub fn solve_dual(
    model: &LdsModel,
    cost: &CostSpec,
    moments: &MomentSet,
    alpha0: &DMatrix<f64>,
    p_count: f64,
    i_cum: Option<&[f64]>,
) -> Result<GainSchedule> {
    let info_at = |k: usize| -> f64 {
        match i_cum {
            Some(trace) if k > 0 && !trace.is_empty() => trace[(k - 1).min(trace.len() - 1)],
            _ => 0.0,
        }
    };
    let xi = if i_cum.is_some() && p_count > 0.0 {
        XiSchedule::PerStep(
            (0..cost.horizon)
                .map(|k| moments.scaled_xi((-info_at(k) / p_count).exp()))
                .collect(),
        )
    } else {
        XiSchedule::Constant(moments.scaled_xi(1.0))
    };
    let mut schedule = solve_schedule(model, cost, GainKind::Dual, &xi, alpha0, p_count)?;
    for k in 0..schedule.i_cum.len() {
        schedule.i_cum[k] = info_at(k);
    }
    Ok(schedule)
}

/// One-pass information fixed point for the dual controller: predict the
/// information gathered along the certainty-equivalent nominal trajectory
/// (optimistic accounting), then synthesize the dual schedule once from it.
pub fn solve_dual_auto(
    model: &LdsModel,
    cost: &CostSpec,
    moments: &MomentSet,
    x0: &DVector<f64>,
    alpha0: &DMatrix<f64>,
    p_count: f64,
) -> Result<GainSchedule> {
    let pred = predict_information_ce(model, cost, moments, x0, alpha0, p_count)?;
    solve_dual(model, cost, moments, alpha0, p_count, Some(&pred.i_cum))
}

/// Information prediction along the certainty-equivalent nominal trajectory.
pub fn predict_information_ce(
    model: &LdsModel,
    cost: &CostSpec,
    moments: &MomentSet,
    x0: &DVector<f64>,
    alpha0: &DMatrix<f64>,
    p_count: f64,
) -> Result<crate::info::InfoPrediction> {
    let ce = solve_ce(model, cost, alpha0)?;
    let mut x = x0.clone();
    let mut controls = Vec::with_capacity(cost.horizon);
    for k in 0..cost.horizon {
        let u = -(&ce.c[k] * &x) + &ce.u_ff[k];
        x = &model.fbar * &x + &model.gbar * &u;
        controls.push(u);
    }
    crate::info::info_multistep(
        crate::info::InfoMode::Optimistic,
        x0,
        alpha0,
        moments,
        &controls,
        &model.fbar,
        &model.gbar,
        &model.h,
        &model.q,
        &model.r,
        p_count.max(1.0),
    )
}

/// Control at step `k`: feedback plus feedforward, with a probing fallback
/// when the schedule marked `T(k)` singular or the control saturates.
pub fn control_at<R: Rng + ?Sized>(
    schedule: &GainSchedule,
    k: usize,
    xbar: &DVector<f64>,
    probe_sigma: f64,
    rng: &mut R,
) -> (DVector<f64>, bool) {
    let m = schedule.t[k].nrows();
    if !schedule.singular[k] {
        let u = -(&schedule.c[k] * xbar) + &schedule.u_ff[k];
        if u.iter().all(|v| v.is_finite()) && u.amax() <= U_MAX {
            return (u, false);
        }
    }
    (standard_normal_vec(m, rng) * probe_sigma, true)
}

/// Expected optimal cost of a schedule from the initial belief, split into the
/// quadratic part and the affine (target-tracking) part.
///
/// Quadratic part:
/// `1/2 [x0^T A(0|1) x0 + tr A(0|0) alpha0
///   + sum_i (tr A(i+1|i+1) Q + tr C^T T C alpha*(i|i))]`.
/// Affine part: `p(0)^T x0 + c(0)` with
/// `c(K) = 1/2 rho^T A(K|K) rho` and
/// `c(k) = c(k+1) + 1/2 p(k+1)^T G u_ff(k)`.
pub fn average_cost(
    schedule: &GainSchedule,
    model: &LdsModel,
    x0: &DVector<f64>,
    alpha0: &DMatrix<f64>,
) -> (f64, f64) {
    let k_max = schedule.horizon;
    let mut acc = (x0.transpose() * &schedule.a_pre[0] * x0)[(0, 0)]
        + (&schedule.a[0] * alpha0).trace();
    for i in 0..k_max {
        acc += (&schedule.a[i + 1] * &model.q).trace()
            + (&schedule.ctc[i] * &schedule.nominal.alpha_filt[i]).trace();
    }
    let quadratic = 0.5 * acc;

    let mut constant = 0.5 * (schedule.rho.transpose() * &schedule.a[k_max] * &schedule.rho)[(0, 0)];
    for k in 0..k_max {
        constant += 0.5 * (schedule.p_aff[k + 1].transpose() * &model.gbar * &schedule.u_ff[k])[(0, 0)];
    }
    let affine = (schedule.p_aff[0].transpose() * x0)[(0, 0)] + constant;
    (quadratic, affine)
}
