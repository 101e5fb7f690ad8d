//! Shared helpers for the oracle and acceptance test targets.
//!
//! Everything here checks the closed-form recursions against either a
//! textbook reference implementation or brute force on the assembled joint
//! Gaussian — never against the code under test itself.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualctl::{
    build_scenario, predict_reducible, update_reducible, JointGaussian, MomentSet, ReducibleState,
    Tensor3, Tensor4,
};

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| (rng.gen::<f64>() - 0.5) * 2.0 * scale)
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, ridge: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, n, n, 1.0);
    &b * b.transpose() + DMatrix::identity(n, n) * ridge
}

/// A full random joint covariance over `(x, vec F, vec G)` with the
/// corresponding `ReducibleState` extracted from its blocks.
pub struct JointInstance {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub state: ReducibleState,
}

pub fn random_joint_instance<R: Rng>(rng: &mut R, n: usize, m: usize) -> JointInstance {
    let nf = n * n;
    let ng = n * m;
    let dim = n + nf + ng;
    let cov = random_spd(rng, dim, 0.05);
    let mean = DVector::from_fn(dim, |_, _| (rng.gen::<f64>() - 0.5) * 4.0);

    let xbar = DVector::from_fn(n, |i, _| mean[i]);
    let fbar = DMatrix::from_fn(n, n, |i, p| mean[n + i * n + p]);
    let gbar = DMatrix::from_fn(n, m, |i, p| mean[n + nf + i * m + p]);
    let alpha = cov.view((0, 0), (n, n)).into_owned();

    let mut beta = Tensor4::zeros(n, n, n, n);
    let mut gamma = Tensor4::zeros(n, m, n, m);
    let mut nu = Tensor4::zeros(n, n, n, m);
    let mut phi = Tensor3::zeros(n, n, n);
    let mut psi = Tensor3::zeros(n, m, n);
    for i in 0..n {
        for p in 0..n {
            for j in 0..n {
                for q in 0..n {
                    beta.set(i, p, j, q, cov[(n + i * n + p, n + j * n + q)]);
                }
                for q in 0..m {
                    nu.set(i, p, j, q, cov[(n + i * n + p, n + nf + j * m + q)]);
                }
            }
            for k in 0..n {
                phi.set(i, p, k, cov[(n + i * n + p, k)]);
            }
        }
        for p in 0..m {
            for j in 0..n {
                for q in 0..m {
                    gamma.set(i, p, j, q, cov[(n + nf + i * m + p, n + nf + j * m + q)]);
                }
            }
            for k in 0..n {
                psi.set(i, p, k, cov[(n + nf + i * m + p, k)]);
            }
        }
    }
    let state = ReducibleState::new(
        xbar,
        alpha,
        fbar,
        gbar,
        MomentSet {
            beta,
            gamma,
            nu,
            phi: Some(phi),
            psi: Some(psi),
        },
    );
    JointInstance { mean, cov, state }
}

// ---------------------------------------------------------------------------
// Reference Kalman filter (textbook form, written independently)
// ---------------------------------------------------------------------------

pub struct RefKalman {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl RefKalman {
    pub fn predict(
        &mut self,
        f: &DMatrix<f64>,
        g: &DMatrix<f64>,
        u: &DVector<f64>,
        q: &DMatrix<f64>,
    ) {
        self.x = f * &self.x + g * u;
        self.p = f * &self.p * f.transpose() + q;
    }

    pub fn update(&mut self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) {
        let s = h * &self.p * h.transpose() + r;
        let k = &self.p * h.transpose() * s.try_inverse().unwrap();
        self.x = &self.x + &k * (z - h * &self.x);
        let n = self.p.nrows();
        let ikh = DMatrix::identity(n, n) - &k * h;
        // Joseph form for numerical robustness
        self.p = &ikh * &self.p * ikh.transpose() + &k * r * k.transpose();
    }
}

/// Zero parameter uncertainty must reduce the full propagation to an exact
/// Kalman filter over 25 prediction/update steps (max error 1e-10).
pub fn check_kalman_reduction() -> f64 {
    let s = build_scenario("interception").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut reference = RefKalman {
        x: s.prior.x0_mean.clone(),
        p: s.prior.x0_cov.clone(),
    };
    let mut state = ReducibleState::new(
        s.prior.x0_mean.clone(),
        s.prior.x0_cov.clone(),
        s.model.fbar.clone(),
        s.model.gbar.clone(),
        MomentSet::zeros(3, 1),
    );
    let mut worst = 0.0f64;
    for _ in 0..25 {
        let u = DVector::from_fn(1, |_, _| (rng.gen::<f64>() - 0.5) * 4.0);
        let z = DVector::from_fn(1, |_, _| (rng.gen::<f64>() - 0.5) * 10.0);
        reference.predict(&s.model.fbar, &s.model.gbar, &u, &s.model.q);
        state = predict_reducible(&state, &u, &s.model.q).unwrap();
        worst = worst
            .max((&state.xbar - &reference.x).amax())
            .max((&state.alpha - &reference.p).amax());

        reference.update(&z, &s.model.h, &s.model.r);
        state = update_reducible(&state, &z, &s.model.h, &s.model.r).unwrap();
        worst = worst
            .max((&state.xbar - &reference.x).amax())
            .max((&state.alpha - &reference.p).amax());
        assert!(state.moments.is_zero());
        assert!(worst < 1e-10, "reduction error {worst}");
    }
    worst
}

/// The measurement update must coincide with brute-force Gaussian
/// conditioning of the assembled joint over `count` random instances.
/// Returns the worst entry-wise error.
pub fn check_conditioning_oracle(count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2002);
    let mut worst = 0.0f64;
    for instance in 0..count {
        let n = rng.gen_range(1..=4usize);
        let m = rng.gen_range(1..=2usize);
        let l = rng.gen_range(1..=2usize);
        let inst = random_joint_instance(&mut rng, n, m);
        let h = random_matrix(&mut rng, l, n, 1.0);
        let r = random_spd(&mut rng, l, 0.2);
        let z = DVector::from_fn(l, |_, _| (rng.gen::<f64>() - 0.5) * 6.0);

        // brute force: condition the assembled joint on z = M y + v
        let dim = inst.mean.len();
        let mut mm = DMatrix::zeros(l, dim);
        mm.view_mut((0, 0), (l, n)).copy_from(&h);
        let s = &mm * &inst.cov * mm.transpose() + &r;
        let gain = &inst.cov * mm.transpose() * s.try_inverse().unwrap();
        let mean_post = &inst.mean + &gain * (&z - &mm * &inst.mean);
        let cov_post = &inst.cov - &gain * &mm * &inst.cov;

        let updated = update_reducible(&inst.state, &z, &h, &r).unwrap();

        let nf = n * n;
        let tol = 1e-10;
        let mut push = |label: &str, err: f64| {
            worst = worst.max(err);
            assert!(err < tol, "instance {instance}: {label} error {err}");
        };
        for i in 0..n {
            push("xbar", (updated.xbar[i] - mean_post[i]).abs());
            for p in 0..n {
                push(
                    "fbar",
                    (updated.fbar[(i, p)] - mean_post[n + i * n + p]).abs(),
                );
            }
            for p in 0..m {
                push(
                    "gbar",
                    (updated.gbar[(i, p)] - mean_post[n + nf + i * m + p]).abs(),
                );
            }
        }
        let phi = updated.moments.phi_or_zero();
        let psi = updated.moments.psi_or_zero();
        for i in 0..n {
            for k in 0..n {
                push(
                    "alpha",
                    (updated.alpha[(i, k)] - 0.5 * (cov_post[(i, k)] + cov_post[(k, i)])).abs(),
                );
            }
            for p in 0..n {
                for k in 0..n {
                    push("phi", (phi.get(i, p, k) - cov_post[(n + i * n + p, k)]).abs());
                    for q in 0..n {
                        let sym = 0.5
                            * (cov_post[(n + i * n + p, n + k * n + q)]
                                + cov_post[(n + k * n + q, n + i * n + p)]);
                        push("beta", (updated.moments.beta.get(i, p, k, q) - sym).abs());
                    }
                    for q in 0..m {
                        push(
                            "nu",
                            (updated.moments.nu.get(i, p, k, q)
                                - cov_post[(n + i * n + p, n + nf + k * m + q)])
                                .abs(),
                        );
                    }
                }
            }
            for p in 0..m {
                for k in 0..n {
                    push(
                        "psi",
                        (psi.get(i, p, k) - cov_post[(n + nf + i * m + p, k)]).abs(),
                    );
                    for q in 0..m {
                        let sym = 0.5
                            * (cov_post[(n + nf + i * m + p, n + nf + k * m + q)]
                                + cov_post[(n + nf + k * m + q, n + nf + i * m + p)]);
                        push("gamma", (updated.moments.gamma.get(i, p, k, q) - sym).abs());
                    }
                }
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Sampling oracle: predicted moments match empirical moments of joint draws
// ---------------------------------------------------------------------------

/// Chunked empirical estimate: mean over `chunks` chunk estimates plus the
/// standard error of that mean.
pub struct Chunked {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    chunks: usize,
}

impl Chunked {
    pub fn new(len: usize) -> Self {
        Chunked {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
            chunks: 0,
        }
    }

    pub fn push(&mut self, estimate: &[f64]) {
        for (i, &v) in estimate.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        self.chunks += 1;
    }

    /// `(mean, standard error)` per slot.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.chunks as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / k).collect();
        let se: Vec<f64> = self
            .sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| ((sq / k - m * m).max(0.0) / k).sqrt())
            .collect();
        (mean, se)
    }
}

/// One-step prediction moments (`xbar`, `alpha`, `phi`, `psi`) must match the
/// empirical moments of 10^6 joint draws to 5 standard errors, over
/// `instances` random problems. Returns the worst error-to-bound ratio.
pub fn check_sampling_oracle(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3003);
    let chunks = 100;
    let chunk_size = 10_000; // 10^6 draws total per instance
    let mut worst_ratio = 0.0f64;

    for instance in 0..instances {
        let n = rng.gen_range(1..=3usize);
        let m = rng.gen_range(1..=2usize);
        let inst = random_joint_instance(&mut rng, n, m);
        let q = random_spd(&mut rng, n, 0.1);
        let u = DVector::from_fn(m, |_, _| (rng.gen::<f64>() - 0.5) * 4.0);

        let predicted = predict_reducible(&inst.state, &u, &q).unwrap();
        let phi_pred = predicted.moments.phi_or_zero();
        let psi_pred = predicted.moments.psi_or_zero();

        let joint = JointGaussian::new(
            &inst.state.fbar,
            &inst.state.gbar,
            &inst.state.xbar,
            &inst.state.moments,
            &inst.state.alpha,
        )
        .unwrap();
        let q_factor = dualctl::psd_factor(&q).unwrap();

        let nf = n * n;
        let ng = n * m;
        // slots: mean (n) | alpha (n*n) | phi (nf*n) | psi (ng*n)
        let mut acc = Chunked::new(n + n * n + nf * n + ng * n);
        let mut draw_rng = ChaCha8Rng::seed_from_u64(4004 + instance as u64);
        for _ in 0..chunks {
            let mut xs: Vec<DVector<f64>> = Vec::new();
            let mut fs = Vec::with_capacity(chunk_size);
            xs.reserve(chunk_size);
            for _ in 0..chunk_size {
                let (f, g, x) = joint.sample(&mut draw_rng);
                let w = dualctl::sample_mvn(&DVector::zeros(n), &q_factor, &mut draw_rng);
                let x_next = &f * &x + &g * &u + w;
                xs.push(x_next);
                fs.push((f, g));
            }
            let cs = chunk_size as f64;
            let mut mean_x = DVector::zeros(n);
            for x in &xs {
                mean_x += x;
            }
            mean_x /= cs;
            let mut est = Vec::with_capacity(n + n * n + nf * n + ng * n);
            est.extend(mean_x.iter());
            // covariance of x'
            for i in 0..n {
                for j in 0..n {
                    let mut acc_c = 0.0;
                    for x in &xs {
                        acc_c += (x[i] - mean_x[i]) * (x[j] - mean_x[j]);
                    }
                    est.push(acc_c / cs);
                }
            }
            // Cov(F[i,p], x'); means of F and G are the (unchanged) prior means
            let fbar = &inst.state.fbar;
            let gbar = &inst.state.gbar;
            for i in 0..n {
                for p in 0..n {
                    for k in 0..n {
                        let mut acc_c = 0.0;
                        for ((f, _), x) in fs.iter().zip(&xs) {
                            acc_c += (f[(i, p)] - fbar[(i, p)]) * (x[k] - mean_x[k]);
                        }
                        est.push(acc_c / cs);
                    }
                }
            }
            for i in 0..n {
                for p in 0..m {
                    for k in 0..n {
                        let mut acc_c = 0.0;
                        for ((_, g), x) in fs.iter().zip(&xs) {
                            acc_c += (g[(i, p)] - gbar[(i, p)]) * (x[k] - mean_x[k]);
                        }
                        est.push(acc_c / cs);
                    }
                }
            }
            acc.push(&est);
        }

        let (mean, se) = acc.finish();
        let mut slot = 0;
        let mut check = |label: &str, expected: f64, slot: &mut usize| {
            let diff = (mean[*slot] - expected).abs();
            let bound = 5.0 * se[*slot].max(1e-12);
            worst_ratio = worst_ratio.max(diff / bound);
            assert!(
                diff < bound,
                "instance {instance} {label}[{slot}]: |{} - {expected}| = {diff} > {bound}",
                mean[*slot],
                slot = *slot
            );
            *slot += 1;
        };
        for i in 0..n {
            check("xbar", predicted.xbar[i], &mut slot);
        }
        for i in 0..n {
            for j in 0..n {
                check("alpha", predicted.alpha[(i, j)], &mut slot);
            }
        }
        for i in 0..n {
            for p in 0..n {
                for k in 0..n {
                    check("phi", phi_pred.get(i, p, k), &mut slot);
                }
            }
        }
        for i in 0..n {
            for p in 0..m {
                for k in 0..n {
                    check("psi", psi_pred.get(i, p, k), &mut slot);
                }
            }
        }
    }
    worst_ratio
}
