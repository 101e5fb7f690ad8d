//! Joint Gaussian sampling of `(x, F, G)` from a moment set.
//!
//! Used as the brute-force oracle for the contraction algebra and as the truth
//! generator for Monte Carlo episodes. The PRNG contract is ChaCha8 with the
//! ziggurat standard-normal transform from `rand_distr`; a golden-value test
//! pins the sequence.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{MomentSet, PSD_TOL};

/// Square-root factor of a symmetric PSD matrix via eigendecomposition.
///
/// Eigenvalues below `-PSD_TOL * trace` are an error; small negatives from
/// round-off are clamped to zero before taking the root.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let trace = sym.trace().abs().max(1e-300);
    let eig = sym.symmetric_eigen();
    let mut min_eig = f64::INFINITY;
    for &v in eig.eigenvalues.iter() {
        min_eig = min_eig.min(v);
    }
    if min_eig < -PSD_TOL * trace {
        return Err(Error::NotPsd {
            context: "psd_factor",
            min_eig,
        });
    }
    let mut factor = eig.eigenvectors;
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        for i in 0..n {
            factor[(i, j)] *= s;
        }
    }
    Ok(factor)
}

/// Draw a standard-normal vector of length `n`.
pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// One draw of `N(mean, factor * factor^T)` given a precomputed factor.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    mean + factor * standard_normal_vec(factor.ncols(), rng)
}

/// Sampler for the jointly Gaussian set `{x, F, G}`.
///
/// The joint vector is ordered `(x, vec F, vec G)` with row-major
/// vectorization, matching the packed parameter covariance convention.
#[derive(Debug, Clone)]
pub struct JointGaussian {
    n: usize,
    m: usize,
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(
        fbar: &DMatrix<f64>,
        gbar: &DMatrix<f64>,
        xbar: &DVector<f64>,
        moments: &MomentSet,
        alpha: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = xbar.len();
        let m = gbar.ncols();
        if fbar.nrows() != n || fbar.ncols() != n || gbar.nrows() != n {
            return Err(Error::dim(
                "JointGaussian::new",
                format!("F {n}x{n}, G {n}x{m}"),
                format!("F {}x{}, G {}x{}", fbar.nrows(), fbar.ncols(), gbar.nrows(), gbar.ncols()),
            ));
        }
        if moments.state_dim() != n || moments.ctrl_dim() != m {
            return Err(Error::dim(
                "JointGaussian::new",
                format!("moments ({n}, {m})"),
                format!("({}, {})", moments.state_dim(), moments.ctrl_dim()),
            ));
        }
        let nf = n * n;
        let ng = n * m;
        let dim = n + nf + ng;

        let mut cov = DMatrix::zeros(dim, dim);
        cov.view_mut((0, 0), (n, n)).copy_from(alpha);
        let params = moments.packed_param_cov();
        cov.view_mut((n, n), (nf + ng, nf + ng)).copy_from(&params);

        let phi = moments.phi_or_zero();
        let psi = moments.psi_or_zero();
        for i in 0..n {
            for p in 0..n {
                for k in 0..n {
                    let v = phi.get(i, p, k);
                    cov[(n + i * n + p, k)] = v;
                    cov[(k, n + i * n + p)] = v;
                }
            }
            for p in 0..m {
                for k in 0..n {
                    let v = psi.get(i, p, k);
                    cov[(n + nf + i * m + p, k)] = v;
                    cov[(k, n + nf + i * m + p)] = v;
                }
            }
        }

        let mut mean = DVector::zeros(dim);
        mean.rows_mut(0, n).copy_from(xbar);
        for i in 0..n {
            for p in 0..n {
                mean[n + i * n + p] = fbar[(i, p)];
            }
            for p in 0..m {
                mean[n + nf + i * m + p] = gbar[(i, p)];
            }
        }

        let factor = psd_factor(&cov)?;
        Ok(JointGaussian { n, m, mean, factor })
    }

    /// One joint draw `(F, G, x)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let draw = sample_mvn(&self.mean, &self.factor, rng);
        let (n, m) = (self.n, self.m);
        let nf = n * n;
        let x = DVector::from_fn(n, |i, _| draw[i]);
        let f = DMatrix::from_fn(n, n, |i, p| draw[n + i * n + p]);
        let g = DMatrix::from_fn(n, m, |i, p| draw[n + nf + i * m + p]);
        (f, g, x)
    }
}
