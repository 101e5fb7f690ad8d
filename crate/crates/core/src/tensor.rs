//! Moment tensors of random parameter matrices and their contraction algebra.
//!
//! Storage convention: `Tensor4[i,p,j,q] = Cov(A[i,p], B[j,q])` over matrix
//! entries and `Tensor3[i,p,k] = Cov(A[i,p], x[k])`. With the Euclidean metric
//! every mixed-index expression of the underlying theory reduces to one of the
//! contractions below; conjugate tensors are index permutations and are never
//! stored.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative eigenvalue tolerance for PSD checks: `min_eig >= -PSD_TOL * trace`.
pub const PSD_TOL: f64 = 1e-9;

/// Dense 4-index array, `T[i,p,j,q]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

/// Dense 3-index array, `T[i,p,k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(d0: usize, d1: usize, d2: usize, d3: usize) -> Self {
        Tensor4 {
            dims: [d0, d1, d2, d3],
            data: vec![0.0; d0 * d1 * d2 * d3],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    fn idx(&self, i: usize, p: usize, j: usize, q: usize) -> usize {
        ((i * self.dims[1] + p) * self.dims[2] + j) * self.dims[3] + q
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize, j: usize, q: usize) -> f64 {
        self.data[self.idx(i, p, j, q)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, p: usize, j: usize, q: usize, v: f64) {
        let k = self.idx(i, p, j, q);
        self.data[k] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Tensor4 {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Enforce the self-covariance symmetry `T[i,p,j,q] = T[j,q,i,p]` exactly.
    pub fn symmetrized(&self) -> Result<Tensor4> {
        let [d0, d1, d2, d3] = self.dims;
        if d0 != d2 || d1 != d3 {
            return Err(Error::dim(
                "Tensor4::symmetrized",
                "self-covariance index ranges",
                format!("{:?}", self.dims),
            ));
        }
        let mut out = self.clone();
        for i in 0..d0 {
            for p in 0..d1 {
                for j in 0..d0 {
                    for q in 0..d1 {
                        let v = 0.5 * (self.get(i, p, j, q) + self.get(j, q, i, p));
                        out.set(i, p, j, q, v);
                    }
                }
            }
        }
        Ok(out)
    }

    /// `Out[i,j] = sum_{p,q} T[i,p,j,q] W[p,q]`, i.e. `E[dA * W * dB^T]`.
    pub fn quad_contract(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let [d0, d1, d2, d3] = self.dims;
        if w.nrows() != d1 || w.ncols() != d3 {
            return Err(Error::dim(
                "quad_contract",
                format!("{}x{}", d1, d3),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        let mut out = DMatrix::zeros(d0, d2);
        for i in 0..d0 {
            for j in 0..d2 {
                let mut acc = 0.0;
                for p in 0..d1 {
                    for q in 0..d3 {
                        acc += self.get(i, p, j, q) * w[(p, q)];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// `Out[p,q] = sum_{i,j} T[i,p,j,q] W[i,j]`, i.e. `E[dA^T * W * dB]`.
    pub fn dual_contract(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let [d0, d1, d2, d3] = self.dims;
        if w.nrows() != d0 || w.ncols() != d2 {
            return Err(Error::dim(
                "dual_contract",
                format!("{}x{}", d0, d2),
                format!("{}x{}", w.nrows(), w.ncols()),
            ));
        }
        let mut out = DMatrix::zeros(d1, d3);
        for p in 0..d1 {
            for q in 0..d3 {
                let mut acc = 0.0;
                for i in 0..d0 {
                    for j in 0..d2 {
                        acc += self.get(i, p, j, q) * w[(i, j)];
                    }
                }
                out[(p, q)] = acc;
            }
        }
        Ok(out)
    }

    /// `Out[i,j] = sum_{p,q} T[i,p,j,q] a[p] b[q] = Cov(dA*a, dB*b)`.
    pub fn bilinear_contract(&self, a: &DVector<f64>, b: &DVector<f64>) -> Result<DMatrix<f64>> {
        let [d0, d1, d2, d3] = self.dims;
        if a.len() != d1 || b.len() != d3 {
            return Err(Error::dim(
                "bilinear_contract",
                format!("({}, {})", d1, d3),
                format!("({}, {})", a.len(), b.len()),
            ));
        }
        let mut out = DMatrix::zeros(d0, d2);
        for i in 0..d0 {
            for j in 0..d2 {
                let mut acc = 0.0;
                for p in 0..d1 {
                    for q in 0..d3 {
                        acc += self.get(i, p, j, q) * a[p] * b[q];
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }

    /// Swap the entry pairs: `Out[i,p,j,q] = T[j,q,i,p]`. Turns `Cov(A,B)` into `Cov(B,A)`.
    pub fn transposed_pairs(&self) -> Tensor4 {
        let [d0, d1, d2, d3] = self.dims;
        let mut out = Tensor4::zeros(d2, d3, d0, d1);
        for i in 0..d2 {
            for p in 0..d3 {
                for j in 0..d0 {
                    for q in 0..d1 {
                        out.set(i, p, j, q, self.get(j, q, i, p));
                    }
                }
            }
        }
        out
    }

    /// Pack the entry covariance into a square matrix over vectorized (row-major)
    /// entries: `M[(i*d1+p),(j*d1+q)] = T[i,p,j,q]`. Self-covariance instances only.
    pub fn packed(&self) -> Result<DMatrix<f64>> {
        let [d0, d1, d2, d3] = self.dims;
        if d0 != d2 || d1 != d3 {
            return Err(Error::dim(
                "Tensor4::packed",
                "self-covariance index ranges",
                format!("{:?}", self.dims),
            ));
        }
        let side = d0 * d1;
        let mut out = DMatrix::zeros(side, side);
        for i in 0..d0 {
            for p in 0..d1 {
                for j in 0..d0 {
                    for q in 0..d1 {
                        out[(i * d1 + p, j * d1 + q)] = self.get(i, p, j, q);
                    }
                }
            }
        }
        Ok(out)
    }
}

impl Tensor3 {
    pub fn zeros(d0: usize, d1: usize, d2: usize) -> Self {
        Tensor3 {
            dims: [d0, d1, d2],
            data: vec![0.0; d0 * d1 * d2],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    fn idx(&self, i: usize, p: usize, k: usize) -> usize {
        (i * self.dims[1] + p) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize, k: usize) -> f64 {
        self.data[self.idx(i, p, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, p: usize, k: usize, v: f64) {
        let n = self.idx(i, p, k);
        self.data[n] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `Out[i,k] = sum_p T[i,p,k] v[p] = Cov((dA*v)[i], x[k])`.
    pub fn cross_vec_contract(&self, v: &DVector<f64>) -> Result<DMatrix<f64>> {
        let [d0, d1, d2] = self.dims;
        if v.len() != d1 {
            return Err(Error::dim(
                "cross_vec_contract",
                d1.to_string(),
                v.len().to_string(),
            ));
        }
        let mut out = DMatrix::zeros(d0, d2);
        for i in 0..d0 {
            for k in 0..d2 {
                let mut acc = 0.0;
                for p in 0..d1 {
                    acc += self.get(i, p, k) * v[p];
                }
                out[(i, k)] = acc;
            }
        }
        Ok(out)
    }

    /// `v[i] = sum_p T[i,p,p] = E[(dA * dx)[i]]`. Requires equal trailing ranges.
    pub fn trace_pair(&self) -> Result<DVector<f64>> {
        let [d0, d1, d2] = self.dims;
        if d1 != d2 {
            return Err(Error::dim(
                "trace_pair",
                format!("trailing ranges equal ({})", d1),
                format!("({}, {})", d1, d2),
            ));
        }
        let mut out = DVector::zeros(d0);
        for i in 0..d0 {
            let mut acc = 0.0;
            for p in 0..d1 {
                acc += self.get(i, p, p);
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// `Out[i,j] = sum_{p,q} Ta[i,p,q] Tb[j,q,p]` (the Isserlis pairing term).
    pub fn gram3_perm(&self, other: &Tensor3) -> Result<DMatrix<f64>> {
        let [a0, a1, a2] = self.dims;
        let [b0, b1, b2] = other.dims;
        if a1 != b2 || a2 != b1 {
            return Err(Error::dim(
                "gram3_perm",
                format!("({}, {}) against permuted", a1, a2),
                format!("({}, {})", b1, b2),
            ));
        }
        let mut out = DMatrix::zeros(a0, b0);
        for i in 0..a0 {
            for j in 0..b0 {
                let mut acc = 0.0;
                for p in 0..a1 {
                    for q in 0..a2 {
                        acc += self.get(i, p, q) * other.get(j, q, p);
                    }
                }
                out[(i, j)] = acc;
            }
        }
        Ok(out)
    }
}

/// Outcome of a PSD probe. Reports, never fails.
#[derive(Debug, Clone, Copy)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eig: f64,
}

/// Eigenvalue check of a symmetric matrix against `-PSD_TOL * trace`.
pub fn psd_report(m: &DMatrix<f64>) -> PsdReport {
    if m.nrows() == 0 {
        return PsdReport {
            is_psd: true,
            min_eig: 0.0,
        };
    }
    let sym = 0.5 * (m + m.transpose());
    let eigs = sym.symmetric_eigenvalues();
    let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
    let trace = sym.trace().abs();
    PsdReport {
        is_psd: min_eig >= -PSD_TOL * trace.max(1e-300),
        min_eig,
    }
}

/// Uncertainty block of the parameter set plus optional state cross moments.
///
/// `beta = Var(F)` is `(N,N,N,N)`, `gamma = Var(G)` is `(N,M,N,M)`,
/// `nu = Cov(F,G)` is `(N,N,N,M)`; `phi = Cov(F,x)` is `(N,N,N)`,
/// `psi = Cov(G,x)` is `(N,M,N)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub beta: Tensor4,
    pub gamma: Tensor4,
    pub nu: Tensor4,
    pub phi: Option<Tensor3>,
    pub psi: Option<Tensor3>,
}

impl MomentSet {
    pub fn zeros(n: usize, m: usize) -> Self {
        MomentSet {
            beta: Tensor4::zeros(n, n, n, n),
            gamma: Tensor4::zeros(n, m, n, m),
            nu: Tensor4::zeros(n, n, n, m),
            phi: None,
            psi: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.beta.dims()[0]
    }

    pub fn ctrl_dim(&self) -> usize {
        self.gamma.dims()[1]
    }

    pub fn is_zero(&self) -> bool {
        self.beta.is_zero()
            && self.gamma.is_zero()
            && self.nu.is_zero()
            && self.phi.as_ref().map_or(true, Tensor3::is_zero)
            && self.psi.as_ref().map_or(true, Tensor3::is_zero)
    }

    pub fn phi_or_zero(&self) -> Tensor3 {
        let n = self.state_dim();
        self.phi.clone().unwrap_or_else(|| Tensor3::zeros(n, n, n))
    }

    pub fn psi_or_zero(&self) -> Tensor3 {
        let (n, m) = (self.state_dim(), self.ctrl_dim());
        self.psi.clone().unwrap_or_else(|| Tensor3::zeros(n, m, n))
    }

    /// Scale the parameter block `{beta, gamma, nu}` only; cross moments dropped.
    pub fn scaled_xi(&self, factor: f64) -> MomentSet {
        MomentSet {
            beta: self.beta.scaled(factor),
            gamma: self.gamma.scaled(factor),
            nu: self.nu.scaled(factor),
            phi: None,
            psi: None,
        }
    }

    /// Joint covariance of `(vec F, vec G)` over row-major vectorized entries,
    /// side `N*N + N*M`.
    pub fn packed_param_cov(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let m = self.ctrl_dim();
        let nf = n * n;
        let ng = n * m;
        let mut out = DMatrix::zeros(nf + ng, nf + ng);
        for i in 0..n {
            for p in 0..n {
                for j in 0..n {
                    for q in 0..n {
                        out[(i * n + p, j * n + q)] = self.beta.get(i, p, j, q);
                    }
                    for q in 0..m {
                        let v = self.nu.get(i, p, j, q);
                        out[(i * n + p, nf + j * m + q)] = v;
                        out[(nf + j * m + q, i * n + p)] = v;
                    }
                }
            }
        }
        for i in 0..n {
            for p in 0..m {
                for j in 0..n {
                    for q in 0..m {
                        out[(nf + i * m + p, nf + j * m + q)] = self.gamma.get(i, p, j, q);
                    }
                }
            }
        }
        out
    }

    /// PSD status of the packed joint parameter covariance.
    pub fn pack_psd_check(&self) -> PsdReport {
        psd_report(&self.packed_param_cov())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar4(v: f64) -> Tensor4 {
        let mut t = Tensor4::zeros(1, 1, 1, 1);
        t.set(0, 0, 0, 0, v);
        t
    }

    #[test]
    fn quad_contract_zero_and_scalar() {
        let t = Tensor4::zeros(2, 3, 2, 3);
        let w = DMatrix::from_element(3, 3, 1.5);
        assert!(t.quad_contract(&w).unwrap().iter().all(|&v| v == 0.0));

        let t = scalar4(0.04);
        let w = DMatrix::from_element(1, 1, 5.0);
        assert_relative_eq!(t.quad_contract(&w).unwrap()[(0, 0)], 0.2);
    }

    #[test]
    fn dual_contract_scalar() {
        let t = scalar4(0.04);
        let w = DMatrix::from_element(1, 1, 2.0);
        assert_relative_eq!(t.dual_contract(&w).unwrap()[(0, 0)], 0.08);
    }

    #[test]
    fn bilinear_contract_scalar() {
        let t = scalar4(0.02);
        let a = DVector::from_element(1, 2.0);
        let b = DVector::from_element(1, 3.0);
        assert_relative_eq!(t.bilinear_contract(&a, &b).unwrap()[(0, 0)], 0.12);
        let z = Tensor4::zeros(1, 1, 1, 1);
        assert_eq!(z.bilinear_contract(&a, &b).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn cross_vec_and_trace_pair() {
        let mut t = Tensor3::zeros(1, 1, 1);
        t.set(0, 0, 0, 0.1);
        let v = DVector::from_element(1, 2.0);
        assert_relative_eq!(t.cross_vec_contract(&v).unwrap()[(0, 0)], 0.2);
        assert_relative_eq!(t.trace_pair().unwrap()[0], 0.1);

        let mut t = Tensor3::zeros(2, 2, 2);
        t.set(0, 0, 0, 0.1);
        t.set(0, 1, 1, 0.2);
        let tp = t.trace_pair().unwrap();
        assert_relative_eq!(tp[0], 0.3);
        assert_relative_eq!(tp[1], 0.0);
    }

    #[test]
    fn trace_pair_range_mismatch() {
        let t = Tensor3::zeros(2, 1, 2); // psi-shaped with M != N
        assert!(t.trace_pair().is_err());
    }

    #[test]
    fn gram3_perm_scalar() {
        let mut t = Tensor3::zeros(1, 1, 1);
        t.set(0, 0, 0, 0.1);
        assert_relative_eq!(t.gram3_perm(&t).unwrap()[(0, 0)], 0.01, epsilon = 1e-15);
        let z = Tensor3::zeros(2, 2, 2);
        assert!(z.gram3_perm(&z).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psd_report_diagonal_and_negative() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let rep = psd_report(&d);
        assert!(rep.is_psd);

        let mut bad = DMatrix::identity(2, 2);
        bad[(1, 1)] = -1.0;
        let rep = psd_report(&bad);
        assert!(!rep.is_psd);
        assert_relative_eq!(rep.min_eig, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn pack_round_trip_exact() {
        let mut t = Tensor4::zeros(2, 2, 2, 2);
        let mut c = 0.0;
        for i in 0..2 {
            for p in 0..2 {
                for j in 0..2 {
                    for q in 0..2 {
                        c += 1.0;
                        t.set(i, p, j, q, c);
                    }
                }
            }
        }
        let packed = t.packed().unwrap();
        for i in 0..2 {
            for p in 0..2 {
                for j in 0..2 {
                    for q in 0..2 {
                        assert_eq!(packed[(i * 2 + p, j * 2 + q)], t.get(i, p, j, q));
                    }
                }
            }
        }
    }

    #[test]
    fn contraction_dimension_errors() {
        let t = Tensor4::zeros(2, 3, 2, 3);
        let w = DMatrix::zeros(2, 2);
        assert!(t.quad_contract(&w).is_err());
        assert!(t.dual_contract(&DMatrix::zeros(3, 3)).is_err());
    }
}
