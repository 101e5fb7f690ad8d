//! System definition, parameter priors, cost specification and scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{psd_factor, sample_mvn};
use crate::tensor::{psd_report, MomentSet, Tensor4};

/// Discrete-time linear system `x(k+1) = F x(k) + G u(k) + w`, `z = H x + v`.
#[derive(Debug, Clone)]
pub struct LdsModel {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub fbar: DMatrix<f64>,
    pub gbar: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
}

impl LdsModel {
    pub fn new(
        fbar: DMatrix<f64>,
        gbar: DMatrix<f64>,
        h: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let n = fbar.nrows();
        let m = gbar.ncols();
        let l = h.nrows();
        if fbar.ncols() != n || gbar.nrows() != n || h.ncols() != n {
            return Err(Error::dim(
                "LdsModel::new",
                format!("F {n}x{n}, G {n}x{m}, H {l}x{n}"),
                format!(
                    "F {}x{}, G {}x{}, H {}x{}",
                    fbar.nrows(),
                    fbar.ncols(),
                    gbar.nrows(),
                    gbar.ncols(),
                    h.nrows(),
                    h.ncols()
                ),
            ));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::dim("LdsModel::new", format!("Q {n}x{n}"), format!("Q {}x{}", q.nrows(), q.ncols())));
        }
        if r.nrows() != l || r.ncols() != l {
            return Err(Error::dim("LdsModel::new", format!("R {l}x{l}"), format!("R {}x{}", r.nrows(), r.ncols())));
        }
        // R must be positive definite, Q PSD
        if r.clone().cholesky().is_none() {
            return Err(Error::NotPsd {
                context: "LdsModel R",
                min_eig: psd_report(&r).min_eig,
            });
        }
        let q_rep = psd_report(&q);
        if !q_rep.is_psd {
            return Err(Error::NotPsd {
                context: "LdsModel Q",
                min_eig: q_rep.min_eig,
            });
        }
        let q_factor = psd_factor(&q)?;
        let r_factor = psd_factor(&r)?;
        Ok(LdsModel {
            n,
            m,
            l,
            fbar,
            gbar,
            h,
            q,
            r,
            horizon,
            q_factor,
            r_factor,
        })
    }

    /// Replace the mean parameter matrices, keeping noise and horizon.
    pub fn with_means(&self, fbar: DMatrix<f64>, gbar: DMatrix<f64>) -> LdsModel {
        let mut out = self.clone();
        out.fbar = fbar;
        out.gbar = gbar;
        out
    }

    /// One truth step `x' = F x + G u + w`, `w ~ N(0, Q)`.
    pub fn step_truth<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        f: &DMatrix<f64>,
        g: &DMatrix<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        f * x + g * u + sample_mvn(&DVector::zeros(self.n), &self.q_factor, rng)
    }

    /// One measurement `z = H x + v`, `v ~ N(0, R)`.
    pub fn measure<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        &self.h * x + sample_mvn(&DVector::zeros(self.l), &self.r_factor, rng)
    }
}

/// Which parameter matrix an entry lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MatrixId {
    F,
    G,
}

/// Placement of one scalar parameter inside `F` or `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub matrix: MatrixId,
    pub row: usize,
    pub col: usize,
}

/// Scalar-parameter prior over the entries of `F` and `G`.
///
/// Exact-known entries carry zero variance (degenerate Gaussian); `P`, the
/// number of inexact parameters, counts the strictly positive variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub theta_mean: Vec<f64>,
    pub theta_var: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub placements: Vec<Placement>,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

impl PriorSpec {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let p = self.placements.len();
        if self.theta_mean.len() != p || self.theta_var.len() != p || self.theta_true.len() != p {
            return Err(Error::Config(format!(
                "theta arrays and placements must have equal length (got {}, {}, {}, {})",
                self.theta_mean.len(),
                self.theta_var.len(),
                self.theta_true.len(),
                p
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for pl in &self.placements {
            let (rows, cols) = match pl.matrix {
                MatrixId::F => (n, n),
                MatrixId::G => (n, m),
            };
            if pl.row >= rows || pl.col >= cols {
                return Err(Error::Config(format!(
                    "placement {:?} out of range for {}x{}",
                    pl, rows, cols
                )));
            }
            if !seen.insert((pl.matrix, pl.row, pl.col)) {
                return Err(Error::Config(format!("overlapping placement {:?}", pl)));
            }
        }
        if self.theta_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("negative parameter variance".into()));
        }
        Ok(())
    }

    /// Number of inexact-known parameters (strictly positive prior variance).
    pub fn num_uncertain(&self) -> usize {
        self.theta_var.iter().filter(|&&v| v > 0.0).count()
    }

    /// Assemble `(F, G)` from a theta vector through the placement map.
    pub fn place(&self, theta: &[f64], n: usize, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if theta.len() != self.placements.len() {
            return Err(Error::dim(
                "PriorSpec::place",
                self.placements.len().to_string(),
                theta.len().to_string(),
            ));
        }
        let mut f = DMatrix::zeros(n, n);
        let mut g = DMatrix::zeros(n, m);
        for (pl, &v) in self.placements.iter().zip(theta) {
            match pl.matrix {
                MatrixId::F => f[(pl.row, pl.col)] = v,
                MatrixId::G => g[(pl.row, pl.col)] = v,
            }
        }
        Ok((f, g))
    }

    /// Prior means and the moment set implied by the (diagonal) theta prior.
    pub fn to_moments(&self, n: usize, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>, MomentSet)> {
        self.validate(n, m)?;
        let (fbar, gbar) = self.place(&self.theta_mean, n, m)?;
        let mut beta = Tensor4::zeros(n, n, n, n);
        let mut gamma = Tensor4::zeros(n, m, n, m);
        for (pl, &var) in self.placements.iter().zip(&self.theta_var) {
            match pl.matrix {
                MatrixId::F => beta.set(pl.row, pl.col, pl.row, pl.col, var),
                MatrixId::G => gamma.set(pl.row, pl.col, pl.row, pl.col, var),
            }
        }
        let moments = MomentSet {
            beta,
            gamma,
            nu: Tensor4::zeros(n, n, n, m),
            phi: None,
            psi: None,
        };
        Ok((fbar, gbar, moments))
    }

    /// Packed-covariance support indices of the uncertain entries, ordered as
    /// `(vec F, vec G)` row-major. Used for restricted log-determinants.
    pub fn packed_support(&self, n: usize, m: usize) -> Vec<usize> {
        self.placements
            .iter()
            .zip(&self.theta_var)
            .filter(|(_, &v)| v > 0.0)
            .map(|(pl, _)| match pl.matrix {
                MatrixId::F => pl.row * n + pl.col,
                MatrixId::G => n * n + pl.row * m + pl.col,
            })
            .collect()
    }

    /// True plant matrices.
    pub fn true_system(&self, n: usize, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.place(&self.theta_true, n, m)
    }
}

/// Companion-form benchmark system: rows 0..N-2 of `F` shift, the last row is
/// `(theta_1..theta_3)`, `G = (theta_4..theta_6)^T`.
pub fn theta_system(theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if theta.len() != 6 {
        return Err(Error::dim("theta_system", "6", theta.len().to_string()));
    }
    let mut f = DMatrix::zeros(3, 3);
    f[(0, 1)] = 1.0;
    f[(1, 2)] = 1.0;
    for j in 0..3 {
        f[(2, j)] = theta[j];
    }
    let g = DMatrix::from_column_slice(3, 1, &theta[3..6]);
    Ok((f, g))
}

/// Quadratic cost: terminal weight, stage weight, control penalty `lambda * I`
/// and a terminal target `rho` weighed through `mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub a_terminal: DMatrix<f64>,
    pub a_stage: DMatrix<f64>,
    pub b_lambda: f64,
    pub rho: DVector<f64>,
    pub mask: Vec<bool>,
    pub horizon: usize,
}

impl CostSpec {
    pub fn b_stage(&self, m: usize) -> DMatrix<f64> {
        DMatrix::identity(m, m) * self.b_lambda
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.a_terminal.nrows() != n || self.a_stage.nrows() != n || self.rho.len() != n || self.mask.len() != n {
            return Err(Error::Config(format!(
                "cost dimensions inconsistent with N={n}"
            )));
        }
        if self.b_lambda <= 0.0 {
            return Err(Error::Config("b_lambda must be positive".into()));
        }
        for rep in [psd_report(&self.a_terminal), psd_report(&self.a_stage)] {
            if !rep.is_psd {
                return Err(Error::NotPsd {
                    context: "CostSpec A matrix",
                    min_eig: rep.min_eig,
                });
            }
        }
        Ok(())
    }

    /// Squared terminal error over the masked components.
    pub fn miss(&self, x_terminal: &DVector<f64>) -> f64 {
        self.rho
            .iter()
            .zip(x_terminal.iter())
            .zip(&self.mask)
            .filter(|(_, &on)| on)
            .map(|((r, x), _)| (x - r).powi(2))
            .sum()
    }
}

/// A complete simulation setup: model, prior, cost and run parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: LdsModel,
    pub prior: PriorSpec,
    pub cost: CostSpec,
    pub probe_sigma: f64,
    pub runs: usize,
    pub sets: usize,
    pub base_seed: u64,
    /// Draw the truth initial state from the prior instead of pinning it at
    /// `x0_mean`.
    pub draw_x0: bool,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.model.n, self.model.m);
        self.prior.validate(n, m)?;
        self.cost.validate(n)?;
        if self.cost.horizon != self.model.horizon {
            return Err(Error::Config("cost horizon differs from model horizon".into()));
        }
        let x0_rep = psd_report(&self.prior.x0_cov);
        if !x0_rep.is_psd {
            return Err(Error::NotPsd {
                context: "x0_cov",
                min_eig: x0_rep.min_eig,
            });
        }
        let (_, _, moments) = self.prior.to_moments(n, m)?;
        let rep = moments.pack_psd_check();
        if !rep.is_psd {
            return Err(Error::NotPsd {
                context: "packed parameter prior",
                min_eig: rep.min_eig,
            });
        }
        Ok(())
    }

    pub fn moments(&self) -> Result<MomentSet> {
        let (_, _, moments) = self.prior.to_moments(self.model.n, self.model.m)?;
        Ok(moments)
    }
}

const BENCH_THETA_MEAN: [f64; 6] = [1.51, -0.89, 0.3, 0.22, 0.57, 0.77];
const BENCH_THETA_VAR: [f64; 6] = [0.1, 0.1, 0.1, 0.01, 0.01, 0.1];
const BENCH_THETA_TRUE: [f64; 6] = [1.8, -1.01, 0.58, 0.3, 0.5, 1.0];

fn benchmark_prior() -> PriorSpec {
    // six inexact parameters plus the two exact-known shift entries of F
    let mut placements = vec![
        Placement { matrix: MatrixId::F, row: 2, col: 0 },
        Placement { matrix: MatrixId::F, row: 2, col: 1 },
        Placement { matrix: MatrixId::F, row: 2, col: 2 },
        Placement { matrix: MatrixId::G, row: 0, col: 0 },
        Placement { matrix: MatrixId::G, row: 1, col: 0 },
        Placement { matrix: MatrixId::G, row: 2, col: 0 },
    ];
    let mut theta_mean = BENCH_THETA_MEAN.to_vec();
    let mut theta_var = BENCH_THETA_VAR.to_vec();
    let mut theta_true = BENCH_THETA_TRUE.to_vec();
    for (row, col) in [(0usize, 1usize), (1, 2)] {
        placements.push(Placement { matrix: MatrixId::F, row, col });
        theta_mean.push(1.0);
        theta_var.push(0.0);
        theta_true.push(1.0);
    }
    PriorSpec {
        theta_mean,
        theta_var,
        theta_true,
        placements,
        x0_mean: DVector::zeros(3),
        x0_cov: DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 10.0, 10.0])),
    }
}

/// Construct one of the builtin scenarios, `"interception"` or `"soft_landing"`.
pub fn build_scenario(name: &str) -> Result<Scenario> {
    let (a_terminal, mask, probe_sigma) = match name {
        "interception" => (
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 0.0, 1.0])),
            vec![false, false, true],
            40.0,
        ),
        "soft_landing" => (DMatrix::identity(3, 3), vec![true, true, true], 10.0),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario '{other}' (expected 'interception' or 'soft_landing')"
            )))
        }
    };
    let horizon = 25;
    let prior = benchmark_prior();
    let (fbar, gbar, _) = prior.to_moments(3, 1)?;
    let model = LdsModel::new(
        fbar,
        gbar,
        DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0]),
        DMatrix::identity(3, 3),
        DMatrix::identity(1, 1),
        horizon,
    )?;
    let cost = CostSpec {
        a_terminal,
        a_stage: DMatrix::zeros(3, 3),
        b_lambda: 1e-4,
        rho: DVector::from_vec(vec![0.0, 0.0, 20.0]),
        mask,
        horizon,
    };
    Ok(Scenario {
        model,
        prior,
        cost,
        probe_sigma,
        runs: 1000,
        sets: 3,
        base_seed: 42,
        draw_x0: false,
    })
}

// ---------------------------------------------------------------------------
// File representation (JSON). Arrays are row-major.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostFile {
    pub a_terminal: Vec<Vec<f64>>,
    pub a_stage: Vec<Vec<f64>>,
    pub b_lambda: f64,
    pub rho: Vec<f64>,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacementFile {
    pub matrix: String,
    pub row: usize,
    pub col: usize,
}

/// On-disk scenario schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub n: usize,
    pub m: usize,
    pub l: usize,
    pub horizon: usize,
    pub theta_mean: Vec<f64>,
    pub theta_var: Vec<f64>,
    pub theta_true: Vec<f64>,
    pub placements: Vec<PlacementFile>,
    pub x0_mean: Vec<f64>,
    pub x0_cov: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub cost: CostFile,
    pub probe_sigma: f64,
    pub runs: usize,
    pub sets: usize,
    pub seed: u64,
    #[serde(default)]
    pub draw_x0: bool,
}

fn rows_to_matrix(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::Config(format!("{name}: empty matrix")));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Config(format!("{name}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

impl ScenarioFile {
    pub fn from_scenario(s: &Scenario) -> Self {
        ScenarioFile {
            n: s.model.n,
            m: s.model.m,
            l: s.model.l,
            horizon: s.model.horizon,
            theta_mean: s.prior.theta_mean.clone(),
            theta_var: s.prior.theta_var.clone(),
            theta_true: s.prior.theta_true.clone(),
            placements: s
                .prior
                .placements
                .iter()
                .map(|p| PlacementFile {
                    matrix: match p.matrix {
                        MatrixId::F => "F".into(),
                        MatrixId::G => "G".into(),
                    },
                    row: p.row,
                    col: p.col,
                })
                .collect(),
            x0_mean: s.prior.x0_mean.iter().cloned().collect(),
            x0_cov: matrix_to_rows(&s.prior.x0_cov),
            q: matrix_to_rows(&s.model.q),
            r: matrix_to_rows(&s.model.r),
            h: matrix_to_rows(&s.model.h),
            cost: CostFile {
                a_terminal: matrix_to_rows(&s.cost.a_terminal),
                a_stage: matrix_to_rows(&s.cost.a_stage),
                b_lambda: s.cost.b_lambda,
                rho: s.cost.rho.iter().cloned().collect(),
                mask: s.cost.mask.clone(),
            },
            probe_sigma: s.probe_sigma,
            runs: s.runs,
            sets: s.sets,
            seed: s.base_seed,
            draw_x0: s.draw_x0,
        }
    }

    /// Build and validate a `Scenario`, collecting every violated invariant.
    pub fn into_scenario(self) -> std::result::Result<Scenario, Vec<String>> {
        let mut errors = Vec::new();
        let (n, m, l) = (self.n, self.m, self.l);

        let mut placements = Vec::new();
        for p in &self.placements {
            match p.matrix.as_str() {
                "F" => placements.push(Placement { matrix: MatrixId::F, row: p.row, col: p.col }),
                "G" => placements.push(Placement { matrix: MatrixId::G, row: p.row, col: p.col }),
                other => errors.push(format!("placements: matrix must be \"F\" or \"G\", got \"{other}\"")),
            }
        }

        let mat = |rows: &[Vec<f64>], name: &str, er: &mut Vec<String>| match rows_to_matrix(rows, name) {
            Ok(m) => m,
            Err(e) => {
                er.push(e.to_string());
                DMatrix::zeros(1, 1)
            }
        };
        let x0_cov = mat(&self.x0_cov, "x0_cov", &mut errors);
        let q = mat(&self.q, "q", &mut errors);
        let r = mat(&self.r, "r", &mut errors);
        let h = mat(&self.h, "h", &mut errors);
        let a_terminal = mat(&self.cost.a_terminal, "cost.a_terminal", &mut errors);
        let a_stage = mat(&self.cost.a_stage, "cost.a_stage", &mut errors);

        if self.x0_mean.len() != n {
            errors.push(format!("x0_mean: expected length {n}, got {}", self.x0_mean.len()));
        }
        if self.cost.rho.len() != n {
            errors.push(format!("cost.rho: expected length {n}, got {}", self.cost.rho.len()));
        }
        if self.cost.mask.len() != n {
            errors.push(format!("cost.mask: expected length {n}, got {}", self.cost.mask.len()));
        }
        if !psd_report(&x0_cov).is_psd {
            errors.push("x0_cov: not positive semidefinite".into());
        }

        let prior = PriorSpec {
            theta_mean: self.theta_mean,
            theta_var: self.theta_var,
            theta_true: self.theta_true,
            placements,
            x0_mean: DVector::from_vec(if self.x0_mean.len() == n {
                self.x0_mean
            } else {
                vec![0.0; n]
            }),
            x0_cov,
        };
        if let Err(e) = prior.validate(n, m) {
            errors.push(e.to_string());
        }

        let model = match LdsModel::new(
            prior
                .place(&prior.theta_mean, n, m)
                .map(|(f, _)| f)
                .unwrap_or_else(|_| DMatrix::zeros(n, n)),
            prior
                .place(&prior.theta_mean, n, m)
                .map(|(_, g)| g)
                .unwrap_or_else(|_| DMatrix::zeros(n, m)),
            h,
            q,
            r,
            self.horizon,
        ) {
            Ok(model) => {
                if model.l != l {
                    errors.push(format!("h: expected {l} rows, got {}", model.l));
                }
                model
            }
            Err(e) => {
                errors.push(e.to_string());
                return Err(errors);
            }
        };

        let cost = CostSpec {
            a_terminal,
            a_stage,
            b_lambda: self.cost.b_lambda,
            rho: DVector::from_vec(if self.cost.rho.len() == n {
                self.cost.rho
            } else {
                vec![0.0; n]
            }),
            mask: if self.cost.mask.len() == n {
                self.cost.mask
            } else {
                vec![true; n]
            },
            horizon: self.horizon,
        };
        if let Err(e) = cost.validate(n) {
            errors.push(e.to_string());
        }

        let scenario = Scenario {
            model,
            prior,
            cost,
            probe_sigma: self.probe_sigma,
            runs: self.runs,
            sets: self.sets,
            base_seed: self.seed,
            draw_x0: self.draw_x0,
        };
        if errors.is_empty() {
            if let Err(e) = scenario.validate() {
                errors.push(e.to_string());
            }
        }
        if errors.is_empty() {
            Ok(scenario)
        } else {
            Err(errors)
        }
    }
}

/// Load a scenario from a builtin name or a JSON file path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if name_or_path == "interception" || name_or_path == "soft_landing" {
        return build_scenario(name_or_path);
    }
    let text = std::fs::read_to_string(name_or_path).map_err(|source| Error::Io {
        path: name_or_path.to_string(),
        source,
    })?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{name_or_path}: parse error at line {}: {}", e.line(), e)))?;
    file.into_scenario()
        .map_err(|errs| Error::Config(format!("{name_or_path}: {}", errs.join("; "))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn theta_system_benchmark_values() {
        let (f, g) = theta_system(&BENCH_THETA_MEAN).unwrap();
        assert_eq!(f[(0, 1)], 1.0);
        assert_eq!(f[(1, 2)], 1.0);
        assert_eq!(f[(2, 0)], 1.51);
        assert_eq!(f[(2, 1)], -0.89);
        assert_eq!(f[(2, 2)], 0.3);
        assert_eq!(g[(0, 0)], 0.22);
        assert_eq!(g[(2, 0)], 0.77);

        let (f0, g0) = theta_system(&[0.0; 6]).unwrap();
        assert!(f0.row(2).iter().all(|&v| v == 0.0));
        assert!(g0.iter().all(|&v| v == 0.0));

        let (ft, gt) = theta_system(&BENCH_THETA_TRUE).unwrap();
        assert_eq!(ft[(2, 0)], 1.8);
        assert_eq!(gt[(2, 0)], 1.0);

        assert!(theta_system(&[0.0; 5]).is_err());
    }

    #[test]
    fn theta_system_linear_on_placed_slots() {
        let a = BENCH_THETA_MEAN;
        let b = BENCH_THETA_TRUE;
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x + 3.0 * y).collect();
        let (fc, gc) = theta_system(&combo).unwrap();
        let (fa, ga) = theta_system(&a).unwrap();
        let (fb, gb) = theta_system(&b).unwrap();
        for j in 0..3 {
            assert_relative_eq!(fc[(2, j)], 2.0 * fa[(2, j)] + 3.0 * fb[(2, j)], epsilon = 1e-12);
            assert_relative_eq!(gc[(j, 0)], 2.0 * ga[(j, 0)] + 3.0 * gb[(j, 0)], epsilon = 1e-12);
        }
    }

    #[test]
    fn prior_to_moments_benchmark_packed_diagonal() {
        let prior = benchmark_prior();
        let (fbar, gbar, moments) = prior.to_moments(3, 1).unwrap();
        let (f6, g6) = theta_system(&BENCH_THETA_MEAN).unwrap();
        assert_relative_eq!(fbar, f6, epsilon = 1e-15);
        assert_relative_eq!(gbar, g6, epsilon = 1e-15);

        let packed = moments.packed_param_cov();
        assert_eq!(packed.nrows(), 12);
        // diagonal with the six prior variances on placed slots
        let mut expected = DMatrix::zeros(12, 12);
        expected[(2 * 3 + 0, 2 * 3 + 0)] = 0.1;
        expected[(2 * 3 + 1, 2 * 3 + 1)] = 0.1;
        expected[(2 * 3 + 2, 2 * 3 + 2)] = 0.1;
        expected[(9, 9)] = 0.01;
        expected[(10, 10)] = 0.01;
        expected[(11, 11)] = 0.1;
        assert_relative_eq!(packed, expected, epsilon = 1e-15);
        let rep = moments.pack_psd_check();
        assert!(rep.is_psd);
        assert!(rep.min_eig.abs() < 1e-12, "structural zeros give min eig 0");
        assert_eq!(prior.num_uncertain(), 6);
    }

    #[test]
    fn prior_to_moments_zero_and_single() {
        let prior = PriorSpec {
            theta_mean: vec![0.5],
            theta_var: vec![0.0],
            theta_true: vec![0.5],
            placements: vec![Placement { matrix: MatrixId::F, row: 0, col: 0 }],
            x0_mean: DVector::zeros(1),
            x0_cov: DMatrix::zeros(1, 1),
        };
        let (_, _, m) = prior.to_moments(1, 1).unwrap();
        assert!(m.is_zero());

        let prior = PriorSpec {
            theta_mean: vec![1.0],
            theta_var: vec![0.1],
            theta_true: vec![1.0],
            placements: vec![Placement { matrix: MatrixId::F, row: 2, col: 0 }],
            x0_mean: DVector::zeros(3),
            x0_cov: DMatrix::zeros(3, 3),
        };
        let (_, _, m) = prior.to_moments(3, 1).unwrap();
        assert_eq!(m.beta.get(2, 0, 2, 0), 0.1);
        let mut rest = 0.0;
        let packed = m.packed_param_cov();
        for v in packed.iter() {
            rest += v.abs();
        }
        assert_relative_eq!(rest, 0.1);
    }

    #[test]
    fn overlapping_placements_rejected() {
        let prior = PriorSpec {
            theta_mean: vec![1.0, 2.0],
            theta_var: vec![0.1, 0.1],
            theta_true: vec![1.0, 2.0],
            placements: vec![
                Placement { matrix: MatrixId::F, row: 0, col: 0 },
                Placement { matrix: MatrixId::F, row: 0, col: 0 },
            ],
            x0_mean: DVector::zeros(2),
            x0_cov: DMatrix::zeros(2, 2),
        };
        assert!(prior.validate(2, 1).is_err());
    }

    #[test]
    fn step_truth_deterministic_part() {
        let s = build_scenario("interception").unwrap();
        let model = LdsModel::new(
            s.model.fbar.clone(),
            s.model.gbar.clone(),
            s.model.h.clone(),
            DMatrix::zeros(3, 3),
            DMatrix::identity(1, 1),
            25,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let u = DVector::zeros(1);
        let next = model.step_truth(&x, &u, &model.fbar.clone(), &model.gbar.clone(), &mut rng);
        assert_relative_eq!(next, DVector::from_vec(vec![0.0, 0.0, 1.51]), epsilon = 1e-12);

        let zero = model.step_truth(
            &DVector::zeros(3),
            &u,
            &model.fbar.clone(),
            &model.gbar.clone(),
            &mut rng,
        );
        assert_relative_eq!(zero, DVector::zeros(3), epsilon = 1e-12);
    }

    #[test]
    fn step_truth_noise_mean() {
        let s = build_scenario("interception").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let u = DVector::from_element(1, 0.5);
        let f = s.model.fbar.clone();
        let g = s.model.gbar.clone();
        let runs = 100_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..runs {
            acc += s.model.step_truth(&x, &u, &f, &g, &mut rng);
        }
        acc /= runs as f64;
        let expected = &f * &x + &g * &u;
        let se = 5.0 / (runs as f64).sqrt(); // unit Q
        for i in 0..3 {
            assert!((acc[i] - expected[i]).abs() < se, "component {i}");
        }
    }

    #[test]
    fn measure_selector_and_noise() {
        let s = build_scenario("interception").unwrap();
        let noiseless = LdsModel::new(
            s.model.fbar.clone(),
            s.model.gbar.clone(),
            s.model.h.clone(),
            s.model.q.clone(),
            DMatrix::from_element(1, 1, 1e-300),
            25,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = noiseless.measure(&DVector::from_vec(vec![0.0, 0.0, 5.0]), &mut rng);
        assert_relative_eq!(z[0], 5.0, epsilon = 1e-9);

        let runs = 100_000;
        let mut acc = 0.0;
        for _ in 0..runs {
            let z = s.model.measure(&DVector::zeros(3), &mut rng);
            acc += z[0] * z[0];
        }
        let var = acc / runs as f64;
        let bound = 5.0 * (2.0 / runs as f64).sqrt();
        assert!((var - 1.0).abs() < bound);
    }

    #[test]
    fn builtin_scenarios() {
        let s = build_scenario("interception").unwrap();
        assert_eq!(s.model.horizon, 25);
        assert_eq!(s.cost.b_lambda, 1e-4);
        assert_eq!(s.probe_sigma, 40.0);
        assert_eq!(s.cost.rho[2], 20.0);
        s.validate().unwrap();

        let s = build_scenario("soft_landing").unwrap();
        assert_eq!(s.probe_sigma, 10.0);
        assert_eq!(s.cost.rho, DVector::from_vec(vec![0.0, 0.0, 20.0]));
        assert!(s.cost.mask.iter().all(|&b| b));
        s.validate().unwrap();

        assert!(build_scenario("lunar").is_err());
    }

    #[test]
    fn scenario_file_round_trip() {
        let s = build_scenario("soft_landing").unwrap();
        let file = ScenarioFile::from_scenario(&s);
        let json = serde_json::to_string_pretty(&file).unwrap();
        let parsed: ScenarioFile = serde_json::from_str(&json).unwrap();
        let back = parsed.into_scenario().unwrap();
        assert_relative_eq!(back.model.fbar, s.model.fbar, epsilon = 1e-15);
        assert_relative_eq!(back.model.q, s.model.q, epsilon = 1e-15);
        assert_relative_eq!(back.cost.a_terminal, s.cost.a_terminal, epsilon = 1e-15);
        assert_eq!(back.prior, s.prior);
        assert_eq!(back.base_seed, s.base_seed);
    }

    #[test]
    fn scenario_file_bad_cov_reports_field() {
        let s = build_scenario("interception").unwrap();
        let mut file = ScenarioFile::from_scenario(&s);
        file.x0_cov[0][0] = -5.0;
        let errs = file.into_scenario().unwrap_err();
        assert!(errs.iter().any(|e| e.contains("x0_cov")), "{errs:?}");
    }

    #[test]
    fn non_benchmark_dimensions_accepted() {
        let prior = PriorSpec {
            theta_mean: vec![0.9, 1.0],
            theta_var: vec![0.05, 0.0],
            theta_true: vec![0.8, 1.0],
            placements: vec![
                Placement { matrix: MatrixId::F, row: 0, col: 0 },
                Placement { matrix: MatrixId::G, row: 1, col: 0 },
            ],
            x0_mean: DVector::zeros(2),
            x0_cov: DMatrix::identity(2, 2),
        };
        let (fbar, gbar, _) = prior.to_moments(2, 1).unwrap();
        let model = LdsModel::new(
            fbar,
            gbar,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            10,
        )
        .unwrap();
        let cost = CostSpec {
            a_terminal: DMatrix::identity(2, 2),
            a_stage: DMatrix::zeros(2, 2),
            b_lambda: 0.01,
            rho: DVector::zeros(2),
            mask: vec![true, true],
            horizon: 10,
        };
        let scenario = Scenario {
            model,
            prior,
            cost,
            probe_sigma: 1.0,
            runs: 10,
            sets: 1,
            base_seed: 0,
            draw_x0: false,
        };
        scenario.validate().unwrap();
    }
}
