//! Monte Carlo evaluation harness: estimator/controller variants, episode
//! simulation, replicated sets with common random numbers, and CSV/JSON
//! result export.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::control::{
    control_at, solve_cautious, solve_ce, solve_dual_auto, GainSchedule, XiSchedule,
};
use crate::error::{Error, Result};
use crate::estimation::{
    adequacy, predict_irreducible, predict_reducible, update_irreducible, update_reducible,
    IrreducibleState, ReducibleState,
};
use crate::gaussian::{psd_factor, sample_mvn};
use crate::info::restricted_logdet;
use crate::model::Scenario;
use crate::tensor::MomentSet;

/// Spacing between the seeds of consecutive replication sets.
const SET_SEED_STRIDE: u64 = 1_000_003;

/// State-norm threshold beyond which an episode counts as diverged.
const DIVERGE_NORM: f64 = 1e12;

/// Estimator level (`sys`) and controller level (`cnt`) of one variant.
///
/// `sys`: 0 = mean-parameter Kalman filter, 1 = uncertainty-aware covariance
/// propagation without learning, 2 = joint state/parameter estimation.
/// `cnt`: 0 = certainty-equivalent, 1 = cautious, 2 = dual.
/// `exact_params` replaces the true plant by the prior mean (matched model);
/// it always runs Kalman estimation with certainty-equivalent control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub sys: u8,
    pub cnt: u8,
    pub exact_params: bool,
}

impl Variant {
    pub fn exact() -> Self {
        Variant {
            sys: 0,
            cnt: 0,
            exact_params: true,
        }
    }

    pub fn pair(sys: u8, cnt: u8) -> Self {
        Variant {
            sys,
            cnt,
            exact_params: false,
        }
    }

    pub fn label(&self) -> String {
        if self.exact_params {
            "exact".to_string()
        } else {
            format!("sys{}_cnt{}", self.sys, self.cnt)
        }
    }
}

/// The variant grid evaluated by the standard benchmark.
pub fn default_variants() -> Vec<Variant> {
    vec![
        Variant::exact(),
        Variant::pair(0, 0),
        Variant::pair(1, 0),
        Variant::pair(2, 0),
        Variant::pair(1, 1),
        Variant::pair(2, 1),
        Variant::pair(2, 2),
    ]
}

/// Per-step record of one episode.
#[derive(Debug, Clone, Serialize)]
pub struct StepTrace {
    pub k: usize,
    pub u: Vec<f64>,
    pub was_probe: bool,
    pub lambda: f64,
    pub i_cum: f64,
    pub adequacy_stat: f64,
    pub adequacy_score: f64,
    pub param_err: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub cost: f64,
    pub miss: f64,
    pub control_energy: f64,
    pub probes: usize,
    /// Step indices at which a probing input replaced the nominal control.
    pub probe_steps: Vec<usize>,
    pub diverged: bool,
    pub trace: Option<Vec<StepTrace>>,
}

/// Aggregate over one replication set of one variant.
#[derive(Debug, Clone, Serialize)]
pub struct VariantStats {
    pub variant: String,
    pub set: usize,
    pub runs: usize,
    pub excluded: usize,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub cost_max: f64,
    pub miss_mean: f64,
    pub miss_std: f64,
    pub miss_max: f64,
    /// Fraction of included episodes probing at each step.
    pub probe_freq: Vec<f64>,
}

enum Belief {
    Irreducible {
        state: IrreducibleState,
        xi: MomentSet,
        fbar: DMatrix<f64>,
        gbar: DMatrix<f64>,
    },
    Reducible(ReducibleState),
}

impl Belief {
    fn xbar(&self) -> &DVector<f64> {
        match self {
            Belief::Irreducible { state, .. } => &state.xbar,
            Belief::Reducible(state) => &state.xbar,
        }
    }

    fn alpha(&self) -> &DMatrix<f64> {
        match self {
            Belief::Irreducible { state, .. } => &state.alpha,
            Belief::Reducible(state) => &state.alpha,
        }
    }

    fn predict(&mut self, u: &DVector<f64>, q: &DMatrix<f64>) -> Result<()> {
        match self {
            Belief::Irreducible {
                state,
                xi,
                fbar,
                gbar,
            } => {
                *state = predict_irreducible(state, u, fbar, gbar, xi, q)?;
            }
            Belief::Reducible(state) => {
                *state = predict_reducible(state, u, q)?;
            }
        }
        Ok(())
    }

    fn update(&mut self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
        match self {
            Belief::Irreducible { state, .. } => {
                *state = update_irreducible(state, z, h, r)?;
            }
            Belief::Reducible(state) => {
                *state = update_reducible(state, z, h, r)?;
            }
        }
        Ok(())
    }
}

/// Norm of the estimation error over the uncertain parameter entries.
fn param_error(scenario: &Scenario, belief: &Belief) -> f64 {
    let (n, m) = (scenario.model.n, scenario.model.m);
    let (fhat, ghat) = match belief {
        Belief::Irreducible { fbar, gbar, .. } => (fbar.clone(), gbar.clone()),
        Belief::Reducible(state) => (state.fbar.clone(), state.gbar.clone()),
    };
    let (ftrue, gtrue) = match scenario.prior.true_system(n, m) {
        Ok(x) => x,
        Err(_) => return f64::NAN,
    };
    scenario
        .prior
        .placements
        .iter()
        .zip(&scenario.prior.theta_var)
        .filter(|(_, &v)| v > 0.0)
        .map(|(pl, _)| {
            let (est, tru) = match pl.matrix {
                crate::model::MatrixId::F => (fhat[(pl.row, pl.col)], ftrue[(pl.row, pl.col)]),
                crate::model::MatrixId::G => (ghat[(pl.row, pl.col)], gtrue[(pl.row, pl.col)]),
            };
            (est - tru).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn initial_belief(scenario: &Scenario, variant: Variant) -> Result<Belief> {
    let (n, m) = (scenario.model.n, scenario.model.m);
    let (fbar, gbar, moments) = scenario.prior.to_moments(n, m)?;
    let state = IrreducibleState {
        xbar: scenario.prior.x0_mean.clone(),
        alpha: scenario.prior.x0_cov.clone(),
    };
    let sys = if variant.exact_params { 0 } else { variant.sys };
    Ok(match sys {
        0 => Belief::Irreducible {
            state,
            xi: MomentSet::zeros(n, m),
            fbar,
            gbar,
        },
        1 => Belief::Irreducible {
            state,
            xi: moments,
            fbar,
            gbar,
        },
        2 => Belief::Reducible(ReducibleState::new(
            state.xbar,
            state.alpha,
            fbar,
            gbar,
            moments,
        )),
        other => return Err(Error::Config(format!("unknown sys level {other}"))),
    })
}

fn solve_for(
    scenario: &Scenario,
    cnt: u8,
    fbar: &DMatrix<f64>,
    gbar: &DMatrix<f64>,
    moments: &MomentSet,
    xbar: &DVector<f64>,
    alpha0: &DMatrix<f64>,
    horizon: usize,
) -> Result<GainSchedule> {
    let model = scenario
        .model
        .with_means(fbar.clone(), gbar.clone());
    let mut cost = scenario.cost.clone();
    cost.horizon = horizon;
    match cnt {
        0 => solve_ce(&model, &cost, alpha0),
        1 => solve_cautious(
            &model,
            &cost,
            &XiSchedule::Constant(moments.scaled_xi(1.0)),
            alpha0,
        ),
        2 => solve_dual_auto(
            &model,
            &cost,
            moments,
            xbar,
            alpha0,
            scenario.prior.num_uncertain() as f64,
        ),
        other => Err(Error::Config(format!("unknown cnt level {other}"))),
    }
}

/// Simulate one closed-loop episode.
///
/// Truth noise and the probing inputs use separate ChaCha8 streams of the same
/// seed, so the disturbance realization is shared across variants.
pub fn run_episode(
    scenario: &Scenario,
    variant: Variant,
    seed: u64,
    collect_trace: bool,
) -> Result<EpisodeResult> {
    let model = &scenario.model;
    let (n, m) = (model.n, model.m);
    let horizon = model.horizon;
    let cnt = if variant.exact_params { 0 } else { variant.cnt };
    let sys = if variant.exact_params { 0 } else { variant.sys };

    let mut rng_truth = ChaCha8Rng::seed_from_u64(seed);
    rng_truth.set_stream(0);
    let mut rng_probe = ChaCha8Rng::seed_from_u64(seed);
    rng_probe.set_stream(1);

    let (f_true, g_true) = if variant.exact_params {
        scenario.prior.place(&scenario.prior.theta_mean, n, m)?
    } else {
        scenario.prior.true_system(n, m)?
    };

    let mut x_true = if scenario.draw_x0 {
        let factor = psd_factor(&scenario.prior.x0_cov)?;
        sample_mvn(&scenario.prior.x0_mean, &factor, &mut rng_truth)
    } else {
        scenario.prior.x0_mean.clone()
    };

    let mut belief = initial_belief(scenario, variant)?;
    let prior_moments = scenario.moments()?;
    let support = scenario.prior.packed_support(n, m);
    let logdet0 = if support.is_empty() {
        0.0
    } else {
        restricted_logdet(&prior_moments, &support)?
    };

    // sys 2 re-solves every step from the updated estimates; others keep the
    // schedule synthesized from the prior
    let resolve_each_step = sys == 2;
    let (fbar0, gbar0, _) = scenario.prior.to_moments(n, m)?;
    let mut schedule = solve_for(
        scenario,
        cnt,
        &fbar0,
        &gbar0,
        &prior_moments,
        &scenario.prior.x0_mean,
        &scenario.prior.x0_cov,
        horizon,
    )?;

    let mut energy = 0.0;
    let mut probes = 0;
    let mut probe_steps = Vec::new();
    let mut diverged = false;
    let mut trace = if collect_trace {
        Some(Vec::with_capacity(horizon))
    } else {
        None
    };

    for k in 0..horizon {
        let step_index = if resolve_each_step {
            let (fhat, ghat, moments) = match &belief {
                Belief::Irreducible {
                    fbar, gbar, xi, ..
                } => (fbar.clone(), gbar.clone(), xi.clone()),
                Belief::Reducible(state) => {
                    (state.fbar.clone(), state.gbar.clone(), state.moments.clone())
                }
            };
            match solve_for(
                scenario,
                cnt,
                &fhat,
                &ghat,
                &moments,
                belief.xbar(),
                belief.alpha(),
                horizon - k,
            ) {
                Ok(s) => {
                    schedule = s;
                    0
                }
                Err(_) => {
                    // keep the previous schedule, advance into it
                    (k + schedule.horizon).saturating_sub(horizon).min(schedule.horizon - 1)
                }
            }
        } else {
            k
        };

        let (u, was_probe) = control_at(
            &schedule,
            step_index,
            belief.xbar(),
            scenario.probe_sigma,
            &mut rng_probe,
        );
        if was_probe {
            probes += 1;
            probe_steps.push(k);
        }
        energy += u.norm_squared();

        x_true = model.step_truth(&x_true, &u, &f_true, &g_true, &mut rng_truth);
        let z = model.measure(&x_true, &mut rng_truth);

        if belief.predict(&u, &model.q).is_err() {
            diverged = true;
            break;
        }
        let (stat, score) =
            adequacy(&z, belief.xbar(), belief.alpha(), &model.h, &model.r).unwrap_or((f64::NAN, f64::NAN));
        if belief.update(&z, &model.h, &model.r).is_err() {
            diverged = true;
            break;
        }

        if !x_true.iter().all(|v| v.is_finite())
            || x_true.norm() > DIVERGE_NORM
            || !belief.xbar().iter().all(|v| v.is_finite())
        {
            diverged = true;
            break;
        }

        if let Some(tr) = trace.as_mut() {
            let i_cum = match &belief {
                Belief::Reducible(state) => {
                    if support.is_empty() {
                        0.0
                    } else {
                        restricted_logdet(&state.moments, &support)
                            .map(|ld| 0.5 * (logdet0 - ld))
                            .unwrap_or(f64::NAN)
                    }
                }
                Belief::Irreducible { .. } => schedule.i_cum.get(step_index).copied().unwrap_or(0.0),
            };
            tr.push(StepTrace {
                k,
                u: u.iter().cloned().collect(),
                was_probe,
                lambda: schedule.lambda[step_index],
                i_cum,
                adequacy_stat: stat,
                adequacy_score: score,
                param_err: param_error(scenario, &belief),
            });
        }
    }

    let miss = if diverged {
        f64::NAN
    } else {
        scenario.cost.miss(&x_true)
    };
    let cost = 0.5 * (miss + scenario.cost.b_lambda * energy);
    Ok(EpisodeResult {
        cost,
        miss,
        control_energy: energy,
        probes,
        probe_steps,
        diverged: diverged || !cost.is_finite(),
        trace,
    })
}

fn mean_std_max(values: &[f64]) -> (f64, f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (mean, var.sqrt(), max)
}

/// Run one replication set of a variant. Episode seeds are shared across
/// variants of the same set, giving common random numbers.
pub fn run_set(scenario: &Scenario, variant: Variant, set_index: usize) -> Result<VariantStats> {
    let set_seed = scenario.base_seed + set_index as u64 * SET_SEED_STRIDE;
    let results: Vec<Result<EpisodeResult>> = (0..scenario.runs)
        .into_par_iter()
        .map(|run| run_episode(scenario, variant, set_seed + run as u64, false))
        .collect();
    let mut costs = Vec::with_capacity(scenario.runs);
    let mut misses = Vec::with_capacity(scenario.runs);
    let mut probe_counts = vec![0usize; scenario.model.horizon];
    let mut excluded = 0;
    for r in results {
        let r = r?;
        if r.diverged {
            excluded += 1;
        } else {
            costs.push(r.cost);
            misses.push(r.miss);
            for &k in &r.probe_steps {
                probe_counts[k] += 1;
            }
        }
    }
    let (cost_mean, cost_std, cost_max) = mean_std_max(&costs);
    let (miss_mean, miss_std, miss_max) = mean_std_max(&misses);
    let included = costs.len().max(1) as f64;
    let probe_freq = probe_counts.iter().map(|&c| c as f64 / included).collect();
    Ok(VariantStats {
        variant: variant.label(),
        set: set_index,
        runs: scenario.runs,
        excluded,
        cost_mean,
        cost_std,
        cost_max,
        miss_mean,
        miss_std,
        miss_max,
        probe_freq,
    })
}

/// Full benchmark: every variant over every replication set.
pub fn run_benchmark(scenario: &Scenario, variants: &[Variant]) -> Result<Vec<VariantStats>> {
    let mut out = Vec::with_capacity(variants.len() * scenario.sets);
    for set in 0..scenario.sets {
        for &variant in variants {
            out.push(run_set(scenario, variant, set)?);
        }
    }
    Ok(out)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render the stats table as CSV. With `use_variance` the dispersion columns
/// hold variances instead of standard deviations.
pub fn stats_to_csv(stats: &[VariantStats], use_variance: bool) -> String {
    let mut out = String::from(
        "variant,set,runs,excluded,cost_mean,cost_disp,cost_max,miss_mean,miss_disp,miss_max\n",
    );
    for s in stats {
        let (cd, md) = if use_variance {
            (s.cost_std * s.cost_std, s.miss_std * s.miss_std)
        } else {
            (s.cost_std, s.miss_std)
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            s.variant,
            s.set,
            s.runs,
            s.excluded,
            fmt17(s.cost_mean),
            fmt17(cd),
            fmt17(s.cost_max),
            fmt17(s.miss_mean),
            fmt17(md),
            fmt17(s.miss_max),
        ));
    }
    out
}

pub fn write_stats_csv(stats: &[VariantStats], path: &Path, use_variance: bool) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    f.write_all(stats_to_csv(stats, use_variance).as_bytes())
        .map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
}

pub fn write_stats_json(stats: &[VariantStats], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(stats)
        .map_err(|e| Error::Config(format!("serialize stats: {e}")))?;
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Render a per-step trace as CSV.
pub fn trace_to_csv(trace: &[StepTrace]) -> String {
    let m = trace.first().map_or(0, |t| t.u.len());
    let mut out = String::from("k");
    for j in 0..m {
        out.push_str(&format!(",u{j}"));
    }
    out.push_str(",was_probe,lambda,i_cum,adequacy_stat,adequacy_score,param_err\n");
    for t in trace {
        out.push_str(&t.k.to_string());
        for v in &t.u {
            out.push_str(&format!(",{}", fmt17(*v)));
        }
        out.push_str(&format!(
            ",{},{},{},{},{},{}\n",
            t.was_probe,
            fmt17(t.lambda),
            fmt17(t.i_cum),
            fmt17(t.adequacy_stat),
            fmt17(t.adequacy_score),
            fmt17(t.param_err),
        ));
    }
    out
}
