//! Command-line front end: benchmark tables, single traced episodes,
//! information prediction and scenario validation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use dualctl::{
    default_variants, info_multistep, load_scenario, run_benchmark, run_episode, solve_dual,
    solve_dual_auto, stats_to_csv, trace_to_csv, write_stats_csv, write_stats_json, InfoMode,
    Scenario, ScenarioFile, Variant,
};

/// Environment variable holding the default output directory.
const OUT_ENV: &str = "DUALCTL_OUT";

#[derive(Parser)]
#[command(
    name = "dualctl",
    about = "Estimation and cautious/dual control for linear systems with random parameters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Builtin scenario name (interception, soft_landing) or a JSON file path.
    #[arg(long, default_value = "interception")]
    scenario: String,
    /// Output directory (default: $DUALCTL_OUT or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo benchmark and write CSV/JSON tables.
    Bench {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Restrict to one estimator level (0, 1, 2); requires --cnt.
        #[arg(long)]
        sys: Option<u8>,
        /// Restrict to one controller level (0, 1, 2); requires --sys.
        #[arg(long)]
        cnt: Option<u8>,
        /// Episodes per set (overrides the scenario).
        #[arg(long)]
        runs: Option<usize>,
        /// Replication sets (overrides the scenario).
        #[arg(long)]
        sets: Option<usize>,
        /// Base seed (overrides the scenario).
        #[arg(long)]
        seed: Option<u64>,
        /// Report variances instead of standard deviations.
        #[arg(long)]
        variance: bool,
    },
    /// Simulate one seeded episode and export its step trace.
    Episode {
        #[command(flatten)]
        common: ScenarioArgs,
        #[arg(long, default_value_t = 2)]
        sys: u8,
        #[arg(long, default_value_t = 2)]
        cnt: u8,
        /// Use the matched plant (true parameters = prior means).
        #[arg(long)]
        exact: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Re-attach the predicted information trace to the dual schedule
        /// this many extra times before simulating.
        #[arg(long, default_value_t = 0)]
        reiterate: usize,
    },
    /// Predict parameter information along a control sequence.
    Info {
        #[command(flatten)]
        common: ScenarioArgs,
        /// pessimistic or optimistic.
        #[arg(long, default_value = "pessimistic")]
        mode: String,
        /// "zeros" or a JSON file holding an array of control vectors.
        #[arg(long, default_value = "zeros")]
        controls: String,
    },
    /// Validate a scenario file and report PSD status.
    Validate {
        #[command(flatten)]
        common: ScenarioArgs,
    },
}

fn out_dir(common: &ScenarioArgs) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Bench {
            common,
            sys,
            cnt,
            runs,
            sets,
            seed,
            variance,
        } => {
            let mut scenario = load_scenario(&common.scenario)?;
            if let Some(runs) = runs {
                scenario.runs = runs;
            }
            if let Some(sets) = sets {
                scenario.sets = sets;
            }
            if let Some(seed) = seed {
                scenario.base_seed = seed;
            }
            let variants = match (sys, cnt) {
                (Some(s), Some(c)) => vec![Variant::pair(s, c)],
                (None, None) => default_variants(),
                _ => anyhow::bail!("--sys and --cnt must be given together"),
            };
            let stats = run_benchmark(&scenario, &variants)?;
            let dir = out_dir(&common);
            std::fs::create_dir_all(&dir)?;
            write_stats_csv(&stats, &dir.join("bench.csv"), variance)?;
            write_stats_json(&stats, &dir.join("bench.json"))?;
            print!("{}", stats_to_csv(&stats, variance));
            Ok(ExitCode::SUCCESS)
        }
        Command::Episode {
            common,
            sys,
            cnt,
            exact,
            seed,
            reiterate,
        } => {
            let scenario = load_scenario(&common.scenario)?;
            let variant = if exact {
                Variant::exact()
            } else {
                Variant::pair(sys, cnt)
            };
            // optional extra fixed-point passes: re-predict the information
            // along the dual trajectory instead of the certainty-equivalent
            // one and re-solve, reporting how much the co-state moves
            if reiterate > 0 && cnt == 2 {
                let moments = scenario.moments()?;
                let p = scenario.prior.num_uncertain() as f64;
                let mut schedule = solve_dual_auto(
                    &scenario.model,
                    &scenario.cost,
                    &moments,
                    &scenario.prior.x0_mean,
                    &scenario.prior.x0_cov,
                    p,
                )?;
                for pass in 0..reiterate {
                    let mut x = scenario.prior.x0_mean.clone();
                    let mut controls = Vec::with_capacity(scenario.model.horizon);
                    for k in 0..scenario.model.horizon {
                        let u = -(&schedule.c[k] * &x) + &schedule.u_ff[k];
                        x = &scenario.model.fbar * &x + &scenario.model.gbar * &u;
                        controls.push(u);
                    }
                    let pred = info_multistep(
                        InfoMode::Optimistic,
                        &scenario.prior.x0_mean,
                        &scenario.prior.x0_cov,
                        &moments,
                        &controls,
                        &scenario.model.fbar,
                        &scenario.model.gbar,
                        &scenario.model.h,
                        &scenario.model.q,
                        &scenario.model.r,
                        p,
                    )?;
                    let next = solve_dual(
                        &scenario.model,
                        &scenario.cost,
                        &moments,
                        &scenario.prior.x0_cov,
                        p,
                        Some(&pred.i_cum),
                    )?;
                    let delta = schedule
                        .lambda
                        .iter()
                        .zip(&next.lambda)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    println!("reiterate pass {}: max |dlambda| = {delta:.3e}", pass + 1);
                    schedule = next;
                }
            }
            let seed = seed.unwrap_or(scenario.base_seed);
            let result = run_episode(&scenario, variant, seed, true)?;
            let dir = out_dir(&common);
            std::fs::create_dir_all(&dir)?;
            let trace = result.trace.as_deref().unwrap_or(&[]);
            let path = dir.join("trace.csv");
            std::fs::write(&path, trace_to_csv(trace))?;
            println!(
                "variant={} seed={} cost={:.6} miss={:.6} probes={} diverged={} trace={}",
                variant.label(),
                seed,
                result.cost,
                result.miss,
                result.probes,
                result.diverged,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Info {
            common,
            mode,
            controls,
        } => {
            let scenario = load_scenario(&common.scenario)?;
            let mode = match mode.as_str() {
                "pessimistic" => InfoMode::Pessimistic,
                "optimistic" => InfoMode::Optimistic,
                other => anyhow::bail!("unknown mode '{other}' (pessimistic|optimistic)"),
            };
            let controls = load_controls(&controls, &scenario)?;
            let moments = scenario.moments()?;
            let pred = info_multistep(
                mode,
                &scenario.prior.x0_mean,
                &scenario.prior.x0_cov,
                &moments,
                &controls,
                &scenario.model.fbar,
                &scenario.model.gbar,
                &scenario.model.h,
                &scenario.model.q,
                &scenario.model.r,
                scenario.prior.num_uncertain() as f64,
            )?;
            println!("k,i_z,i_cum,i_sigma");
            for k in 0..pred.i_z.len() {
                println!(
                    "{},{:.16e},{:.16e},{:.16e}",
                    k + 1,
                    pred.i_z[k],
                    pred.i_cum[k],
                    pred.i_sigma[k]
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { common } => {
            if common.scenario == "interception" || common.scenario == "soft_landing" {
                let scenario = load_scenario(&common.scenario)?;
                report_valid(&scenario);
                return Ok(ExitCode::SUCCESS);
            }
            let text = std::fs::read_to_string(&common.scenario)?;
            let file: ScenarioFile = match serde_json::from_str(&text) {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("{}: parse error at line {}: {}", common.scenario, e.line(), e);
                    return Ok(ExitCode::from(1));
                }
            };
            match file.into_scenario() {
                Ok(scenario) => {
                    report_valid(&scenario);
                    Ok(ExitCode::SUCCESS)
                }
                Err(errors) => {
                    for e in errors {
                        eprintln!("{}: {e}", common.scenario);
                    }
                    Ok(ExitCode::from(1))
                }
            }
        }
    }
}

fn report_valid(scenario: &Scenario) {
    let moments = scenario.moments().expect("validated scenario has moments");
    let rep = moments.pack_psd_check();
    println!(
        "ok: N={} M={} L={} horizon={} uncertain_params={} param_cov_min_eig={:.3e}",
        scenario.model.n,
        scenario.model.m,
        scenario.model.l,
        scenario.model.horizon,
        scenario.prior.num_uncertain(),
        rep.min_eig
    );
}

fn load_controls(spec: &str, scenario: &Scenario) -> anyhow::Result<Vec<DVector<f64>>> {
    let m = scenario.model.m;
    if spec == "zeros" {
        return Ok(vec![DVector::zeros(m); scenario.model.horizon]);
    }
    let text = std::fs::read_to_string(spec)?;
    let raw: Vec<Vec<f64>> = serde_json::from_str(&text)?;
    let controls: Vec<DVector<f64>> = raw
        .into_iter()
        .map(|row| {
            anyhow::ensure!(row.len() == m, "control rows must have length {m}");
            Ok(DVector::from_vec(row))
        })
        .collect::<anyhow::Result<_>>()?;
    anyhow::ensure!(!controls.is_empty(), "{spec}: empty control sequence");
    Ok(controls)
}

