//! Command-line front end: synthesize, verify, simulate, sweep.
//!
//! Exit codes: 0 success, 2 synthesis infeasible, 3 verification failure,
//! 4 configuration error, 1 any other failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::netgraph::NetworkModel;
use crate::plot::{line_chart, Series};
use crate::sim::{self, SimOptions, Trajectory};
use crate::synthesis::{retune, synthesize_node, SynthesisResult};
use crate::verify::{verify_design, VerificationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;
pub const EXIT_OTHER: i32 = 1;

#[derive(Parser, Debug)]
#[command(
    name = "passnet",
    about = "Passivity-based decentralized controller synthesis and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Parser)]
pub struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override control penalty: retune all controllers to this value.
    #[arg(long)]
    pub rbar: Option<f64>,
    /// Output directory (overrides the configuration).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Proceed even when certificate verification fails.
    #[arg(long, default_value_t = false)]
    pub allow_unverified: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize controllers for every controlled node.
    Synth(CommonArgs),
    /// Synthesize and verify all certificates and the global optimality.
    Verify(CommonArgs),
    /// Synthesize, verify and run the configured event scenario.
    Simulate(CommonArgs),
    /// Re-tune over the configured penalty values and compare responses.
    Sweep(CommonArgs),
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::UnknownNode(_)
        | Error::UnknownEdge(_)
        | Error::UnknownParameter { .. }
        | Error::SelfLoop(_)
        | Error::Schedule(_)
        | Error::InvalidRetune(_) => EXIT_CONFIG,
        _ => EXIT_OTHER,
    }
}

pub fn run(cli: Cli) -> i32 {
    let (args, action): (&CommonArgs, fn(&Context) -> Result<i32>) = match &cli.command {
        Command::Synth(a) => (a, cmd_synth),
        Command::Verify(a) => (a, cmd_verify),
        Command::Simulate(a) => (a, cmd_simulate),
        Command::Sweep(a) => (a, cmd_sweep),
    };
    match Context::prepare(args).and_then(|ctx| action(&ctx)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

/// Everything shared by the subcommands: parsed config, built network,
/// synthesis results, output location.
struct Context {
    config: Config,
    network: NetworkModel,
    results: BTreeMap<String, SynthesisResult>,
    out_dir: PathBuf,
    rbar: Option<f64>,
    allow_unverified: bool,
}

impl Context {
    fn prepare(args: &CommonArgs) -> Result<Self> {
        let config = Config::load(&args.config)?;
        let network = config.build_network()?;
        let out_dir = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
        std::fs::create_dir_all(&out_dir)?;

        let opts = config.synthesis.options();
        let mut results = BTreeMap::new();
        for node in network.nodes() {
            if node.model.is_controlled() {
                let res = synthesize_node(&node.model, &opts)?;
                println!(
                    "synth {}: s = {:.6}, R = {:.4}",
                    node.id,
                    res.s,
                    res.r[(0, 0)]
                );
                results.insert(node.id.clone(), res);
            }
        }
        Ok(Context {
            config,
            network,
            results,
            out_dir,
            rbar: args.rbar,
            allow_unverified: args.allow_unverified,
        })
    }

    /// Per-node gain overrides for the requested penalty, if any.
    fn gains_for(&self, rbar: Option<f64>) -> Result<Option<BTreeMap<String, DMatrix<f64>>>> {
        let Some(rv) = rbar else { return Ok(None) };
        let mut gains = BTreeMap::new();
        for node in self.network.nodes() {
            if node.model.is_controlled() {
                let res = &self.results[&node.id];
                let m = node.model.num_inputs();
                let k = retune(&node.model, res, &(DMatrix::identity(m, m) * rv))?;
                gains.insert(node.id.clone(), k);
            }
        }
        Ok(Some(gains))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn verify(&self) -> Result<VerificationReport> {
        verify_design(&self.network, &self.results, self.config.synthesis.tolerance)
    }
}

fn cmd_synth(ctx: &Context) -> Result<i32> {
    for (id, res) in &ctx.results {
        ctx.write_json(&format!("synthesis_{id}.json"), res)?;
    }
    if let Some(gains) = ctx.gains_for(ctx.rbar)? {
        let as_rows: BTreeMap<&String, Vec<Vec<f64>>> = gains
            .iter()
            .map(|(id, k)| (id, k.row_iter().map(|r| r.iter().cloned().collect()).collect()))
            .collect();
        ctx.write_json("retuned_gains.json", &as_rows)?;
    }
    Ok(EXIT_OK)
}

fn cmd_verify(ctx: &Context) -> Result<i32> {
    let report = ctx.verify()?;
    ctx.write_json("verification_report.json", &report)?;
    for s in &report.subsystems {
        println!(
            "verify {}: margin {:.3e} (tol {:.3e}) {}",
            s.id,
            s.margin,
            s.tol,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "closed loop: abscissa {:.4}, Riccati residual {:.3e}",
        report.spectral_abscissa, report.riccati_residual
    );
    Ok(if report.passed { EXIT_OK } else { EXIT_VERIFICATION })
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    // union of labels, in the order of the richest (last) epoch
    let labels: Vec<String> = traj
        .epochs
        .last()
        .map(|e| e.labels.clone())
        .unwrap_or_default();
    let mut csv = String::from("t");
    for l in &labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for ep in &traj.epochs {
        let index: Vec<Option<usize>> =
            labels.iter().map(|l| ep.labels.iter().position(|x| x == l)).collect();
        for (t, x) in ep.times.iter().zip(&ep.states) {
            csv.push_str(&format!("{t}"));
            for idx in &index {
                csv.push(',');
                if let Some(i) = idx {
                    csv.push_str(&format!("{}", x[*i]));
                }
            }
            csv.push('\n');
        }
    }
    std::fs::write(path, csv)?;
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary {
    rbar: Option<f64>,
    min_dissipation_margin: f64,
    warnings: Vec<String>,
    final_time: f64,
    settling: BTreeMap<String, Option<f64>>,
}

fn voltage_labels(network: &NetworkModel) -> Vec<String> {
    network
        .nodes()
        .iter()
        .filter(|n| n.model.is_controlled())
        .map(|n| format!("{}:v", n.id))
        .collect()
}

fn run_scenario(ctx: &Context, rbar: Option<f64>) -> Result<(Trajectory, SimulationSummary)> {
    let gains = ctx.gains_for(rbar)?;
    let opts = SimOptions {
        // the certificates only bound the dissipation of the synthesized
        // design; skip the monitor for retuned gains
        monitor_dissipation: gains.is_none(),
        ..ctx.config.simulation.options()
    };
    let traj = sim::simulate(
        &ctx.network,
        &ctx.results,
        gains.as_ref(),
        &ctx.config.events(),
        None,
        &opts,
    )?;

    let mut settling = BTreeMap::new();
    if let Some(last) = traj.epochs.last() {
        for label in voltage_labels(&ctx.network) {
            let (t, v) = traj.series(&label);
            let idx = last.labels.iter().position(|l| *l == label);
            if let Some(i) = idx {
                let target = last.equilibrium[i];
                settling.insert(label, sim::settling_time(&t, &v, target, 0.005));
            }
        }
    }
    let summary = SimulationSummary {
        rbar,
        min_dissipation_margin: traj.min_dissipation_margin(),
        warnings: traj.warnings.clone(),
        final_time: traj.epochs.last().map(|e| e.t_end).unwrap_or(0.0),
        settling,
    };
    Ok((traj, summary))
}

fn cmd_simulate(ctx: &Context) -> Result<i32> {
    let report = ctx.verify()?;
    ctx.write_json("verification_report.json", &report)?;
    if !report.passed && !ctx.allow_unverified {
        eprintln!("verification failed; rerun with --allow-unverified to simulate anyway");
        return Ok(EXIT_VERIFICATION);
    }

    let (traj, summary) = run_scenario(ctx, ctx.rbar)?;
    write_trajectory_csv(&ctx.out_dir.join("trajectory.csv"), &traj)?;
    ctx.write_json("simulation_summary.json", &summary)?;

    let labels = voltage_labels(&ctx.network);
    let series_data: Vec<(String, Vec<f64>, Vec<f64>)> = labels
        .iter()
        .map(|l| {
            let (t, v) = traj.series(l);
            (l.clone(), t, v)
        })
        .collect();
    let series: Vec<Series<'_>> = series_data
        .iter()
        .map(|(l, t, v)| Series { name: l.clone(), x: t, y: v })
        .collect();
    line_chart(
        &ctx.out_dir.join("voltages.svg"),
        "Bus voltages",
        "time [s]",
        "voltage [V]",
        &series,
    )?;
    println!(
        "simulate: min dissipation margin {:.3e}",
        summary.min_dissipation_margin
    );
    Ok(EXIT_OK)
}

fn cmd_sweep(ctx: &Context) -> Result<i32> {
    let mut values = ctx.config.tuning.rbar.clone();
    if let Some(r) = ctx.rbar {
        values = vec![r];
    }
    if values.is_empty() {
        return Err(Error::Config("sweep requires tuning.rbar values or --rbar".into()));
    }

    let runs: Vec<Result<(f64, Trajectory, SimulationSummary)>> = values
        .par_iter()
        .map(|&r| run_scenario(ctx, Some(r)).map(|(t, s)| (r, t, s)))
        .collect();

    // write in configured order so outputs are deterministic
    let mut summaries = Vec::new();
    let mut chart: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    let probe = voltage_labels(&ctx.network).into_iter().next();
    for run in runs {
        let (r, traj, summary) = run?;
        write_trajectory_csv(&ctx.out_dir.join(format!("sweep_rbar_{r}.csv")), &traj)?;
        if let Some(label) = &probe {
            let (t, v) = traj.series(label);
            chart.push((format!("rbar = {r}"), t, v));
        }
        summaries.push(summary);
    }
    ctx.write_json("sweep_metrics.json", &summaries)?;
    if !chart.is_empty() {
        let series: Vec<Series<'_>> = chart
            .iter()
            .map(|(l, t, v)| Series { name: l.clone(), x: t, y: v })
            .collect();
        line_chart(
            &ctx.out_dir.join("sweep_voltages.svg"),
            "Voltage response across control penalties",
            "time [s]",
            "voltage [V]",
            &series,
        )?;
    }
    Ok(EXIT_OK)
}
