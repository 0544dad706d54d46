//! Trade response speed against overshoot by retuning the converters to
//! smaller control penalties without re-running the synthesis.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use passnet::microgrid::{build_case_study, DguParams};
use passnet::netgraph::build_node_model;
use passnet::sim::{self, simulate, SimOptions};
use passnet::synthesis::{retune, synthesize_node, SynthesisOptions, SynthesisResult};

fn main() -> passnet::Result<()> {
    let cs = build_case_study()?;
    let node = build_node_model(&DguParams::default().dynamics()).expect("parametric")?;
    let base = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0))?;
    let results: BTreeMap<String, SynthesisResult> = cs
        .network
        .nodes()
        .iter()
        .filter(|n| n.model.is_controlled())
        .map(|n| (n.id.clone(), base.clone()))
        .collect();

    println!("synthesized penalty R = {:.4}", base.r[(0, 0)]);
    println!("{:>6} {:>12} {:>12}", "rbar", "settling [s]", "peak/target");
    for rbar in [1.55, 0.5, 0.1, 0.01] {
        let k = retune(&node, &base, &DMatrix::from_element(1, 1, rbar))?;
        let gains: BTreeMap<String, DMatrix<f64>> =
            results.keys().map(|id| (id.clone(), k.clone())).collect();
        let opts = SimOptions {
            dt: 2e-6,
            t_end: 1.0,
            monitor_dissipation: false,
            ..Default::default()
        };
        let traj = simulate(&cs.network, &results, Some(&gains), &[], None, &opts)?;
        let ep = &traj.epochs[0];
        let i_v = ep.labels.iter().position(|l| l == "dgu1:v").unwrap();
        let target = ep.equilibrium[i_v];
        let (t, v) = traj.series("dgu1:v");
        let settle = sim::settling_time(&t, &v, target, 0.005);
        println!(
            "{rbar:>6} {:>12} {:>12.4}",
            settle.map_or("-".into(), |s| format!("{s:.4}")),
            sim::peak(&v) / target
        );
    }

    // penalties above the synthesized value void the certificates
    match retune(&node, &base, &DMatrix::from_element(1, 1, 2.0)) {
        Err(e) => println!("rbar = 2.0 rejected: {e}"),
        Ok(_) => unreachable!("retune must reject penalties above the synthesized value"),
    }
    Ok(())
}
