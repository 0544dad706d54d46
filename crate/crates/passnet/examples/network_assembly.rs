//! Build the five-bus demonstration network and inspect its structure:
//! incidence matrix, state labels, and the effect of a plug-in event on
//! the assembled dynamics.

use passnet::microgrid::build_case_study;
use passnet::netgraph::TopologyChange;

fn main() -> passnet::Result<()> {
    let cs = build_case_study()?;
    let mut network = cs.network;

    println!("nodes: {:?}", network.graph().node_ids());
    println!("incidence (rows = nodes, +1 sink, -1 source):");
    let b = network.graph().incidence_matrix();
    for i in 0..b.nrows() {
        let row: Vec<String> = (0..b.ncols()).map(|j| format!("{:+.0}", b[(i, j)])).collect();
        println!("  {}", row.join(" "));
    }

    let gm = network.assemble_global()?;
    println!("\nglobal state dimension: {}", gm.a.nrows());
    for (i, label) in network.state_labels().iter().enumerate() {
        println!("  x[{i:2}] = {label}");
    }

    // plug in a new line and watch the state space grow
    network.modify_topology(&TopologyChange::AddEdge {
        source: "load5".into(),
        sink: "dgu3".into(),
        dynamics: passnet::microgrid::LineParams::default().dynamics(),
    })?;
    println!(
        "\nafter plugging in load5-dgu3: {} states, {} edges",
        network.global_dim(),
        network.graph().num_edges()
    );
    Ok(())
}
