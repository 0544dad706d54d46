//! DC microgrid building blocks and the five-bus demonstration network:
//! three converter (DGU) buses feeding two capacitive load buses over RL
//! lines, with a load-step and plug-in event sequence.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::netgraph::{
    build_edge_model, build_node_model, EdgeDynamics, NetworkModel, NodeDynamics, TopologyChange,
};

/// Buck converter bus: series filter resistance/inductance, output
/// capacitance, local shunt conductance, virtual output impedance and the
/// voltage setpoint tracked by the integral state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub g: f64,
    pub z: f64,
    pub v_set: f64,
}

impl Default for DguParams {
    fn default() -> Self {
        DguParams { r: 0.2, l: 1.8e-3, c: 2.2e-3, g: 0.01, z: 1.0, v_set: 48.0 }
    }
}

impl DguParams {
    pub fn dynamics(&self) -> NodeDynamics {
        NodeDynamics::Dgu {
            r: self.r,
            l: self.l,
            c: self.c,
            g: self.g,
            z: self.z,
            v_set: self.v_set,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub g: f64,
    pub c: f64,
}

impl Default for LoadParams {
    fn default() -> Self {
        LoadParams { g: 0.1, c: 70e-6 }
    }
}

impl LoadParams {
    pub fn dynamics(&self) -> NodeDynamics {
        NodeDynamics::Load { g: self.g, c: self.c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub r: f64,
    pub l: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        LineParams { r: 0.05, l: 2.1e-6 }
    }
}

impl LineParams {
    pub fn dynamics(&self) -> EdgeDynamics {
        EdgeDynamics::Line { r: self.r, l: self.l }
    }
}

/// A network together with the timed disturbance sequence exercising it.
#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub network: NetworkModel,
    pub events: Vec<(f64, TopologyChange)>,
}

/// Five-bus demonstration microgrid.
///
/// Nodes `dgu1..dgu3` (setpoints 48, 47.8, 48.1 V) and `load4`, `load5`
/// (0.1 S and 0.05 S); lines dgu1-load4, dgu1-dgu2, dgu2-load5. Events:
/// `load4` steps to 0.15 S at t = 1 s, `load5` steps to 0.03 S at t = 2 s,
/// and a new line load5-dgu3 plugs in at t = 3 s.
pub fn build_case_study() -> Result<CaseStudy> {
    let mut network = NetworkModel::new(1);
    for (id, v_set) in [("dgu1", 48.0), ("dgu2", 47.8), ("dgu3", 48.1)] {
        let params = DguParams { v_set, ..Default::default() };
        let dynamics = params.dynamics();
        let model = build_node_model(&dynamics).expect("parametric node")?;
        network.add_node(id, dynamics, model)?;
    }
    for (id, g) in [("load4", 0.1), ("load5", 0.05)] {
        let params = LoadParams { g, ..Default::default() };
        let dynamics = params.dynamics();
        let model = build_node_model(&dynamics).expect("parametric node")?;
        network.add_node(id, dynamics, model)?;
    }
    let line = LineParams::default();
    for (source, sink) in [("dgu1", "load4"), ("dgu1", "dgu2"), ("dgu2", "load5")] {
        let dynamics = line.dynamics();
        let model = build_edge_model(&dynamics, 1)?;
        network.add_edge(source, sink, dynamics, model)?;
    }

    let events = vec![
        (
            1.0,
            TopologyChange::SetNodeParam { node: "load4".into(), param: "g".into(), value: 0.15 },
        ),
        (
            2.0,
            TopologyChange::SetNodeParam { node: "load5".into(), param: "g".into(), value: 0.03 },
        ),
        (
            3.0,
            TopologyChange::AddEdge {
                source: "load5".into(),
                sink: "dgu3".into(),
                dynamics: line.dynamics(),
            },
        ),
    ];

    Ok(CaseStudy { network, events })
}
