//! JSON run configuration: network description, synthesis options, tuning
//! sweep values, simulation horizon and event schedule, output location.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{
    build_edge_model, build_node_model, EdgeDynamics, NetworkModel, NodeDynamics, TopologyChange,
};
use crate::sdp::SdpSettings;
use crate::sim::{Method, SimOptions};
use crate::synthesis::SynthesisOptions;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: String,
    #[serde(flatten)]
    pub dynamics: NodeDynamics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub source: String,
    pub sink: String,
    #[serde(flatten)]
    pub dynamics: EdgeDynamics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphConfig {
    pub nodes: Vec<NodeConfig>,
    #[serde(default)]
    pub edges: Vec<EdgeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub lambda: f64,
    pub epsilon: Option<f64>,
    pub s_min: f64,
    pub s_max: f64,
    /// Base tolerance for certificate margins (scaled by problem size).
    pub tolerance: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        let o = SynthesisOptions::default();
        SynthesisConfig {
            lambda: 0.0,
            epsilon: None,
            s_min: o.s_min,
            s_max: o.s_max,
            tolerance: 1e-8,
        }
    }
}

impl SynthesisConfig {
    pub fn options(&self) -> SynthesisOptions {
        SynthesisOptions {
            lambda: self.lambda,
            epsilon: self.epsilon,
            s_min: self.s_min,
            s_max: self.s_max,
            max_rescale_iters: 12,
            sdp: SdpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    /// Control-penalty values to sweep, in run order.
    pub rbar: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventConfig {
    pub time: f64,
    #[serde(flatten)]
    pub change: TopologyChange,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub method: Method,
    pub record_stride: usize,
    pub events: Vec<EventConfig>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        let o = SimOptions::default();
        SimulationConfig {
            dt: o.dt,
            t_end: o.t_end,
            method: o.method,
            record_stride: o.record_stride,
            events: Vec::new(),
        }
    }
}

impl SimulationConfig {
    pub fn options(&self) -> SimOptions {
        SimOptions {
            dt: self.dt,
            t_end: self.t_end,
            method: self.method,
            record_stride: self.record_stride,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Config {
    pub graph: GraphConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.nodes.is_empty() {
            return Err(Error::Config("graph must declare at least one node".into()));
        }
        if !(self.simulation.dt > 0.0 && self.simulation.dt.is_finite()) {
            return Err(Error::Config("simulation.dt must be positive".into()));
        }
        if !(self.simulation.t_end > 0.0 && self.simulation.t_end.is_finite()) {
            return Err(Error::Config("simulation.t_end must be positive".into()));
        }
        for r in &self.tuning.rbar {
            if !(r.is_finite() && *r > 0.0) {
                return Err(Error::Config(format!("tuning value {r} must be positive")));
            }
        }
        Ok(())
    }

    /// Build the network from the graph section.
    pub fn build_network(&self) -> Result<NetworkModel> {
        let mut net = NetworkModel::new(1);
        for node in &self.graph.nodes {
            let model = build_node_model(&node.dynamics).ok_or_else(|| {
                Error::Config(format!("node {:?} has non-parametric dynamics", node.id))
            })??;
            net.add_node(&node.id, node.dynamics.clone(), model)?;
        }
        for edge in &self.graph.edges {
            let model = build_edge_model(&edge.dynamics, 1)?;
            net.add_edge(&edge.source, &edge.sink, edge.dynamics.clone(), model)?;
        }
        Ok(net)
    }

    pub fn events(&self) -> Vec<(f64, TopologyChange)> {
        self.simulation.events.iter().map(|e| (e.time, e.change.clone())).collect()
    }
}
