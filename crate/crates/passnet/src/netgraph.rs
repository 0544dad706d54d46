//! Directed interconnection graphs and block assembly of networked LTI
//! dynamics.
//!
//! Nodes and edges each carry their own subsystem; the coupling is the
//! power-preserving pattern `w_V = -B_p y_E`, `w_E = B_pᵀ y_V` where
//! `B_p = B ⊗ I_p` and `B` is the signed incidence matrix (+1 at the sink,
//! -1 at the source of each edge).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{LtiEdge, LtiNode};
use crate::mats;

/// Directed multigraph over string node ids. Self-loops are rejected;
/// parallel edges are allowed and distinguished by index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectedGraph {
    nodes: Vec<String>,
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<String>) -> Result<usize> {
        let id = id.into();
        if self.nodes.contains(&id) {
            return Err(Error::Config(format!("duplicate node id {id:?}")));
        }
        self.nodes.push(id);
        Ok(self.nodes.len() - 1)
    }

    pub fn node_index(&self, id: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == id)
            .ok_or_else(|| Error::UnknownNode(id.into()))
    }

    pub fn add_edge(&mut self, source: &str, sink: &str) -> Result<usize> {
        let s = self.node_index(source)?;
        let t = self.node_index(sink)?;
        if s == t {
            return Err(Error::SelfLoop(source.into()));
        }
        self.edges.push((s, t));
        Ok(self.edges.len() - 1)
    }

    pub fn remove_edge(&mut self, index: usize) -> Result<()> {
        if index >= self.edges.len() {
            return Err(Error::UnknownEdge(format!("edge index {index}")));
        }
        self.edges.remove(index);
        Ok(())
    }

    /// First edge joining `source`->`sink`, if any.
    pub fn find_edge(&self, source: &str, sink: &str) -> Result<Option<usize>> {
        let s = self.node_index(source)?;
        let t = self.node_index(sink)?;
        Ok(self.edges.iter().position(|&e| e == (s, t)))
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.nodes
    }

    pub fn edge_endpoints(&self, index: usize) -> Result<(&str, &str)> {
        let &(s, t) = self
            .edges
            .get(index)
            .ok_or_else(|| Error::UnknownEdge(format!("edge index {index}")))?;
        Ok((&self.nodes[s], &self.nodes[t]))
    }

    /// Signed incidence matrix, nodes by edges: +1 at the sink, -1 at the
    /// source.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.nodes.len(), self.edges.len());
        for (j, &(s, t)) in self.edges.iter().enumerate() {
            b[(s, j)] = -1.0;
            b[(t, j)] = 1.0;
        }
        b
    }

    /// Number of weakly connected components.
    pub fn num_components(&self) -> usize {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let r = find(parent, parent[i]);
                parent[i] = r;
            }
            parent[i]
        }
        for &(s, t) in &self.edges {
            let (rs, rt) = (find(&mut parent, s), find(&mut parent, t));
            parent[rs] = rt;
        }
        (0..n).filter(|&i| find(&mut parent, i) == i).count()
    }
}

/// Physical description of a node subsystem, kept alongside the built model
/// so parameters can be edited and the model rebuilt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeDynamics {
    /// Voltage-source converter with RL filter, output capacitor, local
    /// load conductance, virtual impedance feedforward and an integral
    /// state tracking the voltage setpoint.
    Dgu { r: f64, l: f64, c: f64, g: f64, z: f64, v_set: f64 },
    /// Passive capacitive load bus with shunt conductance.
    Load { g: f64, c: f64 },
    /// User-supplied model; parameters are not editable by path.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeDynamics {
    /// Series RL interconnection line.
    Line { r: f64, l: f64 },
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: String,
    pub dynamics: NodeDynamics,
    pub model: LtiNode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub source: String,
    pub sink: String,
    pub dynamics: EdgeDynamics,
    pub model: LtiEdge,
}

/// A graph together with the subsystem attached to every node and edge.
/// All ports share the coupling dimension `p`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkModel {
    graph: DirectedGraph,
    nodes: Vec<NodeEntry>,
    edges: Vec<EdgeEntry>,
    coupling_dim: usize,
}

/// Structural edit applied by [`NetworkModel::modify_topology`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TopologyChange {
    AddEdge { source: String, sink: String, dynamics: EdgeDynamics },
    RemoveEdge { source: String, sink: String },
    /// Set a named scalar parameter (`r`, `l`, `c`, `g`, `z`, `v_set`) on a
    /// node and rebuild its model.
    SetNodeParam { node: String, param: String, value: f64 },
}

impl NetworkModel {
    pub fn new(coupling_dim: usize) -> Self {
        NetworkModel {
            graph: DirectedGraph::new(),
            nodes: Vec::new(),
            edges: Vec::new(),
            coupling_dim,
        }
    }

    pub fn coupling_dim(&self) -> usize {
        self.coupling_dim
    }

    pub fn graph(&self) -> &DirectedGraph {
        &self.graph
    }

    pub fn nodes(&self) -> &[NodeEntry] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeEntry] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Result<&NodeEntry> {
        let i = self.graph.node_index(id)?;
        Ok(&self.nodes[i])
    }

    pub fn add_node(&mut self, id: &str, dynamics: NodeDynamics, model: LtiNode) -> Result<()> {
        if model.port_dim() != self.coupling_dim {
            return Err(Error::Dimension(format!(
                "node {id:?} port dimension {} does not match network coupling dimension {}",
                model.port_dim(),
                self.coupling_dim
            )));
        }
        self.graph.add_node(id)?;
        self.nodes.push(NodeEntry { id: id.into(), dynamics, model });
        Ok(())
    }

    pub fn add_edge(
        &mut self,
        source: &str,
        sink: &str,
        dynamics: EdgeDynamics,
        model: LtiEdge,
    ) -> Result<()> {
        if model.port_dim() != self.coupling_dim {
            return Err(Error::Dimension(format!(
                "edge ({source:?},{sink:?}) port dimension {} does not match coupling dimension {}",
                model.port_dim(),
                self.coupling_dim
            )));
        }
        self.graph.add_edge(source, sink)?;
        self.edges.push(EdgeEntry {
            source: source.into(),
            sink: sink.into(),
            dynamics,
            model,
        });
        Ok(())
    }

    /// Total state dimension of the assembled system.
    pub fn global_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.model.dim()).sum::<usize>()
            + self.edges.iter().map(|e| e.model.dim()).sum::<usize>()
    }

    /// Global state labels in assembly order, prefixed by the owning node id
    /// or edge endpoints.
    pub fn state_labels(&self) -> Vec<String> {
        let mut labels = Vec::with_capacity(self.global_dim());
        for n in &self.nodes {
            for l in &n.model.state_labels {
                labels.push(format!("{}:{}", n.id, l));
            }
        }
        for e in &self.edges {
            for l in &e.model.state_labels {
                labels.push(format!("{}-{}:{}", e.source, e.sink, l));
            }
        }
        labels
    }

    /// Assemble the open-loop global dynamics over the stacked state
    /// `x̂ = (x_nodes, x_edges)`:
    ///
    /// ```text
    /// Â = [ A_V              -B_V B_p C_E ]      B̂ = [ Bu_V ]
    ///     [ B_E B_pᵀ C_V      A_E         ]          [ 0    ]
    /// ```
    ///
    /// plus the stacked affine drift. `B_p = B ⊗ I_p` with `B` the signed
    /// incidence matrix.
    pub fn assemble_global(&self) -> Result<GlobalModel> {
        let p = self.coupling_dim;
        let nv: usize = self.nodes.iter().map(|n| n.model.dim()).sum();
        let ne: usize = self.edges.iter().map(|e| e.model.dim()).sum();
        let nu: usize = self.nodes.iter().map(|n| n.model.num_inputs()).sum();
        let n = nv + ne;

        let a_v = mats::block_diag(&self.nodes.iter().map(|n| n.model.a.clone()).collect::<Vec<_>>());
        let b_v = mats::block_diag(&self.nodes.iter().map(|n| n.model.bw.clone()).collect::<Vec<_>>());
        let c_v = mats::block_diag(&self.nodes.iter().map(|n| n.model.c.clone()).collect::<Vec<_>>());
        let a_e = mats::block_diag(&self.edges.iter().map(|e| e.model.a.clone()).collect::<Vec<_>>());
        let b_e = mats::block_diag(&self.edges.iter().map(|e| e.model.bw.clone()).collect::<Vec<_>>());
        let c_e = mats::block_diag(&self.edges.iter().map(|e| e.model.c.clone()).collect::<Vec<_>>());

        let b_p = self.graph.incidence_matrix().kronecker(&DMatrix::identity(p, p));

        let mut a_hat = DMatrix::zeros(n, n);
        a_hat.view_mut((0, 0), (nv, nv)).copy_from(&a_v);
        if ne > 0 {
            a_hat.view_mut((0, nv), (nv, ne)).copy_from(&(-&b_v * &b_p * &c_e));
            a_hat.view_mut((nv, 0), (ne, nv)).copy_from(&(&b_e * b_p.transpose() * &c_v));
            a_hat.view_mut((nv, nv), (ne, ne)).copy_from(&a_e);
        }

        let mut b_hat = DMatrix::zeros(n, nu);
        let (mut row, mut col) = (0, 0);
        for nd in &self.nodes {
            let (dn, mu) = (nd.model.dim(), nd.model.num_inputs());
            b_hat.view_mut((row, col), (dn, mu)).copy_from(&nd.model.bu);
            row += dn;
            col += mu;
        }

        let mut affine = DVector::zeros(n);
        let mut row = 0;
        for nd in &self.nodes {
            affine.rows_mut(row, nd.model.dim()).copy_from(&nd.model.affine);
            row += nd.model.dim();
        }

        Ok(GlobalModel { a: a_hat, bu: b_hat, affine })
    }

    /// Apply a structural or parametric edit in place.
    pub fn modify_topology(&mut self, change: &TopologyChange) -> Result<()> {
        match change {
            TopologyChange::AddEdge { source, sink, dynamics } => {
                let model = build_edge_model(dynamics, self.coupling_dim)?;
                self.add_edge(source, sink, dynamics.clone(), model)
            }
            TopologyChange::RemoveEdge { source, sink } => {
                let idx = self
                    .graph
                    .find_edge(source, sink)?
                    .ok_or_else(|| Error::UnknownEdge(format!("({source:?},{sink:?})")))?;
                self.graph.remove_edge(idx)?;
                self.edges.remove(idx);
                Ok(())
            }
            TopologyChange::SetNodeParam { node, param, value } => {
                let i = self.graph.node_index(node)?;
                let entry = &mut self.nodes[i];
                set_param(&mut entry.dynamics, param, *value).map_err(|_| {
                    Error::UnknownParameter { node: node.clone(), path: param.clone() }
                })?;
                entry.model = build_node_model(&entry.dynamics)
                    .ok_or_else(|| Error::Config(format!("node {node:?} is not rebuildable")))??;
                Ok(())
            }
        }
    }
}

/// Assembled network dynamics `ẋ = Â x + B̂ u + affine`.
#[derive(Debug, Clone)]
pub struct GlobalModel {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub affine: DVector<f64>,
}

fn set_param(dyn_: &mut NodeDynamics, param: &str, value: f64) -> std::result::Result<(), ()> {
    let slot = match dyn_ {
        NodeDynamics::Dgu { r, l, c, g, z, v_set } => match param {
            "r" => r,
            "l" => l,
            "c" => c,
            "g" => g,
            "z" => z,
            "v_set" => v_set,
            _ => return Err(()),
        },
        NodeDynamics::Load { g, c } => match param {
            "g" => g,
            "c" => c,
            _ => return Err(()),
        },
        NodeDynamics::Custom => return Err(()),
    };
    *slot = value;
    Ok(())
}

/// Build the LTI model for a parametric node description. Returns `None`
/// for [`NodeDynamics::Custom`].
pub fn build_node_model(dynamics: &NodeDynamics) -> Option<Result<LtiNode>> {
    match *dynamics {
        NodeDynamics::Dgu { r, l, c, g, z, v_set } => Some(build_dgu(r, l, c, g, z, v_set)),
        NodeDynamics::Load { g, c } => Some(build_load(g, c)),
        NodeDynamics::Custom => None,
    }
}

/// Build the LTI model for a parametric edge description.
pub fn build_edge_model(dynamics: &EdgeDynamics, coupling_dim: usize) -> Result<LtiEdge> {
    match *dynamics {
        EdgeDynamics::Line { r, l } => {
            if coupling_dim != 1 {
                return Err(Error::Dimension("RL line requires coupling dimension 1".into()));
            }
            build_line(r, l)
        }
        EdgeDynamics::Custom => {
            Err(Error::Config("custom edge dynamics require an explicit model".into()))
        }
    }
}

/// Converter node with state (filter current, bus voltage, tracking
/// integral), port input the net current drawn by attached lines, port
/// output the bus voltage.
fn build_dgu(r: f64, l: f64, c: f64, g: f64, z: f64, v_set: f64) -> Result<LtiNode> {
    for (name, v) in [("r", r), ("l", l), ("c", c), ("g", g), ("z", z)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Config(format!("DGU parameter {name} must be finite and >= 0")));
        }
    }
    if l <= 0.0 || c <= 0.0 {
        return Err(Error::Config("DGU parameters l and c must be positive".into()));
    }
    let a = DMatrix::from_row_slice(
        3,
        3,
        &[-r / l, -1.0 / l, 0.0, 1.0 / c, -g / c, 0.0, 0.0, 1.0, 0.0],
    );
    let bu = DMatrix::from_column_slice(3, 1, &[1.0 / l, 0.0, 0.0]);
    let bw = DMatrix::from_column_slice(3, 1, &[0.0, 1.0 / c, -z]);
    let cm = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
    let labels = vec!["i".into(), "v".into(), "zeta".into()];
    LtiNode::new(a, bu, bw, cm, labels)?
        .with_affine(DVector::from_column_slice(&[0.0, 0.0, -v_set]))
}

fn build_load(g: f64, c: f64) -> Result<LtiNode> {
    if !(g.is_finite() && c.is_finite()) || g < 0.0 || c <= 0.0 {
        return Err(Error::Config("load requires g >= 0 and c > 0".into()));
    }
    LtiNode::uncontrolled(
        DMatrix::from_element(1, 1, -g / c),
        DMatrix::from_element(1, 1, 1.0 / c),
        DMatrix::identity(1, 1),
        vec!["v".into()],
    )
}

fn build_line(r: f64, l: f64) -> Result<LtiEdge> {
    if !(r.is_finite() && l.is_finite()) || r < 0.0 || l <= 0.0 {
        return Err(Error::Config("line requires r >= 0 and l > 0".into()));
    }
    LtiEdge::new(
        DMatrix::from_element(1, 1, -r / l),
        DMatrix::from_element(1, 1, 1.0 / l),
        DMatrix::identity(1, 1),
        vec!["i".into()],
    )
}
