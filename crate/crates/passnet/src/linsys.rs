//! LTI subsystem types, quadratic storage functions and strict-passivity
//! certification.
//!
//! A node subsystem is `ẋ = A x + Bu u + Bw w, y = C x`; an edge subsystem
//! has no control input. Strict passivity of a closed-loop node `Ã = A + Bu K`
//! with storage `V = ½ xᵀP x` and dissipation `ψ = ½ xᵀΓ⁻¹x` is equivalent to
//! negative semidefiniteness of the port matrix assembled by [`bmi_matrix`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mats::{self, serde_matrix};

fn check_finite(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        Err(Error::NonFinite(name.into()))
    } else {
        Ok(())
    }
}

fn check_subsystem(
    a: &DMatrix<f64>,
    bw: &DMatrix<f64>,
    c: &DMatrix<f64>,
    labels: &[String],
) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension(format!("A must be square, got {}x{}", n, a.ncols())));
    }
    if bw.nrows() != n {
        return Err(Error::Dimension("Bw row count must match state dimension".into()));
    }
    if c.ncols() != n {
        return Err(Error::Dimension("C column count must match state dimension".into()));
    }
    if c.nrows() != bw.ncols() {
        return Err(Error::Dimension("C rows must equal Bw columns (port dimension)".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension("state label count must match state dimension".into()));
    }
    check_finite("A", a)?;
    check_finite("Bw", bw)?;
    check_finite("C", c)
}

/// Controllable node subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiNode {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    /// Control input matrix; zero columns for an uncontrolled node.
    #[serde(with = "serde_matrix")]
    pub bu: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub bw: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub c: DMatrix<f64>,
    /// Constant drift `ẋ = A x + ... + affine`, e.g. setpoint forcing.
    pub affine: DVector<f64>,
    pub state_labels: Vec<String>,
}

impl LtiNode {
    pub fn new(
        a: DMatrix<f64>,
        bu: DMatrix<f64>,
        bw: DMatrix<f64>,
        c: DMatrix<f64>,
        state_labels: Vec<String>,
    ) -> Result<Self> {
        check_subsystem(&a, &bw, &c, &state_labels)?;
        if bu.nrows() != a.nrows() {
            return Err(Error::Dimension("Bu row count must match state dimension".into()));
        }
        check_finite("Bu", &bu)?;
        let affine = DVector::zeros(a.nrows());
        Ok(LtiNode { a, bu, bw, c, affine, state_labels })
    }

    pub fn with_affine(mut self, affine: DVector<f64>) -> Result<Self> {
        if affine.len() != self.dim() {
            return Err(Error::Dimension("affine length must match state dimension".into()));
        }
        if affine.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("affine".into()));
        }
        self.affine = affine;
        Ok(self)
    }

    /// Uncontrolled node (zero-column Bu), e.g. a passive load bus.
    pub fn uncontrolled(
        a: DMatrix<f64>,
        bw: DMatrix<f64>,
        c: DMatrix<f64>,
        state_labels: Vec<String>,
    ) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DMatrix::zeros(n, 0), bw, c, state_labels)
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.bu.ncols()
    }

    /// Port (coupling) dimension p.
    pub fn port_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_controlled(&self) -> bool {
        self.bu.ncols() > 0 && self.bu.iter().any(|v| *v != 0.0)
    }
}

/// Uncontrollable edge subsystem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiEdge {
    #[serde(with = "serde_matrix")]
    pub a: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub bw: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub c: DMatrix<f64>,
    pub state_labels: Vec<String>,
}

impl LtiEdge {
    pub fn new(
        a: DMatrix<f64>,
        bw: DMatrix<f64>,
        c: DMatrix<f64>,
        state_labels: Vec<String>,
    ) -> Result<Self> {
        check_subsystem(&a, &bw, &c, &state_labels)?;
        Ok(LtiEdge { a, bw, c, state_labels })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn port_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// A quadratic strict-passivity certificate: storage `V = ½ xᵀP x` and
/// dissipation `ψ = ½ xᵀΓ⁻¹x`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassivityCertificate {
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub gamma: DMatrix<f64>,
    /// Most positive eigenvalue of the certified port matrix; ≤ 0 (up to
    /// tolerance) when the certificate is valid.
    pub margin: f64,
}

impl PassivityCertificate {
    pub fn new(p: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("P", &p), ("Gamma", &gamma)] {
            check_finite(name, m)?;
            if m.nrows() != m.ncols() {
                return Err(Error::Dimension(format!("{name} must be square")));
            }
            if mats::min_eig_sym(m) <= 0.0 {
                return Err(Error::IllConditioned(format!("{name} is not positive definite")));
            }
        }
        if p.nrows() != gamma.nrows() {
            return Err(Error::Dimension("P and Gamma dimensions differ".into()));
        }
        Ok(PassivityCertificate { p, gamma, margin: f64::NAN })
    }
}

/// Assemble the symmetric port matrix whose negative semidefiniteness
/// certifies strict passivity of the closed loop `A_cl` with storage P and
/// dissipation Γ⁻¹:
///
/// ```text
/// [ A_clᵀP + P A_cl + Γ⁻¹   P Bw − Cᵀ ]
/// [ BwᵀP − C                0         ]
/// ```
pub fn bmi_matrix(
    a_cl: &DMatrix<f64>,
    bw: &DMatrix<f64>,
    c: &DMatrix<f64>,
    p: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    let pd = c.nrows();
    if p.nrows() != n || gamma.nrows() != n || bw.nrows() != n || c.ncols() != n {
        return Err(Error::Dimension("bmi_matrix: inconsistent block dimensions".into()));
    }
    let gamma_inv = gamma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("Gamma is singular".into()))?
        .inverse();
    let top_left = a_cl.transpose() * p + p * a_cl + gamma_inv;
    let top_right = p * bw - c.transpose();
    let mut m = DMatrix::zeros(n + pd, n + pd);
    m.view_mut((0, 0), (n, n)).copy_from(&mats::symmetrize(&top_left));
    m.view_mut((0, n), (n, pd)).copy_from(&top_right);
    m.view_mut((n, 0), (pd, n)).copy_from(&top_right.transpose());
    Ok(m)
}

/// Outcome of a strict-passivity check.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PassivityCheck {
    pub passed: bool,
    /// Most positive eigenvalue of the port matrix.
    pub margin: f64,
    /// Tolerance the margin was compared against.
    pub tol: f64,
}

/// Scale-aware certification tolerance: `base · (1 + max block magnitude)`.
pub fn certification_tol(bmi: &DMatrix<f64>, base: f64) -> f64 {
    let max_abs = bmi.iter().map(|v| v.abs()).fold(0.0_f64, f64::max);
    base * (1.0 + max_abs)
}

/// Check strict passivity of a (possibly closed-loop) subsystem against a
/// certificate. `gain` closes the loop as `A + Bu K`; pass `None` for an
/// edge or an open-loop node.
pub fn check_strict_passivity(
    a: &DMatrix<f64>,
    bu: Option<&DMatrix<f64>>,
    bw: &DMatrix<f64>,
    c: &DMatrix<f64>,
    gain: Option<&DMatrix<f64>>,
    cert: &PassivityCertificate,
    tol_base: f64,
) -> Result<PassivityCheck> {
    let a_cl = match (bu, gain) {
        (Some(bu), Some(k)) => {
            if bu.ncols() != k.nrows() || k.ncols() != a.ncols() {
                return Err(Error::Dimension("gain dimensions inconsistent with Bu/A".into()));
            }
            a + bu * k
        }
        _ => a.clone(),
    };
    let bmi = bmi_matrix(&a_cl, bw, c, &cert.p, &cert.gamma)?;
    let margin = mats::max_eig_sym(&bmi);
    let tol = certification_tol(&bmi, tol_base);
    Ok(PassivityCheck { passed: margin <= tol, margin, tol })
}

/// Assemble the global storage matrix `P̂ = blockdiag(⊕P_node, ⊕P_edge)` in
/// assembly order (all node storages first, then all edge storages).
pub fn global_storage(node_storages: &[DMatrix<f64>], edge_storages: &[DMatrix<f64>]) -> DMatrix<f64> {
    let blocks: Vec<DMatrix<f64>> =
        node_storages.iter().chain(edge_storages.iter()).cloned().collect();
    mats::block_diag(&blocks)
}
