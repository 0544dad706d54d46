//! Decentralized passivating controller synthesis with an inverse-optimal
//! cost interpretation.
//!
//! For a controllable node `(A, Bu, Bw, C)` we solve, over a symmetric
//! matrix `Y` and a scalar `s`:
//!
//! ```text
//! minimize    s
//! subject to  Y Cᵀ = Bw
//!             Y Aᵀ + A Y - 2 s Bu Buᵀ ⪯ -εI
//!             (s/2) Bu Buᵀ - ½ (A Y + Y Aᵀ) ⪰ εI
//!             Y Aᵀ + A Y - 2 s Bu Buᵀ ⪯ λ Y
//!             Y ⪰ εI,   s_min ≤ s ≤ s_max
//! ```
//!
//! The storage is `P = Y⁻¹`, the control penalty `R = I/(2s)` (maximal over
//! feasible points), the gain `K = -s BuᵀP`, and the dissipation shape
//! `Γ = Y W⁻¹ Y` with `W = -(Y Aᵀ + A Y - 2 s Bu Buᵀ)`, which makes the
//! closed-loop passivity certificate tight by construction.
//!
//! Numerics: the equality is eliminated by parameterizing `Y` over the
//! nullspace of `Y ↦ Y Cᵀ`, each matrix constraint is normalized, and the
//! problem is re-solved under the congruence `Y = T Y' Tᵀ` with
//! `T = chol(Y)` updated between solves until the objective settles. This
//! keeps the interior-point iterations well conditioned even when the
//! physical data spans many orders of magnitude.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::LtiNode;
use crate::mats::{self, serde_matrix};
use crate::sdp::{self, LinearRow, LmiBlock, SdpProblem, SdpSettings, SdpStatus};

#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    /// Decay-rate bound on the storage function (negative for a minimum
    /// decay rate).
    pub lambda: f64,
    /// Strictness margin, applied in the rescaled coordinates where
    /// `Y ≈ I`. Defaults to `1e-6·max(1, ‖A'‖_F)`.
    pub epsilon: Option<f64>,
    pub s_min: f64,
    pub s_max: f64,
    pub max_rescale_iters: usize,
    pub sdp: SdpSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            lambda: 0.0,
            epsilon: None,
            s_min: 1e-9,
            s_max: 1e9,
            max_rescale_iters: 12,
            sdp: SdpSettings::default(),
        }
    }
}

impl SynthesisOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        SynthesisOptions { lambda, ..Default::default() }
    }
}

/// Synthesis output for one node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisResult {
    #[serde(with = "serde_matrix")]
    pub y: DMatrix<f64>,
    /// Storage matrix `P = Y⁻¹`.
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    /// Optimal scalar; the control penalty is `R = I/(2s)`.
    pub s: f64,
    /// Control penalty matrix `I/(2s)`.
    #[serde(with = "serde_matrix")]
    pub r: DMatrix<f64>,
    /// Dissipation shape: `ψ(x) = ½ xᵀ Γ⁻¹ x` certifies strict passivity.
    #[serde(with = "serde_matrix")]
    pub gamma: DMatrix<f64>,
    /// State feedback gain `u = K x`.
    #[serde(with = "serde_matrix")]
    pub k: DMatrix<f64>,
}

/// Inverse-optimal running cost `xᵀQx + uᵀRu` certified for a node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostCertificate {
    #[serde(with = "serde_matrix")]
    pub q: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub r: DMatrix<f64>,
}

/// Gain realizing `u = -s BuᵀP x`.
pub fn controller_gain(s: f64, bu: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    -(bu.transpose() * p) * s
}

/// State cost certified by the synthesized controller:
/// `Q = (s/2) P Bu BuᵀP - ½ (P A + AᵀP)`.
pub fn controlled_state_cost(
    a: &DMatrix<f64>,
    bu: &DMatrix<f64>,
    p: &DMatrix<f64>,
    s: f64,
) -> DMatrix<f64> {
    let pb = p * bu;
    let lyap = p * a + a.transpose() * p;
    mats::symmetrize(&((&pb * pb.transpose()) * (s / 2.0) - lyap * 0.5))
}

/// State cost contributed by an uncontrolled subsystem with natural storage
/// `P`: `Q = -½ (P A + AᵀP)`.
pub fn uncontrolled_state_cost(a: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    mats::symmetrize(&(-(p * a + a.transpose() * p) * 0.5))
}

pub fn build_cost_certificate(node: &LtiNode, res: &SynthesisResult) -> CostCertificate {
    CostCertificate {
        q: controlled_state_cost(&node.a, &node.bu, &res.p, res.s),
        r: res.r.clone(),
    }
}

/// Recompute the gain for a smaller control penalty `R̄` while keeping the
/// synthesized storage: `K̄ = -½ R̄⁻¹ BuᵀP`. Valid only when `R - R̄ ⪰ 0`;
/// larger penalties void both the passivity and the optimality claims.
pub fn retune(node: &LtiNode, res: &SynthesisResult, rbar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = node.num_inputs();
    if rbar.nrows() != m || rbar.ncols() != m {
        return Err(Error::Dimension("retune penalty dimension must match input count".into()));
    }
    if mats::min_eig_sym(rbar) <= 0.0 {
        return Err(Error::InvalidRetune("new control penalty must be positive definite".into()));
    }
    let gap = &res.r - rbar;
    let tol = 1e-9 * (1.0 + mats::max_eig_sym(&res.r).abs());
    if mats::min_eig_sym(&mats::symmetrize(&gap)) < -tol {
        return Err(Error::InvalidRetune(format!(
            "new penalty exceeds the synthesized maximum {:.6}",
            res.r[(0, 0)]
        )));
    }
    let rbar_inv = rbar
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("retune penalty is singular".into()))?
        .inverse();
    Ok(-(rbar_inv * node.bu.transpose() * &res.p) * 0.5)
}

/// Orthonormal symmetric matrices spanning solutions of `N Cᵀ = 0`, plus a
/// particular symmetric solution of `Y Cᵀ = Bw`, both in svec coordinates.
fn port_alignment_basis(
    c: &DMatrix<f64>,
    bw: &DMatrix<f64>,
) -> Result<(DVector<f64>, Vec<DVector<f64>>)> {
    let n = c.ncols();
    let p = c.nrows();
    let d = sdp::svec_len(n);
    // columns: svec basis matrices mapped through Y ↦ vec(Y Cᵀ)
    let mut m = DMatrix::zeros(n * p, d);
    for k in 0..d {
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let ek = sdp::smat(e.as_slice(), n);
        let img = &ek * c.transpose();
        for j in 0..p {
            for i in 0..n {
                m[(j * n + i, k)] = img[(i, j)];
            }
        }
    }
    let mut rhs = DVector::zeros(n * p);
    for j in 0..p {
        for i in 0..n {
            rhs[j * n + i] = bw[(i, j)];
        }
    }

    let g = mats::symmetrize(&(m.transpose() * &m));
    let eig = nalgebra::SymmetricEigen::new(g);
    let lam_max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let rank_tol = 1e-12 * lam_max.max(1.0);
    let mtb = m.transpose() * &rhs;

    let mut y_part = DVector::zeros(d);
    let mut nullspace = Vec::new();
    for i in 0..d {
        let v = eig.eigenvectors.column(i).into_owned();
        if eig.eigenvalues[i] > rank_tol {
            y_part += &v * (v.dot(&mtb) / eig.eigenvalues[i]);
        } else {
            nullspace.push(v);
        }
    }
    let residual = (&m * &y_part - &rhs).norm();
    if residual > 1e-8 * (1.0 + rhs.norm()) {
        return Err(Error::Infeasible {
            constraint: "port-alignment (no symmetric Y with Y Cᵀ = Bw)".into(),
        });
    }
    Ok((y_part, nullspace))
}

struct ScaledProblem {
    prob: SdpProblem,
    y_part: DVector<f64>,
    nullspace: Vec<DVector<f64>>,
    n: usize,
}

/// Assemble the SDP in scaled coordinates. Variable layout: nullspace
/// coefficients first, then `s`. `relax` appends one slack variable per
/// matrix constraint class for infeasibility diagnosis.
fn build_problem(
    a: &DMatrix<f64>,
    bu: &DMatrix<f64>,
    bw: &DMatrix<f64>,
    c: &DMatrix<f64>,
    opts: &SynthesisOptions,
    relax: bool,
) -> Result<ScaledProblem> {
    let n = a.nrows();
    let (y_part, nullspace) = port_alignment_basis(c, bw)?;
    let k = nullspace.len();
    let num_slacks = if relax { 4 } else { 0 };
    let nv = k + 1 + num_slacks;
    let s_idx = k;

    let eps = opts.epsilon.unwrap_or_else(|| 1e-6 * mats::frob(a).max(1.0));
    let nrm = mats::frob(a).max(1.0);
    let bbt = bu * bu.transpose();
    let y0 = sdp::smat(y_part.as_slice(), n);
    let eye = DMatrix::identity(n, n);

    let mut prob = SdpProblem::new(nv);
    if relax {
        for j in 0..num_slacks {
            prob.objective[k + 1 + j] = 1.0;
            prob.nonneg_rows.push(LinearRow {
                constant: 0.0,
                coeffs: (0..nv).map(|i| if i == k + 1 + j { 1.0 } else { 0.0 }).collect(),
            });
        }
    } else {
        prob.objective[s_idx] = 1.0;
    }

    // F(Y) helper applied to the particular solution and each basis matrix
    let lyap = |y: &DMatrix<f64>| a * y + y * a.transpose();

    // class 0, passivity: Y Aᵀ + A Y - 2 s BuBuᵀ + εI ⪯ 0
    let mut blk = LmiBlock::new(n, nv);
    blk.constant = (lyap(&y0) + &eye * eps) / nrm;
    for (i, nb) in nullspace.iter().enumerate() {
        blk.coeffs[i] = lyap(&sdp::smat(nb.as_slice(), n)) / nrm;
    }
    blk.coeffs[s_idx] = -&bbt * (2.0 / nrm);
    prob.lmis.push(blk);

    // class 1, state-cost positivity: εI + ½(A Y + Y Aᵀ) - (s/2) BuBuᵀ ⪯ 0
    let mut blk = LmiBlock::new(n, nv);
    blk.constant = (&eye * eps + lyap(&y0) * 0.5) / nrm;
    for (i, nb) in nullspace.iter().enumerate() {
        blk.coeffs[i] = lyap(&sdp::smat(nb.as_slice(), n)) * (0.5 / nrm);
    }
    blk.coeffs[s_idx] = -&bbt * (0.5 / nrm);
    prob.lmis.push(blk);

    // class 2, decay rate: Y Aᵀ + A Y - 2 s BuBuᵀ - λY ⪯ 0
    let mut blk = LmiBlock::new(n, nv);
    blk.constant = (lyap(&y0) - &y0 * opts.lambda) / nrm;
    for (i, nb) in nullspace.iter().enumerate() {
        let nm = sdp::smat(nb.as_slice(), n);
        blk.coeffs[i] = (lyap(&nm) - &nm * opts.lambda) / nrm;
    }
    blk.coeffs[s_idx] = -&bbt * (2.0 / nrm);
    prob.lmis.push(blk);

    // class 3, storage positivity: εI - Y ⪯ 0
    let mut blk = LmiBlock::new(n, nv);
    blk.constant = &eye * eps - &y0;
    for (i, nb) in nullspace.iter().enumerate() {
        blk.coeffs[i] = -sdp::smat(nb.as_slice(), n);
    }
    prob.lmis.push(blk);

    if relax {
        for (class, blk) in prob.lmis.iter_mut().enumerate() {
            blk.coeffs[k + 1 + class] = -DMatrix::identity(n, n);
        }
    }

    // s bounds
    let mut lo = vec![0.0; nv];
    lo[s_idx] = 1.0;
    prob.nonneg_rows.push(LinearRow { constant: -opts.s_min, coeffs: lo });
    let mut hi = vec![0.0; nv];
    hi[s_idx] = -1.0;
    prob.nonneg_rows.push(LinearRow { constant: opts.s_max, coeffs: hi });

    Ok(ScaledProblem { prob, y_part, nullspace, n })
}

fn recover_y(sp: &ScaledProblem, x: &[f64]) -> DMatrix<f64> {
    let mut y = sp.y_part.clone();
    for (i, nb) in sp.nullspace.iter().enumerate() {
        y += nb * x[i];
    }
    sdp::smat(y.as_slice(), sp.n)
}

const CLASS_NAMES: [&str; 4] =
    ["passivity", "state-cost-positivity", "decay-rate", "storage-positivity"];

/// Solve a relaxed problem to name which constraint classes cannot be met.
fn diagnose_infeasibility(
    a: &DMatrix<f64>,
    bu: &DMatrix<f64>,
    bw: &DMatrix<f64>,
    c: &DMatrix<f64>,
    opts: &SynthesisOptions,
) -> Error {
    let Ok(sp) = build_problem(a, bu, bw, c, opts, true) else {
        return Error::Infeasible { constraint: "port-alignment".into() };
    };
    let k = sp.nullspace.len();
    // classes 0..2 are normalized by ‖A‖_F inside build_problem, class 3 is
    // not; a class counts as violated when its slack clears a fraction of
    // the strictness margin at the matching scale
    let eps = opts.epsilon.unwrap_or_else(|| 1e-6 * mats::frob(a).max(1.0));
    let nrm = mats::frob(a).max(1.0);
    let thresholds = [eps / nrm, eps / nrm, eps / nrm, eps].map(|v| 0.25 * v);
    match sdp::solve(&sp.prob, &opts.sdp) {
        Ok(sol) if matches!(sol.status, SdpStatus::Optimal | SdpStatus::AlmostOptimal) => {
            let violated: Vec<&str> = (0..4)
                .filter(|&j| sol.x[k + 1 + j] > thresholds[j])
                .map(|j| CLASS_NAMES[j])
                .collect();
            let what = if violated.is_empty() {
                "unknown (relaxation found no violated class)".to_string()
            } else {
                violated.join(", ")
            };
            Error::Infeasible { constraint: what }
        }
        _ => Error::Infeasible { constraint: "unknown (diagnostic solve failed)".into() },
    }
}

/// Synthesize the maximal-penalty passivating controller for one node.
pub fn synthesize_node(node: &LtiNode, opts: &SynthesisOptions) -> Result<SynthesisResult> {
    if !node.is_controlled() {
        return Err(Error::Config("cannot synthesize a controller for an uncontrolled node".into()));
    }
    let n = node.dim();
    let mut t = DMatrix::<f64>::identity(n, n);
    let mut prev_s: Option<f64> = None;
    let mut last: Option<(DMatrix<f64>, f64)> = None;
    let mut last_status = SdpStatus::Inaccurate;
    let mut last_scaled: Option<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = None;

    for _ in 0..opts.max_rescale_iters {
        let t_lu = t.clone().lu();
        let t_inv = t_lu
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned("rescaling transform is singular".into()))?;
        let a_s = &t_inv * &node.a * &t;
        let bu_s = &t_inv * &node.bu;
        let bw_s = &t_inv * &node.bw;
        let c_s = &node.c * &t;

        let sp = build_problem(&a_s, &bu_s, &bw_s, &c_s, opts, false)?;
        let sol = sdp::solve(&sp.prob, &opts.sdp)?;
        last_status = sol.status;
        if sol.status == SdpStatus::Infeasible {
            return Err(diagnose_infeasibility(&a_s, &bu_s, &bw_s, &c_s, opts));
        }
        last_scaled = Some((a_s, bu_s, bw_s, c_s));

        let s = sol.x[sp.nullspace.len()];
        let y_scaled = recover_y(&sp, &sol.x);
        let y = mats::symmetrize(&(&t * y_scaled * t.transpose()));

        let converged = prev_s
            .map(|p| (s - p).abs() <= 1e-7 * s.abs().max(1.0))
            .unwrap_or(false)
            && sol.status == SdpStatus::Optimal;
        prev_s = Some(s);
        last = Some((y.clone(), s));
        if converged {
            break;
        }

        t = match y.clone().cholesky() {
            Some(ch) => ch.l(),
            // keep the previous scaling if the iterate lost definiteness
            None => t,
        };
    }

    let (y, s) = last.ok_or_else(|| Error::Solver("no solver iterations ran".into()))?;
    let degenerate = mats::cond_sym(&y) > 1e12;
    if degenerate || !matches!(last_status, SdpStatus::Optimal | SdpStatus::AlmostOptimal) {
        // a stalled solve or a singular iterate usually means the problem
        // is infeasible only at the strictness margin; name the class
        if let Some((a_s, bu_s, bw_s, c_s)) = &last_scaled {
            let diag = diagnose_infeasibility(a_s, bu_s, bw_s, c_s, opts);
            if !matches!(&diag, Error::Infeasible { constraint } if constraint.starts_with("unknown"))
            {
                return Err(diag);
            }
        }
        if degenerate {
            return Err(Error::IllConditioned(
                "synthesized storage is numerically singular (cond(Y) > 1e12)".into(),
            ));
        }
        return Err(Error::Solver(format!("solver did not converge ({last_status:?})")));
    }
    let p = y
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("synthesized Y is not positive definite".into()))?
        .inverse();
    let p = mats::symmetrize(&p);

    let bbt = &node.bu * node.bu.transpose();
    let w = -(&y * node.a.transpose() + &node.a * &y - &bbt * (2.0 * s));
    let w = mats::symmetrize(&w);
    let w_inv = w
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("dissipation certificate is singular".into()))?
        .inverse();
    let gamma = mats::symmetrize(&(&y * w_inv * &y));

    let m = node.num_inputs();
    let r = DMatrix::identity(m, m) / (2.0 * s);
    let k = controller_gain(s, &node.bu, &p);

    Ok(SynthesisResult { y, p, s, r, gamma, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{self, PassivityCertificate};
    use crate::netgraph::{build_node_model, NodeDynamics};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn scalar_node() -> LtiNode {
        LtiNode::new(
            dmatrix![-1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            vec!["x".into()],
        )
        .unwrap()
    }

    fn table1_dgu() -> LtiNode {
        let d = NodeDynamics::Dgu { r: 0.2, l: 1.8e-3, c: 2.2e-3, g: 0.01, z: 1.0, v_set: 48.0 };
        build_node_model(&d).unwrap().unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        // Y = 1 forced by the port alignment; the decay-rate constraint
        // -2 - 2s <= -8 binds, so s* = 3, R = 1/6, K = -3, Γ = 1/8.
        let node = scalar_node();
        let res = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0)).unwrap();
        assert_relative_eq!(res.y[(0, 0)], 1.0, max_relative = 1e-6);
        assert_relative_eq!(res.s, 3.0, max_relative = 1e-5);
        assert_relative_eq!(res.r[(0, 0)], 1.0 / 6.0, max_relative = 1e-5);
        assert_relative_eq!(res.k[(0, 0)], -3.0, max_relative = 1e-5);
        assert_relative_eq!(res.gamma[(0, 0)], 0.125, max_relative = 1e-4);
    }

    #[test]
    fn dgu_penalty_matches_reference() {
        let node = table1_dgu();
        let res = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0)).unwrap();
        assert_relative_eq!(res.s, 0.32160203, max_relative = 1e-3);
        assert_relative_eq!(res.r[(0, 0)], 1.5547, max_relative = 1e-3);
    }

    #[test]
    fn synthesized_certificate_is_tight() {
        // Γ = Y W⁻¹ Y makes the closed-loop passivity margin exactly zero.
        let node = table1_dgu();
        let res = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0)).unwrap();
        let cert = PassivityCertificate::new(res.p.clone(), res.gamma.clone()).unwrap();
        let chk = linsys::check_strict_passivity(
            &node.a,
            Some(&node.bu),
            &node.bw,
            &node.c,
            Some(&res.k),
            &cert,
            1e-8,
        )
        .unwrap();
        assert!(chk.passed, "margin {} tol {}", chk.margin, chk.tol);
    }

    #[test]
    fn port_scale_covariance() {
        // Scaling Bw and C together rescales Y but leaves s, R, K unchanged.
        let node = table1_dgu();
        let alpha = 3.0;
        let scaled = LtiNode::new(
            node.a.clone(),
            node.bu.clone(),
            &node.bw * alpha,
            &node.c * alpha,
            node.state_labels.clone(),
        )
        .unwrap();
        let opts = SynthesisOptions::with_lambda(-8.0);
        let r0 = synthesize_node(&node, &opts).unwrap();
        let r1 = synthesize_node(&scaled, &opts).unwrap();
        assert_relative_eq!(r0.s, r1.s, max_relative = 1e-5);
        assert_relative_eq!(r0.k[(0, 0)], r1.k[(0, 0)], max_relative = 1e-4);
    }

    #[test]
    fn zero_feedforward_is_infeasible() {
        let d = NodeDynamics::Dgu { r: 0.2, l: 1.8e-3, c: 2.2e-3, g: 0.01, z: 0.0, v_set: 48.0 };
        let node = build_node_model(&d).unwrap().unwrap();
        let err = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0)).unwrap_err();
        match err {
            Error::Infeasible { constraint } => {
                assert!(!constraint.is_empty(), "diagnosis should name a constraint class");
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn retune_monotone_and_bounded() {
        let node = table1_dgu();
        let res = synthesize_node(&node, &SynthesisOptions::with_lambda(-8.0)).unwrap();

        // smaller penalty: valid, and its state cost dominates the original
        let rbar = dmatrix![0.5];
        let kbar = retune(&node, &res, &rbar).unwrap();
        assert!(kbar[(0, 0)].abs() > res.k[(0, 0)].abs());
        let q0 = controlled_state_cost(&node.a, &node.bu, &res.p, res.s);
        let s_bar = 0.5 / rbar[(0, 0)];
        let q1 = controlled_state_cost(&node.a, &node.bu, &res.p, s_bar);
        assert!(mats::min_eig_sym(&(&q1 - &q0)) >= -1e-9 * mats::max_eig_sym(&q0).abs());

        // larger penalty: rejected
        let err = retune(&node, &res, &dmatrix![2.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidRetune(_)));
    }
}
