//! Independent verification of synthesized designs: Riccati and Lyapunov
//! oracles, global certificate assembly, and machine-readable reports.
//!
//! The Riccati solver here is deliberately independent of the SDP pipeline
//! (matrix sign function plus a Newton polish) so it can act as an oracle
//! for the optimality claims of the synthesis.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsys::{self, PassivityCertificate};
use crate::mats::{self, serde_matrix};
use crate::netgraph::{EdgeDynamics, NetworkModel, NodeDynamics};
use crate::synthesis::{controlled_state_cost, uncontrolled_state_cost, SynthesisResult};

/// Solve `AᵀX + XA + Q = 0` densely. Valid when A and -Aᵀ share no
/// eigenvalues (in particular for Hurwitz A).
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension("lyapunov: A and Q must be square of equal size".into()));
    }
    // vec(AᵀX + XA) = (I⊗Aᵀ + Aᵀ⊗I) vec(X), column-major vec
    let eye = DMatrix::identity(n, n);
    let m = eye.kronecker(&a.transpose()) + a.transpose().kronecker(&eye);
    let rhs = DVector::from_column_slice((-q).as_slice());
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllConditioned("Lyapunov operator is singular".into()))?;
    Ok(mats::symmetrize(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Frobenius norm of the Riccati residual
/// `AᵀM + MA - M B R⁻¹ Bᵀ M + Q`, relative to `max(1, ‖Q‖_F)`.
pub fn are_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<f64> {
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("control penalty is not positive definite".into()))?
        .inverse();
    let res = a.transpose() * m + m * a - m * b * &r_inv * b.transpose() * m + q;
    Ok(mats::frob(&res) / mats::frob(q).max(1.0))
}

/// Stabilizing Riccati solution and the corresponding gain (`u = -K x`).
#[derive(Debug, Clone)]
pub struct LqrSolution {
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

/// Solve the continuous-time LQR problem `min ∫ xᵀQx + uᵀRu` by the matrix
/// sign function of the Hamiltonian with determinant scaling, followed by
/// Newton iterations (each a Lyapunov solve) to polish the result.
pub fn lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<LqrSolution> {
    let n = a.nrows();
    let r_inv = r
        .clone()
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("control penalty is not positive definite".into()))?
        .inverse();
    let brb = b * &r_inv * b.transpose();

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&brb));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    // sign iteration Z ← (Z/μ + μ Z⁻¹)/2 with μ = |det Z|^{1/2n}
    let mut z = h;
    for iter in 0..200 {
        let lu = z.clone().lu();
        let det: f64 = lu.determinant();
        let z_inv = lu
            .try_inverse()
            .ok_or_else(|| Error::RiccatiDivergence("Hamiltonian iterate is singular".into()))?;
        let mu = det.abs().powf(1.0 / (2.0 * n as f64)).max(1e-300);
        let next = (&z / mu + z_inv * mu) * 0.5;
        let delta = mats::frob(&(&next - &z)) / mats::frob(&next).max(1.0);
        z = next;
        if delta < 1e-13 {
            break;
        }
        if iter == 199 {
            return Err(Error::RiccatiDivergence("sign iteration did not converge".into()));
        }
    }

    // stable invariant subspace spans the range of (I - sign(H))/2
    let proj = (DMatrix::identity(2 * n, 2 * n) - &z) * 0.5;
    let svd = proj.svd(true, false);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let v1 = u.view((0, 0), (n, n)).into_owned();
    let v2 = u.view((n, 0), (n, n)).into_owned();
    let mut m = v1
        .lu()
        .try_inverse()
        .map(|v1i| mats::symmetrize(&(v2 * v1i)))
        .ok_or_else(|| Error::RiccatiDivergence("stable subspace is not a graph".into()))?;

    // Newton polish: with G = R⁻¹BᵀM, solve the closed-loop Lyapunov
    // equation for the exact cost of that gain, which contracts to the
    // stabilizing Riccati solution
    for _ in 0..15 {
        let g = &r_inv * b.transpose() * &m;
        let a_cl = a - b * &g;
        let qq = q + g.transpose() * r * &g;
        let next = lyapunov(&a_cl, &qq)?;
        let delta = mats::frob(&(&next - &m)) / mats::frob(&next).max(1.0);
        m = next;
        if delta < 1e-14 {
            break;
        }
    }

    let k = &r_inv * b.transpose() * &m;
    Ok(LqrSolution { m, k })
}

/// Natural storage, dissipation rate (Γ⁻¹) and state cost of an
/// uncontrolled subsystem, derived from its physical parameters.
fn natural_node_blocks(dynamics: &NodeDynamics) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    match *dynamics {
        NodeDynamics::Load { g, c } => Some((
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, 2.0 * g),
        )),
        _ => None,
    }
}

fn natural_edge_blocks(dynamics: &EdgeDynamics) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    match *dynamics {
        EdgeDynamics::Line { r, l } => Some((
            DMatrix::from_element(1, 1, l),
            DMatrix::from_element(1, 1, 2.0 * r),
        )),
        EdgeDynamics::Custom => None,
    }
}

/// Globally assembled closed-loop design: dynamics, gain, storage,
/// dissipation and the inverse-optimal cost matrices.
#[derive(Debug, Clone)]
pub struct GlobalDesign {
    /// Open-loop dynamics.
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    /// Closed loop `A + Bu K`.
    pub a_cl: DMatrix<f64>,
    /// Global gain, `u = K x̂` (zero over edge states).
    pub k: DMatrix<f64>,
    /// Global storage `P̂` (synthesized blocks for controlled nodes,
    /// natural storages elsewhere).
    pub p: DMatrix<f64>,
    /// Global dissipation rate `Γ̂⁻¹`; `ψ(x̂) = ½ x̂ᵀΓ̂⁻¹x̂`.
    pub gamma_inv: DMatrix<f64>,
    /// Global state cost `Q̂`.
    pub q: DMatrix<f64>,
    /// Global control penalty `R̂`.
    pub r: DMatrix<f64>,
    pub affine: DVector<f64>,
    /// State offset of each subsystem block (nodes then edges).
    pub block_offsets: Vec<usize>,
}

/// Assemble the closed-loop network design from per-node synthesis results
/// (keyed by node id; every controlled node needs an entry) and the natural
/// certificates of loads and lines.
pub fn assemble_design(
    network: &NetworkModel,
    results: &BTreeMap<String, SynthesisResult>,
) -> Result<GlobalDesign> {
    let gm = network.assemble_global()?;
    let n = gm.a.nrows();

    let mut p = DMatrix::zeros(n, n);
    let mut gamma_inv = DMatrix::zeros(n, n);
    let mut q = DMatrix::zeros(n, n);
    let mut r_blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut k = DMatrix::zeros(gm.bu.ncols(), n);
    let mut block_offsets = Vec::new();

    let mut off = 0;
    let mut in_off = 0;
    for node in network.nodes() {
        block_offsets.push(off);
        let d = node.model.dim();
        if node.model.is_controlled() {
            let res = results.get(&node.id).ok_or_else(|| {
                Error::Config(format!("no synthesis result supplied for controlled node {:?}", node.id))
            })?;
            if res.p.nrows() != d {
                return Err(Error::Dimension(format!(
                    "synthesis result for {:?} has wrong dimension",
                    node.id
                )));
            }
            p.view_mut((off, off), (d, d)).copy_from(&res.p);
            let ginv = res
                .gamma
                .clone()
                .cholesky()
                .ok_or_else(|| Error::IllConditioned("synthesized Γ is singular".into()))?
                .inverse();
            gamma_inv.view_mut((off, off), (d, d)).copy_from(&ginv);
            q.view_mut((off, off), (d, d)).copy_from(&controlled_state_cost(
                &node.model.a,
                &node.model.bu,
                &res.p,
                res.s,
            ));
            let mu = node.model.num_inputs();
            k.view_mut((in_off, off), (mu, d)).copy_from(&res.k);
            r_blocks.push(res.r.clone());
            in_off += mu;
        } else {
            let (pn, gn) = natural_node_blocks(&node.dynamics).ok_or_else(|| {
                Error::Config(format!(
                    "uncontrolled node {:?} has no derivable storage; supply one",
                    node.id
                ))
            })?;
            p.view_mut((off, off), (d, d)).copy_from(&pn);
            gamma_inv.view_mut((off, off), (d, d)).copy_from(&gn);
            q.view_mut((off, off), (d, d))
                .copy_from(&uncontrolled_state_cost(&node.model.a, &pn));
            off += 0;
        }
        off += d;
    }
    for edge in network.edges() {
        block_offsets.push(off);
        let d = edge.model.dim();
        let (pe, ge) = natural_edge_blocks(&edge.dynamics).ok_or_else(|| {
            Error::Config("custom edge has no derivable storage; supply one".into())
        })?;
        p.view_mut((off, off), (d, d)).copy_from(&pe);
        gamma_inv.view_mut((off, off), (d, d)).copy_from(&ge);
        q.view_mut((off, off), (d, d)).copy_from(&uncontrolled_state_cost(&edge.model.a, &pe));
        off += d;
    }

    let r = mats::block_diag(&r_blocks);
    let a_cl = &gm.a + &gm.bu * &k;
    Ok(GlobalDesign {
        a: gm.a,
        bu: gm.bu,
        a_cl,
        k,
        p,
        gamma_inv,
        q,
        r,
        affine: gm.affine,
        block_offsets,
    })
}

impl GlobalDesign {
    /// Exact infinite-horizon cost matrix `X` of the closed loop:
    /// `∫ x̂ᵀQ̂x̂ + uᵀR̂u dt = x̂₀ᵀ X x̂₀` with `u = K x̂`.
    pub fn cost_to_go(&self) -> Result<DMatrix<f64>> {
        let q_total = &self.q + self.k.transpose() * &self.r * &self.k;
        lyapunov(&self.a_cl, &q_total)
    }
}

/// Evaluate the network state cost as the sum of purely local terms:
/// `Σ_nodes [-∇Vᵢᵀ Aᵢxᵢ + ¼ ∇Vᵢᵀ Buᵢ Rᵢ⁻¹ Buᵢᵀ ∇Vᵢ] + Σ_edges [-∇Vⱼᵀ Aⱼxⱼ]`.
/// This must agree with `x̂ᵀ Q̂ x̂` for the assembled `Q̂`.
pub fn local_cost_sum(
    network: &NetworkModel,
    results: &BTreeMap<String, SynthesisResult>,
    x: &DVector<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    let mut off = 0;
    for node in network.nodes() {
        let d = node.model.dim();
        let xi = x.rows(off, d).into_owned();
        if node.model.is_controlled() {
            let res = results.get(&node.id).ok_or_else(|| {
                Error::Config(format!("no synthesis result for node {:?}", node.id))
            })?;
            let grad = &res.p * &xi;
            let bu_grad = node.model.bu.transpose() * &grad;
            total += -grad.dot(&(&node.model.a * &xi))
                + 0.25 * (bu_grad.transpose() * res.r.clone().cholesky().unwrap().inverse() * &bu_grad)[(0, 0)];
        } else {
            let (pn, _) = natural_node_blocks(&node.dynamics)
                .ok_or_else(|| Error::Config("uncontrolled node without storage".into()))?;
            let grad = &pn * &xi;
            total += -grad.dot(&(&node.model.a * &xi));
        }
        off += d;
    }
    for edge in network.edges() {
        let d = edge.model.dim();
        let xi = x.rows(off, d).into_owned();
        let (pe, _) = natural_edge_blocks(&edge.dynamics)
            .ok_or_else(|| Error::Config("custom edge without storage".into()))?;
        let grad = &pe * &xi;
        total += -grad.dot(&(&edge.model.a * &xi));
        off += d;
    }
    Ok(total)
}

/// Per-subsystem verification outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsystemReport {
    pub id: String,
    pub margin: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Machine-readable verification report for a full design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subsystems: Vec<SubsystemReport>,
    pub closed_loop_hurwitz: bool,
    pub spectral_abscissa: f64,
    /// Riccati residual of `M = P̂/2` against the assembled cost matrices.
    pub riccati_residual: f64,
    pub passed: bool,
    #[serde(with = "serde_matrix")]
    pub p_hat: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub q_hat: DMatrix<f64>,
}

/// Check every local passivity certificate, the closed-loop spectrum and
/// the global inverse-optimality identity.
pub fn verify_design(
    network: &NetworkModel,
    results: &BTreeMap<String, SynthesisResult>,
    tol_base: f64,
) -> Result<VerificationReport> {
    let design = assemble_design(network, results)?;
    let mut subsystems = Vec::new();

    for node in network.nodes() {
        let m = &node.model;
        let (cert, gain) = if m.is_controlled() {
            let res = results.get(&node.id).ok_or_else(|| {
                Error::Config(format!("no synthesis result for node {:?}", node.id))
            })?;
            (PassivityCertificate::new(res.p.clone(), res.gamma.clone())?, Some(res.k.clone()))
        } else {
            let (pn, ginv) = natural_node_blocks(&node.dynamics)
                .ok_or_else(|| Error::Config("uncontrolled node without storage".into()))?;
            let gamma = ginv
                .map(|v| if v > 0.0 { 1.0 / v } else { 1e15 });
            (PassivityCertificate::new(pn, gamma)?, None)
        };
        let chk = linsys::check_strict_passivity(
            &m.a,
            Some(&m.bu),
            &m.bw,
            &m.c,
            gain.as_ref(),
            &cert,
            tol_base,
        )?;
        subsystems.push(SubsystemReport {
            id: node.id.clone(),
            margin: chk.margin,
            tol: chk.tol,
            passed: chk.passed,
        });
    }
    for (idx, edge) in network.edges().iter().enumerate() {
        let m = &edge.model;
        let (pe, ginv) = natural_edge_blocks(&edge.dynamics)
            .ok_or_else(|| Error::Config("custom edge without storage".into()))?;
        let gamma = ginv.map(|v| if v > 0.0 { 1.0 / v } else { 1e15 });
        let cert = PassivityCertificate::new(pe, gamma)?;
        let chk = linsys::check_strict_passivity(&m.a, None, &m.bw, &m.c, None, &cert, tol_base)?;
        subsystems.push(SubsystemReport {
            id: format!("{}-{}#{}", edge.source, edge.sink, idx),
            margin: chk.margin,
            tol: chk.tol,
            passed: chk.passed,
        });
    }

    let abscissa = mats::spectral_abscissa(&design.a_cl);
    let hurwitz = abscissa < 0.0;
    let riccati_residual =
        are_residual(&design.a, &design.bu, &design.q, &design.r, &(&design.p * 0.5))?;

    let passed = subsystems.iter().all(|s| s.passed) && hurwitz && riccati_residual <= 1e-6;
    Ok(VerificationReport {
        subsystems,
        closed_loop_hurwitz: hurwitz,
        spectral_abscissa: abscissa,
        riccati_residual,
        passed,
        p_hat: design.p,
        q_hat: design.q,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microgrid::build_case_study;
    use crate::synthesis::{synthesize_node, SynthesisOptions};
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_riccati_closed_forms() {
        // A=0, B=1, Q=1, R=1: M² = 1 so M = 1, gain 1
        let sol = lqr(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(sol.m[(0, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(sol.k[(0, 0)], 1.0, max_relative = 1e-12);

        // A=1, B=1, Q=3, R=1: 2M - M² + 3 = 0 so M = 3, closed loop -2
        let sol = lqr(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![3.0], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(sol.m[(0, 0)], 3.0, max_relative = 1e-12);
        let res =
            are_residual(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![3.0], &dmatrix![1.0], &sol.m)
                .unwrap();
        assert!(res < 1e-12);
    }

    #[test]
    fn lyapunov_recovers_quadratic_cost() {
        // for ẋ = -x, ∫ x² dt = x₀²/2
        let x = lyapunov(&dmatrix![-1.0], &dmatrix![1.0]).unwrap();
        assert_relative_eq!(x[(0, 0)], 0.5, max_relative = 1e-12);
    }

    fn case_study_design() -> (crate::microgrid::CaseStudy, BTreeMap<String, SynthesisResult>) {
        let cs = build_case_study().unwrap();
        let mut results = BTreeMap::new();
        let mut cached: Option<SynthesisResult> = None;
        for node in cs.network.nodes() {
            if node.model.is_controlled() {
                // identical converters share one synthesis solve
                let res = match &cached {
                    Some(r) => r.clone(),
                    None => {
                        let r =
                            synthesize_node(&node.model, &SynthesisOptions::with_lambda(-8.0))
                                .unwrap();
                        cached = Some(r.clone());
                        r
                    }
                };
                results.insert(node.id.clone(), res);
            }
        }
        (cs, results)
    }

    #[test]
    fn global_cost_blocks_and_identity() {
        let (cs, results) = case_study_design();
        let design = assemble_design(&cs.network, &results).unwrap();
        let n = design.a.nrows();

        // load and line cost entries equal the physical conductances and
        // resistances exactly
        assert_relative_eq!(design.q[(9, 9)], 0.1, max_relative = 1e-14);
        assert_relative_eq!(design.q[(10, 10)], 0.05, max_relative = 1e-14);
        for i in 11..14 {
            assert_relative_eq!(design.q[(i, i)], 0.05, max_relative = 1e-14);
        }

        // quadratic form of Q̂ equals the sum of local storage-rate terms
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let direct = (x.transpose() * &design.q * &x)[(0, 0)];
            let local = local_cost_sum(&cs.network, &results, &x).unwrap();
            assert_relative_eq!(direct, local, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn half_storage_solves_global_riccati() {
        let (cs, results) = case_study_design();
        let report = verify_design(&cs.network, &results, 1e-8).unwrap();
        assert!(report.passed, "report: {report:?}");
        assert!(report.riccati_residual < 1e-6, "residual {}", report.riccati_residual);
        assert!(report.spectral_abscissa < 0.0);

        // the oracle recovers the same storage independently
        let design = assemble_design(&cs.network, &results).unwrap();
        let sol = lqr(&design.a, &design.bu, &design.q, &design.r).unwrap();
        let rel = mats::frob(&(&sol.m - &design.p * 0.5)) / mats::frob(&sol.m);
        assert!(rel < 1e-6, "storage mismatch {rel}");
    }
}
