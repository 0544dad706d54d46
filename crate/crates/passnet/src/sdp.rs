//! Small linear-objective semidefinite programming layer.
//!
//! Problems are described backend-neutrally as a linear objective over a
//! variable vector with LMI blocks, equality rows and nonnegativity rows,
//! then lowered to Clarabel's conic form. All LMI data is dense; problem
//! sizes here are small (tens of variables, blocks of dimension < 100).

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Constraint `constant + Σ_i x_i·coeffs[i] ⪯ 0` over symmetric matrices.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<DMatrix<f64>>,
}

impl LmiBlock {
    pub fn new(dim: usize, num_vars: usize) -> Self {
        LmiBlock {
            dim,
            constant: DMatrix::zeros(dim, dim),
            coeffs: vec![DMatrix::zeros(dim, dim); num_vars],
        }
    }

    /// Evaluate `constant + Σ x_i coeffs[i]` at a point.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (xi, ci) in x.iter().zip(&self.coeffs) {
            m += ci * *xi;
        }
        m
    }
}

/// Scalar row `constant + coeffs·x {= 0 | >= 0}` depending on which list it
/// is placed in.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SdpProblem {
    pub num_vars: usize,
    /// Minimized linear objective `objective · x`.
    pub objective: Vec<f64>,
    pub eq_rows: Vec<LinearRow>,
    pub nonneg_rows: Vec<LinearRow>,
    pub lmis: Vec<LmiBlock>,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        SdpProblem { num_vars, objective: vec![0.0; num_vars], ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    AlmostOptimal,
    Infeasible,
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SdpStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpSettings {
    pub max_iter: u32,
    pub tol: f64,
    pub verbose: bool,
}

impl Default for SdpSettings {
    fn default() -> Self {
        SdpSettings { max_iter: 200, tol: 1e-9, verbose: false }
    }
}

/// Length of the scaled upper-triangle vectorization of an n x n symmetric
/// matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Scaled vectorization: upper triangle in column-major order with
/// off-diagonal entries multiplied by sqrt(2), so that inner products of
/// vectorizations equal trace inner products of the matrices.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(svec_len(n));
    let s2 = std::f64::consts::SQRT_2;
    for j in 0..n {
        for i in 0..=j {
            v.push(if i == j { m[(i, j)] } else { 0.5 * (m[(i, j)] + m[(j, i)]) * s2 });
        }
    }
    v
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let s2 = std::f64::consts::SQRT_2;
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let val = if i == j { v[k] } else { v[k] / s2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}

/// Solve with Clarabel. Rows are stacked in cone order: equalities,
/// nonnegativity rows, then one PSD triangle cone per LMI block.
pub fn solve(problem: &SdpProblem, settings: &SdpSettings) -> Result<SdpSolution> {
    let m = problem.num_vars;
    if problem.objective.len() != m {
        return Err(Error::Dimension("objective length must equal num_vars".into()));
    }
    let total_rows = problem.eq_rows.len()
        + problem.nonneg_rows.len()
        + problem.lmis.iter().map(|b| svec_len(b.dim)).sum::<usize>();

    let mut a_rows: Vec<Vec<f64>> = Vec::with_capacity(total_rows);
    let mut b = Vec::with_capacity(total_rows);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();

    // equality c + Gx = 0  ->  Gx + s = -c, s in {0}
    if !problem.eq_rows.is_empty() {
        for row in &problem.eq_rows {
            a_rows.push(row.coeffs.clone());
            b.push(-row.constant);
        }
        cones.push(SupportedConeT::ZeroConeT(problem.eq_rows.len()));
    }
    // inequality c + Gx >= 0  ->  -Gx + s = c, s >= 0
    if !problem.nonneg_rows.is_empty() {
        for row in &problem.nonneg_rows {
            a_rows.push(row.coeffs.iter().map(|v| -v).collect());
            b.push(row.constant);
        }
        cones.push(SupportedConeT::NonnegativeConeT(problem.nonneg_rows.len()));
    }
    // LMI F0 + Σ x_i F_i ⪯ 0  ->  Σ x_i svec(F_i) + s = svec(-F0), s in PSD
    for blk in &problem.lmis {
        if blk.coeffs.len() != m {
            return Err(Error::Dimension("LMI coefficient count must equal num_vars".into()));
        }
        let cols: Vec<Vec<f64>> = blk.coeffs.iter().map(svec).collect();
        let rhs = svec(&(-&blk.constant));
        let rows_here = svec_len(blk.dim);
        for r in 0..rows_here {
            a_rows.push((0..m).map(|i| cols[i][r]).collect());
            b.push(rhs[r]);
        }
        cones.push(SupportedConeT::PSDTriangleConeT(blk.dim));
    }

    let a = CscMatrix::from(&a_rows);
    let p: CscMatrix<f64> = CscMatrix::zeros((m, m));

    let settings = DefaultSettings {
        verbose: settings.verbose,
        max_iter: settings.max_iter,
        tol_gap_abs: settings.tol,
        tol_gap_rel: settings.tol,
        tol_feas: settings.tol,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &problem.objective, &a, &b, &cones, settings)
        .map_err(|e| Error::Solver(format!("problem setup rejected: {e:?}")))?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved => SdpStatus::Optimal,
        SolverStatus::AlmostSolved => SdpStatus::AlmostOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SdpStatus::Infeasible
        }
        _ => SdpStatus::Inaccurate,
    };
    Ok(SdpSolution {
        x: solver.solution.x.clone(),
        objective: solver.solution.obj_val,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn svec_round_trip_preserves_inner_product() {
        let a = dmatrix![1.0, 2.0, 3.0; 2.0, -1.0, 0.5; 3.0, 0.5, 4.0];
        let b = dmatrix![0.5, -1.0, 2.0; -1.0, 3.0, 1.0; 2.0, 1.0, -2.0];
        let va = svec(&a);
        let vb = svec(&b);
        let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
        assert_relative_eq!(dot, (&a * &b).trace(), max_relative = 1e-14);
        assert_eq!(smat(&va, 3), a);
    }

    #[test]
    fn minimize_max_eigenvalue_of_fixed_matrix() {
        // min t s.t. M - tI ⪯ 0 gives t = λ_max(M)
        let m0 = dmatrix![2.0, 1.0; 1.0, 3.0];
        let lam_max = crate::mats::max_eig_sym(&m0);
        let mut prob = SdpProblem::new(1);
        prob.objective = vec![1.0];
        let mut blk = LmiBlock::new(2, 1);
        blk.constant = m0;
        blk.coeffs[0] = -DMatrix::identity(2, 2);
        prob.lmis.push(blk);
        let sol = solve(&prob, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_relative_eq!(sol.x[0], lam_max, max_relative = 1e-7);
    }

    #[test]
    fn equality_and_bound_rows() {
        // min x0 + x1 s.t. x0 - x1 = 1, x0 >= 2, x1 >= 0  ->  (2, 1)
        let mut prob = SdpProblem::new(2);
        prob.objective = vec![1.0, 1.0];
        prob.eq_rows.push(LinearRow { constant: -1.0, coeffs: vec![1.0, -1.0] });
        prob.nonneg_rows.push(LinearRow { constant: -2.0, coeffs: vec![1.0, 0.0] });
        prob.nonneg_rows.push(LinearRow { constant: 0.0, coeffs: vec![0.0, 1.0] });
        let sol = solve(&prob, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 2.0, epsilon = 1e-7);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn detects_infeasibility() {
        // x >= 1 and x <= 0 simultaneously
        let mut prob = SdpProblem::new(1);
        prob.objective = vec![1.0];
        prob.nonneg_rows.push(LinearRow { constant: -1.0, coeffs: vec![1.0] });
        prob.nonneg_rows.push(LinearRow { constant: 0.0, coeffs: vec![-1.0] });
        let sol = solve(&prob, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }
}
