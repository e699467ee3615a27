//! Minimal semidefinite feasibility layer.
//!
//! Declare matrix variables, attach affine PSD / strict negative-definite
//! constraints as closures over an [`Assignment`], and solve with a margin
//! report. The backend is a self-contained log-barrier Newton method on the
//! margin-maximization form
//!
//! ```text
//!   max t  s.t.  S_k(x) - t I >= 0 for all blocks k,  |x|^2 <= R^2
//! ```
//!
//! which always has a strictly feasible start (take t small enough), so no
//! phase-I is needed. The problem is declared feasible as soon as the actual
//! worst margin clears a target, and infeasible when the central path tops
//! out below zero. All instances here are small dense blocks (<= ~120 rows,
//! <= ~20 scalar unknowns), where this method is fast and dependable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Result, StcError};

/// Shape of a matrix decision variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarStructure {
    Scalar,
    Symmetric(usize),
    Full(usize, usize),
}

/// Sign constraint attached to a variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarSign {
    Free,
    /// Matrix variable constrained to `X >= eps * I`.
    PsdEps(f64),
    /// Scalar variable constrained to `x >= eps`.
    PositiveScalar(f64),
}

#[derive(Debug, Clone)]
pub struct MatrixVariable {
    pub name: String,
    pub structure: VarStructure,
    pub sign: VarSign,
}

impl MatrixVariable {
    fn n_coords(&self) -> usize {
        match self.structure {
            VarStructure::Scalar => 1,
            VarStructure::Symmetric(n) => n * (n + 1) / 2,
            VarStructure::Full(r, c) => r * c,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self.structure {
            VarStructure::Scalar => (1, 1),
            VarStructure::Symmetric(n) => (n, n),
            VarStructure::Full(r, c) => (r, c),
        }
    }
}

/// Concrete values for every declared variable.
#[derive(Debug, Clone)]
pub struct Assignment {
    values: BTreeMap<String, DMatrix<f64>>,
}

impl Assignment {
    pub fn get(&self, name: &str) -> &DMatrix<f64> {
        self.values
            .get(name)
            .unwrap_or_else(|| panic!("undeclared variable `{name}` referenced"))
    }

    pub fn scalar(&self, name: &str) -> f64 {
        self.get(name)[(0, 0)]
    }

    pub fn insert(&mut self, name: &str, value: DMatrix<f64>) {
        self.values.insert(name.to_string(), value);
    }
}

/// Direction of an affine matrix constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSense {
    /// `expr >= 0` (positive semidefinite).
    Psd,
    /// `expr <= -eps_strict * I` (strict negative definite, shifted).
    NegDefStrict,
}

type ExprFn = Box<dyn Fn(&Assignment) -> DMatrix<f64> + Send + Sync>;

pub struct Constraint {
    pub name: String,
    pub sense: ConstraintSense,
    expr: ExprFn,
}

/// A semidefinite feasibility problem: variables plus affine constraints.
pub struct LmiProblem {
    vars: Vec<MatrixVariable>,
    constraints: Vec<Constraint>,
    /// Shift used to realize strict inequalities: `< 0` becomes `<= -eps I`.
    pub eps_strict: f64,
}

impl Default for LmiProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl LmiProblem {
    pub fn new() -> Self {
        Self { vars: Vec::new(), constraints: Vec::new(), eps_strict: 1e-7 }
    }

    pub fn add_variable(
        &mut self,
        name: &str,
        structure: VarStructure,
        sign: VarSign,
    ) -> Result<()> {
        if self.vars.iter().any(|v| v.name == name) {
            return Err(StcError::InvalidArgument(format!(
                "variable `{name}` declared twice"
            )));
        }
        self.vars.push(MatrixVariable { name: name.to_string(), structure, sign });
        Ok(())
    }

    pub fn add_constraint<F>(&mut self, name: &str, sense: ConstraintSense, expr: F)
    where
        F: Fn(&Assignment) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.constraints.push(Constraint {
            name: name.to_string(),
            sense,
            expr: Box::new(expr),
        });
    }

    pub fn n_scalar_coords(&self) -> usize {
        self.vars.iter().map(|v| v.n_coords()).sum()
    }

    fn zero_assignment(&self) -> Assignment {
        let values = self
            .vars
            .iter()
            .map(|v| {
                let (r, c) = v.shape();
                (v.name.clone(), DMatrix::zeros(r, c))
            })
            .collect();
        Assignment { values }
    }

    /// Map a coordinate vector to variable matrices. Symmetric variables use
    /// the upper-triangle coordinates, mirrored into both halves.
    pub fn assignment_from_coords(&self, x: &[f64]) -> Assignment {
        let mut asg = self.zero_assignment();
        let mut idx = 0;
        for v in &self.vars {
            let (r, c) = v.shape();
            let mut m = DMatrix::zeros(r, c);
            match v.structure {
                VarStructure::Scalar => {
                    m[(0, 0)] = x[idx];
                    idx += 1;
                }
                VarStructure::Symmetric(n) => {
                    for i in 0..n {
                        for j in i..n {
                            m[(i, j)] = x[idx];
                            m[(j, i)] = x[idx];
                            idx += 1;
                        }
                    }
                }
                VarStructure::Full(rr, cc) => {
                    for i in 0..rr {
                        for j in 0..cc {
                            m[(i, j)] = x[idx];
                            idx += 1;
                        }
                    }
                }
            }
            asg.insert(&v.name, m);
        }
        asg
    }

    /// Extract the affine form of every block: constants plus one coefficient
    /// matrix per scalar coordinate. Sign constraints on variables become
    /// extra blocks. Also verifies each expression really is affine.
    fn compile(&self) -> Result<Vec<CompiledBlock>> {
        let m = self.n_scalar_coords();
        let zero = self.zero_assignment();
        let mut blocks = Vec::new();

        for con in &self.constraints {
            let f0_raw = (con.expr)(&zero);
            if f0_raw.nrows() != f0_raw.ncols() {
                return Err(StcError::DimensionMismatch(format!(
                    "constraint `{}` expression is not square",
                    con.name
                )));
            }
            let dim = f0_raw.nrows();
            // Normalize: S(x) >= 0 form.
            let normalize = |mat: DMatrix<f64>| -> DMatrix<f64> {
                let sym = (&mat + mat.transpose()) * 0.5;
                match con.sense {
                    ConstraintSense::Psd => sym,
                    ConstraintSense::NegDefStrict => -sym,
                }
            };
            let shift = match con.sense {
                ConstraintSense::Psd => 0.0,
                ConstraintSense::NegDefStrict => self.eps_strict,
            };
            let f0 = normalize(f0_raw.clone()) - DMatrix::identity(dim, dim) * shift;
            let mut coeffs = Vec::with_capacity(m);
            let mut basis = vec![0.0; m];
            for j in 0..m {
                basis[j] = 1.0;
                let asg = self.assignment_from_coords(&basis);
                let fj = normalize((con.expr)(&asg)) - normalize(f0_raw.clone());
                coeffs.push(fj);
                basis[j] = 0.0;
            }
            // Affinity probe: expr(a + b) must equal expr(a) + expr(b) - expr(0).
            {
                let mut xa = vec![0.0; m];
                let mut xb = vec![0.0; m];
                for j in 0..m {
                    xa[j] = 0.7 + 0.1 * (j as f64 % 3.0);
                    xb[j] = -0.3 + 0.05 * (j as f64 % 5.0);
                }
                let xab: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| a + b).collect();
                let va = (con.expr)(&self.assignment_from_coords(&xa));
                let vb = (con.expr)(&self.assignment_from_coords(&xb));
                let vab = (con.expr)(&self.assignment_from_coords(&xab));
                let resid = (&vab + &f0_raw - &va - &vb).amax();
                let scale = va.amax().max(vb.amax()).max(1.0);
                if resid > 1e-8 * scale {
                    return Err(StcError::InvalidArgument(format!(
                        "constraint `{}` is not affine in the declared variables",
                        con.name
                    )));
                }
            }
            blocks.push(CompiledBlock { name: con.name.clone(), f0, coeffs });
        }

        // Variable sign constraints as extra blocks.
        let mut offset = 0;
        for v in &self.vars {
            let nc = v.n_coords();
            match v.sign {
                VarSign::Free => {}
                VarSign::PositiveScalar(eps) => {
                    let mut coeffs = vec![DMatrix::zeros(1, 1); m];
                    coeffs[offset] = DMatrix::from_element(1, 1, 1.0);
                    blocks.push(CompiledBlock {
                        name: format!("{} > 0", v.name),
                        f0: DMatrix::from_element(1, 1, -eps),
                        coeffs,
                    });
                }
                VarSign::PsdEps(eps) => {
                    let (n, _) = v.shape();
                    let mut coeffs = vec![DMatrix::zeros(n, n); m];
                    let mut local = 0;
                    for i in 0..n {
                        for j in i..n {
                            let mut c = DMatrix::zeros(n, n);
                            c[(i, j)] = 1.0;
                            c[(j, i)] = 1.0;
                            if i == j {
                                c[(i, i)] = 1.0;
                            }
                            coeffs[offset + local] = c;
                            local += 1;
                        }
                    }
                    blocks.push(CompiledBlock {
                        name: format!("{} >= {:.0e} I", v.name, eps),
                        f0: -DMatrix::identity(n, n) * eps,
                        coeffs,
                    });
                }
            }
            offset += nc;
        }
        Ok(blocks)
    }

    /// Solve for feasibility with the default options.
    pub fn solve(&self) -> Result<SolveReport> {
        self.solve_with(&SolveOptions::default())
    }

    pub fn solve_with(&self, opts: &SolveOptions) -> Result<SolveReport> {
        let start = Instant::now();
        let blocks = self.compile()?;
        let m = self.n_scalar_coords();
        let outcome = barrier_solve(&blocks, m, opts);
        let (status, x, iterations) = match outcome {
            Ok(r) => r,
            Err(e) => return Err(e),
        };
        let assignment = self.assignment_from_coords(&x);
        // Margin over the user's constraints, sign-normalized (without the
        // strictness shift).
        let mut worst = f64::INFINITY;
        for con in &self.constraints {
            let val = (con.expr)(&assignment);
            let sym = (&val + val.transpose()) * 0.5;
            let normalized = match con.sense {
                ConstraintSense::Psd => sym,
                ConstraintSense::NegDefStrict => -sym,
            };
            let eig_min = min_symmetric_eig(&normalized);
            worst = worst.min(eig_min);
        }
        Ok(SolveReport {
            status,
            assignment,
            worst_margin: worst,
            iterations,
            solve_time_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Dump the compiled problem (variable list plus constraint coefficient
    /// blocks) to a text file for cross-checking against external solvers.
    pub fn dump(&self, path: &std::path::Path) -> Result<()> {
        let blocks = self.compile()?;
        let mut out = String::new();
        writeln!(out, "lmi-problem v1").unwrap();
        writeln!(out, "scalar coordinates: {}", self.n_scalar_coords()).unwrap();
        writeln!(out, "variables:").unwrap();
        for v in &self.vars {
            writeln!(out, "  {} {:?} {:?}", v.name, v.structure, v.sign).unwrap();
        }
        for b in &blocks {
            writeln!(out, "block `{}` size {} (S(x) >= 0 form)", b.name, b.f0.nrows()).unwrap();
            writeln!(out, "F0:").unwrap();
            dump_matrix(&mut out, &b.f0);
            for (j, c) in b.coeffs.iter().enumerate() {
                if c.amax() == 0.0 {
                    continue;
                }
                writeln!(out, "F[{j}]:").unwrap();
                dump_matrix(&mut out, c);
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn dump_matrix(out: &mut String, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:+.12e}", m[(i, j)])).collect();
        writeln!(out, "  {}", row.join(" ")).unwrap();
    }
}

struct CompiledBlock {
    name: String,
    f0: DMatrix<f64>,
    coeffs: Vec<DMatrix<f64>>,
}

impl CompiledBlock {
    fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut s = self.f0.clone();
        for (j, c) in self.coeffs.iter().enumerate() {
            if x[j] != 0.0 && c.amax() != 0.0 {
                s += c * x[j];
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Declare feasibility once the actual worst block margin reaches this.
    pub margin_target: f64,
    /// Margin below which the exhausted central path means infeasible.
    pub infeasibility_tol: f64,
    /// Radius of the norm ball keeping the coordinates bounded.
    pub ball_radius: f64,
    pub mu_factor: f64,
    pub mu_min: f64,
    pub max_newton_per_stage: usize,
    pub max_total_newton: usize,
    /// Print path-following progress on stderr.
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            margin_target: 1e-4,
            infeasibility_tol: 1e-9,
            ball_radius: 1e7,
            mu_factor: 0.2,
            mu_min: 1e-10,
            max_newton_per_stage: 80,
            max_total_newton: 20_000,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub assignment: Assignment,
    /// Most negative eigenvalue across constraints after sign normalization.
    pub worst_margin: f64,
    pub iterations: usize,
    pub solve_time_s: f64,
}

impl SolveReport {
    pub fn require_feasible(self, what: &str) -> Result<Self> {
        match self.status {
            SolveStatus::Feasible => Ok(self),
            SolveStatus::Infeasible => Err(StcError::Infeasible(format!(
                "{what}: margin {:.3e}",
                self.worst_margin
            ))),
            SolveStatus::NumericalFailure => Err(StcError::NumericalFailure(format!(
                "{what}: solver did not converge"
            ))),
        }
    }
}

/// Barrier state for one (x, t) iterate: per-block Cholesky factors.
struct BarrierEval {
    chols: Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    ball_slack: f64,
}

fn eval_point(blocks: &[CompiledBlock], x: &[f64], t: f64, radius: f64) -> Option<BarrierEval> {
    let mut chols = Vec::with_capacity(blocks.len());
    for b in blocks {
        let dim = b.f0.nrows();
        let s = b.eval(x) - DMatrix::identity(dim, dim) * t;
        match nalgebra::Cholesky::new(s) {
            Some(c) => chols.push(c),
            None => return None,
        }
    }
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    let ball_slack = radius * radius - norm2;
    if ball_slack <= 0.0 {
        return None;
    }
    Some(BarrierEval { chols, ball_slack })
}

fn barrier_value(ev: &BarrierEval, t: f64, mu: f64) -> f64 {
    let mut v = -t / mu - ev.ball_slack.ln();
    for c in &ev.chols {
        let l = c.l_dirty();
        let mut logdet = 0.0;
        for i in 0..l.nrows() {
            logdet += l[(i, i)].ln();
        }
        v -= 2.0 * logdet;
    }
    v
}

fn actual_margin(blocks: &[CompiledBlock], x: &[f64]) -> f64 {
    blocks
        .iter()
        .map(|b| min_symmetric_eig(&b.eval(x)))
        .fold(f64::INFINITY, f64::min)
}

/// Log-barrier Newton on max t s.t. S_k(x) - tI >= 0, |x| <= R.
/// Returns (status, coordinates, iterations).
fn barrier_solve(
    blocks: &[CompiledBlock],
    m: usize,
    opts: &SolveOptions,
) -> Result<(SolveStatus, Vec<f64>, usize)> {
    let dim_total = m + 1; // coordinates plus the margin variable t
    let mut x = vec![0.0; m];
    let margin0 = actual_margin(blocks, &x);
    if !margin0.is_finite() {
        return Err(StcError::NumericalFailure("constraint blocks not finite".into()));
    }
    if margin0 >= opts.margin_target {
        return Ok((SolveStatus::Feasible, x, 0));
    }
    let mut t = margin0 - 1.0;
    let mut mu = (1.0_f64).max(t.abs());
    let mut total_iters = 0usize;
    let mut best_margin = margin0;
    let mut best_x = x.clone();

    while mu > opts.mu_min {
        for _ in 0..opts.max_newton_per_stage {
            total_iters += 1;
            if total_iters > opts.max_total_newton {
                return Ok((SolveStatus::NumericalFailure, best_x, total_iters));
            }
            let ev = match eval_point(blocks, &x, t, opts.ball_radius) {
                Some(ev) => ev,
                None => return Ok((SolveStatus::NumericalFailure, best_x, total_iters)),
            };

            // Gradient and Hessian over (x, t). Coefficient of t is -I per block.
            let mut grad = vec![0.0; dim_total];
            let mut hess = DMatrix::zeros(dim_total, dim_total);
            grad[m] = -1.0 / mu;

            for (k, b) in blocks.iter().enumerate() {
                let chol = &ev.chols[k];
                let n = b.f0.nrows();
                let l = chol.l();
                // Y_j = L^{-1} F_j L^{-T}; for t the coefficient is -I.
                let mut ys: Vec<DMatrix<f64>> = Vec::with_capacity(dim_total);
                for c in &b.coeffs {
                    if c.amax() == 0.0 {
                        ys.push(DMatrix::zeros(n, n));
                        continue;
                    }
                    let xsol = l
                        .solve_lower_triangular(c)
                        .ok_or_else(|| StcError::NumericalFailure("triangular solve".into()))?;
                    let y = l
                        .solve_lower_triangular(&xsol.transpose())
                        .ok_or_else(|| StcError::NumericalFailure("triangular solve".into()))?;
                    ys.push(y);
                }
                // t-coordinate: F_t = -I, Y_t = -(L^{-1} L^{-T}) = -(S^{-1}).
                let s_inv = chol.inverse();
                ys.push(-s_inv);

                for (j, yj) in ys.iter().enumerate() {
                    grad[if j == m { m } else { j }] += -yj.trace();
                }
                for j in 0..dim_total {
                    if ys[j].amax() == 0.0 {
                        continue;
                    }
                    for jl in j..dim_total {
                        if ys[jl].amax() == 0.0 {
                            continue;
                        }
                        let v = ys[j].dot(&ys[jl]);
                        hess[(j, jl)] += v;
                        if jl != j {
                            hess[(jl, j)] += v;
                        }
                    }
                }
            }
            // Ball barrier terms (x only).
            let slack = ev.ball_slack;
            for j in 0..m {
                grad[j] += 2.0 * x[j] / slack;
                for jl in 0..m {
                    hess[(j, jl)] += 4.0 * x[j] * x[jl] / (slack * slack);
                }
                hess[(j, j)] += 2.0 / slack;
            }

            // Newton direction with light regularization fallback.
            let g = nalgebra::DVector::from_vec(grad.clone());
            let mut reg = 0.0;
            let dir = loop {
                let mut h = hess.clone();
                if reg > 0.0 {
                    for i in 0..dim_total {
                        h[(i, i)] += reg;
                    }
                }
                match nalgebra::Cholesky::new(h) {
                    Some(c) => break c.solve(&(-&g)),
                    None => {
                        reg = if reg == 0.0 { 1e-10 } else { reg * 100.0 };
                        if reg > 1e6 {
                            return Ok((SolveStatus::NumericalFailure, best_x, total_iters));
                        }
                    }
                }
            };

            let decrement2 = -(g.dot(&dir));
            // Backtracking line search keeping strict feasibility.
            let phi0 = barrier_value(&ev, t, mu);
            let mut alpha = 1.0;
            let mut step_taken = false;
            for _ in 0..60 {
                let xn: Vec<f64> =
                    x.iter().enumerate().map(|(j, &v)| v + alpha * dir[j]).collect();
                let tn = t + alpha * dir[m];
                if let Some(evn) = eval_point(blocks, &xn, tn, opts.ball_radius) {
                    let phin = barrier_value(&evn, tn, mu);
                    if phin <= phi0 + 0.01 * alpha * g.dot(&dir) || phin < phi0 {
                        x = xn;
                        t = tn;
                        step_taken = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }

            let cur_margin = actual_margin(blocks, &x);
            if cur_margin > best_margin {
                best_margin = cur_margin;
                best_x = x.clone();
            }
            if cur_margin >= opts.margin_target {
                return Ok((SolveStatus::Feasible, x, total_iters));
            }
            if !step_taken || decrement2.abs() < 1e-13 {
                break;
            }
        }
        if opts.verbose {
            eprintln!(
                "  [lmi] mu {mu:9.2e}  t {t:12.5e}  margin {:12.5e}  iters {total_iters}",
                actual_margin(blocks, &x)
            );
        }
        mu *= opts.mu_factor;
    }

    if best_margin >= opts.margin_target.min(1e-9) && best_margin > 0.0 {
        return Ok((SolveStatus::Feasible, best_x, total_iters));
    }
    if best_margin < -opts.infeasibility_tol {
        return Ok((SolveStatus::Infeasible, best_x, total_iters));
    }
    Ok((SolveStatus::NumericalFailure, best_x, total_iters))
}

/// Minimum eigenvalue of a (symmetrized) matrix.
pub fn min_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Maximum eigenvalue of a (symmetrized) matrix.
pub fn max_symmetric_eig(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// PSD check with an asymmetry guard: returns (is PSD within slack, min eig).
pub fn psd_check(m: &DMatrix<f64>, slack: f64) -> Result<(bool, f64)> {
    if m.nrows() != m.ncols() {
        return Err(StcError::DimensionMismatch("psd_check needs a square matrix".into()));
    }
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(StcError::NumericalFailure(format!(
            "matrix asymmetry {asym:.3e} beyond guard"
        )));
    }
    let eig_min = min_symmetric_eig(m);
    Ok((eig_min >= -slack, eig_min))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_psd_problem_feasible() {
        let mut p = LmiProblem::new();
        p.add_variable("x", VarStructure::Scalar, VarSign::PositiveScalar(1.0)).unwrap();
        p.add_constraint("xI >= 0", ConstraintSense::Psd, |a| {
            DMatrix::identity(2, 2) * a.scalar("x")
        });
        let rep = p.solve().unwrap();
        assert_eq!(rep.status, SolveStatus::Feasible);
        assert!(rep.assignment.scalar("x") >= 1.0 - 1e-9);
        assert!(rep.worst_margin >= -1e-6);
    }

    #[test]
    fn contradictory_constraint_infeasible() {
        let mut p = LmiProblem::new();
        p.add_variable("x", VarStructure::Scalar, VarSign::Free).unwrap();
        p.add_constraint("-I >= 0", ConstraintSense::Psd, |_| {
            -DMatrix::<f64>::identity(2, 2)
        });
        let rep = p.solve().unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
    }

    #[test]
    fn strict_negative_definite_sense() {
        // Find symmetric X with X <= -eps I; trivially feasible.
        let mut p = LmiProblem::new();
        p.add_variable("x", VarStructure::Symmetric(2), VarSign::Free).unwrap();
        p.add_constraint("X < 0", ConstraintSense::NegDefStrict, |a| a.get("x").clone());
        let rep = p.solve().unwrap();
        assert_eq!(rep.status, SolveStatus::Feasible);
        let x = rep.assignment.get("x");
        assert!(max_symmetric_eig(x) < 0.0);
    }

    #[test]
    fn feasible_report_round_trips_through_psd_check() {
        let mut p = LmiProblem::new();
        p.add_variable("ph", VarStructure::Symmetric(3), VarSign::PsdEps(1e-7)).unwrap();
        // ph - I/2 >= 0 and 10 I - ph >= 0.
        p.add_constraint("lower", ConstraintSense::Psd, |a| {
            a.get("ph") - DMatrix::identity(3, 3) * 0.5
        });
        p.add_constraint("upper", ConstraintSense::Psd, |a| {
            DMatrix::identity(3, 3) * 10.0 - a.get("ph")
        });
        let rep = p.solve().unwrap();
        assert_eq!(rep.status, SolveStatus::Feasible);
        let ph = rep.assignment.get("ph");
        let (ok1, _) = psd_check(&(ph - DMatrix::identity(3, 3) * 0.5), 1e-8).unwrap();
        let (ok2, _) = psd_check(&(DMatrix::identity(3, 3) * 10.0 - ph), 1e-8).unwrap();
        assert!(ok1 && ok2);
    }

    #[test]
    fn scaling_constraints_does_not_change_status() {
        for &scale in &[1.0, 10.0, 0.1] {
            let mut p = LmiProblem::new();
            p.add_variable("x", VarStructure::Scalar, VarSign::Free).unwrap();
            p.add_constraint("boxltr", ConstraintSense::Psd, move |a| {
                DMatrix::from_element(1, 1, (5.0 - a.scalar("x")) * scale)
            });
            p.add_constraint("box gtr", ConstraintSense::Psd, move |a| {
                DMatrix::from_element(1, 1, (a.scalar("x") - 1.0) * scale)
            });
            let rep = p.solve().unwrap();
            assert_eq!(rep.status, SolveStatus::Feasible, "scale {scale}");

            let mut q = LmiProblem::new();
            q.add_variable("x", VarStructure::Scalar, VarSign::Free).unwrap();
            q.add_constraint("impossible", ConstraintSense::Psd, move |a| {
                DMatrix::from_element(1, 1, (-1.0 - a.scalar("x") * 0.0) * scale)
            });
            let rep = q.solve().unwrap();
            assert_eq!(rep.status, SolveStatus::Infeasible, "scale {scale}");
        }
    }

    #[test]
    fn non_affine_expression_rejected() {
        let mut p = LmiProblem::new();
        p.add_variable("x", VarStructure::Scalar, VarSign::Free).unwrap();
        p.add_constraint("quadratic", ConstraintSense::Psd, |a| {
            let v = a.scalar("x");
            DMatrix::from_element(1, 1, v * v)
        });
        assert!(matches!(p.solve(), Err(StcError::InvalidArgument(_))));
    }

    #[test]
    fn psd_check_cases() {
        let (ok, me) = psd_check(&DMatrix::identity(3, 3), 1e-8).unwrap();
        assert!(ok);
        assert!((me - 1.0).abs() < 1e-12);

        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1e-3]));
        let (ok, me) = psd_check(&m, 1e-8).unwrap();
        assert!(!ok);
        assert!((me + 1e-3).abs() < 1e-12);

        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 1.0]);
        assert!(psd_check(&asym, 1e-8).is_err());
    }

    #[test]
    fn dump_writes_block_format() {
        let mut p = LmiProblem::new();
        p.add_variable("x", VarStructure::Scalar, VarSign::Free).unwrap();
        p.add_constraint("c", ConstraintSense::Psd, |a| {
            DMatrix::from_element(1, 1, a.scalar("x") + 1.0)
        });
        let dir = std::env::temp_dir().join("stc_lmi_dump_test.txt");
        p.dump(&dir).unwrap();
        let text = std::fs::read_to_string(&dir).unwrap();
        assert!(text.contains("lmi-problem v1"));
        assert!(text.contains("block `c`"));
        let _ = std::fs::remove_file(&dir);
    }
}
