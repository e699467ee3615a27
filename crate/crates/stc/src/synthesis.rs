//! Consensus co-design LMIs and design recovery.
//!
//! Builds the data-driven co-design LMI (controller gain and triggering
//! matrix from one agent's Theta kernel), the model-based H-infinity
//! co-design LMI, and the model-based stability re-check that evaluates the
//! certified matrix inequality at the true plant.
//!
//! Coordinate convention for the big block matrices: the uncertain rows come
//! first, grouped as [ya (n N); yb (p N)], followed by the per-agent
//! descriptor coordinates zeta_j = [s_j(t); s_j(t+1); s_bar_j(t)] stacked
//! agent by agent. The data kernel enters per agent and is scattered into
//! these global coordinates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::ThetaBlock;
use crate::error::{Result, StcError};
use crate::lmi::{
    self, Assignment, ConstraintSense, LmiProblem, SolveReport, VarSign, VarStructure,
};
use crate::plant::SystemMatrices;
use crate::topology::GraphMatrices;

/// Selectors `L_k = [0 .. I_n .. 0]` (n x 3n) over the descriptor coordinates
/// and the slack map `R = (L_1 + eps L_2)^T`.
#[derive(Debug, Clone)]
pub struct SelectorMatrices {
    pub l1: DMatrix<f64>,
    pub l2: DMatrix<f64>,
    pub l3: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl SelectorMatrices {
    pub fn new(n: usize, epsilon: f64) -> Self {
        let sel = |k: usize| {
            let mut m = DMatrix::zeros(n, 3 * n);
            for i in 0..n {
                m[(i, (k - 1) * n + i)] = 1.0;
            }
            m
        };
        let l1 = sel(1);
        let l2 = sel(2);
        let l3 = sel(3);
        let r = (&l1 + &l2 * epsilon).transpose();
        Self { l1, l2, l3, r }
    }
}

/// Where a design came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    DataDriven,
    ModelBasedHInf,
    SysidIndirect,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::DataDriven => write!(f, "data-driven"),
            Provenance::ModelBasedHInf => write!(f, "model-based-h-inf"),
            Provenance::SysidIndirect => write!(f, "sysid-indirect"),
        }
    }
}

/// Solver certificates preserved alongside the recovered design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificates {
    pub p: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub k_g: DMatrix<f64>,
    pub phi_bar: DMatrix<f64>,
    /// S-procedure multiplier (data-driven designs; in units of the
    /// normalized kernel).
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
}

/// A certified self-triggered consensus design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StcDesign {
    pub k: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub sigma: f64,
    pub epsilon: f64,
    pub provenance: Provenance,
    pub certificates: Certificates,
    pub solver_margin: f64,
}

/// `Omega + Psi` over the descriptor coordinates (3 n N square), affine in
/// (P, Phi_bar, G).
fn omega_plus_psi(
    h: &DMatrix<f64>,
    sel: &SelectorMatrices,
    sigma: f64,
    p_mat: &DMatrix<f64>,
    phi_bar: &DMatrix<f64>,
    g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n_agents = h.nrows();
    let eye_agents = DMatrix::identity(n_agents, n_agents);
    let omega_local = sel.l2.transpose() * p_mat * &sel.l2 - sel.l1.transpose() * p_mat * &sel.l1;
    let desc = -(&sel.r * g * &sel.l2);
    let desc_local = &desc + desc.transpose();
    let l31 = &sel.l3 - &sel.l1;
    let trig_local = l31.transpose() * phi_bar * l31;
    let local = omega_local + desc_local - trig_local;
    let mut out = eye_agents.kronecker(&local);
    out += h.kronecker(&(sel.l3.transpose() * phi_bar * &sel.l3)) * sigma;
    out
}

/// `T = [I_N (x) G L1 ; H (x) K_G L3]`, the coupling between the uncertain
/// rows and the descriptor coordinates.
fn t_block(
    h: &DMatrix<f64>,
    sel: &SelectorMatrices,
    g: &DMatrix<f64>,
    k_g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n_agents = h.nrows();
    let n = g.nrows();
    let p = k_g.nrows();
    let eye_agents = DMatrix::identity(n_agents, n_agents);
    let top = eye_agents.kronecker(&(g * &sel.l1));
    let bottom = h.kronecker(&(k_g * &sel.l3));
    let mut t = DMatrix::zeros((n + p) * n_agents, 3 * n * n_agents);
    t.view_mut((0, 0), (n * n_agents, 3 * n * n_agents)).copy_from(&top);
    t.view_mut((n * n_agents, 0), (p * n_agents, 3 * n * n_agents)).copy_from(&bottom);
    t
}

/// `Theta_tilde = diag(I_{n+p}, R) Theta diag(I_{n+p}, R)^T`.
fn theta_tilde(theta: &DMatrix<f64>, n: usize, p: usize, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(n + p + 3 * n, n + p + n);
    d.view_mut((0, 0), (n + p, n + p))
        .copy_from(&DMatrix::identity(n + p, n + p));
    d.view_mut((n + p, n + p), (3 * n, n)).copy_from(r);
    &d * theta * d.transpose()
}

/// Scatter the per-agent kernel `I_N (x) Theta_tilde` into the global
/// coordinate ordering [ya; yb; zeta].
fn scatter_per_agent(
    theta_tilde: &DMatrix<f64>,
    n: usize,
    p: usize,
    n_agents: usize,
) -> DMatrix<f64> {
    let local_dim = n + p + 3 * n;
    debug_assert_eq!(theta_tilde.nrows(), local_dim);
    let total = (n + p) * n_agents + 3 * n * n_agents;
    let global_index = |agent: usize, local: usize| -> usize {
        if local < n {
            agent * n + local
        } else if local < n + p {
            n_agents * n + agent * p + (local - n)
        } else {
            n_agents * (n + p) + agent * 3 * n + (local - n - p)
        }
    };
    let mut out = DMatrix::zeros(total, total);
    for agent in 0..n_agents {
        for i in 0..local_dim {
            let gi = global_index(agent, i);
            for j in 0..local_dim {
                out[(gi, global_index(agent, j))] += theta_tilde[(i, j)];
            }
        }
    }
    out
}

fn big_dims(n: usize, p: usize, n_agents: usize) -> usize {
    (n + p) * n_agents + 3 * n * n_agents
}

/// Assemble the data-driven co-design constraint matrix at concrete variable
/// values. The kernel is pre-normalized; beta is in normalized units.
#[allow(clippy::too_many_arguments)]
fn assemble_thm2(
    theta_scattered: &DMatrix<f64>,
    h: &DMatrix<f64>,
    sel: &SelectorMatrices,
    sigma: f64,
    n: usize,
    p: usize,
    beta: f64,
    p_mat: &DMatrix<f64>,
    phi_bar: &DMatrix<f64>,
    g: &DMatrix<f64>,
    k_g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n_agents = h.nrows();
    let total = big_dims(n, p, n_agents);
    let top = (n + p) * n_agents;
    let mut big = DMatrix::zeros(total, total);
    let t = t_block(h, sel, g, k_g);
    big.view_mut((0, top), (top, total - top)).copy_from(&t);
    big.view_mut((top, 0), (total - top, top)).copy_from(&t.transpose());
    let op = omega_plus_psi(h, sel, sigma, p_mat, phi_bar, g);
    big.view_mut((top, top), (total - top, total - top)).copy_from(&op);
    big + theta_scattered * beta
}

/// Data-driven consensus co-design LMI from one agent's depth-1 kernel.
///
/// Variables: beta > 0, P > 0, Phi_bar > 0, G full, K_G. Single strict
/// constraint `[[0, T],[T', Omega + Psi]] + beta (I_N (x) Theta_tilde) < 0`.
/// The kernel is scaled to unit max entry for conditioning; beta absorbs the
/// scale and the recovered design is unaffected.
pub fn build_thm2(
    theta_1: &ThetaBlock,
    gm: &GraphMatrices,
    sigma: f64,
    epsilon: f64,
) -> Result<LmiProblem> {
    if sigma <= 0.0 {
        return Err(StcError::InvalidArgument("sigma must be > 0".into()));
    }
    if theta_1.s != 1 {
        return Err(StcError::DimensionMismatch(
            "co-design uses the depth-1 kernel".into(),
        ));
    }
    let (n, p) = (theta_1.n, theta_1.p);
    let sel = SelectorMatrices::new(n, epsilon);
    let scale = theta_1.theta.amax();
    if scale == 0.0 {
        return Err(StcError::InsufficientData("zero data kernel".into()));
    }
    let tilde = theta_tilde(&(&theta_1.theta / scale), n, p, &sel.r);
    let scattered = scatter_per_agent(&tilde, n, p, gm.h.nrows());
    let h = gm.h.clone();

    let mut prob = LmiProblem::new();
    prob.add_variable("beta", VarStructure::Scalar, VarSign::PositiveScalar(1e-9))?;
    prob.add_variable("P", VarStructure::Symmetric(n), VarSign::PsdEps(1e-7))?;
    prob.add_variable("Phi_bar", VarStructure::Symmetric(n), VarSign::PsdEps(1e-7))?;
    prob.add_variable("G", VarStructure::Full(n, n), VarSign::Free)?;
    prob.add_variable("K_G", VarStructure::Full(p, n), VarSign::Free)?;
    prob.add_constraint("consensus co-design", ConstraintSense::NegDefStrict, move |a| {
        assemble_thm2(
            &scattered,
            &h,
            &sel,
            sigma,
            n,
            p,
            a.scalar("beta"),
            a.get("P"),
            a.get("Phi_bar"),
            a.get("G"),
            a.get("K_G"),
        )
    });
    Ok(prob)
}

/// `Upsilon(A, B) = Omega + Psi + Sym{I_N (x) R A G L1 + H (x) R B K_G L3}`
/// evaluated at concrete certificates; the certified inequality is
/// `Upsilon < 0` for every admissible pair, and at the true pair for the
/// model-based re-check.
#[allow(clippy::too_many_arguments)]
pub fn upsilon_at(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    gm: &GraphMatrices,
    sigma: f64,
    epsilon: f64,
    p_mat: &DMatrix<f64>,
    phi_bar: &DMatrix<f64>,
    g: &DMatrix<f64>,
    k_g: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let sel = SelectorMatrices::new(n, epsilon);
    let n_agents = gm.h.nrows();
    let eye_agents = DMatrix::identity(n_agents, n_agents);
    let mut ups = omega_plus_psi(&gm.h, &sel, sigma, p_mat, phi_bar, g);
    let lin = eye_agents.kronecker(&(&sel.r * a * g * &sel.l1))
        + gm.h.kronecker(&(&sel.r * b * k_g * &sel.l3));
    ups += &lin + lin.transpose();
    ups
}

/// Recover `(K, Phi)` from a feasible co-design report.
pub fn recover_design(
    report: &SolveReport,
    sigma: f64,
    epsilon: f64,
    provenance: Provenance,
) -> Result<StcDesign> {
    let asg = &report.assignment;
    let g = asg.get("G").clone();
    let k_g = asg.get("K_G").clone();
    let phi_bar = asg.get("Phi_bar").clone();
    let p_mat = asg.get("P").clone();

    let svd = g.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 0.0 || smax / smin > 1e10 {
        return Err(StcError::Singular(format!(
            "G condition number {:.3e} beyond guard",
            smax / smin
        )));
    }
    let g_inv = g
        .clone()
        .try_inverse()
        .ok_or_else(|| StcError::Singular("G not invertible".into()))?;
    let k = &k_g * &g_inv;
    let phi = g_inv.transpose() * &phi_bar * &g_inv;
    let phi = (&phi + phi.transpose()) * 0.5;
    if lmi::min_symmetric_eig(&phi) <= 0.0 {
        return Err(StcError::NumericalFailure(
            "recovered triggering matrix is not positive definite".into(),
        ));
    }
    let beta = if matches!(provenance, Provenance::DataDriven) {
        Some(asg.scalar("beta"))
    } else {
        None
    };
    Ok(StcDesign {
        k,
        phi,
        sigma,
        epsilon,
        provenance,
        certificates: Certificates { p: p_mat, g, k_g, phi_bar, beta, gamma: None },
        solver_margin: report.worst_margin,
    })
}

/// Model-based H-infinity co-design LMI for the (true or identified) system:
/// `[[Upsilon~ + I_N (x) L1' L1, I_N (x) R B_d G],[*, -gamma^2 I]] < 0`.
pub fn build_thm3(
    sys_a: &DMatrix<f64>,
    sys_b: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    gm: &GraphMatrices,
    sigma: f64,
    epsilon: f64,
    gamma: f64,
) -> Result<LmiProblem> {
    if gamma <= 0.0 {
        return Err(StcError::InvalidArgument("gamma must be > 0".into()));
    }
    if sigma <= 0.0 {
        return Err(StcError::InvalidArgument("sigma must be > 0".into()));
    }
    let n = sys_a.nrows();
    let p = sys_b.ncols();
    let n_d = b_d.ncols();
    let n_agents = gm.h.nrows();
    let sel = SelectorMatrices::new(n, epsilon);
    let h = gm.h.clone();
    let a_mat = sys_a.clone();
    let b_mat = sys_b.clone();
    let bd = b_d.clone();

    let mut prob = LmiProblem::new();
    prob.add_variable("P", VarStructure::Symmetric(n), VarSign::PsdEps(1e-7))?;
    prob.add_variable("Phi_bar", VarStructure::Symmetric(n), VarSign::PsdEps(1e-7))?;
    prob.add_variable("G", VarStructure::Full(n, n), VarSign::Free)?;
    prob.add_variable("K_G", VarStructure::Full(p, n), VarSign::Free)?;
    prob.add_constraint("h-infinity co-design", ConstraintSense::NegDefStrict, move |asg| {
        let g = asg.get("G");
        let k_g = asg.get("K_G");
        let p_mat = asg.get("P");
        let phi_bar = asg.get("Phi_bar");
        let eye_agents = DMatrix::identity(n_agents, n_agents);
        let mut ups = omega_plus_psi(&h, &sel, sigma, p_mat, phi_bar, g);
        let lin = eye_agents.kronecker(&(&sel.r * &a_mat * g * &sel.l1))
            + h.kronecker(&(&sel.r * &b_mat * k_g * &sel.l3));
        ups += &lin + lin.transpose();
        ups += eye_agents.kronecker(&(sel.l1.transpose() * &sel.l1));
        let coupling = eye_agents.kronecker(&(&sel.r * &bd * g));
        let zdim = 3 * n * n_agents;
        let ddim = n_d * n_agents;
        let mut big = DMatrix::zeros(zdim + ddim, zdim + ddim);
        big.view_mut((0, 0), (zdim, zdim)).copy_from(&ups);
        big.view_mut((0, zdim), (zdim, ddim)).copy_from(&coupling);
        big.view_mut((zdim, 0), (ddim, zdim)).copy_from(&coupling.transpose());
        big.view_mut((zdim, zdim), (ddim, ddim))
            .copy_from(&(-DMatrix::identity(ddim, ddim) * gamma * gamma));
        big
    });
    Ok(prob)
}

/// Evaluate the certified inequality at the true plant (Remark-5 style
/// re-check). Returns (passes with 1e-6 slack, max eigenvalue of Upsilon).
pub fn model_based_stability_check(
    sys: &SystemMatrices,
    design: &StcDesign,
    gm: &GraphMatrices,
) -> (bool, f64) {
    let c = &design.certificates;
    let ups = upsilon_at(
        &sys.a,
        &sys.b,
        gm,
        design.sigma,
        design.epsilon,
        &c.p,
        &c.phi_bar,
        &c.g,
        &c.k_g,
    );
    let margin = lmi::max_symmetric_eig(&ups);
    (margin <= 1e-6, margin)
}
