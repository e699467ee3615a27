//! True LTI agent dynamics, the s-step lifted form, and one-step evolution
//! with process noise or disturbance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StcError};
use crate::topology::Topology;

/// State-space matrices of a single agent.
///
/// `x+ = A x + B u + E w` during offline data collection, or
/// `x+ = A x + B u + B_d d` under online disturbance. `b_d` defaults to `e`
/// when absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub b_d: Option<DMatrix<f64>>,
}

/// Exogenous input channel selector for [`SystemMatrices::step`].
#[derive(Debug, Clone, Copy)]
pub enum Exo<'a> {
    None,
    /// Process noise through the `E` channel (offline collection).
    Noise(&'a DVector<f64>),
    /// Disturbance through the `B_d` channel (online operation).
    Disturbance(&'a DVector<f64>),
}

impl SystemMatrices {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        e: DMatrix<f64>,
        b_d: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(StcError::DimensionMismatch("A must be square".into()));
        }
        if b.nrows() != n {
            return Err(StcError::DimensionMismatch("B rows must match A".into()));
        }
        if e.nrows() != n {
            return Err(StcError::DimensionMismatch("E rows must match A".into()));
        }
        if e.rank(1e-12) < e.ncols() {
            return Err(StcError::RankDeficient("E must have full column rank".into()));
        }
        if let Some(bd) = &b_d {
            if bd.nrows() != n {
                return Err(StcError::DimensionMismatch("B_d rows must match A".into()));
            }
        }
        Ok(Self { a, b, e, b_d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.e.ncols()
    }

    /// Disturbance channel, `E` when no explicit `B_d` was given.
    pub fn b_d(&self) -> &DMatrix<f64> {
        self.b_d.as_ref().unwrap_or(&self.e)
    }

    /// One-step evolution `x+ = A x + B u (+ E w | B_d d)`.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, exo: Exo<'_>) -> Result<DVector<f64>> {
        if x.len() != self.n() || u.len() != self.p() {
            return Err(StcError::DimensionMismatch(format!(
                "step expects x in R^{}, u in R^{}",
                self.n(),
                self.p()
            )));
        }
        let mut next = &self.a * x + &self.b * u;
        match exo {
            Exo::None => {}
            Exo::Noise(w) => {
                if w.len() != self.n_w() {
                    return Err(StcError::DimensionMismatch("noise dimension".into()));
                }
                next += &self.e * w;
            }
            Exo::Disturbance(d) => {
                let bd = self.b_d();
                if d.len() != bd.ncols() {
                    return Err(StcError::DimensionMismatch("disturbance dimension".into()));
                }
                next += bd * d;
            }
        }
        Ok(next)
    }
}

/// s-step lifted dynamics: `a_s = A^s`, `b_s = [A^{s-1}B ... B]`.
///
/// Maps a held input over an inter-event interval:
/// `delta(t_k + s) = a_s delta(t_k) + b_s K_s z(t_k)` with the stacked gain
/// `K_s = [K; ...; K]`.
#[derive(Debug, Clone)]
pub struct LiftedSystem {
    pub s: usize,
    pub a_s: DMatrix<f64>,
    pub b_s: DMatrix<f64>,
}

impl LiftedSystem {
    /// Stacked controller gain `[K; K; ...; K]` ((s*p) x n).
    pub fn stacked_gain(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        stack_gain(k, self.s)
    }

    /// Evolve the tracking error over the interval with held `u = K z`.
    pub fn apply(&self, delta: &DVector<f64>, k: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        &self.a_s * delta + &self.b_s * (self.stacked_gain(k) * z)
    }
}

/// Stacked gain `[K; K; ...; K]` of depth `s`.
pub fn stack_gain(k: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let (p, n) = (k.nrows(), k.ncols());
    let mut out = DMatrix::zeros(s * p, n);
    for r in 0..s {
        out.view_mut((r * p, 0), (p, n)).copy_from(k);
    }
    out
}

/// Lift the dynamics to depth `s` by repeated multiplication.
pub fn lift(sys: &SystemMatrices, s: usize) -> Result<LiftedSystem> {
    if s < 1 {
        return Err(StcError::InvalidArgument("lift depth s must be >= 1".into()));
    }
    let (n, p) = (sys.n(), sys.p());
    // powers[j] = A^j for j = 0..s
    let mut powers = Vec::with_capacity(s + 1);
    powers.push(DMatrix::identity(n, n));
    for j in 1..=s {
        let next = &powers[j - 1] * &sys.a;
        powers.push(next);
    }
    let mut b_s = DMatrix::zeros(n, s * p);
    for j in 0..s {
        // column block j is A^{s-1-j} B
        let block = &powers[s - 1 - j] * &sys.b;
        b_s.view_mut((0, j * p), (n, p)).copy_from(&block);
    }
    Ok(LiftedSystem { s, a_s: powers[s].clone(), b_s })
}

/// Combined measurement `z_i = sum_j a_ij (x_i - x_j) + a_i0 (x_i - x_0)`
/// from the latest broadcast state of every agent (leader included).
pub fn combined_measurement(
    topo: &Topology,
    leader: &DVector<f64>,
    followers: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n_f = topo.n_followers;
    if followers.len() != n_f {
        return Err(StcError::DimensionMismatch(format!(
            "expected {} follower broadcasts, got {}",
            n_f,
            followers.len()
        )));
    }
    let dim = leader.len();
    if followers.iter().any(|x| x.len() != dim) {
        return Err(StcError::DimensionMismatch("broadcast state dimensions differ".into()));
    }
    let mut out = Vec::with_capacity(n_f);
    for i in 0..n_f {
        let mut z = DVector::zeros(dim);
        for j in 0..n_f {
            let w = topo.adjacency[(i, j)];
            if w != 0.0 {
                z += (&followers[i] - &followers[j]) * w;
            }
        }
        let pin = topo.pinning[i];
        if pin != 0.0 {
            z += (&followers[i] - leader) * pin;
        }
        out.push(z);
    }
    Ok(out)
}

/// Exact zero-order-hold discretization of the linearized pendulum
/// `m l^2 a'' = -m g l a - u` at sampling period `t_s`.
///
/// With `omega = sqrt(g/l)` the closed form is
/// `A = [[cos wT, sin wT / w], [-w sin wT, cos wT]]` and
/// `B = [-(1 - cos wT)/(w^2 m l^2), -sin wT/(w m l^2)]`.
/// `E = B_d = noise_scale * I`.
pub fn pendulum_zoh(
    mass: f64,
    length: f64,
    gravity: f64,
    sample_period: f64,
    noise_scale: f64,
) -> Result<SystemMatrices> {
    if mass <= 0.0 || length <= 0.0 || gravity <= 0.0 || sample_period <= 0.0 {
        return Err(StcError::InvalidArgument(
            "pendulum parameters must be positive".into(),
        ));
    }
    let omega = (gravity / length).sqrt();
    let wt = omega * sample_period;
    let (sin, cos) = wt.sin_cos();
    let ml2 = mass * length * length;
    let a = DMatrix::from_row_slice(2, 2, &[cos, sin / omega, -omega * sin, cos]);
    let b = DMatrix::from_row_slice(
        2,
        1,
        &[-(1.0 - cos) / (omega * omega * ml2), -sin / (omega * ml2)],
    );
    let e = DMatrix::identity(2, 2) * noise_scale;
    SystemMatrices::new(a, b, e, None)
}
