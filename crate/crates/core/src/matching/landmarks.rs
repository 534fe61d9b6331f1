//! Landmark geodesics in the kernel metric.
//!
//! A set of landmarks with momenta induces the velocity field
//! `u(x) = sum_j kappa(x - q_j) p_j`. Geodesics through such fields follow
//! the point-vortex Hamiltonian system
//!
//! ```text
//! H(q, p)  = 1/2 sum_ij (p_i . p_j) kappa(q_i - q_j)
//! qdot_i   =  dH/dp_i = sum_j kappa(q_i - q_j) p_j
//! pdot_i   = -dH/dq_i = -sum_j (p_i . p_j) grad kappa(q_i - q_j)
//! ```
//!
//! integrated with rk4. `landmark_match` solves the boundary problem in the
//! initial momenta with the exact discrete adjoint of the integrator and
//! reports `sqrt(2 H)`, the kernel-metric length of the matched geodesic.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, VectorField};
use crate::matching::kernel::Kernel;

#[derive(Clone, Debug)]
pub struct LandmarkState {
    q: Vec<[f64; 2]>,
    p: Vec<[f64; 2]>,
}

impl LandmarkState {
    pub fn new(q: Vec<[f64; 2]>, p: Vec<[f64; 2]>) -> Result<Self> {
        if q.is_empty() || q.len() != p.len() {
            return Err(Error::InvalidInput(
                "landmark positions and momenta must be nonempty and match".into(),
            ));
        }
        for v in q.iter().chain(&p) {
            if !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::InvalidInput("landmark state must be finite".into()));
            }
        }
        Ok(LandmarkState { q, p })
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        false // new() rejects empty states
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.q
    }

    pub fn momenta(&self) -> &[[f64; 2]] {
        &self.p
    }
}

pub fn hamiltonian(kernel: &Kernel, state: &LandmarkState) -> f64 {
    let (q, p) = (&state.q, &state.p);
    let mut h = 0.0;
    for i in 0..q.len() {
        for j in 0..q.len() {
            let dot = p[i][0] * p[j][0] + p[i][1] * p[j][1];
            h += dot * kernel.value([q[i][0] - q[j][0], q[i][1] - q[j][1]]);
        }
    }
    0.5 * h
}

/// The induced velocity at one point.
pub fn velocity_at(kernel: &Kernel, state: &LandmarkState, x: [f64; 2]) -> [f64; 2] {
    let mut u = [0.0; 2];
    for (qj, pj) in state.q.iter().zip(&state.p) {
        let k = kernel.value([x[0] - qj[0], x[1] - qj[1]]);
        u[0] += k * pj[0];
        u[1] += k * pj[1];
    }
    u
}

/// The induced velocity sampled on a grid.
pub fn kernel_velocity(kernel: &Kernel, state: &LandmarkState, grid: &GridSpec) -> VectorField {
    let mut f = VectorField::zeros(grid);
    for i in 0..grid.points() {
        let u = velocity_at(kernel, state, grid.node(i));
        for a in 0..grid.dim() {
            f.component_mut(a)[i] = u[a];
        }
    }
    f
}

/// Hamiltonian vector field: fills (dq, dp) from (q, p).
fn rhs(
    kernel: &Kernel,
    q: &[[f64; 2]],
    p: &[[f64; 2]],
    dq: &mut [[f64; 2]],
    dp: &mut [[f64; 2]],
) {
    let n = q.len();
    for i in 0..n {
        let mut vq = [0.0; 2];
        let mut vp = [0.0; 2];
        for j in 0..n {
            let r = [q[i][0] - q[j][0], q[i][1] - q[j][1]];
            let k = kernel.value(r);
            vq[0] += k * p[j][0];
            vq[1] += k * p[j][1];
            let g = kernel.grad(r);
            let dot = p[i][0] * p[j][0] + p[i][1] * p[j][1];
            vp[0] -= dot * g[0];
            vp[1] -= dot * g[1];
        }
        dq[i] = vq;
        dp[i] = vp;
    }
}

#[derive(Clone)]
struct Phase {
    q: Vec<[f64; 2]>,
    p: Vec<[f64; 2]>,
}

impl Phase {
    fn zeros(n: usize) -> Self {
        Phase { q: vec![[0.0; 2]; n], p: vec![[0.0; 2]; n] }
    }

    fn axpy(&mut self, other: &Phase, t: f64) {
        for (a, b) in self.q.iter_mut().zip(&other.q) {
            a[0] += t * b[0];
            a[1] += t * b[1];
        }
        for (a, b) in self.p.iter_mut().zip(&other.p) {
            a[0] += t * b[0];
            a[1] += t * b[1];
        }
    }
}

fn eval_rhs(kernel: &Kernel, z: &Phase) -> Phase {
    let mut out = Phase::zeros(z.q.len());
    rhs(kernel, &z.q, &z.p, &mut out.q, &mut out.p);
    out
}

fn rk4_phase_step(kernel: &Kernel, z: &Phase, dt: f64) -> Phase {
    let k1 = eval_rhs(kernel, z);
    let mut z2 = z.clone();
    z2.axpy(&k1, 0.5 * dt);
    let k2 = eval_rhs(kernel, &z2);
    let mut z3 = z.clone();
    z3.axpy(&k2, 0.5 * dt);
    let k3 = eval_rhs(kernel, &z3);
    let mut z4 = z.clone();
    z4.axpy(&k3, dt);
    let k4 = eval_rhs(kernel, &z4);
    let mut out = z.clone();
    out.axpy(&k1, dt / 6.0);
    out.axpy(&k2, dt / 3.0);
    out.axpy(&k3, dt / 3.0);
    out.axpy(&k4, dt / 6.0);
    out
}

#[derive(Clone, Debug)]
pub struct ShootResult {
    pub trajectory: Vec<LandmarkState>,
    pub time_grid: Vec<f64>,
    /// Max relative drift of H along the trajectory.
    pub hamiltonian_drift: f64,
}

/// Integrates the Hamiltonian system from `initial` to time `t` in `steps`
/// rk4 steps, recording every knot.
pub fn landmark_shoot(
    kernel: &Kernel,
    initial: &LandmarkState,
    t: f64,
    steps: usize,
) -> Result<ShootResult> {
    if steps == 0 || !t.is_finite() {
        return Err(Error::InvalidInput("shoot needs steps >= 1 and finite time".into()));
    }
    let dt = t / steps as f64;
    let mut z = Phase { q: initial.q.clone(), p: initial.p.clone() };
    let h0 = hamiltonian(kernel, initial);
    let scale = h0.abs().max(1e-300);
    let mut drift = 0.0f64;
    let mut trajectory = vec![initial.clone()];
    let mut time_grid = vec![0.0];
    for s in 1..=steps {
        z = rk4_phase_step(kernel, &z, dt);
        for v in z.q.iter().chain(&z.p) {
            if !(v[0].is_finite() && v[1].is_finite()) {
                return Err(Error::NoConvergence(format!(
                    "landmark integration blew up at step {s}"
                )));
            }
        }
        let state = LandmarkState { q: z.q.clone(), p: z.p.clone() };
        drift = drift.max((hamiltonian(kernel, &state) - h0).abs() / scale);
        trajectory.push(state);
        time_grid.push(t * s as f64 / steps as f64);
    }
    Ok(ShootResult { trajectory, time_grid, hamiltonian_drift: drift })
}

/// Pullback of the Hamiltonian field: accumulates the transpose-Jacobian
/// action of `rhs` at `z` applied to the output cotangent into `acc`.
fn rhs_vjp(kernel: &Kernel, z: &Phase, cot: &Phase, acc: &mut Phase) {
    let n = z.q.len();
    let (q, p) = (&z.q, &z.p);
    for i in 0..n {
        let aq = cot.q[i];
        let ap = cot.p[i];
        for j in 0..n {
            let r = [q[i][0] - q[j][0], q[i][1] - q[j][1]];
            let k = kernel.value(r);
            let g = kernel.grad(r);
            let h = kernel.hess(r);

            // qdot_i = sum_j kappa(r) p_j
            acc.p[j][0] += k * aq[0];
            acc.p[j][1] += k * aq[1];
            let aq_dot_pj = aq[0] * p[j][0] + aq[1] * p[j][1];
            acc.q[i][0] += aq_dot_pj * g[0];
            acc.q[i][1] += aq_dot_pj * g[1];
            acc.q[j][0] -= aq_dot_pj * g[0];
            acc.q[j][1] -= aq_dot_pj * g[1];

            // pdot_i = -sum_j (p_i . p_j) grad kappa(r)
            let ap_dot_g = ap[0] * g[0] + ap[1] * g[1];
            acc.p[i][0] -= ap_dot_g * p[j][0];
            acc.p[i][1] -= ap_dot_g * p[j][1];
            acc.p[j][0] -= ap_dot_g * p[i][0];
            acc.p[j][1] -= ap_dot_g * p[i][1];
            let dot = p[i][0] * p[j][0] + p[i][1] * p[j][1];
            let h_ap = [h[0][0] * ap[0] + h[0][1] * ap[1], h[1][0] * ap[0] + h[1][1] * ap[1]];
            acc.q[i][0] -= dot * h_ap[0];
            acc.q[i][1] -= dot * h_ap[1];
            acc.q[j][0] += dot * h_ap[0];
            acc.q[j][1] += dot * h_ap[1];
        }
    }
}

/// Reverse accumulation through one rk4 step that started at `z`.
fn reverse_rk4_phase(kernel: &Kernel, z: &Phase, dt: f64, zbar: &Phase) -> Phase {
    let n = z.q.len();
    // recompute stages
    let k1 = eval_rhs(kernel, z);
    let mut y2 = z.clone();
    y2.axpy(&k1, 0.5 * dt);
    let k2 = eval_rhs(kernel, &y2);
    let mut y3 = z.clone();
    y3.axpy(&k2, 0.5 * dt);
    let k3 = eval_rhs(kernel, &y3);
    let mut y4 = z.clone();
    y4.axpy(&k3, dt);

    let mut kb4 = Phase::zeros(n);
    kb4.axpy(zbar, dt / 6.0);
    let mut kb3 = Phase::zeros(n);
    kb3.axpy(zbar, dt / 3.0);
    let mut kb2 = Phase::zeros(n);
    kb2.axpy(zbar, dt / 3.0);
    let mut kb1 = Phase::zeros(n);
    kb1.axpy(zbar, dt / 6.0);
    let mut out = zbar.clone();

    let mut yb4 = Phase::zeros(n);
    rhs_vjp(kernel, &y4, &kb4, &mut yb4);
    out.axpy(&yb4, 1.0);
    kb3.axpy(&yb4, dt);

    let mut yb3 = Phase::zeros(n);
    rhs_vjp(kernel, &y3, &kb3, &mut yb3);
    out.axpy(&yb3, 1.0);
    kb2.axpy(&yb3, 0.5 * dt);

    let mut yb2 = Phase::zeros(n);
    rhs_vjp(kernel, &y2, &kb2, &mut yb2);
    out.axpy(&yb2, 1.0);
    kb1.axpy(&yb2, 0.5 * dt);

    let mut yb1 = Phase::zeros(n);
    rhs_vjp(kernel, z, &kb1, &mut yb1);
    out.axpy(&yb1, 1.0);
    out
}

#[derive(Clone, Debug)]
pub struct MatchConfig {
    pub steps: usize,
    pub lambda_schedule: Vec<f64>,
    pub max_iters: usize,
    /// Max endpoint position error, per landmark, for the converged flag.
    pub residual_tol: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            steps: 16,
            lambda_schedule: vec![1e1, 1e2, 1e3, 1e4],
            max_iters: 200,
            residual_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MatchResult {
    /// Matched initial state (source positions with optimized momenta).
    pub initial: LandmarkState,
    pub trajectory: Vec<LandmarkState>,
    /// Kernel-metric length `sqrt(2 H)` of the matched geodesic.
    pub distance: f64,
    /// Largest per-landmark endpoint error (torus metric).
    pub endpoint_err: f64,
    pub hamiltonian_drift: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Nearest-image displacement between two points.
fn wrap_to(lengths: &[f64], a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let mut r = [a[0] - b[0], a[1] - b[1]];
    for (x, &l) in r.iter_mut().zip(lengths) {
        *x -= l * (*x / l).round();
    }
    r
}

/// Endpoint objective and gradient in the initial momenta:
/// `H(q0, p0) + lambda sum_i |q_i(1) - target_i|^2`.
fn match_objective(
    kernel: &Kernel,
    lengths: &[f64],
    q0: &[[f64; 2]],
    p0: &[[f64; 2]],
    target: &[[f64; 2]],
    lambda: f64,
    steps: usize,
    want_grad: bool,
) -> (f64, Option<Vec<[f64; 2]>>) {
    let n = q0.len();
    let dt = 1.0 / steps as f64;
    let mut z = Phase { q: q0.to_vec(), p: p0.to_vec() };
    let mut tape = Vec::with_capacity(steps);
    for _ in 0..steps {
        if want_grad {
            tape.push(z.clone());
        }
        z = rk4_phase_step(kernel, &z, dt);
    }

    let state0 = LandmarkState { q: q0.to_vec(), p: p0.to_vec() };
    let h = hamiltonian(kernel, &state0);
    let mut pen = 0.0;
    let mut seed = Phase::zeros(n);
    for i in 0..n {
        let r = wrap_to(lengths, z.q[i], target[i]);
        pen += r[0] * r[0] + r[1] * r[1];
        seed.q[i] = [2.0 * lambda * r[0], 2.0 * lambda * r[1]];
    }
    let value = h + lambda * pen;
    if !want_grad {
        return (value, None);
    }

    let mut zbar = seed;
    for step_z in tape.iter().rev() {
        zbar = reverse_rk4_phase(kernel, step_z, dt, &zbar);
    }
    // dH/dp0_i = qdot_i(0)
    let mut grad = zbar.p;
    let mut dq = vec![[0.0; 2]; n];
    let mut dp = vec![[0.0; 2]; n];
    rhs(kernel, q0, p0, &mut dq, &mut dp);
    for (g, v) in grad.iter_mut().zip(&dq) {
        g[0] += v[0];
        g[1] += v[1];
    }
    (value, Some(grad))
}

/// Solves for initial momenta carrying `q_source` to `q_target` at time 1,
/// by penalty continuation with gradient descent and Armijo backtracking.
pub fn landmark_match(
    kernel: &Kernel,
    lengths: &[f64],
    q_source: &[[f64; 2]],
    q_target: &[[f64; 2]],
    config: &MatchConfig,
) -> Result<MatchResult> {
    if q_source.is_empty() || q_source.len() != q_target.len() {
        return Err(Error::InvalidInput("landmark sets must be nonempty and match".into()));
    }
    if config.steps == 0 || config.lambda_schedule.is_empty() {
        return Err(Error::InvalidInput("match config needs steps and a schedule".into()));
    }
    let n = q_source.len();
    let mut p0 = vec![[0.0; 2]; n];
    let mut iterations = 0usize;
    let mut step = 1.0f64;

    for &lambda in &config.lambda_schedule {
        let eval = |p: &[[f64; 2]], g: bool| {
            match_objective(kernel, lengths, q_source, p, q_target, lambda, config.steps, g)
        };
        let (mut fval, grad0) = eval(&p0, true);
        let mut grad = grad0.unwrap();
        for _ in 0..config.max_iters {
            let slope: f64 = -grad.iter().map(|g| g[0] * g[0] + g[1] * g[1]).sum::<f64>();
            if slope >= -1e-30 {
                break;
            }
            let mut t = step * 2.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand: Vec<[f64; 2]> = p0
                    .iter()
                    .zip(&grad)
                    .map(|(p, g)| [p[0] - t * g[0], p[1] - t * g[1]])
                    .collect();
                let (fc, _) = eval(&cand, false);
                if fc.is_finite() && fc <= fval + 1e-4 * t * slope {
                    accepted = Some((cand, fc, t));
                    break;
                }
                t *= 0.5;
            }
            let Some((cand, fc, t_acc)) = accepted else { break };
            p0 = cand;
            step = t_acc;
            iterations += 1;
            let stalled = (fval - fc).abs() <= 1e-12 * (1.0 + fval.abs());
            fval = fc;
            if stalled {
                break;
            }
            grad = eval(&p0, true).1.unwrap();
        }
    }

    let initial = LandmarkState::new(q_source.to_vec(), p0)?;
    let shot = landmark_shoot(kernel, &initial, 1.0, config.steps)?;
    let endpoint = shot.trajectory.last().unwrap();
    let mut endpoint_err = 0.0f64;
    for (qi, ti) in endpoint.positions().iter().zip(q_target) {
        let r = wrap_to(lengths, *qi, *ti);
        endpoint_err = endpoint_err.max((r[0] * r[0] + r[1] * r[1]).sqrt());
    }
    let h = hamiltonian(kernel, &initial);
    Ok(MatchResult {
        distance: (2.0 * h).max(0.0).sqrt(),
        endpoint_err,
        hamiltonian_drift: shot.hamiltonian_drift,
        converged: endpoint_err <= config.residual_tol,
        iterations,
        trajectory: shot.trajectory,
        initial,
    })
}
