//! Flows of time-dependent vector fields and the diffeomorphisms they
//! generate.
//!
//! A velocity is piecewise constant in time over a knot grid; its flow moves
//! every grid node along `dx/dt = u(t, x)` with the field evaluated by
//! interpolation. The result is stored as a displacement field (periodic by
//! construction) together with its Jacobian determinant; any map whose
//! determinant is not strictly positive is rejected as degenerate.

use crate::error::{Error, Result};
use crate::grid::{same_grid, GridSpec, ScalarField, VectorField};
use crate::interp::{SampleMode, VectorSampler};
use crate::spectral::{self, MetricSpec};

/// Piecewise-constant-in-time velocity: `fields[j]` acts on
/// `[time_grid[j], time_grid[j+1])`.
#[derive(Clone, Debug)]
pub struct TimeVelocity {
    time_grid: Vec<f64>,
    fields: Vec<VectorField>,
    metric: MetricSpec,
}

impl TimeVelocity {
    pub fn new(time_grid: Vec<f64>, fields: Vec<VectorField>, metric: MetricSpec) -> Result<Self> {
        if time_grid.len() < 2 {
            return Err(Error::InvalidInput("time grid needs at least two knots".into()));
        }
        if fields.len() + 1 != time_grid.len() {
            return Err(Error::InvalidInput(format!(
                "{} fields for {} knots (need knots - 1)",
                fields.len(),
                time_grid.len()
            )));
        }
        for w in time_grid.windows(2) {
            if !(w[0].is_finite() && w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "time knots must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for f in &fields {
            same_grid(metric.grid(), f.grid(), "velocity field")?;
        }
        Ok(TimeVelocity { time_grid, fields, metric })
    }

    /// Constant-in-time velocity on `[0, 1]` split into `n` equal intervals.
    pub fn constant(field: VectorField, metric: MetricSpec, n: usize) -> Result<Self> {
        let n = n.max(1);
        let time_grid = (0..=n).map(|j| j as f64 / n as f64).collect();
        Ok(Self::new(time_grid, vec![field; n], metric)?)
    }

    pub fn zero(metric: MetricSpec, n: usize) -> Result<Self> {
        let f = VectorField::zeros(metric.grid());
        Self::constant(f, metric, n)
    }

    pub fn grid(&self) -> &GridSpec {
        self.metric.grid()
    }

    pub fn metric(&self) -> &MetricSpec {
        &self.metric
    }

    pub fn time_grid(&self) -> &[f64] {
        &self.time_grid
    }

    pub fn fields(&self) -> &[VectorField] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [VectorField] {
        &mut self.fields
    }

    pub fn intervals(&self) -> usize {
        self.fields.len()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.time_grid[0], *self.time_grid.last().unwrap())
    }

    /// H^s norm of each slice.
    pub fn slice_norms(&self) -> Result<Vec<f64>> {
        self.fields.iter().map(|f| self.metric.norm(f)).collect()
    }

    /// Action `int ||u(t)||_{H^s} dt`, the length of the generated path.
    pub fn l1_norm(&self) -> Result<f64> {
        let norms = self.slice_norms()?;
        Ok(self
            .time_grid
            .windows(2)
            .zip(&norms)
            .map(|(w, n)| (w[1] - w[0]) * n)
            .sum())
    }

    /// Velocity of the time-reversed path on the same span: `t` maps to
    /// `t0 + tN - t`, fields reverse order and flip sign. Flowing it undoes
    /// the flow of `self`.
    pub fn reversed(&self) -> TimeVelocity {
        let (t0, tn) = self.span();
        let mut time_grid: Vec<f64> = self.time_grid.iter().map(|&t| t0 + tn - t).collect();
        time_grid.reverse();
        let mut fields: Vec<VectorField> = self.fields.clone();
        fields.reverse();
        for f in &mut fields {
            f.scale(-1.0);
        }
        TimeVelocity { time_grid, fields, metric: self.metric.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    Euler,
    #[default]
    Rk4,
}

#[derive(Clone, Debug)]
pub struct FlowOptions {
    pub scheme: Scheme,
    /// Baseline substeps per velocity interval.
    pub substeps: usize,
    /// Cap on the action `dt * ||u_j||_{H^s}` of one internal step; intervals
    /// carrying more action get extra substeps. Zero disables the rule.
    pub max_step_mass: f64,
    pub sampling: SampleMode,
    /// Verify det Dphi > 0 at every knot (not just at the end), so the error
    /// reports the first time of degeneracy.
    pub check_knots: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            scheme: Scheme::Rk4,
            substeps: 4,
            max_step_mass: 0.2,
            sampling: SampleMode::Spline,
            check_knots: true,
        }
    }
}

impl FlowOptions {
    fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::InvalidInput("substeps must be >= 1".into()));
        }
        if !(self.max_step_mass >= 0.0) {
            return Err(Error::InvalidInput("max_step_mass must be >= 0".into()));
        }
        Ok(())
    }

    fn substeps_for(&self, segment_mass: f64) -> usize {
        let mut m = self.substeps;
        if self.max_step_mass > 0.0 && segment_mass > 0.0 {
            m = m.max((segment_mass / self.max_step_mass).ceil() as usize);
        }
        m
    }
}

/// An orientation-preserving map of the torus, stored as `phi = id + f` with
/// periodic displacement `f`, together with `det Dphi` (computed spectrally
/// from the displacement) which is strictly positive everywhere.
#[derive(Clone, Debug)]
pub struct Diffeo {
    displacement: VectorField,
    jac_det: ScalarField,
    min_det: f64,
}

impl Diffeo {
    pub fn identity(grid: &GridSpec) -> Self {
        Diffeo {
            displacement: VectorField::zeros(grid),
            jac_det: ScalarField::from_fn(grid, |_| 1.0),
            min_det: 1.0,
        }
    }

    /// Rigid translation; the Jacobian is exactly the identity.
    pub fn translation(grid: &GridSpec, shift: [f64; 2]) -> Self {
        Diffeo {
            displacement: VectorField::from_fn(grid, |_| shift),
            jac_det: ScalarField::from_fn(grid, |_| 1.0),
            min_det: 1.0,
        }
    }

    pub fn from_displacement(displacement: VectorField) -> Result<Self> {
        Self::checked(displacement, f64::NAN)
    }

    fn checked(displacement: VectorField, time: f64) -> Result<Self> {
        let (jac_det, min_det, argmin) = jacobian_determinant(&displacement);
        if min_det <= 0.0 {
            let grid = displacement.grid();
            let mi = grid.multi_index(argmin);
            return Err(Error::DegenerateFlow {
                time,
                node: mi[..grid.dim()].to_vec(),
                det: min_det,
            });
        }
        Ok(Diffeo { displacement, jac_det, min_det })
    }

    pub fn grid(&self) -> &GridSpec {
        self.displacement.grid()
    }

    pub fn displacement(&self) -> &VectorField {
        &self.displacement
    }

    pub fn jac_det(&self) -> &ScalarField {
        &self.jac_det
    }

    pub fn min_det(&self) -> f64 {
        self.min_det
    }

    /// `phi(x)` for every grid node, as absolute positions.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        let grid = self.grid();
        (0..grid.points())
            .map(|i| {
                let mut p = grid.node(i);
                let v = self.displacement.at(i);
                p[0] += v[0];
                p[1] += v[1];
                p
            })
            .collect()
    }

    /// Evaluates `phi` at arbitrary points.
    pub fn apply(&self, points: &[[f64; 2]], mode: SampleMode) -> Vec<[f64; 2]> {
        let s = VectorSampler::new(&self.displacement, mode);
        points
            .iter()
            .map(|&p| {
                let v = s.eval(p);
                [p[0] + v[0], p[1] + v[1]]
            })
            .collect()
    }

    /// H^order distance `||phi - psi||_{H^order}` (identity parts cancel, so
    /// this is the norm of the displacement difference).
    pub fn h_dist(&self, other: &Diffeo, order: f64) -> Result<f64> {
        same_grid(self.grid(), other.grid(), "h_dist")?;
        let mut diff = self.displacement.clone();
        diff.add_scaled(&other.displacement, -1.0)?;
        Ok(spectral::norm_at_vec(&diff, order))
    }
}

/// `det(I + Df)` from spectral derivatives of the displacement. Returns the
/// field, its minimum, and the flat index attaining it.
fn jacobian_determinant(f: &VectorField) -> (ScalarField, f64, usize) {
    let grid = f.grid();
    let mut det = ScalarField::zeros(grid);
    match grid.dim() {
        1 => {
            let d0 = spectral::derivative_plane(grid, f.component(0), 0);
            for (v, d) in det.values_mut().iter_mut().zip(&d0) {
                *v = 1.0 + d;
            }
        }
        _ => {
            let d00 = spectral::derivative_plane(grid, f.component(0), 0);
            let d01 = spectral::derivative_plane(grid, f.component(0), 1);
            let d10 = spectral::derivative_plane(grid, f.component(1), 0);
            let d11 = spectral::derivative_plane(grid, f.component(1), 1);
            for i in 0..grid.points() {
                det.values_mut()[i] = (1.0 + d00[i]) * (1.0 + d11[i]) - d01[i] * d10[i];
            }
        }
    }
    let mut min = f64::INFINITY;
    let mut arg = 0;
    for (i, &v) in det.values().iter().enumerate() {
        if v < min {
            min = v;
            arg = i;
        }
    }
    (det, min, arg)
}

/// Smallest value of `det Dphi` over the grid.
pub fn jacobian_min(phi: &Diffeo) -> f64 {
    phi.min_det
}

pub(crate) fn grid_nodes(grid: &GridSpec) -> Vec<[f64; 2]> {
    (0..grid.points()).map(|i| grid.node(i)).collect()
}

#[inline]
pub(crate) fn rk4_step(pos: &mut [[f64; 2]], s: &VectorSampler, dt: f64) {
    for p in pos.iter_mut() {
        let k1 = s.eval(*p);
        let k2 = s.eval([p[0] + 0.5 * dt * k1[0], p[1] + 0.5 * dt * k1[1]]);
        let k3 = s.eval([p[0] + 0.5 * dt * k2[0], p[1] + 0.5 * dt * k2[1]]);
        let k4 = s.eval([p[0] + dt * k3[0], p[1] + dt * k3[1]]);
        p[0] += dt / 6.0 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0]);
        p[1] += dt / 6.0 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1]);
    }
}

#[inline]
fn euler_step(pos: &mut [[f64; 2]], s: &VectorSampler, dt: f64) {
    for p in pos.iter_mut() {
        let k = s.eval(*p);
        p[0] += dt * k[0];
        p[1] += dt * k[1];
    }
}

fn advance(pos: &mut [[f64; 2]], s: &VectorSampler, dt_total: f64, nsub: usize, scheme: Scheme) {
    let dt = dt_total / nsub as f64;
    for _ in 0..nsub {
        match scheme {
            Scheme::Rk4 => rk4_step(pos, s, dt),
            Scheme::Euler => euler_step(pos, s, dt),
        }
    }
}

fn displacement_from(grid: &GridSpec, pos: &[[f64; 2]]) -> VectorField {
    let mut f = VectorField::zeros(grid);
    for i in 0..grid.points() {
        let node = grid.node(i);
        for a in 0..grid.dim() {
            f.component_mut(a)[i] = pos[i][a] - node[a];
        }
    }
    f
}

/// Integrates the flow of `u` from its initial knot up to time `t` and
/// returns `Fl_t(u)` (the map taking a point at the initial time to its
/// position at `t`).
pub fn integrate_flow(u: &TimeVelocity, t: f64, opts: &FlowOptions) -> Result<Diffeo> {
    opts.validate()?;
    let (t0, tn) = u.span();
    if !(t >= t0 && t <= tn) {
        return Err(Error::InvalidInput(format!(
            "requested time {t} outside the velocity span [{t0}, {tn}]"
        )));
    }
    let grid = u.grid();
    let mut pos = grid_nodes(grid);
    let norms = u.slice_norms()?;
    for j in 0..u.intervals() {
        let a = u.time_grid()[j];
        let b = u.time_grid()[j + 1];
        if a >= t {
            break;
        }
        let seg_end = b.min(t);
        let dt_total = seg_end - a;
        if dt_total <= 0.0 {
            continue;
        }
        let sampler = VectorSampler::new(&u.fields()[j], opts.sampling);
        let nsub = opts.substeps_for(dt_total * norms[j]);
        advance(&mut pos, &sampler, dt_total, nsub, opts.scheme);
        if opts.check_knots && seg_end < t {
            // full interval traversed, end time still ahead: knot check
            Diffeo::checked(displacement_from(grid, &pos), seg_end)?;
        }
    }
    Diffeo::checked(displacement_from(grid, &pos), t)
}

/// One pass over the whole span, returning `Fl_{t_j}(u)` at every knot
/// (the first entry is the identity).
pub fn flow_snapshots(u: &TimeVelocity, opts: &FlowOptions) -> Result<Vec<Diffeo>> {
    opts.validate()?;
    let grid = u.grid();
    let mut pos = grid_nodes(grid);
    let norms = u.slice_norms()?;
    let mut out = Vec::with_capacity(u.intervals() + 1);
    out.push(Diffeo::identity(grid));
    for j in 0..u.intervals() {
        let dt_total = u.time_grid()[j + 1] - u.time_grid()[j];
        let sampler = VectorSampler::new(&u.fields()[j], opts.sampling);
        let nsub = opts.substeps_for(dt_total * norms[j]);
        advance(&mut pos, &sampler, dt_total, nsub, opts.scheme);
        out.push(Diffeo::checked(
            displacement_from(grid, &pos),
            u.time_grid()[j + 1],
        )?);
    }
    Ok(out)
}

/// `outer o inner`: displacement `f_in(x) + f_out(x + f_in(x))` with the
/// outer displacement interpolated at the warped positions.
pub fn compose(outer: &Diffeo, inner: &Diffeo, mode: SampleMode) -> Result<Diffeo> {
    same_grid(outer.grid(), inner.grid(), "compose")?;
    let grid = outer.grid();
    let s = VectorSampler::new(outer.displacement(), mode);
    let mut disp = inner.displacement().clone();
    for i in 0..grid.points() {
        let node = grid.node(i);
        let fi = inner.displacement().at(i);
        let q = [node[0] + fi[0], node[1] + fi[1]];
        let fo = s.eval(q);
        for a in 0..grid.dim() {
            disp.component_mut(a)[i] += fo[a];
        }
    }
    Diffeo::from_displacement(disp)
}

/// How to compute an inverse map.
pub enum InvertMethod<'a> {
    /// Flow the time-reversed, negated generating field. Exact up to
    /// integration error; requires knowing a velocity whose flow is `phi`.
    ReversedFlow { velocity: &'a TimeVelocity, options: &'a FlowOptions },
    /// Solve `g(x) = -f(x + g(x))` for the inverse displacement by fixed-point
    /// iteration. Requires the displacement gradient to be a contraction.
    FixedPoint { tol: f64, max_iter: usize, sampling: SampleMode },
}

impl InvertMethod<'_> {
    /// Fixed-point iteration with default tolerances.
    pub fn fixed_point() -> Self {
        InvertMethod::FixedPoint { tol: 1e-12, max_iter: 200, sampling: SampleMode::Spline }
    }
}

pub fn invert(phi: &Diffeo, method: InvertMethod) -> Result<Diffeo> {
    match method {
        InvertMethod::ReversedFlow { velocity, options } => {
            let (_, tn) = velocity.span();
            integrate_flow(&velocity.reversed(), tn, options)
        }
        InvertMethod::FixedPoint { tol, max_iter, sampling } => {
            invert_fixed_point(phi, tol, max_iter, sampling)
        }
    }
}

fn invert_fixed_point(
    phi: &Diffeo,
    tol: f64,
    max_iter: usize,
    sampling: SampleMode,
) -> Result<Diffeo> {
    let grid = phi.grid();
    let lip = displacement_lipschitz(phi.displacement());
    if lip >= 1.0 {
        return Err(Error::NoConvergence(format!(
            "fixed-point inversion needs sup |Df| < 1, estimated {lip:.3}"
        )));
    }
    let s = VectorSampler::new(phi.displacement(), sampling);
    let nodes = grid_nodes(grid);
    let mut g = vec![[0.0; 2]; grid.points()];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut change: f64 = 0.0;
        for (i, node) in nodes.iter().enumerate() {
            let q = [node[0] + g[i][0], node[1] + g[i][1]];
            let v = s.eval(q);
            for a in 0..grid.dim() {
                let next = -v[a];
                change = change.max((next - g[i][a]).abs());
                g[i][a] = next;
            }
        }
        if change <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "fixed-point inversion did not reach tol {tol} in {max_iter} iterations"
        )));
    }
    let mut disp = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        for i in 0..grid.points() {
            disp.component_mut(a)[i] = g[i][a];
        }
    }
    Diffeo::from_displacement(disp)
}

/// Sup over nodes of the operator norm of the displacement Jacobian,
/// the contraction factor of the inversion iteration.
fn displacement_lipschitz(f: &VectorField) -> f64 {
    let grid = f.grid();
    match grid.dim() {
        1 => {
            let d = spectral::derivative_plane(grid, f.component(0), 0);
            d.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        }
        _ => {
            let d00 = spectral::derivative_plane(grid, f.component(0), 0);
            let d01 = spectral::derivative_plane(grid, f.component(0), 1);
            let d10 = spectral::derivative_plane(grid, f.component(1), 0);
            let d11 = spectral::derivative_plane(grid, f.component(1), 1);
            let mut m = 0.0f64;
            for i in 0..grid.points() {
                // largest singular value of the 2x2 [[a, b], [c, d]]
                let (a, b, c, d) = (d00[i], d01[i], d10[i], d11[i]);
                let q1 = a * a + b * b + c * c + d * d;
                let det = a * d - b * c;
                let q2 = f64::sqrt((q1 * q1 - 4.0 * det * det).max(0.0));
                m = m.max(f64::sqrt(((q1 + q2) / 2.0).max(0.0)));
            }
            m
        }
    }
}

/// Splits `u` at arc-length quantiles into consecutive pieces, each of action
/// `< eps`, using at most `floor(action/eps) + 1` pieces. Concatenating the
/// pieces reproduces `u`; flowing them in order reproduces the flow of `u`.
/// Flat spots of the arc length split at their right edge.
pub fn decompose_velocity(u: &TimeVelocity, eps: f64) -> Result<Vec<TimeVelocity>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let norms = u.slice_norms()?;
    let dts: Vec<f64> = u.time_grid().windows(2).map(|w| w[1] - w[0]).collect();
    let masses: Vec<f64> = dts.iter().zip(&norms).map(|(dt, n)| dt * n).collect();
    let total: f64 = masses.iter().sum();
    if total < eps {
        return Ok(vec![u.clone()]);
    }
    let n_pieces = (total / eps).floor() as usize + 1;

    // rightmost preimage of each arc-length target
    let mut boundaries = vec![u.time_grid()[0]];
    for i in 1..n_pieces {
        let s = total * i as f64 / n_pieces as f64;
        let mut cum = 0.0;
        let mut t_split = *u.time_grid().last().unwrap();
        for j in 0..masses.len() {
            let next = cum + masses[j];
            if s < next * (1.0 - 1e-15) || (s <= next && j + 1 == masses.len()) {
                debug_assert!(masses[j] > 0.0);
                t_split = u.time_grid()[j] + dts[j] * (s - cum) / masses[j];
                break;
            }
            if s <= next {
                // target sits exactly at knot j+1: sup convention pushes the
                // split right through any zero-mass intervals
                let mut jj = j;
                while jj + 1 < masses.len() && masses[jj + 1] == 0.0 {
                    jj += 1;
                }
                t_split = u.time_grid()[jj + 1];
                break;
            }
            cum = next;
        }
        boundaries.push(t_split);
    }
    boundaries.push(*u.time_grid().last().unwrap());

    // snap near-coincident boundaries onto original knots so pieces never
    // carry sliver intervals
    let snap = 1e-9 * dts.iter().cloned().fold(f64::INFINITY, f64::min);
    for b in boundaries.iter_mut() {
        if let Some(&k) = u
            .time_grid()
            .iter()
            .find(|&&k| (k - *b).abs() < snap)
        {
            *b = k;
        }
    }

    let mut pieces = Vec::with_capacity(n_pieces);
    for w in boundaries.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut knots = vec![a];
        let mut fields = Vec::new();
        for j in 0..u.intervals() {
            let (ta, tb) = (u.time_grid()[j], u.time_grid()[j + 1]);
            let lo = ta.max(a);
            let hi = tb.min(b);
            if hi > lo + snap {
                knots.push(hi);
                fields.push(u.fields()[j].clone());
            }
        }
        pieces.push(TimeVelocity::new(knots, fields, u.metric().clone())?);
    }
    Ok(pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn metric_1d(n: usize) -> MetricSpec {
        let g = GridSpec::line(n, TAU).unwrap();
        MetricSpec::new(&g, 2.0).unwrap()
    }

    /// Closed form for the flow of `u(x) = a sin x` on the unit circle:
    /// separation of variables gives `tan(phi/2) = e^{a t} tan(x/2)`;
    /// the atan2 form below keeps the branch continuous on [0, 2 pi).
    fn sin_flow_exact(a: f64, t: f64, x: f64) -> f64 {
        let (s, c) = (0.5 * x).sin_cos();
        2.0 * f64::atan2((a * t).exp() * s, c)
    }

    /// d/dx of the closed form, positive for all x and t.
    fn sin_flow_exact_deriv(a: f64, t: f64, x: f64) -> f64 {
        let e = (a * t).exp();
        let (s, c) = (0.5 * x).sin_cos();
        e / (c * c + e * e * s * s)
    }

    #[test]
    fn zero_field_flows_to_identity_bit_exactly() {
        let m = metric_1d(16);
        let u = TimeVelocity::zero(m, 4).unwrap();
        let phi = integrate_flow(&u, 1.0, &FlowOptions::default()).unwrap();
        assert!(phi.displacement().component(0).iter().all(|&v| v == 0.0));
        assert_eq!(jacobian_min(&phi), 1.0);
    }

    #[test]
    fn sinusoidal_flow_matches_separable_solution() {
        let m = metric_1d(64);
        let a = 0.5;
        let field = VectorField::from_fn(m.grid(), |p| [a * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(field, m.clone(), 1).unwrap();
        let opts = FlowOptions {
            substeps: 64,
            max_step_mass: 0.0,
            sampling: SampleMode::Trig,
            ..FlowOptions::default()
        };
        let phi = integrate_flow(&u, 1.0, &opts).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..m.grid().points() {
            let x = m.grid().node(i)[0];
            let got = x + phi.displacement().component(0)[i];
            let want = sin_flow_exact(a, 1.0, x);
            sup = sup.max((got - want).abs());
        }
        assert!(sup < 1e-8, "sup error {sup:.3e}");
        // Jacobian against the closed-form derivative
        for i in 0..m.grid().points() {
            let x = m.grid().node(i)[0];
            let want = sin_flow_exact_deriv(a, 1.0, x);
            let got = phi.jac_det().values()[i];
            assert!((got - want).abs() < 1e-6, "jac at {x}: {got} vs {want}");
        }
    }

    #[test]
    fn rk4_refinement_gains_fourth_order() {
        let m = metric_1d(64);
        let a = 0.5;
        let field = VectorField::from_fn(m.grid(), |p| [a * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(field, m.clone(), 1).unwrap();
        let sup_err = |nsub: usize, scheme: Scheme| -> f64 {
            let opts = FlowOptions {
                scheme,
                substeps: nsub,
                max_step_mass: 0.0,
                sampling: SampleMode::Trig,
                check_knots: false,
                ..FlowOptions::default()
            };
            let phi = integrate_flow(&u, 1.0, &opts).unwrap();
            (0..m.grid().points())
                .map(|i| {
                    let x = m.grid().node(i)[0];
                    (x + phi.displacement().component(0)[i] - sin_flow_exact(a, 1.0, x)).abs()
                })
                .fold(0.0f64, f64::max)
        };
        let r4 = sup_err(2, Scheme::Rk4) / sup_err(4, Scheme::Rk4);
        assert!(r4 > 12.0, "rk4 halving gained only {r4:.2}x");
        let r1 = sup_err(8, Scheme::Euler) / sup_err(16, Scheme::Euler);
        assert!(r1 > 1.8 && r1 < 2.3, "euler halving gained {r1:.2}x");
    }

    #[test]
    fn translation_flow_is_exact_for_constant_fields() {
        let g = GridSpec::square(8, TAU).unwrap();
        let m = MetricSpec::new(&g, 2.5).unwrap();
        let field = VectorField::from_fn(&g, |_| [0.3, -0.7]);
        let u = TimeVelocity::constant(field, m, 3).unwrap();
        let phi = integrate_flow(&u, 1.0, &FlowOptions::default()).unwrap();
        for i in 0..g.points() {
            assert!((phi.displacement().component(0)[i] - 0.3).abs() < 1e-12);
            assert!((phi.displacement().component(1)[i] + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn big_euler_step_degenerates_and_reports_location() {
        let m = metric_1d(32);
        let field = VectorField::from_fn(m.grid(), |p| [-2.0 * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(field, m, 1).unwrap();
        let opts = FlowOptions {
            scheme: Scheme::Euler,
            substeps: 1,
            max_step_mass: 0.0,
            ..FlowOptions::default()
        };
        match integrate_flow(&u, 1.0, &opts) {
            Err(Error::DegenerateFlow { time, det, .. }) => {
                assert_eq!(time, 1.0);
                assert!(det <= 0.0);
            }
            other => panic!("expected degenerate flow, got {other:?}"),
        }
    }

    #[test]
    fn inverse_undoes_flow_both_ways() {
        let m = metric_1d(64);
        let field = VectorField::from_fn(m.grid(), |p| {
            [0.25 * p[0].sin() + 0.1 * (2.0 * p[0]).cos(), 0.0]
        });
        let u = TimeVelocity::constant(field, m.clone(), 4).unwrap();
        // trig sampling end to end: the verification composes maps, and
        // spline resampling noise (~1e-6) would drown the 1e-8 target
        let opts = FlowOptions { sampling: SampleMode::Trig, ..FlowOptions::default() };
        let phi = integrate_flow(&u, 1.0, &opts).unwrap();

        for inv in [
            invert(&phi, InvertMethod::ReversedFlow { velocity: &u, options: &opts }).unwrap(),
            invert(
                &phi,
                InvertMethod::FixedPoint { tol: 1e-13, max_iter: 300, sampling: SampleMode::Trig },
            )
            .unwrap(),
        ] {
            let round = compose(&inv, &phi, SampleMode::Trig).unwrap();
            let sup = round.displacement().sup_norm();
            assert!(sup < 1e-8, "phi^-1 o phi differs from id by {sup:.3e}");
            let round2 = compose(&phi, &inv, SampleMode::Trig).unwrap();
            assert!(round2.displacement().sup_norm() < 1e-8);
        }
    }

    #[test]
    fn fixed_point_rejects_non_contractive_displacement() {
        let g = GridSpec::line(64, TAU).unwrap();
        // f' = 0.7 (cos x + 0.7 cos 2x) ranges over about [-0.62, 1.19]:
        // a valid diffeo (det = 1 + f' > 0) whose displacement gradient
        // still exceeds 1, so the iteration g -> -f(id + g) may diverge
        let disp = VectorField::from_fn(&g, |p| {
            [0.7 * (p[0].sin() + 0.35 * (2.0 * p[0]).sin()), 0.0]
        });
        let phi = Diffeo::from_displacement(disp).unwrap();
        match invert(&phi, InvertMethod::fixed_point()) {
            Err(Error::NoConvergence(msg)) => assert!(msg.contains("sup |Df|")),
            other => panic!("expected non-contraction rejection, got {other:?}"),
        }
    }

    #[test]
    fn decomposition_splits_mass_into_small_pieces() {
        let m = metric_1d(32);
        let field = VectorField::from_fn(m.grid(), |p| [0.2 * p[0].sin(), 0.0]);
        let mut u = TimeVelocity::constant(field, m.clone(), 5).unwrap();
        // uneven slice norms
        u.fields_mut()[2].scale(3.0);
        let total = u.l1_norm().unwrap();
        let eps = total / 2.5;
        let pieces = decompose_velocity(&u, eps).unwrap();
        assert!(pieces.len() <= (total / eps).floor() as usize + 1);
        let mut sum = 0.0;
        for p in &pieces {
            let mass = p.l1_norm().unwrap();
            assert!(mass < eps, "piece mass {mass} >= eps {eps}");
            sum += mass;
        }
        assert!((sum - total).abs() < 1e-10 * total);
        // pieces tile the span
        assert_eq!(pieces.first().unwrap().span().0, 0.0);
        assert_eq!(pieces.last().unwrap().span().1, 1.0);
        for w in pieces.windows(2) {
            assert_eq!(w[0].span().1, w[1].span().0);
        }
    }

    #[test]
    fn small_mass_velocity_stays_whole() {
        let m = metric_1d(16);
        let field = VectorField::from_fn(m.grid(), |p| [1e-3 * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(field, m, 3).unwrap();
        let pieces = decompose_velocity(&u, 1.0).unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].time_grid(), u.time_grid());
    }

    #[test]
    fn zero_velocity_interval_splits_at_right_edge_of_flat_spot() {
        let m = metric_1d(16);
        let f = VectorField::from_fn(m.grid(), |p| [0.5 * p[0].sin(), 0.0]);
        let z = VectorField::zeros(m.grid());
        // mass profile: [m, 0, m] over three equal intervals
        let u = TimeVelocity::new(
            vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0],
            vec![f.clone(), z, f],
            m.clone(),
        )
        .unwrap();
        let total = u.l1_norm().unwrap();
        // two pieces: the split target total/2 sits exactly at the end of the
        // flat interval under the sup convention
        let pieces = decompose_velocity(&u, 0.6 * total).unwrap();
        assert_eq!(pieces.len(), 2);
        assert!((pieces[0].span().1 - 2.0 / 3.0).abs() < 1e-12);
    }
}
