//! Paths of diffeomorphisms and their right-trivialized velocities.
//!
//! A path `phi(t)` and a time-dependent field `u(t)` correspond through
//! `u(t) = (d phi/dt) o phi(t)^{-1}`; the path is recovered by flowing `u`
//! from `phi(0)`. Discretely the derivative is the forward difference over
//! one knot interval, so the round trip is exact up to O(dt) in the interval
//! width plus interpolation error.
//!
//! The energy of a path is the time integral of `||u(t)||^2_{H^s}`; it only
//! depends on the frames through `u`, and it is invariant under composing
//! every frame with a fixed map on the right.

use crate::error::{Error, Result};
use crate::flow::{self, Diffeo, FlowOptions, InvertMethod, TimeVelocity};
use crate::grid::{same_grid, GridSpec, VectorField};
use crate::interp::{SampleMode, VectorSampler};
use crate::spectral::MetricSpec;

/// A discrete path: one frame per time knot.
#[derive(Clone, Debug)]
pub struct DiffeoPath {
    time_grid: Vec<f64>,
    frames: Vec<Diffeo>,
    metric: MetricSpec,
}

impl DiffeoPath {
    pub fn new(time_grid: Vec<f64>, frames: Vec<Diffeo>, metric: MetricSpec) -> Result<Self> {
        if time_grid.len() != frames.len() || time_grid.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "{} knots for {} frames",
                time_grid.len(),
                frames.len()
            )));
        }
        for w in time_grid.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::InvalidInput(format!(
                    "time knots must increase strictly, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for f in &frames {
            same_grid(metric.grid(), f.grid(), "path frame")?;
        }
        Ok(DiffeoPath { time_grid, frames, metric })
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

    pub fn frames(&self) -> &[Diffeo] {
        &self.frames
    }
}

/// Energy, length, and the per-interval speeds of a velocity.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    /// `sum_j dt_j ||u_j||^2_{H^s}`
    pub energy: f64,
    /// `sum_j dt_j ||u_j||_{H^s}`
    pub length: f64,
    /// `||u_j||_{H^s}` per interval
    pub speed_profile: Vec<f64>,
}

/// Quadrature of energy and length over the knot grid. For a unit time span,
/// `length^2 <= energy` (Cauchy-Schwarz), with equality iff the speed is
/// constant.
pub fn path_energy(u: &TimeVelocity) -> Result<EnergyReport> {
    let speeds = u.slice_norms()?;
    let mut energy = 0.0;
    let mut length = 0.0;
    for (w, &n) in u.time_grid().windows(2).zip(&speeds) {
        let dt = w[1] - w[0];
        energy += dt * n * n;
        length += dt * n;
    }
    Ok(EnergyReport { energy, length, speed_profile: speeds })
}

/// Right-trivialized velocity of a path: on interval `j`,
/// `u_j = (phi_{j+1} - phi_j)/dt o phi_j^{-1}`.
///
/// Frames are inverted by fixed point, which requires their displacement
/// gradients to be contractions; paths produced by flows from the identity
/// at moderate amplitude satisfy this.
pub fn theta(path: &DiffeoPath, mode: SampleMode) -> Result<TimeVelocity> {
    let grid = path.grid();
    let mut fields = Vec::with_capacity(path.frames.len() - 1);
    for j in 0..path.frames.len() - 1 {
        let dt = path.time_grid[j + 1] - path.time_grid[j];
        let mut diff = path.frames[j + 1].displacement().clone();
        diff.add_scaled(path.frames[j].displacement(), -1.0)?;
        diff.scale(1.0 / dt);
        let inv = flow::invert(
            &path.frames[j],
            InvertMethod::FixedPoint { tol: 1e-12, max_iter: 200, sampling: mode },
        )?;
        let sampler = VectorSampler::new(&diff, mode);
        let mut u = VectorField::zeros(grid);
        for i in 0..grid.points() {
            let node = grid.node(i);
            let g = inv.displacement().at(i);
            let v = sampler.eval([node[0] + g[0], node[1] + g[1]]);
            for a in 0..grid.dim() {
                u.component_mut(a)[i] = v[a];
            }
        }
        fields.push(u);
    }
    TimeVelocity::new(path.time_grid.clone(), fields, path.metric.clone())
}

/// Reconstructs the path with velocity `u` starting at `start`:
/// `phi(t_j) = Fl_{t_j}(u) o start`.
pub fn theta_inverse(u: &TimeVelocity, start: &Diffeo, opts: &FlowOptions) -> Result<DiffeoPath> {
    same_grid(u.grid(), start.grid(), "theta_inverse start")?;
    let snapshots = flow::flow_snapshots(u, opts)?;
    let identity_start = start.displacement().sup_norm() == 0.0;
    let frames = snapshots
        .into_iter()
        .map(|fl| {
            if identity_start {
                Ok(fl)
            } else {
                flow::compose(&fl, start, opts.sampling)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DiffeoPath::new(u.time_grid().to_vec(), frames, u.metric().clone())
}

/// Composes every frame with `psi` on the right. Leaves the trivialized
/// velocity, and hence energy and length, unchanged.
pub fn right_translate(path: &DiffeoPath, psi: &Diffeo, mode: SampleMode) -> Result<DiffeoPath> {
    same_grid(path.grid(), psi.grid(), "right_translate")?;
    let frames = path
        .frames
        .iter()
        .map(|f| flow::compose(f, psi, mode))
        .collect::<Result<Vec<_>>>()?;
    DiffeoPath::new(path.time_grid.clone(), frames, path.metric.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::spectral;
    use std::f64::consts::TAU;

    fn setup(n: usize) -> MetricSpec {
        let g = GridSpec::line(n, TAU).unwrap();
        MetricSpec::new(&g, 2.0).unwrap()
    }

    #[test]
    fn energy_dominates_length_squared() {
        let m = setup(32);
        let f1 = VectorField::from_fn(m.grid(), |p| [0.3 * p[0].sin(), 0.0]);
        let f2 = VectorField::from_fn(m.grid(), |p| [0.1 * (2.0 * p[0]).cos(), 0.0]);
        let u = TimeVelocity::new(vec![0.0, 0.5, 1.0], vec![f1, f2], m).unwrap();
        let rep = path_energy(&u).unwrap();
        assert!(rep.length * rep.length <= rep.energy * (1.0 + 1e-12));
        assert_eq!(rep.speed_profile.len(), 2);
    }

    #[test]
    fn constant_speed_attains_equality() {
        let m = setup(32);
        let f = VectorField::from_fn(m.grid(), |p| [0.2 * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(f, m, 4).unwrap();
        let rep = path_energy(&u).unwrap();
        assert!((rep.length * rep.length - rep.energy).abs() < 1e-12 * rep.energy);
    }

    #[test]
    fn theta_roundtrip_recovers_velocity_and_path() {
        // the forward difference in theta commutes with the flow only up to
        // O(dt * |Du u|); amplitude and N = 64 are sized so that sits < 1e-4
        let m = setup(64);
        let band = VectorField::from_fn(m.grid(), |p| {
            [0.03 * p[0].sin() + 0.015 * (2.0 * p[0]).cos(), 0.0]
        });
        let u = TimeVelocity::constant(band, m.clone(), 64).unwrap();
        let opts = FlowOptions::default();
        let path = theta_inverse(&u, &Diffeo::identity(m.grid()), &opts).unwrap();
        let back = theta(&path, SampleMode::Spline).unwrap();
        // L2-in-time H^{s-1} drift of the velocity round trip
        let mut acc = 0.0;
        for j in 0..u.intervals() {
            let dt = u.time_grid()[j + 1] - u.time_grid()[j];
            let mut diff = back.fields()[j].clone();
            diff.add_scaled(&u.fields()[j], -1.0).unwrap();
            let n = spectral::norm_at_vec(&diff, m.order() - 1.0);
            acc += dt * n * n;
        }
        let drift = acc.sqrt();
        assert!(drift < 1e-4, "velocity round-trip drift {drift:.3e}");

        // and the path direction: reflowing the recovered velocity tracks
        // the original frames
        let repath = theta_inverse(&back, &Diffeo::identity(m.grid()), &opts).unwrap();
        let mut sup: f64 = 0.0;
        for (a, b) in path.frames().iter().zip(repath.frames()) {
            sup = sup.max(a.h_dist(b, m.order() - 1.0).unwrap());
        }
        assert!(sup < 1e-4, "path round-trip drift {sup:.3e}");
    }

    #[test]
    fn right_translation_preserves_energy() {
        let m = setup(64);
        let f = VectorField::from_fn(m.grid(), |p| [0.15 * p[0].sin(), 0.0]);
        let u = TimeVelocity::constant(f, m.clone(), 8).unwrap();
        let opts = FlowOptions::default();
        let path = theta_inverse(&u, &Diffeo::identity(m.grid()), &opts).unwrap();
        let psi_field = VectorField::from_fn(m.grid(), |p| [0.2 * (2.0 * p[0]).cos(), 0.0]);
        let psi_vel = TimeVelocity::constant(psi_field, m.clone(), 4).unwrap();
        let psi = flow::integrate_flow(&psi_vel, 1.0, &opts).unwrap();

        let translated = right_translate(&path, &psi, SampleMode::Trig).unwrap();
        let u_t = theta(&translated, SampleMode::Trig).unwrap();
        let e0 = path_energy(&u).unwrap().energy;
        let e1 = path_energy(&u_t).unwrap().energy;
        assert!(
            (e0 - e1).abs() < 5e-3 * e0,
            "energy drifted under right translation: {e0} vs {e1}"
        );
    }
}
