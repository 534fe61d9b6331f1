//! Random band-limited fields for self-checks, property tests, and fixtures.
//!
//! Fields are synthesized directly as low-frequency trigonometric sums, so
//! their continuum identity is independent of the grid they are sampled on:
//! the same `(seed, band)` draw on a finer grid is the same function. That is
//! what lets refinement studies compare resolutions meaningfully.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{GridSpec, ScalarField, VectorField};

/// One real mode `a cos(xi . x) + b sin(xi . x)`.
#[derive(Clone, Debug)]
struct Mode {
    xi: [f64; 2],
    a: f64,
    b: f64,
}

fn draw_modes(grid: &GridSpec, band: f64, rng: &mut ChaCha8Rng) -> Vec<Mode> {
    // integer frequency boxes per axis large enough to cover |xi| <= band
    let d = grid.dim();
    let kmax: Vec<i64> = (0..d)
        .map(|a| (band * grid.lengths()[a] / std::f64::consts::TAU).floor() as i64)
        .collect();
    let mut modes = Vec::new();
    let mut push = |k: [i64; 2], rng: &mut ChaCha8Rng| {
        let mut xi = [0.0; 2];
        for a in 0..d {
            xi[a] = std::f64::consts::TAU * k[a] as f64 / grid.lengths()[a];
        }
        let r2 = xi[0] * xi[0] + xi[1] * xi[1];
        if r2 > band * band || (k[0] == 0 && k[1] == 0) {
            return;
        }
        // mild decay keeps high band edges from dominating
        let decay = 1.0 / (1.0 + r2);
        modes.push(Mode {
            xi,
            a: decay * rng.gen_range(-1.0..1.0),
            b: decay * rng.gen_range(-1.0..1.0),
        });
    };
    if d == 1 {
        // k and -k span the same real modes; keep k > 0 only
        for k in 1..=kmax[0] {
            push([k, 0], rng);
        }
    } else {
        // half-lattice: k0 > 0, or k0 == 0 and k1 > 0
        for k0 in 0..=kmax[0] {
            let lo = if k0 == 0 { 1 } else { -kmax[1] };
            for k1 in lo..=kmax[1] {
                push([k0, k1], rng);
            }
        }
    }
    modes
}

fn synth(grid: &GridSpec, modes: &[Mode]) -> Vec<f64> {
    let mut out = vec![0.0; grid.points()];
    for (i, v) in out.iter_mut().enumerate() {
        let p = grid.node(i);
        for m in modes {
            let phase = m.xi[0] * p[0] + m.xi[1] * p[1];
            *v += m.a * phase.cos() + m.b * phase.sin();
        }
    }
    out
}

/// Mean-zero random scalar field, band-limited to `|xi| <= band`.
pub fn random_scalar(grid: &GridSpec, band: f64, rng: &mut ChaCha8Rng) -> ScalarField {
    let modes = draw_modes(grid, band, rng);
    ScalarField::from_values(grid, synth(grid, &modes)).expect("synth produces finite values")
}

/// Mean-zero random vector field, each component band-limited to `|xi| <= band`.
pub fn random_vector(grid: &GridSpec, band: f64, rng: &mut ChaCha8Rng) -> VectorField {
    let mut comps = Vec::with_capacity(grid.dim());
    for _ in 0..grid.dim() {
        let modes = draw_modes(grid, band, rng);
        comps.push(synth(grid, &modes));
    }
    VectorField::from_components(grid, comps).expect("synth produces finite values")
}

/// Rescales `u` so that `metric.norm(u) == target`; a zero draw stays zero.
pub fn normalize_to(u: &mut VectorField, norm: f64, target: f64) {
    if norm > 0.0 {
        u.scale(target / norm);
    }
}
