//! Fourier side of the library: transforms, Sobolev inner products, and
//! frequency-multiplier operators.
//!
//! Normalization: the forward transform scales the raw DFT by
//! `sqrt(prod L_i) / prod n_i`, which makes the coefficient sum satisfy
//! `sum_xi |fhat(xi)|^2 = prod h_i * sum_x |f(x)|^2` (so the spectral and
//! quadrature L2 norms agree exactly) and gives the zero mode of the constant
//! field 1 the value `sqrt(prod L_i)`.
//!
//! The H^sigma inner product weights each lattice frequency by
//! `(1 + |xi|^2)^sigma`; the weight at `xi = 0` is 1 for every order, so
//! constant fields have the same norm in every H^sigma.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{same_grid, GridSpec, ScalarField, VectorField};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse { p.plan_fft_inverse(n) } else { p.plan_fft_forward(n) }
    })
}

/// Complex Fourier coefficients of a scalar field, laid out bin-major in the
/// same row-major order as the field samples.
#[derive(Clone, Debug)]
pub struct SpectralCoeffs {
    grid: GridSpec,
    coeffs: Vec<Complex<f64>>,
}

impl SpectralCoeffs {
    pub fn zeros(grid: &GridSpec) -> Self {
        SpectralCoeffs { grid: grid.clone(), coeffs: vec![Complex::new(0.0, 0.0); grid.points()] }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex<f64>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<f64>] {
        &mut self.coeffs
    }
}

/// Unnormalized in-place DFT over every line of `axis`.
fn dft_axis(grid: &GridSpec, data: &mut [Complex<f64>], axis: usize, inverse: bool) {
    let d = grid.dim();
    if d == 1 {
        plan(grid.sizes()[0], inverse).process(data);
        return;
    }
    let (n0, n1) = (grid.sizes()[0], grid.sizes()[1]);
    if axis == 1 {
        let fft = plan(n1, inverse);
        for row in data.chunks_exact_mut(n1) {
            fft.process(row);
        }
    } else {
        let fft = plan(n0, inverse);
        let mut line = vec![Complex::new(0.0, 0.0); n0];
        for col in 0..n1 {
            for i in 0..n0 {
                line[i] = data[i * n1 + col];
            }
            fft.process(&mut line);
            for i in 0..n0 {
                data[i * n1 + col] = line[i];
            }
        }
    }
}

fn dft_all(grid: &GridSpec, data: &mut [Complex<f64>], inverse: bool) {
    for axis in 0..grid.dim() {
        dft_axis(grid, data, axis, inverse);
    }
}

/// Forward transform of a real field.
pub fn transform(f: &ScalarField) -> SpectralCoeffs {
    let grid = f.grid();
    let mut data: Vec<Complex<f64>> =
        f.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    dft_all(grid, &mut data, false);
    let scale = f64::sqrt(grid.volume()) / grid.points() as f64;
    for c in &mut data {
        *c *= scale;
    }
    SpectralCoeffs { grid: grid.clone(), coeffs: data }
}

/// Inverse transform back to real samples; the imaginary residue of a
/// Hermitian spectrum is dropped.
pub fn inverse_transform(c: &SpectralCoeffs) -> ScalarField {
    let mut data = c.coeffs.clone();
    dft_all(&c.grid, &mut data, true);
    let scale = 1.0 / f64::sqrt(c.grid.volume());
    let mut out = ScalarField::zeros(&c.grid);
    for (v, z) in out.values_mut().iter_mut().zip(&data) {
        *v = z.re * scale;
    }
    out
}

/// Sobolev multiplier `(1 + |xi|^2)^order` tabulated on a grid's frequency
/// lattice. Construction enforces `order > d/2 + 1`, the regime where flows
/// of H^order fields stay diffeomorphisms; norms at other orders go through
/// [`norm_at`] / [`inner_at`], which have no such restriction.
#[derive(Clone, Debug)]
pub struct MetricSpec {
    grid: GridSpec,
    order: f64,
    multiplier: Vec<f64>,
}

impl MetricSpec {
    pub fn new(grid: &GridSpec, order: f64) -> Result<Self> {
        let bound = grid.dim() as f64 / 2.0 + 1.0;
        if !order.is_finite() || order <= bound {
            return Err(Error::InvalidInput(format!(
                "metric order {order} not admissible: need order > d/2 + 1 = {bound}"
            )));
        }
        Ok(MetricSpec {
            grid: grid.clone(),
            order,
            multiplier: multiplier_table(grid, order),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn multiplier(&self) -> &[f64] {
        &self.multiplier
    }

    /// H^order inner product of two vector fields.
    pub fn inner(&self, u: &VectorField, v: &VectorField) -> Result<f64> {
        same_grid(&self.grid, u.grid(), "metric inner")?;
        same_grid(&self.grid, v.grid(), "metric inner")?;
        let mut acc = 0.0;
        for a in 0..self.grid.dim() {
            let cu = transform_plane(&self.grid, u.component(a));
            let cv = transform_plane(&self.grid, v.component(a));
            acc += weighted_inner(&self.multiplier, &cu, &cv);
        }
        Ok(acc)
    }

    pub fn norm(&self, u: &VectorField) -> Result<f64> {
        Ok(f64::sqrt(self.inner(u, u)?.max(0.0)))
    }

    pub fn inner_scalar(&self, f: &ScalarField, g: &ScalarField) -> Result<f64> {
        same_grid(&self.grid, f.grid(), "metric inner")?;
        same_grid(&self.grid, g.grid(), "metric inner")?;
        let cf = transform(f);
        let cg = transform(g);
        Ok(weighted_inner(&self.multiplier, cf.coeffs(), cg.coeffs()))
    }

    pub fn norm_scalar(&self, f: &ScalarField) -> Result<f64> {
        Ok(f64::sqrt(self.inner_scalar(f, f)?.max(0.0)))
    }
}

fn multiplier_table(grid: &GridSpec, order: f64) -> Vec<f64> {
    (0..grid.points())
        .map(|i| (1.0 + grid.freq_norm2(i)).powf(order))
        .collect()
}

fn transform_plane(grid: &GridSpec, values: &[f64]) -> Vec<Complex<f64>> {
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    dft_all(grid, &mut data, false);
    let scale = f64::sqrt(grid.volume()) / grid.points() as f64;
    for c in &mut data {
        *c *= scale;
    }
    data
}

fn inverse_plane(grid: &GridSpec, coeffs: &[Complex<f64>]) -> Vec<f64> {
    let mut data = coeffs.to_vec();
    dft_all(grid, &mut data, true);
    let scale = 1.0 / f64::sqrt(grid.volume());
    data.iter().map(|z| z.re * scale).collect()
}

fn weighted_inner(weights: &[f64], a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    let mut acc = 0.0;
    for i in 0..weights.len() {
        acc += weights[i] * (a[i].re * b[i].re + a[i].im * b[i].im);
    }
    acc
}

/// H^order norm of a scalar field at an arbitrary order (no admissibility
/// requirement; used for cross-order estimates).
pub fn norm_at(f: &ScalarField, order: f64) -> f64 {
    let c = transform(f);
    let mut acc = 0.0;
    for i in 0..c.coeffs.len() {
        let w = (1.0 + c.grid.freq_norm2(i)).powf(order);
        acc += w * c.coeffs[i].norm_sqr();
    }
    f64::sqrt(acc.max(0.0))
}

pub fn norm_at_vec(u: &VectorField, order: f64) -> f64 {
    let grid = u.grid();
    let mut acc = 0.0;
    for a in 0..grid.dim() {
        let c = transform_plane(grid, u.component(a));
        for i in 0..c.len() {
            let w = (1.0 + grid.freq_norm2(i)).powf(order);
            acc += w * c[i].norm_sqr();
        }
    }
    f64::sqrt(acc.max(0.0))
}

pub fn inner_at_vec(u: &VectorField, v: &VectorField, order: f64) -> Result<f64> {
    same_grid(u.grid(), v.grid(), "inner_at_vec")?;
    let grid = u.grid();
    let weights: Vec<f64> = (0..grid.points())
        .map(|i| (1.0 + grid.freq_norm2(i)).powf(order))
        .collect();
    let mut acc = 0.0;
    for a in 0..grid.dim() {
        let cu = transform_plane(grid, u.component(a));
        let cv = transform_plane(grid, v.component(a));
        acc += weighted_inner(&weights, &cu, &cv);
    }
    Ok(acc)
}

/// Which way to apply the metric's frequency multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectralOp {
    /// Multiply by `(1 + |xi|^2)^s`: the inertia operator pairing velocities
    /// with momenta, `<u, v>_{H^s} = <Lu, v>_{L^2}`.
    Inertia,
    /// Divide by `(1 + |xi|^2)^s`: the smoothing inverse of `Inertia`.
    Smoothing,
}

/// Applies the metric's multiplier (or its inverse) componentwise.
pub fn apply_operator(u: &VectorField, metric: &MetricSpec, op: SpectralOp) -> Result<VectorField> {
    same_grid(metric.grid(), u.grid(), "apply_operator")?;
    let grid = u.grid();
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let mut c = transform_plane(grid, u.component(a));
        match op {
            SpectralOp::Inertia => {
                for (z, &m) in c.iter_mut().zip(&metric.multiplier) {
                    *z *= m;
                }
            }
            SpectralOp::Smoothing => {
                for (z, &m) in c.iter_mut().zip(&metric.multiplier) {
                    *z /= m;
                }
            }
        }
        out.component_mut(a).copy_from_slice(&inverse_plane(grid, &c));
    }
    Ok(out)
}

/// Sharp low-pass projection: keeps coefficients with `|xi| <= cut`, zeroes
/// the rest. Orthogonal projection in every H^sigma simultaneously.
pub fn cutoff_filter(u: &VectorField, cut: f64) -> VectorField {
    let grid = u.grid();
    let cut2 = cut * cut;
    let mut out = VectorField::zeros(grid);
    for a in 0..grid.dim() {
        let mut c = transform_plane(grid, u.component(a));
        for (i, z) in c.iter_mut().enumerate() {
            if grid.freq_norm2(i) > cut2 {
                *z = Complex::new(0.0, 0.0);
            }
        }
        out.component_mut(a).copy_from_slice(&inverse_plane(grid, &c));
    }
    out
}

pub fn cutoff_filter_scalar(f: &ScalarField, cut: f64) -> ScalarField {
    let grid = f.grid();
    let cut2 = cut * cut;
    let mut c = transform(f);
    for i in 0..grid.points() {
        if grid.freq_norm2(i) > cut2 {
            c.coeffs_mut()[i] = Complex::new(0.0, 0.0);
        }
    }
    inverse_transform(&c)
}

/// Exact derivative of the band-limited interpolant along `axis`
/// (multiplication by `i xi_axis`). The unpaired Nyquist mode is zeroed,
/// matching the derivative of the symmetric (cosine) interpolant.
pub fn spectral_derivative(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = f.grid();
    assert!(axis < grid.dim(), "axis {axis} out of range");
    let mut c = transform(f);
    let n = grid.sizes()[axis];
    for i in 0..grid.points() {
        let mi = grid.multi_index(i);
        let z = &mut c.coeffs_mut()[i];
        if mi[axis] == n / 2 {
            *z = Complex::new(0.0, 0.0);
        } else {
            let xi = grid.freq(i)[axis];
            *z = Complex::new(0.0, xi) * *z;
        }
    }
    inverse_transform(&c)
}

/// Plane-level derivative used by hot paths that avoid the field wrappers.
pub(crate) fn derivative_plane(grid: &GridSpec, values: &[f64], axis: usize) -> Vec<f64> {
    let mut c = transform_plane(grid, values);
    let n = grid.sizes()[axis];
    for i in 0..grid.points() {
        let mi = grid.multi_index(i);
        if mi[axis] == n / 2 {
            c[i] = Complex::new(0.0, 0.0);
        } else {
            let xi = grid.freq(i)[axis];
            c[i] = Complex::new(0.0, xi) * c[i];
        }
    }
    inverse_plane(grid, &c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn unit_circle_grid(n: usize) -> GridSpec {
        GridSpec::line(n, TAU).unwrap()
    }

    #[test]
    fn constant_field_concentrates_at_zero_mode() {
        // f = 1 must give |fhat(0)|^2 = prod L_i and nothing else
        let g = GridSpec::new(&[8, 6], &[3.0, 2.0]).unwrap();
        let f = ScalarField::from_fn(&g, |_| 1.0);
        let c = transform(&f);
        assert!((c.coeffs()[0].re - f64::sqrt(6.0)).abs() < 1e-12);
        assert!(c.coeffs()[0].im.abs() < 1e-12);
        let tail: f64 = c.coeffs()[1..].iter().map(|z| z.norm_sqr()).sum();
        assert!(tail < 1e-24);
    }

    #[test]
    fn parseval_ties_spectral_to_quadrature_l2() {
        let g = GridSpec::new(&[16, 12], &[2.5, 1.5]).unwrap();
        let f = ScalarField::from_fn(&g, |p| {
            (TAU * p[0] / 2.5).sin() + 0.3 * (2.0 * TAU * p[1] / 1.5).cos() + 0.1
        });
        let c = transform(&f);
        let spec: f64 = c.coeffs().iter().map(|z| z.norm_sqr()).sum();
        let quad = g.cell_volume() * f.values().iter().map(|v| v * v).sum::<f64>();
        assert!((spec - quad).abs() <= 1e-12 * quad.max(1.0));
    }

    #[test]
    fn roundtrip_is_identity_to_1e12() {
        let g = GridSpec::new(&[32, 16], &[TAU, 3.0]).unwrap();
        let f = ScalarField::from_fn(&g, |p| (p[0]).sin() * (TAU * p[1] / 3.0).cos() + 0.25 * p[1]);
        let back = inverse_transform(&transform(&f));
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for (a, b) in f.values().iter().zip(back.values()) {
            err = err.max((a - b).abs());
            scale = scale.max(a.abs());
        }
        assert!(err <= 1e-12 * scale.max(1.0), "roundtrip error {err}");
    }

    #[test]
    fn sin_h2_norm_matches_closed_form() {
        // ||sin||^2_{H^2} on [0, 2 pi) = (1 + 1)^2 * pi * 2 = 4 pi
        let g = unit_circle_grid(64);
        let f = ScalarField::from_fn(&g, |p| p[0].sin());
        let n = norm_at(&f, 2.0);
        let expected = f64::sqrt(4.0 * std::f64::consts::PI);
        assert!((n - expected).abs() < 1e-10, "got {n}, want {expected}");
    }

    #[test]
    fn constant_norm_is_order_independent() {
        let g = GridSpec::new(&[8, 8], &[1.0, 4.0]).unwrap();
        let c = 2.5;
        let u = VectorField::from_fn(&g, |_| [c, -c]);
        // |c|^2 * V per component, any order
        let expected = f64::sqrt(2.0 * c * c * g.volume());
        for order in [0.0, 1.0, 2.0, 3.5] {
            let n = norm_at_vec(&u, order);
            assert!((n - expected).abs() < 1e-12, "order {order}: {n} vs {expected}");
        }
    }

    #[test]
    fn admissibility_bound_is_enforced() {
        let g1 = GridSpec::line(8, 1.0).unwrap();
        assert!(MetricSpec::new(&g1, 1.5).is_err()); // need > 1.5 in 1d
        assert!(MetricSpec::new(&g1, 1.5001).is_ok());
        let g2 = GridSpec::square(8, 1.0).unwrap();
        assert!(MetricSpec::new(&g2, 2.0).is_err()); // need > 2 in 2d
        assert!(MetricSpec::new(&g2, 2.5).is_ok());
    }

    #[test]
    fn inertia_and_smoothing_invert_each_other() {
        let g = GridSpec::new(&[16, 8], &[TAU, 2.0]).unwrap();
        let m = MetricSpec::new(&g, 2.5).unwrap();
        let u = VectorField::from_fn(&g, |p| {
            [p[0].sin() + 0.2 * (2.0 * p[0]).cos(), (TAU * p[1] / 2.0).cos()]
        });
        let lu = apply_operator(&u, &m, SpectralOp::Inertia).unwrap();
        let back = apply_operator(&lu, &m, SpectralOp::Smoothing).unwrap();
        let mut err: f64 = 0.0;
        for a in 0..2 {
            for (x, y) in u.component(a).iter().zip(back.component(a)) {
                err = err.max((x - y).abs());
            }
        }
        assert!(err < 1e-12, "L then K drifted by {err}");
        // <u, v>_{H^s} = <Lu, v>_{L^2}
        let v = VectorField::from_fn(&g, |p| [(2.0 * p[0]).sin(), 0.3]);
        let hs = m.inner(&u, &v).unwrap();
        let l2 = inner_at_vec(&lu, &v, 0.0).unwrap();
        assert!((hs - l2).abs() < 1e-10 * hs.abs().max(1.0));
    }

    #[test]
    fn derivative_of_sin_is_cos() {
        let g = unit_circle_grid(32);
        let f = ScalarField::from_fn(&g, |p| (3.0 * p[0]).sin());
        let df = spectral_derivative(&f, 0);
        for i in 0..g.points() {
            let want = 3.0 * (3.0 * g.node(i)[0]).cos();
            assert!((df.values()[i] - want).abs() < 1e-11);
        }
    }

    #[test]
    fn cutoff_is_projection_and_nonexpansive() {
        let g = unit_circle_grid(32);
        let u = VectorField::from_fn(&g, |p| {
            [p[0].sin() + 0.5 * (5.0 * p[0]).cos() + 0.25 * (9.0 * p[0]).sin(), 0.0]
        });
        let cut = 4.0;
        let once = cutoff_filter(&u, cut);
        let twice = cutoff_filter(&once, cut);
        for (a, b) in once.component(0).iter().zip(twice.component(0)) {
            assert!((a - b).abs() < 1e-12);
        }
        for order in [0.0, 1.0, 2.0] {
            assert!(norm_at_vec(&once, order) <= norm_at_vec(&u, order) * (1.0 + 1e-12));
        }
        // complement of the projection is exactly the removed modes
        let mut rest = u.clone();
        rest.add_scaled(&once, -1.0).unwrap();
        let lost = norm_at_vec(&rest, 0.0);
        // |xi| = 5 and 9 modes carry 0.5^2 * pi + 0.25^2 * pi
        let expected = f64::sqrt((0.25 + 0.0625) * std::f64::consts::PI);
        assert!((lost - expected).abs() < 1e-10);
    }
}
