//! Reproducing kernels for landmark matching.
//!
//! Both kernels are scalar profiles times the identity matrix. The Gaussian
//! profile lives on the torus by summing the three nearest periodic images
//! per axis (relative truncation error below 1e-9 once `sigma <= L/8`). The
//! Sobolev profile is the exact reproducing kernel of the discrete H^s space
//! on the grid's frequency lattice,
//!
//! ```text
//! kappa(r) = (1/V) sum_xi cos(xi . r) / (1 + |xi|^2)^s,
//! ```
//!
//! so that pairing `kappa(. - q) v` against any band-limited field in H^s
//! evaluates the field at `q`.

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::spectral::MetricSpec;

#[derive(Clone, Debug)]
enum Kind {
    Gaussian { sigma: f64 },
    Sobolev { freqs: Vec<[f64; 2]>, inv_mult: Vec<f64>, volume: f64 },
}

#[derive(Clone, Debug)]
pub struct Kernel {
    dim: usize,
    lengths: [f64; 2],
    kind: Kind,
}

impl Kernel {
    /// Periodized Gaussian `exp(-|x-y|^2 / sigma^2) Id` on the torus of `grid`.
    pub fn gaussian(grid: &GridSpec, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidInput("gaussian kernel width must be > 0".into()));
        }
        let mut lengths = [0.0; 2];
        lengths[..grid.dim()].copy_from_slice(grid.lengths());
        Ok(Kernel { dim: grid.dim(), lengths, kind: Kind::Gaussian { sigma } })
    }

    /// Reproducing kernel of the discrete H^s space of `metric`.
    pub fn sobolev(metric: &MetricSpec) -> Self {
        let grid = metric.grid();
        let mut freqs = Vec::with_capacity(grid.points());
        let mut inv_mult = Vec::with_capacity(grid.points());
        for i in 0..grid.points() {
            let xi = grid.freq(i);
            freqs.push(xi);
            inv_mult.push(1.0 / (1.0 + grid.freq_norm2(i)).powf(metric.order()));
        }
        let mut lengths = [0.0; 2];
        lengths[..grid.dim()].copy_from_slice(grid.lengths());
        Kernel {
            dim: grid.dim(),
            lengths,
            kind: Kind::Sobolev { freqs, inv_mult, volume: grid.volume() },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Scalar profile `kappa(x - y)`.
    pub fn value(&self, r: [f64; 2]) -> f64 {
        match &self.kind {
            Kind::Gaussian { sigma } => {
                let mut acc = 0.0;
                self.for_images(r, |d2, _| acc += (-d2 / (sigma * sigma)).exp());
                acc
            }
            Kind::Sobolev { freqs, inv_mult, volume } => {
                let mut acc = 0.0;
                for (xi, im) in freqs.iter().zip(inv_mult) {
                    acc += (xi[0] * r[0] + xi[1] * r[1]).cos() * im;
                }
                acc / volume
            }
        }
    }

    /// `grad kappa` at `x - y` (derivative in the first argument).
    pub fn grad(&self, r: [f64; 2]) -> [f64; 2] {
        match &self.kind {
            Kind::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let mut g = [0.0; 2];
                self.for_images(r, |d2, v| {
                    let w = -2.0 / s2 * (-d2 / s2).exp();
                    g[0] += w * v[0];
                    g[1] += w * v[1];
                });
                g
            }
            Kind::Sobolev { freqs, inv_mult, volume } => {
                let mut g = [0.0; 2];
                for (xi, im) in freqs.iter().zip(inv_mult) {
                    let s = (xi[0] * r[0] + xi[1] * r[1]).sin() * im;
                    g[0] -= xi[0] * s;
                    g[1] -= xi[1] * s;
                }
                g[0] /= volume;
                g[1] /= volume;
                g
            }
        }
    }

    /// Hessian of the profile at `x - y`; symmetric.
    pub fn hess(&self, r: [f64; 2]) -> [[f64; 2]; 2] {
        match &self.kind {
            Kind::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let mut h = [[0.0; 2]; 2];
                self.for_images(r, |d2, v| {
                    let e = (-d2 / s2).exp();
                    for a in 0..self.dim {
                        for b in 0..self.dim {
                            h[a][b] += e * (4.0 / (s2 * s2) * v[a] * v[b]
                                - if a == b { 2.0 / s2 } else { 0.0 });
                        }
                    }
                });
                h
            }
            Kind::Sobolev { freqs, inv_mult, volume } => {
                let mut h = [[0.0; 2]; 2];
                for (xi, im) in freqs.iter().zip(inv_mult) {
                    let c = (xi[0] * r[0] + xi[1] * r[1]).cos() * im;
                    for a in 0..self.dim {
                        for b in 0..self.dim {
                            h[a][b] -= xi[a] * xi[b] * c;
                        }
                    }
                }
                for row in h.iter_mut() {
                    for v in row.iter_mut() {
                        *v /= volume;
                    }
                }
                h
            }
        }
    }

    /// The d x d matrix `k(x, y)`; both kernels are `kappa(x - y) Id`.
    pub fn eval(&self, x: [f64; 2], y: [f64; 2]) -> [[f64; 2]; 2] {
        let v = self.value([x[0] - y[0], x[1] - y[1]]);
        let mut m = [[0.0; 2]; 2];
        for a in 0..self.dim {
            m[a][a] = v;
        }
        m
    }

    pub fn at_zero(&self) -> f64 {
        self.value([0.0; 2])
    }

    /// Visits the periodic images of `r` nearest the origin: the offset is
    /// first wrapped into [-L/2, L/2), then shifted by -L, 0, +L per axis.
    /// The callback receives |r + s|^2 and r + s.
    fn for_images(&self, r: [f64; 2], mut f: impl FnMut(f64, [f64; 2])) {
        let mut base = [0.0; 2];
        for a in 0..self.dim {
            base[a] = r[a] - self.lengths[a] * (r[a] / self.lengths[a]).round();
        }
        let shifts = [-1.0, 0.0, 1.0];
        if self.dim == 1 {
            for s in shifts {
                let v = [base[0] + s * self.lengths[0], 0.0];
                f(v[0] * v[0], v);
            }
        } else {
            for s0 in shifts {
                for s1 in shifts {
                    let v = [base[0] + s0 * self.lengths[0], base[1] + s1 * self.lengths[1]];
                    f(v[0] * v[0] + v[1] * v[1], v);
                }
            }
        }
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
/// Sized for the small Gram matrices of landmark sets.
pub(crate) fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= 1e-300 {
                    continue;
                }
                let theta = 0.5 * (a[q][q] - a[p][p]) / a[p][q];
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

/// Gram matrix of the scalar profile on a point set.
pub fn gram(kernel: &Kernel, points: &[[f64; 2]]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut g = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            g[i][j] = kernel.value([
                points[i][0] - points[j][0],
                points[i][1] - points[j][1],
            ]);
        }
    }
    g
}

/// Smallest and largest eigenvalue of the Gram matrix on `points`.
pub fn gram_eig_range(kernel: &Kernel, points: &[[f64; 2]]) -> (f64, f64) {
    let eigs = symmetric_eigenvalues(gram(kernel, points));
    (*eigs.first().unwrap(), *eigs.last().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use rand::Rng;
    use std::f64::consts::TAU;

    #[test]
    fn gaussian_profile_matches_closed_form_away_from_the_seam() {
        let g = GridSpec::line(16, TAU).unwrap();
        let k = Kernel::gaussian(&g, 0.5).unwrap();
        // near the origin the image sum is dominated by the principal term
        let r = 0.4f64;
        let expect = (-r * r / 0.25).exp();
        assert!((k.value([r, 0.0]) - expect).abs() < 1e-9);
        // symmetry and periodicity
        assert!((k.value([r, 0.0]) - k.value([-r, 0.0])).abs() < 1e-15);
        assert!((k.value([r, 0.0]) - k.value([r + TAU, 0.0])).abs() < 1e-12);
        assert!((k.at_zero() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn kernel_derivatives_match_finite_differences() {
        let g = GridSpec::square(12, TAU).unwrap();
        let m = MetricSpec::new(&g, 2.5).unwrap();
        let kernels = [Kernel::gaussian(&g, 0.7).unwrap(), Kernel::sobolev(&m)];
        let h = 1e-5;
        for k in &kernels {
            let r = [0.83, -1.21];
            let grad = k.grad(r);
            let hess = k.hess(r);
            for a in 0..2 {
                let mut rp = r;
                rp[a] += h;
                let mut rm = r;
                rm[a] -= h;
                let fd = (k.value(rp) - k.value(rm)) / (2.0 * h);
                assert!((grad[a] - fd).abs() < 1e-8, "grad[{a}]: {} vs {fd}", grad[a]);
                let gp = k.grad(rp);
                let gm = k.grad(rm);
                for b in 0..2 {
                    let fd2 = (gp[b] - gm[b]) / (2.0 * h);
                    assert!(
                        (hess[b][a] - fd2).abs() < 1e-6,
                        "hess[{b}][{a}]: {} vs {fd2}",
                        hess[b][a]
                    );
                }
            }
            // gradient vanishes at the origin by symmetry
            let g0 = k.grad([0.0, 0.0]);
            assert!(g0[0].abs() < 1e-12 && g0[1].abs() < 1e-12);
        }
    }

    #[test]
    fn gram_matrices_stay_positive_semidefinite() {
        let g = GridSpec::line(32, TAU).unwrap();
        let m = MetricSpec::new(&g, 2.0).unwrap();
        let kernels = [Kernel::gaussian(&g, 0.6).unwrap(), Kernel::sobolev(&m)];
        let mut rng = rng::stream(11, Stream::Fixtures);
        for k in &kernels {
            for _ in 0..50 {
                let n = rng.gen_range(2..8);
                let pts: Vec<[f64; 2]> =
                    (0..n).map(|_| [rng.gen_range(0.0..TAU), 0.0]).collect();
                let (lo, hi) = gram_eig_range(k, &pts);
                assert!(lo >= -1e-10 * hi.max(1.0), "eig range ({lo}, {hi})");
            }
        }
    }
}
