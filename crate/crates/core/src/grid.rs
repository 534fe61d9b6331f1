//! Uniform periodic grids and the fields living on them.
//!
//! Everything is sampled on the flat torus `prod_i [0, L_i)` at `n_i` evenly
//! spaced nodes per axis, `d <= 2`. Storage is row-major with axis 0 slowest,
//! so the flat index of node `(i0, i1)` is `i0 * n1 + i1`. Points and
//! frequencies are passed around as `[f64; 2]`; one-dimensional grids ignore
//! the second slot.

use crate::error::{Error, Result};

/// Maximum supported spatial dimension.
pub const MAX_DIM: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    sizes: Vec<usize>,
    lengths: Vec<f64>,
}

impl GridSpec {
    /// `sizes[i] >= 4` and even (the frequency lattice needs a symmetric
    /// range), `lengths[i] > 0`.
    pub fn new(sizes: &[usize], lengths: &[f64]) -> Result<Self> {
        if sizes.is_empty() || sizes.len() > MAX_DIM {
            return Err(Error::InvalidInput(format!(
                "grid dimension must be 1 or 2, got {}",
                sizes.len()
            )));
        }
        if sizes.len() != lengths.len() {
            return Err(Error::InvalidInput(format!(
                "{} sizes but {} lengths",
                sizes.len(),
                lengths.len()
            )));
        }
        for (&n, &l) in sizes.iter().zip(lengths) {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidInput(format!(
                    "grid size {n} not supported: need even n >= 4"
                )));
            }
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidInput(format!("period {l} must be finite and > 0")));
            }
        }
        Ok(GridSpec { sizes: sizes.to_vec(), lengths: lengths.to_vec() })
    }

    /// One-dimensional grid of `n` nodes on `[0, length)`.
    pub fn line(n: usize, length: f64) -> Result<Self> {
        Self::new(&[n], &[length])
    }

    /// Square two-dimensional grid, `n` nodes per axis.
    pub fn square(n: usize, length: f64) -> Result<Self> {
        Self::new(&[n, n], &[length, length])
    }

    pub fn dim(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Node spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.sizes[axis] as f64
    }

    /// Total number of nodes.
    pub fn points(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Volume of one grid cell, `prod_i h_i`.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Volume of the torus, `prod_i L_i`.
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        match self.dim() {
            1 => [flat, 0],
            _ => [flat / self.sizes[1], flat % self.sizes[1]],
        }
    }

    /// Coordinates of the node with the given flat index.
    pub fn node(&self, flat: usize) -> [f64; 2] {
        let mi = self.multi_index(flat);
        let mut p = [0.0; 2];
        for a in 0..self.dim() {
            p[a] = mi[a] as f64 * self.spacing(a);
        }
        p
    }

    /// Integer frequency along `axis` for bin index `b`, in `[-n/2, n/2)`.
    pub fn freq_index(&self, axis: usize, b: usize) -> i64 {
        let n = self.sizes[axis];
        if b < n / 2 { b as i64 } else { b as i64 - n as i64 }
    }

    /// Scaled frequency vector `xi` of the bin with flat index `flat`:
    /// `xi_a = 2 pi k_a / L_a` with `k_a` the integer frequency.
    pub fn freq(&self, flat: usize) -> [f64; 2] {
        let mi = self.multi_index(flat);
        let mut xi = [0.0; 2];
        for a in 0..self.dim() {
            xi[a] = std::f64::consts::TAU * self.freq_index(a, mi[a]) as f64 / self.lengths[a];
        }
        xi
    }

    /// `|xi|^2` of the bin with flat index `flat`.
    pub fn freq_norm2(&self, flat: usize) -> f64 {
        let xi = self.freq(flat);
        xi[0] * xi[0] + xi[1] * xi[1]
    }

    /// Largest `|xi|` representable on the lattice (corner of the symmetric box).
    pub fn max_freq(&self) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim() {
            let m = std::f64::consts::TAU * (self.sizes[a] as f64 / 2.0) / self.lengths[a];
            s += m * m;
        }
        f64::sqrt(s)
    }

    fn check_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {:?}x{:?} vs {:?}x{:?}",
                self.sizes, self.lengths, other.sizes, other.lengths
            )));
        }
        Ok(())
    }
}

/// Checks that two grids are identical, for operations combining fields.
pub fn same_grid(a: &GridSpec, b: &GridSpec, what: &str) -> Result<()> {
    a.check_same(b, what)
}

/// Real scalar samples on a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        ScalarField { grid: grid.clone(), values: vec![0.0; grid.points()] }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.points() {
            return Err(Error::InvalidInput(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.points()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample {bad}")));
        }
        Ok(ScalarField { grid: grid.clone(), values })
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.points()).map(|i| f(grid.node(i))).collect();
        ScalarField { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &ScalarField, c: f64) -> Result<()> {
        same_grid(&self.grid, &other.grid, "add_scaled")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }

    /// Quadrature L2 norm, `sqrt(prod h_i * sum f^2)`. Equals the spectral L2
    /// norm exactly (discrete Parseval).
    pub fn l2_norm(&self) -> f64 {
        let w = self.grid.cell_volume();
        f64::sqrt(w * self.values.iter().map(|v| v * v).sum::<f64>())
    }

    /// Quadrature integral `prod h_i * sum f`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_volume() * self.values.iter().sum::<f64>()
    }
}

/// Vector-valued samples on a grid, stored as one plane per component.
#[derive(Clone, Debug)]
pub struct VectorField {
    grid: GridSpec,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &GridSpec) -> Self {
        VectorField {
            grid: grid.clone(),
            comps: vec![vec![0.0; grid.points()]; grid.dim()],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(grid);
        for i in 0..grid.points() {
            let v = f(grid.node(i));
            for a in 0..grid.dim() {
                out.comps[a][i] = v[a];
            }
        }
        out
    }

    pub fn from_components(grid: &GridSpec, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::InvalidInput(format!(
                "{} components for a {}-dimensional grid",
                comps.len(),
                grid.dim()
            )));
        }
        for c in &comps {
            if c.len() != grid.points() {
                return Err(Error::InvalidInput(format!(
                    "component has {} values, grid has {} nodes",
                    c.len(),
                    grid.points()
                )));
            }
            if let Some(bad) = c.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite sample {bad}")));
            }
        }
        Ok(VectorField { grid: grid.clone(), comps })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn component_mut(&mut self, a: usize) -> &mut [f64] {
        &mut self.comps[a]
    }

    /// Value at a node by flat index.
    pub fn at(&self, flat: usize) -> [f64; 2] {
        let mut v = [0.0; 2];
        for a in 0..self.grid.dim() {
            v[a] = self.comps[a][flat];
        }
        v
    }

    pub fn add_scaled(&mut self, other: &VectorField, c: f64) -> Result<()> {
        same_grid(&self.grid, &other.grid, "add_scaled")?;
        for (mine, theirs) in self.comps.iter_mut().zip(&other.comps) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a += c * b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, c: f64) {
        for plane in &mut self.comps {
            for v in plane {
                *v *= c;
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|p| p.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_and_tiny_sizes() {
        assert!(GridSpec::new(&[3], &[1.0]).is_err());
        assert!(GridSpec::new(&[2], &[1.0]).is_err());
        assert!(GridSpec::new(&[5, 4], &[1.0, 1.0]).is_err());
        assert!(GridSpec::new(&[4], &[0.0]).is_err());
        assert!(GridSpec::new(&[4], &[-1.0]).is_err());
        assert!(GridSpec::new(&[4, 4, 4], &[1.0, 1.0, 1.0]).is_err());
        assert!(GridSpec::new(&[4, 4], &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn node_layout_is_row_major_axis0_slowest() {
        let g = GridSpec::new(&[4, 6], &[4.0, 3.0]).unwrap();
        assert_eq!(g.points(), 24);
        // node (1, 2): flat = 1 * 6 + 2
        let p = g.node(8);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 1.0);
        assert_eq!(g.spacing(0), 1.0);
        assert_eq!(g.spacing(1), 0.5);
    }

    #[test]
    fn frequency_lattice_covers_symmetric_range() {
        let g = GridSpec::line(8, std::f64::consts::TAU).unwrap();
        let ks: Vec<i64> = (0..8).map(|b| g.freq_index(0, b)).collect();
        assert_eq!(ks, vec![0, 1, 2, 3, -4, -3, -2, -1]);
        // L = 2 pi makes scaled frequencies integers
        assert!((g.freq(3)[0] - 3.0).abs() < 1e-14);
        assert!((g.freq(5)[0] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn field_constructors_validate() {
        let g = GridSpec::line(8, 1.0).unwrap();
        assert!(ScalarField::from_values(&g, vec![0.0; 7]).is_err());
        assert!(ScalarField::from_values(&g, vec![f64::NAN; 8]).is_err());
        let f = ScalarField::from_fn(&g, |p| p[0]);
        assert_eq!(f.values()[3], 3.0 / 8.0);
    }
}
