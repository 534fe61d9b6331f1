//! Sobolev H^s geometry on groups of diffeomorphisms of the flat torus.
//!
//! The library discretizes vector fields and diffeomorphisms on periodic
//! grids (d = 1 or 2), equips them with the right-invariant H^s metric
//! defined by the Fourier multiplier `(1 + |xi|^2)^s`, and builds on that:
//!
//! * [`flow`] — time integration of `d phi/dt = u(t) o phi` for
//!   time-dependent fields, composition, inversion, and the splitting of a
//!   velocity into pieces of small action;
//! * [`paths`] — the correspondence between paths of diffeomorphisms and
//!   their right-trivialized velocities, path energy and length;
//! * [`bvp`] — geodesic boundary value problems by penalty continuation with
//!   the exact discrete adjoint;
//! * [`matching`] — reproducing kernels, landmark geodesics, image
//!   registration, and Karcher means of images;
//! * [`io`] / [`config`] / [`harness`] — file formats and the CLI runner.
//!
//! Orders are restricted to `s > d/2 + 1`, where flows of H^s fields exist,
//! stay invertible, and depend continuously on the field.

pub mod bvp;
pub mod config;
pub mod error;
pub mod flow;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod io;
pub mod matching;
pub mod paths;
pub mod rng;
pub mod spectral;
pub mod testgen;

pub use error::{Error, Result};
pub use grid::{GridSpec, ScalarField, VectorField};
pub use interp::SampleMode;
pub use spectral::{MetricSpec, SpectralOp};
