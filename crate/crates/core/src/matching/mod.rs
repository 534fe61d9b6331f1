//! Registration built on the group geometry: reproducing kernels, landmark
//! geodesics, diffeomorphic image matching, and Karcher means of images.

pub mod image;
pub mod kernel;
pub mod landmarks;

pub use image::{
    karcher_mean, register_images, transport_image, KarcherConfig, KarcherReport,
    RegistrationProblem, RegistrationResult,
};
pub use kernel::{gram, gram_eig_range, Kernel};
pub use landmarks::{
    hamiltonian, kernel_velocity, landmark_match, landmark_shoot, velocity_at, LandmarkState,
    MatchConfig, MatchResult, ShootResult,
};
