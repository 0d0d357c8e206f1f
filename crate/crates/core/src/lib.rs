//! Linear and nonlinear inverse models with white or colored noise.
//!
//! The crate estimates stochastic models of the form
//! `dx/dt = B(x, x) + A x + C + sqrt(2Q) noise` from lagged moments of
//! observed trajectories, simulates them, and scores fitted models against
//! data.

pub mod error;
pub mod exec;
pub mod io;
pub mod lim;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod moments;
pub mod nonlinear;
pub mod optim;
pub mod preprocess;
pub mod sim;
pub mod tensor;
pub mod validate;

pub use error::{Error, Result};
pub use exec::Execution;
pub use lim::{colored_lim_fit, gamma_select, reconstruct_k, white_lim_fit, GammaScan, LimFit, LinModel};
pub use linalg::SpdMatrix;
pub use model::{NoiseSpec, QuadModel};
pub use moments::{estimate_moments, forward_derivatives, DerivativeSet, DiffScheme, MomentOptions, MomentSet};
pub use sim::{simulate, SimPlan, Trajectory, WallSpec};
pub use tensor::{QuadTensor, Tensor};
