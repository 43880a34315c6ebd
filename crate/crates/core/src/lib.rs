//! Non-intrusive reduced-order modeling with guaranteed-stable quadratic
//! latent dynamics and trainable oblique projection operators.
//!
//! The toolkit learns models of the form
//! `dz/dt = A z + H : z z^T + B u`, `y = h(Phi (Psi^T Phi)^-1 z)`
//! against trajectory data. The latent tensors can be parameterized so that
//! `A` is Hurwitz and `H` is energy-preserving by construction (GasNiTROM /
//! GasOpInf), or left unconstrained (NiTROM / Operator Inference /
//! POD-Galerkin baselines). Projection frames live on a Grassmann x Stiefel
//! product manifold and are optimized with adjoint gradients.

pub mod error;
pub mod numerics;
pub mod manifolds;
pub mod stability;
pub mod ode;
pub mod rom;
pub mod fom;
pub mod opinf;
pub mod optim;
pub mod training;

pub use error::{Error, Result};
pub use fom::{InputSignal, QuadraticFOM};
pub use manifolds::{EuclidFactor, GrassmannPoint, ProductPoint, StiefelPoint, TangentVector};
pub use numerics::{DenseMatrix, Tensor3, Vector};
pub use rom::{LatentDynamics, OutputMap, ProjectionPair, RomModel};
pub use stability::{AssembledTensors, StableLatentParams};
pub use training::{SnapshotDataset, TrainConfig, Trajectory};
