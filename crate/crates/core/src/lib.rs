//! Conservative spectral solver for the space-homogeneous Fokker-Planck-Landau
//! equation with hard potentials (`0 <= lambda <= 1`).
//!
//! The collision operator is evaluated in Fourier space as a weighted
//! convolution (seven plain convolutions, each done by FFT), then projected
//! onto the discrete null space of the mass/momentum/energy moments by a
//! constrained least-squares correction. Time integration is classical RK4.
//!
//! Everything numerical is generic over the scalar type through [`Real`];
//! the type aliases at the crate root fix it to `f64`, which is what the
//! solver tolerances are calibrated for.

pub mod collision;
pub mod conserve;
pub mod diagnostics;
pub mod dynamics;
pub mod lattice;
pub mod num;
pub mod quadrature;
pub mod weights;

pub use num::Real;

/// Double-precision grid geometry.
pub type Grid = lattice::GridSpec<f64>;
/// Double-precision velocity-space samples.
pub type Field = lattice::VelocityField<f64>;
/// Double-precision Fourier coefficients.
pub type Spectrum = lattice::SpectralField<f64>;
/// Double-precision collision workspace.
pub type Workspace = collision::CollisionWorkspace<f64>;
/// Double-precision conservation projector.
pub type Conservation = conserve::ConservationOperator<f64>;
/// Double-precision solver state.
pub type State = dynamics::SolverState<f64>;
/// Double-precision Landau right-hand side.
pub type Landau = dynamics::LandauRhs<f64>;
/// Double-precision diagnostics record.
pub type Record = diagnostics::DiagnosticsRecord<f64>;
