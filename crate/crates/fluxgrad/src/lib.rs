//! Reacting particle systems at finite volume, their macroscopic limits,
//! the rate functions their fluctuations define on state space and on flux
//! space, and the generalized gradient structures those rate functions
//! induce.
//!
//! The crate is organized around five concepts:
//!
//! * [`network`]: reaction networks with mass-action kinetics and
//!   detailed-balance equilibria;
//! * [`dynamics`]: the finite-volume jump process on states and integrated
//!   fluxes, its invariant distribution, and the deterministic limit;
//! * [`ldp`]: Hamiltonians `H` and rate functions `L` on both spaces,
//!   convex (Legendre) duality between them, and the contraction identity
//!   linking flux space to state space;
//! * [`structures`]: free energies, dissipation potentials, and numerical
//!   verification of generalized gradient (GGS), pre-GENERIC (pGGEN), and
//!   GENERIC non-interaction conditions;
//! * [`lattice`]: independent random walkers with transport fluxes on a
//!   periodic grid, discrete vector calculus, dual Sobolev norms, and a
//!   two-species reaction-diffusion model combining both mechanisms.
//!
//! The `fluxgrad` binary exposes all of this behind a command-line
//! interface; see [`cli`].

pub mod cli;
pub mod dynamics;
pub mod lattice;
pub mod ldp;
pub mod network;
pub(crate) mod numerics;
pub mod structures;

pub use network::{Concentration, ReactionNetwork};
