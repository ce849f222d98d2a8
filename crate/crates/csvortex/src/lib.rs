//! Radial Chern-Simons vortices, their SU(3) generalization, and the
//! leading-order approximation of blow-up families on the first boundary
//! line of the flux plane.
//!
//! Start with [`shooting`] for radial solutions, [`flux`] for the flux
//! plane, [`profiles`] for Liouville bubbles and their kernels, and
//! [`approx`] for the two-scale construction. [`linearized`] applies the
//! linearized operators on polar grids, and [`verify`] bundles the identity
//! checks.

// `!(x > 0.0)` is the idiom used to reject NaN together with bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod flux;
pub mod geom;
pub mod linearized;
pub mod ode;
pub mod profiles;
pub mod quadrature;
pub mod shooting;
pub mod verify;
