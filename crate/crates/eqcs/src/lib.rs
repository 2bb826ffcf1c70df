//! Equivariant generative priors for compressed sensing with unknown
//! orientation.
//!
//! The library covers the full pipeline: a small reverse-mode autodiff
//! engine ([`diffmath`]), cyclic-group representations and image rotations
//! ([`groups`]), group-convolution layers ([`gconv`]), equivariant and
//! baseline VAEs ([`models`]), Gaussian measurement simulation ([`sensing`]),
//! latent-space recovery solvers ([`recovery`]), empirical checks of the
//! recovery-guarantee theory ([`theory`]), dataset handling ([`data`]) and
//! experiment orchestration ([`run`]).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod data;
pub mod diffmath;
pub mod gconv;
pub mod groups;
pub mod models;
pub mod recovery;
pub mod run;
pub mod sensing;
pub mod theory;
