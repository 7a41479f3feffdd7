//! Core library for embedding image frames in a hyperbolic latent
//! space-time and synthesizing future frames under causal constraints.
//!
//! The pieces fit together like this: a variational autoencoder
//! ([`pvae`]) embeds frames on the Poincaré ball ([`geometry`]), frame
//! index supplies a time axis, and each embedded frame anchors a light
//! cone ([`cones`]) in the resulting Minkowski space. Futures are
//! synthesized by sampling wrapped normal distributions ([`wrapped`])
//! inside cone intersections and decoding the accepted latents. Training
//! runs on a small reverse-mode tape ([`autodiff`]); procedural sprite
//! videos ([`data`]) stand in for real footage.

pub mod autodiff;
pub mod cones;
pub mod data;
pub mod geometry;
pub mod pvae;
pub mod wrapped;
