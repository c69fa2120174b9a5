//! Friendly attacks on channel decoders.
//!
//! A fixed perturbation is added to the modulated all-zero codeword and
//! tuned by gradient descent through the channel, the demapper and a
//! differentiable belief-propagation decoder so that the unmodified receiver
//! makes fewer errors, at unchanged transmit power. By linearity the
//! perturbation transfers to every codeword with a per-symbol sign change.

pub mod attack;
pub mod bp;
pub mod channel;
pub mod codes;
pub mod config;
pub mod eval;
pub mod gf2;
pub mod gradcheck;
pub mod modem;
