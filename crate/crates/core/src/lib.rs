//! Transfer function search driven by a target image.
//!
//! A scalar [`volume::Volume`] is binned to 256 levels and rendered top-down
//! by [`raycast::render`] through a [`tf::TransferFunction`]. The genetic
//! optimizer in [`search`] evolves coarse 16-gene chromosomes until renders
//! look like a target picture, where "looks like" is a [`nn::Metric`]: either
//! a trained Siamese network or plain pixel MSE.

pub mod gray;
pub mod nn;
pub mod raycast;
pub mod search;
pub mod tf;
pub mod synth;
pub mod volume;
