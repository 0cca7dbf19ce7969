#![allow(dead_code)]

pub mod encoding;
pub mod gradients;
pub mod saliency;
pub mod sequences;
pub mod world;
