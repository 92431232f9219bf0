//! Generator, U-Net projection, timestep-conditioned discriminator and the
//! adversarial loss terms.

mod losses;
mod nets;

pub use losses::{
    diffuse_node, gradient_penalty, gradient_penalty_node, loss_discriminator, loss_generator,
    neg_entropy_node, phoneme_diversity, smoothness_node, smoothness_penalty, DiscSample,
    GanLossTerms, GenSample, LossGraph, LossWeights,
};
pub use nets::{
    discriminate, generate, unet_project, Discriminator, GanNets, Generator, NetBindings,
    NetConfig, UNetProjector, GEN_KERNEL, LEAKY_SLOPE, MAX_BANK_T,
};
