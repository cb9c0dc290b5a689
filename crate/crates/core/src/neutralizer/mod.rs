//! Attribute-neutralizing image editor: encoder/decoder generator with a
//! swappable CNN-U-Net or ViT encoder, a multi-task critic, composite
//! losses, and the seeded adversarial training loop.

mod checkpoint;
mod discriminator;
mod generator;
mod loss;
mod train;
mod types;

pub use checkpoint::{fnv1a_f64, NeutralizerCheckpoint};
pub use discriminator::{gradient_penalty, interpolate_pairs, Discriminator, InputGradient};
pub use generator::{Generator, Latent};
pub use loss::{
    bce_with_logits, bce_with_logits_grad, discriminator_loss, discriminator_loss_grads,
    generator_loss, generator_loss_grads, DiscriminatorLossValue, GeneratorLossValue,
};
pub use train::{epoch_mean, train_neutralizer, write_loss_log, LossRow, TrainConfig};
pub use types::{blend_attribute, AttributeEdit, EncoderKind, GeneratorSpec, LossWeights};
