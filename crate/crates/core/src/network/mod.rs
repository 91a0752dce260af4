//! Paired joint/individual autoencoders with the three identity strategies
//! and the regression-network orthogonality penalty.

mod blocks;
mod model;
mod spec;
mod train;

pub use blocks::{Decoder, Trunk};
pub use model::{
    Branch, DeepJiveNetwork, Encoded, ForwardOutput, LatentBundle, OrthoFlow, OrthoMode, OrthoOutput, OrthoSnapshot,
};
pub(crate) use model::var_to_matrix;
pub use spec::{LayerSpec, NetworkSpec, Variant};
pub use train::{train, EpochRecord, OptimizerChoice, StepReport, TrainConfig, Trainer, HISTORY_HEADER};

/// Builds a network with parameters drawn from `seed`.
pub fn build_network(spec: NetworkSpec, seed: u64) -> crate::Result<DeepJiveNetwork> {
    DeepJiveNetwork::new(spec, seed)
}
