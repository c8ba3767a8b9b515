//! Encoders: an executable toy CNN and symbolic ResNet101/decoder graphs.

pub mod decoders;
pub mod graph;
pub mod resnet;
pub mod toy;

pub use decoders::{
    describe_decoder, describe_fcn_head, describe_hgd, describe_hgd_on, describe_model, DecoderKind, ModelKind,
    RESNET_FEATURE_CHANNELS,
};
pub use graph::{ArchGraph, GraphBuilder, LayerKind, LayerSpec};
pub use resnet::{describe_resnet101, describe_resnet101_with, ResNetGraph, ResNetOptions};
pub use toy::{BackboneConfig, EncoderFeatures, ToyBackbone};
