//! Small quantization-instrumented networks and the datasets they train on.

mod data;
mod idx;
mod network;
mod spec;

pub use data::{
    make_gaussian_blobs, make_gaussian_blobs_with, make_regression_wave, wave, Dataset, Split, Targets, DEFAULT_BLOB_SEPARATION,
};
pub use idx::{
    encode_idx_images, encode_idx_labels, images_tensor, load_idx_dataset, load_idx_images, load_idx_labels, parse_idx_images,
    parse_idx_labels, IdxImages, InputPrecision, IMAGES_MAGIC, LABELS_MAGIC,
};
pub use network::{
    constructed_sensitivity_pair, BatchNorm, Block, BnMode, Forward, NamedParam, Network, ParamKind, QuantLayer, SensitivityPair,
};
pub use spec::{EdgePolicy, LayerKind, LayerSpec, NetworkSpec, QuantizerKind};
