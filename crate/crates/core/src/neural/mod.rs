//! From-scratch convolutional network: layers, topology, training and
//! plane interpolation.

pub mod interp;
pub mod io;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use interp::{interpolate_cube, interpolate_plane};
pub use io::{decode_model, encode_model, load_model, save_model};
pub use layers::{BatchNormParams, ConvWeights, Mode};
pub use network::{
    backward, build_network, build_paper_network, forward, forward_cached, sgd_step, ForwardCache, Gradients,
    LayerKind, LayerParams, LayerSpec, NetworkSpec, ParameterSet, Preset,
};
pub use tensor::Tensor4;
pub use train::{make_pair, observed_scale, train, train_from, EpochReport, TrainConfig, TrainHistory, TrainingPair};
