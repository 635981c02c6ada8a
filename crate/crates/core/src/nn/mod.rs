//! A small Q-network: one convolution, dense layers, ReLU, Huber loss and
//! RMSprop, all in `f64`.

mod checkpoint;
mod linalg;
mod network;
mod optim;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use network::{huber, Batch, NetworkWidths, QNetwork, QNetworkSpec, TensorInfo};
pub use optim::{RmsProp, RmsPropConfig};
pub use tensor::Tensor;
