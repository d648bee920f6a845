//! Minimal deterministic neural-network stack: a reverse-mode tape over
//! f64 ndarrays, conv/pool/norm layers, and an Adam optimizer. Sequential
//! by construction so identical seeds give bit-identical trajectories.

pub mod layers;
pub mod ops;
pub mod optim;
pub mod tape;

pub use layers::{
    he_uniform, param_id_from_index, xavier_uniform, BatchNorm2d, Binding, BufferId, Conv2d,
    InstanceNorm2d, Linear, ParamId, ParamStore,
};
pub use optim::Adam;
pub use tape::{channel_stats, GradSink, Tape, Var};
