//! Right-for-the-right-reasons training: a small reverse-mode autodiff engine
//! with higher-order gradients, multilayer perceptrons, input-gradient
//! regularizers, gradient-based attacks and explanation-driven model search.

pub mod adam;
pub mod attacks;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
pub mod io;
pub mod nn;
pub mod objectives;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use attacks::{AttackKind, AttackSpec, TargetRule};
pub use autodiff::{finite_difference, Graph, Op, VarId};
pub use error::{Error, Result};
pub use nn::{init_params, LayerSpec, Params};
pub use objectives::{AnnotationMask, PenaltyConfig, PenaltyKind};
pub use tensor::Tensor;
pub use train::{Annotation, Defense, TrainConfig};
