//! Small dense networks with hand-written reverse mode, losses and optimizers.

mod loss;
mod mlp;
mod optim;

pub use loss::{cross_entropy, entropy, CrossEntropy, PROB_FLOOR};
pub use mlp::{Activation, Dense, Mlp, MlpSpec, OutputTransform, Parameters, Tape};
pub use optim::{Optimizer, OptimizerConfig};
