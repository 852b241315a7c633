//! Small feedforward network with entity embeddings, exact reverse-mode
//! gradients and mini-batch Adam training. Serves both as the fitted
//! regression model and as the conditional-expectation surrogate.

mod io;
mod loss;
mod network;
mod train;

pub use io::{load, read_versioned, save, write_versioned, ModelContext, NetworkFile, FORMAT_VERSION};
pub use loss::{mean_poisson_deviance, poisson_deviance, poisson_losses, Loss};
pub use network::{Activation, Dense, Network, NetworkConfig, OutputActivation, Parameters};
pub use train::{
    gradients, mean_loss, train, train_with_hook, EpochRecord, Samples, TrainConfig, TrainLog,
};
