//! Material inference: posterior, losses and training.

mod loss;
mod posterior;
mod train;

pub use loss::{elbo_loss, nll_image, nll_mesh, DataEval, DataLoss, DrapeModel, ElboEval, Observations};
pub use posterior::{
    floor_sample, load_posterior, log_prior, log_q, param_group, posterior_from_json, posterior_to_json,
    reparam_sample, sample_material, save_posterior, sigmoid, softplus, softplus_inv, standard_normal,
    LikelihoodSpec, ParamGroup, PriorConfig, PriorSpec, VariationalPosterior, POSTERIOR_LAYOUT_VERSION,
};
pub use train::{
    best_of_k, epoch_noise, initial_parameters, sample_stream, train, train_from, Adam, BestOfK, EpochLog, Learned, ModelKind,
    TrainConfig, TrainOutcome,
};
