//! The conditional diffusion fuser: a linear-β DDPM trained to predict the
//! clean residual `HRMS − IMS`, sampled with DDIM.

mod blocks;
mod predictor;
mod schedule;
mod train;

pub use blocks::{time_embedding, Bamb, Block, Cfb, Level, PdConv};
pub use predictor::{Condition, Predictor, PredictorConfig};
pub use schedule::{ddim_step, epsilon_from_x0, make_schedule, q_sample, subsequence, NoiseSchedule};
pub use train::{l1_loss, sample, train, train_step, DiffusionConfig, DiffusionSample, Diffuser};
