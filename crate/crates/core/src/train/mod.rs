//! Optimization, the training loop and SI-SNR evaluation.

mod adam;
mod eval;
mod trainer;

pub use adam::{clip_global_norm, Adam};
pub use eval::{evaluate, evaluate_pairs, evaluate_with, oracle_enhance, score_pair, EvalReport, EvalRow};
pub use trainer::{load_pairs, loss_and_grads, train, train_step, EpochLog, Pair, StepStats, TrainConfig, TrainSummary};
