//! Building blocks with hand-derived backward passes.

pub mod activations;
pub mod batchnorm;
pub mod dropout;
pub mod linear;
pub mod lstm;

pub use activations::{g_activation, relu, sigmoid};
pub use batchnorm::{batch_norm_backward, batch_norm_forward, BatchNormCache, BatchNormParams, Mode};
pub use dropout::{dropout_backward, dropout_forward};
pub use linear::Linear;
pub use lstm::{
    lstm_backward_sequence, lstm_forward_sequence, lstm_step, lstm_step_backward, CellVariant, LstmParams,
    LstmState, LstmStepTrace,
};
