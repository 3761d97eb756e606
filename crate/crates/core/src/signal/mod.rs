//! Audio/video feature preprocessing.

mod align;
mod pca;
mod pipeline;
mod spectrogram;

pub use align::{align_streams, augment_dataset, augment_shift, shift_record, shift_rows};
pub use pca::{apply_center, center, column_mean, pca_whiten_fit, pca_whiten_fit_eps, PcaModel, DEFAULT_PCA_EPS};
pub use pipeline::{preprocess, PreprocessConfig};
pub use spectrogram::{hamming, magnitude_spectrum, spectrogram, SpectrogramConfig};
