//! Image I/O, the analytic reference operators and synthetic dataset
//! generation.

pub mod image;
pub mod ops;
pub mod synth;

pub use image::{decode_ppm, encode_ppm, psnr, read_image, write_image, Image};
pub use ops::{degrade, gaussian_blur, haze_pair, synth_rating, tone_operator, DegradeKind};
pub use synth::{
    load_datasets, make_datasets, procedural_image, write_datasets, DatasetPair, Datasets, OperatorTag, PairOperator,
    RatedImage, Split,
};
