//! Frame sequences: synthetic generation, FSEQ persistence, normalization,
//! windowing and augmentation.

mod fseq;
mod sequence;
mod synth;
mod windows;

pub use fseq::{decode as decode_fseq, encode as encode_fseq, load_sequence, save_sequence};
pub(crate) use fseq::{read_file, write_atomic};
pub use sequence::{capacity_of, denormalize, normalize, FrameSequence, NormStats, STD_FLOOR};
pub use synth::{analytic_frame, generate_synthetic, SyntheticKind, SyntheticSpec};
pub use windows::{
    augment_reverse, make_quadruples, make_triplets, QuadrupleSample, Reversible, TripletSample,
};
