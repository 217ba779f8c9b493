//! Sequence-to-frame transformation: stacked tri-axis rows are permuted so
//! every pair of rows becomes adjacent, then each row is expanded so every
//! pair of axes becomes adjacent.

mod dump;
mod frame;
mod normalize;
mod permutation;

pub use dump::{read_frame_dump, write_frame_dump, FrameDump, FrameDumpHeader};
pub use frame::{
    build_frame, expand_row, window_to_sample, window_to_sample_with, ActivityFrame,
    FrameGeometry, FrameLayout, ModalitySnapshot, Sample, FRAME_WIDTH,
};
pub use normalize::{normalize, AxisStats, ChannelStats};
pub use permutation::{build_permutation, PermutationSequence};
