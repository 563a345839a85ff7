//! File formats, checkpoint container, synthetic data, and windowing.

mod checkpoint;
mod formats;
mod resample;
mod synth;
mod window;

pub use checkpoint::{read_checkpoint, read_checkpoint_bytes, write_checkpoint, write_checkpoint_bytes};
pub use formats::{
    decode_audio_features, decode_landmarks, decode_motion, encode_audio_features, encode_landmarks,
    encode_motion, read_audio_features, read_landmarks, read_motion, write_audio_features, write_landmarks,
    write_motion,
};
pub use resample::resample_to_fps;
pub use synth::{is_validation, make_synthetic_dataset, oracle_motion, Dataset, SequencePair, SyntheticSpec};
pub use window::{crop_random_window, WindowPair};
