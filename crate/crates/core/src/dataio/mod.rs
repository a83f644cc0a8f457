//! Audio ingestion, manifests, the toy text encoder and the shared tensor
//! file format.

pub mod manifest;
pub mod resample;
pub mod tensor_file;
pub mod text;
pub mod wav;

pub use manifest::{load_manifest, write_manifest, ClipRecord, Split};
pub use tensor_file::{Container, TensorFile};
pub use text::{encode_text, TextEmbedding};
pub use wav::{load_audio, load_audio_44k, read_wav, write_wav};
