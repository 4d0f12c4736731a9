//! Captions, vocabularies, feature files, manifests and the synthetic task.

pub mod clips;
pub mod features;
pub mod manifest;
pub mod synth;
pub mod text;

pub use clips::{load_clips, Clip};
pub use features::{read_feature_file, write_feature_file, FeatureSequence, Modality};
pub use manifest::{load_manifest, AudioInput, AudioSource, DatasetManifest, ManifestRecord};
pub use synth::{generate_synthetic_task, SyntheticDataset, SyntheticExample, SyntheticTaskSpec};
pub use text::{
    build_vocabulary, decode_ids, encode_caption, normalize_caption, TokenSequence, Vocabulary,
    EOS_ID, PAD_ID, SOS_ID, UNK_ID,
};
