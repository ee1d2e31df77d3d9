//! Four-way aligned records (music, video, a frame, text) and the
//! instruction datasets built from them.

pub mod cache;
pub mod corpus;
pub mod error;
pub mod instructions;
pub mod jsonl;
pub mod record;
pub mod split;
pub mod synth;
pub mod unify;

pub use cache::{load_or_build, EmbeddingTable, RecordEmbeddings};
pub use corpus::{build_dataset, synth_corpus, unify_records, BuiltDataset, DatasetKind, RECORDS_FILE};
pub use error::{DataError, Result};
pub use instructions::{
    make_any2t, make_caption_pairs, make_mi2t, make_mv2t, make_target_variant, InstructionPair, MediaSlot, TaskTag,
    MULTIWAY_INSTRUCTION,
};
pub use jsonl::{load_pairs, load_records, read_jsonl, write_jsonl};
pub use record::{build_record, Captions, MediaRefs, Music4wayRecord, RecordMedia, UnifierKind};
pub use split::{assign_split, Split};
pub use synth::{synth_one, synth_raw, Captioner, SynthItem, SynthParams};
pub use unify::{RemoteConfig, RemoteUnifier, TargetVariant, TemplateUnifier, Unifier};
