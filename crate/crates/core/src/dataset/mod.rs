//! Story ingestion, the description-availability filter, image features and
//! padded batches.

mod batch;
mod examples;
mod features;
pub mod synthetic;
mod vist;

pub use batch::{make_batches, Batch, Padded};
pub use examples::{
    build_examples, encode_description, reference_map, reference_records, CacheHeader,
    ExampleCache, ExampleRecord, StoryExample, TextPipeline,
};
pub use features::{
    Backbone, FeatureProvider, FeatureStoreWriter, ProviderSpec, STORE_DATA, STORE_INDEX,
};
pub use vist::{filter_stories, load_dii, load_sis, parse_dii, parse_sis, RawStory, SisLoad, StoryEntry};

/// Images (and sentences) per story.
pub const STORY_LEN: usize = 5;
