//! Feature, taxonomy and split ingestion, late fusion of speech modalities,
//! and the synthetic bundle generator.

mod bundle;
mod features;
mod synthetic;

pub use bundle::{fuse_files, fuse_modalities, BundlePaths, DatasetBundle, Split, SplitManifest};
pub use features::{load_features, Domain, FeatureFile, FeatureRecord, Modality, FEATURE_MAGIC, FEATURE_VERSION};
pub use synthetic::{
    classical_mds, gen_synthetic, write_bundle, SyntheticBundle, SyntheticSpec, DEFAULT_LEXICON, NOISE_LABEL,
};
