//! Siamese max-pooled BiLSTM sentence-pair matcher with exact-match (MA) and
//! paraphrase (PR) input features, three dropout regularizers, and the
//! feature analytics used to judge MA/PR predictive power.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod linalg;
pub mod matcher;
pub mod metrics;
pub mod model;
pub mod ppdb;
pub mod rng;
pub mod training;

pub use analysis::{analyze, AnalysisFeature, AnalysisReport};
pub use corpus::{
    load_dataset, scale_score, tokenize, unscale_score, DataFormat, Dataset, Gold, LoadOptions, ScoreRange, Sentence,
    SentencePair, Split, TaskKind, Token,
};
pub use encoder::{EncoderParams, Mode, RegularizationConfig};
pub use error::{Error, Result};
pub use features::{load_glove, AugmentedSentence, EmbeddingTable, FeatureMode, GLOVE_DIM};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use matcher::{HeadParams, MatchVector, ModelOutput, ScoreFn};
pub use metrics::MetricReport;
pub use model::{Model, ModelConfig, PairNoise, Parameters};
pub use ppdb::{build_index, ParaphraseIndex, PpdbStats};
pub use training::{evaluate, grid_search, train, DecayOn, DevMetric, Resources, TrainConfig, TrainReport};
