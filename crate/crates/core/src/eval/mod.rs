//! Experiment protocol: corpora, splits, segment sampling, accuracy sweeps
//! and the summary statistics reported across rounds.

mod corpus;
mod experiment;
mod report;
mod stats;

pub use corpus::{
    generate_synthetic_corpus, speaker_name, synthesize, utterance_files, utterance_name, Corpus,
    SpeakerData, SpeakerGenerator, SyntheticConfig, Utterance, SYNTHETIC_COMPONENTS,
};
pub use experiment::{
    extract_segments, run_experiment, run_experiment_with_models, segment_starts, split_speaker,
    ExperimentConfig, Method,
};
pub use report::{AccuracyRecord, EvalReport, PValue, Summary, System};
pub use stats::{boxplot_stats, quantile_sorted, t_test, BoxplotStats, TTest};
