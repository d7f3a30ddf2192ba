//! Experiment drivers: the small-asymmetry sweep, asymmetry trend and
//! aberration-scale studies, pupil search, the single-system Strehl analysis
//! and correction rendering.

mod manifest;
mod phases;
mod property1;
mod render;
mod search;
pub mod stats;
mod trend;

pub use manifest::RunManifest;
pub use phases::{PhaseSampler, PhaseSplit};
pub use property1::{
    log_space, property1_sweep, standard_property1_pair, Property1Point, Property1Result,
};
pub use render::{correction_kernel, render_correction};
pub use search::{
    pupil_search, LeaderboardEntry, SearchCandidate, SearchConfig, SearchResult, SearchScoring,
};
pub use trend::{
    run_scale_study, run_trend_study, single_system_analysis, write_bin_csv, write_trend_csv,
    BinAggregate, ExperimentConfig, FlipReference, ScaleEntry, ScaleStudy, SingleSystemBin,
    SingleSystemReport, TrendCorrelations, TrendRecord, TrendReport, TIE_MARGIN,
};
