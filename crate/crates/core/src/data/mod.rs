//! Interval-censored datasets: records, I/O, synthesis, splitting and insights.

pub mod insights;
pub mod io;
pub mod records;
pub mod sim;
pub mod split;

pub use io::{load_posts, validate_and_load, write_posts, DatasetManifest, SplitData, SplitInfo};
pub use records::{Engagement, ObservationRecord, PostRecord, UserMeta, CHANNELS};
pub use sim::{censor_to_intervals, simulate_dataset, simulate_posts, Event, HawkesParams, SimConfig, SimPost};
pub use split::{split_dataset, temporal_split, Split};
