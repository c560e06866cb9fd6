//! Procedural shape categories, canonical instances, posed partial
//! observations and the on-disk dataset container.

mod category;
mod dataset;
mod instance;
mod observe;
mod template;

pub use category::{parse_categories, CategorySpec, ParamRange, Template, BUILTIN_CATEGORIES};
pub use dataset::{
    generate_dataset, read_dataset, sample_pose, write_dataset, Dataset, GenConfig,
    DATASET_VERSION,
};
pub use instance::{sample_instance, Instance, Split};
pub use observe::{render_observation, ObservationRecord, ViewSettings, MIN_OBSERVED_POINTS};
