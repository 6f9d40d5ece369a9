pub mod adam;
pub mod evaluate;
pub mod objective;
pub mod schedule;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use evaluate::{assign_clusters, evaluate, purity, usage_entropy, Metrics};
pub use objective::{elbo_concrete, elbo_marginal, objective, Estimator, ObjectiveTerms};
pub use schedule::{kl_weight, KlSchedule, ScheduleKind};
pub use trainer::{train, EarlyStopping, EpochRecord, TrainConfig, TrainReport};
