//! Progressive entropic OT: schedules, the fitting loop and the fitted map.

mod fit;
mod schedule;
mod state;

pub use fit::{progot_fit, FitOptions, ProgFit, StepReport};
pub use schedule::{
    alpha_schedule, default_scales, epsilon_schedule, holdout_split, threshold_schedule, times_from_alphas, AlphaKind,
    EpsilonPlan, EpsilonSchedule, ScheduleSet, DEFAULT_THETA,
};
pub use state::{progot_transport, progot_transport_batch, ProgState, ProgStep};
