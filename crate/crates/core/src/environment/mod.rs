//! Reward-generating environments and regret accounting.

mod regret;
mod replay;
mod synthetic;

pub use regret::{fixed_arm_regret, RegretLedger};
pub use replay::{load_csv, ColumnSelector, LabelMap, ReplayEnv, ReplayTable};
pub use synthetic::{links, sample_direction, LinkFamily, LinkParams, SyntheticEnv, SyntheticRound};
