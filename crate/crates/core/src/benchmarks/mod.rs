//! Fairness-aware baselines trained through the same interface as Fair-PPO.

pub mod fen;
pub mod soto;

pub use fen::{fen_fair_efficient_reward, macro_switch_violations, Fen, FenConfig, MacroSwitch};
pub use soto::{soto_select_head, soto_team_probability, soto_welfare_weight, Soto, SotoConfig, SELF_HEAD, TEAM_HEAD};
