//! Structure learning: MMPC neighbor discovery and MMHC hill-climbing.

mod hillclimb;
mod mmpc;
mod score;

pub use hillclimb::{hill_climb, hill_climb_traced, HillClimbConfig, HillClimbOutcome};
pub use mmpc::{mmpc_blanket, mmpc_neighbors, mmpc_skeleton, subsets_up_to, MmpcConfig, Phase1, VariableOrder};
pub use score::{local_score, total_score, ScoreCache, ScoreKind};
