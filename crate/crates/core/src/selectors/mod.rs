//! Offline model-selection criteria.
//!
//! Every criterion implements [`Selector`]: given a candidate set and a
//! trajectory split, produce a per-candidate score and a ranking. Selectors
//! are registered by name ([`by_name`]) so configs and the CLI choose them
//! at runtime:
//!
//! - `sbv`    — regression-estimated Bellman backups, scored on validation
//! - `emsbe`  — empirical squared Bellman residual on validation
//! - `wis`    — weighted per-decision importance sampling of policy value
//! - `fqe`    — fitted Q-evaluation of the greedy policy at initial states

mod emsbe;
mod fqe;
mod sbv;
mod wis;

pub use emsbe::emsbe_score;
pub use fqe::{fqe_evaluate, fqe_fit_q};
pub use sbv::{estimate_backup, sbv_rank, sbv_score, BackupData, BackupEstimate, SbvDiagnostic, SbvRanking};
pub use wis::{wis_estimate, WisOutcome};

use thiserror::Error;

use crate::candidates::CandidateSet;
use crate::data::DatasetSplit;
use crate::qfit::QFitError;
use crate::regression::RegressorSpec;
use crate::report::{format_float, Table};
use crate::value::Policy;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("backup estimation failed for every spec: {0}")]
    BackupFailed(String),
    #[error(transparent)]
    QFit(#[from] QFitError),
    #[error("behavior policy assigns zero probability to an observed action (traj {traj}, step {step})")]
    ZeroBehaviorProb { traj: u64, step: usize },
    #[error("unknown selector '{0}'")]
    UnknownSelector(String),
}

/// Whether smaller or larger scores indicate better candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreDirection {
    LowerIsBetter,
    HigherIsBetter,
}

/// Per-candidate output of a selector.
#[derive(Debug, Clone)]
pub struct SelectionScore {
    pub candidate_id: String,
    pub method: String,
    pub score: f64,
    /// Degenerate or failure marker; scores with a flag carry the
    /// documented fallback value (0 for degenerate estimates, +inf for
    /// failed candidates under lower-is-better).
    pub flag: Option<String>,
    pub aux_backup_mse: Option<f64>,
    pub aux_ess: Option<f64>,
}

/// Scores sorted best-first. Ties keep candidate-set order.
#[derive(Debug, Clone)]
pub struct RankedCandidates {
    pub method: String,
    pub entries: Vec<SelectionScore>,
    /// True when every candidate carries a degenerate flag; reporting then
    /// falls back to the coin-flip convention.
    pub degenerate: bool,
}

impl RankedCandidates {
    pub fn ranked_ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.candidate_id.as_str()).collect()
    }

    pub fn top(&self) -> &SelectionScore {
        &self.entries[0]
    }
}

/// Stable-sorts scores by the method direction; candidate order breaks ties.
pub fn rank_scores(
    method: &str,
    mut scores: Vec<SelectionScore>,
    direction: ScoreDirection,
) -> RankedCandidates {
    match direction {
        ScoreDirection::LowerIsBetter => scores.sort_by(|a, b| a.score.total_cmp(&b.score)),
        ScoreDirection::HigherIsBetter => scores.sort_by(|a, b| b.score.total_cmp(&a.score)),
    }
    let degenerate = !scores.is_empty() && scores.iter().all(|s| s.flag.is_some());
    RankedCandidates { method: method.to_string(), entries: scores, degenerate }
}

/// Everything a selector may need beyond the candidates and the split.
#[derive(Clone)]
pub struct SelectorContext {
    /// Discount used inside Bellman targets and FQE iteration.
    pub gamma_train: f64,
    /// Discount used by return-style estimates (WIS).
    pub gamma_eval: f64,
    /// Regression grid tuned per candidate when estimating backups.
    pub sbv_specs: Vec<RegressorSpec>,
    /// Which data the backup regressions train on.
    pub backup_data: BackupData,
    /// The logging policy (known in every in-scope environment).
    pub behavior: Policy,
    /// Number of decision steps summed by the importance-sampling estimate.
    pub wis_horizon: usize,
    pub fqe_regressor: RegressorSpec,
    pub fqe_iterations: usize,
}

impl SelectorContext {
    /// Defaults for the toy environment: train discount 0.9, evaluation
    /// discount 1, backup grid of degree x penalty combinations, FQE with a
    /// quadratic ridge backend for 50 iterations.
    pub fn toy_defaults() -> Self {
        let mut sbv_specs = Vec::new();
        for degree in [1usize, 2, 3] {
            for lambda in [0.0, 0.01, 0.1, 1.0, 10.0] {
                sbv_specs.push(RegressorSpec::PolyRidge { degree, lambda });
            }
        }
        Self {
            gamma_train: 0.9,
            gamma_eval: 1.0,
            sbv_specs,
            backup_data: BackupData::SameTrain,
            behavior: Policy::uniform(2),
            wis_horizon: 100,
            fqe_regressor: RegressorSpec::PolyRidge { degree: 2, lambda: 0.1 },
            fqe_iterations: 50,
        }
    }
}

/// A model-selection strategy.
pub trait Selector: Send + Sync {
    fn name(&self) -> &'static str;
    fn direction(&self) -> ScoreDirection;
    fn rank(
        &self,
        candidates: &CandidateSet,
        split: &DatasetSplit,
        ctx: &SelectorContext,
    ) -> Result<RankedCandidates, SelectorError>;
}

/// All registered selector names, in canonical order.
pub fn selector_names() -> &'static [&'static str] {
    &["sbv", "emsbe", "wis", "fqe"]
}

/// Resolves a selector by registry name.
pub fn by_name(name: &str) -> Result<Box<dyn Selector>, SelectorError> {
    match name {
        "sbv" => Ok(Box::new(sbv::SbvSelector)),
        "emsbe" => Ok(Box::new(emsbe::EmsbeSelector)),
        "wis" => Ok(Box::new(wis::WisSelector)),
        "fqe" => Ok(Box::new(fqe::FqeSelector)),
        other => Err(SelectorError::UnknownSelector(other.to_string())),
    }
}

pub const SCORES_HEADER: &str = "method,candidate_id,score,flag,aux_backup_mse,aux_ess";

/// Scores table (`method,candidate_id,score,flag,aux_backup_mse,aux_ess`).
pub fn scores_table(rankings: &[RankedCandidates]) -> Table {
    let mut table = Table::new(SCORES_HEADER);
    for ranking in rankings {
        for e in &ranking.entries {
            table.push_row(&[
                ranking.method.clone(),
                e.candidate_id.clone(),
                format_float(e.score),
                e.flag.clone().unwrap_or_default(),
                e.aux_backup_mse.map(format_float).unwrap_or_default(),
                e.aux_ess.map(format_float).unwrap_or_default(),
            ]);
        }
    }
    table
}
