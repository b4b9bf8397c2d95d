//! Experiment harness: candidate construction, ground-truth evaluation and
//! the four headline studies (noise sweep, error-band grouping, backup
//! partition ablation, FQE backend sensitivity).
//!
//! Every cell derives its streams from the root seed plus the experiment
//! tag, the grid position and the replica index, so re-running a config
//! reproduces each output file byte for byte. Cells fan out over a worker
//! pool; results collect in grid order.

use rayon::prelude::*;
use thiserror::Error;

use crate::candidates::{
    assemble_candidates, fqi_train, min_emsbe_fit, Candidate, CandidateError, CandidateMeta,
    CandidateSet, FqiSpec,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::data::{split_by_trajectory, DataError, DatasetSplit, OfflineDataset};
use crate::metrics::{self, MetricError, PolicyValueRecord};
use crate::regression::RegressorSpec;
use crate::report::{format_float, ReportError, Table};
use crate::rng::{derive_seed, tags};
use crate::selectors::{
    self, sbv_rank, RankedCandidates, SbvDiagnostic, ScoreDirection, SelectorContext,
    SelectorError,
};
use crate::toy::{self, approx_q_star, generate_dataset, rollout_policy_value, ToyConfig};
use crate::value::{greedy_policy, Policy, TieRule};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("cell (phi={phi}, seed={rep}): {source}")]
    Cell {
        phi: f64,
        rep: usize,
        #[source]
        source: Box<ExperimentError>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Candidates(#[from] CandidateError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Toy(#[from] toy::ToyError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

/// Experiment tags folded into cell seeds so studies never share streams.
mod exp {
    pub const SWEEP: u64 = 0xA1;
    pub const GROUPS: u64 = 0xA2;
    pub const ABLATE: u64 = 0xA3;
    pub const SENSITIVITY: u64 = 0xA4;
    pub const SINGLE: u64 = 0xA5;
}

fn cell_seed(root: u64, experiment: u64, phi_idx: usize, rep: usize) -> u64 {
    derive_seed(root, &[experiment, phi_idx as u64, rep as u64])
}

/// Everything one experiment cell needs: data, split, trained candidates
/// and their ground-truth policy values.
pub struct CellArtifacts {
    pub toy_cfg: ToyConfig,
    pub split: DatasetSplit,
    pub candidates: CandidateSet,
    pub truth: Vec<PolicyValueRecord>,
}

/// Selector context wired from a config.
pub fn selector_context(cfg: &ExperimentConfig) -> Result<SelectorContext, ExperimentError> {
    Ok(SelectorContext {
        gamma_train: cfg.env.gamma_train,
        gamma_eval: cfg.env.gamma_eval,
        sbv_specs: cfg.sbv_specs(),
        backup_data: cfg.backup_data(),
        behavior: Policy::uniform(toy::TOY_NUM_ACTIONS),
        wis_horizon: cfg.wis.horizon,
        fqe_regressor: cfg.fqe.regressor()?,
        fqe_iterations: cfg.fqe.iterations,
    })
}

/// Trains the configured candidate set on the training split.
pub fn build_candidates(
    cfg: &ExperimentConfig,
    toy_cfg: &ToyConfig,
    train: &OfflineDataset,
    seed: u64,
) -> Result<CandidateSet, ExperimentError> {
    let gamma = cfg.env.gamma_train;
    let mut grid: Vec<(String, FqiSpec, CandidateMeta)> = Vec::new();
    for &degree in &cfg.candidates.degrees {
        for &lambda in &cfg.candidates.lambdas {
            grid.push((
                format!("fqi-d{degree}-l{lambda}"),
                FqiSpec {
                    regressor: RegressorSpec::PolyRidge { degree, lambda },
                    iterations: cfg.candidates.fqi_iterations,
                    gamma,
                },
                CandidateMeta {
                    algorithm: "fqi-poly".into(),
                    degree: Some(degree),
                    lambda: Some(lambda),
                    iterations: Some(cfg.candidates.fqi_iterations),
                    ..CandidateMeta::default()
                },
            ));
        }
    }
    let mut parts: Vec<Candidate> = grid
        .par_iter()
        .map(|(id, spec, meta)| {
            let mut q = fqi_train(spec, train)?;
            q.label = id.clone();
            Ok(Candidate::new(id.clone(), q, meta.clone()))
        })
        .collect::<Result<Vec<_>, CandidateError>>()?;

    for &degree in &cfg.candidates.min_emsbe_degrees {
        let fit = min_emsbe_fit(degree, train, gamma, 2000, 0.02)?;
        let mut q = fit.q;
        let id = format!("emsbe-fit-d{degree}");
        q.label = id.clone();
        parts.push(Candidate::new(
            id,
            q,
            CandidateMeta {
                algorithm: "min-emsbe".into(),
                degree: Some(degree),
                notes: format!("train_residual={:.6e}", fit.training_emsbe),
                ..CandidateMeta::default()
            },
        ));
    }
    if cfg.candidates.include_zero {
        parts.push(Candidate::new(
            "zero",
            crate::value::QFunction::zero(),
            CandidateMeta { algorithm: "zero".into(), ..CandidateMeta::default() },
        ));
    }
    if cfg.candidates.include_q_star {
        let mut q = approx_q_star(
            toy_cfg,
            cfg.candidates.q_star_rollouts,
            cfg.candidates.q_star_horizon,
            gamma,
            derive_seed(seed, &[tags::QSTAR]),
        )?;
        q.label = "qstar".into();
        parts.push(Candidate::new(
            "qstar",
            q,
            CandidateMeta {
                algorithm: "qstar-approx".into(),
                notes: format!("rollouts={}", cfg.candidates.q_star_rollouts),
                ..CandidateMeta::default()
            },
        ));
    }
    Ok(assemble_candidates(parts)?)
}

/// Greedy evaluation policy for a candidate. The zero function breaks its
/// everywhere-ties randomly, which reproduces the logging policy; all other
/// candidates use first-index tie-breaking.
pub fn evaluation_policy(candidate: &Candidate, num_actions: usize) -> Policy {
    let tie = if candidate.id == "zero" { TieRule::Random } else { TieRule::FirstIndex };
    greedy_policy(&candidate.q, num_actions, tie)
}

/// Monte Carlo ground truth for every candidate, using one shared
/// evaluation stream per cell so candidates face identical environments.
pub fn evaluate_truth(
    cfg: &ExperimentConfig,
    toy_cfg: &ToyConfig,
    candidates: &CandidateSet,
    seed: u64,
) -> Vec<PolicyValueRecord> {
    let eval_seed = derive_seed(seed, &[tags::EVAL]);
    candidates
        .iter()
        .map(|c| {
            let policy = evaluation_policy(c, toy::TOY_NUM_ACTIONS);
            let value = rollout_policy_value(
                toy_cfg,
                &policy,
                cfg.eval.episodes,
                cfg.eval.horizon,
                cfg.env.gamma_eval,
                eval_seed,
            );
            PolicyValueRecord {
                candidate_id: c.id.clone(),
                value: value.mean,
                std_error: value.std_error,
            }
        })
        .collect()
}

/// Builds a full cell from scratch at the given noise level.
pub fn build_cell(
    cfg: &ExperimentConfig,
    phi: f64,
    seed: u64,
) -> Result<CellArtifacts, ExperimentError> {
    let toy_cfg = ToyConfig::from_phi(
        phi,
        cfg.env.num_trajectories,
        cfg.env.horizon,
        derive_seed(seed, &[tags::DATASET]),
    )?;
    let dataset = generate_dataset(&toy_cfg, &Policy::uniform(toy::TOY_NUM_ACTIONS));
    build_cell_from_dataset(cfg, &toy_cfg, dataset, seed)
}

/// Builds a cell around an existing dataset (the CLI path).
pub fn build_cell_from_dataset(
    cfg: &ExperimentConfig,
    toy_cfg: &ToyConfig,
    dataset: OfflineDataset,
    seed: u64,
) -> Result<CellArtifacts, ExperimentError> {
    let mut cell = build_cell_without_truth(cfg, toy_cfg, dataset, seed)?;
    cell.truth = evaluate_truth(cfg, toy_cfg, &cell.candidates, seed);
    Ok(cell)
}

/// Same, skipping the Monte Carlo ground-truth pass; `truth` stays empty.
/// Ranking commands that never touch truth use this path.
pub fn build_cell_without_truth(
    cfg: &ExperimentConfig,
    toy_cfg: &ToyConfig,
    dataset: OfflineDataset,
    seed: u64,
) -> Result<CellArtifacts, ExperimentError> {
    let split =
        split_by_trajectory(&dataset, cfg.split.train_fraction, derive_seed(seed, &[tags::SPLIT]))?;
    let candidates = build_candidates(cfg, toy_cfg, &split.train, seed)?;
    Ok(CellArtifacts { toy_cfg: *toy_cfg, split, candidates, truth: Vec::new() })
}

/// Single cell at the config's own phi, for the CLI rank/evaluate commands.
pub fn build_single_cell(cfg: &ExperimentConfig) -> Result<CellArtifacts, ExperimentError> {
    build_cell(cfg, cfg.env.phi, cell_seed(cfg.seed, exp::SINGLE, 0, 0))
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub phi: f64,
    pub rep: usize,
    pub method: String,
    pub top_k_mean: f64,
    pub top_k_max: f64,
    /// Rank correlation between the method's preference and the truth;
    /// NaN when undefined (degenerate scores).
    pub spearman: f64,
    pub flag: String,
}

/// Aggregate over seeds for one (method, phi) pair.
#[derive(Debug, Clone)]
pub struct MethodPhiAggregate {
    pub phi: f64,
    pub method: String,
    pub mean_top_k_mean: f64,
    pub std_top_k_mean: f64,
    pub mean_top_k_max: f64,
    pub num_seeds: usize,
}

#[derive(Debug, Clone)]
pub struct SweepDiagnosticRow {
    pub phi: f64,
    pub rep: usize,
    pub diag: SbvDiagnostic,
}

pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<MethodPhiAggregate>,
    pub sbv_diagnostics: Vec<SweepDiagnosticRow>,
}

fn spearman_for(
    ranking: &RankedCandidates,
    direction: ScoreDirection,
    candidates: &CandidateSet,
    truth: &[PolicyValueRecord],
) -> Option<f64> {
    // Scores aligned to candidate-set order, oriented so larger = preferred.
    let mut scores = vec![0.0; candidates.len()];
    for entry in &ranking.entries {
        let idx = candidates.position(&entry.candidate_id)?;
        scores[idx] = match direction {
            ScoreDirection::LowerIsBetter => -entry.score,
            ScoreDirection::HigherIsBetter => entry.score,
        };
    }
    let values: Vec<f64> = truth.iter().map(|r| r.value).collect();
    metrics::spearman_rank_corr(&scores, &values).ok()
}

fn score_cell_methods(
    cfg: &ExperimentConfig,
    cell: &CellArtifacts,
    ctx: &SelectorContext,
    phi: f64,
    rep: usize,
) -> Result<(Vec<SweepRow>, Vec<SweepDiagnosticRow>), ExperimentError> {
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for method in &cfg.selectors.methods {
        let started = std::time::Instant::now();
        let selector = selectors::by_name(method)?;
        let ranking = if method == "sbv" {
            // Direct call keeps the per-candidate tuning diagnostics.
            let out = sbv_rank(
                &cell.candidates,
                &cell.split,
                &ctx.sbv_specs,
                ctx.gamma_train,
                ctx.backup_data,
            )?;
            for diag in out.diagnostics {
                diagnostics.push(SweepDiagnosticRow { phi, rep, diag });
            }
            out.ranked
        } else {
            selector.rank(&cell.candidates, &cell.split, ctx)?
        };
        let (top_mean, top_max) = metrics::top_k_metrics(&ranking, &cell.truth, cfg.eval.top_k)?;
        let spearman =
            spearman_for(&ranking, selector.direction(), &cell.candidates, &cell.truth);
        let flag = if ranking.degenerate {
            "degenerate".to_string()
        } else if spearman.is_none() {
            "spearman_undefined".to_string()
        } else {
            String::new()
        };
        rows.push(SweepRow {
            phi,
            rep,
            method: method.clone(),
            top_k_mean: top_mean,
            top_k_max: top_max,
            spearman: spearman.unwrap_or(f64::NAN),
            flag,
        });
        log::info!(
            "sweep phi={phi} seed={rep} method={method} elapsed_ms={}",
            started.elapsed().as_millis()
        );
    }
    Ok((rows, diagnostics))
}

/// Runs the full (phi x seed) grid and scores every configured selector.
pub fn noise_sweep_experiment(cfg: &ExperimentConfig) -> Result<SweepReport, ExperimentError> {
    let ctx = selector_context(cfg)?;
    let cells: Vec<(usize, f64, usize)> = cfg
        .sweep
        .phis
        .iter()
        .enumerate()
        .flat_map(|(pi, &phi)| (0..cfg.sweep.num_seeds).map(move |rep| (pi, phi, rep)))
        .collect();

    let results: Vec<Result<(Vec<SweepRow>, Vec<SweepDiagnosticRow>), ExperimentError>> = cells
        .par_iter()
        .map(|&(pi, phi, rep)| {
            let seed = cell_seed(cfg.seed, exp::SWEEP, pi, rep);
            let cell = build_cell(cfg, phi, seed).map_err(|e| ExperimentError::Cell {
                phi,
                rep,
                source: Box::new(e),
            })?;
            score_cell_methods(cfg, &cell, &ctx, phi, rep).map_err(|e| ExperimentError::Cell {
                phi,
                rep,
                source: Box::new(e),
            })
        })
        .collect();

    let mut rows = Vec::new();
    let mut sbv_diagnostics = Vec::new();
    for result in results {
        let (r, d) = result?;
        rows.extend(r);
        sbv_diagnostics.extend(d);
    }

    let mut aggregates = Vec::new();
    for &phi in &cfg.sweep.phis {
        for method in &cfg.selectors.methods {
            let cell_rows: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.phi == phi && &r.method == method)
                .collect();
            let n = cell_rows.len();
            let mean = cell_rows.iter().map(|r| r.top_k_mean).sum::<f64>() / n as f64;
            let var = cell_rows
                .iter()
                .map(|r| (r.top_k_mean - mean) * (r.top_k_mean - mean))
                .sum::<f64>()
                / n as f64;
            aggregates.push(MethodPhiAggregate {
                phi,
                method: method.clone(),
                mean_top_k_mean: mean,
                std_top_k_mean: var.sqrt(),
                mean_top_k_max: cell_rows.iter().map(|r| r.top_k_max).sum::<f64>() / n as f64,
                num_seeds: n,
            });
        }
    }
    Ok(SweepReport { rows, aggregates, sbv_diagnostics })
}

pub const SWEEP_HEADER: &str = "phi,seed,method,top3_mean,top3_max,spearman,flag";
pub const SWEEP_AGG_HEADER: &str = "phi,method,top3_mean_avg,top3_mean_std,top3_max_avg,seeds";
pub const SWEEP_DIAG_HEADER: &str =
    "phi,seed,candidate_id,chosen_spec,backup_mse,emsbe,constant_in_class,flag";

impl SweepReport {
    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let mut sweep = Table::new(SWEEP_HEADER);
        for r in &self.rows {
            sweep.push_row(&[
                format_float(r.phi),
                r.rep.to_string(),
                r.method.clone(),
                format_float(r.top_k_mean),
                format_float(r.top_k_max),
                format_float(r.spearman),
                r.flag.clone(),
            ]);
        }
        let mut agg = Table::new(SWEEP_AGG_HEADER);
        for a in &self.aggregates {
            agg.push_row(&[
                format_float(a.phi),
                a.method.clone(),
                format_float(a.mean_top_k_mean),
                format_float(a.std_top_k_mean),
                format_float(a.mean_top_k_max),
                a.num_seeds.to_string(),
            ]);
        }
        let mut diag = Table::new(SWEEP_DIAG_HEADER);
        for d in &self.sbv_diagnostics {
            diag.push_row(&[
                format_float(d.phi),
                d.rep.to_string(),
                d.diag.candidate_id.clone(),
                d.diag.chosen_spec.as_ref().map(|s| s.describe()).unwrap_or_default(),
                format_float(d.diag.validation_backup_mse),
                format_float(d.diag.validation_emsbe),
                d.diag.constant_in_class.to_string(),
                if d.diag.failed {
                    "failed".into()
                } else if d.diag.backup_above_emsbe {
                    "backup_above_emsbe".to_string()
                } else {
                    String::new()
                },
            ]);
        }
        vec![("sweep.csv", sweep), ("sweep_aggregate.csv", agg), ("sbv_diagnostics.csv", diag)]
    }
}

// ---------------------------------------------------------------------------
// Error-band grouping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsbeBand {
    Low,
    Medium,
    High,
}

impl MsbeBand {
    pub fn as_str(&self) -> &'static str {
        match self {
            MsbeBand::Low => "low",
            MsbeBand::Medium => "medium",
            MsbeBand::High => "high",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupEntry {
    pub candidate_id: String,
    pub oracle_msbe: f64,
    pub band: MsbeBand,
    pub true_value: f64,
}

#[derive(Debug, Clone)]
pub struct GroupsCell {
    pub phi: f64,
    pub rep: usize,
    /// Oracle error of the zero function: the high-band cutoff.
    pub zero_threshold: f64,
    pub entries: Vec<GroupEntry>,
}

impl GroupsCell {
    pub fn band_min_return(&self, band: MsbeBand) -> Option<f64> {
        self.entries
            .iter()
            .filter(|e| e.band == band)
            .map(|e| e.true_value)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.min(v))))
    }
}

pub struct GroupsReport {
    pub cells: Vec<GroupsCell>,
}

/// Assigns bands: above the zero-function threshold is high; the remainder
/// splits at the lower tercile of log error (low = smallest third).
fn assign_bands(msbes: &[f64], zero_threshold: f64) -> Vec<MsbeBand> {
    let mut sub_zero_logs: Vec<f64> = msbes
        .iter()
        .filter(|&&m| m <= zero_threshold)
        .map(|&m| m.max(1e-300).ln())
        .collect();
    sub_zero_logs.sort_by(f64::total_cmp);
    let boundary = if sub_zero_logs.is_empty() {
        f64::NEG_INFINITY
    } else {
        sub_zero_logs[(sub_zero_logs.len() - 1) / 3]
    };
    msbes
        .iter()
        .map(|&m| {
            if m > zero_threshold {
                MsbeBand::High
            } else if m.max(1e-300).ln() <= boundary {
                MsbeBand::Low
            } else {
                MsbeBand::Medium
            }
        })
        .collect()
}

/// Scores every candidate with the KNN error oracle at one noise level and
/// groups them into error bands.
pub fn msbe_group_experiment(
    cfg: &ExperimentConfig,
    phi: f64,
    num_seeds: usize,
) -> Result<GroupsReport, ExperimentError> {
    let cells: Vec<Result<GroupsCell, ExperimentError>> = (0..num_seeds)
        .into_par_iter()
        .map(|rep| {
            let started = std::time::Instant::now();
            let seed = cell_seed(cfg.seed, exp::GROUPS, 0, rep);
            let cell = build_cell(cfg, phi, seed).map_err(|e| ExperimentError::Cell {
                phi,
                rep,
                source: Box::new(e),
            })?;
            let oracle = toy::KnnOracle::new(
                &cell.toy_cfg,
                cfg.env.gamma_train,
                derive_seed(seed, &[tags::ORACLE]),
            );
            let zero_threshold = oracle.msbe(&crate::value::QFunction::zero());
            let msbes: Vec<f64> =
                cell.candidates.iter().map(|c| oracle.msbe(&c.q)).collect();
            let bands = assign_bands(&msbes, zero_threshold);
            let entries = cell
                .candidates
                .iter()
                .zip(msbes.iter())
                .zip(bands.iter())
                .map(|((c, &m), &band)| GroupEntry {
                    candidate_id: c.id.clone(),
                    oracle_msbe: m,
                    band,
                    true_value: cell
                        .truth
                        .iter()
                        .find(|t| t.candidate_id == c.id)
                        .map(|t| t.value)
                        .unwrap_or(f64::NAN),
                })
                .collect();
            log::info!(
                "groups phi={phi} seed={rep} elapsed_ms={}",
                started.elapsed().as_millis()
            );
            Ok(GroupsCell { phi, rep, zero_threshold, entries })
        })
        .collect();
    let cells = cells.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(GroupsReport { cells })
}

pub const GROUPS_HEADER: &str = "phi,seed,candidate_id,oracle_msbe,band,true_value";
pub const GROUPS_BANDS_HEADER: &str = "phi,seed,band,count,min_return,max_return";

impl GroupsReport {
    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let mut rows = Table::new(GROUPS_HEADER);
        let mut bands = Table::new(GROUPS_BANDS_HEADER);
        for cell in &self.cells {
            for e in &cell.entries {
                rows.push_row(&[
                    format_float(cell.phi),
                    cell.rep.to_string(),
                    e.candidate_id.clone(),
                    format_float(e.oracle_msbe),
                    e.band.as_str().to_string(),
                    format_float(e.true_value),
                ]);
            }
            for band in [MsbeBand::Low, MsbeBand::Medium, MsbeBand::High] {
                let values: Vec<f64> = cell
                    .entries
                    .iter()
                    .filter(|e| e.band == band)
                    .map(|e| e.true_value)
                    .collect();
                if values.is_empty() {
                    continue;
                }
                bands.push_row(&[
                    format_float(cell.phi),
                    cell.rep.to_string(),
                    band.as_str().to_string(),
                    values.len().to_string(),
                    format_float(values.iter().cloned().fold(f64::INFINITY, f64::min)),
                    format_float(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)),
                ]);
            }
        }
        vec![("groups.csv", rows), ("groups_bands.csv", bands)]
    }
}

// ---------------------------------------------------------------------------
// Backup partition ablation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub phi: f64,
    pub rep: usize,
    pub candidate_id: String,
    pub same_train_mse: f64,
    pub separate_half_mse: f64,
}

pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Fraction of (candidate, seed) cells where fitting the backup on the
    /// full training split beats or ties the separate-half arm.
    pub fn same_train_win_fraction(&self) -> f64 {
        let wins = self
            .rows
            .iter()
            .filter(|r| r.same_train_mse <= r.separate_half_mse)
            .count();
        wins as f64 / self.rows.len() as f64
    }
}

/// Compares backup-regression validation error when fitting on the shared
/// training split versus a disjoint half of it.
pub fn split_ablation_experiment(
    cfg: &ExperimentConfig,
    num_seeds: usize,
) -> Result<AblationReport, ExperimentError> {
    let ctx = selector_context(cfg)?;
    let phi = cfg.env.phi;
    let per_cell: Vec<Result<Vec<AblationRow>, ExperimentError>> = (0..num_seeds)
        .into_par_iter()
        .map(|rep| {
            let started = std::time::Instant::now();
            let seed = cell_seed(cfg.seed, exp::ABLATE, 0, rep);
            let cell = build_cell(cfg, phi, seed).map_err(|e| ExperimentError::Cell {
                phi,
                rep,
                source: Box::new(e),
            })?;
            let same = sbv_rank(
                &cell.candidates,
                &cell.split,
                &ctx.sbv_specs,
                ctx.gamma_train,
                selectors::BackupData::SameTrain,
            )?;
            let half = sbv_rank(
                &cell.candidates,
                &cell.split,
                &ctx.sbv_specs,
                ctx.gamma_train,
                selectors::BackupData::SeparateHalf {
                    seed: derive_seed(seed, &[tags::BACKUP_SPLIT]),
                },
            )?;
            let rows = same
                .diagnostics
                .iter()
                .map(|d| {
                    let other = half
                        .diagnostics
                        .iter()
                        .find(|h| h.candidate_id == d.candidate_id)
                        .expect("both arms rank the same candidates");
                    AblationRow {
                        phi,
                        rep,
                        candidate_id: d.candidate_id.clone(),
                        same_train_mse: d.validation_backup_mse,
                        separate_half_mse: other.validation_backup_mse,
                    }
                })
                .collect();
            log::info!(
                "ablate phi={phi} seed={rep} elapsed_ms={}",
                started.elapsed().as_millis()
            );
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for cell in per_cell {
        rows.extend(cell?);
    }
    Ok(AblationReport { rows })
}

pub const ABLATE_HEADER: &str = "phi,seed,candidate_id,same_train_mse,separate_half_mse";

impl AblationReport {
    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let mut table = Table::new(ABLATE_HEADER);
        for r in &self.rows {
            table.push_row(&[
                format_float(r.phi),
                r.rep.to_string(),
                r.candidate_id.clone(),
                format_float(r.same_train_mse),
                format_float(r.separate_half_mse),
            ]);
        }
        vec![("ablate.csv", table)]
    }
}

// ---------------------------------------------------------------------------
// FQE backend sensitivity
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Poly,
    Forest,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Poly => "poly",
            Family::Forest => "forest",
        }
    }

    fn index(&self) -> usize {
        match self {
            Family::Poly => 0,
            Family::Forest => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub rep: usize,
    pub backend: Family,
    pub top_k_mean: f64,
    pub top_candidate: String,
    pub top_family: Family,
}

#[derive(Debug, Clone)]
pub struct SensitivityArm {
    pub backend: Family,
    pub mean_top_k: f64,
    pub std_error: f64,
    pub match_count: usize,
    pub seeds: usize,
    /// How often this backend's top-ranked candidate came from each
    /// family across seeds, indexed [poly, forest].
    pub top_family_counts: [usize; 2],
}

pub struct SensitivityReport {
    pub rows: Vec<SensitivityRow>,
    pub arms: [SensitivityArm; 2],
}

impl SensitivityReport {
    pub fn match_count(&self) -> usize {
        self.arms.iter().map(|a| a.match_count).sum()
    }

    pub fn cross_count(&self) -> usize {
        self.rows.len() - self.match_count()
    }

    /// Gap between the two backends' mean top-k truth, in pooled standard
    /// errors.
    pub fn separation_in_se(&self) -> f64 {
        let gap = (self.arms[0].mean_top_k - self.arms[1].mean_top_k).abs();
        let pooled =
            (self.arms[0].std_error.powi(2) + self.arms[1].std_error.powi(2)).sqrt();
        if pooled > 0.0 {
            gap / pooled
        } else if gap > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

fn family_of(id: &str) -> Family {
    if id.starts_with("poly") {
        Family::Poly
    } else {
        Family::Forest
    }
}

/// Trains one candidate family per regressor class, evaluates both FQE
/// backends on the pooled candidates, and reports each backend's preference
/// for its own family.
pub fn fqe_sensitivity_experiment(
    cfg: &ExperimentConfig,
    num_seeds: usize,
) -> Result<SensitivityReport, ExperimentError> {
    let phi = cfg.env.phi;
    let sens = &cfg.sensitivity;
    let gamma = cfg.env.gamma_train;
    let k = cfg.eval.top_k;

    let per_cell: Vec<Result<Vec<SensitivityRow>, ExperimentError>> = (0..num_seeds)
        .into_par_iter()
        .map(|rep| {
            let started = std::time::Instant::now();
            let seed = cell_seed(cfg.seed, exp::SENSITIVITY, 0, rep);
            let toy_cfg = ToyConfig::from_phi(
                phi,
                cfg.env.num_trajectories,
                cfg.env.horizon,
                derive_seed(seed, &[tags::DATASET]),
            )?;
            let dataset = generate_dataset(&toy_cfg, &Policy::uniform(toy::TOY_NUM_ACTIONS));
            let split = split_by_trajectory(
                &dataset,
                cfg.split.train_fraction,
                derive_seed(seed, &[tags::SPLIT]),
            )?;

            let mut parts = Vec::new();
            for &degree in &sens.poly_degrees {
                for &lambda in &sens.poly_lambdas {
                    let id = format!("poly-d{degree}-l{lambda}");
                    let spec = FqiSpec {
                        regressor: RegressorSpec::PolyRidge { degree, lambda },
                        iterations: cfg.candidates.fqi_iterations,
                        gamma,
                    };
                    let mut q = fqi_train(&spec, &split.train)?;
                    q.label = id.clone();
                    parts.push(Candidate::new(
                        id,
                        q,
                        CandidateMeta { algorithm: "fqi-poly".into(), ..CandidateMeta::default() },
                    ));
                }
            }
            for (gi, &n_min) in sens.forest_n_min.iter().enumerate() {
                for (gj, &m_try) in sens.forest_m_try.iter().enumerate() {
                    let id = format!("forest-n{n_min}-m{m_try}");
                    let spec = FqiSpec {
                        regressor: RegressorSpec::Forest {
                            num_trees: sens.forest_trees,
                            min_leaf: n_min,
                            m_try,
                            seed: derive_seed(seed, &[tags::CANDIDATES, gi as u64, gj as u64]),
                        },
                        iterations: cfg.candidates.fqi_iterations,
                        gamma,
                    };
                    let mut q = fqi_train(&spec, &split.train)?;
                    q.label = id.clone();
                    parts.push(Candidate::new(
                        id,
                        q,
                        CandidateMeta {
                            algorithm: "fqi-forest".into(),
                            ..CandidateMeta::default()
                        },
                    ));
                }
            }
            let candidates = assemble_candidates(parts)?;
            let truth = evaluate_truth(cfg, &toy_cfg, &candidates, seed);

            let backends = [
                (
                    Family::Poly,
                    RegressorSpec::PolyRidge {
                        degree: sens.fqe_poly_degree,
                        lambda: sens.fqe_poly_lambda,
                    },
                ),
                (
                    Family::Forest,
                    RegressorSpec::Forest {
                        num_trees: sens.fqe_forest_trees,
                        min_leaf: sens.fqe_forest_n_min,
                        m_try: sens.fqe_forest_m_try,
                        seed: derive_seed(seed, &[tags::CANDIDATES, 0xFE]),
                    },
                ),
            ];
            let mut rows = Vec::new();
            for (backend, regressor) in backends {
                let mut scores = Vec::new();
                for c in candidates.iter() {
                    let policy = evaluation_policy(c, toy::TOY_NUM_ACTIONS);
                    let mut s = selectors::fqe_evaluate(
                        &policy,
                        &split,
                        &regressor,
                        cfg.fqe.iterations,
                        gamma,
                    )?;
                    s.candidate_id = c.id.clone();
                    scores.push(s);
                }
                let ranking =
                    selectors::rank_scores("fqe", scores, ScoreDirection::HigherIsBetter);
                let (top_mean, _) = metrics::top_k_metrics(&ranking, &truth, k)?;
                let top_candidate = ranking.top().candidate_id.clone();
                let top_family = family_of(&top_candidate);
                rows.push(SensitivityRow {
                    rep,
                    backend,
                    top_k_mean: top_mean,
                    top_candidate,
                    top_family,
                });
            }
            log::info!(
                "fqe-sensitivity phi={phi} seed={rep} elapsed_ms={}",
                started.elapsed().as_millis()
            );
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for cell in per_cell {
        rows.extend(cell?);
    }

    let arms = [Family::Poly, Family::Forest].map(|backend| {
        let arm_rows: Vec<&SensitivityRow> =
            rows.iter().filter(|r| r.backend == backend).collect();
        let n = arm_rows.len();
        let mean = arm_rows.iter().map(|r| r.top_k_mean).sum::<f64>() / n as f64;
        let var = arm_rows
            .iter()
            .map(|r| (r.top_k_mean - mean) * (r.top_k_mean - mean))
            .sum::<f64>()
            / (n.saturating_sub(1)).max(1) as f64;
        let match_count = arm_rows.iter().filter(|r| r.top_family == backend).count();
        let mut counts = [0usize; 2];
        for r in &arm_rows {
            counts[r.top_family.index()] += 1;
        }
        SensitivityArm {
            backend,
            mean_top_k: mean,
            std_error: (var / n as f64).sqrt(),
            match_count,
            seeds: n,
            top_family_counts: counts,
        }
    });

    Ok(SensitivityReport { rows, arms })
}

pub const SENSITIVITY_HEADER: &str = "seed,backend,top3_mean,top_candidate,top_family,match";
pub const SENSITIVITY_SUMMARY_HEADER: &str =
    "backend,mean_top3,se_top3,matches,seeds,top_poly,top_forest";

impl SensitivityReport {
    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let mut table = Table::new(SENSITIVITY_HEADER);
        for r in &self.rows {
            table.push_row(&[
                r.rep.to_string(),
                r.backend.as_str().to_string(),
                format_float(r.top_k_mean),
                r.top_candidate.clone(),
                r.top_family.as_str().to_string(),
                (r.top_family == r.backend).to_string(),
            ]);
        }
        let mut summary = Table::new(SENSITIVITY_SUMMARY_HEADER);
        for arm in &self.arms {
            summary.push_row(&[
                arm.backend.as_str().to_string(),
                format_float(arm.mean_top_k),
                format_float(arm.std_error),
                arm.match_count.to_string(),
                arm.seeds.to_string(),
                arm.top_family_counts[0].to_string(),
                arm.top_family_counts[1].to_string(),
            ]);
        }
        vec![("sensitivity.csv", table), ("sensitivity_summary.csv", summary)]
    }
}
