//! Round-by-round feedback-loop simulation.
//!
//! Each round: split the current profiles, train the base recommender on the
//! training part, build long candidate lists, produce final lists with the
//! configured pipeline, evaluate, draw clicks and feed them back.

mod clicks;
mod config;
mod rundir;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use clicks::{
    acceptance_probability, seed, simulate_clicks, simulate_clicks_where, ClickOutcome, CLICK_STREAM,
    SPLIT_STREAM, TRAIN_STREAM,
};
pub use config::{Pipeline, SimConfig};
pub use rundir::{
    read_clicks, read_rounds_csv, read_rounds_jsonl, read_targets, ClickRecord, RunDir, TargetRecord,
    CLICKS_FILE, CONFIG_FILE, ERROR_FILE, LEDGER_FILE, MODEL_FILE, ROUNDS_CSV, ROUNDS_JSONL, TARGETS_FILE,
};

use crate::dataset::{self, ClickApplyReport, DatasetError, InteractionStore, ItemId, Source, SplitPair, UserId};
use crate::metrics::{self, ExposureLedger, MetricsError, RoundReport};
use crate::mf::{self, FactorModel, MfError, TrainReport};
use crate::rerank::{self, DiscrepancyBreakdown, RerankError, TargetMode, TargetVector};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Mf(#[from] MfError),
    #[error(transparent)]
    Rerank(#[from] RerankError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} already contains a run; pass force to overwrite")]
    RunDirExists(PathBuf),
    #[error("corrupt run directory: {0}")]
    Corrupt(String),
    #[error("all {0} rounds already completed")]
    Finished(u32),
    #[error("round {round}: {source}")]
    Round {
        round: u32,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.to_owned(),
            source,
        }
    }

    /// Round number attached to the error, if any.
    pub fn round(&self) -> Option<u32> {
        match self {
            SimError::Round { round, .. } => Some(*round),
            _ => None,
        }
    }
}

/// Everything produced by one round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    pub report: RoundReport,
    pub long_lists: Vec<Vec<ItemId>>,
    pub final_lists: Vec<Vec<ItemId>>,
    pub static_targets: TargetVector,
    /// Targets the reranker used; static targets for the plain pipeline.
    pub targets: TargetVector,
    pub discrepancy: DiscrepancyBreakdown,
    pub exposure: Vec<f64>,
    pub clicks: ClickOutcome,
    pub click_apply: ClickApplyReport,
    pub train_report: TrainReport,
}

/// In-memory simulation state; one call to [`Simulation::step`] per round.
pub struct Simulation<S: Scalar> {
    config: SimConfig,
    store: InteractionStore,
    frozen_test: Option<InteractionStore>,
    ledger: ExposureLedger<S>,
    warm: Option<FactorModel<S>>,
    completed: u32,
}

impl<S: Scalar> Simulation<S> {
    pub fn new(config: SimConfig, store: InteractionStore) -> Result<Self, SimError> {
        config.validate().map_err(SimError::Config)?;
        if store.is_empty() {
            return Err(DatasetError::Empty.into());
        }
        let frozen_test = if config.freeze_test_set {
            let pair = dataset::split(&store, config.split_ratio, seed(config.seed, 1, SPLIT_STREAM))?;
            Some(pair.test)
        } else {
            None
        };
        let m = store.m();
        Ok(Simulation {
            config,
            store,
            frozen_test,
            ledger: ExposureLedger::new(m),
            warm: None,
            completed: 0,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn store(&self) -> &InteractionStore {
        &self.store
    }

    pub fn ledger(&self) -> &ExposureLedger<S> {
        &self.ledger
    }

    pub fn warm_model(&self) -> Option<&FactorModel<S>> {
        self.warm.as_ref()
    }

    pub fn rounds_completed(&self) -> u32 {
        self.completed
    }

    pub fn is_finished(&self) -> bool {
        self.completed >= self.config.rounds
    }

    /// Restores state after `ledger.round_count()` completed rounds whose clicks are `clicks`.
    pub fn restore(
        &mut self,
        ledger: ExposureLedger<S>,
        clicks: &[ClickRecord],
        warm: Option<FactorModel<S>>,
    ) -> Result<(), SimError> {
        if ledger.round_count() == 0 {
            // nothing checkpointed yet; keep the fresh state
            return Ok(());
        }
        if ledger.m() != self.store.m() {
            return Err(SimError::Corrupt("ledger catalog size differs from dataset".into()));
        }
        let completed = ledger.round_count() as u32;
        if ledger.last_round().unwrap_or(0) != completed {
            return Err(SimError::Corrupt("ledger rounds are not contiguous".into()));
        }
        for round in 1..=completed {
            let pairs: Vec<(UserId, ItemId)> = clicks
                .iter()
                .filter(|c| c.round == round)
                .map(|c| (c.user, c.item))
                .collect();
            self.store.apply_clicks(&pairs, round)?;
        }
        self.ledger = ledger;
        self.warm = warm;
        self.completed = completed;
        Ok(())
    }

    /// Runs the next round.
    pub fn step(&mut self) -> Result<RoundOutput, SimError> {
        if self.is_finished() {
            return Err(SimError::Finished(self.config.rounds));
        }
        let round = self.completed + 1;
        let out = self.run_round(round).map_err(|e| SimError::Round {
            round,
            source: Box::new(e),
        })?;
        self.completed = round;
        Ok(out)
    }

    fn run_round(&mut self, round: u32) -> Result<RoundOutput, SimError> {
        let cfg = &self.config;
        let (k, m) = (cfg.k, self.store.m());

        let pair = match &self.frozen_test {
            Some(test) => SplitPair::with_frozen_test(&self.store, test),
            None => dataset::split(&self.store, cfg.split_ratio, seed(cfg.seed, round, SPLIT_STREAM))?,
        };

        let hp = cfg.mf_hyperparams(seed(cfg.seed, round, TRAIN_STREAM));
        let warm = if cfg.mf_warm_start { self.warm.take() } else { None };
        let (model, train_report) = mf::train_from::<S>(&pair.train, &hp, warm)?;
        if !train_report.loss_increases.is_empty() {
            log::debug!(
                "round {round}: training loss rose in epochs {:?}",
                train_report.loss_increases
            );
        }

        // train profile plus every simulated click, wherever the split put it
        let store = &self.store;
        let exclusions: Vec<HashSet<ItemId>> = (0..store.n() as UserId)
            .map(|u| {
                let mut ex: HashSet<ItemId> = pair.train.profile(u).keys().copied().collect();
                ex.extend(
                    store
                        .profile(u)
                        .iter()
                        .filter(|(_, e)| e.source == Source::Click)
                        .map(|(&i, _)| i),
                );
                ex
            })
            .collect();
        let long_lists = mf::long_lists(&model, cfg.l, |u| exclusions[u as usize].clone());
        if cfg.mf_warm_start {
            self.warm = Some(model);
        }

        let static_targets = rerank::static_targets(&long_lists, k, m)?;
        let rcfg = cfg.rerank_config();
        let (final_lists, targets) = match cfg.pipeline {
            Pipeline::Mf => (rerank::top_k(&long_lists, k), static_targets.clone()),
            Pipeline::MfDmStatic => {
                let out = rerank::rerank(&long_lists, &static_targets, &rcfg)?;
                (out.lists, static_targets.clone())
            }
            Pipeline::MfDmDynamic => {
                let active = long_lists.iter().filter(|l| !l.is_empty()).count();
                let eps = S::of(rcfg.epsilon());
                let dynamic = if rcfg.target_mode == TargetMode::DynamicCapped {
                    let caps = rerank::listing_caps(&long_lists, m, cfg.target_cap_fraction);
                    rerank::dynamic_targets_capped(&static_targets, &self.ledger, round, eps, &caps, active, k)?
                } else {
                    rerank::dynamic_targets(&static_targets, &self.ledger, round, rcfg.target_mode, eps, active, k)?
                };
                let out = rerank::rerank(&long_lists, &dynamic, &rcfg)?;
                (out.lists, dynamic)
            }
        };
        let discrepancy = rerank::discrepancy(&final_lists, &targets);

        let exposure = metrics::round_exposure::<S>(&final_lists, k, m);
        self.ledger.accumulate(round, exposure.clone())?;
        let (ndcg, _) = metrics::ndcg::<S>(&final_lists, &pair.test, k);
        let agg_div = metrics::aggregate_diversity::<S>(&final_lists, m);
        let cum_agg_div = metrics::cumulative_aggregate_diversity(&self.ledger, m);
        let ee = metrics::equality_of_exposure_over(&exposure, cfg.gini_population)?;
        let cum_ee = metrics::equality_of_exposure_over(self.ledger.cumulative(), cfg.gini_population)?;

        let store = &self.store;
        let clicks = simulate_clicks_where(
            &final_lists,
            cfg.alpha,
            seed(cfg.seed, round, CLICK_STREAM),
            |u, i| !store.contains(u, i),
        );
        let click_apply = self.store.apply_clicks(&clicks.pairs(), round)?;

        let report = RoundReport {
            round,
            ndcg: ndcg.as_f64(),
            agg_div: agg_div.as_f64(),
            cum_agg_div: cum_agg_div.as_f64(),
            ee: ee.as_f64(),
            cum_ee: cum_ee.as_f64(),
            discrepancy: discrepancy.total as f64,
            clicks: click_apply.added,
        };
        Ok(RoundOutput {
            report,
            long_lists,
            final_lists,
            static_targets,
            targets,
            discrepancy,
            exposure: exposure.iter().map(|x| x.as_f64()).collect(),
            clicks,
            click_apply,
            train_report,
        })
    }
}

/// Runs every remaining round in memory and returns the reports.
pub fn run_in_memory<S: Scalar>(
    config: SimConfig,
    store: InteractionStore,
) -> Result<Vec<RoundReport>, SimError> {
    let mut sim = Simulation::<S>::new(config, store)?;
    let mut reports = Vec::new();
    while !sim.is_finished() {
        reports.push(sim.step()?.report);
    }
    Ok(reports)
}

fn load_store(config: &SimConfig) -> Result<InteractionStore, SimError> {
    let (store, report) = dataset::load_dataset(&config.dataset, &config.load_options())?;
    log::info!(
        "loaded {}: {} users, {} items, {} interactions ({} duplicates dropped)",
        config.dataset.display(),
        report.users,
        report.items,
        report.interactions,
        report.duplicates_dropped
    );
    Ok(store)
}

fn drive<S: Scalar>(
    sim: &mut Simulation<S>,
    dir: &mut RunDir,
    mut on_round: impl FnMut(&RoundOutput),
) -> Result<Vec<RoundReport>, SimError> {
    let mut reports = Vec::new();
    while !sim.is_finished() {
        let out = match sim.step() {
            Ok(out) => out,
            Err(e) => {
                dir.record_error(&e);
                return Err(e);
            }
        };
        dir.record_round(&out, sim.store())?;
        dir.checkpoint(sim.ledger(), sim.warm_model())?;
        on_round(&out);
        reports.push(out.report);
    }
    Ok(reports)
}

/// Runs the configured simulation, writing the run directory at `config.output_dir`.
///
/// Refuses to touch an existing run unless `force` is set.
pub fn run_to_dir<S: Scalar>(
    config: &SimConfig,
    force: bool,
    on_round: impl FnMut(&RoundOutput),
) -> Result<Vec<RoundReport>, SimError> {
    config.validate().map_err(SimError::Config)?;
    let store = load_store(config)?;
    let mut sim = Simulation::<S>::new(config.clone(), store)?;
    let mut dir = RunDir::create(&config.output_dir, config, force)?;
    drive(&mut sim, &mut dir, on_round)
}

/// Continues a partially completed run from its last checkpoint. Returns the
/// reports of the rounds run now.
pub fn resume_dir<S: Scalar>(
    dir_path: &Path,
    on_round: impl FnMut(&RoundOutput),
) -> Result<Vec<RoundReport>, SimError> {
    let (mut dir, config, ledger, warm) = RunDir::reopen::<S>(dir_path)?;
    let store = load_store(&config)?;
    let clicks = read_clicks(&dir_path.join(CLICKS_FILE))?;
    let mut sim = Simulation::<S>::new(config, store)?;
    sim.restore(ledger, &clicks, warm)?;
    drive(&mut sim, &mut dir, on_round)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Interaction;

    /// Small synthetic catalog with a popularity skew.
    pub(crate) fn toy_store(n: usize, m: usize, per_user: usize) -> InteractionStore {
        let mut s = InteractionStore::new(n, m);
        for u in 0..n {
            for k in 0..per_user {
                let i = (u * 7 + k * k * 3 + k) % m;
                let i = if k % 3 == 0 { k % 5 } else { i };
                let _ = s.insert(Interaction::original(u as u32, i as u32, 1.0));
            }
        }
        s
    }

    fn cfg(pipeline: Pipeline) -> SimConfig {
        SimConfig {
            rounds: 3,
            k: 3,
            l: 8,
            pipeline,
            mf_factors: 4,
            mf_epochs: 3,
            seed: 5,
            ..SimConfig::default()
        }
    }

    #[test]
    fn single_round_mf_is_top_k() {
        let mut sim = Simulation::<f64>::new(SimConfig { rounds: 1, ..cfg(Pipeline::Mf) }, toy_store(12, 30, 8)).unwrap();
        let out = sim.step().unwrap();
        assert_eq!(out.final_lists, rerank::top_k(&out.long_lists, 3));
        assert!(sim.is_finished());
        assert!(matches!(sim.step(), Err(SimError::Finished(1))));
    }

    #[test]
    fn round_one_dynamic_equals_static() {
        let a = Simulation::<f64>::new(cfg(Pipeline::MfDmStatic), toy_store(12, 30, 8))
            .unwrap()
            .step()
            .unwrap();
        let b = Simulation::<f64>::new(cfg(Pipeline::MfDmDynamic), toy_store(12, 30, 8))
            .unwrap()
            .step()
            .unwrap();
        assert_eq!(a.final_lists, b.final_lists);
        assert_eq!(a.targets.targets, b.targets.targets);
    }

    #[test]
    fn profiles_grow_by_clicks_and_clicked_items_never_return() {
        let mut sim = Simulation::<f64>::new(SimConfig { rounds: 4, ..cfg(Pipeline::MfDmDynamic) }, toy_store(12, 30, 8)).unwrap();
        let mut clicked: HashSet<(u32, u32)> = HashSet::new();
        let mut size = sim.store().len();
        while !sim.is_finished() {
            let out = sim.step().unwrap();
            for (u, list) in out.long_lists.iter().enumerate() {
                for &i in list {
                    assert!(!clicked.contains(&(u as u32, i)));
                }
            }
            assert_eq!(sim.store().len(), size + out.report.clicks);
            size = sim.store().len();
            clicked.extend(out.clicks.pairs());
        }
        assert_eq!(sim.ledger().round_count(), 4);
    }

    #[test]
    fn degenerate_alpha_freezes_store() {
        let store = toy_store(10, 25, 6);
        let before: Vec<_> = store.interactions().collect();
        let mut sim = Simulation::<f64>::new(SimConfig { alpha: -50.0, ..cfg(Pipeline::MfDmStatic) }, store).unwrap();
        while !sim.is_finished() {
            assert_eq!(sim.step().unwrap().report.clicks, 0);
        }
        assert_eq!(before, sim.store().interactions().collect::<Vec<_>>());
    }

    #[test]
    fn in_memory_runs_are_deterministic() {
        let a = run_in_memory::<f64>(cfg(Pipeline::MfDmDynamic), toy_store(12, 30, 8)).unwrap();
        let b = run_in_memory::<f64>(cfg(Pipeline::MfDmDynamic), toy_store(12, 30, 8)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        for r in &a {
            for v in [r.ndcg, r.agg_div, r.cum_agg_div, r.ee, r.cum_ee] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn frozen_test_and_warm_start_run() {
        let c = SimConfig {
            freeze_test_set: true,
            mf_warm_start: true,
            target_mode: crate::rerank::TargetMode::DynamicLiteral,
            ..cfg(Pipeline::MfDmDynamic)
        };
        let reports = run_in_memory::<f32>(c, toy_store(12, 30, 8)).unwrap();
        assert_eq!(reports.len(), 3);
    }

    #[test]
    fn invalid_config_rejected() {
        let c = SimConfig { alpha: 0.5, ..cfg(Pipeline::Mf) };
        assert!(matches!(
            Simulation::<f64>::new(c, toy_store(3, 5, 2)),
            Err(SimError::Config(_))
        ));
    }
}
