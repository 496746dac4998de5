use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use exposim::dataset::{load_dataset, InteractionStore};
use exposim::metrics::{ExposureLedger, RoundReport};
use exposim::scalar::Scalar;
use exposim::sim::{
    read_rounds_csv, read_targets, resume_dir, run_to_dir, RoundOutput, RunDir, SimConfig, SimError, CONFIG_FILE,
    ROUNDS_CSV, TARGETS_FILE,
};

use crate::manifest::RunManifest;
use crate::settings::{config_hash, file_fingerprint, resolve};
use crate::{ConfigArgs, Precision};

/// Errors the user can fix by changing the invocation; they exit with 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            if matches!(sim, SimError::Config(_) | SimError::RunDirExists(_) | SimError::Finished(_)) {
                return 2;
            }
        }
    }
    1
}

pub fn load_config(args: &ConfigArgs) -> Result<SimConfig> {
    resolve(args.config.as_deref(), std::env::vars(), &args.sets).map_err(|e| usage(format!("{e:#}")))
}

fn progress(total: u32) -> impl FnMut(&RoundOutput) {
    move |out| {
        let r = &out.report;
        log::info!(
            "round {}/{total}: ndcg {:.4}, cum EE {:.4}, cum agg div {:.4}, discrepancy {}, clicks {}",
            r.round,
            r.ndcg,
            r.cum_ee,
            r.cum_agg_div,
            r.discrepancy,
            r.clicks
        );
    }
}

fn drive_with_manifest(
    dir: &Path,
    mut manifest: RunManifest,
    run: impl FnOnce(&mut dyn FnMut(&RoundOutput)) -> Result<Vec<RoundReport>, SimError>,
) -> Result<()> {
    let started = Instant::now();
    let base_time = manifest.wall_time;
    let total = manifest.rounds_total;
    let mut log_round = progress(total);
    let mut on_round = |out: &RoundOutput| {
        log_round(out);
        manifest.rounds_completed = out.report.round;
        manifest.wall_time = base_time + started.elapsed().as_secs_f64();
        if let Err(e) = manifest.write(dir) {
            log::warn!("manifest not updated: {e:#}");
        }
    };
    let reports = run(&mut on_round)?;
    if reports.is_empty() {
        log::info!("nothing to do: all {total} rounds already completed");
    } else {
        log::info!("finished in {:.1}s; results in {}", started.elapsed().as_secs_f64(), dir.display());
    }
    Ok(())
}

pub fn run(args: &ConfigArgs, force: bool, precision: Precision) -> Result<()> {
    let config = load_config(args)?;
    if !config.dataset.exists() {
        return Err(usage(format!("dataset not found: {}", config.dataset.display())));
    }
    if !force && config.output_dir.join(CONFIG_FILE).exists() {
        return Err(SimError::RunDirExists(config.output_dir.clone()).into());
    }
    let hash = config_hash(&config);
    let manifest = RunManifest {
        run_id: format!("{}-{}", config.pipeline, &hash[..12]),
        config_hash: hash,
        dataset_fingerprint: file_fingerprint(&config.dataset)?,
        precision: precision.as_str().to_owned(),
        rounds_completed: 0,
        rounds_total: config.rounds,
        wall_time: 0.0,
        exposim_version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    log::info!("run {} -> {}", manifest.run_id, config.output_dir.display());
    let dir = config.output_dir.clone();
    drive_with_manifest(&dir, manifest, |on_round| {
        match precision {
            Precision::F32 => run_to_dir::<f32>(&config, force, on_round),
            Precision::F64 => run_to_dir::<f64>(&config, force, on_round),
        }
    })
}

pub fn resume(dir: &Path) -> Result<()> {
    if !dir.join(CONFIG_FILE).exists() {
        return Err(usage(format!("{} is not a run directory", dir.display())));
    }
    let config = RunDir::read_config(dir)?;
    let fingerprint = file_fingerprint(&config.dataset).map_err(|e| usage(format!("{e:#}")))?;
    let manifest = match RunManifest::read(dir)? {
        Some(m) => {
            if m.dataset_fingerprint != fingerprint {
                return Err(usage(format!(
                    "dataset {} changed since the run started",
                    config.dataset.display()
                )));
            }
            m
        }
        None => {
            let hash = config_hash(&config);
            RunManifest {
                run_id: format!("{}-{}", config.pipeline, &hash[..12]),
                config_hash: hash,
                dataset_fingerprint: fingerprint,
                precision: Precision::F64.as_str().to_owned(),
                rounds_completed: 0,
                rounds_total: config.rounds,
                wall_time: 0.0,
                exposim_version: env!("CARGO_PKG_VERSION").to_owned(),
            }
        }
    };
    let precision = if manifest.precision == "f32" {
        Precision::F32
    } else {
        Precision::F64
    };
    log::info!("resuming {} in {}", manifest.run_id, dir.display());
    drive_with_manifest(dir, manifest, |on_round| {
        match precision {
            Precision::F32 => resume_dir::<f32>(dir, on_round),
            Precision::F64 => resume_dir::<f64>(dir, on_round),
        }
    })
}

/// Cartesian product of `key=v1,v2` axes, as lists of `key=value` settings.
pub fn sweep_grid(axes: &[String]) -> Result<Vec<Vec<String>>> {
    let mut grid: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        let (key, values) = axis
            .split_once('=')
            .ok_or_else(|| usage(format!("--sweep expects key=v1,v2,..., got `{axis}`")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(usage(format!("--sweep {key} has no values")));
        }
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut next = prefix.clone();
                    next.push(format!("{}={v}", key.trim()));
                    next
                })
            })
            .collect();
    }
    Ok(grid)
}

/// Directory name for one grid point, e.g. `pipeline-mf_T-50`.
pub fn sweep_label(point: &[String]) -> String {
    point
        .iter()
        .map(|kv| {
            kv.replacen('=', "-", 1)
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || "-+.".contains(c) { c } else { '_' })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join("_")
}

pub fn sweep(args: &ConfigArgs, axes: &[String], force: bool, jobs: usize, precision: Precision) -> Result<()> {
    let base = load_config(args)?;
    let grid = sweep_grid(axes)?;
    let mut planned = Vec::new();
    for point in &grid {
        let label = sweep_label(point);
        let out = base.output_dir.join(&label);
        let mut sets = args.sets.clone();
        sets.extend(point.iter().cloned());
        sets.push(format!("output_dir={}", toml_string(&out)));
        // fail fast on any invalid grid point before starting processes
        load_config(&ConfigArgs {
            config: args.config.clone(),
            sets: sets.clone(),
        })?;
        planned.push((label, sets));
    }
    let exe = std::env::current_exe().context("locating the exposim executable")?;
    let jobs = jobs.max(1);
    let mut running: Vec<(String, Child)> = Vec::new();
    let mut failed = Vec::new();
    let mut queue = planned.into_iter();
    log::info!("sweep of {} runs, {jobs} at a time", grid.len());
    loop {
        while running.len() < jobs {
            let Some((label, sets)) = queue.next() else { break };
            let mut cmd = Command::new(&exe);
            cmd.arg("run").arg("--precision").arg(precision.as_str());
            if let Some(c) = &args.config {
                cmd.arg("--config").arg(c);
            }
            for s in &sets {
                cmd.arg("--set").arg(s);
            }
            if force {
                cmd.arg("--force");
            }
            log::info!("starting {label}");
            running.push((label, cmd.spawn().context("spawning sweep run")?));
        }
        if running.is_empty() {
            break;
        }
        let mut k = 0;
        while k < running.len() {
            if let Some(status) = running[k].1.try_wait()? {
                let (label, _) = running.remove(k);
                if status.success() {
                    log::info!("finished {label}");
                } else {
                    log::error!("{label} failed ({status})");
                    failed.push(label);
                }
            } else {
                k += 1;
            }
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    if !failed.is_empty() {
        bail!("{} of {} sweep runs failed: {}", failed.len(), grid.len(), failed.join(", "));
    }
    Ok(())
}

fn toml_string(path: &Path) -> String {
    toml::Value::String(path.display().to_string()).to_string()
}

pub const COMPARE_HEADER: &str = "run,round,ndcg,agg_div,cum_agg_div,ee,cum_ee,discrepancy,clicks";
pub const SUMMARY_HEADER: &str = "run,rounds,final_cum_ee,final_cum_agg_div,mean_ndcg";

fn run_label(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Merged per-round table and summary over the rounds all runs completed.
pub fn compare_tables(runs: &[(String, Vec<RoundReport>)]) -> (String, String) {
    let common = runs.iter().map(|(_, r)| r.len()).min().unwrap_or(0);
    let mut merged = format!("{COMPARE_HEADER}\n");
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for (label, reports) in runs {
        let rows = &reports[..common];
        for r in rows {
            let _ = writeln!(merged, "{label},{}", r.csv_row());
        }
        if let Some(last) = rows.last() {
            let mean_ndcg = rows.iter().map(|r| r.ndcg).sum::<f64>() / rows.len() as f64;
            let _ = writeln!(
                summary,
                "{label},{common},{:.6},{:.6},{:.6}",
                last.cum_ee, last.cum_agg_div, mean_ndcg
            );
        }
    }
    (merged, summary)
}

pub fn compare(dirs: &[PathBuf], merged_out: Option<&Path>) -> Result<()> {
    let mut runs = Vec::new();
    for dir in dirs {
        let path = dir.join(ROUNDS_CSV);
        if !path.exists() {
            return Err(usage(format!("{} has no {ROUNDS_CSV}", dir.display())));
        }
        runs.push((run_label(dir), read_rounds_csv(&path)?));
    }
    let lens: Vec<usize> = runs.iter().map(|(_, r)| r.len()).collect();
    if lens.iter().any(|&n| n != lens[0]) {
        let common = lens.iter().min().copied().unwrap_or(0);
        log::warn!("runs have different lengths {lens:?}; comparing the first {common} rounds");
    }
    let (merged, summary) = compare_tables(&runs);
    if let Some(path) = merged_out {
        fs::write(path, merged).with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{summary}");
    Ok(())
}

fn raw_item_names(config: &SimConfig) -> Option<InteractionStore> {
    match load_dataset(&config.dataset, &config.load_options()) {
        Ok((store, _)) => Some(store),
        Err(e) => {
            log::warn!("raw item ids unavailable ({e}); showing internal ids");
            None
        }
    }
}

/// Text report for one round of a finished or partial run.
pub fn inspect_report<S: Scalar>(
    config: &SimConfig,
    ledger: &ExposureLedger<S>,
    targets: Option<&exposim::sim::TargetRecord>,
    round: u32,
    store: Option<&InteractionStore>,
) -> String {
    let name = |i: usize| match store.and_then(|s| s.item_ids().decode(i as u32)) {
        Some(raw) => format!("{i} ({raw})"),
        None => i.to_string(),
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "round {round} of {} (pipeline {}, K={}, L={})",
        ledger.round_count(),
        config.pipeline,
        config.k,
        config.l
    );
    match targets {
        Some(t) => {
            let listed: Vec<i64> = t.targets.iter().map(|x| x.1).collect();
            let total: i64 = listed.iter().sum();
            let static_total: i64 = t.static_targets.iter().map(|x| x.1).sum();
            let mut sorted = listed.clone();
            sorted.sort_unstable();
            let _ = writeln!(out, "\ntargets ({:?})", t.mode);
            let _ = writeln!(
                out,
                "  items {}  total {total}  static total {static_total}  min {}  median {}  max {}",
                listed.len(),
                sorted.first().unwrap_or(&0),
                sorted.get(sorted.len() / 2).unwrap_or(&0),
                sorted.last().unwrap_or(&0)
            );
            let static_map: BTreeMap<u32, i64> = t.static_targets.iter().copied().collect();
            let mut by_target = t.targets.clone();
            by_target.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let _ = writeln!(out, "  {:<16} {:>7} {:>7} {:>7}", "item", "target", "static", "degree");
            for &(i, c, d) in by_target.iter().take(10) {
                let s = static_map.get(&i).copied().unwrap_or(0);
                let _ = writeln!(out, "  {:<16} {c:>7} {s:>7} {d:>7}", name(i as usize));
            }
            let b = &t.discrepancy;
            let _ = writeln!(out, "\ndiscrepancy");
            let _ = writeln!(
                out,
                "  total {}  overflow units {}  shortfall units {}",
                b.total, b.overflow_units, b.shortfall_units
            );
            let _ = writeln!(
                out,
                "  items over {}  under {}  on target {}",
                b.items_over, b.items_under, b.items_on_target
            );
        }
        None => {
            let _ = writeln!(out, "\ntargets not recorded (dump_targets = false)");
        }
    }
    let cum: Vec<f64> = ledger.cumulative_through(round).iter().map(|x| x.as_f64()).collect();
    let mut order: Vec<usize> = (0..cum.len()).collect();
    order.sort_by(|&a, &b| cum[b].total_cmp(&cum[a]).then(a.cmp(&b)));
    let _ = writeln!(out, "\nmost exposed through round {round}");
    for &i in order.iter().take(10) {
        let _ = writeln!(out, "  {:<16} {:.6}", name(i), cum[i]);
    }
    let _ = writeln!(out, "\nleast exposed through round {round}");
    for &i in order.iter().rev().take(10) {
        let _ = writeln!(out, "  {:<16} {:.6}", name(i), cum[i]);
    }
    out
}

pub fn inspect(dir: &Path, round: Option<u32>) -> Result<()> {
    if !dir.join(CONFIG_FILE).exists() {
        return Err(usage(format!("{} is not a run directory", dir.display())));
    }
    let config = RunDir::read_config(dir)?;
    let ledger = RunDir::read_ledger::<f64>(dir).map_err(|e| usage(format!("no completed rounds: {e}")))?;
    let completed = ledger.round_count() as u32;
    let round = round.unwrap_or(completed);
    if round == 0 || round > completed {
        return Err(usage(format!("round {round} not available; {completed} rounds completed")));
    }
    let targets = if dir.join(TARGETS_FILE).exists() {
        read_targets(&dir.join(TARGETS_FILE))?.into_iter().find(|t| t.round == round)
    } else {
        None
    };
    let store = raw_item_names(&config);
    print!("{}", inspect_report(&config, &ledger, targets.as_ref(), round, store.as_ref()));
    Ok(())
}

pub fn dataset_stats_report(store: &InteractionStore, duplicates: usize) -> String {
    let n = store.n();
    let m = store.m();
    let mut lens: Vec<usize> = (0..n as u32).map(|u| store.profile_len(u)).collect();
    lens.sort_unstable();
    let mut pop = vec![0usize; m];
    for it in store.interactions() {
        pop[it.item as usize] += 1;
    }
    pop.sort_unstable_by(|a, b| b.cmp(a));
    let top_decile: usize = pop.iter().take(m.div_ceil(10)).sum();
    let total = store.len();
    let mut out = String::new();
    let _ = writeln!(out, "users: {n}");
    let _ = writeln!(out, "items: {m}");
    let _ = writeln!(out, "interactions: {total}");
    let _ = writeln!(out, "duplicates_dropped: {duplicates}");
    let _ = writeln!(out, "density: {:.6}", total as f64 / (n as f64 * m as f64));
    let _ = writeln!(
        out,
        "profile_length: min {} median {} mean {:.2} max {}",
        lens.first().unwrap_or(&0),
        lens.get(n / 2).unwrap_or(&0),
        total as f64 / n as f64,
        lens.last().unwrap_or(&0)
    );
    let _ = writeln!(
        out,
        "item_popularity: max {} items_with_one_interaction {}",
        pop.first().unwrap_or(&0),
        pop.iter().filter(|&&c| c == 1).count()
    );
    let _ = writeln!(out, "top_10pct_items_share: {:.4}", top_decile as f64 / total as f64);
    out
}

pub fn dataset_stats(args: &ConfigArgs) -> Result<()> {
    let config = load_config(args)?;
    let (store, report) = load_dataset(&config.dataset, &config.load_options()).map_err(|e| {
        if config.dataset.exists() {
            anyhow!(e)
        } else {
            usage(format!("dataset not found: {}", config.dataset.display()))
        }
    })?;
    print!("{}", dataset_stats_report(&store, report.duplicates_dropped));
    Ok(())
}
