//! On-disk run directory.
//!
//! ```text
//! config.json     resolved configuration
//! rounds.csv      one RoundReport per round
//! rounds.jsonl    same rows as JSON lines
//! clicks.jsonl    every accepted click: round, user, item, rank (+ raw ids)
//! targets.jsonl   per-round targets, achieved degrees, discrepancy (optional)
//! ledger.bin      exposure ledger checkpoint, rewritten after each round
//! model.json      factor model checkpoint (warm-start runs only)
//! error.txt       present only if a round failed
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{RoundOutput, SimConfig, SimError};
use crate::dataset::{InteractionStore, ItemId, UserId};
use crate::metrics::{ExposureLedger, RoundReport, ROUND_CSV_HEADER};
use crate::mf::FactorModel;
use crate::rerank::{DiscrepancyBreakdown, TargetMode};
use crate::scalar::Scalar;

pub const CONFIG_FILE: &str = "config.json";
pub const ROUNDS_CSV: &str = "rounds.csv";
pub const ROUNDS_JSONL: &str = "rounds.jsonl";
pub const CLICKS_FILE: &str = "clicks.jsonl";
pub const TARGETS_FILE: &str = "targets.jsonl";
pub const LEDGER_FILE: &str = "ledger.bin";
pub const MODEL_FILE: &str = "model.json";
pub const ERROR_FILE: &str = "error.txt";

const RUN_FILES: [&str; 8] = [
    CONFIG_FILE,
    ROUNDS_CSV,
    ROUNDS_JSONL,
    CLICKS_FILE,
    TARGETS_FILE,
    LEDGER_FILE,
    MODEL_FILE,
    ERROR_FILE,
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub round: u32,
    pub user: UserId,
    pub item: ItemId,
    pub rank: u32,
    pub raw_user: String,
    pub raw_item: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub round: u32,
    pub mode: TargetMode,
    /// `(item, target)` for every listed item under the equal split.
    pub static_targets: Vec<(ItemId, i64)>,
    /// `(item, target, degree)` for every listed or recommended item.
    pub targets: Vec<(ItemId, i64, i64)>,
    pub discrepancy: DiscrepancyBreakdown,
}

pub struct RunDir {
    path: PathBuf,
    rounds_csv: BufWriter<File>,
    rounds_jsonl: BufWriter<File>,
    clicks: BufWriter<File>,
    targets: Option<BufWriter<File>>,
}

fn append(path: &Path) -> Result<BufWriter<File>, SimError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| SimError::io(path, e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), SimError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| SimError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SimError::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>, SimError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| SimError::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SimError::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SimError> {
    read_lines(path)?
        .iter()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            serde_json::from_str(l)
                .map_err(|e| SimError::Corrupt(format!("{} line {}: {e}", path.display(), k + 1)))
        })
        .collect()
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundReport>, SimError> {
    let lines = read_lines(path)?;
    match lines.first() {
        Some(h) if h == ROUND_CSV_HEADER => {}
        _ => return Err(SimError::Corrupt(format!("{}: bad header", path.display()))),
    }
    lines[1..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            RoundReport::parse_csv_row(l)
                .ok_or_else(|| SimError::Corrupt(format!("{}: bad row {l:?}", path.display())))
        })
        .collect()
}

pub fn read_rounds_jsonl(path: &Path) -> Result<Vec<RoundReport>, SimError> {
    read_jsonl(path)
}

pub fn read_clicks(path: &Path) -> Result<Vec<ClickRecord>, SimError> {
    read_jsonl(path)
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetRecord>, SimError> {
    read_jsonl(path)
}

fn to_json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serializes")
}

/// A reopened run: directory, config, checkpointed ledger and (warm start) model.
pub type Reopened<S> = (RunDir, SimConfig, ExposureLedger<S>, Option<FactorModel<S>>);

impl RunDir {
    pub fn create(path: &Path, config: &SimConfig, force: bool) -> Result<Self, SimError> {
        let occupied = RUN_FILES.iter().any(|f| path.join(f).exists());
        if occupied && !force {
            return Err(SimError::RunDirExists(path.to_owned()));
        }
        fs::create_dir_all(path).map_err(|e| SimError::io(path, e))?;
        for f in RUN_FILES {
            let p = path.join(f);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| SimError::io(&p, e))?;
            }
        }
        let cfg_json = serde_json::to_string_pretty(config).expect("config serializes");
        write_atomic(&path.join(CONFIG_FILE), cfg_json.as_bytes())?;
        let mut dir = Self::open_writers(path, config.dump_targets)?;
        writeln!(dir.rounds_csv, "{ROUND_CSV_HEADER}").map_err(|e| SimError::io(path, e))?;
        dir.flush()?;
        Ok(dir)
    }

    fn open_writers(path: &Path, dump_targets: bool) -> Result<Self, SimError> {
        Ok(RunDir {
            path: path.to_owned(),
            rounds_csv: append(&path.join(ROUNDS_CSV))?,
            rounds_jsonl: append(&path.join(ROUNDS_JSONL))?,
            clicks: append(&path.join(CLICKS_FILE))?,
            targets: if dump_targets {
                Some(append(&path.join(TARGETS_FILE))?)
            } else {
                None
            },
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_config(path: &Path) -> Result<SimConfig, SimError> {
        let p = path.join(CONFIG_FILE);
        let text = fs::read_to_string(&p).map_err(|e| SimError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| SimError::Corrupt(format!("{}: {e}", p.display())))
    }

    pub fn read_ledger<S: Scalar>(path: &Path) -> Result<ExposureLedger<S>, SimError> {
        let p = path.join(LEDGER_FILE);
        let file = File::open(&p).map_err(|e| SimError::io(&p, e))?;
        ExposureLedger::read_from(BufReader::new(file)).map_err(|e| SimError::io(&p, e))
    }

    /// Reopens a run for resumption. Rows written after the last checkpoint are dropped.
    pub fn reopen<S: Scalar>(path: &Path) -> Result<Reopened<S>, SimError> {
        let config = Self::read_config(path)?;
        let ledger = if path.join(LEDGER_FILE).exists() {
            Self::read_ledger::<S>(path)?
        } else {
            ExposureLedger::new(0)
        };
        let done = ledger.round_count() as u32;

        let keep = |round: u32| round <= done;
        let csv_path = path.join(ROUNDS_CSV);
        let rows: Vec<RoundReport> = read_rounds_csv(&csv_path)?.into_iter().filter(|r| keep(r.round)).collect();
        if rows.len() as u32 != done {
            return Err(SimError::Corrupt(format!(
                "{} has {} rows for {done} checkpointed rounds",
                ROUNDS_CSV,
                rows.len()
            )));
        }
        let mut csv = format!("{ROUND_CSV_HEADER}\n");
        for r in &rows {
            csv.push_str(&r.csv_row());
            csv.push('\n');
        }
        write_atomic(&csv_path, csv.as_bytes())?;
        let jsonl: String = rows.iter().map(|r| to_json_line(r) + "\n").collect();
        write_atomic(&path.join(ROUNDS_JSONL), jsonl.as_bytes())?;
        let clicks: String = read_clicks(&path.join(CLICKS_FILE))?
            .into_iter()
            .filter(|c| keep(c.round))
            .map(|c| to_json_line(&c) + "\n")
            .collect();
        write_atomic(&path.join(CLICKS_FILE), clicks.as_bytes())?;
        if config.dump_targets {
            let targets: String = read_targets(&path.join(TARGETS_FILE))?
                .into_iter()
                .filter(|t| keep(t.round))
                .map(|t| to_json_line(&t) + "\n")
                .collect();
            write_atomic(&path.join(TARGETS_FILE), targets.as_bytes())?;
        }
        let _ = fs::remove_file(path.join(ERROR_FILE));

        let model_path = path.join(MODEL_FILE);
        let warm = if config.mf_warm_start && model_path.exists() {
            let f = File::open(&model_path).map_err(|e| SimError::io(&model_path, e))?;
            Some(FactorModel::load_json(BufReader::new(f))?)
        } else {
            None
        };
        let dir = Self::open_writers(path, config.dump_targets)?;
        Ok((dir, config, ledger, warm))
    }

    fn flush(&mut self) -> Result<(), SimError> {
        let path = self.path.clone();
        let io = |e| SimError::io(&path, e);
        self.rounds_csv.flush().map_err(io)?;
        self.rounds_jsonl.flush().map_err(io)?;
        self.clicks.flush().map_err(io)?;
        if let Some(t) = self.targets.as_mut() {
            t.flush().map_err(io)?;
        }
        Ok(())
    }

    pub fn record_round(&mut self, out: &RoundOutput, store: &InteractionStore) -> Result<(), SimError> {
        let path = self.path.clone();
        let io = |e| SimError::io(&path, e);
        let r = &out.report;
        writeln!(self.rounds_csv, "{}", r.csv_row()).map_err(io)?;
        writeln!(self.rounds_jsonl, "{}", to_json_line(r)).map_err(io)?;
        for &(user, item, rank) in &out.clicks.accepted {
            let rec = ClickRecord {
                round: r.round,
                user,
                item,
                rank,
                raw_user: store.user_ids().decode(user).unwrap_or_default().to_owned(),
                raw_item: store.item_ids().decode(item).unwrap_or_default().to_owned(),
            };
            writeln!(self.clicks, "{}", to_json_line(&rec)).map_err(io)?;
        }
        if let Some(t) = self.targets.as_mut() {
            let deg = crate::rerank::degrees(&out.final_lists, out.targets.targets.len());
            let rec = TargetRecord {
                round: r.round,
                mode: out.targets.mode,
                static_targets: out
                    .static_targets
                    .targets
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| out.static_targets.listed[*i])
                    .map(|(i, &c)| (i as ItemId, c))
                    .collect(),
                targets: out
                    .targets
                    .targets
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| out.targets.listed[*i] || deg[*i] > 0)
                    .map(|(i, &c)| (i as ItemId, c, deg[i]))
                    .collect(),
                discrepancy: out.discrepancy.clone(),
            };
            writeln!(t, "{}", to_json_line(&rec)).map_err(io)?;
        }
        self.flush()
    }

    pub fn checkpoint<S: Scalar>(
        &self,
        ledger: &ExposureLedger<S>,
        model: Option<&FactorModel<S>>,
    ) -> Result<(), SimError> {
        if let Some(model) = model {
            let mut buf = Vec::new();
            model.save_json(&mut buf)?;
            write_atomic(&self.path.join(MODEL_FILE), &buf)?;
        }
        let mut buf = Vec::new();
        ledger
            .write_to(&mut buf)
            .map_err(|e| SimError::io(&self.path, e))?;
        write_atomic(&self.path.join(LEDGER_FILE), &buf)
    }

    pub fn record_error(&mut self, err: &SimError) {
        let _ = self.flush();
        let text = match err.round() {
            Some(round) => format!("round {round}\n{err}\n"),
            None => format!("{err}\n"),
        };
        let _ = fs::write(self.path.join(ERROR_FILE), text);
    }
}
