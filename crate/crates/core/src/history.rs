//! Per-step search log and per-epoch α snapshots, with CSV export.

use crate::discretize::DiscreteArchitecture;
use crate::error::{Error, Result};
use crate::space::{ActivatedAlpha, CellLayout, OpKind};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub trace: f64,
    pub fimt: f64,
    /// Threshold the schedule decision was taken against.
    pub threshold: f64,
    pub fired: bool,
    pub train_loss: f64,
    // The fields below are only filled on steps followed by an architecture step.
    pub c: Option<f64>,
    pub val_loss: Option<f64>,
    pub penalty: Option<f64>,
    pub distance: Option<f64>,
    /// Range of activated α after this step.
    pub act_min: f64,
    pub act_max: f64,
    /// Entries not pruned.
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSnapshot {
    pub epoch: usize,
    pub raw: Vec<Vec<f64>>,
    pub activated: ActivatedAlpha,
    pub active: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchHistory {
    pub steps: Vec<StepRecord>,
    pub snapshots: Vec<AlphaSnapshot>,
    /// `(epoch, architecture)` checkpoints emitted by extended runs.
    pub checkpoints: Vec<(usize, DiscreteArchitecture)>,
}

pub const HISTORY_HEADER: &str =
    "step,epoch,trace,fimt,threshold,fired,c,train_loss,val_loss,penalty,distance,act_min,act_max,active";

pub const SNAPSHOT_HEADER: &str = "cell_type,state,source,op,raw,activated,active";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Parse { what, detail: detail.into() }
}

fn num<T: std::str::FromStr>(s: &str, what: &'static str) -> Result<T> {
    s.parse().map_err(|_| parse_err(what, format!("bad number {s:?}")))
}

fn opt_num(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(s, "history").map(Some)
    }
}

impl SearchHistory {
    pub fn alpha_steps(&self) -> usize {
        self.steps.iter().filter(|r| r.fired).count()
    }

    pub fn history_csv(&self) -> String {
        let mut out = String::with_capacity(self.steps.len() * 96);
        out.push_str(HISTORY_HEADER);
        out.push('\n');
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.epoch,
                r.trace,
                r.fimt,
                r.threshold,
                u8::from(r.fired),
                opt(r.c),
                r.train_loss,
                opt(r.val_loss),
                opt(r.penalty),
                opt(r.distance),
                r.act_min,
                r.act_max,
                r.active
            );
        }
        out
    }

    pub fn parse_history_csv(text: &str) -> Result<Vec<StepRecord>> {
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(parse_err("history", "missing or unexpected header"));
        }
        let mut out: Vec<StepRecord> = Vec::new();
        for (n, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 14 {
                return Err(parse_err("history", format!("line {} has {} fields", n + 2, f.len())));
            }
            let rec = StepRecord {
                step: num(f[0], "history")?,
                epoch: num(f[1], "history")?,
                trace: num(f[2], "history")?,
                fimt: num(f[3], "history")?,
                threshold: num(f[4], "history")?,
                fired: match f[5] {
                    "0" => false,
                    "1" => true,
                    other => return Err(parse_err("history", format!("fired flag {other:?}"))),
                },
                c: opt_num(f[6])?,
                train_loss: num(f[7], "history")?,
                val_loss: opt_num(f[8])?,
                penalty: opt_num(f[9])?,
                distance: opt_num(f[10])?,
                act_min: num(f[11], "history")?,
                act_max: num(f[12], "history")?,
                active: num(f[13], "history")?,
            };
            if out.last().is_some_and(|p| p.step >= rec.step) {
                return Err(parse_err("history", format!("steps out of order at line {}", n + 2)));
            }
            out.push(rec);
        }
        Ok(out)
    }

    pub fn snapshot_csv(s: &AlphaSnapshot) -> String {
        let l = &s.activated.layout;
        let mut out = String::new();
        out.push_str(SNAPSHOT_HEADER);
        out.push('\n');
        for c in 0..s.raw.len() {
            for (state, source) in l.edges() {
                for (p, op) in l.ops.iter().enumerate() {
                    let k = l.flat_index(state, source, p);
                    let _ = writeln!(
                        out,
                        "{c},{state},{source},{op},{},{},{}",
                        s.raw[c][k],
                        s.activated.cells[c][k],
                        u8::from(s.active[c][k])
                    );
                }
            }
        }
        out
    }

    /// Parses a snapshot written by [`SearchHistory::snapshot_csv`]; the
    /// layout is recovered from the rows.
    pub fn parse_snapshot_csv(epoch: usize, text: &str) -> Result<AlphaSnapshot> {
        let mut lines = text.lines();
        if lines.next() != Some(SNAPSHOT_HEADER) {
            return Err(parse_err("snapshot", "missing or unexpected header"));
        }
        let mut rows = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(parse_err("snapshot", format!("row {line:?}")));
            }
            let op: OpKind = f[3].parse()?;
            let active = match f[6] {
                "0" => false,
                "1" => true,
                other => return Err(parse_err("snapshot", format!("active flag {other:?}"))),
            };
            rows.push((
                num::<usize>(f[0], "snapshot")?,
                num::<usize>(f[1], "snapshot")?,
                num::<usize>(f[2], "snapshot")?,
                op,
                num::<f64>(f[4], "snapshot")?,
                num::<f64>(f[5], "snapshot")?,
                active,
            ));
        }
        if rows.is_empty() {
            return Err(parse_err("snapshot", "no rows"));
        }
        let cell_types = rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
        let num_states = rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
        let num_inputs = rows.iter().filter(|r| r.1 == 0).map(|r| r.2).max().unwrap_or(0) + 1;
        let mut ops: Vec<OpKind> = Vec::new();
        for r in rows.iter().take_while(|r| r.0 == 0 && r.1 == 0 && r.2 == 0) {
            ops.push(r.3);
        }
        let layout = CellLayout::new(num_inputs, num_states, ops);
        if rows.len() != layout.len() * cell_types {
            return Err(parse_err("snapshot", format!("{} rows for layout of {}", rows.len(), layout.len())));
        }
        let mut raw = vec![vec![0.0; layout.len()]; cell_types];
        let mut act = vec![vec![0.0; layout.len()]; cell_types];
        let mut mask = vec![vec![true; layout.len()]; cell_types];
        for (i, r) in rows.iter().enumerate() {
            let (c, k) = (i / layout.len(), i % layout.len());
            let p = k % layout.num_ops();
            let in_order = r.1 < num_states
                && r.2 < layout.sources(r.1)
                && layout.flat_index(r.1, r.2, p) == k
                && layout.ops[p] == r.3;
            if r.0 != c || !in_order {
                return Err(parse_err("snapshot", format!("row {i} out of layout order")));
            }
            raw[c][k] = r.4;
            act[c][k] = r.5;
            mask[c][k] = r.6;
        }
        Ok(AlphaSnapshot { epoch, raw, activated: ActivatedAlpha::new(layout, act)?, active: mask })
    }

    pub fn snapshot_file_name(epoch: usize) -> String {
        format!("epoch_{epoch:04}.csv")
    }

    /// Writes `history.csv` and `alpha/epoch_NNNN.csv` under `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("alpha"))?;
        std::fs::write(dir.join("history.csv"), self.history_csv())?;
        for s in &self.snapshots {
            std::fs::write(dir.join("alpha").join(Self::snapshot_file_name(s.epoch)), Self::snapshot_csv(s))?;
        }
        Ok(())
    }

    /// Reads back what [`SearchHistory::write_dir`] wrote (checkpoints are not part of it).
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let steps = Self::parse_history_csv(&std::fs::read_to_string(dir.join("history.csv"))?)?;
        let mut names: Vec<String> = match std::fs::read_dir(dir.join("alpha")) {
            Ok(rd) => rd
                .filter_map(|e| e.ok())
                .map(|e| e.file_name().to_string_lossy().into_owned())
                .filter(|n| n.starts_with("epoch_") && n.ends_with(".csv"))
                .collect(),
            Err(_) => Vec::new(),
        };
        names.sort();
        let mut snapshots = Vec::with_capacity(names.len());
        for n in names {
            let epoch: usize = num(&n["epoch_".len()..n.len() - 4], "snapshot name")?;
            let text = std::fs::read_to_string(dir.join("alpha").join(&n))?;
            snapshots.push(Self::parse_snapshot_csv(epoch, &text)?);
        }
        Ok(Self { steps, snapshots, checkpoints: Vec::new() })
    }
}
