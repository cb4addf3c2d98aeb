//! Gas accounting for L1 calls and L2 batch posting.
//!
//! Two modes:
//! - `Table` replays the calibration file exactly. A workload of `n` calls
//!   to one function is charged the row for the smallest call-count bucket
//!   covering `n` (the largest bucket above that), spread over the calls so
//!   the per-call charges sum to the row total.
//! - `Affine` fits `a + b·calls` per function for L1 from the 5- and
//!   100-call rows, and `base·batches + c·txs` for L2 commits from the 5-
//!   and 20-call rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tx::Function;
use crate::codec::{Canonical, CodecError, Reader};

/// Environment variable naming an alternative calibration CSV.
pub const CALIBRATION_ENV: &str = "AUTODFL_GAS_CALIBRATION";

const DEFAULT_CALIBRATION: &str = include_str!("../../data/gas_calibration.csv");

#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct GasUnits(pub u64);

impl GasUnits {
    pub const ZERO: GasUnits = GasUnits(0);
}

impl Add for GasUnits {
    type Output = GasUnits;
    fn add(self, rhs: GasUnits) -> GasUnits {
        GasUnits(self.0 + rhs.0)
    }
}

impl AddAssign for GasUnits {
    fn add_assign(&mut self, rhs: GasUnits) {
        self.0 += rhs.0;
    }
}

impl Sum for GasUnits {
    fn sum<I: Iterator<Item = GasUnits>>(iter: I) -> GasUnits {
        GasUnits(iter.map(|g| g.0).sum())
    }
}

impl fmt::Display for GasUnits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Canonical for GasUnits {
    fn encode(&self, out: &mut Vec<u8>) {
        self.0.encode(out);
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(GasUnits(u64::decode(r)?))
    }
}

#[derive(Debug, Error)]
pub enum GasError {
    #[error("no gas entry for function {0}")]
    UnknownFunction(String),
    #[error("calibration has no rows for {0}")]
    CalibrationMissing(Function),
    #[error("calibration row {function}/{calls}: {detail}")]
    Inconsistent {
        function: String,
        calls: u64,
        detail: String,
    },
    #[error("calibration csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("calibration file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GasMode {
    #[default]
    Table,
    Affine,
}

/// Position of one call within a workload of calls to the same function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext {
    /// 1-based.
    pub ordinal: u64,
    pub workload: u64,
}

impl CallContext {
    pub fn new(ordinal: u64, workload: u64) -> Self {
        debug_assert!(ordinal >= 1 && ordinal <= workload.max(1));
        Self { ordinal, workload }
    }
}

/// One (function, calls) line of the calibration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableRow {
    pub calls: u64,
    pub commit: u64,
    pub verify: u64,
    pub execute: u64,
    pub l2_total: u64,
    pub l1_total: u64,
}

#[derive(Debug, Deserialize, Serialize)]
struct CsvRecord {
    function: String,
    calls: u64,
    layer: String,
    phase: String,
    gas: u64,
}

#[derive(Default)]
struct PartialRow {
    commit: Option<u64>,
    verify: Option<u64>,
    execute: Option<u64>,
    l2_total: Option<u64>,
    l1_total: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasTable {
    rows: BTreeMap<Function, BTreeMap<u64, TableRow>>,
}

impl GasTable {
    /// The built-in calibration.
    pub fn builtin() -> Self {
        Self::from_reader(DEFAULT_CALIBRATION.as_bytes()).expect("built-in calibration is valid")
    }

    /// Built-in calibration unless [`CALIBRATION_ENV`] names a file.
    pub fn from_env() -> Result<Self, GasError> {
        match std::env::var_os(CALIBRATION_ENV) {
            Some(path) => Self::load(path),
            None => Ok(Self::builtin()),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GasError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, GasError> {
        let mut partial: BTreeMap<(Function, u64), PartialRow> = BTreeMap::new();
        for rec in csv::Reader::from_reader(reader).deserialize::<CsvRecord>() {
            let rec = rec?;
            let inconsistent = |detail: &str| GasError::Inconsistent {
                function: rec.function.clone(),
                calls: rec.calls,
                detail: detail.to_string(),
            };
            let function = Function::from_name(&rec.function)
                .ok_or_else(|| GasError::UnknownFunction(rec.function.clone()))?;
            if rec.calls == 0 {
                return Err(inconsistent("call count must be positive"));
            }
            let row = partial.entry((function, rec.calls)).or_default();
            let slot = match (rec.layer.as_str(), rec.phase.as_str()) {
                ("L1", "total") => &mut row.l1_total,
                ("L2", "commit") => &mut row.commit,
                ("L2", "verify") => &mut row.verify,
                ("L2", "execute") => &mut row.execute,
                ("L2", "total") => &mut row.l2_total,
                _ => return Err(inconsistent("unknown layer/phase")),
            };
            if slot.replace(rec.gas).is_some() {
                return Err(inconsistent("duplicate layer/phase entry"));
            }
        }

        let mut rows: BTreeMap<Function, BTreeMap<u64, TableRow>> = BTreeMap::new();
        for ((function, calls), p) in partial {
            let missing = || GasError::Inconsistent {
                function: function.name().to_string(),
                calls,
                detail: "missing phase".into(),
            };
            let row = TableRow {
                calls,
                commit: p.commit.ok_or_else(missing)?,
                verify: p.verify.ok_or_else(missing)?,
                execute: p.execute.ok_or_else(missing)?,
                l2_total: p.l2_total.unwrap_or(0),
                l1_total: p.l1_total.ok_or_else(missing)?,
            };
            let l2_total = row.commit + row.verify + row.execute;
            if p.l2_total.is_some_and(|t| t != l2_total) {
                return Err(GasError::Inconsistent {
                    function: function.name().to_string(),
                    calls,
                    detail: format!("L2 total {} != commit+verify+execute {l2_total}", row.l2_total),
                });
            }
            rows.entry(function)
                .or_default()
                .insert(calls, TableRow { l2_total, ..row });
        }
        Ok(Self { rows })
    }

    pub fn functions(&self) -> impl Iterator<Item = Function> + '_ {
        self.rows.keys().copied()
    }

    pub fn rows(&self, function: Function) -> Option<&BTreeMap<u64, TableRow>> {
        self.rows.get(&function)
    }

    /// Row for the smallest bucket covering `workload`, or the largest bucket.
    pub fn bucket(&self, function: Function, workload: u64) -> Option<&TableRow> {
        let rows = self.rows.get(&function)?;
        rows.range(workload..)
            .next()
            .or_else(|| rows.iter().next_back())
            .map(|(_, r)| r)
    }

    /// Every row in (function, calls) order.
    pub fn all_rows(&self) -> impl Iterator<Item = (Function, &TableRow)> {
        self.rows
            .iter()
            .flat_map(|(f, rows)| rows.values().map(move |r| (*f, r)))
    }
}

/// Costs for functions absent from the calibration table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatCost {
    pub l1_per_call: u64,
    pub l2_commit_per_tx: u64,
}

/// Uncalibrated estimates, in the same range as the calibrated functions.
fn default_flat_costs() -> BTreeMap<Function, FlatCost> {
    let c = |l1, l2| FlatCost {
        l1_per_call: l1,
        l2_commit_per_tx: l2,
    };
    BTreeMap::from([
        (Function::RecordScores, c(60_000, 2_400)),
        (Function::CalcNewRep, c(40_000, 1_800)),
        (Function::LockDeposit, c(45_000, 1_600)),
        (Function::ReleaseRewards, c(70_000, 2_800)),
        (Function::MembershipVote, c(50_000, 1_800)),
        (Function::SelectTrainers, c(90_000, 3_200)),
        (Function::SubmitGlobalModel, c(50_000, 2_200)),
        (Function::CloseRound, c(30_000, 1_200)),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AffineFit {
    l1_fixed: f64,
    l1_per_call: f64,
    commit_per_batch: f64,
    commit_per_tx: f64,
    verify: u64,
    execute: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GasSchedule {
    pub mode: GasMode,
    table: GasTable,
    flat: BTreeMap<Function, FlatCost>,
    affine: BTreeMap<Function, AffineFit>,
    fallback_verify: u64,
    fallback_execute: u64,
}

/// `ordinal`-th of `span` equal shares of `total`, rounded so shares sum to `total`.
fn amortized(total: u64, span: u64, ordinal: u64) -> u64 {
    let span = span.max(1) as u128;
    let cum = |k: u64| (k as u128 * total as u128 / span) as u64;
    cum(ordinal) - cum(ordinal.saturating_sub(1))
}

fn mean_rounded(values: impl Iterator<Item = u64>) -> u64 {
    let (sum, n) = values.fold((0u128, 0u128), |(s, n), v| (s + v as u128, n + 1));
    if n == 0 {
        0
    } else {
        ((sum + n / 2) / n) as u64
    }
}

impl GasSchedule {
    pub fn new(mode: GasMode, table: GasTable) -> Self {
        let mut affine = BTreeMap::new();
        for f in table.functions() {
            let rows = table.rows(f).expect("function listed");
            let l1 = |n| rows.get(&n).map(|r| r.l1_total as f64);
            let commit = |n| rows.get(&n).map(|r| r.commit as f64);
            let (l1_fixed, l1_per_call) = match (l1(5), l1(100)) {
                (Some(t5), Some(t100)) => {
                    let b = (t100 - t5) / 95.0;
                    (t5 - 5.0 * b, b)
                }
                _ => {
                    let r = rows.values().next_back().expect("non-empty");
                    (0.0, r.l1_total as f64 / r.calls as f64)
                }
            };
            let (commit_per_batch, commit_per_tx) = match (commit(5), commit(20)) {
                (Some(c5), Some(c20)) => {
                    let c = (c20 - c5) / 15.0;
                    (c5 - 5.0 * c, c)
                }
                _ => {
                    let r = rows.values().next().expect("non-empty");
                    (0.0, r.commit as f64 / r.calls as f64)
                }
            };
            affine.insert(
                f,
                AffineFit {
                    l1_fixed,
                    l1_per_call,
                    commit_per_batch,
                    commit_per_tx,
                    verify: mean_rounded(rows.values().map(|r| r.verify)),
                    execute: mean_rounded(rows.values().map(|r| r.execute)),
                },
            );
        }
        let fallback_verify = mean_rounded(table.all_rows().map(|(_, r)| r.verify));
        let fallback_execute = mean_rounded(table.all_rows().map(|(_, r)| r.execute));
        let flat = default_flat_costs()
            .into_iter()
            .filter(|(f, _)| table.rows(*f).is_none())
            .collect();
        Self {
            mode,
            table,
            flat,
            affine,
            fallback_verify,
            fallback_execute,
        }
    }

    pub fn table_mode() -> Self {
        Self::new(GasMode::Table, GasTable::builtin())
    }

    pub fn table(&self) -> &GasTable {
        &self.table
    }

    pub fn with_flat_cost(mut self, function: Function, cost: FlatCost) -> Self {
        self.flat.insert(function, cost);
        self
    }

    fn unknown(function: Function) -> GasError {
        GasError::UnknownFunction(function.name().to_string())
    }

    /// L1 gas charged for one call.
    pub fn l1_gas_for(&self, function: Function, ctx: CallContext) -> Result<GasUnits, GasError> {
        if let Some(flat) = self.flat.get(&function) {
            return Ok(GasUnits(flat.l1_per_call));
        }
        match self.mode {
            GasMode::Table => {
                let row = self
                    .table
                    .bucket(function, ctx.workload)
                    .ok_or_else(|| Self::unknown(function))?;
                Ok(GasUnits(amortized(row.l1_total, row.calls, ctx.ordinal)))
            }
            GasMode::Affine => {
                let fit = self.affine.get(&function).ok_or_else(|| Self::unknown(function))?;
                let total = self.affine_l1_total(fit, ctx.workload);
                Ok(GasUnits(amortized(total, ctx.workload, ctx.ordinal)))
            }
        }
    }

    fn affine_l1_total(&self, fit: &AffineFit, calls: u64) -> u64 {
        (fit.l1_fixed + fit.l1_per_call * calls as f64).round().max(1.0) as u64
    }

    /// L1 gas for a workload of `calls` calls to one function.
    pub fn l1_workload(&self, function: Function, calls: u64) -> Result<GasUnits, GasError> {
        (1..=calls)
            .map(|k| self.l1_gas_for(function, CallContext::new(k, calls)))
            .sum()
    }

    /// Commit gas for one batch. Each entry is a transaction's function and
    /// its [`CallContext`] within the posting session.
    pub fn l2_batch_commit(&self, txs: &[(Function, CallContext)]) -> Result<GasUnits, GasError> {
        match self.mode {
            GasMode::Table => txs
                .iter()
                .map(|(f, ctx)| self.l2_commit_share(*f, *ctx))
                .sum(),
            GasMode::Affine => {
                let mut base: f64 = 0.0;
                let mut per_tx = 0.0;
                for (f, _) in txs {
                    if let Some(flat) = self.flat.get(f) {
                        per_tx += flat.l2_commit_per_tx as f64;
                        continue;
                    }
                    let fit = self.affine.get(f).ok_or_else(|| Self::unknown(*f))?;
                    base = base.max(fit.commit_per_batch);
                    per_tx += fit.commit_per_tx;
                }
                Ok(GasUnits((base + per_tx).round() as u64))
            }
        }
    }

    /// Commit gas attributed to one transaction.
    pub fn l2_commit_share(&self, function: Function, ctx: CallContext) -> Result<GasUnits, GasError> {
        if let Some(flat) = self.flat.get(&function) {
            return Ok(GasUnits(flat.l2_commit_per_tx));
        }
        match self.mode {
            GasMode::Table => {
                let row = self
                    .table
                    .bucket(function, ctx.workload)
                    .ok_or_else(|| Self::unknown(function))?;
                Ok(GasUnits(amortized(row.commit, row.calls, ctx.ordinal)))
            }
            GasMode::Affine => {
                let fit = self.affine.get(&function).ok_or_else(|| Self::unknown(function))?;
                Ok(GasUnits(fit.commit_per_tx.round().max(1.0) as u64))
            }
        }
    }

    /// Verify and execute gas for one posting session, given the number of
    /// calls per function it contains. Charged once per session; with
    /// several functions the most expensive entry applies.
    pub fn l2_session_overhead(
        &self,
        workloads: &BTreeMap<Function, u64>,
    ) -> Result<(GasUnits, GasUnits), GasError> {
        let mut verify = 0;
        let mut execute = 0;
        for (&f, &calls) in workloads {
            let (v, e) = if self.flat.contains_key(&f) {
                (self.fallback_verify, self.fallback_execute)
            } else {
                match self.mode {
                    GasMode::Table => {
                        let row = self.table.bucket(f, calls).ok_or_else(|| Self::unknown(f))?;
                        (row.verify, row.execute)
                    }
                    GasMode::Affine => {
                        let fit = self.affine.get(&f).ok_or_else(|| Self::unknown(f))?;
                        (fit.verify, fit.execute)
                    }
                }
            };
            verify = verify.max(v);
            execute = execute.max(e);
        }
        Ok((GasUnits(verify), GasUnits(execute)))
    }

    /// Affine-model commit total for `calls` calls split into batches of `capacity`.
    pub fn affine_commit_estimate(
        &self,
        function: Function,
        calls: u64,
        capacity: u64,
    ) -> Result<GasUnits, GasError> {
        let fit = self
            .affine
            .get(&function)
            .ok_or_else(|| Self::unknown(function))?;
        let batches = calls.div_ceil(capacity.max(1));
        Ok(GasUnits(
            (fit.commit_per_batch * batches as f64 + fit.commit_per_tx * calls as f64).round() as u64,
        ))
    }
}
