//! Usage records, pricing and the append-only ledger.
//!
//! Amounts are exact rationals. Because pricing is linear in fuel, wall time
//! and the product of memory peak and wall time, an aggregate only has to keep
//! those three sums to bill any policy exactly.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, SubsecRound, Utc};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::executor::{ExitClass, InvocationResult};

/// Digits after the decimal point when amounts are rendered.
pub const AMOUNT_DECIMALS: u32 = 9;

#[derive(Debug, thiserror::Error)]
pub enum MeteringError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("invalid rate `{0}`: expected a nonnegative decimal, scientific or n/d value")]
    InvalidRate(String),
}

impl From<io::Error> for MeteringError {
    fn from(e: io::Error) -> Self {
        MeteringError::StorageFailure(e.to_string())
    }
}

/// One line of the ledger. Never mutated after it is written.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub invocation_id: String,
    pub function_name: String,
    pub timestamp: DateTime<Utc>,
    pub fuel_consumed: u64,
    pub wall_time_us: u64,
    pub memory_peak_pages: u32,
    pub exit_class: ExitClass,
}

impl UsageRecord {
    /// Builds a record with a fresh 128-bit id. Wall time is the total
    /// invocation bracket.
    pub fn from_result(result: &InvocationResult, function_name: &str) -> Self {
        UsageRecord {
            invocation_id: format!("{:032x}", rand::random::<u128>()),
            function_name: function_name.to_owned(),
            timestamp: Utc::now().trunc_subsecs(6),
            fuel_consumed: result.fuel_consumed,
            wall_time_us: result.t_total_us,
            memory_peak_pages: result.memory_peak_pages,
            exit_class: result.exit_status.class(),
        }
    }
}

/// A nonnegative exact rate. Parses `0.001`, `2e-9`, `1/3` and integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rate(BigRational);

impl Rate {
    pub fn zero() -> Self {
        Rate(BigRational::zero())
    }

    pub fn as_ratio(&self) -> &BigRational {
        &self.0
    }
}

impl From<BigRational> for Rate {
    fn from(r: BigRational) -> Self {
        Rate(r)
    }
}

impl FromStr for Rate {
    type Err = MeteringError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || MeteringError::InvalidRate(s.to_owned());
        let t = s.trim();
        let value = if let Some((n, d)) = t.split_once('/') {
            let n: BigInt = n.trim().parse().map_err(|_| invalid())?;
            let d: BigInt = d.trim().parse().map_err(|_| invalid())?;
            if d.is_zero() {
                return Err(invalid());
            }
            BigRational::new(n, d)
        } else {
            parse_decimal(t).ok_or_else(invalid)?
        };
        if value.is_negative() {
            return Err(invalid());
        }
        Ok(Rate(value))
    }
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let digits: BigInt = format!("{int_part}{frac_part}0").parse().ok()?;
    let digits = digits / 10;
    let scale = exponent.checked_sub(i32::try_from(frac_part.len()).ok()?)?;
    let ten = BigInt::from(10);
    let mut value = if scale >= 0 {
        BigRational::from_integer(digits * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(digits, num_traits::pow(ten, scale.unsigned_abs() as usize))
    };
    if negative {
        value = -value;
    }
    Some(value)
}

impl fmt::Display for Rate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Rate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Float(f64),
            Text(String),
        }
        let text = match Raw::deserialize(d)? {
            Raw::Int(i) => i.to_string(),
            // shortest round-trip text, so 2e-9 means exactly 2e-9
            Raw::Float(x) => format!("{x:e}"),
            Raw::Text(s) => s,
        };
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Linear price per invocation. Versioned by a monotonically increasing
/// integer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PricingPolicy {
    pub version: u64,
    /// Per fuel unit.
    pub fuel_rate: Rate,
    /// Per millisecond of wall time.
    pub time_rate: Rate,
    /// Per page-millisecond.
    pub memory_rate: Rate,
}

impl Default for PricingPolicy {
    fn default() -> Self {
        PricingPolicy {
            version: 1,
            fuel_rate: Rate::zero(),
            time_rate: Rate::zero(),
            memory_rate: Rate::zero(),
        }
    }
}

impl PricingPolicy {
    fn bill(&self, fuel: u128, wall_us: u128, page_wall_us: u128) -> BigRational {
        let int = |v: u128| BigRational::from_integer(BigInt::from(v));
        let per_ms = BigRational::from_integer(BigInt::from(1000));
        self.fuel_rate.0.clone() * int(fuel)
            + self.time_rate.0.clone() * int(wall_us) / per_ms.clone()
            + self.memory_rate.0.clone() * int(page_wall_us) / per_ms
    }
}

/// Exact price of one invocation.
pub fn price(record: &UsageRecord, policy: &PricingPolicy) -> BigRational {
    policy.bill(
        record.fuel_consumed.into(),
        record.wall_time_us.into(),
        u128::from(record.memory_peak_pages) * u128::from(record.wall_time_us),
    )
}

/// Renders a nonnegative amount with nine fractional digits, rounding half up.
pub fn format_amount(amount: &BigRational) -> String {
    let scale = num_traits::pow(BigInt::from(10), AMOUNT_DECIMALS as usize);
    let scaled = amount * BigRational::from_integer(scale.clone());
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let units = (scaled.abs() + half).floor().to_integer();
    let sign = if amount.is_negative() && !units.is_zero() {
        "-"
    } else {
        ""
    };
    let int_part = &units / &scale;
    let frac_part = &units % &scale;
    format!(
        "{sign}{int_part}.{frac_part:0>width$}",
        width = AMOUNT_DECIMALS as usize
    )
}

fn serialize_amount<S: Serializer>(amount: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_amount(amount))
}

/// Running sums for one function.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UsageTotals {
    pub record_count: u64,
    pub total_fuel: u128,
    pub total_wall_time_us: u128,
    pub max_memory_peak_pages: u32,
    /// Σ memory_peak_pages · wall_time_us
    pub page_wall_us: u128,
}

impl UsageTotals {
    pub fn add(&mut self, r: &UsageRecord) {
        self.record_count += 1;
        self.total_fuel += u128::from(r.fuel_consumed);
        self.total_wall_time_us += u128::from(r.wall_time_us);
        self.max_memory_peak_pages = self.max_memory_peak_pages.max(r.memory_peak_pages);
        self.page_wall_us += u128::from(r.memory_peak_pages) * u128::from(r.wall_time_us);
    }

    pub fn merge(&mut self, other: &UsageTotals) {
        self.record_count += other.record_count;
        self.total_fuel += other.total_fuel;
        self.total_wall_time_us += other.total_wall_time_us;
        self.max_memory_peak_pages = self.max_memory_peak_pages.max(other.max_memory_peak_pages);
        self.page_wall_us += other.page_wall_us;
    }

    pub fn aggregate(&self, function_name: &str, policy: &PricingPolicy) -> UsageAggregate {
        UsageAggregate {
            function_name: function_name.to_owned(),
            record_count: self.record_count,
            total_fuel: self.total_fuel,
            total_wall_time_us: self.total_wall_time_us,
            max_memory_peak_pages: self.max_memory_peak_pages,
            billed_amount: policy.bill(self.total_fuel, self.total_wall_time_us, self.page_wall_us),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UsageAggregate {
    pub function_name: String,
    pub record_count: u64,
    pub total_fuel: u128,
    pub total_wall_time_us: u128,
    pub max_memory_peak_pages: u32,
    #[serde(serialize_with = "serialize_amount")]
    pub billed_amount: BigRational,
}

/// Folds `records` for `function_name` one price at a time.
pub fn aggregate_records<'a>(
    records: impl IntoIterator<Item = &'a UsageRecord>,
    function_name: &str,
    policy: &PricingPolicy,
) -> UsageAggregate {
    let mut totals = UsageTotals::default();
    let mut billed = BigRational::zero();
    for r in records
        .into_iter()
        .filter(|r| r.function_name == function_name)
    {
        totals.add(r);
        billed += price(r, policy);
    }
    UsageAggregate {
        billed_amount: billed,
        ..totals.aggregate(function_name, policy)
    }
}

struct LedgerInner {
    file: File,
    totals: HashMap<String, UsageTotals>,
}

/// Append-only JSON-lines ledger with per-function totals kept in memory.
pub struct Ledger {
    path: PathBuf,
    fsync: bool,
    inner: Mutex<LedgerInner>,
}

impl Ledger {
    /// The ledger file used for a data directory.
    pub fn path_in(data_dir: &Path) -> PathBuf {
        data_dir.join("ledger").join("usage.log")
    }

    /// Opens the ledger in `data_dir`, replaying existing lines. A trailing
    /// partial line left by a crash is cut off.
    pub fn open(data_dir: &Path, fsync: bool) -> Result<Self, MeteringError> {
        let path = Self::path_in(data_dir);
        fs::create_dir_all(path.parent().unwrap())?;
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;

        let (records, complete_len) = read_records(&path)?;
        if complete_len < file.metadata()?.len() {
            log::warn!("truncating partial trailing line in {}", path.display());
            file.set_len(complete_len)?;
            file.sync_all()?;
        }
        file.seek(SeekFrom::End(0))?;

        let mut totals: HashMap<String, UsageTotals> = HashMap::new();
        for r in &records {
            totals.entry(r.function_name.clone()).or_default().add(r);
        }
        Ok(Ledger {
            path,
            fsync,
            inner: Mutex::new(LedgerInner { file, totals }),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends a record for `result` and returns it once it is on disk.
    pub fn record(
        &self,
        result: &InvocationResult,
        function_name: &str,
    ) -> Result<UsageRecord, MeteringError> {
        let record = UsageRecord::from_result(result, function_name);
        self.append(&record)?;
        Ok(record)
    }

    pub fn append(&self, record: &UsageRecord) -> Result<(), MeteringError> {
        let mut line =
            serde_json::to_vec(record).map_err(|e| MeteringError::StorageFailure(e.to_string()))?;
        line.push(b'\n');
        let mut inner = self.inner.lock().unwrap();
        inner.file.write_all(&line)?;
        if self.fsync {
            inner.file.sync_data()?;
        }
        inner
            .totals
            .entry(record.function_name.clone())
            .or_default()
            .add(record);
        Ok(())
    }

    pub fn totals(&self, function_name: &str) -> UsageTotals {
        let inner = self.inner.lock().unwrap();
        inner.totals.get(function_name).cloned().unwrap_or_default()
    }

    /// Aggregate from the in-memory totals.
    pub fn aggregate(&self, function_name: &str, policy: &PricingPolicy) -> UsageAggregate {
        self.totals(function_name).aggregate(function_name, policy)
    }

    /// Re-reads every complete record from disk.
    pub fn replay(&self) -> Result<Vec<UsageRecord>, MeteringError> {
        Ok(read_records(&self.path)?.0)
    }
}

/// Parses all newline-terminated records in `path` and returns them with the
/// byte length they span.
pub fn read_records(path: &Path) -> Result<(Vec<UsageRecord>, u64), MeteringError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut complete_len = 0u64;
    let mut line = Vec::new();
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line)?;
        if n == 0 || line.last() != Some(&b'\n') {
            break;
        }
        let record = serde_json::from_slice(&line).map_err(|e| {
            MeteringError::StorageFailure(format!(
                "corrupt ledger line at byte {complete_len}: {e}"
            ))
        })?;
        records.push(record);
        complete_len += n as u64;
    }
    Ok((records, complete_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::{ExitStatus, StartMode};

    fn ratio(s: &str) -> BigRational {
        s.parse::<Rate>().unwrap().0
    }

    fn result(status: ExitStatus, fuel: u64, total_us: u64, pages: u32) -> InvocationResult {
        InvocationResult {
            exit_status: status,
            stdout: vec![],
            stderr: vec![],
            t_setup_us: 1,
            t_exec_us: 1,
            t_total_us: total_us,
            fuel_consumed: fuel,
            memory_peak_pages: pages,
            start_mode: StartMode::Warm,
        }
    }

    fn record(name: &str, fuel: u64, wall: u64, pages: u32) -> UsageRecord {
        UsageRecord::from_result(&result(ExitStatus::Exited(0), fuel, wall, pages), name)
    }

    fn policy(fuel: &str, time: &str, mem: &str) -> PricingPolicy {
        PricingPolicy {
            version: 1,
            fuel_rate: fuel.parse().unwrap(),
            time_rate: time.parse().unwrap(),
            memory_rate: mem.parse().unwrap(),
        }
    }

    #[test]
    fn rate_parsing() {
        assert_eq!(
            ratio("2e-9"),
            BigRational::new(2.into(), 1_000_000_000.into())
        );
        assert_eq!(ratio("0.001"), BigRational::new(1.into(), 1000.into()));
        assert_eq!(ratio("1/3"), BigRational::new(1.into(), 3.into()));
        assert_eq!(ratio("12"), BigRational::from_integer(12.into()));
        assert_eq!(ratio("1.5E2"), BigRational::from_integer(150.into()));
        assert_eq!(ratio(".5"), BigRational::new(1.into(), 2.into()));
        for bad in ["", "-1", "abc", "1/0", "1e", ".", "1..2"] {
            assert!(bad.parse::<Rate>().is_err(), "{bad}");
        }
        let p: PricingPolicy = serde_json::from_str(
            r#"{"version":2,"fuel_rate":2e-9,"time_rate":"0.001","memory_rate":0}"#,
        )
        .unwrap();
        assert_eq!(p.fuel_rate, "2e-9".parse().unwrap());
        let back: PricingPolicy =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn field_mapping() {
        let r = UsageRecord::from_result(&result(ExitStatus::Exited(0), 7, 100, 3), "nop");
        assert_eq!(r.exit_class, ExitClass::Ok);
        assert_eq!(
            (r.fuel_consumed, r.wall_time_us, r.memory_peak_pages),
            (7, 100, 3)
        );
        assert_eq!(r.invocation_id.len(), 32);
        let clamp = UsageRecord::from_result(&result(ExitStatus::FuelExhausted, 1000, 5, 1), "f");
        assert_eq!(clamp.fuel_consumed, 1000);
        assert_eq!(clamp.exit_class, ExitClass::FuelExhausted);
        assert_ne!(
            record("a", 1, 1, 1).invocation_id,
            record("a", 1, 1, 1).invocation_id
        );
    }

    #[test]
    fn ledger_schema_field_names() {
        let v = serde_json::to_value(record("nop", 1, 2, 3)).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "exit_class",
                "fuel_consumed",
                "function_name",
                "invocation_id",
                "memory_peak_pages",
                "timestamp",
                "wall_time_us"
            ]
        );
        assert!(v["timestamp"].as_str().unwrap().ends_with('Z'));
    }

    #[test]
    fn pricing_examples() {
        let r = record("f", 500_000_000, 2000, 4);
        assert_eq!(price(&r, &PricingPolicy::default()), BigRational::zero());
        assert_eq!(
            price(&r, &policy("2e-9", "0", "0")),
            BigRational::from_integer(1.into())
        );
        assert_eq!(
            format_amount(&price(&r, &policy("0", "0.001", "0"))),
            "0.002000000"
        );
        // 4 pages for 2 ms at 1/8 per page-ms
        assert_eq!(
            format_amount(&price(&r, &policy("0", "0", "1/8"))),
            "1.000000000"
        );
    }

    #[test]
    fn fine_grained_discriminates_equal_wall_time() {
        let p = policy("1e-6", "0", "0");
        assert_ne!(
            price(&record("f", 10, 500, 1), &p),
            price(&record("f", 11, 500, 1), &p)
        );
    }

    #[test]
    fn amount_rendering() {
        let r = |n: i64, d: i64| BigRational::new(n.into(), d.into());
        assert_eq!(format_amount(&r(0, 1)), "0.000000000");
        assert_eq!(format_amount(&r(1, 1)), "1.000000000");
        assert_eq!(format_amount(&r(1, 3)), "0.333333333");
        assert_eq!(format_amount(&r(2, 3)), "0.666666667");
        assert_eq!(format_amount(&r(1, 2_000_000_000)), "0.000000001");
        assert_eq!(format_amount(&r(1, 2_000_000_001)), "0.000000000");
        assert_eq!(format_amount(&r(123_456, 100)), "1234.560000000");
    }

    #[test]
    fn aggregate_examples() {
        let p = policy("1", "0", "0");
        let empty = aggregate_records(&[], "f", &p);
        assert_eq!(empty.record_count, 0);
        assert_eq!(empty.total_fuel, 0);
        assert!(empty.billed_amount.is_zero());
        let recs = [
            record("f", 10, 1, 1),
            record("f", 20, 1, 5),
            record("g", 99, 1, 1),
            record("f", 30, 1, 2),
        ];
        let a = aggregate_records(&recs, "f", &p);
        assert_eq!(
            (a.record_count, a.total_fuel, a.max_memory_peak_pages),
            (3, 60, 5)
        );
        assert_eq!(a.billed_amount, BigRational::from_integer(60.into()));
    }

    #[test]
    fn aggregate_json_renders_amount() {
        let a = aggregate_records(&[record("f", 1, 1, 1)], "f", &policy("1/3", "0", "0"));
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["billed_amount"], "0.333333333");
        assert_eq!(v["record_count"], 1);
    }

    #[test]
    fn ledger_replay_matches_incremental() {
        let dir = tempfile::tempdir().unwrap();
        let p = policy("3e-7", "1/7", "0.0013");
        let ledger = Ledger::open(dir.path(), true).unwrap();
        for i in 0..20u64 {
            let name = if i % 3 == 0 { "a" } else { "b" };
            ledger
                .record(
                    &result(ExitStatus::Exited(0), i * 17, 100 + i, (i % 5) as u32),
                    name,
                )
                .unwrap();
        }
        let replayed = ledger.replay().unwrap();
        assert_eq!(replayed.len(), 20);
        for name in ["a", "b", "c"] {
            assert_eq!(
                aggregate_records(&replayed, name, &p),
                ledger.aggregate(name, &p)
            );
        }
        drop(ledger);
        let reopened = Ledger::open(dir.path(), false).unwrap();
        assert_eq!(
            reopened.aggregate("b", &p),
            aggregate_records(&replayed, "b", &p)
        );
    }

    #[test]
    fn partial_trailing_line_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path(), true).unwrap();
        ledger.append(&record("a", 1, 1, 1)).unwrap();
        let path = ledger.path().to_owned();
        drop(ledger);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"invocation_id\":\"dead").unwrap();
        drop(f);
        let ledger = Ledger::open(dir.path(), true).unwrap();
        ledger.append(&record("a", 2, 1, 1)).unwrap();
        let recs = ledger.replay().unwrap();
        assert_eq!(
            recs.iter().map(|r| r.fuel_consumed).collect::<Vec<_>>(),
            [1, 2]
        );
    }

    #[test]
    fn concurrent_appends_are_whole_lines() {
        let dir = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(dir.path(), false).unwrap();
        std::thread::scope(|s| {
            for t in 0..8 {
                let ledger = &ledger;
                s.spawn(move || {
                    for i in 0..50 {
                        ledger.append(&record("f", t * 100 + i, 1, 1)).unwrap();
                    }
                });
            }
        });
        let recs = ledger.replay().unwrap();
        assert_eq!(recs.len(), 400);
        assert_eq!(ledger.totals("f").record_count, 400);
    }
}
