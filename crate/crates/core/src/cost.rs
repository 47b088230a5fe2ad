//! Per-millisecond billing.
//!
//! Money is kept as an integer number of atto-dollars (10^-18 USD) so that
//! per-task costs add up exactly and survive text round-trips.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::time::SimTime;

const USD_SCALE_DIGITS: usize = 18;
const ATTO_PER_USD: u128 = 1_000_000_000_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(u128);

impl Usd {
    pub const ZERO: Usd = Usd(0);

    pub const fn from_atto(atto: u128) -> Self {
        Usd(atto)
    }

    pub const fn as_atto(self) -> u128 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / ATTO_PER_USD as f64
    }

    /// `self / other` as a float; `NaN` when `other` is zero.
    pub fn ratio(self, other: Usd) -> f64 {
        if other.0 == 0 {
            return f64::NAN;
        }
        self.0 as f64 / other.0 as f64
    }

    fn checked_mul(self, k: u128) -> Option<Usd> {
        self.0.checked_mul(k).map(Usd)
    }
}

impl Add for Usd {
    type Output = Usd;

    fn add(self, rhs: Usd) -> Usd {
        Usd(self.0.checked_add(rhs.0).expect("USD overflow"))
    }
}

impl AddAssign for Usd {
    fn add_assign(&mut self, rhs: Usd) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usd {
    fn sum<I: Iterator<Item = Usd>>(iter: I) -> Usd {
        iter.fold(Usd::ZERO, Add::add)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / ATTO_PER_USD;
        let frac = self.0 % ATTO_PER_USD;
        if frac == 0 {
            return write!(f, "{whole}");
        }
        let digits = format!("{frac:0width$}", width = USD_SCALE_DIGITS);
        write!(f, "{whole}.{}", digits.trim_end_matches('0'))
    }
}

impl FromStr for Usd {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() && frac.is_empty() {
            return Err("empty amount".into());
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(format!("`{s}` is not a non-negative decimal"));
        }
        if frac.len() > USD_SCALE_DIGITS {
            return Err(format!("`{s}` has more than {USD_SCALE_DIGITS} decimal places"));
        }
        let whole: u128 = if whole.is_empty() { 0 } else { whole.parse().map_err(|e| format!("{e}"))? };
        let frac_atto: u128 = if frac.is_empty() {
            0
        } else {
            let padded = format!("{frac:0<width$}", width = USD_SCALE_DIGITS);
            padded.parse().map_err(|e| format!("{e}"))?
        };
        whole
            .checked_mul(ATTO_PER_USD)
            .and_then(|w| w.checked_add(frac_atto))
            .map(Usd)
            .ok_or_else(|| format!("`{s}` is too large"))
    }
}

impl Serialize for Usd {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Memory-size → price-per-millisecond table with a billing granularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostModel {
    table: BTreeMap<u32, Usd>,
    granularity_ms: u32,
}

/// Publicly listed per-ms prices for x86 functions, one row per memory size.
pub const DEFAULT_COST_TABLE: &str = include_str!("../data/cost_table.txt");

impl CostModel {
    pub fn new(rows: impl IntoIterator<Item = (u32, Usd)>, granularity_ms: u32) -> Result<Self> {
        if granularity_ms == 0 {
            return Err(Error::InvalidParams("granularity_ms must be at least 1".into()));
        }
        let mut table = BTreeMap::new();
        for (mb, price) in rows {
            if price == Usd::ZERO {
                return Err(Error::InvalidParams(format!("price for {mb} MB must be positive")));
            }
            if table.insert(mb, price).is_some() {
                return Err(Error::InvalidParams(format!("duplicate memory size {mb} MB")));
            }
        }
        if table.is_empty() {
            return Err(Error::InvalidParams("cost table has no rows".into()));
        }
        let prices: Vec<_> = table.values().collect();
        if prices.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParams("price must not decrease with memory size".into()));
        }
        Ok(CostModel { table, granularity_ms })
    }

    /// The bundled default table.
    pub fn aws_default() -> Self {
        CostModel::parse(DEFAULT_COST_TABLE, "<builtin cost table>").expect("bundled cost table is valid")
    }

    pub fn granularity_ms(&self) -> u32 {
        self.granularity_ms
    }

    pub fn rows(&self) -> impl Iterator<Item = (u32, Usd)> + '_ {
        self.table.iter().map(|(&k, &v)| (k, v))
    }

    /// Price per millisecond at `memory_mb`: exact rows are returned as is,
    /// sizes between rows are interpolated linearly and sizes above the last
    /// row scale proportionally with memory.
    pub fn price_per_ms(&self, memory_mb: u32) -> Result<Usd> {
        let (&lo_mb, &lo_price) = self.table.first_key_value().expect("non-empty table");
        if memory_mb < lo_mb {
            return Err(Error::MemoryBelowTable {
                memory_mb,
                smallest_mb: lo_mb,
            });
        }
        if let Some(&p) = self.table.get(&memory_mb) {
            return Ok(p);
        }
        let below = self.table.range(..memory_mb).next_back();
        let above = self.table.range(memory_mb..).next();
        match (below, above) {
            (Some((&k0, &p0)), Some((&k1, &p1))) => {
                let span = (k1 - k0) as u128;
                let offset = (memory_mb - k0) as u128;
                Ok(Usd(p0.0 + (p1.0 - p0.0) * offset / span))
            }
            (Some((&k0, &p0)), None) => Ok(Usd(p0.0 * memory_mb as u128 / k0 as u128)),
            _ => Ok(lo_price),
        }
    }

    /// Reads the text table format:
    ///
    /// ```text
    /// # comment
    /// granularity_ms = 1
    /// memory_mb, price_per_ms_usd
    /// 128, 0.0000000021
    /// ```
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut granularity_ms = 1u32;
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once('=') {
                if key.trim() != "granularity_ms" {
                    return Err(Error::parse(source_name, line_no, format!("unknown key `{}`", key.trim())));
                }
                granularity_ms = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::parse(source_name, line_no, "granularity_ms must be a positive integer"))?;
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (Some(mb), Some(price), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(source_name, line_no, "expected `memory_mb, price_per_ms_usd`"));
            };
            if mb == "memory_mb" {
                continue;
            }
            let mb: u32 = mb
                .parse()
                .map_err(|_| Error::parse(source_name, line_no, format!("bad memory size `{mb}`")))?;
            let price: Usd = price.parse().map_err(|e| Error::parse(source_name, line_no, e))?;
            rows.push((mb, price));
        }
        CostModel::new(rows, granularity_ms).map_err(|e| Error::parse(source_name, 0, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        CostModel::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("granularity_ms = {}\nmemory_mb, price_per_ms_usd\n", self.granularity_ms);
        for (mb, price) in self.rows() {
            out.push_str(&format!("{mb}, {price}\n"));
        }
        out
    }
}

/// Billed cost of one invocation: execution time rounded up to the billing
/// granularity, times the per-ms price for its memory size.
pub fn invocation_cost(execution: SimTime, memory_mb: u32, model: &CostModel) -> Result<Usd> {
    let price = model.price_per_ms(memory_mb)?;
    let granule_us = model.granularity_ms as u64 * 1_000;
    let granules = execution.as_micros().div_ceil(granule_us) as u128;
    let billed_ms = granules * model.granularity_ms as u128;
    Ok(price.checked_mul(billed_ms).expect("cost overflow"))
}
