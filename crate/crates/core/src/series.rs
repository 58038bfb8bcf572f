//! Monthly observation series with a missing-value mask.

use std::fmt;

use crate::error::{Error, Result};

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::data(format!("month {month} outside 1..=12")));
        }
        Ok(Self { year, month })
    }

    /// Months since January of year 0.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn from_ordinal(ord: i64) -> Self {
        Self {
            year: ord.div_euclid(12) as i32,
            month: (ord.rem_euclid(12) + 1) as u32,
        }
    }

    /// The month `steps` months later (negative steps go back).
    pub fn offset(self, steps: i64) -> Self {
        Self::from_ordinal(self.ordinal() + steps)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Default for YearMonth {
    fn default() -> Self {
        Self {
            year: 2000,
            month: 1,
        }
    }
}

/// One univariate series `y(1..τ)`.
///
/// Missing steps hold `NaN` in `values` and `true` in `missing`; the two are
/// kept in lock-step by the constructors.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    values: Vec<f64>,
    missing: Vec<bool>,
    origin: YearMonth,
    period: usize,
}

impl ObservationSeries {
    /// Builds a monthly series; `NaN` entries are treated as missing.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_origin(values, YearMonth::default(), 12)
    }

    pub fn with_origin(values: Vec<f64>, origin: YearMonth, period: usize) -> Result<Self> {
        let missing = values.iter().map(|v| v.is_nan()).collect();
        Self::from_parts(values, missing, origin, period)
    }

    /// Builds a series from explicit values and mask. Masked values are
    /// replaced by `NaN`; unmasked values must be finite.
    pub fn from_parts(
        mut values: Vec<f64>,
        missing: Vec<bool>,
        origin: YearMonth,
        period: usize,
    ) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::data(format!(
                "series needs at least 2 steps, got {}",
                values.len()
            )));
        }
        if missing.len() != values.len() {
            return Err(Error::contract(format!(
                "mask length {} differs from value length {}",
                missing.len(),
                values.len()
            )));
        }
        if period == 0 {
            return Err(Error::contract("period must be positive"));
        }
        for (t, (v, &m)) in values.iter_mut().zip(&missing).enumerate() {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::data(format!("non-finite value {v} at step {t}")));
            }
        }
        Ok(Self {
            values,
            missing,
            origin,
            period,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, t: usize) -> bool {
        self.missing[t]
    }

    /// The value at step `t`, `None` when missing.
    pub fn get(&self, t: usize) -> Option<f64> {
        (!self.missing[t]).then(|| self.values[t])
    }

    pub fn origin(&self) -> YearMonth {
        self.origin
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Calendar month of step `t` (0-based).
    pub fn month_at(&self, t: usize) -> YearMonth {
        self.origin.offset(t as i64)
    }

    pub fn observed_count(&self) -> usize {
        self.missing.iter().filter(|m| !**m).count()
    }

    pub fn observed(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .zip(&self.missing)
            .enumerate()
            .filter(|(_, (_, m))| !**m)
            .map(|(t, (v, _))| (t, *v))
    }

    /// Mean of the observed values, accumulated around the first one so a
    /// constant series has exactly its value as mean.
    pub fn mean(&self) -> Option<f64> {
        let (_, pivot) = self.observed().next()?;
        let n = self.observed_count() as f64;
        Some(pivot + self.observed().map(|(_, v)| v - pivot).sum::<f64>() / n)
    }

    /// Sample variance of the observed values (divisor `n - 1`).
    pub fn variance(&self) -> Option<f64> {
        let n = self.observed_count();
        if n < 2 {
            return None;
        }
        let mean = self.mean()?;
        Some(
            self.observed()
                .map(|(_, v)| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n - 1) as f64,
        )
    }

    /// A new series with the same origin, period and mask.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(t, &v)| if self.missing[t] { f64::NAN } else { f(t, v) })
            .collect();
        Self::from_parts(values, self.missing.clone(), self.origin, self.period)
    }

    /// Same values with every step marked observed; fails on any gap.
    pub fn require_complete(&self) -> Result<&[f64]> {
        match self.missing.iter().position(|m| *m) {
            Some(t) => Err(Error::data(format!(
                "series has a missing value at step {t} ({})",
                self.month_at(t)
            ))),
            None => Ok(&self.values),
        }
    }
}
