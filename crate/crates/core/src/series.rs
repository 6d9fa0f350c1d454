use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{CoreError, Result};
use crate::units::{SeriesKind, Unit};

/// A calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Self {
        debug_assert!((1..=12).contains(&month));
        YearMonth { year, month }
    }

    /// Month offset from the start of year 0; used for differencing.
    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn months_since(self, earlier: YearMonth) -> i64 {
        self.ordinal() - earlier.ordinal()
    }

    pub fn plus_months(self, n: usize) -> YearMonth {
        let o = self.ordinal() + n as i64;
        YearMonth {
            year: o.div_euclid(12) as i32,
            month: (o.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn days(self) -> u32 {
        match self.month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            _ => {
                let y = self.year;
                if (y % 4 == 0 && y % 100 != 0) || y % 400 == 0 {
                    29
                } else {
                    28
                }
            }
        }
    }

    pub fn hours(self) -> f64 {
        self.days() as f64 * 24.0
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

/// Inclusive span of whole years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Horizon {
    pub start_year: i32,
    pub end_year: i32,
}

impl Horizon {
    pub const CASE_STUDY: Horizon = Horizon {
        start_year: 2022,
        end_year: 2050,
    };

    pub fn start(&self) -> YearMonth {
        YearMonth::new(self.start_year, 1)
    }

    pub fn years(&self) -> usize {
        (self.end_year - self.start_year + 1).max(0) as usize
    }

    pub fn len_months(&self) -> usize {
        self.years() * 12
    }

    pub fn contains_year(&self, year: i32) -> bool {
        (self.start_year..=self.end_year).contains(&year)
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> + '_ {
        let start = self.start();
        (0..self.len_months()).map(move |i| start.plus_months(i))
    }

    pub fn check_year(&self, year: i32) -> Result<()> {
        if self.contains_year(year) {
            Ok(())
        } else {
            Err(CoreError::YearOutsideHorizon {
                year,
                start: self.start_year,
                end: self.end_year,
            })
        }
    }
}

/// Dense monthly series with no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub start: YearMonth,
    pub unit: Unit,
    pub values: Vec<f64>,
}

impl MonthlySeries {
    pub fn new(start: YearMonth, unit: Unit, values: Vec<f64>) -> Result<Self> {
        let s = MonthlySeries {
            start,
            unit,
            values,
        };
        s.validate("series", None)?;
        Ok(s)
    }

    pub fn zeros(start: YearMonth, unit: Unit, len: usize) -> Self {
        MonthlySeries {
            start,
            unit,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> YearMonth {
        self.start.plus_months(self.values.len().saturating_sub(1))
    }

    pub fn get(&self, at: YearMonth) -> Option<f64> {
        let i = at.months_since(self.start);
        if i < 0 {
            return None;
        }
        self.values.get(i as usize).copied()
    }

    /// Values of calendar year `year`, if the series covers all twelve months.
    pub fn year_slice(&self, year: i32) -> Option<&[f64]> {
        let i = YearMonth::new(year, 1).months_since(self.start);
        if i < 0 || i as usize + 12 > self.values.len() {
            return None;
        }
        Some(&self.values[i as usize..i as usize + 12])
    }

    pub fn annual_mean(&self, year: i32) -> Option<f64> {
        self.year_slice(year).map(|v| v.iter().sum::<f64>() / 12.0)
    }

    pub fn annual_sum(&self, year: i32) -> Option<f64> {
        self.year_slice(year).map(|v| v.iter().sum::<f64>())
    }

    /// Checks finiteness, and non-negativity when `kind` is a flow.
    pub fn validate(&self, field: &str, kind: Option<SeriesKind>) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::schema(
                field,
                format!("non-finite value at {}", self.start.plus_months(i)),
            ));
        }
        if kind == Some(SeriesKind::Flow) {
            if let Some(i) = self.values.iter().position(|v| *v < 0.0) {
                return Err(CoreError::schema(
                    field,
                    format!("negative flow at {}", self.start.plus_months(i)),
                ));
            }
        }
        Ok(())
    }

    pub fn check_covers(&self, field: &str, horizon: &Horizon) -> Result<()> {
        if self.start != horizon.start() || self.values.len() != horizon.len_months() {
            return Err(CoreError::HorizonMismatch {
                field: field.to_string(),
                expected: horizon.len_months(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_study_horizon_is_348_months() {
        assert_eq!(Horizon::CASE_STUDY.len_months(), 348);
        let last = Horizon::CASE_STUDY.months().last().unwrap();
        assert_eq!(last, YearMonth::new(2050, 12));
    }

    #[test]
    fn month_arithmetic() {
        let m = YearMonth::new(2022, 11);
        assert_eq!(m.plus_months(2), YearMonth::new(2023, 1));
        assert_eq!(YearMonth::new(2023, 1).months_since(m), 2);
        assert_eq!(YearMonth::new(2024, 2).days(), 29);
        assert_eq!(YearMonth::new(2023, 2).days(), 28);
        assert_eq!(YearMonth::new(2100, 2).days(), 28);
    }

    #[test]
    fn year_slices_and_lookup() {
        let s = MonthlySeries::new(
            YearMonth::new(2022, 1),
            Unit::M3PerMonth,
            (0..24).map(f64::from).collect(),
        )
        .unwrap();
        assert_eq!(s.annual_sum(2023), Some((12..24).sum::<i32>() as f64));
        assert_eq!(s.year_slice(2024), None);
        assert_eq!(s.get(YearMonth::new(2023, 3)), Some(14.0));
        assert_eq!(s.get(YearMonth::new(2021, 12)), None);
        assert_eq!(s.end(), YearMonth::new(2023, 12));
    }

    #[test]
    fn rejects_bad_values() {
        let start = YearMonth::new(2022, 1);
        assert!(MonthlySeries::new(start, Unit::Tonne, vec![1.0, f64::NAN]).is_err());
        let neg = MonthlySeries::zeros(start, Unit::M3PerMonth, 3);
        let mut neg = neg;
        neg.values[1] = -1.0;
        assert!(neg.validate("x", Some(SeriesKind::Stock)).is_ok());
        assert!(neg.validate("x", Some(SeriesKind::Flow)).is_err());
    }
}
