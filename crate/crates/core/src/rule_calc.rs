//! Rule-count calculus for regular ontologies.
//!
//! With `C` prerequisite classes and `N` leaves per parent, a classifier needs
//! `R = C * 2^N + 1` rules: `2^N` outcome combinations per prerequisite class
//! plus one default rule for the least concept. Adding a leaf to every parent
//! adds `C * 2^(N-1)` rules; removing one takes away `C * 2^N / 2`.
//!
//! All arithmetic is exact `u128` and fails on overflow.

use std::fmt;
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ontology::OUTCOME_ARITY;

/// Default upper bound on `C` and `N` for sweeps.
pub const DEFAULT_K_MAX: u32 = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CalcError {
    #[error("invalid leaf count N = {0}: N must be at least {1}")]
    InvalidN(i64, i64),
    #[error("invalid prerequisite class count C = {0}")]
    InvalidC(i64),
    #[error("R = {given} is inconsistent with C = {c}, N = {n} (expected {expected})")]
    InconsistentInput {
        given: u128,
        c: u32,
        n: u32,
        expected: u128,
    },
    #[error("rule count overflow at C = {c}, N = {n}")]
    Overflow { c: i64, n: i64 },
    #[error("{0} exceeds k_max = {1}")]
    OutOfRange(String, u32),
    #[error("empty grid")]
    EmptyGrid,
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Number of classified rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleCount(pub u128);

impl RuleCount {
    pub fn get(self) -> u128 {
        self.0
    }
}

impl fmt::Display for RuleCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

fn check_c(c: i64) -> Result<u32, CalcError> {
    u32::try_from(c).map_err(|_| CalcError::InvalidC(c))
}

fn check_n(n: i64, min: i64) -> Result<u32, CalcError> {
    if n < min {
        return Err(CalcError::InvalidN(n, min));
    }
    u32::try_from(n).map_err(|_| CalcError::InvalidN(n, min))
}

/// `C * T^N` with overflow checking.
fn class_term(c: u32, n: u32) -> Option<u128> {
    u128::from(OUTCOME_ARITY)
        .checked_pow(n)
        .and_then(|p| p.checked_mul(u128::from(c)))
}

/// Closed-form rule count `C * 2^N + 1`.
pub fn estimate_rules(c: i64, n: i64) -> Result<RuleCount, CalcError> {
    let cu = check_c(c)?;
    let nu = check_n(n, 1)?;
    class_term(cu, nu)
        .and_then(|t| t.checked_add(1))
        .map(RuleCount)
        .ok_or(CalcError::Overflow { c, n })
}

/// Configuration for the incremental forms and for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calculus {
    pub k_max: u32,
    /// Reject an input `R` that does not match the closed form for its (C, N).
    pub check_consistency: bool,
}

impl Default for Calculus {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            check_consistency: true,
        }
    }
}

impl Calculus {
    fn expect_consistent(&self, r: RuleCount, c: u32, n: u32) -> Result<(), CalcError> {
        if !self.check_consistency {
            return Ok(());
        }
        let expected = estimate_rules(c.into(), n.into())?.0;
        if expected != r.0 {
            return Err(CalcError::InconsistentInput {
                given: r.0,
                c,
                n,
                expected,
            });
        }
        Ok(())
    }

    /// Grows `r` (the count at `n_new - 1` leaves) by `C * 2^(n_new - 1)`.
    pub fn increment_rules(&self, r: RuleCount, c: i64, n_new: i64) -> Result<RuleCount, CalcError> {
        let cu = check_c(c)?;
        let nu = check_n(n_new, 2)?;
        self.expect_consistent(r, cu, nu - 1)?;
        class_term(cu, nu - 1)
            .and_then(|t| r.0.checked_add(t))
            .map(RuleCount)
            .ok_or(CalcError::Overflow { c, n: n_new })
    }

    /// Shrinks `r` (the count at `n_old` leaves) by `C * 2^n_old / 2`.
    pub fn decrement_rules(&self, r: RuleCount, c: i64, n_old: i64) -> Result<RuleCount, CalcError> {
        let cu = check_c(c)?;
        if cu == 0 {
            return Err(CalcError::InvalidC(c));
        }
        // dropping to N = 0 is the degenerate case: a regular ontology never has blank parents
        let nu = check_n(n_old, 2)?;
        self.expect_consistent(r, cu, nu)?;
        class_term(cu, nu)
            .map(|t| t / u128::from(OUTCOME_ARITY))
            .and_then(|t| r.0.checked_sub(t))
            .map(RuleCount)
            .ok_or(CalcError::Overflow { c, n: n_old })
    }

    /// Closed form over the Cartesian product of the two ranges, sorted by (C, N).
    pub fn sweep(
        &self,
        c_range: RangeInclusive<i64>,
        n_range: RangeInclusive<i64>,
    ) -> Result<SweepGrid, CalcError> {
        for c in [*c_range.start(), *c_range.end()] {
            check_c(c)?;
            if c > i64::from(self.k_max) {
                return Err(CalcError::OutOfRange(format!("C = {c}"), self.k_max));
            }
        }
        for n in [*n_range.start(), *n_range.end()] {
            check_n(n, 1)?;
            if n > i64::from(self.k_max) {
                return Err(CalcError::OutOfRange(format!("N = {n}"), self.k_max));
            }
        }
        let mut rows = Vec::new();
        for c in c_range {
            for n in n_range.clone() {
                rows.push(SweepRow {
                    c: c as u32,
                    n: n as u32,
                    r: estimate_rules(c, n)?.0,
                });
            }
        }
        Ok(SweepGrid { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: u32,
    pub n: u32,
    pub r: u128,
}

/// Rows of `(C, N, R)`, sorted by `(C, N)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepGrid {
    rows: Vec<SweepRow>,
}

impl SweepGrid {
    /// Builds a grid from arbitrary rows, checking the closed form and sorting.
    pub fn from_rows(mut rows: Vec<SweepRow>) -> Result<Self, CalcError> {
        for row in &rows {
            let expected = estimate_rules(row.c.into(), row.n.into())?;
            if expected.0 != row.r {
                return Err(CalcError::InconsistentInput {
                    given: row.r,
                    c: row.c,
                    n: row.n,
                    expected: expected.0,
                });
            }
        }
        rows.sort_by_key(|r| (r.c, r.n));
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[SweepRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Distinct C values in ascending order.
    pub fn c_values(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.rows.iter().map(|r| r.c).collect();
        v.dedup();
        v
    }

    /// Distinct N values in ascending order.
    pub fn n_values(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.rows.iter().map(|r| r.n).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// R values for a fixed C, ordered by N.
    pub fn r_for_c(&self, c: u32) -> Vec<u128> {
        self.rows.iter().filter(|r| r.c == c).map(|r| r.r).collect()
    }

    /// R values for a fixed N, ordered by C.
    pub fn r_for_n(&self, n: u32) -> Vec<u128> {
        self.rows.iter().filter(|r| r.n == n).map(|r| r.r).collect()
    }

    /// `C,N,R` header followed by one line per row.
    pub fn to_csv(&self) -> Result<String, CalcError> {
        if self.rows.is_empty() {
            return Err(CalcError::EmptyGrid);
        }
        let mut out = String::from("C,N,R\n");
        for row in &self.rows {
            let _ = writeln!(out, "{},{},{}", row.c, row.n, row.r);
        }
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self, CalcError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "C,N,R")) => {}
            _ => {
                return Err(CalcError::Csv {
                    line: 1,
                    message: "expected header `C,N,R`".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let bad = |message: String| CalcError::Csv {
                line: idx + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').collect();
            let [c, n, r] = fields.as_slice() else {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            };
            rows.push(SweepRow {
                c: c.parse().map_err(|e| bad(format!("C: {e}")))?,
                n: n.parse().map_err(|e| bad(format!("N: {e}")))?,
                r: r.parse().map_err(|e| bad(format!("R: {e}")))?,
            });
        }
        if rows.is_empty() {
            return Err(CalcError::EmptyGrid);
        }
        Self::from_rows(rows)
    }
}

pub fn emit_dataset_csv(grid: &SweepGrid) -> Result<String, CalcError> {
    grid.to_csv()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn calc() -> Calculus {
        Calculus::default()
    }

    #[test]
    fn estimate_examples() {
        assert_eq!(estimate_rules(3, 1), Ok(RuleCount(7)));
        assert_eq!(estimate_rules(0, 4), Ok(RuleCount(1)));
        assert_eq!(estimate_rules(5, 5), Ok(RuleCount(161)));
        assert_eq!(estimate_rules(4, 0), Err(CalcError::InvalidN(0, 1)));
        assert_eq!(estimate_rules(-1, 2), Err(CalcError::InvalidC(-1)));
    }

    #[test]
    fn estimate_overflow_is_an_error() {
        assert!(estimate_rules(64, 64).is_ok());
        assert_eq!(
            estimate_rules(1, 128),
            Err(CalcError::Overflow { c: 1, n: 128 })
        );
        assert_eq!(
            estimate_rules(u32::MAX.into(), 127),
            Err(CalcError::Overflow {
                c: u32::MAX.into(),
                n: 127
            })
        );
    }

    #[test]
    fn increment_examples() {
        let c = calc();
        assert_eq!(c.increment_rules(RuleCount(7), 3, 2), Ok(RuleCount(13)));
        assert_eq!(c.increment_rules(RuleCount(13), 3, 3), Ok(RuleCount(25)));
        assert_eq!(c.increment_rules(RuleCount(1), 0, 2), Ok(RuleCount(1)));
        assert_eq!(
            c.increment_rules(RuleCount(7), 3, 1),
            Err(CalcError::InvalidN(1, 2))
        );
        assert!(matches!(
            c.increment_rules(RuleCount(8), 3, 2),
            Err(CalcError::InconsistentInput { expected: 7, .. })
        ));
    }

    #[test]
    fn decrement_examples() {
        let c = calc();
        assert_eq!(c.decrement_rules(RuleCount(129), 4, 5), Ok(RuleCount(65)));
        assert_eq!(c.decrement_rules(RuleCount(65), 4, 4), Ok(RuleCount(33)));
        assert_eq!(
            c.decrement_rules(RuleCount(9), 4, 1),
            Err(CalcError::InvalidN(1, 2))
        );
        assert_eq!(
            c.decrement_rules(RuleCount(5), 0, 2),
            Err(CalcError::InvalidC(0))
        );
    }

    #[test]
    fn relaxed_mode_uses_raw_arithmetic() {
        let c = Calculus {
            check_consistency: false,
            ..Calculus::default()
        };
        assert_eq!(c.increment_rules(RuleCount(8), 3, 2), Ok(RuleCount(14)));
        assert_eq!(c.decrement_rules(RuleCount(100), 4, 3), Ok(RuleCount(84)));
        assert!(matches!(
            c.decrement_rules(RuleCount(3), 4, 3),
            Err(CalcError::Overflow { .. })
        ));
    }

    #[test]
    fn sweep_shapes() {
        let c = calc();
        let grid = c.sweep(1..=6, 5..=5).unwrap();
        assert_eq!(grid.r_for_n(5), [33, 65, 97, 129, 161, 193]);
        let grid = c.sweep(0..=0, 1..=5).unwrap();
        assert_eq!(grid.r_for_c(0), [1, 1, 1, 1, 1]);
        assert_eq!(c.sweep(0..=6, 0..=5), Err(CalcError::InvalidN(0, 1)));
        assert!(matches!(
            c.sweep(0..=65, 1..=2),
            Err(CalcError::OutOfRange(_, 64))
        ));
    }

    #[test]
    fn csv_format() {
        let grid = calc().sweep(3..=3, 1..=1).unwrap();
        assert_eq!(emit_dataset_csv(&grid).unwrap(), "C,N,R\n3,1,7\n");
        assert_eq!(
            emit_dataset_csv(&SweepGrid::default()),
            Err(CalcError::EmptyGrid)
        );
        let full = calc().sweep(0..=6, 1..=5).unwrap();
        assert_eq!(full.to_csv().unwrap().lines().count(), 36);
    }

    #[test]
    fn csv_rejects_bad_rows() {
        assert!(matches!(
            SweepGrid::from_csv("C,N,R\n3,1,8\n"),
            Err(CalcError::InconsistentInput { .. })
        ));
        assert!(matches!(
            SweepGrid::from_csv("C,N,R\n3,1\n"),
            Err(CalcError::Csv { line: 2, .. })
        ));
        assert!(matches!(
            SweepGrid::from_csv("x\n"),
            Err(CalcError::Csv { line: 1, .. })
        ));
    }
}
