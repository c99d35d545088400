//! Per-contribution gas accounting for the refund computations.
//!
//! Each mechanism's refund is charged for the arithmetic it needs on chain.
//! PPRG keeps the previous geometric term in storage and multiplies it by
//! `1 / gamma`, so it needs no EXP at all.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Exp,
    Log,
}

impl Op {
    pub const ALL: [Op; 6] = [Op::Add, Op::Sub, Op::Mul, Op::Div, Op::Exp, Op::Log];

    pub fn name(self) -> &'static str {
        match self {
            Op::Add => "ADD",
            Op::Sub => "SUB",
            Op::Mul => "MUL",
            Op::Div => "DIV",
            Op::Exp => "EXP",
            Op::Log => "LOG",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How the size of an EXP operand is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpMode {
    /// Bytes needed to store the operand, minus one.
    #[default]
    ByteLength,
    /// `floor(log2 x)`.
    Log2,
}

/// Gas charged per operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCostTable {
    pub add: u64,
    pub sub: u64,
    pub mul: u64,
    pub div: u64,
    pub exp_base: u64,
    pub exp_per_unit: u64,
    pub log_base: u64,
    pub log_per_byte: u64,
    pub exp_mode: ExpMode,
}

impl Default for OpCostTable {
    fn default() -> Self {
        OpCostTable {
            add: 3,
            sub: 3,
            mul: 5,
            div: 5,
            exp_base: 10,
            exp_per_unit: 10,
            log_base: 365,
            log_per_byte: 8,
            exp_mode: ExpMode::ByteLength,
        }
    }
}

impl OpCostTable {
    pub fn with_exp_mode(self, exp_mode: ExpMode) -> Self {
        OpCostTable { exp_mode, ..self }
    }

    /// `10 + 10 L(x)` for an EXP whose operand is `x >= 1`.
    pub fn exp_gas(&self, x: u64) -> Result<u64> {
        if x < 1 {
            return Err(Error::Domain(format!("EXP operand must be at least 1, got {x}")));
        }
        let bits = u64::from(u64::BITS - x.leading_zeros());
        let units = match self.exp_mode {
            ExpMode::ByteLength => bits.div_ceil(8) - 1,
            ExpMode::Log2 => bits - 1,
        };
        Ok(self.exp_base + self.exp_per_unit * units)
    }

    /// `365 + 8 bytes` for a LOG of `bytes` bytes.
    pub fn log_gas(&self, bytes: u64) -> u64 {
        self.log_base + self.log_per_byte * bytes
    }

    /// Cheapest possible cost of one operation.
    pub fn min_cost(&self, op: Op) -> u64 {
        match op {
            Op::Add => self.add,
            Op::Sub => self.sub,
            Op::Mul => self.mul,
            Op::Div => self.div,
            Op::Exp => self.exp_gas(1).expect("operand 1 is valid"),
            Op::Log => self.log_gas(0),
        }
    }
}

/// Operation counts and totals for one mechanism's refund.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GasReport {
    pub mechanism: Mechanism,
    /// Count per operation, in [`Op::ALL`] order, zeros included.
    pub op_counts: Vec<(Op, u64)>,
    /// `sum count * min_cost(op)` under the default table.
    pub total_min: u64,
    /// The published total, kept verbatim.
    pub paper_total: u64,
    /// The published total is stated as a lower bound.
    pub paper_total_at_least: bool,
}

impl GasReport {
    pub fn count(&self, op: Op) -> u64 {
        self.op_counts.iter().find(|(o, _)| *o == op).map_or(0, |(_, n)| *n)
    }

    /// Published and computed totals disagree.
    pub fn inconsistent(&self) -> bool {
        self.total_min != self.paper_total
    }

    /// Total under `table`, with every EXP on operand `exp_arg` and every LOG
    /// over `log_bytes` bytes.
    pub fn total_with(&self, table: &OpCostTable, exp_arg: u64, log_bytes: u64) -> Result<u64> {
        let mut total = 0;
        for &(op, n) in &self.op_counts {
            let unit = match op {
                Op::Exp => table.exp_gas(exp_arg)?,
                Op::Log => table.log_gas(log_bytes),
                _ => table.min_cost(op),
            };
            total += n * unit;
        }
        Ok(total)
    }
}

/// Gas report with the published operation counts.
pub fn mechanism_gas(mechanism: Mechanism) -> Result<GasReport> {
    // ADD SUB MUL DIV EXP LOG, published total, "at least"
    let (counts, paper_total, at_least): ([u64; 6], u64, bool) = match mechanism {
        Mechanism::Pps => ([2, 2, 2, 2, 2, 2], 407, false),
        Mechanism::Pprg => ([2, 0, 2, 1, 0, 0], 21, false),
        Mechanism::Ppre => ([2, 0, 2, 1, 1, 0], 31, true),
        Mechanism::Pprp => ([2, 0, 3, 2, 0, 0], 31, false),
        other => return Err(Error::UnsupportedMechanism(other)),
    };
    let table = OpCostTable::default();
    let op_counts: Vec<(Op, u64)> = Op::ALL.into_iter().zip(counts).collect();
    let total_min = op_counts.iter().map(|&(op, n)| n * table.min_cost(op)).sum();
    Ok(GasReport {
        mechanism,
        op_counts,
        total_min,
        paper_total,
        paper_total_at_least: at_least,
    })
}

/// Reports for PPS, PPRG, PPRE and PPRP, in that order.
pub fn all_reports() -> Vec<GasReport> {
    [Mechanism::Pps, Mechanism::Pprg, Mechanism::Ppre, Mechanism::Pprp]
        .into_iter()
        .map(|m| mechanism_gas(m).expect("gas model exists"))
        .collect()
}
