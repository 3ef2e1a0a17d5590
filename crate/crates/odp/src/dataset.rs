//! Database records, CSV import/export, and synthetic dataset generation.

use std::fmt::Write as _;

use rand::{Rng, RngExt};
use thiserror::Error;

/// One database row: a unique id plus a type in `{1..k}` (or an item in
/// `{1..m}` for heavy hitters).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub record_id: u64,
    pub item_type: u64,
}

impl Record {
    /// Fixed-width external cell: id and type packed into one word-pair so
    /// cell size cannot leak type information.
    pub fn pack(self) -> [u64; 2] {
        [self.record_id, self.item_type]
    }

    pub fn unpack(cell: [u64; 2]) -> Record {
        Record { record_id: cell[0], item_type: cell[1] }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("line {line}: expected `record_id,item_type`")]
    Malformed { line: usize },
    #[error("line {line}: invalid number")]
    BadNumber { line: usize },
    #[error("duplicate record id {id}")]
    DuplicateId { id: u64 },
    #[error("record {id} has type {item_type}, outside the declared domain 1..={domain}")]
    TypeOutOfDomain { id: u64, item_type: u64, domain: u64 },
    #[error("dataset is empty")]
    Empty,
}

/// A sequence of records with unique ids. Domain membership of types is
/// validated against the declared `k` (or `m`) at query time, where reserved
/// values `k+1` (dummy) and `k+2` (sentinel) must not appear in user data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Database {
    records: Vec<Record>,
}

impl Database {
    pub fn new(records: Vec<Record>) -> Result<Self, DatasetError> {
        if records.is_empty() {
            return Err(DatasetError::Empty);
        }
        let mut ids: Vec<u64> = records.iter().map(|r| r.record_id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(DatasetError::DuplicateId { id: w[0] });
        }
        Ok(Database { records })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Checks every type lies in `1..=domain`.
    pub fn check_domain(&self, domain: u64) -> Result<(), DatasetError> {
        for r in &self.records {
            if r.item_type == 0 || r.item_type > domain {
                return Err(DatasetError::TypeOutOfDomain {
                    id: r.record_id,
                    item_type: r.item_type,
                    domain,
                });
            }
        }
        Ok(())
    }

    /// Exact histogram over `1..=k`; the brute-force oracle for the noisy
    /// algorithms.
    pub fn exact_histogram(&self, k: u64) -> Vec<u64> {
        let mut counts = vec![0u64; k as usize];
        for r in &self.records {
            counts[(r.item_type - 1) as usize] += 1;
        }
        counts
    }

    /// Exact distinct type count.
    pub fn exact_distinct(&self) -> u64 {
        let mut types: Vec<u64> = self.records.iter().map(|r| r.item_type).collect();
        types.sort_unstable();
        types.dedup();
        types.len() as u64
    }
}

/// Parses the `record_id,item_type` CSV format. An optional header line is
/// tolerated. Errors carry 1-based line numbers.
pub fn parse_csv(text: &str) -> Result<Database, DatasetError> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed == "record_id,item_type" {
            continue;
        }
        let mut parts = trimmed.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(DatasetError::Malformed { line }),
        };
        let record_id = a.trim().parse().map_err(|_| DatasetError::BadNumber { line })?;
        let item_type = b.trim().parse().map_err(|_| DatasetError::BadNumber { line })?;
        records.push(Record { record_id, item_type });
    }
    Database::new(records)
}

/// Serializes with a header line; byte-identical for identical record lists.
pub fn to_csv(db: &Database) -> String {
    let mut out = String::from("record_id,item_type\n");
    for r in db.records() {
        writeln!(out, "{},{}", r.record_id, r.item_type).unwrap();
    }
    out
}

/// Type distribution for synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TypeDistribution {
    Uniform,
    Zipf { exponent: f64 },
}

/// Generates `n` records with ids `1..=n` and types drawn from `dist` over
/// `1..=domain`. Deterministic given the rng state.
pub fn generate(
    n: u64,
    domain: u64,
    dist: TypeDistribution,
    rng: &mut impl Rng,
) -> Database {
    assert!(n >= 1 && domain >= 1);
    let sample: Box<dyn FnMut(&mut dyn rand::Rng) -> u64> = match dist {
        TypeDistribution::Uniform => Box::new(move |r| r.random_range(1..=domain)),
        TypeDistribution::Zipf { exponent } => {
            let weights: Vec<f64> = (1..=domain).map(|i| (i as f64).powf(-exponent)).collect();
            let total: f64 = weights.iter().sum();
            let mut cdf = Vec::with_capacity(domain as usize);
            let mut acc = 0.0;
            for w in &weights {
                acc += w / total;
                cdf.push(acc);
            }
            Box::new(move |r| {
                let u: f64 = r.random();
                (cdf.partition_point(|&c| c < u) as u64).min(domain - 1) + 1
            })
        }
    };
    let mut sample = sample;
    let records = (1..=n)
        .map(|record_id| Record { record_id, item_type: sample(rng) })
        .collect();
    Database::new(records).expect("generated ids are unique")
}
