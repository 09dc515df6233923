//! Exhaustive search for 4×4 clause gadgets over a finite value set.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::{self, Exec};
use crate::transforms::{verify_cells, PatternQubo};

pub const DEFAULT_CAP: u64 = 100_000_000;

const CELLS: u32 = 10;
const CHUNK: u64 = 1 << 14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("value set is empty")]
    EmptyValues,
    #[error("clause type must be 0..=3, got {0}")]
    InvalidType(usize),
    #[error("{values}^10 candidates exceed the cap of {cap}")]
    CapExceeded { values: usize, cap: u64 },
    #[error("value set contains a non-finite number")]
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    pub values: Vec<f64>,
    pub type_id: usize,
    pub cap: u64,
}

impl SearchSpec {
    pub fn new(values: Vec<f64>, type_id: usize) -> Self {
        SearchSpec { values, type_id, cap: DEFAULT_CAP }
    }
}

/// Every pattern over `spec.values` that passes the gadget check.
///
/// Values are sorted ascending and deduplicated; candidates are enumerated
/// in lexicographic order of the cells `(aa, ab, ac, aK, bb, bc, bK, cc, cK,
/// KK)`, first cell most significant, and returned in that order.
pub fn search_patterns(spec: &SearchSpec) -> Result<Vec<PatternQubo>, SearchError> {
    search_patterns_with(spec, Exec::default())
}

pub fn search_patterns_with(spec: &SearchSpec, exec: Exec) -> Result<Vec<PatternQubo>, SearchError> {
    if spec.type_id > 3 {
        return Err(SearchError::InvalidType(spec.type_id));
    }
    if spec.values.iter().any(|v| !v.is_finite()) {
        return Err(SearchError::NonFinite);
    }
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.is_empty() {
        return Err(SearchError::EmptyValues);
    }
    let base = values.len() as u64;
    let total = base
        .checked_pow(CELLS)
        .filter(|&t| t <= spec.cap)
        .ok_or(SearchError::CapExceeded { values: values.len(), cap: spec.cap })?;

    let chunks = total.div_ceil(CHUNK) as usize;
    let found = par::map_range(exec, chunks, |ci| {
        let start = ci as u64 * CHUNK;
        let end = (start + CHUNK).min(total);
        (start..end)
            .filter_map(|idx| {
                let cells = decode_index(idx, &values);
                verify_cells(&cells, spec.type_id)
                    .then(|| PatternQubo::from_cells(spec.type_id, cells))
            })
            .collect::<Vec<_>>()
    });
    Ok(found.into_iter().flatten().collect())
}

fn decode_index(mut idx: u64, values: &[f64]) -> [f64; 10] {
    let base = values.len() as u64;
    let mut cells = [0.0; 10];
    for cell in cells.iter_mut().rev() {
        *cell = values[(idx % base) as usize];
        idx /= base;
    }
    cells
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatternCatalog {
    pub type_id: usize,
    pub values: Vec<f64>,
    pub count: usize,
    pub patterns: Vec<[[f64; 4]; 4]>,
}

impl PatternCatalog {
    pub fn new(spec: &SearchSpec, found: &[PatternQubo]) -> Self {
        PatternCatalog {
            type_id: spec.type_id,
            values: spec.values.clone(),
            count: found.len(),
            patterns: found.iter().map(|p| p.entries).collect(),
        }
    }
}
