//! Long-format table ingestion and balanced dense indexing.
//!
//! A raw table holds one observation per row: one column per facet plus a
//! numeric response column. [`validate_and_index`] checks the table against
//! a design, resolves level labels to dense indices, and produces a
//! [`Dataset`] whose cells are addressable by facet level. Balance is
//! required: every combination of facet levels must appear exactly once.

use std::collections::HashMap;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::design::DesignSpec;

/// Ways a table can fail validation against a design.
#[derive(Debug, Error)]
pub enum DataError {
    /// A design facet or the response has no matching column.
    #[error("column `{0}` not found in table")]
    MissingColumn(String),
    /// Several columns match a name case-insensitively and none exactly.
    #[error("column name `{0}` is ambiguous in this table")]
    AmbiguousColumn(String),
    /// The response cell cannot be read as a finite number.
    #[error("non-numeric response `{value}` at data row {row}")]
    NonNumericResponse { row: usize, value: String },
    /// The table has a header but no data rows.
    #[error("table has no data rows")]
    EmptyTable,
    /// A level combination never occurs.
    #[error("unbalanced table: no observation for {0}")]
    Unbalanced(String),
    /// A level combination occurs more than once.
    #[error("duplicate observation for {0}")]
    DuplicateObservation(String),
    /// A nested facet shows a different number of levels under some parent.
    #[error("facet `{facet}` has {found} levels under {parent}, expected {expected}")]
    NestedCountMismatch {
        facet: String,
        parent: String,
        found: usize,
        expected: usize,
    },
    /// Dense cell data does not match the declared level counts.
    #[error("expected {expected} cells, found {found}")]
    CellCountMismatch { expected: usize, found: usize },
    /// The underlying file could not be read or parsed as CSV.
    #[error("failed to read table: {0}")]
    Csv(#[from] csv::Error),
}

/// A long-format table: label columns plus one parsed response column.
#[derive(Debug, Clone)]
pub struct RawTable {
    columns: Vec<(String, Vec<String>)>,
    response_name: String,
    responses: Vec<f64>,
}

impl RawTable {
    /// Reads a CSV file with a header row.
    pub fn from_csv_path(path: &Path, response: &str) -> Result<Self, DataError> {
        let reader = csv::Reader::from_path(path)?;
        Self::from_csv_reader(reader, response)
    }

    /// Reads CSV from any reader; the first row is the header.
    pub fn from_reader<R: io::Read>(rdr: R, response: &str) -> Result<Self, DataError> {
        Self::from_csv_reader(csv::Reader::from_reader(rdr), response)
    }

    fn from_csv_reader<R: io::Read>(
        mut reader: csv::Reader<R>,
        response: &str,
    ) -> Result<Self, DataError> {
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            rows.push(record.iter().map(str::to_string).collect::<Vec<String>>());
        }
        Self::from_records(headers, rows, response)
    }

    /// Builds a table from already-split header and row values.
    pub fn from_records(
        headers: Vec<String>,
        rows: Vec<Vec<String>>,
        response: &str,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::EmptyTable);
        }
        let resp_col = find_column(&headers, response)?;
        let mut responses = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let raw = row.get(resp_col).map(String::as_str).unwrap_or("");
            let value: f64 = raw
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DataError::NonNumericResponse {
                    row: i + 1,
                    value: raw.to_string(),
                })?;
            responses.push(value);
        }
        let columns = headers
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != resp_col)
            .map(|(c, name)| {
                let values = rows
                    .iter()
                    .map(|r| r.get(c).cloned().unwrap_or_default())
                    .collect();
                (name.clone(), values)
            })
            .collect();
        Ok(RawTable {
            columns,
            response_name: headers[resp_col].clone(),
            responses,
        })
    }

    /// Number of data rows.
    pub fn n_rows(&self) -> usize {
        self.responses.len()
    }

    /// Name of the response column as spelled in the header.
    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Parsed response values in row order.
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Label column with this name, matched case-insensitively.
    pub fn column(&self, name: &str) -> Result<&[String], DataError> {
        let names: Vec<String> = self.columns.iter().map(|(n, _)| n.clone()).collect();
        let idx = find_column(&names, name)?;
        Ok(&self.columns[idx].1)
    }
}

// Exact match wins; otherwise a unique case-insensitive match.
fn find_column(names: &[String], wanted: &str) -> Result<usize, DataError> {
    if let Some(i) = names.iter().position(|n| n == wanted) {
        return Ok(i);
    }
    let close: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.eq_ignore_ascii_case(wanted))
        .map(|(i, _)| i)
        .collect();
    match close.as_slice() {
        [i] => Ok(*i),
        [] => Err(DataError::MissingColumn(wanted.to_string())),
        _ => Err(DataError::AmbiguousColumn(wanted.to_string())),
    }
}

/// Number of levels per facet, in design facet order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetLevels {
    counts: Vec<usize>,
}

impl FacetLevels {
    /// Wraps per-facet level counts.
    pub fn new(counts: Vec<usize>) -> Self {
        FacetLevels { counts }
    }

    /// Level count of one facet. For a nested facet this is the count
    /// within each combination of its parents.
    pub fn count(&self, facet: usize) -> usize {
        self.counts[facet]
    }

    /// All counts in design facet order.
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total number of cells in the dense table.
    pub fn n_cells(&self) -> usize {
        self.counts.iter().product()
    }
}

/// Level labels of one facet.
#[derive(Debug, Clone)]
pub enum LevelLabels {
    /// One label list shared across the table; used for top-level facets.
    Shared(Vec<String>),
    /// One label list per combination of nesting-parent levels, indexed by
    /// the parent combination's row-major flat index.
    PerParent(Vec<Vec<String>>),
}

/// One level of an object facet, with its position in the dense table.
#[derive(Debug, Clone)]
pub struct ObjectLevel {
    /// Label shown in reports; qualified by parent levels when the bare
    /// label is not unique.
    pub display: String,
    /// Sort key, compared elementwise and numerically where possible.
    pub key: Vec<String>,
    /// Fixed (facet, slot) coordinates of this level.
    pub index: Vec<(usize, usize)>,
}

/// A balanced dense table addressed by facet levels.
#[derive(Debug, Clone)]
pub struct Dataset {
    design: DesignSpec,
    levels: FacetLevels,
    labels: Vec<LevelLabels>,
    cells: Vec<f64>,
    strides: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from dense cells in row-major design-facet order.
    ///
    /// Levels get generated labels `1..=n`; for a nested facet the same
    /// labels repeat under every parent combination.
    pub fn from_dense(
        design: DesignSpec,
        counts: Vec<usize>,
        cells: Vec<f64>,
    ) -> Result<Self, DataError> {
        let expected: usize = counts.iter().product();
        if counts.len() != design.facets().len() || cells.len() != expected {
            return Err(DataError::CellCountMismatch {
                expected,
                found: cells.len(),
            });
        }
        let numbered = |n: usize| (1..=n).map(|i| i.to_string()).collect::<Vec<String>>();
        let labels = (0..counts.len())
            .map(|f| {
                let parents = design.nesting_closure(f);
                if parents.is_empty() {
                    LevelLabels::Shared(numbered(counts[f]))
                } else {
                    let combos: usize = parents.iter().map(|&p| counts[p]).product();
                    LevelLabels::PerParent(vec![numbered(counts[f]); combos])
                }
            })
            .collect();
        let strides = strides_for(&counts);
        Ok(Dataset {
            design,
            levels: FacetLevels::new(counts),
            labels,
            cells,
            strides,
        })
    }

    /// The design this dataset was validated against.
    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    /// Level counts per facet.
    pub fn levels(&self) -> &FacetLevels {
        &self.levels
    }

    /// Dense cells in row-major design-facet order.
    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Number of observations.
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Row-major strides per facet.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Flat index of a full level combination.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Value at a full level combination.
    pub fn cell(&self, idx: &[usize]) -> f64 {
        self.cells[self.flat_index(idx)]
    }

    /// Label of one facet level. For a nested facet, `parent_flat` is the
    /// row-major flat index over its parents' slots; pass 0 otherwise.
    pub fn level_label(&self, facet: usize, parent_flat: usize, slot: usize) -> &str {
        match &self.labels[facet] {
            LevelLabels::Shared(ls) => &ls[slot],
            LevelLabels::PerParent(per) => &per[parent_flat][slot],
        }
    }

    /// Flat index over a facet's parents given a full level combination.
    pub fn parent_flat(&self, facet: usize, idx: &[usize]) -> usize {
        let parents = self.design.nesting_closure(facet);
        let mut flat = 0;
        for &p in parents {
            flat = flat * self.levels.count(p) + idx[p];
        }
        flat
    }

    /// Levels of an object facet in dense order, one per combination of
    /// the facet and its nesting parents.
    pub fn object_levels(&self, facet: usize) -> Vec<ObjectLevel> {
        let parents = self.design.nesting_closure(facet);
        // Outermost parent first so enumeration groups levels by parent.
        let mut outer_first: Vec<usize> = parents.to_vec();
        outer_first.sort_by_key(|&p| (self.design.nesting_closure(p).len(), p));
        let mut dims = outer_first.clone();
        dims.push(facet);

        let mut combos = vec![vec![0usize; dims.len()]];
        for (d, &dim) in dims.iter().enumerate() {
            let mut next = Vec::new();
            for c in combos {
                for slot in 0..self.levels.count(dim) {
                    let mut c2 = c.clone();
                    c2[d] = slot;
                    next.push(c2);
                }
            }
            combos = next;
        }

        let own_labels: Vec<(Vec<usize>, String)> = combos
            .iter()
            .map(|c| {
                let mut full = vec![0usize; self.design.facets().len()];
                for (d, &dim) in dims.iter().enumerate() {
                    full[dim] = c[d];
                }
                let pf = self.parent_flat(facet, &full);
                let own = self.level_label(facet, pf, full[facet]).to_string();
                (full, own)
            })
            .collect();
        let mut seen: Vec<&str> = own_labels.iter().map(|(_, l)| l.as_str()).collect();
        seen.sort_unstable();
        let unique = seen.windows(2).all(|w| w[0] != w[1]);

        own_labels
            .into_iter()
            .map(|(full, own)| {
                let index: Vec<(usize, usize)> = dims.iter().map(|&d| (d, full[d])).collect();
                if unique || parents.is_empty() {
                    ObjectLevel {
                        display: own.clone(),
                        key: vec![own],
                        index,
                    }
                } else {
                    let pls: Vec<(String, String)> = parents
                        .iter()
                        .map(|&p| {
                            let ppf = self.parent_flat(p, &full);
                            (
                                self.design.facets()[p].name.clone(),
                                self.level_label(p, ppf, full[p]).to_string(),
                            )
                        })
                        .collect();
                    let ctx = pls
                        .into_iter()
                        .map(|(n, l)| format!("{n} {l}"))
                        .collect::<Vec<_>>()
                        .join(", ");
                    // Sort key runs outermost parent first so nested levels
                    // group under their parents.
                    let mut key: Vec<String> = outer_first
                        .iter()
                        .map(|&p| {
                            let ppf = self.parent_flat(p, &full);
                            self.level_label(p, ppf, full[p]).to_string()
                        })
                        .collect();
                    key.push(own.clone());
                    ObjectLevel {
                        display: format!("{own} ({ctx})"),
                        key,
                        index,
                    }
                }
            })
            .collect()
    }
}

fn strides_for(counts: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; counts.len()];
    for f in (0..counts.len().saturating_sub(1)).rev() {
        strides[f] = strides[f + 1] * counts[f + 1];
    }
    strides
}

/// Sorts labels ascending: numerically when every label parses as an
/// integer, lexicographically otherwise.
pub fn sort_labels(labels: &mut [String]) {
    let nums: Option<Vec<i64>> = labels.iter().map(|l| l.trim().parse().ok()).collect();
    match nums {
        Some(_) => labels.sort_by_key(|l| l.trim().parse::<i64>().unwrap()),
        None => labels.sort_unstable(),
    }
}

/// Compares two label keys elementwise, numerically where both sides parse.
pub fn compare_label_keys(a: &[String], b: &[String]) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    for (x, y) in a.iter().zip(b) {
        let ord = match (x.trim().parse::<i64>(), y.trim().parse::<i64>()) {
            (Ok(nx), Ok(ny)) => nx.cmp(&ny),
            _ => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    a.len().cmp(&b.len())
}

/// Validates a raw table against a design and builds the dense dataset.
///
/// Facet columns are matched case-insensitively. Levels of a top-level
/// facet are shared across the table; levels of a nested facet are local
/// to each combination of its parents, so the same label under different
/// parents means different levels.
pub fn validate_and_index(raw: &RawTable, design: &DesignSpec) -> Result<Dataset, DataError> {
    let n_rows = raw.n_rows();
    if n_rows == 0 {
        return Err(DataError::EmptyTable);
    }
    let k = design.facets().len();
    let mut cols: Vec<&[String]> = Vec::with_capacity(k);
    for f in design.facets() {
        cols.push(raw.column(&f.name)?);
    }

    // Parents resolve before children: order by nesting depth.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by_key(|&f| design.nesting_closure(f).len());

    let mut counts = vec![0usize; k];
    let mut labels: Vec<Option<LevelLabels>> = vec![None; k];
    let mut row_slot: Vec<Vec<usize>> = vec![Vec::new(); k];

    for &f in &order {
        let parents = design.nesting_closure(f);
        if parents.is_empty() {
            let mut uniq: Vec<String> = Vec::new();
            for v in cols[f] {
                if !uniq.contains(v) {
                    uniq.push(v.clone());
                }
            }
            sort_labels(&mut uniq);
            let map: HashMap<&str, usize> = uniq
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i))
                .collect();
            row_slot[f] = cols[f].iter().map(|v| map[v.as_str()]).collect();
            counts[f] = uniq.len();
            labels[f] = Some(LevelLabels::Shared(uniq));
        } else {
            let combo_count: usize = parents.iter().map(|&p| counts[p]).product();
            let mut per: Vec<Vec<String>> = vec![Vec::new(); combo_count];
            for row in 0..n_rows {
                let v = &cols[f][row];
                let bucket = &mut per[parent_flat_for(parents, &counts, &row_slot, row)];
                if !bucket.contains(v) {
                    bucket.push(v.clone());
                }
            }
            let expected = per.iter().map(Vec::len).max().unwrap_or(0);
            for (combo, bucket) in per.iter_mut().enumerate() {
                // A combo with no rows at all surfaces later as Unbalanced.
                if !bucket.is_empty() && bucket.len() != expected {
                    return Err(DataError::NestedCountMismatch {
                        facet: design.facets()[f].name.clone(),
                        parent: describe_parent_combo(design, &labels, &counts, parents, combo),
                        found: bucket.len(),
                        expected,
                    });
                }
                sort_labels(bucket);
            }
            let maps: Vec<HashMap<&str, usize>> = per
                .iter()
                .map(|b| b.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect())
                .collect();
            let slots: Vec<usize> = (0..n_rows)
                .map(|row| {
                    maps[parent_flat_for(parents, &counts, &row_slot, row)][cols[f][row].as_str()]
                })
                .collect();
            row_slot[f] = slots;
            counts[f] = expected;
            labels[f] = Some(LevelLabels::PerParent(per));
        }
    }

    let labels: Vec<LevelLabels> = labels.into_iter().map(Option::unwrap).collect();
    let total: u128 = counts.iter().map(|&c| c as u128).product();

    // Duplicate and missing checks work on sorted flat indices, so a wildly
    // unbalanced table never allocates its full cross product.
    let mut strides_u = vec![1u128; k];
    for f in (0..k.saturating_sub(1)).rev() {
        strides_u[f] = strides_u[f + 1] * counts[f + 1] as u128;
    }
    let flat_of = |row: usize| -> u128 {
        (0..k)
            .map(|f| row_slot[f][row] as u128 * strides_u[f])
            .sum()
    };
    let mut flats: Vec<(u128, usize)> = (0..n_rows).map(|row| (flat_of(row), row)).collect();
    flats.sort_unstable();
    for w in flats.windows(2) {
        if w[0].0 == w[1].0 {
            let row = w[1].1;
            let idx: Vec<usize> = (0..k).map(|f| row_slot[f][row]).collect();
            return Err(DataError::DuplicateObservation(describe_cell(
                design, &labels, &counts, &idx,
            )));
        }
    }
    if (n_rows as u128) < total {
        let mut missing = total;
        for (i, &(flat, _)) in flats.iter().enumerate() {
            if flat != i as u128 {
                missing = i as u128;
                break;
            }
        }
        if missing == total {
            missing = n_rows as u128;
        }
        let idx: Vec<usize> = (0..k)
            .map(|f| ((missing / strides_u[f]) % counts[f] as u128) as usize)
            .collect();
        return Err(DataError::Unbalanced(describe_cell(
            design, &labels, &counts, &idx,
        )));
    }

    let strides = strides_for(&counts);
    let mut cells = vec![0.0f64; n_rows];
    for (row, &value) in raw.responses().iter().enumerate() {
        let flat: usize = (0..k).map(|f| row_slot[f][row] * strides[f]).sum();
        cells[flat] = value;
    }
    Ok(Dataset {
        design: design.clone(),
        levels: FacetLevels::new(counts),
        labels,
        cells,
        strides,
    })
}

fn parent_flat_for(
    parents: &[usize],
    counts: &[usize],
    row_slot: &[Vec<usize>],
    row: usize,
) -> usize {
    let mut flat = 0;
    for &p in parents {
        flat = flat * counts[p] + row_slot[p][row];
    }
    flat
}

// Falls back to a 1-based slot number when a label is unavailable, which
// can happen for a cell in a parent combo no row ever reached.
fn label_at(
    design: &DesignSpec,
    labels: &[LevelLabels],
    counts: &[usize],
    idx: &[usize],
    facet: usize,
) -> String {
    let found = match &labels[facet] {
        LevelLabels::Shared(ls) => ls.get(idx[facet]),
        LevelLabels::PerParent(per) => {
            let mut flat = 0;
            for &p in design.nesting_closure(facet) {
                flat = flat * counts[p] + idx[p];
            }
            per.get(flat).and_then(|b| b.get(idx[facet]))
        }
    };
    found
        .cloned()
        .unwrap_or_else(|| format!("#{}", idx[facet] + 1))
}

fn describe_cell(
    design: &DesignSpec,
    labels: &[LevelLabels],
    counts: &[usize],
    idx: &[usize],
) -> String {
    design
        .facets()
        .iter()
        .enumerate()
        .map(|(f, facet)| {
            format!(
                "{}={}",
                facet.name,
                label_at(design, labels, counts, idx, f)
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

fn describe_parent_combo(
    design: &DesignSpec,
    labels: &[Option<LevelLabels>],
    counts: &[usize],
    parents: &[usize],
    combo: usize,
) -> String {
    let mut rem = combo;
    let mut idx = vec![0usize; design.facets().len()];
    for &p in parents.iter().rev() {
        idx[p] = rem % counts[p];
        rem /= counts[p];
    }
    // Parents of a parent sit inside `parents` too, so every label needed
    // here is already resolved.
    let resolved: Vec<LevelLabels> = labels
        .iter()
        .map(|l| l.clone().unwrap_or(LevelLabels::Shared(Vec::new())))
        .collect();
    parents
        .iter()
        .map(|&p| {
            format!(
                "{}={}",
                design.facets()[p].name,
                label_at(design, &resolved, counts, &idx, p)
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}
