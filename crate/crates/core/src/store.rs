//! Columnar table with clustered keys.
//!
//! Every column holds 64-bit signed integers. Non-integer source data is
//! encoded at ingest: decimal strings are scaled by a per-column power of
//! ten, categorical strings become dictionary codes dense in first-seen
//! order. Missing values (empty CSV cells) map to [`NULL_SENTINEL`].
//!
//! Rows are addressed two ways: by position (0-based row id, the order rows
//! are laid out on "disk") and by *clustered key*, a `u64` that is unique per
//! row and kept sorted — row order and key order always agree. Key ranges are
//! the unit of range scans; the host index owns key allocation once built.
//!
//! Reads (`value`, `range_scan`, `point_lookup`) take `&self` and are safe to
//! run concurrently; `append`, `remove_keys` and the rekeying helpers take
//! `&mut self` and thus require exclusive access.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::compress::{pack_column, unpack_column, CompressionBlock};
use crate::error::{Error, Result};

/// Encoded representation of a missing value.
pub const NULL_SENTINEL: i64 = i64::MIN + 1;

/// Largest decimal-scaling exponent a column may use.
pub const MAX_EXPONENT: u32 = 6;

/// Unique, order-defining row address. Allocation is owned by the host
/// index: a 40-bit bucket-range prefix with a 24-bit counter suffix.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct ClusteredKey(pub u64);

impl fmt::Display for ClusteredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Order-preserving map from a signed column value to key space, used when
/// an ingest names an explicit key column.
pub fn key_from_value(v: i64) -> u64 {
    (v as u64) ^ (1 << 63)
}

/// Dictionary of a categorical column: codes are dense and assigned in
/// first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Dictionary {
    labels: Vec<String>,
    codes: HashMap<String, i64>,
}

impl Dictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut d = Dictionary::new();
        for label in labels {
            if d.codes.contains_key(&label) {
                return Err(Error::BadTableFile(format!(
                    "duplicate dictionary label {label:?}"
                )));
            }
            d.intern(&label);
        }
        Ok(d)
    }

    pub fn code_of(&self, label: &str) -> Option<i64> {
        self.codes.get(label).copied()
    }

    pub fn label_of(&self, code: i64) -> Option<&str> {
        usize::try_from(code).ok().and_then(|i| self.labels.get(i)).map(String::as_str)
    }

    /// Returns the existing code or assigns the next dense one.
    pub fn intern(&mut self, label: &str) -> i64 {
        if let Some(&c) = self.codes.get(label) {
            return c;
        }
        let code = self.labels.len() as i64;
        self.labels.push(label.to_string());
        self.codes.insert(label.to_string(), code);
        code
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// How a column's source values are encoded into `i64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnKind {
    Integer,
    /// Decimal strings scaled by `10^exponent` (exponent inferred at ingest,
    /// capped at [`MAX_EXPONENT`]; extra fraction digits are truncated).
    ScaledFloat { exponent: u32 },
    Categorical(Dictionary),
}

impl ColumnKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ColumnKind::Integer => "integer",
            ColumnKind::ScaledFloat { .. } => "scaled_float",
            ColumnKind::Categorical(_) => "categorical",
        }
    }
}

/// Ingest-time declaration of a column's kind; payload details (exponent,
/// dictionary) are inferred from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindHint {
    Integer,
    ScaledFloat,
    Categorical,
}

impl std::str::FromStr for KindHint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "int" | "integer" => Ok(KindHint::Integer),
            "float" | "scaled_float" | "decimal" => Ok(KindHint::ScaledFloat),
            "cat" | "categorical" | "string" => Ok(KindHint::Categorical),
            other => Err(Error::BadConfig(format!(
                "unknown column kind {other:?} (expected int, float or cat)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ColumnMeta {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone)]
enum ColumnData {
    Plain(Vec<i64>),
    Packed { blocks: Vec<CompressionBlock>, len: usize },
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Plain(v) => v.len(),
            ColumnData::Packed { len, .. } => *len,
        }
    }

    fn get(&self, i: usize) -> i64 {
        match self {
            ColumnData::Plain(v) => v[i],
            ColumnData::Packed { blocks, .. } => {
                blocks[i / crate::compress::BLOCK_LEN].get(i % crate::compress::BLOCK_LEN)
            }
        }
    }

    fn to_vec(&self) -> Vec<i64> {
        match self {
            ColumnData::Plain(v) => v.clone(),
            ColumnData::Packed { blocks, .. } => unpack_column(blocks),
        }
    }

    fn from_values(values: Vec<i64>, compressed: bool) -> Self {
        if compressed {
            ColumnData::Packed { len: values.len(), blocks: pack_column(&values) }
        } else {
            ColumnData::Plain(values)
        }
    }

    fn bytes(&self) -> u64 {
        match self {
            ColumnData::Plain(v) => v.len() as u64 * 8,
            ColumnData::Packed { blocks, .. } => blocks.iter().map(|b| b.size_bytes()).sum(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Column {
    pub meta: ColumnMeta,
    data: ColumnData,
}

impl Column {
    pub fn bytes(&self) -> u64 {
        self.data.bytes()
    }

    pub(crate) fn from_values(meta: ColumnMeta, values: Vec<i64>, compressed: bool) -> Column {
        Column { meta, data: ColumnData::from_values(values, compressed) }
    }

    pub(crate) fn blocks(&self) -> Vec<CompressionBlock> {
        match &self.data {
            ColumnData::Plain(v) => pack_column(v),
            ColumnData::Packed { blocks, .. } => blocks.clone(),
        }
    }
}

/// Columnar table clustered by key.
#[derive(Debug, Clone)]
pub struct Table {
    columns: Vec<Column>,
    keys: Vec<ClusteredKey>,
    compressed: bool,
}

impl Table {
    /// Builds a table from fully encoded column vectors. `keys` defaults to
    /// ordinal 0..n; rows are sorted by key.
    pub fn from_encoded(
        metas: Vec<ColumnMeta>,
        values: Vec<Vec<i64>>,
        keys: Option<Vec<ClusteredKey>>,
        compressed: bool,
    ) -> Result<Self> {
        if metas.len() != values.len() {
            return Err(Error::BadConfig(format!(
                "{} column metas but {} value vectors",
                metas.len(),
                values.len()
            )));
        }
        let n = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::BadConfig("ragged column lengths".into()));
        }
        let keys = match keys {
            Some(k) => {
                if k.len() != n {
                    return Err(Error::BadConfig(format!(
                        "{} keys for {n} rows",
                        k.len()
                    )));
                }
                k
            }
            None => (0..n as u64).map(ClusteredKey).collect(),
        };

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by_key(|&i| keys[i]);
        for w in order.windows(2) {
            if keys[w[0]] == keys[w[1]] {
                return Err(Error::DuplicateKeys(vec![keys[w[0]].0]));
            }
        }

        let sorted_keys: Vec<ClusteredKey> = order.iter().map(|&i| keys[i]).collect();
        let columns = metas
            .into_iter()
            .zip(values)
            .map(|(meta, vals)| {
                let sorted: Vec<i64> = order.iter().map(|&i| vals[i]).collect();
                Column { meta, data: ColumnData::from_values(sorted, compressed) }
            })
            .collect();
        Ok(Table { columns, keys: sorted_keys, compressed })
    }

    pub(crate) fn from_parts(
        columns: Vec<Column>,
        keys: Vec<ClusteredKey>,
        compressed: bool,
    ) -> Result<Self> {
        for c in &columns {
            if c.data.len() != keys.len() {
                return Err(Error::BadTableFile(format!(
                    "column {:?} holds {} values for {} keys",
                    c.meta.name,
                    c.data.len(),
                    keys.len()
                )));
            }
        }
        for w in keys.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::BadTableFile(format!(
                    "keys not strictly increasing at {} .. {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Table { columns, keys, compressed })
    }

    pub fn row_count(&self) -> usize {
        self.keys.len()
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn is_compressed(&self) -> bool {
        self.compressed
    }

    pub fn set_compressed(&mut self, compressed: bool) {
        if self.compressed == compressed {
            return;
        }
        self.compressed = compressed;
        for c in &mut self.columns {
            c.data = ColumnData::from_values(c.data.to_vec(), compressed);
        }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn meta(&self, col: usize) -> &ColumnMeta {
        &self.columns[col].meta
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.meta.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn value(&self, col: usize, row: usize) -> i64 {
        self.columns[col].data.get(row)
    }

    /// Decoded copy of one column in row order.
    pub fn column_values(&self, col: usize) -> Vec<i64> {
        self.columns[col].data.to_vec()
    }

    pub fn keys(&self) -> &[ClusteredKey] {
        &self.keys
    }

    pub fn key_at(&self, row: usize) -> ClusteredKey {
        self.keys[row]
    }

    /// Total stored bytes across columns (packed size when compressed).
    pub fn value_bytes(&self) -> u64 {
        self.columns.iter().map(Column::bytes).sum()
    }

    /// Positional range of rows whose key lies in `[lo, hi)`.
    pub fn rows_in_key_range(&self, lo: ClusteredKey, hi: ClusteredKey) -> std::ops::Range<usize> {
        let start = self.keys.partition_point(|&k| k < lo);
        let end = self.keys.partition_point(|&k| k < hi);
        start..end.max(start)
    }

    /// Scans rows with key in `[key_lo, key_hi)`. With a predicate
    /// `(column, value_lo, value_hi)` only rows whose column value lies in
    /// `[value_lo, value_hi)` are returned. The second result is the number
    /// of records touched by the scan (pre-filter).
    pub fn range_scan(
        &self,
        key_lo: ClusteredKey,
        key_hi: ClusteredKey,
        predicate: Option<(usize, i64, i64)>,
    ) -> (Vec<usize>, u64) {
        let rows = self.rows_in_key_range(key_lo, key_hi);
        let touched = rows.len() as u64;
        let matches = match predicate {
            None => rows.collect(),
            Some((col, lo, hi)) => {
                let data = &self.columns[col].data;
                rows.filter(|&r| {
                    let v = data.get(r);
                    lo <= v && v < hi
                })
                .collect()
            }
        };
        (matches, touched)
    }

    /// Row id holding `key`, if present.
    pub fn point_lookup(&self, key: ClusteredKey) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }

    /// Encodes one raw string under a finalized column kind. Read-only: an
    /// unseen categorical label is an error. Extra fraction digits beyond the
    /// column exponent are truncated toward zero.
    pub fn encode_value(&self, col: usize, raw: &str) -> Result<i64> {
        let meta = &self.columns[col].meta;
        encode_with_kind(&meta.kind, &meta.name, raw, 0)
    }

    /// Encodes a full raw row for [`Table::append`], interning new
    /// categorical labels. `raw` is in table column order.
    pub fn encode_row_for_append(&mut self, raw: &[&str]) -> Result<Vec<i64>> {
        if raw.len() != self.columns.len() {
            return Err(Error::BadConfig(format!(
                "row holds {} values, table has {} columns",
                raw.len(),
                self.columns.len()
            )));
        }
        let mut out = Vec::with_capacity(raw.len());
        for (c, &cell) in raw.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                out.push(NULL_SENTINEL);
                continue;
            }
            let name = self.columns[c].meta.name.clone();
            match &mut self.columns[c].meta.kind {
                ColumnKind::Categorical(dict) => out.push(dict.intern(cell)),
                kind => out.push(encode_with_kind(kind, &name, cell, 0)?),
            }
        }
        Ok(out)
    }

    /// Appends encoded rows with caller-chosen keys. Atomic: if any key
    /// duplicates an existing one (or another in the batch) nothing changes
    /// and the offending keys are reported.
    pub fn append(&mut self, rows: &[(ClusteredKey, Vec<i64>)]) -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        for (_, vals) in rows {
            if vals.len() != self.columns.len() {
                return Err(Error::BadConfig(format!(
                    "row holds {} values, table has {} columns",
                    vals.len(),
                    self.columns.len()
                )));
            }
        }
        let mut offenders: Vec<u64> = Vec::new();
        let mut batch: Vec<ClusteredKey> = rows.iter().map(|(k, _)| *k).collect();
        batch.sort_unstable();
        for w in batch.windows(2) {
            if w[0] == w[1] {
                offenders.push(w[0].0);
            }
        }
        for k in &batch {
            if self.keys.binary_search(k).is_ok() {
                offenders.push(k.0);
            }
        }
        if !offenders.is_empty() {
            offenders.sort_unstable();
            offenders.dedup();
            return Err(Error::DuplicateKeys(offenders));
        }

        let mut values: Vec<Vec<i64>> =
            self.columns.iter().map(|c| c.data.to_vec()).collect();
        let mut keys: Vec<ClusteredKey> = std::mem::take(&mut self.keys);
        for (k, vals) in rows {
            keys.push(*k);
            for (c, &v) in vals.iter().enumerate() {
                values[c].push(v);
            }
        }
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_unstable_by_key(|&i| keys[i]);
        self.keys = order.iter().map(|&i| keys[i]).collect();
        for (c, vals) in values.into_iter().enumerate() {
            let sorted: Vec<i64> = order.iter().map(|&i| vals[i]).collect();
            self.columns[c].data = ColumnData::from_values(sorted, self.compressed);
        }
        Ok(())
    }

    /// Removes the rows addressed by `keys`. Atomic: if any key is absent
    /// nothing changes and the missing keys are reported.
    pub fn remove_keys(&mut self, keys: &[ClusteredKey]) -> Result<()> {
        if keys.is_empty() {
            return Ok(());
        }
        let mut doomed: Vec<usize> = Vec::with_capacity(keys.len());
        let mut missing: Vec<u64> = Vec::new();
        for k in keys {
            match self.keys.binary_search(k) {
                Ok(row) => doomed.push(row),
                Err(_) => missing.push(k.0),
            }
        }
        if !missing.is_empty() {
            missing.sort_unstable();
            missing.dedup();
            return Err(Error::MissingKeys(missing));
        }
        doomed.sort_unstable();
        doomed.dedup();

        let mut hole = vec![false; self.keys.len()];
        for &r in &doomed {
            hole[r] = true;
        }
        let kept: Vec<usize> = (0..self.keys.len()).filter(|&r| !hole[r]).collect();
        self.keys = kept.iter().map(|&r| self.keys[r]).collect();
        for c in &mut self.columns {
            let vals = c.data.to_vec();
            let sorted: Vec<i64> = kept.iter().map(|&r| vals[r]).collect();
            c.data = ColumnData::from_values(sorted, self.compressed);
        }
        Ok(())
    }

    /// Replaces every key (one per row, parallel to current row order) and
    /// re-sorts rows by the new keys. Used by host-index builds, which own
    /// key allocation.
    pub fn assign_keys(&mut self, new_keys: Vec<ClusteredKey>) -> Result<()> {
        if new_keys.len() != self.keys.len() {
            return Err(Error::BadConfig(format!(
                "{} keys for {} rows",
                new_keys.len(),
                self.keys.len()
            )));
        }
        let mut order: Vec<usize> = (0..new_keys.len()).collect();
        order.sort_unstable_by_key(|&i| new_keys[i]);
        for w in order.windows(2) {
            if new_keys[w[0]] == new_keys[w[1]] {
                return Err(Error::DuplicateKeys(vec![new_keys[w[0]].0]));
            }
        }
        self.keys = order.iter().map(|&i| new_keys[i]).collect();
        for c in &mut self.columns {
            let vals = c.data.to_vec();
            let sorted: Vec<i64> = order.iter().map(|&i| vals[i]).collect();
            c.data = ColumnData::from_values(sorted, self.compressed);
        }
        Ok(())
    }

    /// Rekeys the contiguous row slice currently holding keys in
    /// `[old_lo, old_hi)`. `new_keys[i]` replaces the key of the i-th row of
    /// the slice; the new keys must stay within `[old_lo, old_hi)` so global
    /// order outside the slice is untouched. Used by bucket splits.
    pub fn rekey_range(
        &mut self,
        old_lo: ClusteredKey,
        old_hi: ClusteredKey,
        new_keys: &[ClusteredKey],
    ) -> Result<()> {
        let rows = self.rows_in_key_range(old_lo, old_hi);
        if rows.len() != new_keys.len() {
            return Err(Error::BadConfig(format!(
                "{} new keys for {} rows in range",
                new_keys.len(),
                rows.len()
            )));
        }
        if new_keys.iter().any(|k| *k < old_lo || *k >= old_hi) {
            return Err(Error::BadConfig("rekeyed key escapes its range".into()));
        }
        let (start, end) = (rows.start, rows.end);
        let mut order: Vec<usize> = (0..new_keys.len()).collect();
        order.sort_unstable_by_key(|&i| new_keys[i]);
        for w in order.windows(2) {
            if new_keys[w[0]] == new_keys[w[1]] {
                return Err(Error::DuplicateKeys(vec![new_keys[w[0]].0]));
            }
        }
        for (slot, &src) in order.iter().enumerate() {
            self.keys[start + slot] = new_keys[src];
        }
        for c in &mut self.columns {
            let mut vals = c.data.to_vec();
            let slice: Vec<i64> = order.iter().map(|&src| vals[start + src]).collect();
            vals[start..end].copy_from_slice(&slice);
            c.data = ColumnData::from_values(vals, self.compressed);
        }
        debug_assert!(self.keys.windows(2).all(|w| w[0] < w[1]));
        Ok(())
    }
}

/// Encodes `raw` under `kind`; `row` (1-based data row, 0 when not ingesting)
/// only feeds error messages.
fn encode_with_kind(kind: &ColumnKind, column: &str, raw: &str, row: usize) -> Result<i64> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(NULL_SENTINEL);
    }
    let parse_err = |message: String| Error::Parse {
        row,
        column: column.to_string(),
        message,
    };
    match kind {
        ColumnKind::Integer => raw
            .parse::<i64>()
            .map_err(|e| parse_err(format!("{raw:?} is not a 64-bit integer ({e})"))),
        ColumnKind::ScaledFloat { exponent } => {
            let parts = DecimalParts::parse(raw)
                .map_err(|m| parse_err(format!("{raw:?} is not a decimal number ({m})")))?;
            parts
                .scale(*exponent)
                .ok_or_else(|| parse_err(format!("{raw:?} overflows at exponent {exponent}")))
        }
        ColumnKind::Categorical(dict) => dict.code_of(raw).ok_or_else(|| Error::UnseenCategory {
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// Sign/integer/fraction split of a plain decimal string.
struct DecimalParts {
    negative: bool,
    int_digits: String,
    frac_digits: String,
}

impl DecimalParts {
    fn parse(s: &str) -> std::result::Result<Self, String> {
        let (negative, rest) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match rest.split_once('.') {
            Some((i, f)) => (i, f),
            None => (rest, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err("no digits".into());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err("expected only digits around the decimal point".into());
        }
        Ok(DecimalParts {
            negative,
            int_digits: int_part.to_string(),
            frac_digits: frac_part.to_string(),
        })
    }

    /// Fraction digits that matter (trailing zeros dropped).
    fn significant_frac_len(&self) -> usize {
        self.frac_digits.trim_end_matches('0').len()
    }

    /// Value × 10^exponent, truncating extra fraction digits toward zero.
    /// `None` on i64 overflow.
    fn scale(&self, exponent: u32) -> Option<i64> {
        let mut acc: i64 = 0;
        for b in self.int_digits.bytes() {
            acc = acc.checked_mul(10)?.checked_add((b - b'0') as i64)?;
        }
        for i in 0..exponent as usize {
            let digit = self.frac_digits.as_bytes().get(i).map_or(0, |b| b - b'0');
            acc = acc.checked_mul(10)?.checked_add(digit as i64)?;
        }
        if self.negative {
            acc.checked_neg()
        } else {
            Some(acc)
        }
    }
}

/// Per-column ingest declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaColumn {
    pub name: String,
    pub kind: KindHint,
}

impl std::str::FromStr for SchemaColumn {
    type Err = Error;

    /// Parses the `name:kind` shorthand used by configs and the CLI.
    fn from_str(s: &str) -> Result<SchemaColumn> {
        let (name, kind) = s.split_once(':').ok_or_else(|| {
            Error::BadConfig(format!("column spec {s:?} must look like name:kind"))
        })?;
        if name.is_empty() {
            return Err(Error::BadConfig(format!("column spec {s:?} has an empty name")));
        }
        Ok(SchemaColumn { name: name.to_string(), kind: kind.parse()? })
    }
}

/// Result of a CSV ingest: the table plus human-readable warnings (currently
/// only exponent-cap truncations).
#[derive(Debug)]
pub struct IngestOutcome {
    pub table: Table,
    pub warnings: Vec<String>,
}

/// Reads a CSV with a header row and builds a table from the schema columns.
///
/// `key_column` names a schema column whose encoded values become the
/// clustered keys (order-preserving; must be unique). Without it rows get
/// ordinal keys in file order.
pub fn ingest_csv<R: std::io::Read>(
    reader: R,
    schema: &[SchemaColumn],
    key_column: Option<&str>,
    compressed: bool,
) -> Result<IngestOutcome> {
    if schema.is_empty() {
        return Err(Error::BadConfig("schema declares no columns".into()));
    }
    if let Some(kc) = key_column {
        if !schema.iter().any(|c| c.name == kc) {
            return Err(Error::UnknownColumn(kc.to_string()));
        }
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.len());
    for col in schema {
        let pos = header
            .iter()
            .position(|h| h == col.name)
            .ok_or_else(|| Error::MissingColumn { column: col.name.clone() })?;
        positions.push(pos);
    }

    // Materialize raw cells of the schema columns.
    let mut raw: Vec<Vec<String>> = vec![Vec::new(); schema.len()];
    for record in rdr.records() {
        let record = record?;
        for (c, &pos) in positions.iter().enumerate() {
            raw[c].push(record.get(pos).unwrap_or("").trim().to_string());
        }
    }
    let n = raw[0].len();
    let mut warnings = Vec::new();

    // Finalize kinds, then encode.
    let mut metas = Vec::with_capacity(schema.len());
    let mut values: Vec<Vec<i64>> = Vec::with_capacity(schema.len());
    for (c, decl) in schema.iter().enumerate() {
        let kind = match decl.kind {
            KindHint::Integer => ColumnKind::Integer,
            KindHint::Categorical => {
                let mut dict = Dictionary::new();
                for cell in &raw[c] {
                    if !cell.is_empty() {
                        dict.intern(cell);
                    }
                }
                ColumnKind::Categorical(dict)
            }
            KindHint::ScaledFloat => {
                let mut needed = 0usize;
                for (r, cell) in raw[c].iter().enumerate() {
                    if cell.is_empty() {
                        continue;
                    }
                    let parts = DecimalParts::parse(cell).map_err(|m| Error::Parse {
                        row: r + 1,
                        column: decl.name.clone(),
                        message: format!("{cell:?} is not a decimal number ({m})"),
                    })?;
                    needed = needed.max(parts.significant_frac_len());
                }
                let exponent = (needed as u32).min(MAX_EXPONENT);
                if needed as u32 > MAX_EXPONENT {
                    warnings.push(format!(
                        "column {:?}: {needed} fraction digits exceed the exponent cap of \
                         {MAX_EXPONENT}; extra digits are truncated",
                        decl.name
                    ));
                }
                ColumnKind::ScaledFloat { exponent }
            }
        };

        let mut col_vals = Vec::with_capacity(n);
        for (r, cell) in raw[c].iter().enumerate() {
            col_vals.push(encode_with_kind(&kind, &decl.name, cell, r + 1)?);
        }
        metas.push(ColumnMeta { name: decl.name.clone(), kind });
        values.push(col_vals);
    }

    let keys = match key_column {
        None => None,
        Some(kc) => {
            let c = schema.iter().position(|col| col.name == kc).unwrap();
            let mut seen: HashMap<i64, usize> = HashMap::with_capacity(n);
            for (r, &v) in values[c].iter().enumerate() {
                if seen.insert(v, r).is_some() {
                    return Err(Error::NonUniqueKeyColumn { column: kc.to_string(), row: r + 1 });
                }
            }
            Some(values[c].iter().map(|&v| ClusteredKey(key_from_value(v))).collect())
        }
    };

    let table = Table::from_encoded(metas, values, keys, compressed)?;
    Ok(IngestOutcome { table, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(cols: &[(&str, KindHint)]) -> Vec<SchemaColumn> {
        cols.iter()
            .map(|(n, k)| SchemaColumn { name: n.to_string(), kind: *k })
            .collect()
    }

    #[test]
    fn scaled_float_exponent_is_inferred() {
        let csv = "x\n0.5\n0.25\n0.125\n";
        let out = ingest_csv(csv.as_bytes(), &schema(&[("x", KindHint::ScaledFloat)]), None, false)
            .unwrap();
        let t = out.table;
        assert!(out.warnings.is_empty());
        assert_eq!(t.meta(0).kind, ColumnKind::ScaledFloat { exponent: 3 });
        assert_eq!(t.column_values(0), vec![500, 250, 125]);
    }

    #[test]
    fn scaled_float_handles_sign_and_trailing_zeros() {
        // "-0.03" at exponent 2 → -3; "2.50" only needs one fraction digit.
        let csv = "x\n-0.03\n2.50\n+1\n";
        let out = ingest_csv(csv.as_bytes(), &schema(&[("x", KindHint::ScaledFloat)]), None, false)
            .unwrap();
        assert_eq!(out.table.meta(0).kind, ColumnKind::ScaledFloat { exponent: 2 });
        assert_eq!(out.table.column_values(0), vec![-3, 250, 100]);
    }

    #[test]
    fn scaled_float_exponent_caps_with_warning() {
        let csv = "x\n0.123456789\n1\n";
        let out = ingest_csv(csv.as_bytes(), &schema(&[("x", KindHint::ScaledFloat)]), None, false)
            .unwrap();
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("truncated"), "{}", out.warnings[0]);
        assert_eq!(out.table.meta(0).kind, ColumnKind::ScaledFloat { exponent: 6 });
        assert_eq!(out.table.column_values(0), vec![123456, 1_000_000]);
    }

    #[test]
    fn bad_integer_names_row_and_column() {
        let mut rows = String::from("n\n");
        for i in 1..=20 {
            rows.push_str(if i == 17 { "abc\n" } else { "1\n" });
        }
        let err = ingest_csv(rows.as_bytes(), &schema(&[("n", KindHint::Integer)]), None, false)
            .unwrap_err();
        match err {
            Error::Parse { row, ref column, .. } => {
                assert_eq!(row, 17);
                assert_eq!(column, "n");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn categorical_codes_are_first_seen_order() {
        let csv = "c\nred\ngreen\nred\nblue\n";
        let out = ingest_csv(csv.as_bytes(), &schema(&[("c", KindHint::Categorical)]), None, false)
            .unwrap();
        assert_eq!(out.table.column_values(0), vec![0, 1, 0, 2]);
        match &out.table.meta(0).kind {
            ColumnKind::Categorical(d) => {
                assert_eq!(d.labels(), &["red", "green", "blue"]);
            }
            other => panic!("unexpected kind {other:?}"),
        }
    }

    #[test]
    fn empty_cells_become_null_sentinel() {
        let csv = "a,b,c\n1,,x\n,2.5,\n";
        let out = ingest_csv(
            csv.as_bytes(),
            &schema(&[
                ("a", KindHint::Integer),
                ("b", KindHint::ScaledFloat),
                ("c", KindHint::Categorical),
            ]),
            None,
            false,
        )
        .unwrap();
        assert_eq!(out.table.column_values(0), vec![1, NULL_SENTINEL]);
        assert_eq!(out.table.column_values(1), vec![NULL_SENTINEL, 25]);
        assert_eq!(out.table.column_values(2), vec![0, NULL_SENTINEL]);
    }

    #[test]
    fn key_column_orders_rows_and_rejects_repeats() {
        let csv = "id,v\n30,a\n-10,b\n20,c\n";
        let out = ingest_csv(
            csv.as_bytes(),
            &schema(&[("id", KindHint::Integer), ("v", KindHint::Categorical)]),
            Some("id"),
            false,
        )
        .unwrap();
        // Sorted by id: -10, 20, 30 — the sign-flip key map preserves order.
        assert_eq!(out.table.column_values(0), vec![-10, 20, 30]);

        let dup = "id\n1\n2\n1\n";
        let err = ingest_csv(dup.as_bytes(), &schema(&[("id", KindHint::Integer)]), Some("id"), false)
            .unwrap_err();
        match err {
            Error::NonUniqueKeyColumn { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_schema_column_is_reported() {
        let err = ingest_csv("a\n1\n".as_bytes(), &schema(&[("b", KindHint::Integer)]), None, false)
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { .. }));
    }

    #[test]
    fn range_scan_and_point_lookup_match_linear_search() {
        let values: Vec<i64> = (0..500).map(|i| (i * 37) % 101).collect();
        let keys: Vec<ClusteredKey> = (0..500u64).map(|i| ClusteredKey(i * 3)).collect();
        let t = Table::from_encoded(
            vec![ColumnMeta { name: "v".into(), kind: ColumnKind::Integer }],
            vec![values.clone()],
            Some(keys),
            false,
        )
        .unwrap();

        let (rows, touched) = t.range_scan(ClusteredKey(30), ClusteredKey(90), Some((0, 10, 50)));
        let expect: Vec<usize> = (0..500)
            .filter(|&r| {
                let k = t.key_at(r).0;
                (30..90).contains(&k) && (10..50).contains(&t.value(0, r))
            })
            .collect();
        assert_eq!(rows, expect);
        assert_eq!(touched, 20); // keys 30,33,…,87

        assert_eq!(t.point_lookup(ClusteredKey(33)), Some(11));
        assert_eq!(t.point_lookup(ClusteredKey(34)), None);
    }

    #[test]
    fn append_is_atomic_on_duplicate_keys() {
        let mut t = Table::from_encoded(
            vec![ColumnMeta { name: "v".into(), kind: ColumnKind::Integer }],
            vec![vec![10, 20, 30]],
            None,
            false,
        )
        .unwrap();
        let err = t
            .append(&[
                (ClusteredKey(7), vec![70]),
                (ClusteredKey(1), vec![11]), // collides with existing key 1
                (ClusteredKey(7), vec![71]), // collides within batch
            ])
            .unwrap_err();
        match err {
            Error::DuplicateKeys(keys) => assert_eq!(keys, vec![1, 7]),
            other => panic!("unexpected error {other:?}"),
        }
        assert_eq!(t.row_count(), 3);
        assert_eq!(t.column_values(0), vec![10, 20, 30]);

        t.append(&[(ClusteredKey(7), vec![70]), (ClusteredKey(5), vec![50])]).unwrap();
        assert_eq!(t.column_values(0), vec![10, 20, 30, 50, 70]);
    }

    #[test]
    fn remove_keys_is_atomic_on_missing() {
        let mut t = Table::from_encoded(
            vec![ColumnMeta { name: "v".into(), kind: ColumnKind::Integer }],
            vec![vec![10, 20, 30]],
            None,
            false,
        )
        .unwrap();
        let err = t.remove_keys(&[ClusteredKey(1), ClusteredKey(9)]).unwrap_err();
        assert!(matches!(err, Error::MissingKeys(ref k) if k == &vec![9]));
        assert_eq!(t.row_count(), 3);

        t.remove_keys(&[ClusteredKey(1)]).unwrap();
        assert_eq!(t.column_values(0), vec![10, 30]);
    }

    #[test]
    fn rekey_range_keeps_order_and_data_aligned() {
        let mut t = Table::from_encoded(
            vec![ColumnMeta { name: "v".into(), kind: ColumnKind::Integer }],
            vec![vec![100, 101, 102, 103, 104]],
            Some((0..5).map(|i| ClusteredKey(10 + i)).collect()),
            false,
        )
        .unwrap();
        // Rows with keys in [11, 14) get reshuffled keys within the range.
        t.rekey_range(
            ClusteredKey(11),
            ClusteredKey(14),
            &[ClusteredKey(13), ClusteredKey(11), ClusteredKey(12)],
        )
        .unwrap();
        assert_eq!(t.keys().iter().map(|k| k.0).collect::<Vec<_>>(), vec![10, 11, 12, 13, 14]);
        // Row that held key 11 (value 101) now holds key 13, etc.
        assert_eq!(t.column_values(0), vec![100, 102, 103, 101, 104]);
    }

    #[test]
    fn unseen_category_is_an_encode_error() {
        let csv = "c\nred\n";
        let t = ingest_csv(csv.as_bytes(), &schema(&[("c", KindHint::Categorical)]), None, false)
            .unwrap()
            .table;
        assert_eq!(t.encode_value(0, "red").unwrap(), 0);
        assert!(matches!(
            t.encode_value(0, "mauve"),
            Err(Error::UnseenCategory { .. })
        ));
    }

    #[test]
    fn scaled_overflow_is_an_error() {
        let csv = "x\n9223372036854775807.5\n";
        let err = ingest_csv(csv.as_bytes(), &schema(&[("x", KindHint::ScaledFloat)]), None, false)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }

    proptest! {
        // The compression toggle must be invisible to every read path.
        #[test]
        fn compressed_reads_match_plain(
            values in proptest::collection::vec(-5000i64..5000, 1..400),
            lo in 0u64..400,
            width in 0u64..100,
        ) {
            let metas = vec![ColumnMeta { name: "v".into(), kind: ColumnKind::Integer }];
            let plain =
                Table::from_encoded(metas.clone(), vec![values.clone()], None, false).unwrap();
            let mut packed =
                Table::from_encoded(metas, vec![values], None, true).unwrap();

            prop_assert_eq!(plain.column_values(0), packed.column_values(0));
            let (a, ta) = plain.range_scan(ClusteredKey(lo), ClusteredKey(lo + width), Some((0, -100, 100)));
            let (b, tb) = packed.range_scan(ClusteredKey(lo), ClusteredKey(lo + width), Some((0, -100, 100)));
            prop_assert_eq!(a, b);
            prop_assert_eq!(ta, tb);
            prop_assert_eq!(plain.point_lookup(ClusteredKey(lo)), packed.point_lookup(ClusteredKey(lo)));

            packed.set_compressed(false);
            prop_assert_eq!(plain.column_values(0), packed.column_values(0));
        }

        #[test]
        fn key_map_preserves_order(a in any::<i64>(), b in any::<i64>()) {
            prop_assert_eq!(a < b, key_from_value(a) < key_from_value(b));
        }
    }
}
