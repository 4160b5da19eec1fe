//! Tabular exports: NDJSON, CSV and a little-endian binary container.
//!
//! Binary layout (`SHLD1`, format version 1):
//!
//! ```text
//! magic "SHLD1" | u16 version | u8 kind
//! kind 1 (trajectory): u32 N | u64 steps | f64 t0 | f64 T | f64 eps
//!                      | u8 has_lr | f64 log_lr | (steps+1) x N x (f64 re, f64 im)
//! kind 2 (table):      u32 ncols | u64 nrows | per column (u16 len, utf-8 name, u8 type)
//!                      | row-major cells
//! ```
//!
//! Cell types: 0 f64, 1 u64, 2 i64, 3 bool (u8), 4 string (u32 len + utf-8).

use std::fmt::Write as _;

use num_complex::Complex;
use shell_ld::{ShellState, TimeGrid, Trajectory};

pub const MAGIC: &[u8; 5] = b"SHLD1";
pub const VERSION: u16 = 1;
const KIND_TRAJECTORY: u8 = 1;
const KIND_TABLE: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Ndjson,
    Csv,
    Binary,
}

impl Format {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ndjson" => Some(Format::Ndjson),
            "csv" => Some(Format::Csv),
            "binary" => Some(Format::Binary),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Format::Ndjson => "ndjson",
            Format::Csv => "csv",
            Format::Binary => "bin",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("not an SHLD1 file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("unexpected record kind {0}")]
    Kind(u8),
    #[error("truncated input")]
    Truncated,
    #[error("invalid trajectory: {0}")]
    Invalid(#[from] shell_ld::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    U(u64),
    I(i64),
    B(bool),
    S(String),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::U(x as u64)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::I(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::B(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}
impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}
impl From<Option<f64>> for Cell {
    /// Missing values become NaN.
    fn from(x: Option<f64>) -> Self {
        Cell::F(x.unwrap_or(f64::NAN))
    }
}

impl Cell {
    fn type_tag(&self) -> u8 {
        match self {
            Cell::F(_) => 0,
            Cell::U(_) => 1,
            Cell::I(_) => 2,
            Cell::B(_) => 3,
            Cell::S(_) => 4,
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::F(x) => fmt_json_float(*x),
            Cell::U(u) => u.to_string(),
            Cell::I(i) => i.to_string(),
            Cell::B(b) => b.to_string(),
            Cell::S(s) => serde_json::Value::String(s.clone()).to_string(),
        }
    }

    fn csv(&self) -> String {
        match self {
            Cell::F(x) => fmt_float(*x),
            Cell::S(s) => s.clone(),
            other => other.json(),
        }
    }
}

/// Full-precision scientific notation, `inf`/`-inf`/`NaN` for non-finite.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON has no non-finite numbers; they are written as strings.
pub fn fmt_json_float(x: f64) -> String {
    if x.is_finite() {
        fmt_float(x)
    } else {
        format!("\"{x}\"")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    /// Single-row table from `(column, value)` pairs.
    pub fn record(fields: Vec<(&str, Cell)>) -> Self {
        let mut t = Table::new(fields.iter().map(|(k, _)| k.to_string()));
        t.rows.push(fields.into_iter().map(|(_, v)| v).collect());
        t
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width must match the header"
        );
        if let Some(first) = self.rows.first() {
            // the binary encoding stores one type tag per column
            assert!(
                first
                    .iter()
                    .zip(&row)
                    .all(|(a, b)| a.type_tag() == b.type_tag()),
                "column types must not change between rows"
            );
        }
        self.rows.push(row);
    }

    pub fn encode(&self, format: Format) -> Vec<u8> {
        match format {
            Format::Ndjson => self.to_ndjson().into_bytes(),
            Format::Csv => self.to_csv().into_bytes(),
            Format::Binary => self.to_binary(),
        }
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            out.push_str(&json_object(
                self.columns.iter().map(String::as_str).zip(row),
            ));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv))
                .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 fields")
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = header(KIND_TABLE);
        out.extend((self.columns.len() as u32).to_le_bytes());
        out.extend((self.rows.len() as u64).to_le_bytes());
        for (i, name) in self.columns.iter().enumerate() {
            out.extend((name.len() as u16).to_le_bytes());
            out.extend(name.as_bytes());
            out.push(self.rows.first().map_or(0, |r| r[i].type_tag()));
        }
        for row in &self.rows {
            for cell in row {
                match cell {
                    Cell::F(x) => out.extend(x.to_le_bytes()),
                    Cell::U(u) => out.extend(u.to_le_bytes()),
                    Cell::I(i) => out.extend(i.to_le_bytes()),
                    Cell::B(b) => out.push(u8::from(*b)),
                    Cell::S(s) => {
                        out.extend((s.len() as u32).to_le_bytes());
                        out.extend(s.as_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_binary(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes, KIND_TABLE)?;
        let ncols = r.u32()? as usize;
        let nrows = r.u64()? as usize;
        let mut columns = Vec::with_capacity(ncols);
        let mut tags = Vec::with_capacity(ncols);
        for _ in 0..ncols {
            let len = r.u16()? as usize;
            columns.push(String::from_utf8_lossy(r.take(len)?).into_owned());
            tags.push(r.u8()?);
        }
        let mut rows = Vec::with_capacity(nrows.min(1 << 20));
        for _ in 0..nrows {
            let row = tags
                .iter()
                .map(|&t| {
                    Ok(match t {
                        0 => Cell::F(r.f64()?),
                        1 => Cell::U(r.u64()?),
                        2 => Cell::I(r.u64()? as i64),
                        3 => Cell::B(r.u8()? != 0),
                        _ => {
                            let len = r.u32()? as usize;
                            Cell::S(String::from_utf8_lossy(r.take(len)?).into_owned())
                        }
                    })
                })
                .collect::<Result<Vec<_>, DecodeError>>()?;
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }
}

/// `{"k":v,...}` with fields in the given order.
pub fn json_object<'a>(fields: impl IntoIterator<Item = (&'a str, &'a Cell)>) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in fields.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{}:{}",
            serde_json::Value::String(k.to_string()),
            v.json()
        );
    }
    out.push('}');
    out
}

fn header(kind: u8) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend(VERSION.to_le_bytes());
    out.push(kind);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], kind: u8) -> Result<Self, DecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5).map_err(|_| DecodeError::BadMagic)? != MAGIC {
            return Err(DecodeError::BadMagic);
        }
        let v = r.u16()?;
        if v != VERSION {
            return Err(DecodeError::Version(v));
        }
        let k = r.u8()?;
        if k != kind {
            return Err(DecodeError::Kind(k));
        }
        Ok(r)
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(DecodeError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn arr<const K: usize>(&mut self) -> Result<[u8; K], DecodeError> {
        Ok(self.take(K)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.arr()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64, DecodeError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
}

/// Columns `t, re_1, im_1, ..., re_N, im_N`, one row per node.
pub fn trajectory_table(traj: &Trajectory<f64>) -> Table {
    let n = traj.num_shells();
    let mut cols = vec!["t".to_string()];
    for m in 1..=n {
        cols.push(format!("re_{m}"));
        cols.push(format!("im_{m}"));
    }
    let mut t = Table::new(cols);
    for (j, u) in traj.states.iter().enumerate() {
        let mut row = Vec::with_capacity(2 * n + 1);
        row.push(Cell::F(traj.grid.time(j)));
        for z in u.iter() {
            row.push(Cell::F(z.re));
            row.push(Cell::F(z.im));
        }
        t.push(row);
    }
    t
}

/// Columns `t, re_1, im_1, ...` with `t` the left node of each cell.
pub fn cells_table(grid: &TimeGrid<f64>, cells: &[ShellState<f64>]) -> Table {
    let n = cells.first().map_or(0, ShellState::len);
    let mut cols = vec!["t".to_string()];
    for m in 1..=n {
        cols.push(format!("re_{m}"));
        cols.push(format!("im_{m}"));
    }
    let mut t = Table::new(cols);
    for (j, u) in cells.iter().enumerate() {
        let mut row = vec![Cell::F(grid.time(j))];
        for z in u.iter() {
            row.push(Cell::F(z.re));
            row.push(Cell::F(z.im));
        }
        t.push(row);
    }
    t
}

pub fn encode_trajectory(traj: &Trajectory<f64>, format: Format) -> Vec<u8> {
    match format {
        Format::Binary => trajectory_to_binary(traj),
        f => trajectory_table(traj).encode(f),
    }
}

pub fn trajectory_to_binary(traj: &Trajectory<f64>) -> Vec<u8> {
    let g = &traj.grid;
    let mut out = header(KIND_TRAJECTORY);
    out.extend((traj.num_shells() as u32).to_le_bytes());
    out.extend((g.steps() as u64).to_le_bytes());
    for x in [g.t0(), g.t_end(), traj.epsilon] {
        out.extend(x.to_le_bytes());
    }
    out.push(u8::from(traj.girsanov_log_lr.is_some()));
    out.extend(traj.girsanov_log_lr.unwrap_or(0.0).to_le_bytes());
    for u in &traj.states {
        for z in u.iter() {
            out.extend(z.re.to_le_bytes());
            out.extend(z.im.to_le_bytes());
        }
    }
    out
}

/// Inverse of [`trajectory_to_binary`]; increments are not stored.
pub fn trajectory_from_binary(bytes: &[u8]) -> Result<Trajectory<f64>, DecodeError> {
    let mut r = Reader::new(bytes, KIND_TRAJECTORY)?;
    let n = r.u32()? as usize;
    let steps = r.u64()? as usize;
    let (t0, t_end, eps) = (r.f64()?, r.f64()?, r.f64()?);
    let has_lr = r.u8()? != 0;
    let lr = r.f64()?;
    let grid = TimeGrid::new(t0, t_end, steps)?;
    let mut states = Vec::with_capacity(steps.saturating_add(1).min(1 << 24));
    for _ in 0..=steps {
        let u = (0..n)
            .map(|_| Ok(Complex::new(r.f64()?, r.f64()?)))
            .collect::<Result<Vec<_>, DecodeError>>()?;
        states.push(ShellState::from_vec(u)?);
    }
    Ok(Trajectory::from_parts(
        grid,
        states,
        None,
        has_lr.then_some(lr),
        eps,
    )?)
}
