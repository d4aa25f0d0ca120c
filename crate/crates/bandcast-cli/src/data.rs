//! Quarterly dataset ingestion: CSV with a date in the first column, series
//! picked out by mnemonic, per-series level or 100*ln transformation.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use bandcast::{Error, Result};
use nalgebra::DMatrix;

/// A calendar quarter. Orders chronologically; supports "2020Q1",
/// "1/1/2020" (month/day/year, the usual quarterly-CSV convention), and
/// "2020-01-01" date forms, each mapping the month to its quarter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Quarter {
    year: i32,
    q: u8,
}

impl Quarter {
    pub fn new(year: i32, q: u8) -> Result<Self> {
        if !(1..=4).contains(&q) {
            return Err(Error::Parse {
                line: 0,
                message: format!("quarter index {q} outside 1..=4"),
            });
        }
        Ok(Quarter { year, q })
    }

    pub fn year(self) -> i32 {
        self.year
    }

    pub fn quarter(self) -> u8 {
        self.q
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parse {
            line: 0,
            message: msg,
        };
        let s = s.trim();
        if let Some(pos) = s.find(['Q', 'q']) {
            let year: i32 = s[..pos]
                .parse()
                .map_err(|_| bad(format!("bad year in quarter '{s}'")))?;
            let q: u8 = s[pos + 1..]
                .parse()
                .map_err(|_| bad(format!("bad quarter in '{s}'")))?;
            return Quarter::new(year, q);
        }
        if s.contains('/') {
            let parts: Vec<&str> = s.split('/').collect();
            if parts.len() != 3 {
                return Err(bad(format!("date '{s}' is not month/day/year")));
            }
            let month: u32 = parts[0]
                .parse()
                .map_err(|_| bad(format!("bad month in '{s}'")))?;
            let year: i32 = parts[2]
                .parse()
                .map_err(|_| bad(format!("bad year in '{s}'")))?;
            return Quarter::from_month(year, month);
        }
        if s.contains('-') {
            let parts: Vec<&str> = s.split('-').collect();
            if parts.len() != 3 {
                return Err(bad(format!("date '{s}' is not year-month-day")));
            }
            let year: i32 = parts[0]
                .parse()
                .map_err(|_| bad(format!("bad year in '{s}'")))?;
            let month: u32 = parts[1]
                .parse()
                .map_err(|_| bad(format!("bad month in '{s}'")))?;
            return Quarter::from_month(year, month);
        }
        Err(bad(format!("unrecognized date '{s}'")))
    }

    fn from_month(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Parse {
                line: 0,
                message: format!("month {month} outside 1..=12"),
            });
        }
        Quarter::new(year, ((month - 1) / 3 + 1) as u8)
    }

    pub fn next(self) -> Self {
        if self.q == 4 {
            Quarter {
                year: self.year + 1,
                q: 1,
            }
        } else {
            Quarter {
                year: self.year,
                q: self.q + 1,
            }
        }
    }

    /// Signed number of quarters from `start` to `self`.
    pub fn offset_from(self, start: Quarter) -> i64 {
        (i64::from(self.year) - i64::from(start.year)) * 4 + i64::from(self.q) - i64::from(start.q)
    }
}

impl fmt::Display for Quarter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Q{}", self.year, self.q)
    }
}

/// Per-series transformation applied at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transformation {
    Level,
    /// `100 ln(x)`; requires strictly positive raw values.
    HundredLog,
}

impl Transformation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "level" => Ok(Transformation::Level),
            "100ln" | "100log" | "100*ln(x)" => Ok(Transformation::HundredLog),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown transformation '{other}' (use level or 100ln)"),
            }),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Transformation::Level => "level",
            Transformation::HundredLog => "100ln",
        }
    }
}

/// One series to pull from the CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeriesSpec {
    pub name: String,
    pub mnemonic: String,
    pub transformation: Transformation,
}

impl SeriesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mnemonic.trim().is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "series mnemonic is empty".into(),
            });
        }
        Ok(())
    }
}

/// Transformed estimation data: rows are ascending contiguous quarters,
/// columns follow the requested series order, labels are the mnemonics.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub labels: Vec<String>,
    pub quarters: Vec<Quarter>,
    pub data: DMatrix<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn variable_index(&self, mnemonic: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == mnemonic)
            .ok_or_else(|| Error::UnknownVariable(mnemonic.to_string()))
    }
}

pub fn ingest(
    path: &Path,
    specs: &[SeriesSpec],
    start: Quarter,
    end: Quarter,
) -> Result<Dataset> {
    ingest_reader(File::open(path)?, specs, start, end)
}

/// Reads the CSV, keeps rows with dates in `[start, end]`, transforms each
/// requested column, and checks the kept rows form the complete ascending
/// quarter range. Row coordinates in errors are 1-based data rows (the
/// header is row 0). Values that are empty, ".", "NA", or "NaN" count as
/// missing.
pub fn ingest_reader<R: Read>(
    reader: R,
    specs: &[SeriesSpec],
    start: Quarter,
    end: Quarter,
) -> Result<Dataset> {
    if start > end {
        return Err(Error::Parse {
            line: 0,
            message: format!("date range {start}..{end} is empty"),
        });
    }
    for s in specs {
        s.validate()?;
    }
    if specs.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no series requested".into(),
        });
    }

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if headers.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty header row".into(),
        });
    }
    let mut col_of = Vec::with_capacity(specs.len());
    for s in specs {
        let idx = headers
            .iter()
            .skip(1)
            .position(|h| h == &s.mnemonic)
            .map(|i| i + 1)
            .ok_or_else(|| Error::MissingColumn {
                name: s.mnemonic.clone(),
            })?;
        col_of.push(idx);
    }

    let expected = end.offset_from(start) as usize + 1;
    let mut quarters: Vec<Quarter> = Vec::with_capacity(expected);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(expected);
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(csv_err)?;
        let date_field = record.get(0).unwrap_or("");
        let quarter = Quarter::parse(date_field).map_err(|e| relabel_line(e, row_no))?;
        if quarter < start || quarter > end {
            continue;
        }
        if let Some(&prev) = quarters.last() {
            if quarter <= prev {
                return Err(Error::Parse {
                    line: row_no,
                    message: format!("date {quarter} does not follow {prev}"),
                });
            }
        }
        let mut row = Vec::with_capacity(specs.len());
        for (spec, &c) in specs.iter().zip(&col_of) {
            let raw = record.get(c).unwrap_or("").trim();
            if raw.is_empty() || raw == "." || raw.eq_ignore_ascii_case("na")
                || raw.eq_ignore_ascii_case("nan")
            {
                return Err(Error::MissingValue {
                    row: row_no,
                    column: spec.mnemonic.clone(),
                });
            }
            let value: f64 = raw.parse().map_err(|_| Error::Parse {
                line: row_no,
                message: format!("bad number '{raw}' in column '{}'", spec.mnemonic),
            })?;
            let value = match spec.transformation {
                Transformation::Level => value,
                Transformation::HundredLog => {
                    if value <= 0.0 {
                        return Err(Error::NonPositiveForLog {
                            row: row_no,
                            column: spec.mnemonic.clone(),
                            value,
                        });
                    }
                    100.0 * value.ln()
                }
            };
            row.push(value);
        }
        quarters.push(quarter);
        rows.push(row);
    }

    if quarters.len() != expected
        || quarters.first() != Some(&start)
        || quarters.last() != Some(&end)
    {
        return Err(Error::InsufficientData(format!(
            "range {start}..{end} needs {expected} quarters, found {} in file",
            quarters.len()
        )));
    }
    for w in quarters.windows(2) {
        if w[0].next() != w[1] {
            return Err(Error::InsufficientData(format!(
                "gap between {} and {}",
                w[0], w[1]
            )));
        }
    }

    let n = specs.len();
    let data = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok(Dataset {
        labels: specs.iter().map(|s| s.mnemonic.clone()).collect(),
        quarters,
        data,
    })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e
        .position()
        .map(|p| p.line() as usize)
        .unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn relabel_line(e: Error, line: usize) -> Error {
    match e {
        Error::Parse { message, .. } => Error::Parse { line, message },
        other => other,
    }
}
