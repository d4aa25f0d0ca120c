//! Run configuration: the estimation sample window, lag order, and the
//! series schedule (name, CSV mnemonic, transformation).
//!
//! ```text
//! [sample]
//! start = 1976Q3
//! end = 2019Q3
//! lags = 4
//!
//! [series]
//! # name, mnemonic, transformation (level | 100ln)
//! "Real Gross Domestic Product", GDPC1, 100ln
//! "Unemployment Rate", UNRATE, level
//! ```

use std::path::Path;

use bandcast::{Error, Result};

use crate::data::{Quarter, SeriesSpec, Transformation};
use crate::scenario::split_fields;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub start: Quarter,
    pub end: Quarter,
    pub lags: usize,
    pub series: Vec<SeriesSpec>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.end < self.start {
            return Err(Error::Parse {
                line: 0,
                message: format!("sample end {} precedes start {}", self.end, self.start),
            });
        }
        if self.lags == 0 {
            return Err(Error::Parse {
                line: 0,
                message: "lag order must be at least 1".into(),
            });
        }
        if self.series.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: "no series configured".into(),
            });
        }
        let t = self.end.offset_from(self.start) as usize + 1;
        let needed = self.series.len() * self.lags + 2;
        if t <= needed {
            return Err(Error::InsufficientData(format!(
                "{t} quarters cannot support {} series at {} lags",
                self.series.len(),
                self.lags
            )));
        }
        for s in &self.series {
            s.validate()?;
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.series {
            if !seen.insert(&s.mnemonic) {
                return Err(Error::DuplicateCell {
                    variable: s.mnemonic.clone(),
                    date: "series list".into(),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_str(&std::fs::read_to_string(path)?)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Sample,
        Series,
    }
    let mut section = Section::None;
    let mut start = None;
    let mut end = None;
    let mut lags = None;
    let mut series = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "sample" => Section::Sample,
                "series" => Section::Series,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown section '[{other}]'"),
                    })
                }
            };
            continue;
        }
        match section {
            Section::None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "content before the first section header".into(),
                })
            }
            Section::Sample => {
                let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "expected key = value".into(),
                })?;
                let v = v.trim();
                match k.trim() {
                    "start" => {
                        start = Some(Quarter::parse(v).map_err(|e| relabel(e, line_no))?)
                    }
                    "end" => end = Some(Quarter::parse(v).map_err(|e| relabel(e, line_no))?),
                    "lags" => {
                        lags = Some(v.parse().map_err(|_| Error::Parse {
                            line: line_no,
                            message: format!("bad lag count '{v}'"),
                        })?)
                    }
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("unknown sample key '{other}'"),
                        })
                    }
                }
            }
            Section::Series => {
                let f = split_fields(line);
                if f.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "series rows are: name, mnemonic, transformation".into(),
                    });
                }
                let transformation =
                    Transformation::parse(&f[2]).map_err(|e| relabel(e, line_no))?;
                series.push(SeriesSpec {
                    name: f[0].clone(),
                    mnemonic: f[1].clone(),
                    transformation,
                });
            }
        }
    }

    let cfg = RunConfig {
        start: start.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing [sample] start".into(),
        })?,
        end: end.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing [sample] end".into(),
        })?,
        lags: lags.ok_or_else(|| Error::Parse {
            line: 0,
            message: "missing [sample] lags".into(),
        })?,
        series,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn relabel(e: Error, line: usize) -> Error {
    match e {
        Error::Parse { message, .. } => Error::Parse { line, message },
        other => other,
    }
}
