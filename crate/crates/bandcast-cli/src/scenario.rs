//! Scenario files: the structured-text grammar for constraint grids, its
//! canonical emitter, and the mapping onto stacked-coordinate constraints.
//!
//! Grammar (line-oriented; `#` starts a full-line comment; fields are
//! comma-separated with optional double quotes around a field):
//!
//! ```text
//! [horizon]
//! start = 2020Q1
//! end = 2023Q1
//!
//! [estimation]
//! prior = acp            # acp | niw
//! draws = 25000
//! burn_in = 10000
//! seed = 1
//!
//! [equality]             # variable, date, value
//! UNRATE, 2020Q1, 3.60
//! GDPC1, 2020Q1, uncond+1.0
//!
//! [inequality]           # variable, date, lower, upper
//! CPIAUCSL, 2020Q1, 1.69, 2.71
//!
//! [shocks]               # variable, date, mean, sd
//! UNRATE, 2020Q1, 0.0, 0.5
//!
//! [scenario]
//! nondriving = GS10, UNRATE
//! ```
//!
//! Equality values of the form `uncond+x` / `uncond-x` are offsets from the
//! posterior-mean unconditional forecast of that cell, resolved at run time.

use std::fmt::Write as _;
use std::path::Path;

use bandcast::forecast::{
    ConstraintSet, EqualityConstraint, InequalityConstraint, ShockRestriction,
};
use bandcast::{band::SelectionMatrix, Error, Result};
use nalgebra::{DMatrix, DVector};

use crate::data::Quarter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorChoice {
    Acp,
    Niw,
}

impl PriorChoice {
    fn tag(self) -> &'static str {
        match self {
            PriorChoice::Acp => "acp",
            PriorChoice::Niw => "niw",
        }
    }
}

/// Estimation settings carried by the scenario file; command-line flags
/// override the draw counts and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationSettings {
    pub prior: PriorChoice,
    pub draws: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Select the shrinkage intensities by marginal likelihood; when false,
    /// `kappa1`/`kappa2` are used as given.
    pub optimize_kappa: bool,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Forecast paths drawn per retained parameter draw.
    pub forecasts_per_draw: usize,
}

impl Default for EstimationSettings {
    fn default() -> Self {
        EstimationSettings {
            prior: PriorChoice::Acp,
            draws: 1_000,
            burn_in: 1_000,
            seed: 1,
            optimize_kappa: true,
            kappa1: 0.04,
            kappa2: 0.0016,
            forecasts_per_draw: 1,
        }
    }
}

/// An equality cell's right-hand side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellValue {
    Absolute(f64),
    /// Offset from the unconditional posterior-mean forecast of the cell.
    Offset(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityCell {
    pub variable: String,
    pub date: Quarter,
    pub value: CellValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityCell {
    pub variable: String,
    pub date: Quarter,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShockCell {
    pub variable: String,
    pub date: Quarter,
    pub mean: f64,
    pub sd: f64,
}

/// Parsed scenario: a forecast window, estimation settings, and constraint
/// grids addressed by (variable mnemonic, quarter).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub start: Quarter,
    pub end: Quarter,
    pub estimation: EstimationSettings,
    pub equality: Vec<EqualityCell>,
    pub inequality: Vec<InequalityCell>,
    pub shocks: Vec<ShockCell>,
    pub nondriving: Vec<String>,
}

impl ScenarioFile {
    pub fn horizon(&self) -> usize {
        self.end.offset_from(self.start) as usize + 1
    }

    /// Maps the grids onto stacked coordinates (variable index plus n times
    /// the zero-based horizon step) against a dataset's variable labels.
    /// `uncond_mean` feeds `uncond+x` equality cells; passing `None` is an
    /// error if any cell needs it. The same coordinate in the equality and
    /// inequality blocks is rejected.
    pub fn to_constraints(
        &self,
        labels: &[String],
        uncond_mean: Option<&DVector<f64>>,
    ) -> Result<ConstraintSet> {
        let n = labels.len();
        let h = self.horizon();
        let nh = n * h;
        let coord = |variable: &str, date: Quarter| -> Result<usize> {
            let v = labels
                .iter()
                .position(|l| l == variable)
                .ok_or_else(|| Error::UnknownVariable(variable.to_string()))?;
            let step = date.offset_from(self.start);
            if step < 0 || step as usize >= h {
                return Err(Error::DateOutsideHorizon {
                    date: date.to_string(),
                    start: self.start.to_string(),
                    end: self.end.to_string(),
                });
            }
            Ok(v + n * step as usize)
        };

        let mut set = ConstraintSet::none();

        if !self.equality.is_empty() {
            let mut cells = Vec::with_capacity(self.equality.len());
            for c in &self.equality {
                let k = coord(&c.variable, c.date)?;
                let value = match c.value {
                    CellValue::Absolute(v) => v,
                    CellValue::Offset(d) => {
                        let base = uncond_mean.ok_or_else(|| {
                            Error::DimensionMismatch(format!(
                                "cell {} {} is relative to the unconditional forecast, which was not supplied",
                                c.variable, c.date
                            ))
                        })?;
                        if base.len() != nh {
                            return Err(Error::DimensionMismatch(format!(
                                "unconditional mean has {} coordinates, expected {nh}",
                                base.len()
                            )));
                        }
                        base[k] + d
                    }
                };
                cells.push((k, value));
            }
            cells.sort_by_key(|&(k, _)| k);
            let rows =
                SelectionMatrix::new(nh, cells.iter().map(|&(k, _)| k).collect::<Vec<_>>())?;
            let values = DVector::from_iterator(cells.len(), cells.iter().map(|&(_, v)| v));
            set.equality = Some(EqualityConstraint { rows, values });
        }

        if !self.inequality.is_empty() {
            let mut cells = Vec::with_capacity(self.inequality.len());
            for c in &self.inequality {
                cells.push((coord(&c.variable, c.date)?, c.lower, c.upper));
            }
            cells.sort_by_key(|&(k, ..)| k);
            let rows =
                SelectionMatrix::new(nh, cells.iter().map(|&(k, ..)| k).collect::<Vec<_>>())?;
            let lower = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.1));
            let upper = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.2));
            set.inequality = Some(InequalityConstraint { rows, lower, upper });
        }

        if let (Some(eq), Some(ineq)) = (&set.equality, &set.inequality) {
            for &c in ineq.rows.rows() {
                if eq.rows.rows().contains(&c) {
                    return Err(Error::OverlappingConstraints { coord: c });
                }
            }
        }

        if !self.shocks.is_empty() {
            let mut cells = Vec::with_capacity(self.shocks.len());
            for c in &self.shocks {
                cells.push((coord(&c.variable, c.date)?, c.mean, c.sd));
            }
            cells.sort_by_key(|&(k, ..)| k);
            let mut rows = DMatrix::zeros(cells.len(), nh);
            for (r, &(k, ..)) in cells.iter().enumerate() {
                rows[(r, k)] = 1.0;
            }
            let mean = DVector::from_iterator(cells.len(), cells.iter().map(|c| c.1));
            let cov = DMatrix::from_diagonal(&DVector::from_iterator(
                cells.len(),
                cells.iter().map(|c| c.2 * c.2),
            ));
            set.shocks = Some(ShockRestriction { rows, mean, cov });
        }

        if !self.nondriving.is_empty() {
            let mut coords = Vec::with_capacity(self.nondriving.len() * h);
            for name in &self.nondriving {
                let v = labels
                    .iter()
                    .position(|l| l == name)
                    .ok_or_else(|| Error::UnknownVariable(name.clone()))?;
                for step in 0..h {
                    coords.push(v + n * step);
                }
            }
            coords.sort_unstable();
            set.scenario_nondriving = Some(SelectionMatrix::new(nh, coords)?);
        }

        set.validate(nh)?;
        Ok(set)
    }
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioFile> {
    parse_scenario_str(&std::fs::read_to_string(path)?)
}

/// Splits a comma-separated line honoring double quotes; a doubled quote
/// inside a quoted field is a literal quote.
pub(crate) fn split_fields(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match ch {
            '"' => {
                if quoted && chars.peek() == Some(&'"') {
                    cur.push('"');
                    chars.next();
                } else {
                    quoted = !quoted;
                }
            }
            ',' if !quoted => {
                fields.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(ch),
        }
    }
    fields.push(cur.trim().to_string());
    fields
}

fn quote_field(s: &str) -> String {
    if s.contains([',', '"']) || s.trim() != s {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn parse_number(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} '{s}'"),
    })
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        None,
        Horizon,
        Estimation,
        Equality,
        Inequality,
        Shocks,
        Scenario,
    }

    let mut section = Section::None;
    let mut start = None;
    let mut end = None;
    let mut est = EstimationSettings::default();
    let mut equality: Vec<EqualityCell> = Vec::new();
    let mut inequality: Vec<InequalityCell> = Vec::new();
    let mut shocks: Vec<ShockCell> = Vec::new();
    let mut nondriving: Vec<String> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "horizon" => Section::Horizon,
                "estimation" => Section::Estimation,
                "equality" => Section::Equality,
                "inequality" => Section::Inequality,
                "shocks" => Section::Shocks,
                "scenario" => Section::Scenario,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown section '[{other}]'"),
                    })
                }
            };
            continue;
        }
        let kv = |l: &str| -> Option<(String, String)> {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        };
        match section {
            Section::None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "content before the first section header".into(),
                })
            }
            Section::Horizon => {
                let (k, v) = kv(line).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "expected key = value".into(),
                })?;
                let q = Quarter::parse(&v).map_err(|e| relabel(e, line_no))?;
                match k.as_str() {
                    "start" => start = Some(q),
                    "end" => end = Some(q),
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("unknown horizon key '{other}'"),
                        })
                    }
                }
            }
            Section::Estimation => {
                let (k, v) = kv(line).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "expected key = value".into(),
                })?;
                match k.as_str() {
                    "prior" => {
                        est.prior = match v.as_str() {
                            "acp" => PriorChoice::Acp,
                            "niw" => PriorChoice::Niw,
                            other => {
                                return Err(Error::Parse {
                                    line: line_no,
                                    message: format!("unknown prior '{other}' (use acp or niw)"),
                                })
                            }
                        }
                    }
                    "draws" => est.draws = parse_count(&v, line_no)?,
                    "burn_in" => est.burn_in = parse_count(&v, line_no)?,
                    "seed" => {
                        est.seed = v.parse().map_err(|_| Error::Parse {
                            line: line_no,
                            message: format!("bad seed '{v}'"),
                        })?
                    }
                    "optimize_kappa" => {
                        est.optimize_kappa = match v.as_str() {
                            "true" => true,
                            "false" => false,
                            other => {
                                return Err(Error::Parse {
                                    line: line_no,
                                    message: format!("bad boolean '{other}'"),
                                })
                            }
                        }
                    }
                    "kappa1" => est.kappa1 = parse_number(&v, line_no, "kappa1")?,
                    "kappa2" => est.kappa2 = parse_number(&v, line_no, "kappa2")?,
                    "forecasts_per_draw" => est.forecasts_per_draw = parse_count(&v, line_no)?,
                    other => {
                        return Err(Error::Parse {
                            line: line_no,
                            message: format!("unknown estimation key '{other}'"),
                        })
                    }
                }
            }
            Section::Equality => {
                let f = split_fields(line);
                if f.len() != 3 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "equality rows are: variable, date, value".into(),
                    });
                }
                let date = Quarter::parse(&f[1]).map_err(|e| relabel(e, line_no))?;
                let value = parse_cell_value(&f[2], line_no)?;
                equality.push(EqualityCell {
                    variable: f[0].clone(),
                    date,
                    value,
                });
            }
            Section::Inequality => {
                let f = split_fields(line);
                if f.len() != 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "inequality rows are: variable, date, lower, upper".into(),
                    });
                }
                let date = Quarter::parse(&f[1]).map_err(|e| relabel(e, line_no))?;
                let lower = parse_number(&f[2], line_no, "lower bound")?;
                let upper = parse_number(&f[3], line_no, "upper bound")?;
                if lower >= upper {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("lower bound {lower} is not below upper bound {upper}"),
                    });
                }
                inequality.push(InequalityCell {
                    variable: f[0].clone(),
                    date,
                    lower,
                    upper,
                });
            }
            Section::Shocks => {
                let f = split_fields(line);
                if f.len() != 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "shock rows are: variable, date, mean, sd".into(),
                    });
                }
                let date = Quarter::parse(&f[1]).map_err(|e| relabel(e, line_no))?;
                let mean = parse_number(&f[2], line_no, "shock mean")?;
                let sd = parse_number(&f[3], line_no, "shock sd")?;
                if sd < 0.0 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("negative shock sd {sd}"),
                    });
                }
                shocks.push(ShockCell {
                    variable: f[0].clone(),
                    date,
                    mean,
                    sd,
                });
            }
            Section::Scenario => {
                let (k, v) = kv(line).ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: "expected key = value".into(),
                })?;
                if k != "nondriving" {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown scenario key '{k}'"),
                    });
                }
                nondriving = split_fields(&v).into_iter().filter(|s| !s.is_empty()).collect();
            }
        }
    }

    let start = start.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing [horizon] start".into(),
    })?;
    let end = end.ok_or_else(|| Error::Parse {
        line: 0,
        message: "missing [horizon] end".into(),
    })?;
    if end < start {
        return Err(Error::Parse {
            line: 0,
            message: format!("horizon end {end} precedes start {start}"),
        });
    }

    let file = ScenarioFile {
        start,
        end,
        estimation: est,
        equality,
        inequality,
        shocks,
        nondriving,
    };
    check_window_and_duplicates(&file)?;
    Ok(file)
}

fn parse_count(v: &str, line: usize) -> Result<usize> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad count '{v}'"),
    })
}

fn parse_cell_value(s: &str, line: usize) -> Result<CellValue> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("uncond") {
        let rest = rest.trim();
        if rest.is_empty() {
            return Ok(CellValue::Offset(0.0));
        }
        let delta = parse_number(rest, line, "offset")?;
        return Ok(CellValue::Offset(delta));
    }
    Ok(CellValue::Absolute(parse_number(s, line, "value")?))
}

fn relabel(e: Error, line: usize) -> Error {
    match e {
        Error::Parse { message, .. } => Error::Parse { line, message },
        other => other,
    }
}

fn check_window_and_duplicates(f: &ScenarioFile) -> Result<()> {
    let window = |date: Quarter| -> Result<()> {
        if date < f.start || date > f.end {
            return Err(Error::DateOutsideHorizon {
                date: date.to_string(),
                start: f.start.to_string(),
                end: f.end.to_string(),
            });
        }
        Ok(())
    };
    let mut seen = std::collections::HashSet::new();
    for c in &f.equality {
        window(c.date)?;
        if !seen.insert(("eq", c.variable.clone(), c.date)) {
            return Err(Error::DuplicateCell {
                variable: c.variable.clone(),
                date: c.date.to_string(),
            });
        }
    }
    for c in &f.inequality {
        window(c.date)?;
        if !seen.insert(("ineq", c.variable.clone(), c.date)) {
            return Err(Error::DuplicateCell {
                variable: c.variable.clone(),
                date: c.date.to_string(),
            });
        }
    }
    for c in &f.shocks {
        window(c.date)?;
        if !seen.insert(("shock", c.variable.clone(), c.date)) {
            return Err(Error::DuplicateCell {
                variable: c.variable.clone(),
                date: c.date.to_string(),
            });
        }
    }
    Ok(())
}

/// Canonical text form: sections in fixed order, cells sorted by date then
/// variable. `parse_scenario_str(emit(f))` reproduces `f` up to cell order.
pub fn emit(f: &ScenarioFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "[horizon]");
    let _ = writeln!(out, "start = {}", f.start);
    let _ = writeln!(out, "end = {}", f.end);
    let _ = writeln!(out);
    let _ = writeln!(out, "[estimation]");
    let _ = writeln!(out, "prior = {}", f.estimation.prior.tag());
    let _ = writeln!(out, "draws = {}", f.estimation.draws);
    let _ = writeln!(out, "burn_in = {}", f.estimation.burn_in);
    let _ = writeln!(out, "seed = {}", f.estimation.seed);
    let _ = writeln!(out, "optimize_kappa = {}", f.estimation.optimize_kappa);
    let _ = writeln!(out, "kappa1 = {}", f.estimation.kappa1);
    let _ = writeln!(out, "kappa2 = {}", f.estimation.kappa2);
    let _ = writeln!(out, "forecasts_per_draw = {}", f.estimation.forecasts_per_draw);

    if !f.equality.is_empty() {
        let mut cells = f.equality.clone();
        cells.sort_by(|a, b| (a.date, &a.variable).cmp(&(b.date, &b.variable)));
        let _ = writeln!(out);
        let _ = writeln!(out, "[equality]");
        for c in cells {
            let value = match c.value {
                CellValue::Absolute(v) => format!("{v}"),
                CellValue::Offset(d) if d >= 0.0 => format!("uncond+{d}"),
                CellValue::Offset(d) => format!("uncond{d}"),
            };
            let _ = writeln!(out, "{}, {}, {}", quote_field(&c.variable), c.date, value);
        }
    }
    if !f.inequality.is_empty() {
        let mut cells = f.inequality.clone();
        cells.sort_by(|a, b| (a.date, &a.variable).cmp(&(b.date, &b.variable)));
        let _ = writeln!(out);
        let _ = writeln!(out, "[inequality]");
        for c in cells {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}",
                quote_field(&c.variable),
                c.date,
                c.lower,
                c.upper
            );
        }
    }
    if !f.shocks.is_empty() {
        let mut cells = f.shocks.clone();
        cells.sort_by(|a, b| (a.date, &a.variable).cmp(&(b.date, &b.variable)));
        let _ = writeln!(out);
        let _ = writeln!(out, "[shocks]");
        for c in cells {
            let _ = writeln!(
                out,
                "{}, {}, {}, {}",
                quote_field(&c.variable),
                c.date,
                c.mean,
                c.sd
            );
        }
    }
    if !f.nondriving.is_empty() {
        let mut names = f.nondriving.clone();
        names.sort();
        let _ = writeln!(out);
        let _ = writeln!(out, "[scenario]");
        let _ = writeln!(
            out,
            "nondriving = {}",
            names
                .iter()
                .map(|s| quote_field(s))
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    out
}
