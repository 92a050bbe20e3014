//! CSV serialisation of trajectory records.
//!
//! Columns: `t, q0.., v0.., phi0.., u0.., energy[, lambda0..]`, one row per
//! sample, floats in `{:.16e}` so every value round-trips exactly.

use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::control::ControlSignal;
use crate::integrator::TrajectoryRecord;
use crate::state::State;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsvError {
    #[error("csv header: {0}")]
    Header(String),
    #[error("csv line {line}: {message}")]
    Row { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dof: usize,
    pub constraints: usize,
    pub inputs: usize,
    pub multipliers: usize,
}

impl Layout {
    pub fn of(tr: &TrajectoryRecord, multipliers: Option<&[DVector<f64>]>) -> Self {
        Self {
            dof: tr.states.first().map_or(0, State::dof),
            constraints: tr.constraint_count(),
            inputs: tr.controls.first().map_or(0, |c| c.u.len()),
            multipliers: multipliers.and_then(|m| m.first()).map_or(0, |l| l.len()),
        }
    }

    pub fn header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        for (prefix, n) in [
            ("q", self.dof),
            ("v", self.dof),
            ("phi", self.constraints),
            ("u", self.inputs),
        ] {
            cols.extend((0..n).map(|i| format!("{prefix}{i}")));
        }
        cols.push("energy".into());
        cols.extend((0..self.multipliers).map(|i| format!("lambda{i}")));
        cols.join(",")
    }

    fn width(&self) -> usize {
        2 + 2 * self.dof + self.constraints + self.inputs + self.multipliers
    }

    pub fn parse_header(line: &str) -> Result<Self, CsvError> {
        let cols: Vec<&str> = line.trim().split(',').collect();
        let count = |prefix: &str| {
            cols.iter()
                .filter(|c| {
                    c.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
                })
                .count()
        };
        let layout = Self {
            dof: count("q"),
            constraints: count("phi"),
            inputs: count("u"),
            multipliers: count("lambda"),
        };
        if count("v") != layout.dof || layout.header() != cols.join(",") {
            return Err(CsvError::Header(format!("unrecognised column layout '{}'", line.trim())));
        }
        Ok(layout)
    }
}

/// Renders a record (and optional per-sample multipliers) as CSV text.
pub fn write_trajectory(tr: &TrajectoryRecord, multipliers: Option<&[DVector<f64>]>) -> String {
    let layout = Layout::of(tr, multipliers);
    let mut out = layout.header();
    out.push('\n');
    for i in 0..tr.len() {
        let s = &tr.states[i];
        let mut first = true;
        let mut field = |x: f64| {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x:.16e}").expect("writing to a String");
        };
        field(tr.times[i]);
        s.q.iter().chain(s.v.iter()).for_each(|&x| field(x));
        tr.constraint_values[i].iter().for_each(|&x| field(x));
        tr.controls[i].u.iter().for_each(|&x| field(x));
        field(tr.energies[i]);
        if let Some(m) = multipliers {
            m[i].iter().for_each(|&x| field(x));
        }
        out.push('\n');
    }
    out
}

/// A trajectory read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTrajectory {
    pub layout: Layout,
    pub record: TrajectoryRecord,
    pub multipliers: Option<Vec<DVector<f64>>>,
}

/// Parses CSV text produced by [`write_trajectory`]. The step is taken from
/// the first two time stamps (zero for a single sample).
pub fn read_trajectory(text: &str) -> Result<LoadedTrajectory, CsvError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| CsvError::Header("empty file".into()))?;
    let layout = Layout::parse_header(header)?;
    let mut record = TrajectoryRecord {
        dt: 0.0,
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
        constraint_values: Vec::new(),
        energies: Vec::new(),
    };
    let mut multipliers = Vec::new();
    for (index, line) in lines {
        let row_error = |message: String| CsvError::Row {
            line: index + 1,
            message,
        };
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|e| row_error(format!("'{f}': {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if values.len() != layout.width() {
            return Err(row_error(format!(
                "expected {} fields, found {}",
                layout.width(),
                values.len()
            )));
        }
        let mut rest = &values[..];
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            DVector::from_column_slice(head)
        };
        let t = take(1)[0];
        let q = take(layout.dof);
        let v = take(layout.dof);
        record.times.push(t);
        record.states.push(State { q, v, t });
        record.constraint_values.push(take(layout.constraints));
        record.controls.push(ControlSignal {
            u: take(layout.inputs),
            t,
        });
        record.energies.push(take(1)[0]);
        multipliers.push(take(layout.multipliers));
    }
    if record.times.is_empty() {
        return Err(CsvError::Header("no samples".into()));
    }
    if record.times.len() > 1 {
        record.dt = record.times[1] - record.times[0];
    }
    Ok(LoadedTrajectory {
        layout,
        record,
        multipliers: (layout.multipliers > 0).then_some(multipliers),
    })
}
