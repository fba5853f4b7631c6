//! CSV tables for trajectories and atomic file output.
//!
//! Schemas (one header line, comma-separated, no quoting):
//!
//! * trajectory: `t,arc,q0..q{n-1},v0..v{n-1}`
//! * impacts: `t,q0..,vpre0..,vpost0..,mu_pre,mu_post`; the momentum
//!   columns are left empty when the run carried no cyclic structure
//! * reduced: `t,segment,mu,x0..,xdot0..,theta`
//!
//! Floats use Rust's shortest round-trip formatting, so writing and parsing
//! a table reproduces every value bit-exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::Error;
use crate::hybrid::{HybridTrajectory, ImpactRecord};
use crate::mechanics::StateTQ;
use crate::routh::ReducedHybridTrajectory;

/// Writes through a temp file in the target directory plus rename, so the
/// file at `path` is only ever seen complete.
pub fn write_atomic(path: &Path, content: &str) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn trajectory_csv(traj: &HybridTrajectory<StateTQ>, dim: usize) -> String {
    let mut out = String::from("t,arc");
    for i in 0..dim {
        let _ = write!(out, ",q{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",v{i}");
    }
    out.push('\n');
    for (arc_index, arc) in traj.arcs.iter().enumerate() {
        for (t, s) in &arc.samples {
            let _ = write!(out, "{t},{arc_index}");
            for i in 0..dim {
                let _ = write!(out, ",{}", s.q[i]);
            }
            for i in 0..dim {
                let _ = write!(out, ",{}", s.v[i]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn impacts_csv(impacts: &[ImpactRecord<StateTQ>], dim: usize) -> String {
    let mut out = String::from("t");
    for i in 0..dim {
        let _ = write!(out, ",q{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",vpre{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",vpost{i}");
    }
    out.push_str(",mu_pre,mu_post\n");
    let opt = |m: Option<f64>| m.map(|x| x.to_string()).unwrap_or_default();
    for imp in impacts {
        let _ = write!(out, "{}", imp.t);
        for i in 0..dim {
            let _ = write!(out, ",{}", imp.state_pre.q[i]);
        }
        for i in 0..dim {
            let _ = write!(out, ",{}", imp.state_pre.v[i]);
        }
        for i in 0..dim {
            let _ = write!(out, ",{}", imp.state_post.v[i]);
        }
        let _ = writeln!(out, ",{},{}", opt(imp.momentum_pre), opt(imp.momentum_post));
    }
    out
}

pub fn reduced_csv(rt: &ReducedHybridTrajectory, dim: usize) -> String {
    let mut out = String::from("t,segment,mu");
    for i in 0..dim {
        let _ = write!(out, ",x{i}");
    }
    for i in 0..dim {
        let _ = write!(out, ",xdot{i}");
    }
    out.push_str(",theta\n");
    for (seg_index, seg) in rt.segments.iter().enumerate() {
        for (t, s, theta) in &seg.samples {
            let _ = write!(out, "{t},{seg_index},{}", seg.mu);
            for i in 0..dim {
                let _ = write!(out, ",{}", s.q[i]);
            }
            for i in 0..dim {
                let _ = write!(out, ",{}", s.v[i]);
            }
            let _ = writeln!(out, ",{theta}");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub arc: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub dim: usize,
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedRow {
    pub t: f64,
    pub segment: usize,
    pub mu: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedTable {
    pub dim: usize,
    pub rows: Vec<ReducedRow>,
}

/// Which schema a CSV header announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Trajectory,
    Reduced,
}

pub fn sniff_csv(text: &str) -> Option<CsvKind> {
    let header = text.lines().next()?;
    if header.starts_with("t,arc") {
        Some(CsvKind::Trajectory)
    } else if header.starts_with("t,segment,mu") {
        Some(CsvKind::Reduced)
    } else {
        None
    }
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::CsvFormat {
        line,
        message: message.into(),
    }
}

fn field<T: FromStr>(s: &str, line: usize, what: &str) -> Result<T, Error> {
    s.trim()
        .parse()
        .map_err(|_| bad(line, format!("cannot parse {what} from {s:?}")))
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').collect()
}

pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryTable, Error> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let cols = split_line(header);
    if cols.len() < 4 || !(cols.len() - 2).is_multiple_of(2) || cols[0] != "t" || cols[1] != "arc" {
        return Err(bad(
            1,
            format!("expected t,arc,q0..,v0.. header, got {header:?}"),
        ));
    }
    let dim = (cols.len() - 2) / 2;
    for i in 0..dim {
        if cols[2 + i] != format!("q{i}") || cols[2 + dim + i] != format!("v{i}") {
            return Err(bad(1, format!("unexpected column name {:?}", cols[2 + i])));
        }
    }
    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = index + 1;
        let parts = split_line(line);
        if parts.len() != cols.len() {
            return Err(bad(
                lineno,
                format!("expected {} fields, got {}", cols.len(), parts.len()),
            ));
        }
        let mut row = TrajectoryRow {
            t: field(parts[0], lineno, "time")?,
            arc: field(parts[1], lineno, "arc index")?,
            q: Vec::with_capacity(dim),
            v: Vec::with_capacity(dim),
        };
        for i in 0..dim {
            row.q.push(field(parts[2 + i], lineno, "coordinate")?);
            row.v.push(field(parts[2 + dim + i], lineno, "velocity")?);
        }
        rows.push(row);
    }
    Ok(TrajectoryTable { dim, rows })
}

pub fn parse_reduced_csv(text: &str) -> Result<ReducedTable, Error> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
    let cols = split_line(header);
    if cols.len() < 6
        || !cols.len().is_multiple_of(2)
        || cols[0] != "t"
        || cols[1] != "segment"
        || cols[2] != "mu"
        || cols[cols.len() - 1] != "theta"
    {
        return Err(bad(
            1,
            format!("expected t,segment,mu,x0..,xdot0..,theta header, got {header:?}"),
        ));
    }
    let dim = (cols.len() - 4) / 2;
    for i in 0..dim {
        if cols[3 + i] != format!("x{i}") || cols[3 + dim + i] != format!("xdot{i}") {
            return Err(bad(1, format!("unexpected column name {:?}", cols[3 + i])));
        }
    }
    let mut rows = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = index + 1;
        let parts = split_line(line);
        if parts.len() != cols.len() {
            return Err(bad(
                lineno,
                format!("expected {} fields, got {}", cols.len(), parts.len()),
            ));
        }
        let mut row = ReducedRow {
            t: field(parts[0], lineno, "time")?,
            segment: field(parts[1], lineno, "segment index")?,
            mu: field(parts[2], lineno, "momentum")?,
            x: Vec::with_capacity(dim),
            xdot: Vec::with_capacity(dim),
            theta: field(parts[cols.len() - 1], lineno, "angle")?,
        };
        for i in 0..dim {
            row.x.push(field(parts[3 + i], lineno, "coordinate")?);
            row.xdot
                .push(field(parts[3 + dim + i], lineno, "velocity")?);
        }
        rows.push(row);
    }
    Ok(ReducedTable { dim, rows })
}
