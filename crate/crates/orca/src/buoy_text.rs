//! NDBC-style whitespace tables: two `#` header lines (column names, then
//! units) followed by rows of `YY MM DD hh mm` and one value per feature.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use orca_core::{BuoyDataset, GridSpec};

use crate::error::{io_err, Error, Result};

/// Columns this reader accepts after the timestamp fields.
pub const KNOWN_FEATURES: [&str; 14] = [
    "WDIR", "WSPD", "GST", "WVHT", "DPD", "APD", "MWD", "PRES", "ATMP", "WTMP", "DEWP", "VIS", "PTDY", "TIDE",
];

const SENTINELS: [f64; 3] = [99.0, 999.0, 9999.0];
const TIME_COLUMNS: [&str; 5] = ["YY", "MM", "DD", "hh", "mm"];

fn units(feature: &str) -> &'static str {
    match feature {
        "WDIR" | "MWD" => "degT",
        "WSPD" | "GST" => "m/s",
        "WVHT" | "TIDE" => "m",
        "DPD" | "APD" => "sec",
        "PRES" | "PTDY" => "hPa",
        "ATMP" | "WTMP" | "DEWP" => "degC",
        "VIS" => "nmi",
        _ => "-",
    }
}

/// Regular time lattice the rows are mapped onto.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub start: NaiveDateTime,
    pub interval_hours: f64,
    pub steps: usize,
}

impl Lattice {
    fn interval(&self) -> Duration {
        Duration::milliseconds((self.interval_hours * 3_600_000.0).round() as i64)
    }

    pub fn time(&self, step: usize) -> NaiveDateTime {
        self.start + self.interval() * step as i32
    }

    /// Lattice from `first` that stays within `last`.
    pub fn spanning(first: NaiveDateTime, last: NaiveDateTime, interval_hours: f64) -> Self {
        let span = (last - first).num_milliseconds() as f64 / 3_600_000.0;
        let steps = (span / interval_hours + 1e-9).floor() as usize + 1;
        Self { start: first, interval_hours, steps }
    }
}

/// Raw rows of one table.
#[derive(Clone, Debug, PartialEq)]
pub struct BuoyTable {
    pub features: Vec<String>,
    pub times: Vec<NaiveDateTime>,
    /// Row-major, `None` for sentinel or `MM` entries.
    pub rows: Vec<Vec<Option<f64>>>,
}

/// One buoy's series mapped onto a lattice, feature-major (`F x T`).
#[derive(Clone, Debug, PartialEq)]
pub struct BuoyFragment {
    pub features: Vec<String>,
    pub lattice: Option<Lattice>,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl BuoyFragment {
    pub fn steps(&self) -> usize {
        self.lattice.map_or(0, |l| l.steps)
    }
}

fn parse_time(fields: &[&str], line: usize) -> Result<NaiveDateTime> {
    let num = |i: usize| -> Result<u32> {
        fields[i]
            .parse::<u32>()
            .map_err(|_| Error::Schema(format!("line {}: bad {} field {:?}", line, TIME_COLUMNS[i], fields[i])))
    };
    let mut year = num(0)? as i32;
    if fields[0].len() <= 2 {
        year += 2000;
    }
    let (month, day, hour, minute) = (num(1)?, num(2)?, num(3)?, num(4)?);
    NaiveDate::from_ymd_opt(year, month, day)
        .and_then(|d| d.and_hms_opt(hour, minute, 0))
        .ok_or_else(|| Error::Schema(format!("line {}: invalid timestamp {}", line, fields[..5].join(" "))))
}

pub fn parse_table(text: &str) -> Result<BuoyTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, names) = lines.next().ok_or_else(|| Error::Schema("missing header".into()))?;
    let (_, unit_line) = lines.next().ok_or_else(|| Error::Schema("missing units header line".into()))?;
    if !names.starts_with('#') || !unit_line.starts_with('#') {
        return Err(Error::Schema("the first two lines must start with '#'".into()));
    }
    let cols: Vec<&str> = names.trim_start_matches('#').split_whitespace().collect();
    if cols.len() < TIME_COLUMNS.len() {
        return Err(Error::Schema(format!("header has {} columns, need the 5 timestamp columns first", cols.len())));
    }
    let year_ok = cols[0] == "YY" || cols[0] == "YYYY";
    if !year_ok || cols[1..5] != TIME_COLUMNS[1..] {
        return Err(Error::Schema(format!("timestamp columns must be YY MM DD hh mm, got {}", cols[..5].join(" "))));
    }
    let features: Vec<String> = cols[5..].iter().map(|s| s.to_string()).collect();
    for f in &features {
        if !KNOWN_FEATURES.contains(&f.as_str()) {
            return Err(Error::Schema(format!("unknown column {}", f)));
        }
    }

    let mut times: Vec<NaiveDateTime> = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != cols.len() {
            return Err(Error::Schema(format!("line {}: {} fields, header has {}", lineno, fields.len(), cols.len())));
        }
        let t = parse_time(&fields, lineno)?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::Ordering(format!("line {}: {} does not follow {}", lineno, t, prev)));
            }
        }
        let mut row = Vec::with_capacity(features.len());
        for (f, raw) in features.iter().zip(&fields[5..]) {
            if *raw == "MM" {
                row.push(None);
                continue;
            }
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::Schema(format!("line {}: {} value {:?} is not a number", lineno, f, raw)))?;
            row.push(if SENTINELS.contains(&v) { None } else { Some(v) });
        }
        times.push(t);
        rows.push(row);
    }
    Ok(BuoyTable { features, times, rows })
}

/// Maps a table onto `lattice` (or onto the lattice spanning its own rows)
/// by nearest timestamp within half an interval, then fills gaps by
/// carrying the last observation forward; leading gaps take the first
/// observation.
pub fn to_fragment(table: &BuoyTable, lattice: Option<Lattice>, interval_hours: f64) -> BuoyFragment {
    let lattice = match lattice {
        Some(l) => Some(l),
        None => match (table.times.first(), table.times.last()) {
            (Some(&a), Some(&b)) => Some(Lattice::spanning(a, b, interval_hours)),
            _ => None,
        },
    };
    let f_count = table.features.len();
    let Some(lat) = lattice else {
        return BuoyFragment { features: table.features.clone(), lattice: None, values: Vec::new(), missing: Vec::new() };
    };
    let half = lat.interval() / 2;
    let mut picked: Vec<Option<usize>> = Vec::with_capacity(lat.steps);
    let mut cursor = 0usize;
    for s in 0..lat.steps {
        let target = lat.time(s);
        while cursor + 1 < table.times.len() && table.times[cursor + 1] <= target {
            cursor += 1;
        }
        let mut best: Option<(usize, Duration)> = None;
        for r in cursor..(cursor + 2).min(table.times.len()) {
            let d = (table.times[r] - target).abs();
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((r, d));
            }
        }
        picked.push(best.filter(|&(_, d)| d <= half).map(|(r, _)| r));
    }

    let steps = lat.steps;
    let mut values = vec![0.0; f_count * steps];
    let mut missing = vec![true; f_count * steps];
    for f in 0..f_count {
        let raw: Vec<Option<f64>> = picked.iter().map(|p| p.and_then(|r| table.rows[r][f])).collect();
        let first = raw.iter().flatten().next().copied();
        let mut last = first;
        for (t, v) in raw.iter().enumerate() {
            match v {
                Some(x) => {
                    values[f * steps + t] = *x;
                    missing[f * steps + t] = false;
                    last = Some(*x);
                }
                None => values[f * steps + t] = last.unwrap_or(0.0),
            }
        }
    }
    BuoyFragment { features: table.features.clone(), lattice: Some(lat), values, missing }
}

pub fn parse_buoy_text(text: &str, lattice: Option<Lattice>, interval_hours: f64) -> Result<BuoyFragment> {
    Ok(to_fragment(&parse_table(text)?, lattice, interval_hours))
}

/// Renders a feature-major `F x T` series; `None` entries become sentinels.
pub fn write_buoy_text(features: &[String], lattice: &Lattice, values: &[Option<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#YY  MM DD hh mm {}", features.join(" "));
    let _ = writeln!(out, "#yr  mo dy hr mn {}", features.iter().map(|f| units(f)).collect::<Vec<_>>().join(" "));
    for t in 0..lattice.steps {
        let ts = lattice.time(t);
        let _ = write!(out, "{}", ts.format("%Y %m %d %H %M"));
        for f in 0..features.len() {
            match values[f * lattice.steps + t] {
                Some(v) => {
                    let _ = write!(out, " {:.4}", v);
                }
                None => out.push_str(" 99.0"),
            }
        }
        out.push('\n');
    }
    out
}

/// A buoy file with its position.
#[derive(Clone, Debug, PartialEq)]
pub struct BuoySource {
    pub path: PathBuf,
    pub lat: f64,
    pub lon: f64,
}

/// Reads every buoy file onto a common lattice and assembles the dataset.
/// Without an explicit lattice, the first file's span defines it.
pub fn load_buoys(sources: &[BuoySource], spec: &GridSpec, lattice: Option<Lattice>, interval_hours: f64) -> Result<BuoyDataset> {
    let mut fragments = Vec::with_capacity(sources.len());
    let mut lattice = lattice;
    let mut locations = Vec::with_capacity(sources.len());
    for src in sources {
        let text = std::fs::read_to_string(&src.path).map_err(io_err(&src.path))?;
        let table = parse_table(&text).map_err(|e| prefix(&src.path, e))?;
        let frag = to_fragment(&table, lattice, interval_hours);
        if lattice.is_none() {
            lattice = frag.lattice;
        }
        locations.push(spec.cell_of(src.lat, src.lon)?);
        fragments.push(frag);
    }
    let Some(first) = fragments.first() else {
        return Err(Error::Config("no buoy files configured".into()));
    };
    let features = first.features.clone();
    for (src, frag) in sources.iter().zip(&fragments) {
        if frag.features != features {
            return Err(Error::Schema(format!(
                "{}: columns {} differ from {}",
                src.path.display(),
                frag.features.join(" "),
                features.join(" ")
            )));
        }
    }
    let steps = first.steps();
    let (f_count, m_count) = (features.len(), fragments.len());
    let mut values = vec![0.0; f_count * m_count * steps];
    let mut missing = vec![true; f_count * m_count * steps];
    for (m, frag) in fragments.iter().enumerate() {
        for f in 0..f_count {
            let dst = (f * m_count + m) * steps;
            values[dst..dst + steps].copy_from_slice(&frag.values[f * steps..(f + 1) * steps]);
            missing[dst..dst + steps].copy_from_slice(&frag.missing[f * steps..(f + 1) * steps]);
        }
    }
    Ok(BuoyDataset::new(spec, features, locations, steps, interval_hours, values, missing)?)
}

fn prefix(path: &Path, e: Error) -> Error {
    match e {
        Error::Schema(s) => Error::Schema(format!("{}: {}", path.display(), s)),
        Error::Ordering(s) => Error::Ordering(format!("{}: {}", path.display(), s)),
        other => other,
    }
}
