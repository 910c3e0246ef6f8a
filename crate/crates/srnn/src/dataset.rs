//! Speed time-series ingestion and preparation.
//!
//! The pipeline is: load a speeds CSV, impute missing readings from
//! same-time-of-day donors, split into contiguous train/eval rows, fit a
//! min-max scaler on the training rows only, and enumerate stride-1 training
//! windows. A prepared dataset can be cached to a versioned JSON file so runs
//! are resumable.
//!
//! Speeds CSV format: header `timestamp,seg_<id>,...`; one row per time step
//! with timestamps `YYYY-MM-DD HH:MM` in strictly increasing order at a fixed
//! step; an empty cell marks a missing reading.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

pub const PREPARED_FORMAT_VERSION: u32 = 1;
const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M";

/// Per-segment speed series in km/h. `values` is T x N; `missing_mask` marks
/// entries that were absent in the source file (true = originally missing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedDataset {
    pub segment_ids: Vec<String>,
    pub values: Matrix,
    pub step_minutes: u32,
    pub missing_mask: Vec<bool>,
    pub start: NaiveDateTime,
}

impl SpeedDataset {
    pub fn time_steps(&self) -> usize {
        self.values.rows()
    }

    pub fn segment_count(&self) -> usize {
        self.values.cols()
    }

    /// Time-of-day slots per day at this sampling period.
    pub fn slots_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes) as usize
    }

    /// Slot of row t, taking the series start time into account.
    pub fn slot_of(&self, t: usize) -> usize {
        let start_slot =
            (self.start.hour() as usize * 60 + self.start.minute() as usize) / self.step_minutes as usize;
        (start_slot + t) % self.slots_per_day()
    }

    pub fn is_missing(&self, t: usize, u: usize) -> bool {
        self.missing_mask[t * self.segment_count() + u]
    }

    pub fn has_missing(&self) -> bool {
        self.missing_mask.iter().any(|&m| m)
    }
}

/// Min-max scaler fitted on training rows only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: f64,
    pub max: f64,
}

impl Scaler {
    /// (x - min) / (max - min). Values outside the fitted range map outside
    /// [0, 1]; nothing is clipped.
    pub fn apply(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        m.map(|x| self.apply(x))
    }
}

/// Valid window start indices for sequence length `len` over a row range.
/// A window starting at t0 consumes inputs t0..t0+len-1, the lookback row
/// t0-1, and targets t0+1..t0+len.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub len: usize,
    pub starts: Vec<usize>,
}

impl WindowSpec {
    pub fn count(&self) -> usize {
        self.starts.len()
    }
}

/// Load a speeds CSV. No imputation is performed here; the missing mask
/// records which cells were empty.
pub fn load_speeds(path: impl AsRef<Path>) -> Result<SpeedDataset> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_speeds_csv(&text)
}

pub fn parse_speeds_csv(text: &str) -> Result<SpeedDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("speeds file is empty".into()))?;
    let mut fields = header.split(',');
    let first = fields.next().unwrap_or("");
    if first.trim() != "timestamp" {
        return Err(Error::Parse(format!(
            "speeds header must start with 'timestamp', got '{}'",
            first
        )));
    }
    let mut segment_ids = Vec::new();
    for col in fields {
        let col = col.trim();
        let id = col.strip_prefix("seg_").ok_or_else(|| {
            Error::Parse(format!(
                "unknown segment column '{}': expected 'seg_<id>'",
                col
            ))
        })?;
        if segment_ids.iter().any(|s: &String| s == id) {
            return Err(Error::Validation(format!("duplicate segment column '{}'", col)));
        }
        segment_ids.push(id.to_string());
    }
    if segment_ids.is_empty() {
        return Err(Error::Parse("speeds header lists no segment columns".into()));
    }

    let n = segment_ids.len();
    let mut data = Vec::new();
    let mut mask = Vec::new();
    let mut prev_time: Option<NaiveDateTime> = None;
    let mut start = None;
    let mut step_minutes: Option<i64> = None;
    for (lineno, line) in lines {
        let row_no = lineno + 1;
        let mut fields = line.split(',');
        let stamp = fields.next().unwrap_or("").trim();
        let time = NaiveDateTime::parse_from_str(stamp, TIMESTAMP_FORMAT).map_err(|_| {
            Error::Parse(format!(
                "speeds row {}: bad timestamp '{}' (expected YYYY-MM-DD HH:MM)",
                row_no, stamp
            ))
        })?;
        if let Some(prev) = prev_time {
            let gap = (time - prev).num_minutes();
            if gap <= 0 {
                return Err(Error::Parse(format!(
                    "speeds row {}: timestamps must strictly increase",
                    row_no
                )));
            }
            match step_minutes {
                None => step_minutes = Some(gap),
                Some(step) if step != gap => {
                    return Err(Error::Parse(format!(
                        "speeds row {}: irregular step ({} min, expected {})",
                        row_no, gap, step
                    )));
                }
                Some(_) => {}
            }
        } else {
            start = Some(time);
        }
        prev_time = Some(time);

        let mut count = 0;
        for field in fields {
            let field = field.trim();
            if field.is_empty() {
                data.push(f64::NAN);
                mask.push(true);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!(
                        "speeds row {}: '{}' is not a number",
                        row_no, field
                    ))
                })?;
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!(
                        "speeds row {}: speed {} must be finite and non-negative",
                        row_no, v
                    )));
                }
                data.push(v);
                mask.push(false);
            }
            count += 1;
        }
        if count != n {
            return Err(Error::Parse(format!(
                "speeds row {}: {} value cells for {} segments",
                row_no, count, n
            )));
        }
    }
    let rows = data.len() / n;
    if rows < 2 {
        return Err(Error::Parse(
            "speeds file needs at least two rows to establish the sampling step".into(),
        ));
    }
    let step_minutes = step_minutes.unwrap() as u32;
    if (24 * 60) % step_minutes != 0 {
        return Err(Error::Parse(format!(
            "sampling step {} min does not divide a day",
            step_minutes
        )));
    }
    Ok(SpeedDataset {
        segment_ids,
        values: Matrix::from_vec(rows, n, data)?,
        step_minutes,
        missing_mask: mask,
        start: start.unwrap(),
    })
}

/// Write the speeds CSV format accepted by [`load_speeds`]. Cells flagged
/// missing are written empty.
pub fn save_speeds_csv(ds: &SpeedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("timestamp");
    for id in &ds.segment_ids {
        let _ = write!(out, ",seg_{}", id);
    }
    out.push('\n');
    for t in 0..ds.time_steps() {
        let stamp = ds.start + chrono::Duration::minutes(t as i64 * ds.step_minutes as i64);
        let _ = write!(out, "{}", stamp.format(TIMESTAMP_FORMAT));
        for u in 0..ds.segment_count() {
            if ds.is_missing(t, u) {
                out.push(',');
            } else {
                let _ = write!(out, ",{}", ds.values.get(t, u));
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Replace each missing reading with the mean of the present readings at the
/// same time-of-day slot for that segment; fall back to the segment's global
/// mean when no slot donor exists. Idempotent: donors are always the
/// originally-present values.
pub fn impute(ds: &SpeedDataset) -> Result<SpeedDataset> {
    let (t_count, n) = (ds.time_steps(), ds.segment_count());
    let slots = ds.slots_per_day();

    // Per (segment, slot) and per segment sums over present values.
    let mut slot_sum = vec![0.0; n * slots];
    let mut slot_count = vec![0usize; n * slots];
    let mut global_sum = vec![0.0; n];
    let mut global_count = vec![0usize; n];
    for t in 0..t_count {
        let slot = ds.slot_of(t);
        for u in 0..n {
            if !ds.is_missing(t, u) {
                let v = ds.values.get(t, u);
                slot_sum[u * slots + slot] += v;
                slot_count[u * slots + slot] += 1;
                global_sum[u] += v;
                global_count[u] += 1;
            }
        }
    }
    for u in 0..n {
        if global_count[u] == 0 && (0..t_count).any(|t| ds.is_missing(t, u)) {
            return Err(Error::Data(format!(
                "segment '{}' has no recorded values to impute from",
                ds.segment_ids[u]
            )));
        }
    }

    let mut out = ds.clone();
    for t in 0..t_count {
        let slot = ds.slot_of(t);
        for u in 0..n {
            if ds.is_missing(t, u) {
                let filled = if slot_count[u * slots + slot] > 0 {
                    slot_sum[u * slots + slot] / slot_count[u * slots + slot] as f64
                } else {
                    global_sum[u] / global_count[u] as f64
                };
                out.values.set(t, u, filled);
            }
        }
    }
    Ok(out)
}

/// Contiguous prefix/suffix split at floor(T * fraction). `window_len` is
/// used to verify both sides can still produce at least one window.
pub fn split(
    ds: &SpeedDataset,
    fraction: f64,
    window_len: usize,
) -> Result<(Range<usize>, Range<usize>)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction {} outside (0, 1)",
            fraction
        )));
    }
    let t = ds.time_steps();
    let at = (t as f64 * fraction).floor() as usize;
    let min_rows = window_len + 2;
    if at < min_rows || t - at < min_rows {
        return Err(Error::Config(format!(
            "split at row {} of {} leaves fewer than {} rows on one side",
            at, t, min_rows
        )));
    }
    Ok((0..at, at..t))
}

/// Fit the scaler on the given training rows only.
pub fn fit_scaler(ds: &SpeedDataset, train_rows: Range<usize>) -> Result<Scaler> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for t in train_rows {
        for u in 0..ds.segment_count() {
            let v = ds.values.get(t, u);
            min = min.min(v);
            max = max.max(v);
        }
    }
    if !(max > min) {
        return Err(Error::Data(format!(
            "degenerate training data: min {} max {}",
            min, max
        )));
    }
    Ok(Scaler { min, max })
}

/// Enumerate stride-1 window starts within a row range.
pub fn make_windows(rows: Range<usize>, len: usize) -> Result<WindowSpec> {
    if len == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let available = rows.end.saturating_sub(rows.start);
    if available < len + 2 {
        return Err(Error::Config(format!(
            "{} rows cannot fit a window of length {} (need at least {})",
            available,
            len,
            len + 2
        )));
    }
    let starts: Vec<usize> = (rows.start + 1..=rows.end - len - 1).collect();
    Ok(WindowSpec { len, starts })
}

/// An imputed dataset together with its fitted scaler and split boundary.
/// This is the unit cached on disk between pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub version: u32,
    pub dataset: SpeedDataset,
    pub scaler: Scaler,
    pub split_at: usize,
}

impl PreparedDataset {
    pub fn train_rows(&self) -> Range<usize> {
        0..self.split_at
    }

    pub fn eval_rows(&self) -> Range<usize> {
        self.split_at..self.dataset.time_steps()
    }

    /// All values passed through the training scaler.
    pub fn scaled_values(&self) -> Matrix {
        self.scaler.apply_matrix(&self.dataset.values)
    }
}

/// Reorder dataset columns to match a graph's node order. The id sets must
/// coincide; only the column permutation may differ.
pub fn align_to_graph(ds: &SpeedDataset, g: &crate::graph::RoadGraph) -> Result<SpeedDataset> {
    if ds.segment_count() != g.node_count() {
        return Err(Error::Data(format!(
            "dataset has {} segments, graph has {} nodes",
            ds.segment_count(),
            g.node_count()
        )));
    }
    let perm: Vec<usize> = g
        .segment_ids()
        .iter()
        .map(|id| {
            ds.segment_ids
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| Error::Data(format!("graph segment '{}' missing from dataset", id)))
        })
        .collect::<Result<_>>()?;
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok(ds.clone());
    }
    let (t_count, n) = (ds.time_steps(), ds.segment_count());
    let mut values = Matrix::zeros(t_count, n);
    let mut mask = vec![false; t_count * n];
    for t in 0..t_count {
        for (u, &src) in perm.iter().enumerate() {
            values.set(t, u, ds.values.get(t, src));
            mask[t * n + u] = ds.is_missing(t, src);
        }
    }
    Ok(SpeedDataset {
        segment_ids: g.segment_ids().to_vec(),
        values,
        step_minutes: ds.step_minutes,
        missing_mask: mask,
        start: ds.start,
    })
}

/// Impute, split, and fit the scaler in one step.
pub fn prepare(ds: &SpeedDataset, fraction: f64, window_len: usize) -> Result<PreparedDataset> {
    let imputed = impute(ds)?;
    let (train, _eval) = split(&imputed, fraction, window_len)?;
    let scaler = fit_scaler(&imputed, train.clone())?;
    Ok(PreparedDataset {
        version: PREPARED_FORMAT_VERSION,
        dataset: imputed,
        scaler,
        split_at: train.end,
    })
}

pub fn save_prepared(p: &PreparedDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(p)
        .map_err(|e| Error::Data(format!("serializing prepared dataset: {}", e)))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_prepared(path: impl AsRef<Path>) -> Result<PreparedDataset> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p: PreparedDataset = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("prepared dataset {}: {}", path.display(), e)))?;
    if p.version != PREPARED_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "prepared dataset version {} unsupported (expected {})",
            p.version, PREPARED_FORMAT_VERSION
        )));
    }
    if p.dataset.missing_mask.len() != p.dataset.values.len() {
        return Err(Error::Parse("prepared dataset mask/values length mismatch".into()));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(rows: &[&str]) -> String {
        let mut s = String::from("timestamp,seg_a,seg_b\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn loads_complete_file() {
        let ds = parse_speeds_csv(&csv(&[
            "2016-01-01 00:00,50,60",
            "2016-01-01 00:15,51,61",
            "2016-01-01 00:30,52,62",
            "2016-01-01 00:45,53,63",
        ]))
        .unwrap();
        assert_eq!(ds.time_steps(), 4);
        assert_eq!(ds.segment_count(), 2);
        assert_eq!(ds.step_minutes, 15);
        assert!(!ds.has_missing());
        assert_eq!(ds.values.get(2, 1), 62.0);
    }

    #[test]
    fn empty_cell_sets_mask_exactly_there() {
        let ds = parse_speeds_csv(&csv(&[
            "2016-01-01 00:00,50,60",
            "2016-01-01 00:15,,61",
        ]))
        .unwrap();
        assert!(ds.is_missing(1, 0));
        let missing: usize = ds.missing_mask.iter().filter(|&&m| m).count();
        assert_eq!(missing, 1);
    }

    #[test]
    fn irregular_timestamps_name_the_row() {
        let err = parse_speeds_csv(&csv(&[
            "2016-01-01 00:00,50,60",
            "2016-01-01 00:15,51,61",
            "2016-01-01 00:45,52,62",
        ]))
        .unwrap_err();
        assert!(err.to_string().contains("row 4"), "{}", err);
    }

    #[test]
    fn unknown_segment_column_rejected() {
        let err = parse_speeds_csv("timestamp,speed_a\n2016-01-01 00:00,50\n").unwrap_err();
        assert!(err.to_string().contains("speed_a"));
    }

    #[test]
    fn full_year_at_quarter_hour_has_35040_rows() {
        let mut s = String::from("timestamp,seg_a\n");
        let start =
            NaiveDateTime::parse_from_str("2016-01-01 00:00", TIMESTAMP_FORMAT).unwrap();
        for t in 0..35040 {
            let stamp = start + chrono::Duration::minutes(15 * t);
            let _ = writeln!(s, "{},50", stamp.format(TIMESTAMP_FORMAT));
        }
        let ds = parse_speeds_csv(&s).unwrap();
        assert_eq!(ds.time_steps(), 35040);
        // 0.75 row fraction approximates the 9/3 month calendar split
        let (train, eval) = split(&ds, 0.75, 10).unwrap();
        assert_eq!(train, 0..26280);
        assert_eq!(eval, 26280..35040);
    }

    fn two_day_two_seg(missing: &[(usize, usize)]) -> SpeedDataset {
        // 15-min steps, 2 segments, 2 days; values chosen per test
        let slots = 96;
        let t = 2 * slots;
        let mut data = Vec::with_capacity(t * 2);
        for row in 0..t {
            data.push(40.0 + (row % slots) as f64 / 10.0);
            data.push(60.0 + (row % slots) as f64 / 10.0);
        }
        let mut mask = vec![false; t * 2];
        let mut values = Matrix::from_vec(t, 2, data).unwrap();
        for &(r, u) in missing {
            mask[r * 2 + u] = true;
            values.set(r, u, f64::NAN);
        }
        SpeedDataset {
            segment_ids: vec!["a".into(), "b".into()],
            values,
            step_minutes: 15,
            missing_mask: mask,
            start: NaiveDateTime::parse_from_str("2016-01-01 00:00", TIMESTAMP_FORMAT).unwrap(),
        }
    }

    #[test]
    fn impute_uses_same_slot_donors() {
        // missing at day-1 08:00 for segment a; donors are 40 and 60 at the
        // same slot on the other days
        let slot = 32; // 08:00
        let mut ds = two_day_two_seg(&[]);
        let t3 = ds.time_steps();
        let mut values = Matrix::zeros(t3 + 96, 2);
        let mut mask = vec![false; (t3 + 96) * 2];
        for t in 0..t3 + 96 {
            for u in 0..2 {
                values.set(t, u, 50.0);
            }
        }
        values.set(slot, 0, f64::NAN);
        mask[slot * 2] = true;
        values.set(96 + slot, 0, 40.0);
        values.set(2 * 96 + slot, 0, 60.0);
        ds.values = values;
        ds.missing_mask = mask;
        let out = impute(&ds).unwrap();
        assert_eq!(out.values.get(slot, 0), 50.0);
        // mask still records the original gap
        assert!(out.is_missing(slot, 0));
    }

    #[test]
    fn impute_without_missing_is_identity() {
        let ds = two_day_two_seg(&[]);
        assert_eq!(impute(&ds).unwrap(), ds);
    }

    #[test]
    fn impute_falls_back_to_global_mean() {
        // slot 10 missing on both days for segment a: no slot donor exists
        let ds = {
            let mut ds = two_day_two_seg(&[(10, 0), (96 + 10, 0)]);
            // make the global present mean exactly 55
            let t = ds.time_steps();
            for row in 0..t {
                if !ds.is_missing(row, 0) {
                    ds.values.set(row, 0, 55.0);
                }
            }
            ds
        };
        let out = impute(&ds).unwrap();
        assert_eq!(out.values.get(10, 0), 55.0);
        assert_eq!(out.values.get(96 + 10, 0), 55.0);
    }

    #[test]
    fn impute_is_idempotent() {
        let ds = two_day_two_seg(&[(5, 1), (40, 0), (96 + 40, 0)]);
        let once = impute(&ds).unwrap();
        let twice = impute(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn impute_rejects_fully_missing_segment() {
        let t = 2 * 96;
        let all: Vec<(usize, usize)> = (0..t).map(|r| (r, 1)).collect();
        let ds = two_day_two_seg(&all);
        let err = impute(&ds).unwrap_err();
        assert!(err.to_string().contains("'b'"));
    }

    #[test]
    fn split_boundaries() {
        let ds = two_day_two_seg(&[]); // T = 192
        let (train, eval) = split(&ds, 0.75, 10).unwrap();
        assert_eq!(train, 0..144);
        assert_eq!(eval, 144..192);
    }

    #[test]
    fn split_rejects_starved_side() {
        let mut ds = two_day_two_seg(&[]);
        ds.values = Matrix::zeros(20, 2);
        ds.missing_mask = vec![false; 40];
        assert!(split(&ds, 0.99, 10).is_err());
    }

    #[test]
    fn scaler_examples() {
        let sc = Scaler { min: 0.0, max: 120.0 };
        assert_eq!(sc.apply(60.0), 0.5);
        assert_eq!(sc.apply(130.0), 13.0 / 12.0); // no clipping
        let x = 87.341;
        assert!((sc.invert(sc.apply(x)) - x).abs() < 1e-12);
    }

    #[test]
    fn scaler_rejects_constant_training_rows() {
        let mut ds = two_day_two_seg(&[]);
        ds.values = Matrix::from_vec(4, 2, vec![5.0; 8]).unwrap();
        ds.missing_mask = vec![false; 8];
        assert!(fit_scaler(&ds, 0..4).is_err());
    }

    #[test]
    fn scaler_ignores_eval_rows() {
        let mut ds = two_day_two_seg(&[]);
        let sc1 = fit_scaler(&ds, 0..100).unwrap();
        // perturb rows outside the training range
        for t in 100..ds.time_steps() {
            ds.values.set(t, 0, 999.0);
        }
        let sc2 = fit_scaler(&ds, 0..100).unwrap();
        assert_eq!(sc1, sc2);
    }

    #[test]
    fn window_counts() {
        let w = make_windows(0..100, 10).unwrap();
        assert_eq!(w.count(), 89);
        assert_eq!(*w.starts.first().unwrap(), 1);
        assert_eq!(*w.starts.last().unwrap(), 89);

        let w = make_windows(0..12, 10).unwrap();
        assert_eq!(w.starts, vec![1]);

        assert!(make_windows(0..11, 10).is_err());
    }

    #[test]
    fn interior_targets_are_covered_window_len_times() {
        let (t, l) = (30usize, 5usize);
        let w = make_windows(0..t, l).unwrap();
        let mut hits = vec![0usize; t];
        for &t0 in &w.starts {
            for target in t0 + 1..=t0 + l {
                hits[target] += 1;
            }
        }
        for (j, &h) in hits.iter().enumerate() {
            if j >= l + 1 && j <= t - l {
                assert_eq!(h, l, "target {}", j);
            }
        }
    }

    #[test]
    fn align_reorders_columns_to_graph_order() {
        let ds = two_day_two_seg(&[(3, 1)]);
        let g = crate::graph::RoadGraph::build(
            vec!["b".into(), "a".into()],
            vec![vec![0, 1], vec![0, 0]],
        )
        .unwrap();
        let aligned = align_to_graph(&ds, &g).unwrap();
        assert_eq!(aligned.segment_ids, vec!["b".to_string(), "a".to_string()]);
        assert_eq!(aligned.values.get(0, 1), ds.values.get(0, 0));
        assert!(aligned.is_missing(3, 0));

        let g_bad = crate::graph::RoadGraph::build(
            vec!["b".into(), "zz".into()],
            vec![vec![0, 0], vec![0, 0]],
        )
        .unwrap();
        assert!(align_to_graph(&ds, &g_bad).is_err());
    }

    #[test]
    fn prepared_cache_round_trip() {
        let ds = two_day_two_seg(&[(5, 1)]);
        let p = prepare(&ds, 0.75, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prep.json");
        save_prepared(&p, &path).unwrap();
        let q = load_prepared(&path).unwrap();
        assert_eq!(p, q);

        // version gate
        let mut tampered: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        tampered["version"] = serde_json::json!(99);
        std::fs::write(&path, tampered.to_string()).unwrap();
        assert!(load_prepared(&path).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_mask_and_values() {
        let ds = two_day_two_seg(&[(7, 0)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("speeds.csv");
        save_speeds_csv(&ds, &path).unwrap();
        let back = load_speeds(&path).unwrap();
        assert_eq!(back.missing_mask, ds.missing_mask);
        assert_eq!(back.step_minutes, ds.step_minutes);
        for t in 0..ds.time_steps() {
            for u in 0..2 {
                if !ds.is_missing(t, u) {
                    assert_eq!(back.values.get(t, u), ds.values.get(t, u));
                }
            }
        }
    }
}
