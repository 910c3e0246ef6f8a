//! RMSE scoring, naive baselines, and the cross-topology evaluation matrix.
//!
//! Headline RMSE scores only the final prediction of each window — one
//! next-step forecast per window, inverted to km/h — with per-step RMSEs
//! logged alongside. Cross-topology cells rescale inputs and invert outputs
//! with the TARGET dataset's own fitted scaler; that policy is recorded in
//! the report metadata.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mode, Tape};
use crate::dataset::{make_windows, PreparedDataset, Scaler, SpeedDataset};
use crate::error::{Error, Result};
use crate::graph::RoadGraph;
use crate::model::{forward_window, param_count, Checkpoint, Hyperparams, SrnnParams};

/// Root mean squared error over paired values, in the units of its inputs.
pub fn rmse(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != truths.len() {
        return Err(Error::Metric(format!(
            "rmse needs equal non-empty inputs, got {} and {}",
            predictions.len(),
            truths.len()
        )));
    }
    let sum_sq: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum_sq / predictions.len() as f64).sqrt())
}

/// Evaluation result: the headline final-step RMSE plus the per-step curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub rmse: f64,
    pub per_step_rmse: Vec<f64>,
    pub window_count: usize,
}

/// Evaluate a checkpoint on a dataset's rows, using the checkpoint's own
/// scaler for inputs and inversion.
pub fn evaluate(
    ckpt: &Checkpoint,
    g: &RoadGraph,
    ds: &SpeedDataset,
    rows: Range<usize>,
    window_len: usize,
) -> Result<EvalOutcome> {
    evaluate_params(
        &ckpt.params,
        &ckpt.hyperparams,
        &ckpt.scaler,
        g,
        ds,
        rows,
        window_len,
    )
}

/// Eval-mode forward over every window of `rows`; predictions are inverted
/// to km/h before scoring. Window order is fixed, so results are fully
/// deterministic.
pub fn evaluate_params(
    params: &SrnnParams,
    hp: &Hyperparams,
    scaler: &Scaler,
    g: &RoadGraph,
    ds: &SpeedDataset,
    rows: Range<usize>,
    window_len: usize,
) -> Result<EvalOutcome> {
    if ds.segment_count() != g.node_count() {
        return Err(Error::Dimension(format!(
            "dataset has {} segments but the graph has {} nodes",
            ds.segment_count(),
            g.node_count()
        )));
    }
    let windows = make_windows(rows, window_len)?;
    let scaled = scaler.apply_matrix(&ds.values);
    let n = g.node_count();

    // dropout is inactive in eval mode; the rng is never consumed
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut final_preds = Vec::with_capacity(windows.count() * n);
    let mut final_truths = Vec::with_capacity(windows.count() * n);
    let mut step_preds = vec![Vec::new(); window_len];
    let mut step_truths = vec![Vec::new(); window_len];
    for &t0 in &windows.starts {
        let mut tape = Tape::new();
        let tp = params.register(&mut tape);
        let win = forward_window(
            &mut tape,
            g,
            &tp,
            hp,
            &scaled,
            t0,
            window_len,
            Mode::Eval,
            &mut rng,
        )?;
        for (k, step) in win.steps.iter().enumerate() {
            let pred = tape.value(step.y);
            for u in 0..n {
                let pred_kmh = scaler.invert(pred.get(u, 0));
                let truth_kmh = ds.values.get(t0 + 1 + k, u);
                step_preds[k].push(pred_kmh);
                step_truths[k].push(truth_kmh);
                if k + 1 == window_len {
                    final_preds.push(pred_kmh);
                    final_truths.push(truth_kmh);
                }
            }
        }
    }
    let per_step_rmse = step_preds
        .iter()
        .zip(&step_truths)
        .map(|(p, t)| rmse(p, t))
        .collect::<Result<Vec<f64>>>()?;
    Ok(EvalOutcome {
        rmse: rmse(&final_preds, &final_truths)?,
        per_step_rmse,
        window_count: windows.count(),
    })
}

/// Forecasters that need no training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Predict that the next value equals the current value.
    Persistence,
    /// Predict the training-set mean for the segment at the target
    /// time-of-day slot.
    HistoricalAverage,
}

impl BaselineKind {
    pub fn label(&self) -> &'static str {
        match self {
            BaselineKind::Persistence => "persistence",
            BaselineKind::HistoricalAverage => "historical-average",
        }
    }
}

/// Per-segment predictions (km/h) of a baseline for the window starting at
/// t0, targeting row t0 + len.
pub fn baseline_predict(
    kind: BaselineKind,
    ds: &SpeedDataset,
    train_rows: Range<usize>,
    t0: usize,
    window_len: usize,
) -> Vec<f64> {
    let n = ds.segment_count();
    match kind {
        BaselineKind::Persistence => (0..n)
            .map(|u| ds.values.get(t0 + window_len - 1, u))
            .collect(),
        BaselineKind::HistoricalAverage => {
            let slot = ds.slot_of(t0 + window_len);
            (0..n)
                .map(|u| {
                    let mut sum = 0.0;
                    let mut count = 0usize;
                    for t in train_rows.clone() {
                        if ds.slot_of(t) == slot {
                            sum += ds.values.get(t, u);
                            count += 1;
                        }
                    }
                    if count == 0 {
                        // no training row at this slot: fall back to the
                        // segment's overall training mean
                        let total: f64 =
                            train_rows.clone().map(|t| ds.values.get(t, u)).sum();
                        total / train_rows.len() as f64
                    } else {
                        sum / count as f64
                    }
                })
                .collect()
        }
    }
}

/// Final-step RMSE of a baseline over the same windows the model is scored on.
pub fn baseline_rmse(
    kind: BaselineKind,
    ds: &SpeedDataset,
    train_rows: Range<usize>,
    eval_rows: Range<usize>,
    window_len: usize,
) -> Result<f64> {
    let windows = make_windows(eval_rows, window_len)?;
    let n = ds.segment_count();
    let mut preds = Vec::with_capacity(windows.count() * n);
    let mut truths = Vec::with_capacity(windows.count() * n);
    for &t0 in &windows.starts {
        preds.extend(baseline_predict(kind, ds, train_rows.clone(), t0, window_len));
        truths.extend((0..n).map(|u| ds.values.get(t0 + window_len, u)));
    }
    rmse(&preds, &truths)
}

/// One evaluation target: a labelled graph plus its prepared dataset.
pub struct EvalTarget {
    pub label: String,
    pub graph: RoadGraph,
    pub prepared: PreparedDataset,
}

/// Cross-topology RMSE matrix plus baselines and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// rmse_kmh[i][j]: checkpoint i evaluated on target j.
    pub rmse_kmh: Vec<Vec<f64>>,
    pub param_counts: Vec<usize>,
    /// Baseline label -> per-target RMSE.
    pub baseline_rmse_kmh: Vec<(String, Vec<f64>)>,
    pub metadata: ReportMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub window_len: usize,
    /// Per-target eval window counts.
    pub window_counts: Vec<usize>,
    /// Per-target segment id lists.
    pub dataset_ids: Vec<Vec<String>>,
    pub seed: Option<u64>,
    /// Scaling policy for off-diagonal cells.
    pub scaling: String,
}

impl EvalReport {
    pub fn cell(&self, source: usize, target: usize) -> f64 {
        self.rmse_kmh[source][target]
    }
}

/// Evaluate every checkpoint on every target. All checkpoints must share
/// hyperparameters. Each cell uses the target dataset's own fitted scaler.
pub fn cross_matrix(
    checkpoints: &[(String, Checkpoint)],
    targets: &[EvalTarget],
    window_len: usize,
    seed: Option<u64>,
) -> Result<EvalReport> {
    if checkpoints.is_empty() || targets.is_empty() {
        return Err(Error::Config("cross matrix needs at least one checkpoint and one target".into()));
    }
    let hp = checkpoints[0].1.hyperparams;
    for (label, ckpt) in checkpoints {
        if ckpt.hyperparams != hp {
            return Err(Error::Config(format!(
                "checkpoint '{}' has different hyperparameters",
                label
            )));
        }
    }

    let mut rmse_kmh = Vec::with_capacity(checkpoints.len());
    for (_, ckpt) in checkpoints {
        let mut row = Vec::with_capacity(targets.len());
        for target in targets {
            let outcome = evaluate_params(
                &ckpt.params,
                &hp,
                &target.prepared.scaler,
                &target.graph,
                &target.prepared.dataset,
                target.prepared.eval_rows(),
                window_len,
            )?;
            row.push(outcome.rmse);
        }
        rmse_kmh.push(row);
    }

    let mut baselines = Vec::new();
    for kind in [BaselineKind::Persistence, BaselineKind::HistoricalAverage] {
        let mut row = Vec::with_capacity(targets.len());
        for target in targets {
            row.push(baseline_rmse(
                kind,
                &target.prepared.dataset,
                target.prepared.train_rows(),
                target.prepared.eval_rows(),
                window_len,
            )?);
        }
        baselines.push((kind.label().to_string(), row));
    }

    let window_counts = targets
        .iter()
        .map(|t| make_windows(t.prepared.eval_rows(), window_len).map(|w| w.count()))
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        sources: checkpoints.iter().map(|(l, _)| l.clone()).collect(),
        targets: targets.iter().map(|t| t.label.clone()).collect(),
        rmse_kmh,
        param_counts: checkpoints.iter().map(|_| param_count(&hp)).collect(),
        baseline_rmse_kmh: baselines,
        metadata: ReportMeta {
            window_len,
            window_counts,
            dataset_ids: targets
                .iter()
                .map(|t| t.prepared.dataset.segment_ids.clone())
                .collect(),
            seed,
            scaling: "target-dataset scaler for inputs and inversion".into(),
        },
    })
}

/// Matrix-shaped CSV: one row per source, one column per target, baselines
/// appended as extra rows.
pub fn save_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("train\\eval");
    for t in &report.targets {
        let _ = write!(out, ",{}", t);
    }
    out.push('\n');
    for (src, row) in report.sources.iter().zip(&report.rmse_kmh) {
        let _ = write!(out, "{}", src);
        for v in row {
            let _ = write!(out, ",{:.4}", v);
        }
        out.push('\n');
    }
    for (label, row) in &report.baseline_rmse_kmh {
        let _ = write!(out, "{}", label);
        for v in row {
            let _ = write!(out, ",{:.4}", v);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn save_report_json(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Data(format!("serializing report: {}", e)))?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use chrono::NaiveDateTime;

    use crate::autodiff::Matrix;

    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0, 2.0], &[0.0, 0.0]).unwrap(), 2.0);
        let v = rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((v - 5.0f64.sqrt()).abs() < 1e-12);
        assert!(rmse(&[], &[]).is_err());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_is_symmetric_and_permutation_invariant() {
        let p = [3.0, 1.5, -2.0, 8.0];
        let t = [2.5, 2.0, -1.0, 7.5];
        let base = rmse(&p, &t).unwrap();
        assert_eq!(base, rmse(&t, &p).unwrap());
        let perm = [2usize, 0, 3, 1];
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        assert_eq!(base, rmse(&pp, &tp).unwrap());
        assert!(base > 0.0);
    }

    fn series_dataset(values: Vec<f64>) -> SpeedDataset {
        let t = values.len();
        SpeedDataset {
            segment_ids: vec!["a".into()],
            values: Matrix::from_vec(t, 1, values).unwrap(),
            step_minutes: 15,
            missing_mask: vec![false; t],
            start: NaiveDateTime::parse_from_str("2016-01-01 00:00", "%Y-%m-%d %H:%M")
                .unwrap(),
        }
    }

    #[test]
    fn persistence_on_constant_series_is_exact() {
        let ds = series_dataset(vec![50.0; 40]);
        let r = baseline_rmse(BaselineKind::Persistence, &ds, 0..20, 20..40, 5).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn persistence_on_alternating_series_misses_by_the_gap() {
        let values: Vec<f64> = (0..60).map(|t| if t % 2 == 0 { 40.0 } else { 50.0 }).collect();
        let ds = series_dataset(values);
        let r = baseline_rmse(BaselineKind::Persistence, &ds, 0..30, 30..60, 5).unwrap();
        assert!((r - 10.0).abs() < 1e-12);
    }

    #[test]
    fn historical_average_on_constant_training_data() {
        let ds = series_dataset(vec![63.0; 200]);
        let preds = baseline_predict(BaselineKind::HistoricalAverage, &ds, 0..150, 151, 10);
        assert_eq!(preds, vec![63.0]);
    }

    #[test]
    fn historical_average_matches_brute_force_slot_means() {
        // two days of 96 slots with a deterministic pattern
        let values: Vec<f64> = (0..192).map(|t| 30.0 + (t % 96) as f64 + (t / 96) as f64).collect();
        let ds = series_dataset(values);
        let train = 0..150;
        let t0 = 151;
        let len = 10;
        let preds = baseline_predict(BaselineKind::HistoricalAverage, &ds, train.clone(), t0, len);

        let target_slot = (t0 + len) % 96;
        let donors: Vec<f64> = train
            .clone()
            .filter(|&t| t % 96 == target_slot)
            .map(|t| ds.values.get(t, 0))
            .collect();
        let want: f64 = donors.iter().sum::<f64>() / donors.len() as f64;
        assert!((preds[0] - want).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_score_zero() {
        let truths: Vec<f64> = (0..25).map(|i| 40.0 + i as f64).collect();
        assert_eq!(rmse(&truths.clone(), &truths).unwrap(), 0.0);
    }
}
