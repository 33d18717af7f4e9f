//! Client-side metrics: MFLS, MTPS, Duration and NoT, plus the
//! r-repetition statistics reported with them.
//!
//! Every metric is computed from observation logs alone. Only committed
//! receipts (valid or flagged failed) count as received; rejected and lost
//! transactions enter NoT only.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::model::{
    expected_not, nanos_to_secs, BenchmarkPlan, EnvelopeId, Nanos, ObservationLog, ReceiptStatus,
    TxId,
};

/// A metric value, or the marker for a repetition where it is not defined
/// (nothing received, or a zero-length window).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Value(f64),
    Undefined,
}

impl Metric {
    pub fn value(self) -> Option<f64> {
        match self {
            Metric::Value(v) => Some(v),
            Metric::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Metric::Value(_))
    }
}

impl fmt::Display for Metric {
    /// Two decimals; undefined renders as `0.00`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value().unwrap_or(0.0))
    }
}

/// All client logs of one repetition of one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub repetition: u32,
    pub logs: Vec<ObservationLog>,
    pub expected_count: u64,
    /// Committed payload-level receipts.
    pub received_count: u64,
    /// Earliest send across all clients.
    pub t_fstx: Option<Nanos>,
    /// Latest committed receipt across all clients.
    pub t_lrx: Option<Nanos>,
}

impl RunRecord {
    pub fn new(repetition: u32, logs: Vec<ObservationLog>, expected_count: u64) -> Self {
        let t_fstx = logs.iter().flat_map(|l| &l.sends).map(|s| s.starttime).min();
        let committed = || {
            logs.iter().flat_map(|l| &l.receipts).filter(|r| r.status.is_committed())
        };
        let received_count = committed().count() as u64;
        let t_lrx = committed().filter_map(|r| r.endtime).max();
        Self { repetition, logs, expected_count, received_count, t_fstx, t_lrx }
    }

    pub fn from_plan(repetition: u32, logs: Vec<ObservationLog>, plan: &BenchmarkPlan) -> Self {
        Self::new(repetition, logs, expected_not(plan))
    }

    fn envelope_of(&self) -> HashMap<TxId, EnvelopeId> {
        self.logs.iter().flat_map(|l| &l.sends).map(|s| (s.tx_id, s.envelope_id)).collect()
    }

    /// Received count: per payload with op counting, otherwise per envelope
    /// with at least one committed payload.
    pub fn received(&self, op_counting: bool) -> u64 {
        if op_counting {
            return self.received_count;
        }
        let env = self.envelope_of();
        self.logs
            .iter()
            .flat_map(|l| &l.receipts)
            .filter(|r| r.status.is_committed())
            .filter_map(|r| env.get(&r.tx_id))
            .collect::<HashSet<_>>()
            .len() as u64
    }
}

/// Mean latency of one repetition's committed receipts, in seconds.
pub fn repetition_mfls(run: &RunRecord) -> Metric {
    let starts: HashMap<TxId, Nanos> =
        run.logs.iter().flat_map(|l| &l.sends).map(|s| (s.tx_id, s.starttime)).collect();
    let mut sum = 0.0;
    let mut n = 0u64;
    for r in run.logs.iter().flat_map(|l| &l.receipts) {
        if !r.status.is_committed() {
            continue;
        }
        if let (Some(end), Some(&start)) = (r.endtime, starts.get(&r.tx_id)) {
            sum += nanos_to_secs(end - start);
            n += 1;
        }
    }
    if n == 0 {
        Metric::Undefined
    } else {
        Metric::Value(sum / n as f64)
    }
}

/// Mean over the repetitions where latency is defined.
pub fn mfls(runs: &[RunRecord]) -> Metric {
    mean_defined(runs.iter().map(repetition_mfls))
}

pub fn repetition_mtps(run: &RunRecord, op_counting: bool) -> Metric {
    match (duration(run), run.received(op_counting)) {
        (Metric::Value(d), t) if d > 0.0 && t > 0 => Metric::Value(t as f64 / d),
        _ => Metric::Undefined,
    }
}

pub fn mtps(runs: &[RunRecord], op_counting: bool) -> Metric {
    mean_defined(runs.iter().map(|r| repetition_mtps(r, op_counting)))
}

/// Window from the first send to the last committed receipt, in seconds.
pub fn duration(run: &RunRecord) -> Metric {
    match (run.t_fstx, run.t_lrx) {
        (Some(first), Some(last)) if run.received_count > 0 => {
            Metric::Value(nanos_to_secs(last.saturating_sub(first)))
        }
        _ => Metric::Undefined,
    }
}

fn mean_defined(values: impl Iterator<Item = Metric>) -> Metric {
    let defined: Vec<f64> = values.filter_map(Metric::value).collect();
    if defined.is_empty() {
        Metric::Undefined
    } else {
        Metric::Value(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotCounts {
    pub expected: u64,
    pub sent: u64,
    pub received: u64,
    pub rejected: u64,
    pub lost: u64,
}

/// Expected, sent, received, rejected and lost counts. Without op counting
/// every count is per envelope: an envelope is received if any payload
/// committed, otherwise rejected if any payload was rejected, otherwise lost.
pub fn not_counts(run: &RunRecord, op_counting: bool) -> NotCounts {
    let receipts = run.logs.iter().flat_map(|l| &l.receipts);
    if op_counting {
        let sent = run.logs.iter().map(|l| l.sends.len() as u64).sum::<u64>();
        let received = run.received_count;
        let rejected =
            receipts.filter(|r| matches!(r.status, ReceiptStatus::Rejected(_))).count() as u64;
        return NotCounts {
            expected: run.expected_count,
            sent,
            received,
            rejected,
            lost: sent - received - rejected,
        };
    }
    let env = run.envelope_of();
    let mut state: HashMap<EnvelopeId, u8> = env.values().map(|&e| (e, 0)).collect();
    for r in receipts {
        let rank = match r.status {
            ReceiptStatus::Committed { .. } => 2,
            ReceiptStatus::Rejected(_) => 1,
            ReceiptStatus::Lost => 0,
        };
        if let Some(s) = env.get(&r.tx_id).and_then(|e| state.get_mut(e)) {
            *s = (*s).max(rank);
        }
    }
    let count = |rank| state.values().filter(|&&s| s == rank).count() as u64;
    NotCounts {
        expected: run.expected_count,
        sent: state.len() as u64,
        received: count(2),
        rejected: count(1),
        lost: count(0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` when n = 1.
    pub sd: Option<f64>,
    pub sem: Option<f64>,
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no values to aggregate")]
    Empty,
}

/// Two-sided 95% Student-t multiplier with `df` degrees of freedom.
pub fn t_multiplier(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df is positive")
        .inverse_cdf(0.975)
}

/// Standard error and CI half-width for a known sample SD over `n` values.
pub fn sem_ci(sd: f64, n: usize) -> (f64, f64) {
    let sem = sd / (n as f64).sqrt();
    (sem, t_multiplier(n - 1) * sem)
}

pub fn aggregate(values: &[f64]) -> Result<StatsSummary, StatsError> {
    let n = values.len();
    if n == 0 {
        return Err(StatsError::Empty);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(StatsSummary { n, mean, sd: None, sem: None, ci95: None });
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let (sem, ci) = sem_ci(sd, n);
    Ok(StatsSummary { n, mean, sd: Some(sd), sem: Some(sem), ci95: Some(ci) })
}

/// Aggregates the defined repetitions only; `None` if none is defined.
pub fn aggregate_metrics(values: &[Metric]) -> Option<StatsSummary> {
    let defined: Vec<f64> = values.iter().filter_map(|m| m.value()).collect();
    aggregate(&defined).ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Liveness {
    Normal,
    EarlyCessation,
    Overrun,
}

impl fmt::Display for Liveness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Liveness::Normal => "normal",
            Liveness::EarlyCessation => "early_cessation",
            Liveness::Overrun => "overrun",
        })
    }
}

pub const LIVENESS_TOLERANCE: f64 = 0.02;

pub fn liveness_flag(run: &RunRecord, plan: &BenchmarkPlan) -> Liveness {
    liveness_flag_with(run, plan, LIVENESS_TOLERANCE)
}

/// `tolerance` is a fraction of the send duration. A run that received
/// nothing has zero duration.
pub fn liveness_flag_with(run: &RunRecord, plan: &BenchmarkPlan, tolerance: f64) -> Liveness {
    let d = duration(run).value().unwrap_or(0.0);
    let tol = tolerance * plan.send_duration;
    let lost = not_counts(run, true).lost;
    if d < plan.send_duration - tol && lost > 0 {
        Liveness::EarlyCessation
    } else if d > plan.send_duration + tol {
        Liveness::Overrun
    } else {
        Liveness::Normal
    }
}

/// Aggregated outcome of one parameter combination for one benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCandidate {
    pub profile: String,
    pub benchmark: String,
    pub params: String,
    pub mtps: Metric,
    pub mfls: Metric,
    pub duration: Metric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BestCell {
    Best { params: String, mtps: f64, mfls: Metric, duration: Metric },
    Failed,
}

/// Per (profile, benchmark): the candidate with the highest MTPS. Ties keep
/// the earliest candidate. Cells without any defined MTPS are failed.
pub fn best_matrix(results: &[CellCandidate]) -> BTreeMap<(String, String), BestCell> {
    let mut out: BTreeMap<(String, String), BestCell> = BTreeMap::new();
    for c in results {
        let cell = out.entry((c.profile.clone(), c.benchmark.clone())).or_insert(BestCell::Failed);
        let Metric::Value(m) = c.mtps else { continue };
        let better = match cell {
            BestCell::Failed => true,
            BestCell::Best { mtps, .. } => m > *mtps,
        };
        if better {
            *cell = BestCell::Best {
                params: c.params.clone(),
                mtps: m,
                mfls: c.mfls,
                duration: c.duration,
            };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        secs_to_nanos, BenchmarkFamily, ClientId, Grouping, Payload, ReceiptRecord, RejectReason,
        SendRecord, TransactionEnvelope,
    };

    fn tx(client: u32, seq: u64) -> TxId {
        TxId::new(0, ClientId(client), 0, seq)
    }

    /// One log with single-payload envelopes: (start s, end s or None).
    fn log(client: u32, items: &[(f64, Option<f64>)]) -> ObservationLog {
        let mut l = ObservationLog::new(ClientId(client));
        for (i, &(s, e)) in items.iter().enumerate() {
            let id = tx(client, i as u64);
            l.sends.push(SendRecord { tx_id: id, envelope_id: EnvelopeId(id), starttime: secs_to_nanos(s) });
            l.receipts.push(match e {
                Some(e) => ReceiptRecord {
                    tx_id: id,
                    endtime: Some(secs_to_nanos(e)),
                    status: ReceiptStatus::Committed { valid: true },
                    block_height: Some(1),
                },
                None => ReceiptRecord::lost(id),
            });
        }
        l
    }

    fn close(a: Metric, b: f64) -> bool {
        a.value().is_some_and(|a| (a - b).abs() < 1e-9)
    }

    #[test]
    fn mfls_examples() {
        let r = RunRecord::new(0, vec![log(0, &[(0.0, Some(1.0)), (0.0, Some(3.0))])], 2);
        assert!(close(mfls(&[r]), 2.0));
        let a = RunRecord::new(0, vec![log(0, &[(0.0, Some(2.0))])], 1);
        let b = RunRecord::new(1, vec![log(0, &[(0.0, Some(3.0))])], 1);
        assert!(close(mfls(&[a, b]), 2.5));
    }

    #[test]
    fn mtps_global_extremes() {
        let mut items = vec![(0.0, Some(1.0))];
        items.extend(std::iter::repeat_n((5.0, Some(6.0)), 24));
        let a = log(0, &items);
        let mut items = vec![(1.0, Some(10.0))];
        items.extend(std::iter::repeat_n((5.0, Some(6.0)), 24));
        let b = log(1, &items);
        let r = RunRecord::new(0, vec![a, b], 50);
        assert!(close(duration(&r), 10.0));
        assert!(close(mtps(&[r], true), 5.0));
    }

    #[test]
    fn mtps_simple() {
        let mut items: Vec<_> = std::iter::repeat_n((0.0, Some(25.0)), 99).collect();
        items.push((0.0, Some(50.0)));
        let r = RunRecord::new(0, vec![log(0, &items)], 100);
        assert!(close(mtps(&[r], true), 2.0));
    }

    #[test]
    fn op_counting_counts_payloads() {
        let mut l = ObservationLog::new(ClientId(0));
        for e in 0..10u64 {
            let items: Vec<_> = (0..50).map(|i| (tx(0, e * 50 + i), Payload::DoNothing)).collect();
            let env = TransactionEnvelope::new(items, Grouping::OperationsPerTx(50), ClientId(0)).unwrap();
            for id in &env.tx_ids {
                l.sends.push(SendRecord { tx_id: *id, envelope_id: env.envelope_id, starttime: 0 });
                l.receipts.push(ReceiptRecord {
                    tx_id: *id,
                    endtime: Some(secs_to_nanos(5.0)),
                    status: ReceiptStatus::Committed { valid: true },
                    block_height: Some(1),
                });
            }
        }
        let r = RunRecord::new(0, vec![l], 500);
        assert!(close(mtps(std::slice::from_ref(&r), true), 100.0));
        assert!(close(mtps(std::slice::from_ref(&r), false), 2.0));
        let c = not_counts(&r, false);
        assert_eq!((c.sent, c.received, c.lost), (10, 10, 0));
    }

    #[test]
    fn duration_example() {
        let r = RunRecord::new(0, vec![log(0, &[(1.0, Some(2.0)), (2.0, Some(301.0))])], 2);
        assert!(close(duration(&r), 300.0));
    }

    #[test]
    fn undefined_when_nothing_received() {
        let r = RunRecord::new(0, vec![log(0, &[(0.0, None), (1.0, None)])], 2);
        assert_eq!(mfls(std::slice::from_ref(&r)), Metric::Undefined);
        assert_eq!(mtps(std::slice::from_ref(&r), true), Metric::Undefined);
        assert_eq!(duration(&r), Metric::Undefined);
        assert_eq!(Metric::Undefined.to_string(), "0.00");
        let c = not_counts(&r, true);
        assert_eq!((c.expected, c.received, c.lost), (2, 0, 2));
    }

    #[test]
    fn undefined_repetitions_are_skipped() {
        let a = RunRecord::new(0, vec![log(0, &[(0.0, None)])], 1);
        let b = RunRecord::new(1, vec![log(0, &[(0.0, Some(4.0))])], 1);
        assert!(close(mfls(&[a, b]), 4.0));
    }

    #[test]
    fn not_counts_with_rejections() {
        let mut l = log(0, &[(0.0, Some(1.0)), (0.0, None), (0.0, None)]);
        l.receipts[2] = ReceiptRecord {
            tx_id: l.receipts[2].tx_id,
            endtime: Some(0),
            status: ReceiptStatus::Rejected(RejectReason::QueueFull),
            block_height: None,
        };
        let r = RunRecord::new(0, vec![l], 10);
        assert_eq!(
            not_counts(&r, true),
            NotCounts { expected: 10, sent: 3, received: 1, rejected: 1, lost: 1 }
        );
        assert_eq!(not_counts(&r, false), not_counts(&r, true));
    }

    #[test]
    fn failed_commits_count_as_received() {
        let mut l = log(0, &[(0.0, Some(1.0)), (0.0, Some(1.0))]);
        l.receipts[1].status = ReceiptStatus::Committed { valid: false };
        let r = RunRecord::new(0, vec![l], 2);
        assert_eq!(not_counts(&r, true).received, 2);
    }

    #[test]
    fn aggregate_basics() {
        let s = aggregate(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!((s.mean, s.sd, s.sem, s.ci95), (5.0, Some(0.0), Some(0.0), Some(0.0)));
        assert_eq!(aggregate(&[]), Err(StatsError::Empty));
        let s = aggregate(&[2.0]).unwrap();
        assert_eq!((s.mean, s.sd), (2.0, None));
        let s = aggregate(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s.sd.unwrap() - 1.0).abs() < 1e-12);
        assert!((t_multiplier(2) - 4.302_652_729_911_275).abs() < 1e-9);
    }

    #[test]
    fn liveness_examples() {
        let plan = |send| BenchmarkPlan { send_duration: send, ..BenchmarkPlan::desk_scale(BenchmarkFamily::DoNothing) };
        let normal = RunRecord::new(0, vec![log(0, &[(0.0, Some(1.0)), (1.0, Some(300.0))])], 2);
        assert_eq!(liveness_flag(&normal, &plan(300.0)), Liveness::Normal);
        let early = RunRecord::new(0, vec![log(0, &[(0.0, Some(120.0)), (1.0, None)])], 2);
        assert_eq!(liveness_flag(&early, &plan(300.0)), Liveness::EarlyCessation);
        let over = RunRecord::new(0, vec![log(0, &[(0.0, Some(356.0))])], 1);
        assert_eq!(liveness_flag(&over, &plan(300.0)), Liveness::Overrun);
        let nothing = RunRecord::new(0, vec![log(0, &[(0.0, None)])], 1);
        assert_eq!(liveness_flag(&nothing, &plan(300.0)), Liveness::EarlyCessation);
    }

    #[test]
    fn best_matrix_argmax_and_failed() {
        let c = |p: &str, b: &str, params: &str, mtps: Metric, mfls| CellCandidate {
            profile: p.into(),
            benchmark: b.into(),
            params: params.into(),
            mtps,
            mfls: Metric::Value(mfls),
            duration: Metric::Value(1.0),
        };
        let m = best_matrix(&[
            c("a", "x", "p1", Metric::Value(10.0), 1.0),
            c("a", "x", "p2", Metric::Value(12.0), 2.0),
            c("a", "y", "p1", Metric::Undefined, 0.0),
        ]);
        assert_eq!(
            m[&("a".into(), "x".into())],
            BestCell::Best { params: "p2".into(), mtps: 12.0, mfls: Metric::Value(2.0), duration: Metric::Value(1.0) }
        );
        assert_eq!(m[&("a".into(), "y".into())], BestCell::Failed);
    }
}
