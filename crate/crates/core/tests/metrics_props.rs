use proptest::prelude::*;

use chainbench::metrics::{aggregate, mfls, mtps, not_counts, Metric, RunRecord};
use chainbench::model::{
    ClientId, EnvelopeId, ObservationLog, ReceiptRecord, ReceiptStatus, RejectReason, SendRecord,
    TxId,
};

#[derive(Debug, Clone)]
struct Tx {
    start: u64,
    latency: u64,
    outcome: u8,
}

fn tx() -> impl Strategy<Value = Tx> {
    (0..5_000_000_000u64, 1..3_000_000_000u64, 0..4u8).prop_map(|(start, latency, outcome)| Tx {
        start,
        latency,
        outcome,
    })
}

fn clients() -> impl Strategy<Value = Vec<Vec<Tx>>> {
    prop::collection::vec(prop::collection::vec(tx(), 0..40), 1..5)
}

/// Builds logs with envelopes of `group` consecutive payloads per client.
fn logs(clients: &[Vec<Tx>], group: usize, map: impl Fn(u64) -> u64) -> Vec<ObservationLog> {
    clients
        .iter()
        .enumerate()
        .map(|(c, txs)| {
            let client = ClientId(c as u32);
            let mut log = ObservationLog::new(client);
            let mut env = TxId::new(0, client, 0, 0);
            for (i, t) in txs.iter().enumerate() {
                let id = TxId::new(0, client, 0, i as u64);
                if i % group == 0 {
                    env = id;
                }
                let start = map(t.start);
                log.sends.push(SendRecord { tx_id: id, envelope_id: EnvelopeId(env), starttime: start });
                let end = map(t.start + t.latency);
                log.receipts.push(match t.outcome {
                    0 => ReceiptRecord::lost(id),
                    1 => ReceiptRecord {
                        tx_id: id,
                        endtime: Some(start),
                        status: ReceiptStatus::Rejected(RejectReason::QueueFull),
                        block_height: None,
                    },
                    o => ReceiptRecord {
                        tx_id: id,
                        endtime: Some(end),
                        status: ReceiptStatus::Committed { valid: o == 2 },
                        block_height: Some(0),
                    },
                });
            }
            log
        })
        .collect()
}

fn close(a: Metric, b: Metric, rel: f64) -> bool {
    match (a, b) {
        (Metric::Undefined, Metric::Undefined) => true,
        (Metric::Value(x), Metric::Value(y)) => (x - y).abs() <= rel * x.abs().max(y.abs()).max(1e-9),
        _ => false,
    }
}

fn scaled(m: Metric, f: f64) -> Metric {
    match m {
        Metric::Value(v) => Metric::Value(v * f),
        u => u,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn time_scaling(c in clients(), k in 2..6u64) {
        let base = vec![RunRecord::new(0, logs(&c, 1, |t| t), 0)];
        let stretched = vec![RunRecord::new(0, logs(&c, 1, |t| t * k), 0)];
        prop_assert!(close(mfls(&stretched), scaled(mfls(&base), k as f64), 1e-9));
        prop_assert!(close(mtps(&stretched, true), scaled(mtps(&base, true), 1.0 / k as f64), 1e-9));
    }

    #[test]
    fn time_translation(c in clients(), shift in 0..1_000_000_000_000u64) {
        let base = vec![RunRecord::new(0, logs(&c, 1, |t| t), 0)];
        let moved = vec![RunRecord::new(0, logs(&c, 1, |t| t + shift), 0)];
        prop_assert!(close(mfls(&moved), mfls(&base), 1e-6));
        prop_assert!(close(mtps(&moved, true), mtps(&base, true), 1e-6));
    }

    #[test]
    fn client_order_irrelevant(c in clients(), group in 1..4usize) {
        let forward = logs(&c, group, |t| t);
        let mut backward = forward.clone();
        backward.reverse();
        let a = vec![RunRecord::new(0, forward, 0)];
        let b = vec![RunRecord::new(0, backward, 0)];
        prop_assert!(close(mfls(&a), mfls(&b), 1e-12));
        for op in [true, false] {
            prop_assert!(close(mtps(&a, op), mtps(&b, op), 1e-12));
            prop_assert_eq!(not_counts(&a[0], op), not_counts(&b[0], op));
        }
    }

    #[test]
    fn counts_partition_sends(c in clients(), group in 1..5usize, op in any::<bool>()) {
        let run = RunRecord::new(0, logs(&c, group, |t| t), 100);
        let n = not_counts(&run, op);
        prop_assert_eq!(n.sent, n.received + n.rejected + n.lost);
        prop_assert_eq!(n.received, run.received(op));
        let payloads: u64 = c.iter().map(|t| t.len() as u64).sum();
        if op {
            prop_assert_eq!(n.sent, payloads);
        } else {
            prop_assert!(n.sent <= payloads);
        }
    }

    #[test]
    fn undefined_only_without_commits(c in clients()) {
        let run = RunRecord::new(0, logs(&c, 1, |t| t), 0);
        let any_commit = c.iter().flatten().any(|t| t.outcome >= 2);
        prop_assert_eq!(mfls(std::slice::from_ref(&run)).is_defined(), any_commit);
    }

    #[test]
    fn constant_sample_has_no_spread(v in -1e6..1e6f64, n in 2..30usize) {
        let s = aggregate(&vec![v; n]).unwrap();
        prop_assert!((s.mean - v).abs() <= 1e-9 * v.abs().max(1.0));
        prop_assert!(s.sd.unwrap() <= 1e-9 * v.abs().max(1.0));
        prop_assert!(s.ci95.unwrap() <= 1e-8 * v.abs().max(1.0));
    }

    #[test]
    fn aggregate_scales(values in prop::collection::vec(-1e4..1e4f64, 2..20), k in 0.1..10.0f64) {
        let a = aggregate(&values).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
        let b = aggregate(&scaled).unwrap();
        prop_assert!((b.mean - a.mean * k).abs() <= 1e-6 * (1.0 + b.mean.abs()));
        prop_assert!((b.sd.unwrap() - a.sd.unwrap() * k).abs() <= 1e-6 * (1.0 + b.sd.unwrap()));
        prop_assert!(b.ci95.unwrap() >= b.sem.unwrap());
    }
}
