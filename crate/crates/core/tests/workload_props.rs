use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use chainbench::bal::{provision, wrap_grouping, Driver, EventStatus};
use chainbench::clock::VirtualClock;
use chainbench::model::{
    expected_not, secs_to_nanos, BenchmarkFamily, BenchmarkPlan, ClientId, Finalization, Grouping,
    IelFunction, LinkLatency, Nanos, ObservationLog, Payload, ReceiptStatus, TxId, NANOS_PER_SEC,
};
use chainbench::runner::presets;
use chainbench::bal::SimulatedBackend;
use chainbench::workload::{
    next_payload, run_clients_virtual, Acquire, Pacing, RateLimiter, SequenceState, StepContext,
};

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() }
}

fn plan_strategy() -> impl Strategy<Value = BenchmarkPlan> {
    (1..4u32, 1..4u32, 1..40u32, 1..30u32, 0..3usize, 1..5u32).prop_map(
        |(clients, threads, rl, send_ds, g, k)| {
            let grouping = match g {
                0 => Grouping::Single,
                1 => Grouping::OperationsPerTx(k),
                _ => Grouping::TxPerBatch(k),
            }
            .with_size(k.max(1));
            let send = send_ds as f64 / 10.0;
            BenchmarkPlan {
                benchmark_family: BenchmarkFamily::DoNothing,
                clients,
                workload_threads_per_client: threads,
                rate_limiter: rl,
                grouping,
                send_duration: send,
                listen_grace: 1.0,
                hard_stop: send + 1.5,
                repetitions: 1,
                seed: 0,
            }
        },
    )
}

struct Run {
    logs: Vec<ObservationLog>,
    start: Nanos,
}

fn run(preset: usize, plan: &BenchmarkPlan, function: IelFunction, seed: u64, latency: bool) -> Run {
    let mut p = presets::all().swap_remove(preset);
    p.link_latency = latency.then(LinkLatency::default);
    if let Finalization::ByCount { max_count, .. } = p.finalization {
        if plan.grouping.size() > max_count {
            p.finalization = p.finalization.with_parameter(plan.grouping.size() as f64);
        }
    }
    let d = provision(&p, seed).unwrap();
    let handles: Vec<_> = (0..plan.clients).map(|c| d.handle_for(ClientId(c))).collect();
    let drivers: Vec<&dyn Driver> = handles.iter().map(|h| h as &dyn Driver).collect();
    let start = secs_to_nanos(p.stabilization_time);
    let ctx = StepContext { function, epoch: 0, pacing: Pacing::Even, submit_cost: 0 };
    let mut states = HashMap::new();
    let logs = run_clients_virtual(plan, &ctx, &drivers, d.backend().as_ref(), &VirtualClock::new(), start, &mut states);
    Run { logs, start }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn limiter_window(limit in 1..60u32, burst in any::<bool>(), gaps in prop::collection::vec(0..80_000_000u64, 1..300)) {
        let pacing = if burst { Pacing::Burst } else { Pacing::Even };
        let mut l = RateLimiter::new(limit, pacing);
        let mut t = 0;
        let mut grants = Vec::new();
        for g in gaps {
            t += g;
            loop {
                match l.acquire(t) {
                    Acquire::Permit => break,
                    Acquire::WaitUntil(w) => { prop_assert!(w > t); t = w; }
                    Acquire::Exhausted => unreachable!(),
                }
            }
            grants.push(t);
        }
        for (i, &g) in grants.iter().enumerate() {
            let within = grants[i..].iter().take_while(|&&x| x < g + NANOS_PER_SEC).count();
            prop_assert!(within <= limit as usize);
        }
    }

    #[test]
    fn run_invariants(preset in 0..7usize, plan in plan_strategy(), seed in any::<u64>(), latency in any::<bool>()) {
        let r = run(preset, &plan, IelFunction::DoNothing, seed, latency);
        let send_end = r.start + secs_to_nanos(plan.send_duration);
        let hard = r.start + secs_to_nanos(plan.hard_stop);
        let mut ids = HashSet::new();
        let mut total = 0u64;
        for log in &r.logs {
            log.check().unwrap();
            let committed = log.count(ReceiptStatus::is_committed);
            let rejected = log.count(|s| matches!(s, ReceiptStatus::Rejected(_)));
            let lost = log.count(|s| *s == ReceiptStatus::Lost);
            prop_assert_eq!(log.sends.len(), committed + rejected + lost);
            total += log.sends.len() as u64;
            for s in &log.sends {
                prop_assert!(ids.insert(s.tx_id));
                prop_assert!(s.starttime <= send_end);
            }
            for rc in &log.receipts {
                if rc.status.is_committed() {
                    prop_assert!(rc.endtime.unwrap() <= hard);
                }
            }
            // Rate limit over every one-second window of this client's sends.
            let mut times: Vec<Nanos> = log.sends.iter().map(|s| s.starttime).collect();
            times.sort_unstable();
            for (i, &t) in times.iter().enumerate() {
                let within = times[i..].iter().take_while(|&&x| x < t + NANOS_PER_SEC).count();
                prop_assert!(within <= plan.rate_limiter as usize);
            }
        }
        prop_assert!(total <= expected_not(&plan));
    }

    #[test]
    fn senders_ignore_confirmations(plan in plan_strategy(), seed in any::<u64>()) {
        // The same workload against a chain that confirms quickly and one that
        // never confirms within the run produces identical send schedules.
        let times = |period: f64| {
            let mut p = presets::get("bitshares").unwrap();
            p.finalization = Finalization::ByPeriod { period };
            p.stabilization_time = 0.0;
            let d = provision(&p, seed).unwrap();
            let handles: Vec<_> = (0..plan.clients).map(|c| d.handle_for(ClientId(c))).collect();
            let drivers: Vec<&dyn Driver> = handles.iter().map(|h| h as &dyn Driver).collect();
            let ctx = StepContext { function: IelFunction::DoNothing, epoch: 0, pacing: Pacing::Even, submit_cost: 0 };
            let logs = run_clients_virtual(&plan, &ctx, &drivers, d.backend().as_ref(), &VirtualClock::new(), 0, &mut HashMap::new());
            logs.iter().map(|l| l.sends.iter().map(|s| (s.tx_id, s.starttime)).collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        prop_assert_eq!(times(0.1), times(1000.0));
    }

    #[test]
    fn gets_read_keys_set_earlier(sets in 1..200u64, gets in 1..400u64, client in 0..8u32, thread in 0..8u32) {
        let mut st = SequenceState::new(ClientId(client), thread);
        let mut written = HashSet::new();
        for _ in 0..sets {
            if let Payload::KvSet { key, .. } = next_payload(IelFunction::Set, &mut st).unwrap() {
                written.insert(key);
            }
        }
        let mut st = st.for_next_step();
        for _ in 0..gets {
            let Payload::KvGet { key } = next_payload(IelFunction::Get, &mut st).unwrap() else { unreachable!() };
            prop_assert!(written.contains(&key));
        }
    }

    #[test]
    fn grouping_partitions(n in 1..300u64, k in 1..60u32, batch in any::<bool>()) {
        let items: Vec<(TxId, Payload)> = (0..n)
            .map(|i| (TxId::new(0, ClientId(0), 0, i), Payload::KvSet { key: format!("k{i}"), value: String::new() }))
            .collect();
        let g = if batch { Grouping::TxPerBatch(k) } else { Grouping::OperationsPerTx(k) }.with_size(k);
        let envs = wrap_grouping(items.clone(), g, ClientId(0)).unwrap();
        let back: Vec<(TxId, Payload)> = envs
            .iter()
            .flat_map(|e| e.tx_ids.iter().copied().zip(e.payloads.iter().cloned()))
            .collect();
        prop_assert_eq!(back, items);
        prop_assert!(envs.iter().all(|e| e.len() <= k as usize && e.atomic == g.is_atomic()));
    }

    #[test]
    fn subscriber_events_monotone(preset in 0..7usize, seed in any::<u64>(), n in 1..200u64) {
        let mut p = presets::all().swap_remove(preset);
        p.link_latency = Some(LinkLatency::default());
        p.stabilization_time = 0.0;
        let d = provision(&p, seed).unwrap();
        let h = d.handle_for(ClientId(0));
        let stream = h.subscribe(ClientId(0)).unwrap();
        for i in 0..n {
            let item = (TxId::new(0, ClientId(0), 0, i), Payload::DoNothing);
            let env = wrap_grouping(vec![item], Grouping::Single, ClientId(0)).unwrap().remove(0);
            let _ = h.submit(&env, i * 7_000_000);
        }
        d.backend().advance_to(120 * NANOS_PER_SEC);
        let events = stream.drain();
        let blocks = d.backend().blocks();
        let mut last = 0;
        for e in &events {
            prop_assert!(e.commit_time >= last);
            last = e.commit_time;
            let b = &blocks[e.block_height as usize];
            prop_assert!(e.commit_time >= *b.persisted_at_per_node.iter().max().unwrap());
            let known = matches!(e.status, EventStatus::Committed { .. } | EventStatus::Rejected(_));
            prop_assert!(known);
        }
    }
}
