//! Workload generation: payload sequencing, per-client rate limiting and the
//! send / listen / terminate protocol of one benchmark.
//!
//! Senders never wait for confirmations. Each client owns one rate limiter
//! shared by its workload threads and one listener that turns commit events
//! into receipts until the listen window closes. Anything still unconfirmed
//! at the end is recorded as lost.

use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};
use std::cmp::Reverse;
use std::sync::{Barrier, Mutex};
use std::time::Duration;

use crate::bal::{wrap_grouping, Admission, Driver, EventStatus, EventStream, SimulatedBackend};
use crate::clock::{Clock, VirtualClock};
use crate::model::{
    secs_to_nanos, BenchmarkFamily, BenchmarkPlan, ClientId, Grouping, IelFunction, Money, Nanos,
    ObservationLog, Payload, ReceiptRecord, ReceiptStatus, RejectReason, SendRecord, TxId,
    NANOS_PER_SEC,
};

/// Initial checking balance of every created account.
pub const INITIAL_CHECKING: Money = 1_000_000;
pub const PAYMENT_AMOUNT: Money = 1;
pub const VALUE_SIZE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acquire {
    Permit,
    WaitUntil(Nanos),
    /// The budget for the whole send window is spent.
    Exhausted,
}

/// How permits are spread inside the one-second window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    /// Grant as soon as the window has room.
    Burst,
    /// Additionally keep `1/limit` seconds between grants.
    #[default]
    Even,
}

/// Sliding one-second window limiter: never more than `limit` grants in any
/// half-open window `[t, t + 1 s)`.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    limit: u32,
    pacing: Pacing,
    grants: VecDeque<Nanos>,
    budget: Option<u64>,
}

impl RateLimiter {
    pub fn new(limit: u32, pacing: Pacing) -> Self {
        assert!(limit > 0, "rate limit must be positive");
        Self { limit, pacing, grants: VecDeque::with_capacity(limit as usize), budget: None }
    }

    /// Caps total grants at `limit * window` so fractional windows never
    /// exceed the rate ceiling.
    pub fn for_window(limit: u32, pacing: Pacing, window: f64) -> Self {
        let mut l = Self::new(limit, pacing);
        l.budget = Some((limit as f64 * window).max(0.0).floor() as u64);
        l
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    pub fn acquire(&mut self, now: Nanos) -> Acquire {
        if self.budget == Some(0) {
            return Acquire::Exhausted;
        }
        while self.grants.front().is_some_and(|&g| g + NANOS_PER_SEC <= now) {
            self.grants.pop_front();
        }
        if self.grants.len() >= self.limit as usize {
            return Acquire::WaitUntil(self.grants[0] + NANOS_PER_SEC);
        }
        if self.pacing == Pacing::Even {
            if let Some(&last) = self.grants.back() {
                let next = last + NANOS_PER_SEC / self.limit as u64;
                if now < next {
                    return Acquire::WaitUntil(next);
                }
            }
        }
        self.grants.push_back(now);
        if let Some(b) = &mut self.budget {
            *b -= 1;
        }
        Acquire::Permit
    }
}

/// One benchmark of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchmarkStep {
    pub function: IelFunction,
}

impl BenchmarkStep {
    pub fn name(&self) -> &'static str {
        self.function.benchmark_name()
    }
}

/// Ordered benchmarks executed between two backend re-provisions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSequence {
    pub family: BenchmarkFamily,
    pub steps: Vec<BenchmarkStep>,
    /// The backend is re-provisioned after the last step.
    pub reprovision_after: bool,
}

pub fn unit_sequence(family: BenchmarkFamily) -> UnitSequence {
    use IelFunction::*;
    let functions: &[IelFunction] = match family {
        BenchmarkFamily::DoNothing => &[DoNothing],
        BenchmarkFamily::KeyValue => &[Set, Get],
        BenchmarkFamily::BankingApp => &[CreateAccount, SendPayment, Balance],
    };
    UnitSequence {
        family,
        steps: functions.iter().map(|&function| BenchmarkStep { function }).collect(),
        reprovision_after: true,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("{function:?} needs {needed} prior entries but only {available} exist")]
    Exhausted { function: IelFunction, needed: u64, available: u64 },
}

/// Counters of one workload thread. Write counters carry over between the
/// steps of a unit so reads target data written earlier in the unit.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SequenceState {
    pub client: u32,
    pub thread: u32,
    pub next_key: u64,
    pub next_account: u64,
    pub read_cursor: u64,
    pub pay_cursor: u64,
    pub balance_cursor: u64,
}

impl SequenceState {
    pub fn new(client: ClientId, thread: u32) -> Self {
        Self { client: client.0, thread, ..Self::default() }
    }

    pub fn key(&self, n: u64) -> String {
        format!("c{}-t{}-k{}", self.client, self.thread, n)
    }

    pub fn account(&self, n: u64) -> String {
        format!("c{}-t{}-a{}", self.client, self.thread, n)
    }

    /// Keeps what earlier steps wrote and resets read cursors.
    pub fn for_next_step(&self) -> Self {
        Self {
            client: self.client,
            thread: self.thread,
            next_key: self.next_key,
            next_account: self.next_account,
            ..Self::default()
        }
    }
}

fn filler(key: &str) -> String {
    let seed: Vec<u8> = if key.is_empty() { b"0".to_vec() } else { key.bytes().collect() };
    seed.iter().cycle().take(VALUE_SIZE).map(|&b| b as char).collect()
}

pub fn next_payload(function: IelFunction, state: &mut SequenceState) -> Result<Payload, WorkloadError> {
    let exhausted = |needed, available| WorkloadError::Exhausted { function, needed, available };
    Ok(match function {
        IelFunction::DoNothing => Payload::DoNothing,
        IelFunction::Set => {
            let key = state.key(state.next_key);
            state.next_key += 1;
            Payload::KvSet { value: filler(&key), key }
        }
        IelFunction::Get => {
            if state.next_key == 0 {
                return Err(exhausted(1, 0));
            }
            let key = state.key(state.read_cursor % state.next_key);
            state.read_cursor += 1;
            Payload::KvGet { key }
        }
        IelFunction::CreateAccount => {
            let account = state.account(state.next_account);
            state.next_account += 1;
            Payload::CreateAccount { account, checking: INITIAL_CHECKING, saving: 0 }
        }
        IelFunction::SendPayment => {
            if state.next_account < 2 {
                return Err(exhausted(2, state.next_account));
            }
            let n = state.pay_cursor % (state.next_account - 1);
            state.pay_cursor += 1;
            Payload::SendPayment {
                from: state.account(n),
                to: state.account(n + 1),
                amount: PAYMENT_AMOUNT,
            }
        }
        IelFunction::Balance => {
            if state.next_account == 0 {
                return Err(exhausted(1, 0));
            }
            let n = state.balance_cursor % state.next_account;
            state.balance_cursor += 1;
            Payload::Balance { account: state.account(n) }
        }
    })
}

/// Absolute deadlines of one benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Phases {
    pub start: Nanos,
    pub send_end: Nanos,
    pub listen_end: Nanos,
    pub hard_stop: Nanos,
}

impl Phases {
    pub fn new(plan: &BenchmarkPlan, start: Nanos) -> Self {
        Self {
            start,
            send_end: start + secs_to_nanos(plan.send_duration),
            listen_end: start + secs_to_nanos(plan.send_duration + plan.listen_grace),
            hard_stop: start + secs_to_nanos(plan.hard_stop),
        }
    }
}

/// What one benchmark run needs besides the plan.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub function: IelFunction,
    pub epoch: u32,
    pub pacing: Pacing,
    /// Time the driver spends in one submit call.
    pub submit_cost: Nanos,
}

enum Next {
    At(Nanos),
    Done,
}

struct Sender {
    client: ClientId,
    thread: u32,
    epoch: u32,
    function: IelFunction,
    grouping: Grouping,
    seq: SequenceState,
    counter: u64,
    /// Issued payloads waiting for their envelope to fill.
    buffer: Vec<(TxId, Payload)>,
    issued: Vec<Nanos>,
    sends: Vec<SendRecord>,
    rejections: Vec<ReceiptRecord>,
    done: bool,
}

impl Sender {
    fn submit(&mut self, now: Nanos, driver: &dyn Driver) {
        if self.buffer.is_empty() {
            return;
        }
        let items = std::mem::take(&mut self.buffer);
        let issued = std::mem::take(&mut self.issued);
        let envelope = wrap_grouping(items, self.grouping, self.client)
            .expect("buffer is non-empty")
            .remove(0);
        // A payload's start time is its permit time, so grouped payloads keep
        // the limiter's spacing.
        for (tx_id, &starttime) in envelope.tx_ids.iter().zip(&issued) {
            self.sends.push(SendRecord { tx_id: *tx_id, envelope_id: envelope.envelope_id, starttime });
        }
        let rejection = match driver.submit(&envelope, now) {
            Ok(Admission::Accepted) => None,
            Ok(Admission::Rejected(reason)) => Some(reason),
            Err(fault) => Some(RejectReason::Driver(fault.to_string())),
        };
        if let Some(reason) = rejection {
            self.rejections.extend(envelope.tx_ids.iter().map(|&tx_id| ReceiptRecord {
                tx_id,
                endtime: Some(now),
                status: ReceiptStatus::Rejected(reason.clone()),
                block_height: None,
            }));
        }
    }

    /// One iteration of the send loop at `now`.
    fn step(
        &mut self,
        now: Nanos,
        phases: &Phases,
        limiter: &Mutex<RateLimiter>,
        driver: &dyn Driver,
        submit_cost: Nanos,
    ) -> Next {
        if self.done {
            return Next::Done;
        }
        if now >= phases.send_end {
            self.submit(phases.send_end.min(now), driver);
            self.done = true;
            return Next::Done;
        }
        let grant = limiter.lock().unwrap_or_else(|e| e.into_inner()).acquire(now);
        match grant {
            Acquire::WaitUntil(t) => Next::At(t.min(phases.send_end)),
            Acquire::Exhausted => Next::At(phases.send_end),
            Acquire::Permit => match next_payload(self.function, &mut self.seq) {
                Ok(payload) => {
                    let id = TxId::new(self.epoch, self.client, self.thread, self.counter);
                    self.counter += 1;
                    self.buffer.push((id, payload));
                    self.issued.push(now);
                    if self.buffer.len() >= self.grouping.size() as usize {
                        self.submit(now, driver);
                        return Next::At(now + submit_cost);
                    }
                    Next::At(now)
                }
                Err(_) => {
                    self.submit(now, driver);
                    self.done = true;
                    Next::Done
                }
            },
        }
    }
}

struct Listener {
    stream: EventStream,
    epoch: u32,
    receipts: HashMap<TxId, ReceiptRecord>,
}

impl Listener {
    fn record(&mut self, ev: crate::bal::CommitEvent, listen_end: Nanos) {
        if ev.tx_id.epoch != self.epoch || ev.commit_time > listen_end {
            return;
        }
        let status = match ev.status {
            EventStatus::Committed { valid } => ReceiptStatus::Committed { valid },
            EventStatus::Rejected(r) => ReceiptStatus::Rejected(r),
        };
        self.receipts.entry(ev.tx_id).or_insert(ReceiptRecord {
            tx_id: ev.tx_id,
            endtime: Some(ev.commit_time),
            status,
            block_height: Some(ev.block_height),
        });
    }

    fn drain(&mut self, listen_end: Nanos) {
        for ev in self.stream.drain() {
            self.record(ev, listen_end);
        }
    }
}

/// Final per-client log: send records in order, then one receipt per send.
fn finish_log(client: ClientId, senders: Vec<Sender>, listener: Listener) -> ObservationLog {
    let mut sends = Vec::new();
    let mut receipts = listener.receipts;
    for s in senders {
        for r in s.rejections {
            receipts.insert(r.tx_id, r);
        }
        sends.extend(s.sends);
    }
    sends.sort_by_key(|s| (s.starttime, s.tx_id));
    let sent: HashSet<TxId> = sends.iter().map(|s| s.tx_id).collect();
    receipts.retain(|id, _| sent.contains(id));
    let receipts = sends
        .iter()
        .map(|s| receipts.remove(&s.tx_id).unwrap_or_else(|| ReceiptRecord::lost(s.tx_id)))
        .collect();
    ObservationLog { client_id: client, sends, receipts }
}

fn make_senders(
    plan: &BenchmarkPlan,
    ctx: &StepContext,
    client: ClientId,
    states: &mut HashMap<(u32, u32), SequenceState>,
) -> Vec<Sender> {
    (0..plan.workload_threads_per_client)
        .map(|thread| {
            let seq = states
                .get(&(client.0, thread))
                .map(SequenceState::for_next_step)
                .unwrap_or_else(|| SequenceState::new(client, thread));
            Sender {
                client,
                thread,
                epoch: ctx.epoch,
                function: ctx.function,
                grouping: plan.grouping,
                seq,
                counter: 0,
                buffer: Vec::new(),
                issued: Vec::new(),
                sends: Vec::new(),
                rejections: Vec::new(),
                done: false,
            }
        })
        .collect()
}

fn store_states(states: &mut HashMap<(u32, u32), SequenceState>, senders: &[Sender]) {
    for s in senders {
        states.insert((s.client.0, s.thread), s.seq.clone());
    }
}

/// Runs all clients of one benchmark on a virtual clock as cooperatively
/// scheduled tasks. `drivers[i]` serves client `i`. Thread counters are read
/// from and written back to `states`.
pub fn run_clients_virtual(
    plan: &BenchmarkPlan,
    ctx: &StepContext,
    drivers: &[&dyn Driver],
    backend: &dyn SimulatedBackend,
    clock: &VirtualClock,
    start: Nanos,
    states: &mut HashMap<(u32, u32), SequenceState>,
) -> Vec<ObservationLog> {
    let phases = Phases::new(plan, start);
    clock.advance_to(start);
    backend.advance_to(start);

    let mut clients: Vec<(Mutex<RateLimiter>, Vec<Sender>, Listener)> = Vec::new();
    for (i, driver) in drivers.iter().enumerate() {
        let client = ClientId(i as u32);
        let stream = driver.subscribe(client).ok();
        let senders = make_senders(plan, ctx, client, states);
        let limiter = Mutex::new(RateLimiter::for_window(plan.rate_limiter, ctx.pacing, plan.send_duration));
        let stream = stream.unwrap_or_else(closed_stream);
        clients.push((limiter, senders, Listener { stream, epoch: ctx.epoch, receipts: HashMap::new() }));
    }

    let mut queue = BinaryHeap::new();
    let mut order = 0u64;
    for (c, (_, senders, _)) in clients.iter().enumerate() {
        for t in 0..senders.len() {
            queue.push(Reverse((start, order, c, t)));
            order += 1;
        }
    }

    while let Some(Reverse((at, _, c, t))) = queue.pop() {
        clock.advance_to(at);
        backend.advance_to(at);
        for (_, _, listener) in clients.iter_mut() {
            listener.drain(phases.listen_end);
        }
        let (limiter, senders, _) = &mut clients[c];
        if let Next::At(next) =
            senders[t].step(at, &phases, limiter, drivers[c], ctx.submit_cost)
        {
            queue.push(Reverse((next.max(at), order, c, t)));
            order += 1;
        }
    }

    for deadline in [phases.listen_end, phases.hard_stop] {
        clock.advance_to(deadline);
        backend.advance_to(deadline);
        for (_, _, listener) in clients.iter_mut() {
            listener.drain(phases.listen_end);
        }
    }

    clients
        .into_iter()
        .enumerate()
        .map(|(i, (_, senders, listener))| {
            store_states(states, &senders);
            finish_log(ClientId(i as u32), senders, listener)
        })
        .collect()
}

fn closed_stream() -> EventStream {
    crate::bal::closed_stream()
}

/// Runs all clients on real threads against a wall clock. When `backend` is
/// given, a pump thread keeps the simulated backend's time in step with the
/// clock.
pub fn run_clients_wall(
    plan: &BenchmarkPlan,
    ctx: &StepContext,
    drivers: &[&dyn Driver],
    backend: Option<&dyn SimulatedBackend>,
    clock: &dyn Clock,
    start: Nanos,
    states: &mut HashMap<(u32, u32), SequenceState>,
) -> Vec<ObservationLog> {
    let phases = Phases::new(plan, start);
    let total_threads: usize = drivers.len() * (plan.workload_threads_per_client as usize + 1);
    let barrier = Barrier::new(total_threads);

    let limiters: Vec<Mutex<RateLimiter>> = drivers
        .iter()
        .map(|_| Mutex::new(RateLimiter::for_window(plan.rate_limiter, ctx.pacing, plan.send_duration)))
        .collect();
    let mut setups = Vec::new();
    for (i, driver) in drivers.iter().enumerate() {
        let client = ClientId(i as u32);
        let stream = driver.subscribe(client).unwrap_or_else(|_| closed_stream());
        let senders = make_senders(plan, ctx, client, states);
        setups.push((&limiters[i], senders, Listener { stream, epoch: ctx.epoch, receipts: HashMap::new() }));
    }

    let results = std::thread::scope(|scope| {
        let pump = backend.map(|b| {
            scope.spawn(move || {
                while clock.now() < phases.hard_stop {
                    b.advance_to(clock.now());
                    std::thread::sleep(Duration::from_millis(1));
                }
                b.advance_to(phases.hard_stop);
            })
        });

        let mut joins = Vec::new();
        for (c, (limiter, senders, listener)) in setups.into_iter().enumerate() {
            let driver = drivers[c];
            let barrier = &barrier;
            joins.push(scope.spawn(move || {
                let sender_joins: Vec<_> = senders
                    .into_iter()
                    .map(|mut s| {
                        scope.spawn(move || {
                            barrier.wait();
                            clock.sleep_until(phases.start);
                            while let Next::At(t) =
                                s.step(clock.now(), &phases, limiter, driver, ctx.submit_cost)
                            {
                                clock.sleep_until(t);
                            }
                            s
                        })
                    })
                    .collect();
                let mut listener = listener;
                barrier.wait();
                while clock.now() < phases.listen_end {
                    match listener.stream.next_timeout(Duration::from_millis(5)) {
                        Ok(Some(ev)) => listener.record(ev, phases.listen_end),
                        Ok(None) => {}
                        Err(_) => break,
                    }
                }
                listener.drain(phases.listen_end);
                let senders: Vec<Sender> =
                    sender_joins.into_iter().map(|j| j.join().expect("sender thread")).collect();
                clock.sleep_until(phases.hard_stop);
                (senders, listener)
            }));
        }
        let out: Vec<_> = joins.into_iter().map(|j| j.join().expect("client thread")).collect();
        if let Some(p) = pump {
            p.join().expect("pump thread");
        }
        out
    });

    results
        .into_iter()
        .enumerate()
        .map(|(i, (senders, listener))| {
            store_states(states, &senders);
            finish_log(ClientId(i as u32), senders, listener)
        })
        .collect()
}

/// Single-client convenience wrapper over [`run_clients_virtual`].
pub fn run_client(
    plan: &BenchmarkPlan,
    ctx: &StepContext,
    driver: &dyn Driver,
    backend: &dyn SimulatedBackend,
    clock: &VirtualClock,
    start: Nanos,
) -> ObservationLog {
    let mut single = plan.clone();
    single.clients = 1;
    let mut states = HashMap::new();
    run_clients_virtual(&single, ctx, &[driver], backend, clock, start, &mut states).remove(0)
}
