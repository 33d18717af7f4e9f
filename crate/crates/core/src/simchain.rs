//! Deterministic simulated permissioned blockchain.
//!
//! One [`SimChain`] is a single-threaded event loop: envelopes enter through
//! [`SimChain::ingress`], pass an optional signing path, wait in the pending
//! queue, get cut into blocks by count or by period, are executed against the
//! [`WorldState`] under the profile's conflict policy, and finally replicate to
//! every node. Commit notifications fire when the last node has persisted the
//! block.
//!
//! Blocks go through consensus one at a time: the next block is not proposed
//! before the previous one is persisted everywhere. Consensus cost therefore
//! bounds throughput as well as latency.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::model::{
    secs_to_nanos, Atomicity, ClientId, ConflictPolicy, Finalization, LinkLatency, Money, Nanos,
    Payload, RejectReason, Signing, SystemProfile, TransactionEnvelope, TxId, NANOS_PER_SEC,
};

/// Stream id used for replication delays.
pub const REPLICATION_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlacementError {
    #[error("{nodes} nodes exceed capacity of {servers} servers x {max_per_server}")]
    CapacityExceeded { nodes: u32, servers: u32, max_per_server: u32 },
}

/// Round-robin assignment of nodes to servers: entry `i` is node `i`'s server.
pub fn place_nodes(
    node_count: u32,
    server_count: u32,
    max_per_server: u32,
) -> Result<Vec<u32>, PlacementError> {
    if server_count == 0 || node_count as u64 > server_count as u64 * max_per_server as u64 {
        return Err(PlacementError::CapacityExceeded {
            nodes: node_count,
            servers: server_count,
            max_per_server,
        });
    }
    Ok((0..node_count).map(|i| i % server_count).collect())
}

/// Added admission delay of the signing path for an idle signer.
pub fn signing_delay(signing: Signing, node_count: u32) -> Nanos {
    match signing {
        Signing::None => 0,
        Signing::Serial { per_node_delay } => secs_to_nanos(per_node_delay * node_count as f64),
        Signing::Parallel { per_node_delay } => secs_to_nanos(per_node_delay),
    }
}

#[derive(Clone, Debug)]
pub struct LinkLatencyModel {
    pub mu: f64,
    pub sigma: f64,
    pub stream: u64,
    normal: Normal<f64>,
}

impl LinkLatencyModel {
    pub fn new(latency: LinkLatency, stream: u64) -> Self {
        let normal = Normal::new(latency.mu, latency.sigma.max(0.0))
            .expect("sigma is non-negative and finite");
        Self { mu: latency.mu, sigma: latency.sigma, stream, normal }
    }

    /// Generator for this model's stream; draws are a function of
    /// (seed, stream, draw index).
    pub fn rng(&self, seed: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// One link delay in seconds, truncated at zero.
pub fn sample_link_delay(model: &LinkLatencyModel, rng: &mut ChaCha8Rng) -> f64 {
    if model.sigma == 0.0 {
        return model.mu.max(0.0);
    }
    model.normal.sample(rng).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FailReason {
    /// Writes a key or account already written earlier in the block.
    WriteConflict,
    /// Reads an account written earlier in the block.
    ReadConflict,
    MissingKey,
    MissingAccount,
    AccountExists,
    InsufficientFunds,
    /// Consumes a state that was already consumed.
    DoubleSpend,
    /// Another payload of the same atomic envelope failed.
    AtomicAbort,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecStatus {
    Valid,
    Invalid(FailReason),
}

impl ExecStatus {
    pub fn is_valid(self) -> bool {
        self == ExecStatus::Valid
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub height: u64,
    pub txs: Vec<(TxId, ExecStatus)>,
    pub formed_at: Nanos,
    pub persisted_at_per_node: Vec<Nanos>,
}

impl Block {
    /// Time at which the block is persisted on every node.
    pub fn committed_at(&self) -> Nanos {
        self.persisted_at_per_node.iter().copied().max().unwrap_or(self.formed_at)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Account {
    pub checking: Money,
    pub saving: Money,
    pub version: u64,
}

#[derive(Clone, Debug, Default)]
pub struct WorldState {
    pub kv: HashMap<String, String>,
    pub accounts: HashMap<String, Account>,
    /// `(account, version)` pairs consumed by committed payments.
    pub consumed_states: HashSet<(String, u64)>,
    /// Sum of funds ever created by `CreateAccount`.
    pub initial_funds: u128,
}

impl WorldState {
    pub fn total_money(&self) -> u128 {
        self.accounts.values().map(|a| a.checking as u128 + a.saving as u128).sum()
    }

    fn version(&self, account: &str) -> Option<u64> {
        self.accounts.get(account).map(|a| a.version)
    }
}

enum Undo {
    Kv(String, Option<String>),
    Account(String, Option<Account>),
    Consumed(String, u64),
    Funds(u128),
}

/// An envelope waiting in the ingress queue.
#[derive(Clone, Debug)]
pub struct QueuedEnvelope {
    pub envelope: TransactionEnvelope,
    pub arrival: Nanos,
    pub admitted_at: Nanos,
    /// Account versions observed at ingress, per payload. Used by notary checks.
    pub read_versions: Vec<Vec<(String, Option<u64>)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TxOutcome {
    pub tx_id: TxId,
    pub origin: ClientId,
    pub status: ExecStatus,
    /// Whether the transaction is appended to the block.
    pub kept: bool,
}

fn touched_accounts(p: &Payload) -> Vec<&str> {
    match p {
        Payload::CreateAccount { account, .. } | Payload::Balance { account } => vec![account],
        Payload::SendPayment { from, to, .. } => vec![from, to],
        _ => vec![],
    }
}

fn read_versions(world: &WorldState, env: &TransactionEnvelope) -> Vec<Vec<(String, Option<u64>)>> {
    env.payloads
        .iter()
        .map(|p| {
            touched_accounts(p)
                .into_iter()
                .map(|a| (a.to_string(), world.version(a)))
                .collect()
        })
        .collect()
}

struct BlockExecutor<'a> {
    world: &'a mut WorldState,
    policy: ConflictPolicy,
    /// Keys and accounts written by valid payloads earlier in the block.
    written: HashSet<String>,
}

impl BlockExecutor<'_> {
    fn apply(
        &mut self,
        payload: &Payload,
        versions: &[(String, Option<u64>)],
        local: &mut HashSet<String>,
        undo: &mut Vec<Undo>,
    ) -> Result<(), FailReason> {
        let written = |k: &str| self.written.contains(k) || local.contains(k);
        match payload {
            Payload::DoNothing => Ok(()),
            Payload::KvSet { key, value } => {
                let slot = format!("kv:{key}");
                if written(&slot) {
                    return Err(FailReason::WriteConflict);
                }
                let prev = self.world.kv.insert(key.clone(), value.clone());
                undo.push(Undo::Kv(key.clone(), prev));
                local.insert(slot);
                Ok(())
            }
            Payload::KvGet { key } => {
                if self.world.kv.contains_key(key) {
                    Ok(())
                } else {
                    Err(FailReason::MissingKey)
                }
            }
            Payload::CreateAccount { account, checking, saving } => {
                let slot = format!("acct:{account}");
                if written(&slot) {
                    return Err(FailReason::WriteConflict);
                }
                if self.world.accounts.contains_key(account) {
                    return Err(FailReason::AccountExists);
                }
                let acct = Account { checking: *checking, saving: *saving, version: 0 };
                self.world.accounts.insert(account.clone(), acct);
                undo.push(Undo::Account(account.clone(), None));
                undo.push(Undo::Funds(self.world.initial_funds));
                self.world.initial_funds += *checking as u128 + *saving as u128;
                local.insert(slot);
                Ok(())
            }
            Payload::Balance { account } => {
                if written(&format!("acct:{account}")) {
                    return Err(FailReason::ReadConflict);
                }
                if self.world.accounts.contains_key(account) {
                    Ok(())
                } else {
                    Err(FailReason::MissingAccount)
                }
            }
            Payload::SendPayment { from, to, amount } => {
                let (fs, ts) = (format!("acct:{from}"), format!("acct:{to}"));
                if written(&fs) || written(&ts) {
                    return Err(FailReason::ReadConflict);
                }
                let (Some(src), Some(dst)) =
                    (self.world.accounts.get(from), self.world.accounts.get(to))
                else {
                    return Err(FailReason::MissingAccount);
                };
                if self.policy == ConflictPolicy::NotaryReject {
                    for (account, seen) in versions {
                        let current = self.world.version(account);
                        let consumed = seen
                            .map(|v| self.world.consumed_states.contains(&(account.clone(), v)))
                            .unwrap_or(true);
                        if consumed || current != *seen {
                            return Err(FailReason::DoubleSpend);
                        }
                    }
                }
                if src.checking < *amount {
                    return Err(FailReason::InsufficientFunds);
                }
                if from == to {
                    return Ok(());
                }
                let (src, dst) = (src.clone(), dst.clone());
                for (name, old) in [(from, &src), (to, &dst)] {
                    let state = (name.clone(), old.version);
                    debug_assert!(!self.world.consumed_states.contains(&state));
                    self.world.consumed_states.insert(state.clone());
                    undo.push(Undo::Consumed(state.0, state.1));
                    undo.push(Undo::Account(name.clone(), Some(old.clone())));
                }
                let a = self.world.accounts.get_mut(from).expect("checked above");
                a.checking -= amount;
                a.version += 1;
                let b = self.world.accounts.get_mut(to).expect("checked above");
                b.checking += amount;
                b.version += 1;
                local.insert(fs);
                local.insert(ts);
                Ok(())
            }
        }
    }

    fn rollback(&mut self, undo: Vec<Undo>) {
        for u in undo.into_iter().rev() {
            match u {
                Undo::Kv(k, Some(v)) => {
                    self.world.kv.insert(k, v);
                }
                Undo::Kv(k, None) => {
                    self.world.kv.remove(&k);
                }
                Undo::Account(a, Some(prev)) => {
                    self.world.accounts.insert(a, prev);
                }
                Undo::Account(a, None) => {
                    self.world.accounts.remove(&a);
                }
                Undo::Consumed(a, v) => {
                    self.world.consumed_states.remove(&(a, v));
                }
                Undo::Funds(f) => self.world.initial_funds = f,
            }
        }
    }
}

/// Executes the envelopes of one block in order and returns one outcome per
/// payload.
pub fn execute_block(
    envelopes: &[QueuedEnvelope],
    world: &mut WorldState,
    profile: &SystemProfile,
) -> Vec<TxOutcome> {
    let mut exec = BlockExecutor { world, policy: profile.conflict_policy, written: HashSet::new() };
    let whole = profile.atomicity == Atomicity::WholeEnvelope;
    let mut out = Vec::new();
    for q in envelopes {
        let env = &q.envelope;
        let atomic = whole && env.atomic;
        let mut statuses = Vec::with_capacity(env.len());
        let mut env_undo = Vec::new();
        let mut env_local = HashSet::new();
        for (i, payload) in env.payloads.iter().enumerate() {
            let versions = q.read_versions.get(i).map(Vec::as_slice).unwrap_or(&[]);
            let mut undo = Vec::new();
            let mut local = HashSet::new();
            let res = if atomic {
                exec.apply(payload, versions, &mut env_local, &mut undo)
            } else {
                exec.apply(payload, versions, &mut local, &mut undo)
            };
            match res {
                Ok(()) => {
                    env_undo.extend(undo);
                    exec.written.extend(local);
                    statuses.push(ExecStatus::Valid);
                }
                Err(reason) => {
                    exec.rollback(undo);
                    statuses.push(ExecStatus::Invalid(reason));
                }
            }
        }
        if atomic {
            if statuses.iter().all(|s| s.is_valid()) {
                exec.written.extend(env_local);
            } else {
                exec.rollback(env_undo);
                for s in &mut statuses {
                    if s.is_valid() {
                        *s = ExecStatus::Invalid(FailReason::AtomicAbort);
                    }
                }
            }
        }
        for (tx_id, status) in env.tx_ids.iter().zip(statuses) {
            let kept = profile.conflict_policy == ConflictPolicy::AppendAndMark || status.is_valid();
            out.push(TxOutcome { tx_id: *tx_id, origin: env.origin_client, status, kept });
        }
    }
    out
}

/// Notification produced when a block is persisted everywhere, or when a
/// discarded transaction is reported back.
#[derive(Clone, Debug, PartialEq)]
pub struct Notification {
    pub origin: ClientId,
    pub tx_id: TxId,
    pub at: Nanos,
    pub block_height: u64,
    pub outcome: NotificationKind,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NotificationKind {
    Committed { valid: bool },
    Rejected(RejectReason),
}

struct InFlight {
    block: Block,
    notes: Vec<Notification>,
}

/// Simulated backend state machine. Time only moves through
/// [`SimChain::advance_to`].
pub struct SimChain {
    profile: SystemProfile,
    seed: u64,
    now: Nanos,
    stabilized_at: Nanos,
    latency: Option<(LinkLatencyModel, ChaCha8Rng)>,
    signer_free_at: Nanos,
    pending: VecDeque<QueuedEnvelope>,
    arrivals: VecDeque<Nanos>,
    stalled: bool,
    next_tick: Option<Nanos>,
    tick_deferred: bool,
    in_flight: Option<InFlight>,
    blocks: Vec<Block>,
    world: WorldState,
    outbox: Vec<Notification>,
    placement: Vec<u32>,
}

impl SimChain {
    pub fn new(profile: SystemProfile, seed: u64) -> Result<Self, PlacementError> {
        let placement = place_nodes(
            profile.node_count,
            profile.topology.servers,
            profile.topology.max_nodes_per_server,
        )?;
        let latency = profile.link_latency.map(|l| {
            let model = LinkLatencyModel::new(l, REPLICATION_STREAM);
            let rng = model.rng(seed);
            (model, rng)
        });
        let next_tick = match profile.finalization {
            Finalization::ByPeriod { period } => Some(secs_to_nanos(period).max(1)),
            Finalization::ByCount { .. } => None,
        };
        Ok(Self {
            stabilized_at: secs_to_nanos(profile.stabilization_time),
            profile,
            seed,
            now: 0,
            latency,
            signer_free_at: 0,
            pending: VecDeque::new(),
            arrivals: VecDeque::new(),
            stalled: false,
            next_tick,
            tick_deferred: false,
            in_flight: None,
            blocks: Vec::new(),
            world: WorldState::default(),
            outbox: Vec::new(),
            placement,
        })
    }

    pub fn profile(&self) -> &SystemProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> Nanos {
        self.now
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn placement(&self) -> &[u32] {
        &self.placement
    }

    pub fn is_stalled(&self) -> bool {
        self.stalled
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn take_notifications(&mut self) -> Vec<Notification> {
        std::mem::take(&mut self.outbox)
    }

    /// Admits `envelope` at `arrival` (which must not precede the chain's
    /// current time) or rejects it.
    pub fn ingress(
        &mut self,
        envelope: TransactionEnvelope,
        arrival: Nanos,
    ) -> Result<Nanos, RejectReason> {
        self.advance_to(arrival);
        // Concurrent wall-clock submitters may race; chain time never goes back.
        let arrival = self.now;
        if arrival < self.stabilized_at {
            return Err(RejectReason::NotStabilized);
        }
        self.observe_arrivals(arrival, envelope.len());
        if let Some(cap) = self.profile.queue_capacity {
            if self.pending.len() >= cap as usize {
                return Err(RejectReason::QueueFull);
            }
        }
        let admitted_at = self.sign_path(arrival);
        let read_versions = if self.profile.conflict_policy == ConflictPolicy::NotaryReject {
            read_versions(&self.world, &envelope)
        } else {
            Vec::new()
        };
        self.pending.push_back(QueuedEnvelope { envelope, arrival, admitted_at, read_versions });
        Ok(admitted_at)
    }

    /// Reserves the signing path for one envelope arriving at `now` and
    /// returns its admission time. The signer handles one envelope at a time.
    pub fn sign_path(&mut self, now: Nanos) -> Nanos {
        let delay = signing_delay(self.profile.signing, self.profile.node_count);
        if delay == 0 {
            return now;
        }
        let start = now.max(self.signer_free_at);
        self.signer_free_at = start + delay;
        self.signer_free_at
    }

    fn observe_arrivals(&mut self, at: Nanos, count: usize) {
        let Some(rule) = self.profile.stall_rule else { return };
        let Finalization::ByPeriod { period } = self.profile.finalization else { return };
        if period > rule.period_at_most || self.stalled {
            return;
        }
        self.arrivals.extend(std::iter::repeat_n(at, count));
        while self.arrivals.front().is_some_and(|&t| t + NANOS_PER_SEC <= at) {
            self.arrivals.pop_front();
        }
        if self.arrivals.len() as f64 >= rule.rate_at_least {
            self.stalled = true;
            self.arrivals.clear();
        }
    }

    /// Number of pending envelopes already admitted. Admission times are
    /// non-decreasing along the queue, so these form a prefix.
    fn drainable_len(&self) -> usize {
        let now = self.now;
        self.pending.partition_point(|q| q.admitted_at <= now)
    }

    fn drainable(&self) -> impl Iterator<Item = &QueuedEnvelope> {
        self.pending.range(..self.drainable_len())
    }

    /// Payloads ready for a count-driven block, counted up to `cap`.
    fn ready_payloads(&self, cap: usize) -> usize {
        let mut n = 0;
        for q in self.drainable() {
            n += q.envelope.len();
            if n >= cap {
                break;
            }
        }
        n
    }

    /// Earliest time at which internal state changes, if any.
    pub fn next_event_at(&self) -> Option<Nanos> {
        let mut next: Option<Nanos> = None;
        let mut consider = |t: Nanos| next = Some(next.map_or(t, |n: Nanos| n.min(t)));
        if let Some(f) = &self.in_flight {
            consider(f.block.committed_at());
        }
        match self.profile.finalization {
            Finalization::ByPeriod { .. } => {
                if let Some(t) = self.next_tick {
                    consider(t);
                }
                if self.tick_deferred && self.in_flight.is_none() {
                    consider(self.now);
                }
            }
            Finalization::ByCount { max_count, fallback_timeout } => {
                if self.in_flight.is_none() {
                    let ready = self.ready_payloads(max_count as usize);
                    if ready >= max_count as usize {
                        consider(self.now);
                    } else if let Some(oldest) = self.drainable().next() {
                        consider(oldest.admitted_at + secs_to_nanos(fallback_timeout));
                    }
                    if let Some(q) = self.pending.get(self.drainable_len()) {
                        consider(q.admitted_at);
                    }
                }
            }
        }
        next
    }

    /// Processes every internal event scheduled at or before `t`.
    pub fn advance_to(&mut self, t: Nanos) {
        while let Some(at) = self.next_event_at() {
            if at > t {
                break;
            }
            self.now = self.now.max(at);
            self.step();
        }
        self.now = self.now.max(t);
    }

    fn step(&mut self) {
        let now = self.now;
        if self.in_flight.as_ref().is_some_and(|f| f.block.committed_at() <= now) {
            let InFlight { block, notes } = self.in_flight.take().expect("checked");
            self.blocks.push(block);
            self.outbox.extend(notes);
        }
        match self.profile.finalization {
            Finalization::ByPeriod { period } => {
                if self.next_tick.is_some_and(|t| t <= now) {
                    let step = secs_to_nanos(period).max(1);
                    while let Some(t) = self.next_tick.filter(|&t| t <= now) {
                        self.next_tick = Some(t + step);
                    }
                    self.tick_deferred = true;
                }
                if self.tick_deferred && self.in_flight.is_none() {
                    self.tick_deferred = false;
                    let take = if self.stalled { 0 } else { self.drainable_len() };
                    self.form_block(take);
                }
            }
            Finalization::ByCount { max_count, fallback_timeout } => {
                if self.in_flight.is_some() {
                    return;
                }
                let mut take = 0;
                let mut payloads = 0usize;
                for q in self.drainable() {
                    if payloads + q.envelope.len() > max_count as usize {
                        break;
                    }
                    payloads += q.envelope.len();
                    take += 1;
                }
                let full = payloads >= max_count as usize
                    || take < self.drainable_len();
                let timed_out = self
                    .drainable()
                    .next()
                    .is_some_and(|q| q.admitted_at + secs_to_nanos(fallback_timeout) <= now);
                if take > 0 && (full || timed_out) {
                    self.form_block(take);
                }
            }
        }
    }

    /// Cuts a block from the first `take` pending envelopes, executes it and
    /// starts its replication.
    fn form_block(&mut self, take: usize) {
        let formed_at = self.now;
        let batch: Vec<QueuedEnvelope> = self.pending.drain(..take).collect();
        let outcomes = execute_block(&batch, &mut self.world, &self.profile);
        let height = self.blocks.len() as u64;
        let persisted_at_per_node = self.replicate(formed_at);
        let committed_at = persisted_at_per_node.iter().copied().max().unwrap_or(formed_at);

        let mut notes = Vec::new();
        let mut txs = Vec::new();
        for o in outcomes {
            if o.kept {
                txs.push((o.tx_id, o.status));
                notes.push(Notification {
                    origin: o.origin,
                    tx_id: o.tx_id,
                    at: committed_at,
                    block_height: height,
                    outcome: NotificationKind::Committed { valid: o.status.is_valid() },
                });
            } else if !self.profile.silent_discard {
                notes.push(Notification {
                    origin: o.origin,
                    tx_id: o.tx_id,
                    at: committed_at,
                    block_height: height,
                    outcome: NotificationKind::Rejected(RejectReason::Conflict),
                });
            }
        }
        let block = Block { height, txs, formed_at, persisted_at_per_node };
        self.in_flight = Some(InFlight { block, notes });
    }

    /// Per-node persistence times for a block formed at `formed_at`.
    fn replicate(&mut self, formed_at: Nanos) -> Vec<Nanos> {
        let n = self.profile.node_count;
        let cost = self.profile.consensus_cost;
        let fixed = formed_at + secs_to_nanos(cost.base + cost.per_node * n as f64);
        (0..n)
            .map(|_| match &mut self.latency {
                Some((model, rng)) => fixed + secs_to_nanos(sample_link_delay(model, rng)),
                None => fixed,
            })
            .collect()
    }
}
