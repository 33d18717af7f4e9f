//! Shared domain vocabulary: payloads, envelopes, client observations,
//! system profiles and benchmark plans.
//!
//! All timestamps are integer nanoseconds on a monotonic clock owned by the
//! run (see [`crate::clock`]). Configuration values are decimal seconds and
//! are converted at the simulation boundary.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Monotonic nanoseconds.
pub type Nanos = u64;

/// Integer currency used by the banking functions.
pub type Money = u64;

pub const NANOS_PER_SEC: Nanos = 1_000_000_000;

pub fn secs_to_nanos(secs: f64) -> Nanos {
    if secs <= 0.0 {
        0
    } else {
        (secs * NANOS_PER_SEC as f64).round() as Nanos
    }
}

pub fn nanos_to_secs(nanos: Nanos) -> f64 {
    nanos as f64 / NANOS_PER_SEC as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientId(pub u32);

impl fmt::Display for ClientId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// Payload-level transaction id, unique within a run.
///
/// `epoch` distinguishes benchmarks executed against the same backend so that
/// ids never repeat across the steps of one benchmark unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId {
    pub epoch: u32,
    pub client: u32,
    pub thread: u32,
    pub seq: u64,
}

impl TxId {
    pub fn new(epoch: u32, client: ClientId, thread: u32, seq: u64) -> Self {
        Self { epoch, client: client.0, thread, seq }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut it = s.split('-');
        let epoch = it.next()?.strip_prefix('e')?.parse().ok()?;
        let client = it.next()?.strip_prefix('c')?.parse().ok()?;
        let thread = it.next()?.strip_prefix('w')?.parse().ok()?;
        let seq = it.next()?.parse().ok()?;
        it.next().is_none().then_some(Self { epoch, client, thread, seq })
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}-c{}-w{}-{}", self.epoch, self.client, self.thread, self.seq)
    }
}

/// Envelope ids reuse the id of the envelope's first payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnvelopeId(pub TxId);

impl fmt::Display for EnvelopeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "env-{}", self.0)
    }
}

/// One call into the interface execution layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Payload {
    DoNothing,
    KvSet { key: String, value: String },
    KvGet { key: String },
    CreateAccount { account: String, checking: Money, saving: Money },
    SendPayment { from: String, to: String, amount: Money },
    Balance { account: String },
}

impl Payload {
    pub fn function(&self) -> IelFunction {
        match self {
            Payload::DoNothing => IelFunction::DoNothing,
            Payload::KvSet { .. } => IelFunction::Set,
            Payload::KvGet { .. } => IelFunction::Get,
            Payload::CreateAccount { .. } => IelFunction::CreateAccount,
            Payload::SendPayment { .. } => IelFunction::SendPayment,
            Payload::Balance { .. } => IelFunction::Balance,
        }
    }
}

/// The six functions exposed by the three execution layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IelFunction {
    DoNothing,
    Set,
    Get,
    CreateAccount,
    SendPayment,
    Balance,
}

impl IelFunction {
    pub fn family(self) -> BenchmarkFamily {
        match self {
            IelFunction::DoNothing => BenchmarkFamily::DoNothing,
            IelFunction::Set | IelFunction::Get => BenchmarkFamily::KeyValue,
            IelFunction::CreateAccount | IelFunction::SendPayment | IelFunction::Balance => {
                BenchmarkFamily::BankingApp
            }
        }
    }

    /// Benchmark name in `Family-Function` form, e.g. `KeyValue-Set`.
    pub fn benchmark_name(self) -> &'static str {
        match self {
            IelFunction::DoNothing => "DoNothing",
            IelFunction::Set => "KeyValue-Set",
            IelFunction::Get => "KeyValue-Get",
            IelFunction::CreateAccount => "BankingApp-CreateAccount",
            IelFunction::SendPayment => "BankingApp-SendPayment",
            IelFunction::Balance => "BankingApp-Balance",
        }
    }

    pub fn from_benchmark_name(name: &str) -> Option<Self> {
        ALL_FUNCTIONS.iter().copied().find(|f| f.benchmark_name() == name)
    }
}

pub const ALL_FUNCTIONS: [IelFunction; 6] = [
    IelFunction::DoNothing,
    IelFunction::Set,
    IelFunction::Get,
    IelFunction::CreateAccount,
    IelFunction::SendPayment,
    IelFunction::Balance,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchmarkFamily {
    DoNothing,
    KeyValue,
    BankingApp,
}

impl fmt::Display for BenchmarkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchmarkFamily::DoNothing => "DoNothing",
            BenchmarkFamily::KeyValue => "KeyValue",
            BenchmarkFamily::BankingApp => "BankingApp",
        })
    }
}

/// How payloads are packed into system transactions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    #[default]
    Single,
    /// Several operations inside one atomic transaction.
    OperationsPerTx(u32),
    /// Several transactions inside one atomic batch.
    TxPerBatch(u32),
}

impl Grouping {
    /// Payloads per envelope.
    pub fn size(self) -> u32 {
        match self {
            Grouping::Single => 1,
            Grouping::OperationsPerTx(k) | Grouping::TxPerBatch(k) => k,
        }
    }

    pub fn is_atomic(self) -> bool {
        !matches!(self, Grouping::Single)
    }

    /// Same grouping kind with a different size; `k = 1` collapses to `Single`.
    pub fn with_size(self, k: u32) -> Grouping {
        match (self, k) {
            (_, 1) => Grouping::Single,
            (Grouping::TxPerBatch(_), k) => Grouping::TxPerBatch(k),
            (_, k) => Grouping::OperationsPerTx(k),
        }
    }
}

/// The unit of submission: one or more payloads handed to the backend together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransactionEnvelope {
    pub envelope_id: EnvelopeId,
    pub tx_ids: Vec<TxId>,
    pub payloads: Vec<Payload>,
    pub atomic: bool,
    pub grouping: Grouping,
    pub origin_client: ClientId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvelopeError {
    #[error("envelope has no payloads")]
    Empty,
    #[error("payload and tx id counts differ ({payloads} vs {ids})")]
    IdMismatch { payloads: usize, ids: usize },
    #[error("single grouping requires exactly one payload, got {0}")]
    SingleWithMany(usize),
    #[error("grouping size {k} exceeded by {len} payloads")]
    Oversized { k: u32, len: usize },
}

impl TransactionEnvelope {
    pub fn new(
        items: Vec<(TxId, Payload)>,
        grouping: Grouping,
        origin_client: ClientId,
    ) -> Result<Self, EnvelopeError> {
        let Some(&(first, _)) = items.first() else {
            return Err(EnvelopeError::Empty);
        };
        match grouping {
            Grouping::Single if items.len() != 1 => {
                return Err(EnvelopeError::SingleWithMany(items.len()))
            }
            Grouping::OperationsPerTx(k) | Grouping::TxPerBatch(k) if items.len() > k as usize => {
                return Err(EnvelopeError::Oversized { k, len: items.len() })
            }
            _ => {}
        }
        let (tx_ids, payloads) = items.into_iter().unzip();
        Ok(Self {
            envelope_id: EnvelopeId(first),
            tx_ids,
            payloads,
            atomic: grouping.is_atomic(),
            grouping,
            origin_client,
        })
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn check(&self) -> Result<(), EnvelopeError> {
        if self.payloads.is_empty() {
            return Err(EnvelopeError::Empty);
        }
        if self.payloads.len() != self.tx_ids.len() {
            return Err(EnvelopeError::IdMismatch {
                payloads: self.payloads.len(),
                ids: self.tx_ids.len(),
            });
        }
        if self.grouping == Grouping::Single && self.payloads.len() != 1 {
            return Err(EnvelopeError::SingleWithMany(self.payloads.len()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum RejectReason {
    QueueFull,
    NotStabilized,
    /// Discarded during block execution.
    Conflict,
    Driver(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::QueueFull => f.write_str("queue_full"),
            RejectReason::NotStabilized => f.write_str("not_stabilized"),
            RejectReason::Conflict => f.write_str("conflict"),
            RejectReason::Driver(msg) => write!(f, "driver:{msg}"),
        }
    }
}

impl RejectReason {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "queue_full" => RejectReason::QueueFull,
            "not_stabilized" => RejectReason::NotStabilized,
            "conflict" => RejectReason::Conflict,
            other => RejectReason::Driver(other.strip_prefix("driver:")?.to_string()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SendRecord {
    pub tx_id: TxId,
    pub envelope_id: EnvelopeId,
    pub starttime: Nanos,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReceiptStatus {
    /// Finalized on all nodes. `valid = false` marks a transaction that was
    /// appended to the chain but flagged failed by execution.
    Committed { valid: bool },
    Rejected(RejectReason),
    Lost,
}

impl ReceiptStatus {
    pub fn is_committed(&self) -> bool {
        matches!(self, ReceiptStatus::Committed { .. })
    }
}

impl fmt::Display for ReceiptStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReceiptStatus::Committed { valid: true } => f.write_str("committed"),
            ReceiptStatus::Committed { valid: false } => f.write_str("committed_failed"),
            ReceiptStatus::Rejected(reason) => write!(f, "rejected:{reason}"),
            ReceiptStatus::Lost => f.write_str("lost"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceiptRecord {
    pub tx_id: TxId,
    /// `None` exactly when the status is `Lost`.
    pub endtime: Option<Nanos>,
    pub status: ReceiptStatus,
    pub block_height: Option<u64>,
}

impl ReceiptRecord {
    pub fn lost(tx_id: TxId) -> Self {
        Self { tx_id, endtime: None, status: ReceiptStatus::Lost, block_height: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LogError {
    #[error("receipt for unknown tx {0}")]
    UnknownReceipt(TxId),
    #[error("duplicate tx id {0}")]
    DuplicateTx(TxId),
    #[error("duplicate receipt for {0}")]
    DuplicateReceipt(TxId),
    #[error("receipt for {0} ends before it started")]
    EndBeforeStart(TxId),
    #[error("endtime presence does not match status for {0}")]
    EndtimeMismatch(TxId),
    #[error("{sent} sends but {receipts} receipts")]
    Accounting { sent: usize, receipts: usize },
}

/// Everything one client observed during a benchmark.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ObservationLog {
    pub client_id: ClientId,
    pub sends: Vec<SendRecord>,
    pub receipts: Vec<ReceiptRecord>,
}

impl ObservationLog {
    pub fn new(client_id: ClientId) -> Self {
        Self { client_id, sends: Vec::new(), receipts: Vec::new() }
    }

    pub fn count(&self, pred: impl Fn(&ReceiptStatus) -> bool) -> usize {
        self.receipts.iter().filter(|r| pred(&r.status)).count()
    }

    /// Checks the log invariants, including `sent = committed + rejected + lost`.
    pub fn check(&self) -> Result<(), LogError> {
        use std::collections::HashMap;
        let mut starts: HashMap<TxId, Nanos> = HashMap::with_capacity(self.sends.len());
        for s in &self.sends {
            if starts.insert(s.tx_id, s.starttime).is_some() {
                return Err(LogError::DuplicateTx(s.tx_id));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(self.receipts.len());
        for r in &self.receipts {
            let Some(&start) = starts.get(&r.tx_id) else {
                return Err(LogError::UnknownReceipt(r.tx_id));
            };
            if !seen.insert(r.tx_id) {
                return Err(LogError::DuplicateReceipt(r.tx_id));
            }
            match (&r.status, r.endtime) {
                (ReceiptStatus::Lost, None) => {}
                (ReceiptStatus::Lost, Some(_)) | (_, None) => {
                    return Err(LogError::EndtimeMismatch(r.tx_id))
                }
                (_, Some(end)) if end < start => return Err(LogError::EndBeforeStart(r.tx_id)),
                _ => {}
            }
        }
        if self.receipts.len() != self.sends.len() {
            return Err(LogError::Accounting {
                sent: self.sends.len(),
                receipts: self.receipts.len(),
            });
        }
        Ok(())
    }
}

/// Block finalization trigger.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Finalization {
    /// Close a block once `max_count` transactions are pending, or
    /// `fallback_timeout` seconds after the oldest pending one arrived.
    ByCount {
        max_count: u32,
        #[serde(default = "default_fallback_timeout")]
        fallback_timeout: f64,
    },
    /// Close a block every `period` seconds.
    ByPeriod { period: f64 },
}

fn default_fallback_timeout() -> f64 {
    2.0
}

impl Finalization {
    /// The swept block parameter: count for `ByCount`, seconds for `ByPeriod`.
    pub fn parameter(&self) -> f64 {
        match *self {
            Finalization::ByCount { max_count, .. } => max_count as f64,
            Finalization::ByPeriod { period } => period,
        }
    }

    pub fn with_parameter(self, value: f64) -> Finalization {
        match self {
            Finalization::ByCount { fallback_timeout, .. } => Finalization::ByCount {
                max_count: value.round().max(0.0) as u32,
                fallback_timeout,
            },
            Finalization::ByPeriod { .. } => Finalization::ByPeriod { period: value },
        }
    }

    pub fn label(&self) -> String {
        match self {
            Finalization::ByCount { max_count, .. } => format!("count={max_count}"),
            Finalization::ByPeriod { period } => format!("period={period}s"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Atomicity {
    #[default]
    None,
    WholeEnvelope,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Signing {
    #[default]
    None,
    /// The receiving node collects signatures one node after another.
    Serial { per_node_delay: f64 },
    /// All nodes sign concurrently.
    Parallel { per_node_delay: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConflictPolicy {
    /// Keep conflicting transactions in the block, flagged failed.
    #[default]
    AppendAndMark,
    /// Drop conflicting transactions from the block.
    DiscardConflicting,
    /// Drop transactions that consume an already consumed state.
    NotaryReject,
}

/// Liveness stall predicate: once a period-driven chain with
/// `period <= period_at_most` observes `rate_at_least` payloads per second at
/// ingress, it stops draining its queue for good.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StallRule {
    pub period_at_most: f64,
    pub rate_at_least: f64,
}

impl Default for StallRule {
    fn default() -> Self {
        Self { period_at_most: 2.0, rate_at_least: 400.0 }
    }
}

/// Normal link delay in seconds, truncated at zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkLatency {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for LinkLatency {
    fn default() -> Self {
        Self { mu: 0.012, sigma: 0.002 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct ConsensusCost {
    pub base: f64,
    pub per_node: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub servers: u32,
    pub max_nodes_per_server: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Self { servers: 8, max_nodes_per_server: 4 }
    }
}

/// Full parameterization of a simulated blockchain archetype.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemProfile {
    pub name: String,
    pub finalization: Finalization,
    #[serde(default)]
    pub atomicity: Atomicity,
    /// Pending-envelope limit; `None` is unbounded.
    #[serde(default)]
    pub queue_capacity: Option<u32>,
    #[serde(default)]
    pub signing: Signing,
    #[serde(default)]
    pub conflict_policy: ConflictPolicy,
    #[serde(default)]
    pub stall_rule: Option<StallRule>,
    pub node_count: u32,
    #[serde(default)]
    pub link_latency: Option<LinkLatency>,
    #[serde(default)]
    pub consensus_cost: ConsensusCost,
    #[serde(default)]
    pub stabilization_time: f64,
    /// Discarded transactions produce no client notification.
    #[serde(default = "default_true")]
    pub silent_discard: bool,
    #[serde(default)]
    pub topology: Topology,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkPlan {
    pub benchmark_family: BenchmarkFamily,
    pub clients: u32,
    pub workload_threads_per_client: u32,
    /// Payload submissions per second per client.
    pub rate_limiter: u32,
    #[serde(default)]
    pub grouping: Grouping,
    pub send_duration: f64,
    pub listen_grace: f64,
    pub hard_stop: f64,
    pub repetitions: u32,
    pub seed: u64,
}

impl BenchmarkPlan {
    /// Desk-scale defaults for the virtual clock.
    pub fn desk_scale(benchmark_family: BenchmarkFamily) -> Self {
        Self {
            benchmark_family,
            clients: 4,
            workload_threads_per_client: 4,
            rate_limiter: 50,
            grouping: Grouping::Single,
            send_duration: 5.0,
            listen_grace: 1.0,
            hard_stop: 7.0,
            repetitions: 3,
            seed: 0,
        }
    }

    /// Wall-clock defaults: 300 s of sending, listening until 330 s,
    /// termination at 420 s.
    pub fn wall_scale(benchmark_family: BenchmarkFamily) -> Self {
        Self {
            send_duration: 300.0,
            listen_grace: 30.0,
            hard_stop: 420.0,
            ..Self::desk_scale(benchmark_family)
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("phase ordering: hard_stop {hard_stop} < send_duration {send} + listen_grace {grace}")]
    PhaseOrdering { send: f64, grace: f64, hard_stop: f64 },
    #[error("durations must be finite and non-negative")]
    NegativeDuration,
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("rate_limiter must be positive")]
    ZeroRate,
    #[error("at least one client and one workload thread are required")]
    NoClients,
    #[error("grouping size must be at least 1")]
    ZeroGroup,
    #[error("period must be positive")]
    NonPositivePeriod,
    #[error("max_count must be at least 1")]
    ZeroMaxCount,
    #[error("fallback_timeout must be positive")]
    NonPositiveTimeout,
    #[error("envelope size {k} exceeds block capacity {max_count}")]
    EnvelopeExceedsBlock { k: u32, max_count: u32 },
    #[error("node_count must be at least 1")]
    NoNodes,
    #[error("link latency mu and sigma must be non-negative")]
    NegativeLatency,
    #[error("signing delay must be positive")]
    NonPositiveSigning,
    #[error("notary conflict checking requires a signing path")]
    NotaryWithoutSigning,
    #[error("queue_capacity must be at least 1")]
    ZeroQueue,
    #[error("consensus cost and stabilization time must be non-negative")]
    NegativeCost,
    #[error("stall rule thresholds must be positive")]
    BadStallRule,
}

fn finite_non_negative(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

/// Returns every violated invariant of the plan and the profile.
pub fn validate_plan(
    plan: &BenchmarkPlan,
    profile: &SystemProfile,
) -> Result<(), Vec<ValidationError>> {
    let mut errs = Vec::new();

    let durations = [plan.send_duration, plan.listen_grace, plan.hard_stop];
    if durations.iter().any(|&d| !finite_non_negative(d)) {
        errs.push(ValidationError::NegativeDuration);
    } else if plan.hard_stop < plan.send_duration + plan.listen_grace {
        errs.push(ValidationError::PhaseOrdering {
            send: plan.send_duration,
            grace: plan.listen_grace,
            hard_stop: plan.hard_stop,
        });
    }
    if plan.repetitions < 1 {
        errs.push(ValidationError::NoRepetitions);
    }
    if plan.rate_limiter == 0 {
        errs.push(ValidationError::ZeroRate);
    }
    if plan.clients == 0 || plan.workload_threads_per_client == 0 {
        errs.push(ValidationError::NoClients);
    }
    if plan.grouping.size() == 0 {
        errs.push(ValidationError::ZeroGroup);
    }

    match profile.finalization {
        Finalization::ByPeriod { period } => {
            if !(period.is_finite() && period > 0.0) {
                errs.push(ValidationError::NonPositivePeriod);
            }
        }
        Finalization::ByCount { max_count, fallback_timeout } => {
            if max_count < 1 {
                errs.push(ValidationError::ZeroMaxCount);
            } else if plan.grouping.size() > max_count {
                errs.push(ValidationError::EnvelopeExceedsBlock {
                    k: plan.grouping.size(),
                    max_count,
                });
            }
            if !(fallback_timeout.is_finite() && fallback_timeout > 0.0) {
                errs.push(ValidationError::NonPositiveTimeout);
            }
        }
    }
    if profile.node_count < 1 {
        errs.push(ValidationError::NoNodes);
    }
    if let Some(l) = profile.link_latency {
        if !finite_non_negative(l.mu) || !finite_non_negative(l.sigma) {
            errs.push(ValidationError::NegativeLatency);
        }
    }
    match profile.signing {
        Signing::Serial { per_node_delay } | Signing::Parallel { per_node_delay }
            if !(per_node_delay.is_finite() && per_node_delay > 0.0) =>
        {
            errs.push(ValidationError::NonPositiveSigning)
        }
        _ => {}
    }
    if profile.conflict_policy == ConflictPolicy::NotaryReject && profile.signing == Signing::None
    {
        errs.push(ValidationError::NotaryWithoutSigning);
    }
    if profile.queue_capacity == Some(0) {
        errs.push(ValidationError::ZeroQueue);
    }
    let costs = [
        profile.consensus_cost.base,
        profile.consensus_cost.per_node,
        profile.stabilization_time,
    ];
    if costs.iter().any(|&c| !finite_non_negative(c)) {
        errs.push(ValidationError::NegativeCost);
    }
    if let Some(rule) = profile.stall_rule {
        if !(rule.period_at_most > 0.0 && rule.rate_at_least > 0.0) {
            errs.push(ValidationError::BadStallRule);
        }
    }

    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}

/// Rate-limiter ceiling on payload-level transactions:
/// `clients × rate_limiter × send_duration`.
pub fn expected_not(plan: &BenchmarkPlan) -> u64 {
    let ceiling = plan.clients as f64 * plan.rate_limiter as f64 * plan.send_duration;
    ceiling.max(0.0).round() as u64
}
