//! Blockchain access layer: the driver contract every backend implements,
//! plus payload grouping according to the system's transaction structure.
//!
//! Workload code only talks to [`Driver`]. The simulated backend additionally
//! implements [`SimulatedBackend`] so a scheduler can move its time forward;
//! a driver for a real system would not need that half.

use std::collections::HashMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use crate::model::{
    ClientId, Grouping, Nanos, Payload, RejectReason, SystemProfile, TransactionEnvelope, TxId,
};
use crate::simchain::{Block, NotificationKind, PlacementError, SimChain, WorldState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Admission {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DriverFault {
    #[error("backend torn down")]
    TornDown,
    #[error("backend unreachable: {0}")]
    Unreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProvisionError {
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventStatus {
    Committed { valid: bool },
    Rejected(RejectReason),
}

/// Finalization notice for one payload-level transaction, emitted once the
/// containing block is persisted on every node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitEvent {
    pub tx_id: TxId,
    pub commit_time: Nanos,
    pub block_height: u64,
    pub status: EventStatus,
}

/// Per-client commit notifications. Closes when the backend is torn down.
#[derive(Debug)]
pub struct EventStream {
    rx: Receiver<CommitEvent>,
}

impl EventStream {
    /// Next buffered event without blocking. `Err(StreamClosed)` once the
    /// stream is closed and drained.
    pub fn try_next(&self) -> Result<Option<CommitEvent>, StreamClosed> {
        match self.rx.try_recv() {
            Ok(ev) => Ok(Some(ev)),
            Err(TryRecvError::Empty) => Ok(None),
            Err(TryRecvError::Disconnected) => Err(StreamClosed),
        }
    }

    pub fn next_timeout(&self, timeout: Duration) -> Result<Option<CommitEvent>, StreamClosed> {
        match self.rx.recv_timeout(timeout) {
            Ok(ev) => Ok(Some(ev)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(StreamClosed),
        }
    }

    /// Drains everything currently buffered.
    pub fn drain(&self) -> Vec<CommitEvent> {
        let mut out = Vec::new();
        while let Ok(Some(ev)) = self.try_next() {
            out.push(ev);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamClosed;

/// A stream that is already closed, for clients whose subscription failed.
pub fn closed_stream() -> EventStream {
    let (_, rx) = mpsc::channel();
    EventStream { rx }
}

/// Client-facing backend contract.
pub trait Driver: Send + Sync {
    fn target_node(&self) -> usize;
    /// Hands one envelope to the backend ingress at `now`. Rejection is a
    /// value; faults mean the backend could not be reached.
    fn submit(&self, envelope: &TransactionEnvelope, now: Nanos) -> Result<Admission, DriverFault>;
    /// Opens the client's notification stream, replacing any previous one.
    fn subscribe(&self, client: ClientId) -> Result<EventStream, DriverFault>;
}

/// Time control for in-process simulated backends.
pub trait SimulatedBackend: Send + Sync {
    fn advance_to(&self, t: Nanos);
    fn next_event_at(&self) -> Option<Nanos>;
}

struct BackendState {
    chain: Option<SimChain>,
    subscribers: HashMap<ClientId, Sender<CommitEvent>>,
}

impl BackendState {
    fn route(&mut self) {
        let Some(chain) = self.chain.as_mut() else { return };
        for note in chain.take_notifications() {
            let Some(tx) = self.subscribers.get(&note.origin) else { continue };
            let status = match note.outcome {
                NotificationKind::Committed { valid } => EventStatus::Committed { valid },
                NotificationKind::Rejected(r) => EventStatus::Rejected(r),
            };
            let ev = CommitEvent {
                tx_id: note.tx_id,
                commit_time: note.at,
                block_height: note.block_height,
                status,
            };
            if tx.send(ev).is_err() {
                self.subscribers.remove(&note.origin);
            }
        }
    }
}

/// A provisioned simulated backend shared by all driver handles.
pub struct SimBackend {
    state: Mutex<BackendState>,
}

impl SimBackend {
    fn lock(&self) -> MutexGuard<'_, BackendState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn is_torn_down(&self) -> bool {
        self.lock().chain.is_none()
    }

    /// Read access to the underlying chain, if still provisioned.
    pub fn with_chain<R>(&self, f: impl FnOnce(&SimChain) -> R) -> Option<R> {
        self.lock().chain.as_ref().map(f)
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.with_chain(|c| c.blocks().to_vec()).unwrap_or_default()
    }

    pub fn world(&self) -> Option<WorldState> {
        self.with_chain(|c| c.world().clone())
    }
}

impl SimulatedBackend for SimBackend {
    fn advance_to(&self, t: Nanos) {
        let mut st = self.lock();
        if let Some(chain) = st.chain.as_mut() {
            chain.advance_to(t);
        }
        st.route();
    }

    fn next_event_at(&self) -> Option<Nanos> {
        self.lock().chain.as_ref().and_then(SimChain::next_event_at)
    }
}

/// Connection to one node of a simulated backend.
#[derive(Clone)]
pub struct DriverHandle {
    backend: Arc<SimBackend>,
    target_node: usize,
}

impl DriverHandle {
    pub fn backend(&self) -> &Arc<SimBackend> {
        &self.backend
    }
}

impl Driver for DriverHandle {
    fn target_node(&self) -> usize {
        self.target_node
    }

    fn submit(&self, envelope: &TransactionEnvelope, now: Nanos) -> Result<Admission, DriverFault> {
        let mut st = self.backend.lock();
        let chain = st.chain.as_mut().ok_or(DriverFault::TornDown)?;
        let res = chain.ingress(envelope.clone(), now);
        st.route();
        Ok(match res {
            Ok(_) => Admission::Accepted,
            Err(reason) => Admission::Rejected(reason),
        })
    }

    fn subscribe(&self, client: ClientId) -> Result<EventStream, DriverFault> {
        let mut st = self.backend.lock();
        if st.chain.is_none() {
            return Err(DriverFault::TornDown);
        }
        let (tx, rx) = mpsc::channel();
        st.subscribers.insert(client, tx);
        Ok(EventStream { rx })
    }
}

/// A freshly provisioned backend with one handle per node.
pub struct Deployment {
    backend: Arc<SimBackend>,
    handles: Vec<DriverHandle>,
}

impl Deployment {
    pub fn backend(&self) -> &Arc<SimBackend> {
        &self.backend
    }

    pub fn handles(&self) -> &[DriverHandle] {
        &self.handles
    }

    /// Handle for `client`: clients are spread round-robin over the nodes, so
    /// each client gets its own node whenever there are enough of them.
    pub fn handle_for(&self, client: ClientId) -> DriverHandle {
        self.handles[client.0 as usize % self.handles.len()].clone()
    }
}

/// Builds a fresh backend: empty ledger, empty queues, clock at zero.
pub fn provision(profile: &SystemProfile, seed: u64) -> Result<Deployment, ProvisionError> {
    let chain = SimChain::new(profile.clone(), seed)?;
    let backend = Arc::new(SimBackend {
        state: Mutex::new(BackendState { chain: Some(chain), subscribers: HashMap::new() }),
    });
    let handles = (0..profile.node_count as usize)
        .map(|target_node| DriverHandle { backend: Arc::clone(&backend), target_node })
        .collect();
    Ok(Deployment { backend, handles })
}

/// Releases the backend and closes every event stream. Safe to call twice.
pub fn teardown(deployment: &Deployment) {
    let mut st = deployment.backend.lock();
    st.chain = None;
    st.subscribers.clear();
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GroupingError {
    #[error("grouping size must be at least 1")]
    ZeroSize,
    #[error("no payloads to group")]
    Empty,
}

/// Chunks payloads into envelopes per the grouping; order is preserved and
/// concatenating the envelopes reproduces the input.
pub fn wrap_grouping(
    items: Vec<(TxId, Payload)>,
    grouping: Grouping,
    origin: ClientId,
) -> Result<Vec<TransactionEnvelope>, GroupingError> {
    let k = grouping.size() as usize;
    if k == 0 {
        return Err(GroupingError::ZeroSize);
    }
    if items.is_empty() {
        return Err(GroupingError::Empty);
    }
    let mut out = Vec::with_capacity(items.len().div_ceil(k));
    let mut it = items.into_iter().peekable();
    while it.peek().is_some() {
        let chunk: Vec<_> = it.by_ref().take(k).collect();
        out.push(TransactionEnvelope::new(chunk, grouping, origin).expect("chunk is within size"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Atomicity, ConflictPolicy, ConsensusCost, Finalization, Signing, Topology, NANOS_PER_SEC,
    };

    fn items(n: u64) -> Vec<(TxId, Payload)> {
        (0..n).map(|i| (TxId::new(0, ClientId(0), 0, i), Payload::DoNothing)).collect()
    }

    fn profile() -> SystemProfile {
        SystemProfile {
            name: "t".into(),
            finalization: Finalization::ByPeriod { period: 1.0 },
            atomicity: Atomicity::None,
            queue_capacity: None,
            signing: Signing::None,
            conflict_policy: ConflictPolicy::AppendAndMark,
            stall_rule: None,
            node_count: 4,
            link_latency: None,
            consensus_cost: ConsensusCost::default(),
            stabilization_time: 0.0,
            silent_discard: true,
            topology: Topology::default(),
        }
    }

    #[test]
    fn grouping_chunks() {
        let e = wrap_grouping(items(100), Grouping::OperationsPerTx(50), ClientId(0)).unwrap();
        assert_eq!(e.len(), 2);
        assert!(e.iter().all(|x| x.atomic && x.len() == 50));
        let e = wrap_grouping(items(100), Grouping::TxPerBatch(100), ClientId(0)).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].len(), 100);
        let e = wrap_grouping(items(3), Grouping::Single, ClientId(0)).unwrap();
        assert_eq!(e.len(), 3);
        assert!(e.iter().all(|x| !x.atomic && x.len() == 1));
        assert_eq!(
            wrap_grouping(items(3), Grouping::TxPerBatch(0), ClientId(0)),
            Err(GroupingError::ZeroSize)
        );
    }

    #[test]
    fn submit_and_subscribe() {
        let d = provision(&profile(), 1).unwrap();
        let h = d.handle_for(ClientId(0));
        let stream = h.subscribe(ClientId(0)).unwrap();
        let env = wrap_grouping(items(1), Grouping::Single, ClientId(0)).unwrap().remove(0);
        assert_eq!(h.submit(&env, 0).unwrap(), Admission::Accepted);
        d.backend().advance_to(NANOS_PER_SEC);
        let evs = stream.drain();
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].commit_time, NANOS_PER_SEC);
        assert_eq!(evs[0].status, EventStatus::Committed { valid: true });
    }

    #[test]
    fn teardown_is_idempotent_and_closes_streams() {
        let d = provision(&profile(), 1).unwrap();
        let stream = d.handle_for(ClientId(0)).subscribe(ClientId(0)).unwrap();
        teardown(&d);
        teardown(&d);
        assert_eq!(stream.try_next(), Err(StreamClosed));
        let env = wrap_grouping(items(1), Grouping::Single, ClientId(0)).unwrap().remove(0);
        assert_eq!(d.handle_for(ClientId(0)).submit(&env, 0), Err(DriverFault::TornDown));
    }

    #[test]
    fn no_submissions_empty_stream() {
        let d = provision(&profile(), 1).unwrap();
        let stream = d.handle_for(ClientId(0)).subscribe(ClientId(0)).unwrap();
        d.backend().advance_to(10 * NANOS_PER_SEC);
        teardown(&d);
        assert_eq!(stream.drain(), vec![]);
        assert_eq!(stream.try_next(), Err(StreamClosed));
    }

    #[test]
    fn round_robin_client_placement() {
        let mut p = profile();
        p.node_count = 32;
        let d = provision(&p, 1).unwrap();
        assert_eq!(d.handles().len(), 32);
        let nodes: Vec<_> = (0..4).map(|c| d.handle_for(ClientId(c)).target_node()).collect();
        assert_eq!(nodes, vec![0, 1, 2, 3]);
    }

    #[test]
    fn fresh_state_after_reprovision() {
        let p = profile();
        let set = |d: &Deployment, key: &str, seq| {
            let item = (TxId::new(0, ClientId(0), 0, seq), Payload::KvSet { key: key.into(), value: "v".into() });
            let env = wrap_grouping(vec![item], Grouping::Single, ClientId(0)).unwrap().remove(0);
            d.handle_for(ClientId(0)).submit(&env, 0).unwrap();
        };
        let d = provision(&p, 1).unwrap();
        set(&d, "k", 0);
        d.backend().advance_to(2 * NANOS_PER_SEC);
        assert!(d.backend().world().unwrap().kv.contains_key("k"));
        teardown(&d);
        let d = provision(&p, 1).unwrap();
        assert!(!d.backend().world().unwrap().kv.contains_key("k"));
    }
}
