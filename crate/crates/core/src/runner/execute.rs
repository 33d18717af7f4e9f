//! Runs grid points: provisioning, benchmark units, metrics per step.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ExperimentConfig, GridPoint};
use crate::bal::{provision, teardown, Driver, DriverHandle};
use crate::clock::{Clock, ClockMode, VirtualClock, WallClock};
use crate::metrics::{
    duration, liveness_flag, not_counts, repetition_mfls, repetition_mtps, Liveness, RunRecord,
};
use crate::model::{secs_to_nanos, ClientId, Grouping, Nanos, ObservationLog};
use crate::simchain::WorldState;
use crate::workload::{
    run_clients_virtual, run_clients_wall, unit_sequence, Pacing, Phases, StepContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Ok,
    Failed,
}

/// One (grid point, repetition, benchmark) result. Metric columns are empty
/// when undefined or when the point failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub row_id: u64,
    pub profile: String,
    pub benchmark: String,
    pub grid_index: usize,
    pub repetition: u32,
    pub rate_limiter: u32,
    pub finalization: String,
    pub block_param: f64,
    pub grouping: String,
    pub node_count: u32,
    pub latency_mu: Option<f64>,
    pub latency_sigma: Option<f64>,
    pub seed: u64,
    pub status: RowStatus,
    pub mtps: Option<f64>,
    pub mfls: Option<f64>,
    pub duration: Option<f64>,
    pub expected: u64,
    pub sent: u64,
    pub received: u64,
    pub rejected: u64,
    pub lost: u64,
    pub liveness: Option<Liveness>,
    pub error: String,
}

/// One line of events.jsonl: a payload-level transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub run_id: u64,
    pub client_id: u32,
    pub tx_id: String,
    pub envelope_id: String,
    pub starttime_ns: u64,
    pub endtime_ns: Option<u64>,
    pub status: String,
    pub block_height: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub clock: ClockMode,
    pub op_counting: bool,
    pub pacing: Pacing,
    pub submit_cost: Nanos,
}

impl RunOptions {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            clock: config.experiment.clock,
            op_counting: config.experiment.op_counting,
            pacing: config.experiment.pacing.into(),
            submit_cost: secs_to_nanos(config.experiment.submit_cost),
        }
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { clock: ClockMode::Virtual, op_counting: true, pacing: Pacing::Even, submit_cost: 0 }
    }
}

/// Stable seed for one repetition of one grid point.
pub fn derive_seed(master: u64, grid_index: usize, repetition: u32) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ grid_index as u64) ^ repetition as u64)
}

pub fn grouping_label(g: Grouping) -> String {
    match g {
        Grouping::Single => "single".into(),
        Grouping::OperationsPerTx(k) => format!("ops-per-tx:{k}"),
        Grouping::TxPerBatch(k) => format!("tx-per-batch:{k}"),
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub row: ResultRow,
    pub logs: Vec<ObservationLog>,
}

impl StepOutcome {
    pub fn events(&self) -> Vec<EventLine> {
        event_lines(self.row.row_id, &self.logs)
    }
}

/// All steps of one unit, plus the ledger as the unit left it.
#[derive(Debug, Clone)]
pub struct UnitRun {
    pub steps: Vec<StepOutcome>,
    pub world: Option<WorldState>,
}

pub fn event_lines(run_id: u64, logs: &[ObservationLog]) -> Vec<EventLine> {
    let mut out = Vec::new();
    for log in logs {
        let receipts: HashMap<_, _> = log.receipts.iter().map(|r| (r.tx_id, r)).collect();
        for s in &log.sends {
            let r = receipts.get(&s.tx_id);
            out.push(EventLine {
                run_id,
                client_id: log.client_id.0,
                tx_id: s.tx_id.to_string(),
                envelope_id: s.envelope_id.to_string(),
                starttime_ns: s.starttime,
                endtime_ns: r.and_then(|r| r.endtime),
                status: r.map_or_else(|| "lost".to_string(), |r| r.status.to_string()),
                block_height: r.and_then(|r| r.block_height),
            });
        }
    }
    out
}

fn base_row(point: &GridPoint, benchmark: &str, repetition: u32, seed: u64) -> ResultRow {
    ResultRow {
        row_id: 0,
        profile: point.profile.name.clone(),
        benchmark: benchmark.to_string(),
        grid_index: point.index,
        repetition,
        rate_limiter: point.plan.rate_limiter,
        finalization: match point.profile.finalization {
            crate::model::Finalization::ByCount { .. } => "by-count".into(),
            crate::model::Finalization::ByPeriod { .. } => "by-period".into(),
        },
        block_param: point.params.block_param,
        grouping: grouping_label(point.plan.grouping),
        node_count: point.profile.node_count,
        latency_mu: point.profile.link_latency.map(|l| l.mu),
        latency_sigma: point.profile.link_latency.map(|l| l.sigma),
        seed,
        status: RowStatus::Ok,
        mtps: None,
        mfls: None,
        duration: None,
        expected: crate::model::expected_not(&point.plan),
        sent: 0,
        received: 0,
        rejected: 0,
        lost: 0,
        liveness: None,
        error: String::new(),
    }
}

/// Runs one repetition of one grid point: a fresh backend, then every step
/// of the family's unit in order, then teardown.
pub fn run_unit(point: &GridPoint, repetition: u32, master_seed: u64, opts: &RunOptions) -> UnitRun {
    let seed = derive_seed(master_seed, point.index, repetition);
    let mut plan = point.plan.clone();
    plan.seed = seed;
    let unit = unit_sequence(plan.benchmark_family);

    let deployment = match provision(&point.profile, seed) {
        Ok(d) => d,
        Err(e) => {
            let steps = unit
                .steps
                .iter()
                .map(|s| {
                    let mut row = base_row(point, s.name(), repetition, seed);
                    row.status = RowStatus::Failed;
                    row.error = e.to_string();
                    StepOutcome { row, logs: Vec::new() }
                })
                .collect();
            return UnitRun { steps, world: None };
        }
    };

    let handles: Vec<DriverHandle> =
        (0..plan.clients).map(|c| deployment.handle_for(ClientId(c))).collect();
    let drivers: Vec<&dyn Driver> = handles.iter().map(|h| h as &dyn Driver).collect();
    let backend = deployment.backend().as_ref();
    let mut states = HashMap::new();
    let virtual_clock = VirtualClock::new();
    let wall_clock = WallClock::new();
    let mut start = secs_to_nanos(point.profile.stabilization_time);

    let mut steps = Vec::new();
    for (epoch, step) in unit.steps.iter().enumerate() {
        let ctx = StepContext {
            function: step.function,
            epoch: epoch as u32,
            pacing: opts.pacing,
            submit_cost: opts.submit_cost,
        };
        let logs = match opts.clock {
            ClockMode::Virtual => run_clients_virtual(
                &plan, &ctx, &drivers, backend, &virtual_clock, start, &mut states,
            ),
            ClockMode::Wall => {
                start = start.max(wall_clock.now() + secs_to_nanos(0.05));
                run_clients_wall(&plan, &ctx, &drivers, Some(backend), &wall_clock, start, &mut states)
            }
        };
        start = Phases::new(&plan, start).hard_stop;

        let run = RunRecord::from_plan(repetition, logs, &plan);
        let counts = not_counts(&run, opts.op_counting);
        let mut row = base_row(point, step.name(), repetition, seed);
        row.mtps = repetition_mtps(&run, opts.op_counting).value();
        row.mfls = repetition_mfls(&run).value();
        row.duration = duration(&run).value();
        row.sent = counts.sent;
        row.received = counts.received;
        row.rejected = counts.rejected;
        row.lost = counts.lost;
        row.liveness = Some(liveness_flag(&run, &plan));
        steps.push(StepOutcome { row, logs: run.logs });
    }
    let world = deployment.backend().world();
    teardown(&deployment);
    UnitRun { steps, world }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub events: Vec<EventLine>,
}

/// Runs the grid (`full`) or only the base point. Virtual-clock points run
/// in parallel; row order is always grid index, repetition, step.
pub fn execute(config: &ExperimentConfig, full: bool) -> Result<ExperimentResult, ConfigError> {
    let grid = config.grid(full)?;
    let opts = RunOptions::from_config(config);
    let master = config.experiment.seed;
    let jobs: Vec<(&GridPoint, u32)> = grid
        .iter()
        .flat_map(|p| (0..p.plan.repetitions).map(move |r| (p, r)))
        .collect();
    let units: Vec<UnitRun> = match opts.clock {
        ClockMode::Virtual => jobs.par_iter().map(|&(p, r)| run_unit(p, r, master, &opts)).collect(),
        ClockMode::Wall => jobs.iter().map(|&(p, r)| run_unit(p, r, master, &opts)).collect(),
    };
    let mut rows = Vec::new();
    let mut events = Vec::new();
    for unit in units {
        for mut step in unit.steps {
            step.row.row_id = rows.len() as u64;
            events.extend(step.events());
            rows.push(step.row);
        }
    }
    Ok(ExperimentResult { rows, events })
}
