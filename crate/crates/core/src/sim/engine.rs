use std::collections::BTreeMap;

use crate::perf::{self, IterationTimeModel};
use crate::resilience::{detection_probability, startup_failure_prob};
use crate::rng::{names, Stream};
use crate::scenario::ScenarioSpec;
use crate::storage::{
    effective_read_bandwidth, plan_model_load, FileSharing, LoadStrategy, NoiseProcess, ReadWorkload,
};

use super::event::{EndReason, Event, EventKind, EventTrace, StartupCause};
use super::SimError;

/// Allocations in a row without new committed progress before a run is
/// declared non-terminating.
const STALL_LIMIT: u64 = 10_000;

/// The named random streams of one run.
#[derive(Clone, Debug)]
pub struct RngStreams {
    pub node_failure: Stream,
    pub oom: Stream,
    pub port: Stream,
    pub startup: Stream,
    pub bad_node: Stream,
    pub vetting: Stream,
    pub noise: Stream,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            node_failure: Stream::new(seed, names::NODE_FAILURE),
            oom: Stream::new(seed, names::OOM),
            port: Stream::new(seed, names::PORT),
            startup: Stream::new(seed, names::STARTUP),
            bad_node: Stream::new(seed, names::BAD_NODE),
            vetting: Stream::new(seed, names::VETTING),
            noise: Stream::new(seed, names::NOISE),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Allocation {
    pub id: u64,
    pub start: f64,
    pub walltime: f64,
    pub nodes: u64,
}

#[derive(Clone, Debug)]
pub struct CampaignState {
    pub tokens_done: u64,
    /// Iteration the training loop has reached in the live allocation.
    pub iteration: u64,
    pub last_checkpoint_iteration: u64,
    pub current_allocation: Option<Allocation>,
    pub wallclock: f64,
    pub gpu_seconds_spent: f64,
    pub rng: RngStreams,
}

/// What one launch attempt drew before training starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaunchDraw {
    /// First node the prolog flags, if vetting is enabled.
    pub detected: Option<u64>,
    /// First bad node that slipped through.
    pub undetected: Option<u64>,
    pub startup_fail: Option<StartupCause>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LaunchStats {
    pub attempts: u64,
    pub vetting_aborts: u64,
    /// Launches that reached startup.
    pub started: u64,
    pub startup_failures: u64,
}

impl LaunchStats {
    pub fn startup_failure_frequency(&self) -> f64 {
        self.startup_failures as f64 / self.started.max(1) as f64
    }
}

pub(crate) fn draw_launch(scenario: &ScenarioSpec, rng: &mut RngStreams) -> LaunchDraw {
    let nodes = scenario.scheduler.alloc_nodes;
    let vetting = &scenario.scheduler.vetting;
    let b = scenario.cluster.bad_node_prob;
    let mut draw = LaunchDraw {
        detected: None,
        undetected: None,
        startup_fail: None,
    };
    if b > 0.0 {
        for node in 0..nodes {
            let bad = rng.bad_node.bernoulli(b);
            let caught = rng.vetting.bernoulli(vetting.sensitivity);
            if bad {
                if vetting.enabled && caught {
                    draw.detected.get_or_insert(node);
                } else {
                    draw.undetected.get_or_insert(node);
                }
            }
        }
    }
    let f = &scenario.failures;
    let gpus = scenario.alloc_gpus();
    let rank = rng.startup.bernoulli(startup_failure_prob(f.p_rank_startup, gpus));
    let port = rng.port.bernoulli(startup_failure_prob(f.p_node_port, nodes));
    draw.startup_fail = if rank {
        Some(StartupCause::Rank)
    } else if port {
        Some(StartupCause::Port)
    } else {
        None
    };
    draw
}

/// Launch attempts sampled with the same code path the simulator uses.
pub fn sample_launches(scenario: &ScenarioSpec, seed: u64, attempts: u64) -> LaunchStats {
    let mut rng = RngStreams::new(seed);
    let mut stats = LaunchStats {
        attempts,
        ..Default::default()
    };
    for _ in 0..attempts {
        let d = draw_launch(scenario, &mut rng);
        if d.detected.is_some() {
            stats.vetting_aborts += 1;
            continue;
        }
        stats.started += 1;
        if d.startup_fail.is_some() {
            stats.startup_failures += 1;
        }
    }
    stats
}

fn image_read_time(scenario: &ScenarioSpec, multiplier: f64) -> Result<f64, SimError> {
    let s = &scenario.scheduler;
    if s.image_bytes <= 0.0 {
        return Ok(0.0);
    }
    let tier = scenario.tier(&s.image_tier)?;
    let w = ReadWorkload::sequential(s.alloc_nodes, s.image_bytes, FileSharing::SameFile);
    let bw = effective_read_bandwidth(tier, &w, s.image_stripe_count)?;
    Ok(s.image_bytes / (bw * multiplier))
}

fn restore_time(scenario: &ScenarioSpec, multiplier: f64) -> Result<f64, SimError> {
    let tier = scenario.tier(&scenario.checkpoint.tier)?;
    let plan = plan_model_load(
        scenario.workload.checkpoint_bytes,
        scenario.scheduler.alloc_nodes,
        tier,
        scenario.cluster.net_bw_per_node,
        LoadStrategy::Auto,
    )?;
    Ok(scenario.checkpoint.restore_cost + plan.read_time / multiplier + plan.redistribution_time)
}

/// Expected GPU-seconds a launch loses to an undetected bad node: startup,
/// image read and restore, plus the training time since the last checkpoint
/// that landed before the node fails.
pub fn expected_loss_on_bad(scenario: &ScenarioSpec) -> Result<f64, SimError> {
    let s = &scenario.scheduler;
    let model = perf::iteration_time(scenario, scenario.alloc_gpus())?;
    let t = s.startup_overhead_base
        + image_read_time(scenario, 1.0)?
        + restore_time(scenario, 1.0)?
        + uncommitted_work(scenario, &model, scenario.failures.bad_node_ttf);
    Ok(t * scenario.alloc_gpus() as f64)
}

/// Training seconds lost when a job fails `elapsed` seconds after training
/// starts, following the checkpoint schedule from the start.
pub fn uncommitted_work(scenario: &ScenarioSpec, model: &IterationTimeModel, elapsed: f64) -> f64 {
    let c = &scenario.checkpoint;
    let t = model.t_iteration;
    let span = c.interval_iterations(t) as f64 * t;
    // Wall time a write takes, and the extra time it adds to training.
    let (write, extra) = if c.async_write {
        let n = (c.write_duration / t).ceil().max(1.0);
        (n * t * c.dip_factor, n * t * (c.dip_factor - 1.0))
    } else {
        (c.write_cost, c.write_cost)
    };
    // Latest point whose work is durable by `elapsed`.
    let mut kept = 0.0;
    let mut begin = span;
    while begin + write <= elapsed {
        kept = if c.async_write { begin } else { begin + write };
        begin += span + extra;
    }
    elapsed - kept
}

/// Rejects scenarios that can never commit progress.
pub fn check_terminating(scenario: &ScenarioSpec) -> Result<(), SimError> {
    if scenario.campaign_deadline.is_some() {
        return Ok(());
    }
    let nt = |m: String| Err(SimError::NonTerminating(m));
    let f = &scenario.failures;
    let s = &scenario.scheduler;
    let p_rank = startup_failure_prob(f.p_rank_startup, scenario.alloc_gpus());
    let p_port = startup_failure_prob(f.p_node_port, s.alloc_nodes);
    if p_rank >= 1.0 || p_port >= 1.0 {
        return nt("every launch fails at startup".into());
    }
    if s.vetting.enabled
        && detection_probability(s.vetting.sensitivity, scenario.cluster.bad_node_prob, s.alloc_nodes) >= 1.0
    {
        return nt("the vetting prolog rejects every allocation".into());
    }
    let model = perf::iteration_time(scenario, scenario.alloc_gpus())?;
    let vet = if s.vetting.enabled { s.vetting.duration } else { 0.0 };
    let pre = vet + s.startup_overhead_base + image_read_time(scenario, 1.0)? + restore_time(scenario, 1.0)?;
    let needed = pre + model.t_dipped() + scenario.checkpoint.write_cost;
    if needed > s.walltime {
        return nt(format!(
            "an allocation of {} s cannot fit startup, one iteration and a checkpoint ({needed:.1} s)",
            s.walltime
        ));
    }
    Ok(())
}

pub fn run_campaign(scenario: &ScenarioSpec) -> Result<EventTrace, SimError> {
    run_campaign_with_state(scenario).map(|(t, _)| t)
}

/// Runs the campaign and also returns the final state.
pub fn run_campaign_with_state(scenario: &ScenarioSpec) -> Result<(EventTrace, CampaignState), SimError> {
    scenario.validate()?;
    check_terminating(scenario)?;
    let engine = Engine::new(scenario)?;
    engine.run()
}

#[derive(Clone, Copy, Debug)]
enum Failure {
    Node(u64),
    Oom,
}

struct Live {
    id: u64,
    signal_at: f64,
    expiry: f64,
    signaled: bool,
    node_fail: (f64, u64),
    oom_fail: f64,
    bad_fail: (f64, u64),
}

impl Live {
    fn next_failure(&self) -> (f64, Failure) {
        let mut best = (self.node_fail.0, Failure::Node(self.node_fail.1));
        if self.bad_fail.0 < best.0 {
            best = (self.bad_fail.0, Failure::Node(self.bad_fail.1));
        }
        if self.oom_fail < best.0 {
            best = (self.oom_fail, Failure::Oom);
        }
        best
    }
}

struct Step {
    consumed: f64,
    failed: bool,
    expired: bool,
}

struct Block {
    first: u64,
    end: u64,
    compute: f64,
    overhead: f64,
    dip: f64,
}

impl Block {
    fn new(at: u64) -> Self {
        Self {
            first: at,
            end: at,
            compute: 0.0,
            overhead: 0.0,
            dip: 0.0,
        }
    }

    fn is_empty(&self) -> bool {
        self.end == self.first && self.compute + self.overhead + self.dip == 0.0
    }
}

struct Write {
    id: u64,
    iteration: u64,
    /// Undisturbed training seconds left before the write lands.
    remaining: f64,
}

enum Outcome {
    Requeue,
    Done,
}

struct Engine<'a> {
    s: &'a ScenarioSpec,
    model: IterationTimeModel,
    gpus: f64,
    nodes: u64,
    interval: u64,
    target: u64,
    noise: BTreeMap<String, NoiseProcess>,
    events: Vec<Event>,
    state: CampaignState,
    t: f64,
    next_alloc: u64,
    next_checkpoint: u64,
    stalled_allocs: u64,
}

impl<'a> Engine<'a> {
    fn new(s: &'a ScenarioSpec) -> Result<Self, SimError> {
        let gpus = s.alloc_gpus();
        let model = perf::iteration_time(s, gpus)?;
        let rng = RngStreams::new(s.seed);
        let noise = s
            .tiers
            .iter()
            .map(|t| (t.name.clone(), NoiseProcess::new(t, rng.noise.derive(&t.name))))
            .collect();
        Ok(Self {
            s,
            model,
            gpus: gpus as f64,
            nodes: s.scheduler.alloc_nodes,
            interval: s.checkpoint.interval_iterations(model.t_iteration),
            target: s.workload.total_iterations(),
            noise,
            events: Vec::new(),
            state: CampaignState {
                tokens_done: 0,
                iteration: 0,
                last_checkpoint_iteration: 0,
                current_allocation: None,
                wallclock: 0.0,
                gpu_seconds_spent: 0.0,
                rng,
            },
            t: 0.0,
            next_alloc: 0,
            next_checkpoint: 0,
            stalled_allocs: 0,
        })
    }

    fn emit_at(&mut self, time: f64, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event { time, seq, kind });
    }

    fn emit(&mut self, kind: EventKind) {
        self.emit_at(self.t, kind);
    }

    fn set_time(&mut self, t: f64) {
        self.t = t;
        self.state.wallclock = t;
        self.state.gpu_seconds_spent = t * self.gpus;
    }

    fn multiplier(&mut self, tier: &str) -> f64 {
        let t = self.t;
        self.noise.get_mut(tier).map(|n| n.multiplier_at(t)).unwrap_or(1.0)
    }

    fn past_deadline(&self) -> bool {
        self.s.campaign_deadline.is_some_and(|d| self.t >= d)
    }

    /// Moves the clock through an activity of `dur` seconds inside an
    /// allocation. The activity is cut short only by wall-time expiry;
    /// failures take effect at its end.
    fn advance(&mut self, live: &mut Live, dur: f64) -> Step {
        let start = self.t;
        let end = start + dur;
        let stop = end.min(live.expiry);
        if !live.signaled && live.signal_at <= stop {
            live.signaled = true;
            let at = live.signal_at.max(start);
            self.emit_at(at, EventKind::SignalDelivered { alloc: live.id });
        }
        self.set_time(stop);
        Step {
            consumed: stop - start,
            failed: live.next_failure().0 <= stop,
            expired: end > live.expiry,
        }
    }

    fn run(mut self) -> Result<(EventTrace, CampaignState), SimError> {
        loop {
            if self.past_deadline() || self.state.last_checkpoint_iteration >= self.target {
                break;
            }
            let before = self.state.last_checkpoint_iteration;
            match self.allocation()? {
                Outcome::Done => break,
                Outcome::Requeue => {
                    let alloc = self.next_alloc;
                    let delay = self.s.scheduler.requeue_delay;
                    self.set_time(self.t + delay);
                    self.emit(EventKind::Requeue { alloc, delay });
                }
            }
            if self.state.last_checkpoint_iteration > before {
                self.stalled_allocs = 0;
            } else {
                self.stalled_allocs += 1;
                if self.stalled_allocs >= STALL_LIMIT && self.s.campaign_deadline.is_none() {
                    return Err(SimError::NonTerminating(format!(
                        "no progress committed in {STALL_LIMIT} consecutive allocations"
                    )));
                }
            }
        }
        let iterations = self.state.iteration;
        let tokens_done = (iterations * self.s.workload.global_batch_tokens).min(self.s.workload.token_budget);
        self.state.tokens_done = tokens_done;
        self.state.current_allocation = None;
        self.emit(EventKind::CampaignDone {
            iterations,
            tokens_done,
        });
        let trace = EventTrace {
            events: self.events,
            scenario_digest: self.s.digest(),
            seed: self.s.seed,
        };
        Ok((trace, self.state))
    }

    fn end(&mut self, live: &Live, reason: EndReason, clean: bool, idle: f64, stall: f64) {
        self.emit(EventKind::AllocEnd {
            alloc: live.id,
            reason,
            clean,
            idle,
            stall,
        });
        self.state.current_allocation = None;
        if !clean && reason != EndReason::Deadline {
            self.state.iteration = self.state.last_checkpoint_iteration;
        }
    }

    fn allocation(&mut self) -> Result<Outcome, SimError> {
        let sched = &self.s.scheduler;
        let (walltime, lead) = (sched.walltime, sched.signal_lead);
        let id = self.next_alloc;
        self.next_alloc += 1;
        let start = self.t;
        let mut live = Live {
            id,
            signal_at: start + walltime - lead,
            expiry: start + walltime,
            signaled: false,
            node_fail: (f64::INFINITY, 0),
            oom_fail: f64::INFINITY,
            bad_fail: (f64::INFINITY, 0),
        };
        self.state.current_allocation = Some(Allocation {
            id,
            start,
            walltime,
            nodes: self.nodes,
        });
        self.state.iteration = self.state.last_checkpoint_iteration;
        self.emit(EventKind::AllocStart {
            alloc: id,
            nodes: self.nodes,
            expiry: live.expiry,
        });

        let launch = draw_launch(self.s, &mut self.state.rng);
        let rate = self.s.node_failure_rate();
        let mut first_node_fail = (f64::INFINITY, 0);
        for node in 0..self.nodes {
            let dt = self.state.rng.node_failure.exponential(rate);
            if dt < first_node_fail.0 {
                first_node_fail = (dt, node);
            }
        }
        let oom_after = self.sample_oom();

        if self.s.scheduler.vetting.enabled {
            let step = self.advance(&mut live, self.s.scheduler.vetting.duration);
            let span = step.consumed;
            match launch.detected {
                Some(node) if !step.expired => {
                    self.emit(EventKind::VettingAbort { alloc: id, node, span });
                    self.end(&live, EndReason::VettingAbort, false, 0.0, 0.0);
                    return Ok(Outcome::Requeue);
                }
                _ => self.emit(EventKind::VettingPass { alloc: id, span }),
            }
            if let Some(o) = self.interrupted(&live, &step) {
                return Ok(o);
            }
        }

        let image_mult = self.multiplier(&self.s.scheduler.image_tier.clone());
        let startup = self.s.scheduler.startup_overhead_base + image_read_time(self.s, image_mult)?;
        let step = self.advance(&mut live, startup);
        if let Some(cause) = launch.startup_fail.filter(|_| !step.expired) {
            self.emit(EventKind::StartupFail {
                alloc: id,
                cause,
                span: step.consumed,
            });
            self.end(&live, EndReason::StartupFail, false, 0.0, 0.0);
            return Ok(Outcome::Requeue);
        }
        let startup = step.consumed;
        if step.expired {
            self.emit(EventKind::JobStart {
                alloc: id,
                startup,
                restore: 0.0,
                restored_iteration: self.state.last_checkpoint_iteration,
            });
            return Ok(self.interrupted(&live, &step).unwrap_or(Outcome::Requeue));
        }

        let job_start = self.t;
        live.node_fail = (job_start + first_node_fail.0, first_node_fail.1);
        live.oom_fail = job_start + oom_after;
        let restored = self.state.last_checkpoint_iteration;
        let restore = if restored > 0 {
            let m = self.multiplier(&self.s.checkpoint.tier.clone());
            restore_time(self.s, m)?
        } else {
            0.0
        };
        let step = self.advance(&mut live, restore);
        self.emit(EventKind::JobStart {
            alloc: id,
            startup,
            restore: step.consumed,
            restored_iteration: restored,
        });
        if let Some(o) = self.interrupted(&live, &step) {
            return Ok(o);
        }
        if let Some(node) = launch.undetected {
            live.bad_fail = (self.t + self.s.failures.bad_node_ttf, node);
        }
        self.train(&mut live)
    }

    /// Handles failure, expiry or deadline after a pre-training phase.
    fn interrupted(&mut self, live: &Live, step: &Step) -> Option<Outcome> {
        if step.failed {
            return Some(self.fail(live, 0.0));
        }
        if step.expired {
            self.end(live, EndReason::Walltime, false, 0.0, 0.0);
            return Some(Outcome::Requeue);
        }
        if self.past_deadline() {
            self.end(live, EndReason::Deadline, false, 0.0, 0.0);
            return Some(Outcome::Done);
        }
        None
    }

    fn sample_oom(&mut self) -> f64 {
        let f = &self.s.failures;
        let (h0, g) = (f.oom_h0, f.effective_oom_growth());
        let e = -self.state.rng.oom.uniform_open0().ln();
        // Inverse of the cumulative hazard h0*t + g*t^2/2, in a form stable as g -> 0.
        let denom = h0 + (h0 * h0 + 2.0 * g * e).sqrt();
        if denom > 0.0 {
            2.0 * e / denom
        } else {
            f64::INFINITY
        }
    }

    fn fail(&mut self, live: &Live, stall: f64) -> Outcome {
        let iteration = self.state.iteration;
        let kind = match live.next_failure().1 {
            Failure::Node(node) => EventKind::NodeFailure { node, iteration, stall },
            Failure::Oom => EventKind::OomFailure { iteration, stall },
        };
        self.emit(kind);
        self.end(live, EndReason::Failure, false, 0.0, 0.0);
        Outcome::Requeue
    }

    fn flush(&mut self, block: &mut Block) {
        if !block.is_empty() {
            self.emit(EventKind::IterationBlockDone {
                first: block.first,
                end: block.end,
                compute: block.compute,
                overhead: block.overhead,
                dip: block.dip,
            });
        }
        *block = Block::new(block.end);
    }

    fn commit(&mut self, iteration: u64) {
        self.state.last_checkpoint_iteration = iteration;
    }

    fn train(&mut self, live: &mut Live) -> Result<Outcome, SimError> {
        let io_s = self.s.workload.io_sensitivity;
        let dip = self.s.checkpoint.dip_factor;
        let data_tier = self.s.dataset.tier.clone();
        let mut block = Block::new(self.state.iteration);
        let mut write: Option<Write> = None;
        loop {
            let m = self.multiplier(&data_tier);
            let base = self.model.t_iteration * (1.0 - io_s + io_s / m);
            let dur = if write.is_some() { base * dip } else { base };
            let step = self.advance(live, dur);
            let f = step.consumed / dur;
            block.compute += self.model.t_compute * f;
            block.overhead += (base - self.model.t_compute) * f;
            block.dip += (dur - base) * f;
            if step.failed {
                self.flush(&mut block);
                return Ok(self.fail(live, 0.0));
            }
            if step.expired {
                self.flush(&mut block);
                self.end(live, EndReason::Walltime, false, 0.0, 0.0);
                return Ok(Outcome::Requeue);
            }
            self.state.iteration += 1;
            block.end = self.state.iteration;
            if let Some(w) = write.as_mut() {
                w.remaining -= base;
                if w.remaining <= 1e-9 * base {
                    let (checkpoint, iteration) = (w.id, w.iteration);
                    write = None;
                    self.emit(EventKind::CheckpointDone {
                        checkpoint,
                        iteration,
                        stall: 0.0,
                    });
                    self.commit(iteration);
                }
            }
            let iter = self.state.iteration;
            if self.past_deadline() {
                self.flush(&mut block);
                self.end(live, EndReason::Deadline, false, 0.0, 0.0);
                return Ok(Outcome::Done);
            }
            let at_boundary = iter.is_multiple_of(self.interval);
            if iter >= self.target || live.signaled {
                self.flush(&mut block);
                if at_boundary && !live.signaled {
                    if let Some(o) = self.checkpoint(live, &mut write) {
                        return Ok(o);
                    }
                }
                let reason = if iter >= self.target {
                    EndReason::Completed
                } else {
                    EndReason::Walltime
                };
                return Ok(self.finish(live, write, reason));
            }
            if at_boundary {
                self.flush(&mut block);
                if let Some(o) = self.checkpoint(live, &mut write) {
                    return Ok(o);
                }
                if live.signaled {
                    return Ok(self.finish(live, write, EndReason::Walltime));
                }
            }
        }
    }

    /// Waits out an in-flight write. Returns the outcome if the allocation
    /// ended while waiting.
    fn drain(&mut self, live: &mut Live, write: &mut Option<Write>) -> Option<Outcome> {
        let w = write.take()?;
        let step = self.advance(live, w.remaining);
        if step.failed {
            return Some(self.fail(live, step.consumed));
        }
        if step.expired {
            self.end(live, EndReason::Walltime, false, 0.0, step.consumed);
            return Some(Outcome::Requeue);
        }
        self.emit(EventKind::CheckpointDone {
            checkpoint: w.id,
            iteration: w.iteration,
            stall: step.consumed,
        });
        self.commit(w.iteration);
        None
    }

    /// Periodic checkpoint at the current iteration.
    fn checkpoint(&mut self, live: &mut Live, write: &mut Option<Write>) -> Option<Outcome> {
        if let Some(o) = self.drain(live, write) {
            return Some(o);
        }
        let iteration = self.state.iteration;
        let id = self.next_checkpoint;
        self.next_checkpoint += 1;
        self.emit(EventKind::CheckpointBegin {
            checkpoint: id,
            iteration,
            bytes: self.s.workload.checkpoint_bytes,
        });
        let m = self.multiplier(&self.s.checkpoint.tier.clone());
        let c = &self.s.checkpoint;
        if c.async_write {
            *write = Some(Write {
                id,
                iteration,
                remaining: c.write_duration / m,
            });
            return None;
        }
        let step = self.advance(live, c.write_cost / m);
        if step.failed {
            return Some(self.fail(live, step.consumed));
        }
        if step.expired {
            self.end(live, EndReason::Walltime, false, 0.0, step.consumed);
            return Some(Outcome::Requeue);
        }
        self.emit(EventKind::CheckpointDone {
            checkpoint: id,
            iteration,
            stall: step.consumed,
        });
        self.commit(iteration);
        None
    }

    /// Shutdown after the signal or at the end of training: wait for any
    /// in-flight write, then write a final checkpoint if it fits.
    fn finish(&mut self, live: &mut Live, mut write: Option<Write>, reason: EndReason) -> Outcome {
        if let Some(o) = self.drain(live, &mut write) {
            return o;
        }
        let m = self.multiplier(&self.s.checkpoint.tier.clone());
        let cost = self.s.checkpoint.write_cost / m;
        let remaining = live.expiry - self.t;
        if cost <= remaining {
            let step = self.advance(live, cost);
            if step.failed {
                return self.fail(live, step.consumed);
            }
            let id = self.next_checkpoint;
            self.next_checkpoint += 1;
            let iteration = self.state.iteration;
            self.emit(EventKind::FinalCheckpoint {
                checkpoint: id,
                iteration,
                span: step.consumed,
            });
            self.commit(iteration);
            self.end(live, reason, true, 0.0, 0.0);
            return if reason == EndReason::Completed {
                Outcome::Done
            } else {
                Outcome::Requeue
            };
        }
        // The final write does not fit: the job is killed at expiry.
        let idle = remaining.max(0.0);
        let _ = self.advance(live, idle);
        self.end(live, EndReason::Walltime, false, idle, 0.0);
        Outcome::Requeue
    }
}
