//! Discrete-event simulator of a shared V2X uplink.
//!
//! Every vehicle produces one frame per `1/fps` seconds. A frame joins its
//! vehicle's FIFO once encoded and is sent whole on that vehicle's share of
//! the channel. The bandwidth is split into equal, static shares, one per
//! vehicle, so the fair round-robin schedule never preempts a frame and each
//! share is busy whenever its queue is non-empty. On delivery the frame is
//! decoded and run through detection; those times are added to its delay.

mod requirements;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;

pub use requirements::{
    check_compliance, profile, profiles, Check, ComplianceReport, RequirementProfile,
    TELEOPERATION_PROFILE,
};

/// Network arithmetic uses SI kilobytes.
pub const BYTES_PER_KB: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("vehicle {0} has an empty size trace")]
    EmptyTrace(usize),
    #[error("expected {expected} size traces (one per vehicle), got {found}")]
    TraceCount { expected: usize, found: usize },
    #[error("{0} times must be finite and non-negative")]
    BadTimes(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    #[default]
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkScenario {
    pub n_vehicles: usize,
    pub shared_bandwidth_hz: f64,
    /// Descriptive only; the rate model has no link budget.
    pub tx_power_dbm: f64,
    pub spectral_efficiency_bps_per_hz: f64,
    pub fps: f64,
    pub sim_duration_s: f64,
    pub scheduler: Scheduler,
    /// Frames that may wait behind the one in transmission; `None` is unbounded.
    pub queue_capacity_frames: Option<usize>,
}

impl Default for NetworkScenario {
    fn default() -> Self {
        NetworkScenario {
            n_vehicles: 5,
            shared_bandwidth_hz: 50e6,
            tx_power_dbm: 23.0,
            spectral_efficiency_bps_per_hz: 2.0,
            fps: 30.0,
            sim_duration_s: 80.0,
            scheduler: Scheduler::RoundRobin,
            queue_capacity_frames: None,
        }
    }
}

impl NetworkScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("shared_bandwidth_hz", self.shared_bandwidth_hz),
            (
                "spectral_efficiency_bps_per_hz",
                self.spectral_efficiency_bps_per_hz,
            ),
            ("fps", self.fps),
            ("sim_duration_s", self.sim_duration_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidScenario(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.n_vehicles == 0 {
            return Err(SimError::InvalidScenario(
                "n_vehicles must be at least 1".into(),
            ));
        }
        if self.frames_per_vehicle() == 0 {
            return Err(SimError::InvalidScenario(
                "fps × duration yields no frames".into(),
            ));
        }
        Ok(())
    }

    /// Frames generated per vehicle: `round(fps × duration)`.
    pub fn frames_per_vehicle(&self) -> usize {
        (self.fps * self.sim_duration_s).round() as usize
    }

    /// Bits per second available to one vehicle.
    pub fn share_rate_bps(&self) -> f64 {
        self.spectral_efficiency_bps_per_hz * self.shared_bandwidth_hz / self.n_vehicles as f64
    }
}

/// Per-frame processing times, sampled by frame index modulo length. Empty
/// sequences mean zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub encode_ms: Vec<f64>,
    pub decode_ms: Vec<f64>,
    pub inference_ms: Vec<f64>,
}

impl StageTimes {
    fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("encode", &self.encode_ms),
            ("decode", &self.decode_ms),
            ("inference", &self.inference_ms),
        ] {
            if v.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(SimError::BadTimes(name));
            }
        }
        Ok(())
    }
}

fn sample(v: &[f64], frame: usize) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v[frame % v.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    pub encode_ms: f64,
    pub queue_ms: f64,
    pub tx_ms: f64,
    pub decode_ms: f64,
    pub inference_ms: f64,
    pub total_ms: f64,
}

impl DelayBreakdown {
    pub fn without_codec_ms(&self) -> f64 {
        self.queue_ms + self.tx_ms + self.inference_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub vehicle: usize,
    pub frame: usize,
    pub size_bytes: u64,
    pub generated_ms: f64,
    pub delay: DelayBreakdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    TxStart,
    TxEnd,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time_ms: f64,
    pub vehicle: usize,
    pub frame: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub p95: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Stat {
        Stat {
            mean: stats::mean(values).unwrap_or(0.0),
            p95: stats::percentile(values, 95.0).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimSummary {
    pub generated: usize,
    pub delivered: usize,
    pub dropped: usize,
    pub encode_ms: Stat,
    pub queue_ms: Stat,
    pub tx_ms: Stat,
    pub decode_ms: Stat,
    pub inference_ms: Stat,
    pub total_ms: Stat,
    pub total_without_codec_ms: Stat,
    /// Mean over vehicles of each vehicle's required uplink rate.
    pub required_rate_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Delivered frames in delivery order.
    pub records: Vec<FrameRecord>,
    pub events: Vec<Event>,
    pub summary: SimSummary,
}

pub fn required_data_rate(sizes: &[u64], fps: f64) -> f64 {
    if sizes.is_empty() {
        return 0.0;
    }
    let mean = sizes.iter().map(|&s| s as f64).sum::<f64>() / sizes.len() as f64;
    mean * 8.0 * fps
}

/// Heap entry; the heap pops the smallest `(time, vehicle, seq)` first.
#[derive(Debug, Clone, Copy)]
struct Pending {
    time_ms: f64,
    vehicle: usize,
    seq: u64,
    frame: usize,
    done: bool,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time_ms
            .total_cmp(&self.time_ms)
            .then(other.vehicle.cmp(&self.vehicle))
            .then(other.seq.cmp(&self.seq))
    }
}

struct Vehicle {
    queue: VecDeque<(usize, f64)>,
    busy: bool,
}

/// Runs the scenario. `sizes[v]` is vehicle `v`'s frame-size trace in bytes,
/// sampled by frame index modulo its length.
pub fn simulate(
    scenario: &NetworkScenario,
    sizes: &[Vec<u64>],
    times: &StageTimes,
) -> Result<SimResult, SimError> {
    scenario.validate()?;
    times.validate()?;
    if sizes.len() != scenario.n_vehicles {
        return Err(SimError::TraceCount {
            expected: scenario.n_vehicles,
            found: sizes.len(),
        });
    }
    if let Some(v) = sizes.iter().position(|t| t.is_empty()) {
        return Err(SimError::EmptyTrace(v));
    }
    let n_frames = scenario.frames_per_vehicle();
    let rate = scenario.share_rate_bps();
    let period_ms = 1e3 / scenario.fps;
    let size_of = |v: usize, f: usize| sizes[v][f % sizes[v].len()];

    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Pending>, time_ms, vehicle, frame, done| {
        heap.push(Pending {
            time_ms,
            vehicle,
            seq,
            frame,
            done,
        });
        seq += 1;
    };
    for f in 0..n_frames {
        for v in 0..scenario.n_vehicles {
            let gen = f as f64 * period_ms;
            push(&mut heap, gen + sample(&times.encode_ms, f), v, f, false);
        }
    }

    let mut vehicles: Vec<Vehicle> = (0..scenario.n_vehicles)
        .map(|_| Vehicle {
            queue: VecDeque::new(),
            busy: false,
        })
        .collect();
    let mut events = Vec::with_capacity(3 * n_frames * scenario.n_vehicles);
    let mut records = Vec::with_capacity(n_frames * scenario.n_vehicles);
    let mut tx_started = vec![0.0f64; scenario.n_vehicles];
    let mut arrival_of: Vec<Vec<f64>> = vec![vec![0.0; n_frames]; scenario.n_vehicles];
    let mut dropped = 0usize;

    while let Some(ev) = heap.pop() {
        let (t, v, f) = (ev.time_ms, ev.vehicle, ev.frame);
        if ev.done {
            events.push(Event {
                time_ms: t,
                vehicle: v,
                frame: f,
                kind: EventKind::TxEnd,
            });
            let encode_ms = sample(&times.encode_ms, f);
            let decode_ms = sample(&times.decode_ms, f);
            let inference_ms = sample(&times.inference_ms, f);
            let queue_ms = tx_started[v] - arrival_of[v][f];
            let tx_ms = t - tx_started[v];
            records.push(FrameRecord {
                vehicle: v,
                frame: f,
                size_bytes: size_of(v, f),
                generated_ms: f as f64 * period_ms,
                delay: DelayBreakdown {
                    encode_ms,
                    queue_ms,
                    tx_ms,
                    decode_ms,
                    inference_ms,
                    total_ms: encode_ms + queue_ms + tx_ms + decode_ms + inference_ms,
                },
            });
            vehicles[v].busy = false;
        } else {
            events.push(Event {
                time_ms: t,
                vehicle: v,
                frame: f,
                kind: EventKind::Arrival,
            });
            arrival_of[v][f] = t;
            let full = scenario
                .queue_capacity_frames
                .is_some_and(|cap| vehicles[v].queue.len() >= cap);
            if full && vehicles[v].busy {
                events.push(Event {
                    time_ms: t,
                    vehicle: v,
                    frame: f,
                    kind: EventKind::Drop,
                });
                dropped += 1;
            } else {
                vehicles[v].queue.push_back((f, t));
            }
        }
        if !vehicles[v].busy {
            if let Some((next, _)) = vehicles[v].queue.pop_front() {
                vehicles[v].busy = true;
                tx_started[v] = t;
                events.push(Event {
                    time_ms: t,
                    vehicle: v,
                    frame: next,
                    kind: EventKind::TxStart,
                });
                let bits = size_of(v, next) as f64 * 8.0;
                push(&mut heap, t + bits / rate * 1e3, v, next, true);
            }
        }
    }

    let column = |pick: fn(&DelayBreakdown) -> f64| {
        records.iter().map(|r| pick(&r.delay)).collect::<Vec<f64>>()
    };
    let summary = SimSummary {
        generated: n_frames * scenario.n_vehicles,
        delivered: records.len(),
        dropped,
        encode_ms: Stat::of(&column(|d| d.encode_ms)),
        queue_ms: Stat::of(&column(|d| d.queue_ms)),
        tx_ms: Stat::of(&column(|d| d.tx_ms)),
        decode_ms: Stat::of(&column(|d| d.decode_ms)),
        inference_ms: Stat::of(&column(|d| d.inference_ms)),
        total_ms: Stat::of(&column(|d| d.total_ms)),
        total_without_codec_ms: Stat::of(&column(|d| d.without_codec_ms())),
        required_rate_bps: sizes
            .iter()
            .map(|t| required_data_rate(t, scenario.fps))
            .sum::<f64>()
            / sizes.len() as f64,
    };
    Ok(SimResult {
        records,
        events,
        summary,
    })
}
