//! Discrete-event simulator of class-A LoRaWAN channel access.
//!
//! Motes generate Poisson traffic, pick one of `F` uplink channels at random
//! and wait for two ACKs: ACK1 `T1` after the frame on the same channel and
//! rate, ACK2 `T2` after the frame on the downlink channel at rate 0. The
//! gateway cancels ACK1 if it is receiving on that channel and rate, and
//! skips ACK2 while the downlink is busy. Every reception is decided by
//! [`capture_adjudicate`] with powers computed at the actual receiver.

mod capture;
mod mote;
mod queue;

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use capture::{capture_adjudicate, Reception, Signal};
pub use mote::{assign_rate, place_motes, MoteState, MoteStatus, PendingFrame};
pub use queue::EventQueue;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::geometry::received_power;

/// Run control for one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub network: NetworkConfig,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub seed: u64,
    pub noise_floor_dbm: f64,
    pub batches: usize,
}

impl SimConfig {
    pub fn new(network: NetworkConfig, duration_s: f64, seed: u64) -> Self {
        let noise_floor_dbm = default_noise_floor(&network);
        SimConfig {
            network,
            duration_s,
            warmup_s: (0.01 * duration_s).min(1000.0),
            seed,
            noise_floor_dbm,
            batches: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        if !(self.warmup_s >= 0.0 && self.duration_s > self.warmup_s && self.duration_s.is_finite())
        {
            return Err(Error::config(format!(
                "need 0 <= warmup ({}) < duration ({})",
                self.warmup_s, self.duration_s
            )));
        }
        if self.batches == 0 {
            return Err(Error::config("batches must be at least 1"));
        }
        if self.noise_floor_dbm.is_nan() {
            return Err(Error::config("noise floor must be a number"));
        }
        Ok(())
    }
}

/// Noise floor 20 dB under the weakest sensitivity threshold, so reception
/// is limited by geometry and interference rather than noise.
pub fn default_noise_floor(network: &NetworkConfig) -> f64 {
    network
        .plan
        .bands
        .iter()
        .map(|b| b.sensitivity_lo_dbm)
        .fold(f64::INFINITY, f64::min)
        - 20.0
}

/// Per-rate counters, restricted to attempts started after warmup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCounters {
    pub attempts: u64,
    pub successes: u64,
    pub first_attempts: u64,
    pub first_data_decoded: u64,
    pub retry_attempts: u64,
    pub retry_data_decoded: u64,
    pub retry_successes: u64,
    pub first_successes: u64,
    /// Attempts whose data frame was decoded.
    pub data_decoded: u64,
    pub ack1_received: u64,
    /// ACK2 transmitted (not skipped) for a decoded data frame.
    pub ack2_sent: u64,
    pub frames_finished: u64,
    pub attempts_of_finished: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub frames_generated: u64,
    pub frames_delivered: u64,
    pub frames_dropped_retry_limit: u64,
    pub frames_replaced: u64,
    pub frames_in_flight: u64,
    pub attempts_total: u64,
    pub attempts_successful: u64,
    /// Attempts whose data frame the gateway did not decode.
    pub data_lost_at_gw: u64,
    /// Attempts with decoded data whose ACK1 did not reach the mote.
    pub ack1_lost: u64,
    /// Attempts with decoded data for which neither ACK arrived.
    pub ack2_lost: u64,
    /// Attempt-level PER; 0 when there were no attempts.
    pub per_estimate: f64,
    pub ci95_halfwidth: f64,
    pub no_attempts: bool,
    pub batch_per: Vec<f64>,
    pub mean_attempts_per_frame: f64,
    /// Delivered frames over frames that finished.
    pub delivery_ratio: f64,
    pub per_rate: Vec<RateCounters>,
    pub events_processed: u64,
}

impl SimReport {
    /// `generated = delivered + dropped + replaced + in flight`.
    pub fn is_conserved(&self) -> bool {
        self.frames_generated
            == self.frames_delivered
                + self.frames_dropped_retry_limit
                + self.frames_replaced
                + self.frames_in_flight
    }
}

/// Debug record of one simulator event.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time_s: f64,
    /// Mote id, or `None` for the gateway.
    pub mote: Option<usize>,
    pub event: &'static str,
    pub channel: Option<usize>,
    pub rate: usize,
    pub outcome: &'static str,
}

impl TraceRecord {
    pub const CSV_HEADER: &'static str = "time,entity,event,channel,rate,outcome";

    pub fn to_csv_line(&self) -> String {
        let entity = self
            .mote
            .map_or_else(|| "gw".to_string(), |m| format!("mote{m}"));
        let channel = self
            .channel
            .map_or_else(|| "down".to_string(), |c| c.to_string());
        format!(
            "{:.6},{entity},{},{channel},{},{}",
            self.time_s, self.event, self.rate, self.outcome
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Mote(usize),
    Gateway,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack1,
    Ack2,
}

/// A frame on air.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub source: Source,
    /// `None` for the downlink channel.
    pub channel: Option<usize>,
    pub rate: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub rx_power_dbm_at_gw: f64,
    pub kind: FrameKind,
}

/// Identity of one attempt, carried by every event it spawns.
#[derive(Debug, Clone, Copy)]
struct AttemptTag {
    id: u64,
    mote: usize,
    rate: usize,
    channel: usize,
    start_s: f64,
    end_s: f64,
    first: bool,
    counted: bool,
}

#[derive(Debug, Clone, Copy)]
struct Active {
    tag: AttemptTag,
    decoded: bool,
    ack1_ok: bool,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Generate { mote: usize, poisson: bool },
    Retransmit { mote: usize, token: u64 },
    TxEnd { tag: AttemptTag },
    Ack1Start { tag: AttemptTag },
    Ack1End { tag: AttemptTag, start_s: f64 },
    Ack2Start { tag: AttemptTag },
    Ack2End { tag: AttemptTag },
    AckTimeout { tag: AttemptTag },
}

/// Uniform retransmission start in `[fail + 1, fail + 1 + window]`.
pub fn sample_retry_start<R: Rng>(fail_time_s: f64, window_s: f64, rng: &mut R) -> f64 {
    fail_time_s + 1.0 + window_s * rng.random::<f64>()
}

/// One simulation run.
pub struct Simulator<'t> {
    cfg: SimConfig,
    motes: Vec<MoteState>,
    power_at_gw: Vec<f64>,
    active: Vec<Option<Active>>,
    queue: EventQueue<Event>,
    /// Uplink air logs indexed by `channel * rate_count + rate`.
    air: Vec<Vec<Transmission>>,
    downlink_busy_until: f64,
    next_attempt: u64,
    interarrival: Option<Exp<f64>>,
    keep_s: f64,
    report: SimReport,
    attempts_of_finished: u64,
    frames_finished: u64,
    batch_attempts: Vec<u64>,
    batch_failures: Vec<u64>,
    trace: Option<&'t mut dyn FnMut(TraceRecord)>,
}

impl<'t> Simulator<'t> {
    /// Places motes from the seed and schedules Poisson traffic.
    pub fn new(cfg: SimConfig) -> Result<Self> {
        let motes = place_motes(&cfg.network, cfg.seed)?;
        Self::with_motes(cfg, motes, true)
    }

    /// Uses the given motes. With `traffic = false` the only frames are
    /// those added through [`Simulator::generate_at`].
    pub fn with_motes(cfg: SimConfig, motes: Vec<MoteState>, traffic: bool) -> Result<Self> {
        cfg.validate()?;
        let net = &cfg.network;
        let rates = net.plan.rate_count();
        if motes.is_empty() {
            return Err(Error::config("at least one mote is required"));
        }
        if let Some(m) = motes.iter().find(|m| m.rate >= rates) {
            return Err(Error::config(format!(
                "mote {} uses unknown rate {}",
                m.id, m.rate
            )));
        }
        if motes.iter().enumerate().any(|(i, m)| m.id != i) {
            return Err(Error::config("mote ids must be 0..n in order"));
        }
        let power_at_gw = motes
            .iter()
            .map(|m| {
                received_power(
                    &net.propagation,
                    net.propagation.tx_power_mote_dbm,
                    m.distance_m.max(net.plan.min_distance_m),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let per_mote = net.load_fps / motes.len() as f64;
        let interarrival = if traffic && per_mote > 0.0 {
            Some(Exp::new(per_mote).map_err(|e| Error::config(format!("bad load: {e}")))?)
        } else {
            None
        };
        let longest = net
            .plan
            .bands
            .iter()
            .map(|b| b.airtime.data_frame_s.max(b.airtime.ack_s))
            .fold(0.0, f64::max);
        let n = motes.len();
        let batches = cfg.batches;
        let mut sim = Simulator {
            air: vec![Vec::new(); net.num_channels * rates],
            power_at_gw,
            active: vec![None; n],
            motes,
            queue: EventQueue::new(),
            downlink_busy_until: f64::NEG_INFINITY,
            next_attempt: 0,
            interarrival,
            keep_s: 2.0 * longest + net.ack_delay_2_s + 1.0,
            report: SimReport {
                frames_generated: 0,
                frames_delivered: 0,
                frames_dropped_retry_limit: 0,
                frames_replaced: 0,
                frames_in_flight: 0,
                attempts_total: 0,
                attempts_successful: 0,
                data_lost_at_gw: 0,
                ack1_lost: 0,
                ack2_lost: 0,
                per_estimate: 0.0,
                ci95_halfwidth: 0.0,
                no_attempts: true,
                batch_per: Vec::new(),
                mean_attempts_per_frame: 0.0,
                delivery_ratio: 0.0,
                per_rate: vec![RateCounters::default(); rates],
                events_processed: 0,
            },
            attempts_of_finished: 0,
            frames_finished: 0,
            batch_attempts: vec![0; batches],
            batch_failures: vec![0; batches],
            trace: None,
            cfg,
        };
        if let Some(exp) = sim.interarrival {
            for id in 0..n {
                let t = exp.sample(&mut sim.motes[id].rng);
                sim.queue.schedule(
                    t,
                    Event::Generate {
                        mote: id,
                        poisson: true,
                    },
                )?;
            }
        }
        Ok(sim)
    }

    /// Streams one [`TraceRecord`] per protocol event to `sink`.
    pub fn set_trace(&mut self, sink: &'t mut dyn FnMut(TraceRecord)) {
        self.trace = Some(sink);
    }

    pub fn motes(&self) -> &[MoteState] {
        &self.motes
    }

    /// Adds one frame generation at `time_s`, on top of any Poisson traffic.
    pub fn generate_at(&mut self, mote: usize, time_s: f64) -> Result<()> {
        if mote >= self.motes.len() {
            return Err(Error::config(format!("no mote {mote}")));
        }
        self.queue.schedule(
            time_s,
            Event::Generate {
                mote,
                poisson: false,
            },
        )
    }

    /// Processes events up to the horizon and returns the statistics.
    pub fn run(mut self) -> Result<SimReport> {
        let horizon = self.cfg.duration_s;
        while let Some(t) = self.queue.peek_time() {
            if t > horizon {
                break;
            }
            let Some((t, ev)) = self.queue.pop()? else {
                break;
            };
            self.report.events_processed += 1;
            self.handle(t, ev)?;
        }
        Ok(self.finish())
    }

    fn emit(
        &mut self,
        time_s: f64,
        mote: Option<usize>,
        event: &'static str,
        channel: Option<usize>,
        rate: usize,
        outcome: &'static str,
    ) {
        if let Some(sink) = self.trace.as_mut() {
            sink(TraceRecord {
                time_s,
                mote,
                event,
                channel,
                rate,
                outcome,
            });
        }
    }

    fn log_index(&self, channel: usize, rate: usize) -> usize {
        channel * self.cfg.network.plan.rate_count() + rate
    }

    fn counted_frame(&self, f: &PendingFrame) -> bool {
        f.generation_time >= self.cfg.warmup_s
    }

    fn handle(&mut self, t: f64, ev: Event) -> Result<()> {
        match ev {
            Event::Generate { mote, poisson } => {
                if poisson {
                    if let Some(exp) = self.interarrival {
                        let dt = exp.sample(&mut self.motes[mote].rng);
                        self.queue.schedule(
                            t + dt,
                            Event::Generate {
                                mote,
                                poisson: true,
                            },
                        )?;
                    }
                }
                self.on_generate(mote, t)
            }
            Event::Retransmit { mote, token } => {
                let m = &self.motes[mote];
                if m.status == MoteStatus::Backoff && m.backoff_token == token {
                    self.start_attempt(mote, t)?;
                }
                Ok(())
            }
            Event::TxEnd { tag } => self.on_tx_end(tag, t),
            Event::Ack1Start { tag } => self.on_ack1_start(tag, t),
            Event::Ack1End { tag, start_s } => self.on_ack1_end(tag, start_s, t),
            Event::Ack2Start { tag } => self.on_ack2_start(tag, t),
            Event::Ack2End { tag } => self.on_ack2_end(tag, t),
            Event::AckTimeout { tag } => {
                if self.is_current(tag) {
                    self.emit(
                        t,
                        Some(tag.mote),
                        "timeout",
                        Some(tag.channel),
                        tag.rate,
                        "fail",
                    );
                    self.resolve(tag.mote, false, t)?;
                }
                Ok(())
            }
        }
    }

    fn is_current(&self, tag: AttemptTag) -> bool {
        matches!(self.active[tag.mote], Some(a) if a.tag.id == tag.id)
    }

    fn on_generate(&mut self, id: usize, t: f64) -> Result<()> {
        let frame = PendingFrame {
            generation_time: t,
            attempts_used: 0,
        };
        if self.counted_frame(&frame) {
            self.report.frames_generated += 1;
        }
        self.emit(t, Some(id), "generate", None, self.motes[id].rate, "new");
        match self.motes[id].status {
            MoteStatus::Idle => {
                self.motes[id].pending_frame = Some(frame);
                self.start_attempt(id, t)
            }
            MoteStatus::Backoff => {
                if let Some(old) = self.motes[id].pending_frame.replace(frame) {
                    self.finish_frame(&old, Fate::Replaced, self.motes[id].rate);
                }
                self.motes[id].backoff_token += 1;
                self.start_attempt(id, t)
            }
            MoteStatus::Transmitting | MoteStatus::AwaitingAck1 | MoteStatus::AwaitingAck2 => {
                if let Some(old) = self.motes[id].newer_frame.replace(frame) {
                    self.finish_frame(&old, Fate::Replaced, self.motes[id].rate);
                }
                Ok(())
            }
        }
    }

    fn start_attempt(&mut self, id: usize, t: f64) -> Result<()> {
        let net = &self.cfg.network;
        let f = net.num_channels;
        let m = &mut self.motes[id];
        let frame = m
            .pending_frame
            .as_mut()
            .ok_or_else(|| Error::Internal(format!("mote {id} has no frame")))?;
        frame.attempts_used += 1;
        let first = frame.attempts_used == 1;
        let channel = m.rng.random_range(0..f);
        let rate = m.rate;
        let t_data = net.plan.bands[rate].airtime.data_frame_s;
        let tag = AttemptTag {
            id: self.next_attempt,
            mote: id,
            rate,
            channel,
            start_s: t,
            end_s: t + t_data,
            first,
            counted: t >= self.cfg.warmup_s,
        };
        self.next_attempt += 1;
        m.status = MoteStatus::Transmitting;
        m.attempt = Some(tag.id);
        self.active[id] = Some(Active {
            tag,
            decoded: false,
            ack1_ok: false,
        });
        let tx = Transmission {
            source: Source::Mote(id),
            channel: Some(channel),
            rate,
            start_s: t,
            end_s: tag.end_s,
            rx_power_dbm_at_gw: self.power_at_gw[id],
            kind: FrameKind::Data,
        };
        self.push_air(channel, rate, tx, t);
        self.emit(
            t,
            Some(id),
            "data_start",
            Some(channel),
            rate,
            if first { "first" } else { "retry" },
        );
        self.queue.schedule(tag.end_s, Event::TxEnd { tag })
    }

    fn push_air(&mut self, channel: usize, rate: usize, tx: Transmission, now: f64) {
        let idx = self.log_index(channel, rate);
        let keep = self.keep_s;
        let log = &mut self.air[idx];
        if log.len() >= 64 {
            log.retain(|x| x.end_s >= now - keep);
        }
        log.push(tx);
    }

    fn on_tx_end(&mut self, tag: AttemptTag, t: f64) -> Result<()> {
        let net = &self.cfg.network;
        let idx = self.log_index(tag.channel, tag.rate);
        let target = Signal {
            start_s: tag.start_s,
            end_s: tag.end_s,
            power_dbm: self.power_at_gw[tag.mote],
        };
        let interferers: Vec<Signal> = self.air[idx]
            .iter()
            .filter(|x| x.source != Source::Mote(tag.mote) || x.start_s != tag.start_s)
            .filter(|x| x.start_s < tag.end_s && x.end_s > tag.start_s)
            .map(|x| Signal {
                start_s: x.start_s,
                end_s: x.end_s,
                power_dbm: match x.kind {
                    FrameKind::Data => x.rx_power_dbm_at_gw,
                    _ => f64::INFINITY,
                },
            })
            .collect();
        let rx = capture_adjudicate(
            &target,
            &interferers,
            net.co_channel_rejection,
            self.cfg.noise_floor_dbm,
        );
        let decoded = rx == Reception::Decoded;
        let timeout = t + net.ack_delay_2_s + net.plan.ack2_airtime_s();
        let (d1, d2) = (net.ack_delay_1_s, net.ack_delay_2_s);
        if let Some(a) = self.active[tag.mote].as_mut() {
            a.decoded = decoded;
        }
        self.motes[tag.mote].status = MoteStatus::AwaitingAck1;
        if tag.counted && decoded {
            let c = &mut self.report.per_rate[tag.rate];
            c.data_decoded += 1;
            if tag.first {
                c.first_data_decoded += 1;
            } else {
                c.retry_data_decoded += 1;
            }
        }
        self.emit(
            t,
            Some(tag.mote),
            "data_end",
            Some(tag.channel),
            tag.rate,
            if decoded { "decoded" } else { "lost" },
        );
        if decoded {
            self.queue.schedule(t + d1, Event::Ack1Start { tag })?;
            // The timeout is queued when ACK2 starts so that an ACK2 ending
            // at the same instant is seen first.
            self.queue.schedule(t + d2, Event::Ack2Start { tag })
        } else {
            self.queue.schedule(timeout, Event::AckTimeout { tag })
        }
    }

    fn on_ack1_start(&mut self, tag: AttemptTag, t: f64) -> Result<()> {
        let idx = self.log_index(tag.channel, tag.rate);
        let busy = self.air[idx]
            .iter()
            .any(|x| x.kind == FrameKind::Data && x.start_s <= t && x.end_s > t);
        if busy {
            self.emit(
                t,
                None,
                "ack1_start",
                Some(tag.channel),
                tag.rate,
                "cancelled",
            );
            return Ok(());
        }
        let end = t + self.cfg.network.plan.bands[tag.rate].airtime.ack_s;
        let tx = Transmission {
            source: Source::Gateway,
            channel: Some(tag.channel),
            rate: tag.rate,
            start_s: t,
            end_s: end,
            rx_power_dbm_at_gw: f64::INFINITY,
            kind: FrameKind::Ack1,
        };
        self.push_air(tag.channel, tag.rate, tx, t);
        self.emit(t, None, "ack1_start", Some(tag.channel), tag.rate, "sent");
        self.queue.schedule(end, Event::Ack1End { tag, start_s: t })
    }

    /// Power at mote `id` of everything else on air on its channel and rate.
    fn interference_at_mote(
        &self,
        id: usize,
        channel: usize,
        rate: usize,
        start_s: f64,
        end_s: f64,
    ) -> Result<Vec<Signal>> {
        let net = &self.cfg.network;
        let me = &self.motes[id];
        let gw_power = received_power(
            &net.propagation,
            net.propagation.tx_power_gw_dbm,
            me.distance_m.max(net.plan.min_distance_m),
        )?;
        let idx = self.log_index(channel, rate);
        self.air[idx]
            .iter()
            .filter(|x| x.start_s < end_s && x.end_s > start_s)
            .filter(|x| !(x.kind == FrameKind::Ack1 && x.start_s == start_s))
            .filter(|x| x.source != Source::Mote(id))
            .map(|x| {
                let power = match x.source {
                    Source::Mote(j) => {
                        let d = me.distance_to(&self.motes[j]).max(net.plan.min_distance_m);
                        received_power(&net.propagation, net.propagation.tx_power_mote_dbm, d)?
                    }
                    Source::Gateway => gw_power,
                };
                Ok(Signal {
                    start_s: x.start_s,
                    end_s: x.end_s,
                    power_dbm: power,
                })
            })
            .collect()
    }

    fn gw_power_at(&self, id: usize) -> Result<f64> {
        let net = &self.cfg.network;
        received_power(
            &net.propagation,
            net.propagation.tx_power_gw_dbm,
            self.motes[id].distance_m.max(net.plan.min_distance_m),
        )
    }

    fn on_ack1_end(&mut self, tag: AttemptTag, start_s: f64, t: f64) -> Result<()> {
        if !self.is_current(tag) {
            return Ok(());
        }
        let interferers = self.interference_at_mote(tag.mote, tag.channel, tag.rate, start_s, t)?;
        let target = Signal {
            start_s,
            end_s: t,
            power_dbm: self.gw_power_at(tag.mote)?,
        };
        let rx = capture_adjudicate(
            &target,
            &interferers,
            self.cfg.network.co_channel_rejection,
            self.cfg.noise_floor_dbm,
        );
        if rx == Reception::Decoded {
            if let Some(a) = self.active[tag.mote].as_mut() {
                a.ack1_ok = true;
            }
            self.emit(
                t,
                Some(tag.mote),
                "ack1_end",
                Some(tag.channel),
                tag.rate,
                "received",
            );
            self.resolve(tag.mote, true, t)
        } else {
            self.motes[tag.mote].status = MoteStatus::AwaitingAck2;
            self.emit(
                t,
                Some(tag.mote),
                "ack1_end",
                Some(tag.channel),
                tag.rate,
                "lost",
            );
            Ok(())
        }
    }

    fn on_ack2_start(&mut self, tag: AttemptTag, t: f64) -> Result<()> {
        let end = t + self.cfg.network.plan.ack2_airtime_s();
        if self.downlink_busy_until > t {
            self.emit(t, None, "ack2_start", None, 0, "skipped");
        } else {
            self.downlink_busy_until = end;
            if tag.counted {
                self.report.per_rate[tag.rate].ack2_sent += 1;
            }
            self.emit(t, None, "ack2_start", None, 0, "sent");
            self.queue.schedule(end, Event::Ack2End { tag })?;
        }
        self.queue.schedule(end, Event::AckTimeout { tag })
    }

    fn on_ack2_end(&mut self, tag: AttemptTag, t: f64) -> Result<()> {
        if !self.is_current(tag) {
            return Ok(());
        }
        // Nothing else transmits on the downlink, so only noise matters.
        let target = Signal {
            start_s: t,
            end_s: t,
            power_dbm: self.gw_power_at(tag.mote)?,
        };
        let rx = capture_adjudicate(
            &target,
            &[],
            self.cfg.network.co_channel_rejection,
            self.cfg.noise_floor_dbm,
        );
        let ok = rx == Reception::Decoded;
        self.emit(
            t,
            Some(tag.mote),
            "ack2_end",
            None,
            0,
            if ok { "received" } else { "lost" },
        );
        if ok {
            self.resolve(tag.mote, true, t)?;
        }
        Ok(())
    }

    fn resolve(&mut self, id: usize, success: bool, t: f64) -> Result<()> {
        let Some(active) = self.active[id].take() else {
            return Err(Error::Internal(format!(
                "mote {id} resolved without an attempt"
            )));
        };
        let tag = active.tag;
        self.motes[id].attempt = None;
        if tag.counted {
            self.count_attempt(&active, success);
        }
        let rate = self.motes[id].rate;
        let frame = self.motes[id]
            .pending_frame
            .take()
            .ok_or_else(|| Error::Internal(format!("mote {id} lost its frame")))?;
        let newer = self.motes[id].newer_frame.take();
        if success {
            self.finish_frame(&frame, Fate::Delivered, rate);
        } else if newer.is_some() {
            self.finish_frame(&frame, Fate::Replaced, rate);
        } else if frame.attempts_used > self.cfg.network.retry_limit {
            self.finish_frame(&frame, Fate::Dropped, rate);
            self.emit(t, Some(id), "drop", None, rate, "retry_limit");
        } else {
            let m = &mut self.motes[id];
            m.pending_frame = Some(frame);
            m.status = MoteStatus::Backoff;
            m.backoff_token += 1;
            let token = m.backoff_token;
            let at = sample_retry_start(t, self.cfg.network.retry_window_s, &mut m.rng);
            return self
                .queue
                .schedule(at, Event::Retransmit { mote: id, token });
        }
        match newer {
            Some(f) => {
                self.motes[id].pending_frame = Some(f);
                self.start_attempt(id, t)
            }
            None => {
                self.motes[id].status = MoteStatus::Idle;
                Ok(())
            }
        }
    }

    fn count_attempt(&mut self, a: &Active, success: bool) {
        let tag = a.tag;
        let r = &mut self.report;
        r.attempts_total += 1;
        let c = &mut r.per_rate[tag.rate];
        c.attempts += 1;
        if tag.first {
            c.first_attempts += 1;
        } else {
            c.retry_attempts += 1;
        }
        if a.ack1_ok {
            c.ack1_received += 1;
        }
        if success {
            r.attempts_successful += 1;
            c.successes += 1;
            if tag.first {
                c.first_successes += 1;
            } else {
                c.retry_successes += 1;
            }
        } else if !a.decoded {
            r.data_lost_at_gw += 1;
        } else {
            r.ack2_lost += 1;
        }
        if a.decoded && !a.ack1_ok {
            r.ack1_lost += 1;
        }
        let span = self.cfg.duration_s - self.cfg.warmup_s;
        let b = self.batch_attempts.len();
        let k = (((tag.start_s - self.cfg.warmup_s) / span * b as f64) as usize).min(b - 1);
        self.batch_attempts[k] += 1;
        if !success {
            self.batch_failures[k] += 1;
        }
    }

    fn finish_frame(&mut self, frame: &PendingFrame, fate: Fate, rate: usize) {
        if !self.counted_frame(frame) {
            return;
        }
        match fate {
            Fate::Delivered => self.report.frames_delivered += 1,
            Fate::Dropped => self.report.frames_dropped_retry_limit += 1,
            Fate::Replaced => self.report.frames_replaced += 1,
        }
        if frame.attempts_used > 0 {
            self.frames_finished += 1;
            self.attempts_of_finished += frame.attempts_used as u64;
            let c = &mut self.report.per_rate[rate];
            c.frames_finished += 1;
            c.attempts_of_finished += frame.attempts_used as u64;
        }
    }

    fn finish(mut self) -> SimReport {
        let in_flight = self
            .motes
            .iter()
            .flat_map(|m| [m.pending_frame, m.newer_frame])
            .flatten()
            .filter(|f| f.generation_time >= self.cfg.warmup_s)
            .count() as u64;
        let r = &mut self.report;
        r.frames_in_flight = in_flight;
        r.no_attempts = r.attempts_total == 0;
        r.per_estimate = if r.no_attempts {
            0.0
        } else {
            1.0 - r.attempts_successful as f64 / r.attempts_total as f64
        };
        r.batch_per = self
            .batch_attempts
            .iter()
            .zip(&self.batch_failures)
            .filter(|(a, _)| **a > 0)
            .map(|(a, f)| *f as f64 / *a as f64)
            .collect();
        r.ci95_halfwidth = batch_ci95(&r.batch_per);
        r.mean_attempts_per_frame = if self.frames_finished == 0 {
            0.0
        } else {
            self.attempts_of_finished as f64 / self.frames_finished as f64
        };
        let done = r.frames_delivered + r.frames_dropped_retry_limit + r.frames_replaced;
        r.delivery_ratio = if done == 0 {
            0.0
        } else {
            r.frames_delivered as f64 / done as f64
        };
        self.report
    }
}

#[derive(Debug, Clone, Copy)]
enum Fate {
    Delivered,
    Dropped,
    Replaced,
}

/// Normal 95% half-width from batch means; 0 with fewer than two batches.
pub fn batch_ci95(batch_means: &[f64]) -> f64 {
    let b = batch_means.len();
    if b < 2 {
        return 0.0;
    }
    let mean = batch_means.iter().sum::<f64>() / b as f64;
    let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
    1.96 * (var / b as f64).sqrt()
}

/// Runs one simulation.
pub fn run(cfg: &SimConfig) -> Result<SimReport> {
    Simulator::new(cfg.clone())?.run()
}

/// Runs one simulation and writes the event trace as CSV.
pub fn run_traced<W: Write>(cfg: &SimConfig, out: &mut W) -> Result<SimReport> {
    writeln!(out, "{}", TraceRecord::CSV_HEADER)?;
    let mut failed: Option<std::io::Error> = None;
    let mut sink = |rec: TraceRecord| {
        if failed.is_none() {
            if let Err(e) = writeln!(out, "{}", rec.to_csv_line()) {
                failed = Some(e);
            }
        }
    };
    let report = {
        let mut sim = Simulator::new(cfg.clone())?;
        sim.set_trace(&mut sink);
        sim.run()?
    };
    match failed {
        Some(e) => Err(e.into()),
        None => Ok(report),
    }
}
