//! End-device state and placement.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::geometry::received_power;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoteStatus {
    Idle,
    Transmitting,
    AwaitingAck1,
    AwaitingAck2,
    Backoff,
}

/// A frame waiting for (re)transmission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingFrame {
    pub generation_time: f64,
    pub attempts_used: u32,
}

#[derive(Debug, Clone)]
pub struct MoteState {
    pub id: usize,
    pub distance_m: f64,
    pub angle_rad: f64,
    pub rate: usize,
    pub status: MoteStatus,
    pub pending_frame: Option<PendingFrame>,
    /// Frame generated while an exchange was in progress; it supersedes
    /// `pending_frame` unless that exchange succeeds.
    pub(crate) newer_frame: Option<PendingFrame>,
    /// Attempt currently on air or awaiting its ACKs.
    pub(crate) attempt: Option<u64>,
    /// Invalidates a scheduled retransmission when the frame is replaced.
    pub(crate) backoff_token: u64,
    pub(crate) rng: ChaCha8Rng,
}

impl MoteState {
    /// A mote at polar position `(distance_m, angle_rad)`, traffic stream
    /// derived from `seed` and its id.
    pub fn new(id: usize, distance_m: f64, angle_rad: f64, rate: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64 + 1);
        MoteState {
            id,
            distance_m,
            angle_rad,
            rate,
            status: MoteStatus::Idle,
            pending_frame: None,
            newer_frame: None,
            attempt: None,
            backoff_token: 0,
            rng,
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (
            self.distance_m * self.angle_rad.cos(),
            self.distance_m * self.angle_rad.sin(),
        )
    }

    pub fn distance_to(&self, other: &MoteState) -> f64 {
        let (ax, ay) = self.position();
        let (bx, by) = other.position();
        (ax - bx).hypot(ay - by)
    }
}

/// Data rate assigned by the server from the power at the gateway.
pub fn assign_rate(config: &NetworkConfig, distance_m: f64) -> Result<usize> {
    let d = distance_m.max(config.plan.min_distance_m);
    let power = received_power(&config.propagation, config.propagation.tx_power_mote_dbm, d)?;
    Ok(config.plan.rate_for_power(power))
}

/// Places `num_motes` motes uniformly on the cell disk.
pub fn place_motes(config: &NetworkConfig, seed: u64) -> Result<Vec<MoteState>> {
    if config.num_motes == 0 {
        return Err(Error::config("num_motes must be at least 1"));
    }
    let coverage = config.plan.bands[0].outer_radius_m;
    let cell = config.plan.cell_radius_m;
    if cell > coverage * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "cell radius {cell} m exceeds rate-0 coverage {coverage} m"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.num_motes)
        .map(|id| {
            let r = cell * rng.random::<f64>().sqrt();
            let angle = rng.random::<f64>() * std::f64::consts::TAU;
            Ok(MoteState::new(id, r, angle, assign_rate(config, r)?, seed))
        })
        .collect()
}
