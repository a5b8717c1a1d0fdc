//! Power-based reception decision for one frame against overlapping signals.

use crate::geometry::CoChannelRejection;

/// A signal as seen by one receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Signal {
    pub start_s: f64,
    pub end_s: f64,
    /// `+inf` for the receiver's own transmitter.
    pub power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reception {
    Decoded,
    Lost,
}

fn to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Decides whether `target` is decoded.
///
/// The interferer set may change during the frame, so the frame is split
/// into segments at every interferer edge and each segment must pass: with
/// no interferer the target must exceed the noise floor; otherwise it must
/// exceed noise plus the summed interference by more than the co-channel
/// rejection. An infinite rejection loses the frame on any overlap.
pub fn capture_adjudicate(
    target: &Signal,
    interferers: &[Signal],
    cr: CoChannelRejection,
    noise_floor_dbm: f64,
) -> Reception {
    let overlapping: Vec<&Signal> = interferers
        .iter()
        .filter(|s| s.start_s < target.end_s && s.end_s > target.start_s)
        .collect();
    let noise_mw = to_mw(noise_floor_dbm);
    if overlapping.is_empty() {
        return if target.power_dbm > noise_floor_dbm {
            Reception::Decoded
        } else {
            Reception::Lost
        };
    }
    let CoChannelRejection::Db(margin) = cr else {
        return Reception::Lost;
    };

    let mut edges: Vec<f64> = vec![target.start_s, target.end_s];
    for s in &overlapping {
        edges.extend([s.start_s.max(target.start_s), s.end_s.min(target.end_s)]);
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    for w in edges.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let interference: f64 = overlapping
            .iter()
            .filter(|s| s.start_s <= mid && s.end_s > mid)
            .map(|s| to_mw(s.power_dbm))
            .sum();
        let ok = if interference == 0.0 {
            target.power_dbm > noise_floor_dbm
        } else {
            target.power_dbm > margin + 10.0 * (noise_mw + interference).log10()
        };
        if !ok {
            return Reception::Lost;
        }
    }
    Reception::Decoded
}
