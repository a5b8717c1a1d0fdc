//! Okumura–Hata propagation, data-rate rings and capture probabilities.
//!
//! Motes are uniform on a disk around the gateway; the server assigns data
//! rate `i` to a mote whose power at the gateway falls into
//! `[w_min_i, w_max_i)`. Each rate therefore owns an annulus `[μ_i, ν_i)`.
//! The capture probabilities below concern two motes of the same annulus and
//! depend only on `ν/μ` and `CR/B`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::airtime::Airtime;
use crate::error::{Error, Result};
use crate::quadrature::Integrator;

/// Co-channel rejection: the margin in dB by which a frame must exceed the
/// interference to be decoded. `Infinite` disables capture entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum CoChannelRejection {
    Db(f64),
    Infinite,
}

impl CoChannelRejection {
    pub fn as_db(self) -> f64 {
        match self {
            CoChannelRejection::Db(v) => v,
            CoChannelRejection::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, CoChannelRejection::Infinite)
    }

    /// Distance ratio `10^(CR/B)` equivalent to the margin for path-loss slope `B`.
    pub fn distance_ratio(self, slope_b: f64) -> f64 {
        match self {
            CoChannelRejection::Db(v) => 10f64.powf(v / slope_b),
            CoChannelRejection::Infinite => f64::INFINITY,
        }
    }

    /// Shifts a finite margin by `delta_db`; infinity stays infinity.
    pub fn offset(self, delta_db: f64) -> Self {
        match self {
            CoChannelRejection::Db(v) => CoChannelRejection::Db(v + delta_db),
            CoChannelRejection::Infinite => CoChannelRejection::Infinite,
        }
    }
}

impl TryFrom<f64> for CoChannelRejection {
    type Error = String;

    fn try_from(v: f64) -> std::result::Result<Self, String> {
        if v.is_nan() || v == f64::NEG_INFINITY {
            Err(format!(
                "co-channel rejection must be a number or +inf, got {v}"
            ))
        } else if v == f64::INFINITY {
            Ok(CoChannelRejection::Infinite)
        } else {
            Ok(CoChannelRejection::Db(v))
        }
    }
}

impl From<CoChannelRejection> for f64 {
    fn from(cr: CoChannelRejection) -> f64 {
        cr.as_db()
    }
}

impl std::fmt::Display for CoChannelRejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoChannelRejection::Db(v) => write!(f, "{v} dB"),
            CoChannelRejection::Infinite => f.write_str("inf"),
        }
    }
}

/// Okumura–Hata large-city propagation with received power
/// `w_rx(d) = A − B·lg(d)`. `intercept_a_db` is the mote's signal at 1 m,
/// so the classic kilometre-referenced intercept equals `A − 3B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationModel {
    pub tx_power_mote_dbm: f64,
    pub tx_power_gw_dbm: f64,
    pub carrier_freq_mhz: f64,
    pub gw_antenna_height_m: f64,
    pub mote_antenna_height_m: f64,
    pub intercept_a_db: f64,
    pub slope_b_db: f64,
}

impl PropagationModel {
    pub fn okumura_hata(
        tx_power_mote_dbm: f64,
        tx_power_gw_dbm: f64,
        carrier_freq_mhz: f64,
        gw_antenna_height_m: f64,
        mote_antenna_height_m: f64,
    ) -> Result<Self> {
        let positive = [carrier_freq_mhz, gw_antenna_height_m, mote_antenna_height_m];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config(
                "frequency and antenna heights must be positive",
            ));
        }
        if !(tx_power_mote_dbm.is_finite() && tx_power_gw_dbm.is_finite()) {
            return Err(Error::config("transmit powers must be finite"));
        }
        let slope_b_db = 44.9 - 6.55 * gw_antenna_height_m.log10();
        if !(slope_b_db > 0.0) {
            return Err(Error::config(format!(
                "gateway antenna height {gw_antenna_height_m} m gives a non-positive path-loss slope"
            )));
        }
        let a_km = tx_power_mote_dbm - 69.55 - 26.16 * carrier_freq_mhz.log10()
            + 13.82 * gw_antenna_height_m.log10()
            + 3.2 * (11.75 * mote_antenna_height_m).log10().powi(2)
            - 4.97;
        Ok(PropagationModel {
            tx_power_mote_dbm,
            tx_power_gw_dbm,
            carrier_freq_mhz,
            gw_antenna_height_m,
            mote_antenna_height_m,
            intercept_a_db: a_km + 3.0 * slope_b_db,
            slope_b_db,
        })
    }

    /// 14 dBm motes and gateway at 868 MHz, 30 m mast, 1.5 m motes.
    pub fn eu_default() -> Self {
        Self::okumura_hata(14.0, 14.0, 868.0, 30.0, 1.5).expect("default propagation is valid")
    }

    /// Intercept for a transmitter of power `tx_dbm`.
    pub fn intercept_for(&self, tx_dbm: f64) -> f64 {
        self.intercept_a_db + (tx_dbm - self.tx_power_mote_dbm)
    }

    /// Distance at which a `tx_dbm` transmitter is received at `power_dbm`.
    pub fn distance_for_power(&self, tx_dbm: f64, power_dbm: f64) -> f64 {
        10f64.powf((self.intercept_for(tx_dbm) - power_dbm) / self.slope_b_db)
    }
}

/// Power in dBm received `distance_m` away from a `tx_dbm` transmitter.
pub fn received_power(model: &PropagationModel, tx_dbm: f64, distance_m: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::domain(format!(
            "distance {distance_m} m must be positive"
        )));
    }
    Ok(model.intercept_for(tx_dbm) - model.slope_b_db * distance_m.log10())
}

/// Ring radii `(μ_i, ν_i)` for per-rate power intervals `(w_min_i, w_max_i)`.
///
/// Rate 0 must hold the weakest interval and the intervals must be
/// contiguous. An upper bound of `+inf` (the rate used next to the gateway)
/// maps to `min_distance_m`, which also caps every inner radius from below.
pub fn ring_radii(
    model: &PropagationModel,
    thresholds: &[(f64, f64)],
    min_distance_m: f64,
) -> Result<Vec<(f64, f64)>> {
    if thresholds.is_empty() {
        return Err(Error::config("no sensitivity thresholds given"));
    }
    for (i, &(lo, hi)) in thresholds.iter().enumerate() {
        if !(lo.is_finite() && lo < hi) {
            return Err(Error::config(format!(
                "threshold interval {i} [{lo}, {hi}) is empty or unbounded below"
            )));
        }
        if let Some(&(next_lo, _)) = thresholds.get(i + 1) {
            if next_lo != hi {
                return Err(Error::config(format!(
                    "threshold intervals {i} and {} are not contiguous ({hi} != {next_lo})",
                    i + 1
                )));
            }
        }
    }
    let tx = model.tx_power_mote_dbm;
    Ok(thresholds
        .iter()
        .map(|&(lo, hi)| {
            let outer = model.distance_for_power(tx, lo).max(min_distance_m);
            let inner = if hi.is_finite() {
                model.distance_for_power(tx, hi)
            } else {
                0.0
            };
            (inner.max(min_distance_m).min(outer), outer)
        })
        .collect())
}

/// Share of the disk of radius `cell_radius_m` covered by each ring.
pub fn rate_probabilities(radii: &[(f64, f64)], cell_radius_m: f64) -> Result<Vec<f64>> {
    if !(cell_radius_m > 0.0 && cell_radius_m.is_finite()) {
        return Err(Error::config(format!(
            "cell radius {cell_radius_m} m must be positive"
        )));
    }
    let r2 = cell_radius_m * cell_radius_m;
    let probs: Vec<f64> = radii
        .iter()
        .map(|&(mu, nu)| {
            let mu = mu.min(cell_radius_m);
            let nu = nu.min(cell_radius_m);
            ((nu * nu - mu * mu) / r2).clamp(0.0, 1.0)
        })
        .collect();
    if probs.iter().all(|&p| p == 0.0) {
        return Err(Error::config("no data-rate ring intersects the cell"));
    }
    Ok(probs)
}

/// One data rate's ring and airtimes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBand {
    pub sensitivity_lo_dbm: f64,
    /// `+inf` for the rate used closest to the gateway.
    pub sensitivity_hi_dbm: f64,
    pub inner_radius_m: f64,
    pub outer_radius_m: f64,
    pub usage_prob: f64,
    pub airtime: Airtime,
}

/// Per-rate table derived from thresholds, propagation and airtimes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePlan {
    pub bands: Vec<RateBand>,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
}

impl RatePlan {
    /// Builds the plan from the per-rate lower sensitivities (rate 0 first,
    /// increasing). Rings are clipped to the cell; the default cell radius
    /// is the rate-0 coverage edge, and a larger cell is rejected.
    pub fn build(
        model: &PropagationModel,
        sensitivities_dbm: &[f64],
        airtimes: &[Airtime],
        cell_radius_m: Option<f64>,
        min_distance_m: f64,
    ) -> Result<Self> {
        if sensitivities_dbm.len() != airtimes.len() {
            return Err(Error::config(format!(
                "{} sensitivity thresholds for {} data rates",
                sensitivities_dbm.len(),
                airtimes.len()
            )));
        }
        if !(min_distance_m > 0.0) {
            return Err(Error::config("minimum distance must be positive"));
        }
        let thresholds: Vec<(f64, f64)> = sensitivities_dbm
            .iter()
            .enumerate()
            .map(|(i, &lo)| {
                (
                    lo,
                    sensitivities_dbm
                        .get(i + 1)
                        .copied()
                        .unwrap_or(f64::INFINITY),
                )
            })
            .collect();
        let radii = ring_radii(model, &thresholds, min_distance_m)?;
        let coverage = radii[0].1;
        let cell = cell_radius_m.unwrap_or(coverage);
        if cell > coverage * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "cell radius {cell} m exceeds the rate-0 coverage of {coverage} m"
            )));
        }
        // The core inside the minimum distance belongs to the innermost ring.
        let mut area_radii = radii.clone();
        if let Some(last) = area_radii.last_mut() {
            last.0 = 0.0;
        }
        let probs = rate_probabilities(&area_radii, cell)?;
        let bands = thresholds
            .iter()
            .zip(&radii)
            .zip(probs)
            .zip(airtimes)
            .map(|(((&(lo, hi), &(mu, nu)), p), &airtime)| RateBand {
                sensitivity_lo_dbm: lo,
                sensitivity_hi_dbm: hi,
                inner_radius_m: mu.min(cell),
                outer_radius_m: nu.min(cell),
                usage_prob: p,
                airtime,
            })
            .collect();
        Ok(RatePlan {
            bands,
            cell_radius_m: cell,
            min_distance_m,
        })
    }

    pub fn rate_count(&self) -> usize {
        self.bands.len()
    }

    /// ACK2 always goes out at rate 0.
    pub fn ack2_airtime_s(&self) -> f64 {
        self.bands[0].airtime.ack_s
    }

    /// Data rate the server assigns to a signal of `power_dbm` at the gateway.
    /// Signals below every threshold fall back to rate 0.
    pub fn rate_for_power(&self, power_dbm: f64) -> usize {
        self.bands
            .iter()
            .rposition(|b| power_dbm >= b.sensitivity_lo_dbm)
            .unwrap_or(0)
    }
}

fn check_ring(mu: f64, nu: f64) -> Result<()> {
    if !(mu >= 0.0 && mu < nu && nu.is_finite()) {
        return Err(Error::domain(format!(
            "ring [{mu}, {nu}) needs 0 <= mu < nu"
        )));
    }
    Ok(())
}

fn check_margin(cr: CoChannelRejection) -> Result<()> {
    match cr {
        CoChannelRejection::Db(v) if !(v >= 0.0) => Err(Error::domain(format!(
            "co-channel rejection {v} dB must be non-negative"
        ))),
        _ => Ok(()),
    }
}

/// Probability that the tagged mote's frame survives one same-ring
/// interferer at the gateway: `P(r1 > r0·10^(CR/B))`.
pub fn capture_gw_pair(mu: f64, nu: f64, cr: CoChannelRejection, slope_b: f64) -> Result<f64> {
    check_ring(mu, nu)?;
    check_margin(cr)?;
    let x = cr.distance_ratio(slope_b);
    if nu <= mu * x {
        return Ok(0.0);
    }
    let num = nu * nu / x - mu * mu * x;
    let den = nu * nu - mu * mu;
    Ok((num * num / (2.0 * den * den)).clamp(0.0, 1.0))
}

/// Probability that neither of two overlapping same-ring frames is decoded.
pub fn capture_both(mu: f64, nu: f64, cr: CoChannelRejection, slope_b: f64) -> Result<f64> {
    check_ring(mu, nu)?;
    check_margin(cr)?;
    let x = cr.distance_ratio(slope_b);
    if nu <= mu * x {
        return Ok(1.0);
    }
    let x2 = x * x;
    let den = nu * nu - mu * mu;
    let num = nu.powi(4) * (1.0 - 1.0 / x2) + mu.powi(4) * (1.0 - x2);
    Ok((num / (den * den)).clamp(0.0, 1.0))
}

/// Probability that the interferer survives while the tagged frame is lost.
pub fn capture_one(w_gw_pair: f64, w_both: f64) -> Result<f64> {
    let unit = 0.0..=1.0;
    if !unit.contains(&w_gw_pair) || !unit.contains(&w_both) {
        return Err(Error::domain(format!(
            "capture probabilities ({w_gw_pair}, {w_both}) outside [0, 1]"
        )));
    }
    if w_gw_pair + w_both > 1.0 + 1e-9 {
        return Err(Error::domain(format!(
            "capture probabilities sum to {} > 1",
            w_gw_pair + w_both
        )));
    }
    Ok((1.0 - w_gw_pair - w_both).clamp(0.0, 1.0))
}

/// Probability that the gateway's ACK at the tagged mote survives one
/// same-ring mote transmitting: `P(d1 > r0·10^(CR/B))` with `d1` the
/// mote-to-mote distance.
///
/// The angle between the motes is integrated in closed form, leaving a 2-D
/// radial integral. A negative margin is accepted here: it arises when the
/// gateway transmits louder than the motes.
pub fn capture_mote_pair(
    mu: f64,
    nu: f64,
    cr: CoChannelRejection,
    slope_b: f64,
    quad: &Integrator,
) -> Result<f64> {
    check_ring(mu, nu)?;
    let x = cr.distance_ratio(slope_b);
    if x.is_infinite() {
        return Ok(0.0);
    }
    // Work on the unit ring; the result depends only on mu/nu.
    let m = mu / nu;
    let norm = 4.0 / ((1.0 - m * m) * (1.0 - m * m));
    let x2 = x * x;
    let angle_share = |r0: f64, r1: f64| {
        let bound = (r0 * r0 + r1 * r1 - r0 * r0 * x2) / (2.0 * r0 * r1);
        (std::f64::consts::PI - bound.clamp(-1.0, 1.0).acos()) / std::f64::consts::PI
    };
    // The interferer is fully outside the protection circle for
    // r1 >= r0(1 + X) and fully inside for r1 <= r0|X - 1| when X > 1.
    let gap = (x - 1.0).abs();
    let mut outer_breaks = vec![m / (1.0 + x), 1.0 / (1.0 + x)];
    if gap > 0.0 {
        outer_breaks.extend([m / gap, 1.0 / gap]);
    }
    let inner_quad = quad.with_tolerance(quad.spec().tolerance * 0.1);
    let mut failure = None;
    let total = quad.integrate(m.max(0.0), 1.0, &outer_breaks, |r0| {
        if r0 <= 0.0 {
            return 0.0;
        }
        let breaks = [r0 * (1.0 + x), r0 * gap];
        match inner_quad.integrate(m, 1.0, &breaks, |r1| {
            if r1 <= 0.0 {
                0.0
            } else {
                r1 * angle_share(r0, r1)
            }
        }) {
            Ok(v) => r0 * v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((norm * total).clamp(0.0, 1.0))
}

/// Capture probabilities of one data rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureRow {
    pub w_gw_pair: f64,
    pub w_both: f64,
    pub w_one: f64,
    pub w_mote_pair: f64,
}

impl CaptureRow {
    /// Row of a rate where capture never happens.
    pub const NO_CAPTURE: CaptureRow = CaptureRow {
        w_gw_pair: 0.0,
        w_both: 1.0,
        w_one: 0.0,
        w_mote_pair: 0.0,
    };
}

/// Per-rate capture probabilities for one interferer. Entries for two or
/// more simultaneous interferers are zero and not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureTable {
    pub rows: Vec<CaptureRow>,
    pub co_channel_rejection: CoChannelRejection,
}

pub fn build_capture_table(
    plan: &RatePlan,
    model: &PropagationModel,
    cr: CoChannelRejection,
    quad: &Integrator,
) -> Result<CaptureTable> {
    let b = model.slope_b_db;
    // Gateway-to-mote versus mote-to-mote: a louder gateway lowers the margin.
    let mote_cr = cr.offset(model.tx_power_mote_dbm - model.tx_power_gw_dbm);
    let rows = plan
        .bands
        .iter()
        .map(|band| {
            let (mu, nu) = (band.inner_radius_m, band.outer_radius_m);
            if mu >= nu {
                return Ok(CaptureRow::NO_CAPTURE);
            }
            let w_gw_pair = capture_gw_pair(mu, nu, cr, b)?;
            let w_both = capture_both(mu, nu, cr, b)?;
            Ok(CaptureRow {
                w_gw_pair,
                w_both,
                w_one: capture_one(w_gw_pair, w_both)?,
                w_mote_pair: capture_mote_pair(mu, nu, mote_cr, b, quad)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaptureTable {
        rows,
        co_channel_rejection: cr,
    })
}

/// Event estimated by [`mc_oracle_capture`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptureKind {
    /// Tagged frame decoded at the gateway.
    GwPair,
    /// Neither frame decoded.
    Both,
    /// Interferer decoded, tagged frame lost.
    One,
    /// ACK to the tagged mote survives the interferer.
    MotePair,
}

/// Monte-Carlo estimate `(mean, standard error)` of a capture probability,
/// sampling both motes uniformly over the ring area.
pub fn mc_oracle_capture(
    mu: f64,
    nu: f64,
    cr: CoChannelRejection,
    slope_b: f64,
    kind: CaptureKind,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_ring(mu, nu)?;
    if samples < 10_000 {
        return Err(Error::domain(format!(
            "Monte-Carlo oracle needs at least 10^4 samples, got {samples}"
        )));
    }
    let x = cr.distance_ratio(slope_b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mu2, span) = (mu * mu, nu * nu - mu * mu);
    let draw_radius = |rng: &mut ChaCha8Rng| (mu2 + rng.random::<f64>() * span).sqrt();
    let mut hits = 0u64;
    for _ in 0..samples {
        let r0 = draw_radius(&mut rng);
        let r1 = draw_radius(&mut rng);
        let hit = match kind {
            CaptureKind::GwPair => r1 > r0 * x,
            CaptureKind::One => r0 > r1 * x,
            CaptureKind::Both => !(r1 > r0 * x) && !(r0 > r1 * x),
            CaptureKind::MotePair => {
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                let d1 = (r0 * r0 + r1 * r1 - 2.0 * r0 * r1 * phi.cos())
                    .max(0.0)
                    .sqrt();
                d1 > r0 * x
            }
        };
        hits += u64::from(hit);
    }
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::QuadratureSpec;
    use proptest::prelude::*;

    fn quad() -> Integrator {
        Integrator::new(QuadratureSpec::default()).unwrap()
    }

    const B: f64 = 35.0;

    #[test]
    fn hata_closed_forms() {
        let m = PropagationModel::eu_default();
        let b = 44.9 - 6.55 * 30f64.log10();
        let a = 14.0 - 69.55 - 26.16 * 868f64.log10()
            + 13.82 * 30f64.log10()
            + 3.2 * (11.75f64 * 1.5).log10().powi(2)
            - 4.97;
        assert!((m.slope_b_db - b).abs() < 1e-12);
        // The classic formula is referenced to 1 km.
        assert!((received_power(&m, 14.0, 1000.0).unwrap() - a).abs() < 1e-9);
        assert_eq!(received_power(&m, 14.0, 1.0).unwrap(), m.intercept_a_db);
        let decade =
            received_power(&m, 14.0, 100.0).unwrap() - received_power(&m, 14.0, 1000.0).unwrap();
        assert!((decade - m.slope_b_db).abs() < 1e-9);
        assert!(received_power(&m, 14.0, 0.0).is_err());
        assert!(received_power(&m, 14.0, -3.0).is_err());
    }

    #[test]
    fn radii_round_trip() {
        let m = PropagationModel::eu_default();
        let th = [(-137.0, -134.5), (-134.5, -120.0), (-120.0, f64::INFINITY)];
        let radii = ring_radii(&m, &th, 1.0).unwrap();
        for (&(lo, hi), &(mu, nu)) in th.iter().zip(&radii) {
            assert!(mu < nu);
            assert!((received_power(&m, 14.0, nu).unwrap() - lo).abs() < 1e-9);
            if hi.is_finite() {
                assert!((received_power(&m, 14.0, mu).unwrap() - hi).abs() < 1e-9);
            } else {
                assert_eq!(mu, 1.0);
            }
        }
        // Upper bound at the 1 m intercept maps to radius 1 m.
        let r = ring_radii(&m, &[(-130.0, m.intercept_a_db)], 1e-3).unwrap();
        assert!((r[0].0 - 1.0).abs() < 1e-12);
        // Wider interval, wider ring.
        let wide = ring_radii(&m, &[(-140.0, -120.0)], 1.0).unwrap()[0];
        let narrow = ring_radii(&m, &[(-135.0, -125.0)], 1.0).unwrap()[0];
        assert!(wide.0 < narrow.0 && wide.1 > narrow.1);
        assert!(ring_radii(&m, &[(-130.0, -131.0)], 1.0).is_err());
        assert!(ring_radii(&m, &[(-137.0, -134.0), (-133.0, -120.0)], 1.0).is_err());
    }

    #[test]
    fn probabilities() {
        assert_eq!(rate_probabilities(&[(0.0, 10.0)], 10.0).unwrap(), vec![1.0]);
        assert_eq!(
            rate_probabilities(&[(3.0, 3.0), (0.0, 10.0)], 10.0).unwrap()[0],
            0.0
        );
        let split = 10.0 / 2f64.sqrt();
        let p = rate_probabilities(&[(split, 10.0), (0.0, split)], 10.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!(rate_probabilities(&[(20.0, 30.0)], 10.0).is_err());
    }

    #[test]
    fn eu_plan_tiles_the_cell() {
        let m = PropagationModel::eu_default();
        let sens = [-137.0, -134.5, -132.0, -129.0, -126.0, -123.0];
        let airtimes = vec![
            Airtime {
                data_frame_s: 1.0,
                ack_s: 0.5
            };
            6
        ];
        let plan = RatePlan::build(&m, &sens, &airtimes, None, 1.0).unwrap();
        let total: f64 = plan.bands.iter().map(|b| b.usage_prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for w in plan.bands.windows(2) {
            assert_eq!(w[0].sensitivity_hi_dbm, w[1].sensitivity_lo_dbm);
            assert!((w[0].inner_radius_m - w[1].outer_radius_m).abs() < 1e-9);
        }
        assert!(
            RatePlan::build(&m, &sens, &airtimes, Some(plan.cell_radius_m * 1.01), 1.0).is_err()
        );
        assert_eq!(plan.rate_for_power(-200.0), 0);
        assert_eq!(plan.rate_for_power(-133.0), 1);
        assert_eq!(plan.rate_for_power(-10.0), 5);
    }

    #[test]
    fn capture_limits() {
        let cr0 = CoChannelRejection::Db(0.0);
        assert!((capture_gw_pair(200.0, 800.0, cr0, B).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(capture_both(200.0, 800.0, cr0, B).unwrap(), 0.0);
        assert!((capture_one(0.5, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let inf = CoChannelRejection::Infinite;
        assert_eq!(capture_gw_pair(200.0, 800.0, inf, B).unwrap(), 0.0);
        assert_eq!(capture_both(200.0, 800.0, inf, B).unwrap(), 1.0);
        assert_eq!(capture_one(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(
            capture_mote_pair(200.0, 800.0, inf, B, &quad()).unwrap(),
            0.0
        );
        // ν <= μ·10^(CR/B): 800 <= 200·10^(25/35)? 10^0.714 = 5.18 > 4.
        let big = CoChannelRejection::Db(25.0);
        assert_eq!(capture_gw_pair(200.0, 800.0, big, B).unwrap(), 0.0);
        assert_eq!(capture_both(200.0, 800.0, big, B).unwrap(), 1.0);
        // A gateway far louder than any mote always gets through.
        let quiet = CoChannelRejection::Db(-200.0);
        assert!((capture_mote_pair(200.0, 800.0, quiet, B, &quad()).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn capture_domain_errors() {
        let cr = CoChannelRejection::Db(6.0);
        assert!(capture_gw_pair(800.0, 200.0, cr, B).is_err());
        assert!(capture_both(500.0, 500.0, cr, B).is_err());
        assert!(capture_gw_pair(200.0, 800.0, CoChannelRejection::Db(-1.0), B).is_err());
        assert!(capture_one(1.2, 0.0).is_err());
        assert!(capture_one(0.7, 0.7).is_err());
        assert!(capture_mote_pair(800.0, 200.0, cr, B, &quad()).is_err());
    }

    #[test]
    fn closed_forms_match_monte_carlo() {
        let cr = CoChannelRejection::Db(6.0);
        let gw = capture_gw_pair(200.0, 800.0, cr, B).unwrap();
        let both = capture_both(200.0, 800.0, cr, B).unwrap();
        let one = capture_one(gw, both).unwrap();
        let mote = capture_mote_pair(200.0, 800.0, cr, B, &quad()).unwrap();
        for (kind, exact, seed) in [
            (CaptureKind::GwPair, gw, 11),
            (CaptureKind::Both, both, 12),
            (CaptureKind::One, one, 13),
            (CaptureKind::MotePair, mote, 14),
        ] {
            let (est, se) = mc_oracle_capture(200.0, 800.0, cr, B, kind, 1_000_000, seed).unwrap();
            assert!(
                (est - exact).abs() <= 3.0 * se,
                "{kind:?}: exact {exact} mc {est} ± {se}"
            );
        }
    }

    #[test]
    fn oracle_basics() {
        let cr0 = CoChannelRejection::Db(0.0);
        let (p, se) =
            mc_oracle_capture(200.0, 800.0, cr0, B, CaptureKind::GwPair, 100_000, 1).unwrap();
        assert!((p - 0.5).abs() <= 3.0 * se);
        let (p, _) =
            mc_oracle_capture(200.0, 800.0, cr0, B, CaptureKind::Both, 100_000, 1).unwrap();
        assert_eq!(p, 0.0);
        let a = mc_oracle_capture(200.0, 800.0, cr0, B, CaptureKind::MotePair, 20_000, 9).unwrap();
        let b = mc_oracle_capture(200.0, 800.0, cr0, B, CaptureKind::MotePair, 20_000, 9).unwrap();
        assert_eq!(a.0.to_bits(), b.0.to_bits());
        assert!(mc_oracle_capture(200.0, 800.0, cr0, B, CaptureKind::One, 10, 1).is_err());
    }

    // Direct 2-D quadrature of the defining integrals of W^GW and W^Both.
    fn gw_pair_by_quadrature(mu: f64, nu: f64, x: f64) -> f64 {
        let q = Integrator::new(QuadratureSpec {
            nodes: 32,
            tolerance: 1e-11,
            max_depth: 40,
        })
        .unwrap();
        let den = (nu * nu - mu * mu).powi(2);
        q.integrate(mu, nu, &[nu / x], |r0| {
            let lo = (r0 * x).max(mu);
            if lo >= nu {
                return 0.0;
            }
            q.integrate(lo, nu, &[], |r1| 4.0 * r0 * r1 / den).unwrap()
        })
        .unwrap()
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for cr in [0.0, 3.0, 6.0, 10.0] {
            let c = CoChannelRejection::Db(cr);
            let x = c.distance_ratio(B);
            let gw = capture_gw_pair(200.0, 800.0, c, B).unwrap();
            let q = gw_pair_by_quadrature(200.0, 800.0, x);
            assert!((gw - q).abs() < 1e-6, "cr {cr}: {gw} vs {q}");
            // Neither wins = 1 - P(tagged wins) - P(interferer wins), and the
            // second event has the same integral by symmetry.
            let both = capture_both(200.0, 800.0, c, B).unwrap();
            assert!((both - (1.0 - 2.0 * q)).abs() < 1e-6);
        }
    }

    #[test]
    fn mote_pair_refinement_agrees() {
        let cr = CoChannelRejection::Db(6.0);
        let coarse = Integrator::new(QuadratureSpec {
            nodes: 16,
            tolerance: 1e-6,
            max_depth: 30,
        })
        .unwrap();
        let fine = Integrator::new(QuadratureSpec {
            nodes: 64,
            tolerance: 1e-9,
            max_depth: 30,
        })
        .unwrap();
        let a = capture_mote_pair(200.0, 800.0, cr, B, &coarse).unwrap();
        let b = capture_mote_pair(200.0, 800.0, cr, B, &fine).unwrap();
        assert!((a - b).abs() < 2e-6, "{a} vs {b}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn partition_identity(mu in 1.0f64..1000.0, ratio in 1.001f64..20.0, cr in 0.0f64..30.0) {
            let nu = mu * ratio;
            let c = CoChannelRejection::Db(cr);
            let gw = capture_gw_pair(mu, nu, c, B).unwrap();
            let both = capture_both(mu, nu, c, B).unwrap();
            let one = capture_one(gw, both).unwrap();
            prop_assert!((gw + both + one - 1.0).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&gw) && (0.0..=1.0).contains(&both));
        }

        #[test]
        fn monotone_in_margin(mu in 1.0f64..1000.0, ratio in 1.01f64..10.0, cr in 0.0f64..20.0, step in 0.1f64..5.0) {
            let nu = mu * ratio;
            let (a, b) = (CoChannelRejection::Db(cr), CoChannelRejection::Db(cr + step));
            prop_assert!(capture_gw_pair(mu, nu, b, B).unwrap() <= capture_gw_pair(mu, nu, a, B).unwrap() + 1e-12);
            prop_assert!(capture_both(mu, nu, b, B).unwrap() + 1e-12 >= capture_both(mu, nu, a, B).unwrap());
        }

        #[test]
        fn scale_invariance(mu in 1.0f64..100.0, ratio in 1.01f64..10.0, cr in 0.0f64..15.0, k in 0.01f64..100.0) {
            let nu = mu * ratio;
            let c = CoChannelRejection::Db(cr);
            let q = Integrator::new(QuadratureSpec { nodes: 16, tolerance: 1e-8, max_depth: 30 }).unwrap();
            prop_assert!((capture_gw_pair(mu, nu, c, B).unwrap() - capture_gw_pair(k * mu, k * nu, c, B).unwrap()).abs() < 1e-12);
            prop_assert!((capture_both(mu, nu, c, B).unwrap() - capture_both(k * mu, k * nu, c, B).unwrap()).abs() < 1e-12);
            let m1 = capture_mote_pair(mu, nu, c, B, &q).unwrap();
            let m2 = capture_mote_pair(k * mu, k * nu, c, B, &q).unwrap();
            prop_assert!((m1 - m2).abs() < 1e-9);
        }
    }

    #[test]
    fn mote_pair_monotone_in_margin() {
        let q = quad();
        let mut prev = f64::INFINITY;
        for cr in [0.0, 1.0, 3.0, 6.0, 10.0, 20.0] {
            let v = capture_mote_pair(300.0, 900.0, CoChannelRejection::Db(cr), B, &q).unwrap();
            assert!(v <= prev + 1e-9);
            prev = v;
        }
    }
}
