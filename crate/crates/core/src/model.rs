//! Analytic PER model of LoRaWAN class-A channel access with capture.
//!
//! Every (channel, rate) pair is an independent ALOHA channel with load
//! `r_i = λ·p_i/F`. First attempts are treated as Poisson traffic; a
//! retransmission after a two-frame collision is corrected by the
//! re-collision probability `P^c_i`, and the share of first attempts follows
//! from the expected number of attempts per frame.

use serde::{Deserialize, Serialize};

use crate::airtime::Airtime;
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::geometry::{CaptureRow, RatePlan};
use crate::quadrature::{Integrator, QuadratureSpec};

const FIXED_POINT_TOLERANCE: f64 = 1e-10;
const FIXED_POINT_MAX_ITER: usize = 10_000;
const FIXED_POINT_DAMPING: f64 = 0.5;
const RECOLLIDE_TOLERANCE: f64 = 1e-11;

/// Converged solution of the implicit data-success equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub value: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Right-hand side of the data-success equation evaluated at `p_data`.
///
/// The first term is the probability that no frame starts within one frame
/// duration either side and no ACK starts in the preceding ACK duration; the
/// second is a single overlapping frame that the tagged frame overpowers.
/// Two or more interferers never allow capture.
pub fn p_data_rhs(
    p_data: f64,
    r: f64,
    airtime: &Airtime,
    capture: &CaptureRow,
    num_motes: usize,
) -> f64 {
    let t = airtime.data_frame_s;
    let clean = (-(2.0 * t + p_data * airtime.ack_s) * r).exp();
    let captured = if num_motes > 1 {
        let a = 2.0 * r * t;
        a * (-a).exp() * capture.w_gw_pair
    } else {
        0.0
    };
    clean + captured
}

/// Probability that a data frame at per-channel load `r` is decoded.
pub fn solve_p_data(
    r: f64,
    airtime: &Airtime,
    capture: &CaptureRow,
    num_motes: usize,
) -> Result<FixedPoint> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::domain(format!(
            "per-channel load {r} must be finite and non-negative"
        )));
    }
    let mut p = 1.0;
    for iter in 0..FIXED_POINT_MAX_ITER {
        let rhs = p_data_rhs(p, r, airtime, capture, num_motes);
        let residual = (p - rhs).abs();
        if residual < FIXED_POINT_TOLERANCE {
            // Report the residual of the value actually returned.
            let value = rhs.clamp(0.0, 1.0);
            let residual = (value - p_data_rhs(value, r, airtime, capture, num_motes)).abs();
            return Ok(FixedPoint {
                value,
                residual,
                iterations: iter,
            });
        }
        p = (1.0 - FIXED_POINT_DAMPING) * p + FIXED_POINT_DAMPING * rhs;
    }
    let residual = (p - p_data_rhs(p, r, airtime, capture, num_motes)).abs();
    Err(Error::numerical(format!(
        "data-success fixed point did not converge in {FIXED_POINT_MAX_ITER} iterations (residual {residual:e})"
    )))
}

/// Probability that ACK1 reaches the mote, given its data frame was decoded.
pub fn p_ack1(
    r: f64,
    airtime: &Airtime,
    ack_delay_1_s: f64,
    capture: &CaptureRow,
    num_motes: usize,
) -> f64 {
    let clean = (-(ack_delay_1_s.min(airtime.data_frame_s) + airtime.ack_s) * r).exp();
    let captured = if num_motes > 1 {
        let a = r * airtime.ack_s;
        a * (-a).exp() * capture.w_mote_pair
    } else {
        0.0
    };
    (clean + captured).min(1.0)
}

/// Probability that ACK2 for rate `rate` is not pre-empted on the downlink by
/// an earlier ACK2 answering a frame from another channel or rate.
pub fn p_ack2(
    rate: usize,
    load_fps: f64,
    num_channels: usize,
    plan: &RatePlan,
    p_data_all: &[f64],
) -> f64 {
    let t_ack0 = plan.ack2_airtime_s();
    let p_i = plan.bands[rate].usage_prob;
    let decoded: f64 = plan
        .bands
        .iter()
        .zip(p_data_all)
        .map(|(b, pd)| b.usage_prob * pd)
        .sum();
    let own = p_i * p_data_all[rate] / num_channels as f64;
    (-t_ack0 * load_fps * (1.0 - own) * decoded).exp()
}

/// At least one of two independent ACKs arrives.
pub fn p_ack(p1: f64, p2: f64) -> f64 {
    p1 + p2 - p1 * p2
}

pub fn p_success_first(p_data: f64, p_ack: f64) -> f64 {
    p_data * p_ack
}

/// Whether retransmissions starting at `y` and `z` collide again: the frames
/// overlap, or one starts while the gateway sends ACK1 for the other.
pub fn collision_indicator(y: f64, z: f64, t_data: f64, t_ack: f64, ack_delay_1_s: f64) -> bool {
    let in_window = |a: f64, b: f64| {
        (a <= b && b <= a + t_data)
            || (a + t_data + ack_delay_1_s <= b && b <= a + t_data + ack_delay_1_s + t_ack)
    };
    in_window(y, z) || in_window(z, y)
}

/// CDF of `U2 - U1` with `U1, U2` independent uniform on `[0, w]`.
fn triangular_cdf(v: f64, w: f64) -> f64 {
    if v <= -w {
        0.0
    } else if v <= 0.0 {
        (v + w) * (v + w) / (2.0 * w * w)
    } else if v < w {
        1.0 - (w - v) * (w - v) / (2.0 * w * w)
    } else {
        1.0
    }
}

/// Probability that two motes whose frames collided with start offset `x`
/// collide again when both retransmit after independent uniform delays.
pub fn recollide_given_offset(x: f64, airtime: &Airtime, ack_delay_1_s: f64, window_s: f64) -> f64 {
    let t = airtime.data_frame_s;
    let ack_lo = t + ack_delay_1_s;
    let ack_hi = ack_lo + airtime.ack_s;
    // z - y = x + (U2 - U1); integrate the triangular density over the
    // collision set {|d| <= t} ∪ {ack_lo <= |d| <= ack_hi}.
    let mass = |a: f64, b: f64| triangular_cdf(b - x, window_s) - triangular_cdf(a - x, window_s);
    mass(-t, t) + mass(ack_lo, ack_hi) + mass(-ack_hi, -ack_lo)
}

/// Probability that a retransmission after a two-frame collision collides
/// again. The first-collision offset has density `∝ e^{-r|x|}` on `[-T, T]`
/// with `T` the frame duration; both motes pick the same channel with
/// probability `1/F`.
pub fn p_recollide(
    r: f64,
    num_channels: usize,
    airtime: &Airtime,
    ack_delay_1_s: f64,
    window_s: f64,
    quad: &Integrator,
) -> Result<f64> {
    if num_channels == 0 || !(window_s > 0.0) {
        return Err(Error::domain(
            "re-collision needs at least one channel and a positive retry window",
        ));
    }
    let t = airtime.data_frame_s;
    let denom = if r > 0.0 {
        2.0 * (-(-r * t).exp_m1()) / r
    } else {
        2.0 * t
    };
    let mut breaks = vec![0.0];
    let edges = [t, t + ack_delay_1_s, t + ack_delay_1_s + airtime.ack_s];
    for s in edges.iter().flat_map(|&e| [e, -e]) {
        breaks.extend([s - window_s, s, s + window_s]);
    }
    let quad = quad.with_tolerance(RECOLLIDE_TOLERANCE);
    let num = quad.integrate(-t, t, &breaks, |x| {
        (-r * x.abs()).exp() * recollide_given_offset(x, airtime, ack_delay_1_s, window_s)
    })?;
    Ok((num / denom / num_channels as f64).clamp(0.0, 1.0))
}

/// Data success of a retransmission that follows a collision.
///
/// Conditioning on the tagged mote having lost the collision divides by
/// `1 - W^GW`; when capture is certain that event is impossible and
/// [`Error::Domain`] is returned.
pub fn p_data_retry(p_data: f64, capture: &CaptureRow, p_recollide: f64) -> Result<f64> {
    let lost = 1.0 - capture.w_gw_pair;
    if lost <= f64::EPSILON {
        return Err(Error::domain(
            "capture is certain; retransmissions after a collision never happen",
        ));
    }
    Ok(((capture.w_one + capture.w_both * (1.0 - p_recollide)) / lost * p_data).clamp(0.0, 1.0))
}

/// Probability that the mote generates no new frame before its
/// retransmission starts, averaged over the uniform retry delay.
pub fn p_gen_quiet(
    load_fps: f64,
    num_motes: usize,
    t_data: f64,
    ack_delay_2_s: f64,
    t_ack0: f64,
    window_s: f64,
) -> f64 {
    let a = load_fps / num_motes as f64;
    if a <= 0.0 {
        return 1.0;
    }
    let fixed = t_data + ack_delay_2_s + t_ack0 + 1.0;
    (-a * fixed).exp() * (-(-a * window_s).exp_m1()) / (a * window_s)
}

/// Share of attempts that are first attempts: the inverse of the expected
/// number of attempts per frame with at most `retry_limit` retries.
pub fn p_first_attempt(
    p_success_first: f64,
    p_success_retry: f64,
    p_gen_quiet: f64,
    retry_limit: u32,
) -> f64 {
    let q = (1.0 - p_success_retry) * p_gen_quiet;
    let series: f64 = (0..=retry_limit).map(|k| q.powi(k as i32)).sum();
    1.0 / (1.0 + (1.0 - p_success_first) * p_gen_quiet * series)
}

/// Mean retransmission cycle `T_data + T2 + T_ack0 + 1 + W/2` of each rate.
pub fn retry_cycles_s(config: &NetworkConfig) -> Vec<f64> {
    let t_ack0 = config.plan.ack2_airtime_s();
    config
        .plan
        .bands
        .iter()
        .map(|b| {
            b.airtime.data_frame_s
                + config.ack_delay_2_s
                + t_ack0
                + 1.0
                + config.retry_window_s / 2.0
        })
        .collect()
}

/// Load beyond which retransmissions routinely meet fresh frames.
pub fn capacity(config: &NetworkConfig) -> f64 {
    let mean: f64 = config
        .plan
        .bands
        .iter()
        .zip(retry_cycles_s(config))
        .map(|(b, c)| b.usage_prob * c)
        .sum();
    config.num_channels as f64 / mean
}

/// Model outputs for one data rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOutcome {
    pub rate: usize,
    pub usage_prob: f64,
    pub r_i: f64,
    pub p_data: f64,
    pub p_data_residual: f64,
    pub p_ack1: f64,
    pub p_ack2: f64,
    pub p_ack: f64,
    pub p_success_first: f64,
    pub p_recollide: f64,
    pub p_data_retry: f64,
    pub p_success_retry: f64,
    pub p_gen_quiet: f64,
    pub p_first: f64,
    /// Capture was certain, so the retry data success fell back to `p_data`.
    pub degenerate_capture: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub load_fps: f64,
    pub rates: Vec<RateOutcome>,
    pub p_success: f64,
    pub per: f64,
    pub capacity_fps: f64,
    /// The load exceeds the capacity bound, outside the model's validity.
    pub beyond_capacity: bool,
}

impl ModelReport {
    /// Writes one row per rate and a trailing aggregate row.
    pub fn write_csv<W: std::io::Write>(&self, out: &mut csv::Writer<W>) -> csv::Result<()> {
        for r in &self.rates {
            out.write_record([
                fmt(self.load_fps),
                r.rate.to_string(),
                fmt(r.usage_prob),
                fmt(r.r_i),
                fmt(r.p_data),
                fmt(r.p_ack1),
                fmt(r.p_ack2),
                fmt(r.p_ack),
                fmt(r.p_success_first),
                fmt(r.p_recollide),
                fmt(r.p_data_retry),
                fmt(r.p_success_retry),
                fmt(r.p_gen_quiet),
                fmt(r.p_first),
                String::new(),
                String::new(),
            ])?;
        }
        let mut agg = vec![fmt(self.load_fps), "all".to_string()];
        agg.extend(std::iter::repeat_n(String::new(), 12));
        agg.extend([fmt(self.p_success), fmt(self.per)]);
        out.write_record(agg)
    }

    pub const CSV_HEADER: [&'static str; 16] = [
        "lambda_fps",
        "rate",
        "p_i",
        "r_i",
        "p_data",
        "p_ack1",
        "p_ack2",
        "p_ack",
        "p_success_first",
        "p_recollide",
        "p_data_retry",
        "p_success_retry",
        "p_gen_quiet",
        "p_first",
        "p_success",
        "per",
    ];
}

fn fmt(v: f64) -> String {
    crate::sweep::format_sig(v)
}

/// Runs the full per-rate pipeline and aggregates PER.
pub fn evaluate(config: &NetworkConfig) -> Result<ModelReport> {
    config.validate()?;
    let quad = Integrator::new(QuadratureSpec {
        tolerance: RECOLLIDE_TOLERANCE,
        ..config.quadrature
    })?;
    let lambda = config.load_fps;
    let f = config.num_channels;
    let n = config.num_motes;
    let plan = &config.plan;
    let t_ack0 = plan.ack2_airtime_s();

    let loads: Vec<f64> = plan
        .bands
        .iter()
        .map(|b| lambda * b.usage_prob / f as f64)
        .collect();
    let fixed_points = plan
        .bands
        .iter()
        .zip(&config.capture.rows)
        .zip(&loads)
        .enumerate()
        .map(|(i, ((band, row), &r))| {
            solve_p_data(r, &band.airtime, row, n).map_err(|e| e.at_rate(i))
        })
        .collect::<Result<Vec<_>>>()?;
    let p_data_all: Vec<f64> = fixed_points.iter().map(|fp| fp.value).collect();

    let mut rates = Vec::with_capacity(plan.rate_count());
    for (i, band) in plan.bands.iter().enumerate() {
        let row = &config.capture.rows[i];
        let r = loads[i];
        let airtime = &band.airtime;
        let p_data = p_data_all[i];
        let a1 = p_ack1(r, airtime, config.ack_delay_1_s, row, n);
        let a2 = p_ack2(i, lambda, f, plan, &p_data_all);
        let ack = p_ack(a1, a2);
        let ps1 = p_success_first(p_data, ack);
        let pc = p_recollide(
            r,
            f,
            airtime,
            config.ack_delay_1_s,
            config.retry_window_s,
            &quad,
        )
        .map_err(|e| e.at_rate(i))?;
        let (pd_re, degenerate) = match p_data_retry(p_data, row, pc) {
            Ok(v) => (v, false),
            Err(Error::Domain(_)) => (p_data, true),
            Err(e) => return Err(e.at_rate(i)),
        };
        let ps_re = p_success_first(pd_re, ack);
        let pg = p_gen_quiet(
            lambda,
            n,
            airtime.data_frame_s,
            config.ack_delay_2_s,
            t_ack0,
            config.retry_window_s,
        );
        let p1 = p_first_attempt(ps1, ps_re, pg, config.retry_limit);
        rates.push(RateOutcome {
            rate: i,
            usage_prob: band.usage_prob,
            r_i: r,
            p_data,
            p_data_residual: fixed_points[i].residual,
            p_ack1: a1,
            p_ack2: a2,
            p_ack: ack,
            p_success_first: ps1,
            p_recollide: pc,
            p_data_retry: pd_re,
            p_success_retry: ps_re,
            p_gen_quiet: pg,
            p_first: p1,
            degenerate_capture: degenerate,
        });
    }

    let p_success: f64 = rates
        .iter()
        .map(|o| {
            o.usage_prob * (o.p_first * o.p_success_first + (1.0 - o.p_first) * o.p_success_retry)
        })
        .sum::<f64>()
        .clamp(0.0, 1.0);
    let capacity_fps = capacity(config);
    Ok(ModelReport {
        load_fps: lambda,
        rates,
        p_success,
        per: 1.0 - p_success,
        capacity_fps,
        beyond_capacity: lambda > capacity_fps,
    })
}
