//! Scenario parameters and the validated network description built from them.

use serde::{Deserialize, Serialize};

use crate::airtime::{build_airtimes, eu868_rates, RadioParams};
use crate::error::{Error, Result};
use crate::geometry::{
    build_capture_table, CaptureTable, CoChannelRejection, PropagationModel, RatePlan,
};
use crate::quadrature::{Integrator, QuadratureSpec};

/// Per-SF 125 kHz receiver sensitivities for SF12..SF7.
pub const EU868_SENSITIVITY_DBM: [f64; 6] = [-137.0, -134.5, -132.0, -129.0, -126.0, -123.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropagationParams {
    pub tx_power_mote_dbm: f64,
    pub tx_power_gw_dbm: f64,
    pub carrier_freq_mhz: f64,
    pub gw_antenna_height_m: f64,
    pub mote_antenna_height_m: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            tx_power_mote_dbm: 14.0,
            tx_power_gw_dbm: 14.0,
            carrier_freq_mhz: 868.0,
            gw_antenna_height_m: 30.0,
            mote_antenna_height_m: 1.5,
        }
    }
}

/// Raw network parameters as they appear in a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub num_motes: usize,
    pub num_channels: usize,
    pub load_fps: f64,
    pub retry_limit: u32,
    pub ack_delay_1_s: f64,
    /// Defaults to `ack_delay_1_s + 1`.
    pub ack_delay_2_s: Option<f64>,
    pub retry_window_s: f64,
    pub cr_db: CoChannelRejection,
    /// PHY payload of a data frame.
    pub payload_bytes: usize,
    /// PHY payload of an ACK: empty FRMPayload plus the MAC header.
    pub ack_payload_bytes: usize,
    pub rates: Vec<RadioParams>,
    /// Lower power bound of each rate, rate 0 first.
    pub sensitivity_dbm: Vec<f64>,
    pub propagation: PropagationParams,
    pub cell_radius_m: Option<f64>,
    pub min_distance_m: f64,
    pub quadrature: QuadratureSpec,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            num_motes: 1000,
            num_channels: 3,
            load_fps: 0.0,
            retry_limit: 7,
            ack_delay_1_s: 1.0,
            ack_delay_2_s: None,
            retry_window_s: 2.0,
            cr_db: CoChannelRejection::Db(0.0),
            payload_bytes: 51,
            ack_payload_bytes: 13,
            rates: eu868_rates(),
            sensitivity_dbm: EU868_SENSITIVITY_DBM.to_vec(),
            propagation: PropagationParams::default(),
            cell_radius_m: None,
            min_distance_m: 1.0,
            quadrature: QuadratureSpec::default(),
        }
    }
}

/// Complete, validated scenario: counts, timers, rate plan and capture table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub num_motes: usize,
    pub num_channels: usize,
    pub load_fps: f64,
    pub retry_limit: u32,
    pub ack_delay_1_s: f64,
    pub ack_delay_2_s: f64,
    pub retry_window_s: f64,
    pub co_channel_rejection: CoChannelRejection,
    pub payload_bytes: usize,
    pub ack_payload_bytes: usize,
    pub propagation: PropagationModel,
    pub plan: RatePlan,
    pub capture: CaptureTable,
    pub quadrature: QuadratureSpec,
}

impl NetworkConfig {
    pub fn from_params(p: &NetworkParams) -> Result<Self> {
        if let CoChannelRejection::Db(v) = p.cr_db {
            if v < 0.0 {
                return Err(Error::config(format!("cr_db = {v} must be non-negative")));
            }
        }
        let pp = &p.propagation;
        let propagation = PropagationModel::okumura_hata(
            pp.tx_power_mote_dbm,
            pp.tx_power_gw_dbm,
            pp.carrier_freq_mhz,
            pp.gw_antenna_height_m,
            pp.mote_antenna_height_m,
        )?;
        let airtimes = build_airtimes(&p.rates, p.payload_bytes, p.ack_payload_bytes)?;
        let plan = RatePlan::build(
            &propagation,
            &p.sensitivity_dbm,
            &airtimes,
            p.cell_radius_m,
            p.min_distance_m,
        )?;
        let quad = Integrator::new(p.quadrature)?;
        let capture = build_capture_table(&plan, &propagation, p.cr_db, &quad)?;
        let config = NetworkConfig {
            num_motes: p.num_motes,
            num_channels: p.num_channels,
            load_fps: p.load_fps,
            retry_limit: p.retry_limit,
            ack_delay_1_s: p.ack_delay_1_s,
            ack_delay_2_s: p.ack_delay_2_s.unwrap_or(p.ack_delay_1_s + 1.0),
            retry_window_s: p.retry_window_s,
            co_channel_rejection: p.cr_db,
            payload_bytes: p.payload_bytes,
            ack_payload_bytes: p.ack_payload_bytes,
            propagation,
            plan,
            capture,
            quadrature: p.quadrature,
        };
        config.validate()?;
        Ok(config)
    }

    /// EU868 defaults with the given population, channels and margin.
    pub fn eu_default(
        num_motes: usize,
        num_channels: usize,
        cr: CoChannelRejection,
    ) -> Result<Self> {
        Self::from_params(&NetworkParams {
            num_motes,
            num_channels,
            cr_db: cr,
            ..NetworkParams::default()
        })
    }

    pub fn with_load(&self, load_fps: f64) -> Self {
        NetworkConfig {
            load_fps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_motes == 0 {
            return Err(Error::config("num_motes must be at least 1"));
        }
        if self.num_channels == 0 {
            return Err(Error::config("num_channels must be at least 1"));
        }
        if !(self.load_fps >= 0.0 && self.load_fps.is_finite()) {
            return Err(Error::config(format!(
                "load {} fps must be finite and non-negative",
                self.load_fps
            )));
        }
        if !(self.retry_window_s > 0.0 && self.retry_window_s.is_finite()) {
            return Err(Error::config("retry_window_s must be positive"));
        }
        if !(self.ack_delay_1_s > 0.0
            && self.ack_delay_2_s >= self.ack_delay_1_s
            && self.ack_delay_2_s.is_finite())
        {
            return Err(Error::config("ACK delays must satisfy 0 < T1 <= T2"));
        }
        if self.capture.rows.len() != self.plan.rate_count() {
            return Err(Error::config(
                "capture table and rate plan disagree on the number of rates",
            ));
        }
        Ok(())
    }
}
