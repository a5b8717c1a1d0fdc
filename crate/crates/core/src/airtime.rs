//! LoRa time-on-air for data frames and acknowledgements.
//!
//! Uses the usual Semtech symbol-count arithmetic: the preamble lasts
//! `n_preamble + 4.25` symbols and the payload occupies
//! `8 + max(ceil((8PL - 4SF + 28 + 16CRC - 20IH) / (4(SF - 2DE))) * CR, 0)`
//! symbols, where `CR` is the coding-rate denominator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Modulation parameters of one data rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioParams {
    pub spreading_factor: u8,
    pub bandwidth_hz: f64,
    /// 5..=8 for coding rates 4/5..4/8.
    pub coding_rate_denominator: u8,
    pub preamble_symbols: u16,
    pub explicit_header: bool,
    pub low_data_rate_optimize: bool,
    pub crc_on: bool,
}

impl RadioParams {
    /// EU868 125 kHz parameters for a spreading factor. LDRO is switched on
    /// for SF11 and SF12, where the symbol time exceeds 16 ms.
    pub fn eu868(spreading_factor: u8) -> Self {
        RadioParams {
            spreading_factor,
            bandwidth_hz: 125_000.0,
            coding_rate_denominator: 5,
            preamble_symbols: 8,
            explicit_header: true,
            low_data_rate_optimize: spreading_factor >= 11,
            crc_on: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(7..=12).contains(&self.spreading_factor) {
            return Err(Error::config(format!(
                "spreading factor {} outside 7..=12",
                self.spreading_factor
            )));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::config(format!(
                "bandwidth {} Hz must be positive",
                self.bandwidth_hz
            )));
        }
        if !(5..=8).contains(&self.coding_rate_denominator) {
            return Err(Error::config(format!(
                "coding rate denominator {} outside 5..=8",
                self.coding_rate_denominator
            )));
        }
        Ok(())
    }

    pub fn symbol_duration_s(&self) -> f64 {
        f64::from(1u32 << self.spreading_factor) / self.bandwidth_hz
    }
}

/// Default EU rate table: data rate 0..=5 is SF12..=SF7.
pub fn eu868_rates() -> Vec<RadioParams> {
    (7..=12).rev().map(RadioParams::eu868).collect()
}

/// Durations of a data frame and of an ACK at one data rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Airtime {
    pub data_frame_s: f64,
    pub ack_s: f64,
}

/// Time on air in seconds of a frame carrying `payload_bytes` of PHY payload.
pub fn time_on_air(params: &RadioParams, payload_bytes: usize) -> Result<f64> {
    params.validate()?;
    let sf = f64::from(params.spreading_factor);
    let t_sym = params.symbol_duration_s();
    let preamble = (f64::from(params.preamble_symbols) + 4.25) * t_sym;

    let de = if params.low_data_rate_optimize {
        1.0
    } else {
        0.0
    };
    let ih = if params.explicit_header { 0.0 } else { 1.0 };
    let crc = if params.crc_on { 1.0 } else { 0.0 };
    let numerator = 8.0 * payload_bytes as f64 - 4.0 * sf + 28.0 + 16.0 * crc - 20.0 * ih;
    let denominator = 4.0 * (sf - 2.0 * de);
    let blocks = (numerator / denominator).ceil().max(0.0);
    let payload_symbols = 8.0 + blocks * f64::from(params.coding_rate_denominator);

    Ok(preamble + payload_symbols * t_sym)
}

/// Airtimes for every data rate. ACKs are sent at the data rate they
/// acknowledge; `ack_payload_bytes` is the full PHY payload of an ACK.
pub fn build_airtimes(
    rate_params: &[RadioParams],
    payload_bytes: usize,
    ack_payload_bytes: usize,
) -> Result<Vec<Airtime>> {
    if rate_params.is_empty() {
        return Err(Error::config("rate table is empty"));
    }
    rate_params
        .iter()
        .map(|p| {
            Ok(Airtime {
                data_frame_s: time_on_air(p, payload_bytes)?,
                ack_s: time_on_air(p, ack_payload_bytes)?,
            })
        })
        .collect()
}
