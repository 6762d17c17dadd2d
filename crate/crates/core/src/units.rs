//! dB / dBm bookkeeping. Configuration is in logarithmic units, arithmetic is
//! linear; every conversion goes through here.

/// Speed of light used by the free-space pathloss (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Amplitude scaling for a loss given in dB: `10^(−loss/20)`.
pub fn loss_db_to_amplitude(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 20.0)
}
