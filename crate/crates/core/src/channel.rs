//! Air-to-ground channel: free-space pathloss with LoS/NLoS excess loss, ULA
//! steering vector, Rician small-scale fading, and the composite broadcast
//! (single antenna) and MISO (full array) channels.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Point3, UrbanMap};
use crate::seed::combine;
use crate::units::{db_to_linear, dbm_to_watts, loss_db_to_amplitude, SPEED_OF_LIGHT};

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Carrier frequency (Hz).
    pub carrier_hz: f64,
    /// Excess loss of a LoS link (dB).
    pub eta_los_db: f64,
    /// Excess loss of an NLoS link (dB).
    pub eta_nlos_db: f64,
    /// Rician factor (dB).
    pub rician_factor_db: f64,
    /// ULA elements.
    pub num_antennas: usize,
    pub noise_dbm: f64,
    pub tx_power_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            eta_los_db: 0.1,
            eta_nlos_db: 21.0,
            rician_factor_db: 15.0,
            num_antennas: 12,
            noise_dbm: -75.0,
            tx_power_dbm: 10.0,
        }
    }
}

impl ChannelParams {
    pub fn rician_linear(&self) -> f64 {
        db_to_linear(self.rician_factor_db)
    }

    pub fn tx_power_watts(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.carrier_hz > 0.0) {
            return Err("carrier_hz must be positive".into());
        }
        if self.eta_los_db > self.eta_nlos_db {
            return Err("eta_los_db must not exceed eta_nlos_db".into());
        }
        if self.num_antennas == 0 {
            return Err("num_antennas must be at least 1".into());
        }
        Ok(())
    }
}

/// Composite channel from the array to one terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    pub gains: Vec<Complex64>,
    pub pathloss_db: f64,
    pub los: bool,
}

/// Friis free-space pathloss in dB.
pub fn free_space_pathloss(distance: f64, carrier_hz: f64) -> Result<f64, ChannelError> {
    if !(distance > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance));
    }
    let k = 4.0 * std::f64::consts::PI / SPEED_OF_LIGHT;
    Ok(20.0 * distance.log10() + 20.0 * carrier_hz.log10() + 20.0 * k.log10())
}

/// Large-scale loss between the UAV and terminal `gt_index`; returns
/// `(loss_db, los)`.
pub fn pathloss(
    uav: &Point3,
    gt_index: usize,
    map: &UrbanMap,
    params: &ChannelParams,
) -> Result<(f64, bool), ChannelError> {
    let gt = &map.gts[gt_index];
    let fspl = free_space_pathloss(uav.distance(gt), params.carrier_hz)?;
    let los = map.is_los(uav, gt);
    let excess = if los { params.eta_los_db } else { params.eta_nlos_db };
    Ok((fspl + excess, los))
}

/// Direction cosine of the terminal against the array axis `[1, 0, 0]`.
pub fn los_phase(uav: &Point3, gt: &Point3) -> f64 {
    let d = uav.distance(gt);
    ((gt.x - uav.x) / d).clamp(-1.0, 1.0)
}

pub fn steering_vector(theta_bar: f64, num_antennas: usize) -> Vec<Complex64> {
    (0..num_antennas)
        .map(|m| Complex64::from_polar(1.0, std::f64::consts::PI * m as f64 * theta_bar))
        .collect()
}

/// Circularly symmetric complex Gaussian with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rician mixture of the steering vector and an i.i.d. `CN(0, 1)` vector.
pub fn small_scale<R: Rng + ?Sized>(
    theta_bar: f64,
    params: &ChannelParams,
    rng: &mut R,
) -> Vec<Complex64> {
    let g = params.rician_linear();
    let (los_w, scatter_w) = if g.is_infinite() {
        (1.0, 0.0)
    } else {
        ((g / (g + 1.0)).sqrt(), (1.0 / (g + 1.0)).sqrt())
    };
    steering_vector(theta_bar, params.num_antennas)
        .into_iter()
        .map(|a| {
            let scatter = complex_normal(rng);
            a * los_w + scatter * scatter_w
        })
        .collect()
}

/// Single-antenna broadcast gain: the reference element of a fresh draw.
pub fn broadcast_channel<R: Rng + ?Sized>(
    uav: &Point3,
    gt_index: usize,
    map: &UrbanMap,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<Complex64, ChannelError> {
    let (loss, _) = pathloss(uav, gt_index, map, params)?;
    let theta = los_phase(uav, &map.gts[gt_index]);
    let g = small_scale(theta, params, rng);
    Ok(g[0] * loss_db_to_amplitude(loss))
}

pub fn broadcast_snr(gain: Complex64, params: &ChannelParams) -> f64 {
    params.tx_power_watts() * gain.norm_sqr() / params.noise_watts()
}

pub fn miso_channel<R: Rng + ?Sized>(
    uav: &Point3,
    gt_index: usize,
    map: &UrbanMap,
    params: &ChannelParams,
    rng: &mut R,
) -> Result<ChannelVector, ChannelError> {
    let (loss, los) = pathloss(uav, gt_index, map, params)?;
    let theta = los_phase(uav, &map.gts[gt_index]);
    let amp = loss_db_to_amplitude(loss);
    let gains = small_scale(theta, params, rng)
        .into_iter()
        .map(|g| g * amp)
        .collect();
    Ok(ChannelVector {
        gains,
        pathloss_db: loss,
        los,
    })
}

/// Which part of a time step a fading draw belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Initial = 0,
    Broadcast = 1,
    Transmission = 2,
    Retry = 3,
}

/// Keyed fading streams: every draw is a pure function of
/// `(seed, step, stage, terminal)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FadingSource {
    pub seed: u64,
}

impl FadingSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn rng(&self, step: u64, stage: Stage, gt: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(combine(self.seed, &[step, stage as u64, gt as u64]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvParams;

    fn open_map(gts: Vec<Point3>) -> UrbanMap {
        UrbanMap {
            params: EnvParams::default(),
            seed: 0,
            buildings: vec![],
            gts,
        }
    }

    // Frozen from an independent evaluation of 20log10(d)+20log10(f)+20log10(4π/c).
    const FSPL_100M_2GHZ: f64 = 78.46816462347635;

    #[test]
    fn friis_reference_values() {
        let v = free_space_pathloss(100.0, 2e9).unwrap();
        assert!((v - FSPL_100M_2GHZ).abs() < 1e-9);
        assert!((v - 78.46).abs() <= 0.01);
        let f0 = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI);
        assert!(free_space_pathloss(1.0, f0).unwrap().abs() < 1e-9);
        let d1 = free_space_pathloss(37.0, 2e9).unwrap();
        let d2 = free_space_pathloss(74.0, 2e9).unwrap();
        assert!((d2 - d1 - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn fspl_domain_error() {
        assert!(free_space_pathloss(0.0, 2e9).is_err());
        assert!(free_space_pathloss(-1.0, 2e9).is_err());
    }

    #[test]
    fn los_and_nlos_pathloss() {
        let params = ChannelParams::default();
        let map = open_map(vec![Point3::ground(100.0, 0.0)]);
        let uav = Point3::new(0.0, 0.0, 0.0);
        let (pl, los) = pathloss(&uav, 0, &map, &params).unwrap();
        assert!(los);
        assert!((pl - (FSPL_100M_2GHZ + 0.1)).abs() < 1e-9);

        let mut blocked = map.clone();
        blocked.buildings.push(crate::env::Building {
            center: [50.0, 0.0],
            half_extent: [5.0, 5.0],
            height: 30.0,
        });
        let uav = Point3::new(0.0, 0.0, 10.0);
        let (open_pl, _) = pathloss(&uav, 0, &map, &params).unwrap();
        let (pl2, los2) = pathloss(&uav, 0, &blocked, &params).unwrap();
        assert!(!los2);
        assert!((pl2 - open_pl - 20.9).abs() < 1e-9);
    }

    #[test]
    fn coincident_positions_error() {
        let map = open_map(vec![Point3::ground(5.0, 5.0)]);
        let params = ChannelParams::default();
        assert!(pathloss(&Point3::ground(5.0, 5.0), 0, &map, &params).is_err());
    }

    #[test]
    fn phase_examples() {
        let v = los_phase(&Point3::new(0.0, 0.0, 100.0), &Point3::ground(100.0, 0.0));
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(los_phase(&Point3::new(3.0, 4.0, 80.0), &Point3::ground(3.0, 4.0)), 0.0);
    }

    #[test]
    fn steering_examples() {
        assert!(steering_vector(0.0, 12).iter().all(|c| (*c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let s = steering_vector(0.5, 12);
        assert_eq!(s.len(), 12);
        assert!((s[2] - Complex64::new(-1.0, 0.0)).norm() < 1e-12);
        assert!(s.iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rician_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inf = ChannelParams {
            rician_factor_db: f64::INFINITY,
            ..Default::default()
        };
        let g = small_scale(0.3, &inf, &mut rng);
        let s = steering_vector(0.3, 12);
        assert!(g.iter().zip(&s).all(|(a, b)| (a - b).norm() < 1e-15));

        // G = 0 linear: pure scattered component, identical to the raw CN draws.
        let zero = ChannelParams {
            rician_factor_db: f64::NEG_INFINITY,
            ..Default::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(2);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let g = small_scale(0.3, &zero, &mut r1);
        for gi in g {
            assert!((gi - complex_normal(&mut r2)).norm() < 1e-15);
        }
    }

    #[test]
    fn broadcast_scaling_and_snr() {
        // |h| = 10^(−80/20)·|g| with g = 1.
        assert!((loss_db_to_amplitude(80.0) - 1e-4).abs() < 1e-18);
        let params = ChannelParams::default();
        let snr = broadcast_snr(Complex64::new(1e-4, 0.0), &params);
        // 10^(85/10)·10⁻⁸ = 3.1623 (5 dB).
        assert!((snr - 3.1622776601683795).abs() < 1e-9);
    }

    #[test]
    fn draws_are_reproducible_per_key() {
        let map = open_map(vec![Point3::ground(100.0, 40.0)]);
        let params = ChannelParams::default();
        let src = FadingSource::new(42);
        let uav = Point3::new(10.0, 20.0, 90.0);
        let a = broadcast_channel(&uav, 0, &map, &params, &mut src.rng(3, Stage::Broadcast, 0)).unwrap();
        let b = broadcast_channel(&uav, 0, &map, &params, &mut src.rng(3, Stage::Broadcast, 0)).unwrap();
        let c = broadcast_channel(&uav, 0, &map, &params, &mut src.rng(3, Stage::Transmission, 0)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn miso_power_concentrates() {
        let map = open_map(vec![Point3::ground(120.0, 40.0)]);
        let params = ChannelParams::default();
        let uav = Point3::new(10.0, 20.0, 90.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 4000;
        let mut acc = 0.0;
        let mut pl = 0.0;
        for _ in 0..n {
            let ch = miso_channel(&uav, 0, &map, &params, &mut rng).unwrap();
            acc += ch.gains.iter().map(|g| g.norm_sqr()).sum::<f64>();
            pl = ch.pathloss_db;
        }
        let expected = 12.0 * 10f64.powf(-pl / 10.0);
        assert!(((acc / n as f64) / expected - 1.0).abs() < 0.03);
    }
}
