//! Episodic UAV environment: movement, broadcast wake-up, serve-once
//! bookkeeping, ZF transmission with hover time, the merged pheromone state
//! and its shaped reward.
//!
//! One call to [`UavEnv::step`] runs
//! move → wake-up → serve filter → link budget → pheromone → reward, and
//! returns the next state in the `2K+4` layout
//! `[b_1..b_K, c_1..c_K, x, y, z, ζ]`.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    broadcast_channel, broadcast_snr, miso_channel, ChannelParams, FadingSource, Stage,
};
use crate::env::{Point3, UrbanMap};
use crate::precoding::{stack_rows, LinkBudget, LinkConfig, PrecodingError};
use crate::units::db_to_linear;

/// Slack allowed on the flight-box check; positions inside it are snapped.
const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("action out of range: {0:?}")]
    InvalidAction(Action),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("environment not reset")]
    NotReset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpConfig {
    /// Fixed flight time per step (s).
    pub flight_time: f64,
    /// Maximum cruising speed (m/s).
    pub max_speed: f64,
    /// Wake-up SNR threshold (dB).
    pub snr_threshold_db: f64,
    /// Pheromone captured per served terminal.
    pub kappa_cov: f64,
    /// Pheromone lost on a step without transmission.
    pub kappa_idle: f64,
    /// Extra pheromone lost when a move leaves the flight box.
    pub boundary_penalty: f64,
    pub max_steps: usize,
    pub zeta_init: f64,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            flight_time: 2.5,
            max_speed: 20.0,
            snr_threshold_db: 0.0,
            kappa_cov: 10.0,
            kappa_idle: 2.0,
            boundary_penalty: 20.0,
            max_steps: 200,
            zeta_init: 0.0,
        }
    }
}

/// Flight command for one step: speed, pitch from +z, heading from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub speed: f64,
    pub pitch: f64,
    pub heading: f64,
}

impl Action {
    pub fn hover() -> Self {
        Self {
            speed: 0.0,
            pitch: PI / 2.0,
            heading: 2.0 * PI,
        }
    }

    pub fn is_valid(&self, max_speed: f64) -> bool {
        (0.0..=max_speed).contains(&self.speed)
            && (0.0..=PI).contains(&self.pitch)
            && self.heading >= 0.0
            && self.heading <= 2.0 * PI
    }

    /// Uniformly random action over the whole action box.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_speed: f64) -> Self {
        Self {
            speed: rng.random::<f64>() * max_speed,
            pitch: rng.random::<f64>() * PI,
            heading: wrap_heading(rng.random::<f64>() * 2.0 * PI),
        }
    }
}

/// Maps any angle onto `(0, 2π]`.
pub fn wrap_heading(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t == 0.0 {
        2.0 * PI
    } else {
        t
    }
}

/// The flight box `[0, D]² × [z_min, z_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightBox {
    pub side: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl FlightBox {
    pub fn of(map: &UrbanMap) -> Self {
        Self {
            side: map.params.area_side,
            z_min: map.params.z_bounds[0],
            z_max: map.params.z_bounds[1],
        }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= -BOUNDS_TOL
            && p.x <= self.side + BOUNDS_TOL
            && p.y >= -BOUNDS_TOL
            && p.y <= self.side + BOUNDS_TOL
            && p.z >= self.z_min - BOUNDS_TOL
            && p.z <= self.z_max + BOUNDS_TOL
    }

    fn snap(&self, p: Point3) -> Point3 {
        Point3::new(
            p.x.clamp(0.0, self.side),
            p.y.clamp(0.0, self.side),
            p.z.clamp(self.z_min, self.z_max),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    /// Broadcast wake-up flags of the current step.
    pub wake: Vec<bool>,
    /// Serve-once flags.
    pub served: Vec<bool>,
    pub position: Point3,
    /// Merged pheromone.
    pub zeta: f64,
}

impl MdpState {
    pub fn dim(num_gts: usize) -> usize {
        2 * num_gts + 4
    }

    pub fn flatten(&self) -> Vec<f64> {
        let flag = |b: &bool| if *b { 1.0 } else { 0.0 };
        let mut v = Vec::with_capacity(Self::dim(self.wake.len()));
        v.extend(self.wake.iter().map(flag));
        v.extend(self.served.iter().map(flag));
        v.extend([self.position.x, self.position.y, self.position.z, self.zeta]);
        v
    }

    pub fn served_count(&self) -> usize {
        self.served.iter().filter(|c| **c).count()
    }

    pub fn all_served(&self) -> bool {
        self.served.iter().all(|c| *c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: MdpState,
    pub done: bool,
    /// All terminals served on this step.
    pub completed: bool,
    /// `δ_ft + δ_ht`.
    pub step_duration: f64,
    pub hover_time: f64,
    pub served_this_step: Vec<usize>,
    pub violated: bool,
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub position: Point3,
    pub action: Action,
    pub active: usize,
    pub flight_time: f64,
    pub hover_time: f64,
    pub zeta: f64,
    pub reward: f64,
    pub served_total: usize,
}

/// Applies one flight command. Moves that leave the flight box are
/// cancelled: the position is returned unchanged with `violated = true`.
pub fn move_uav(position: &Point3, action: &Action, flight_time: f64, bounds: &FlightBox) -> (Point3, bool) {
    let m = flight_time * action.speed;
    let (sp, cp) = action.pitch.sin_cos();
    let (sh, ch) = action.heading.sin_cos();
    let dest = Point3::new(
        position.x + m * sp * ch,
        position.y + m * sp * sh,
        position.z + m * cp,
    );
    if bounds.contains(&dest) {
        (bounds.snap(dest), false)
    } else {
        (*position, true)
    }
}

/// Broadcast-stage wake-up flags: `b_k = 1` iff the single-antenna SNR
/// reaches the threshold.
pub fn wake_up(
    position: &Point3,
    map: &UrbanMap,
    channel: &ChannelParams,
    threshold_db: f64,
    fading: &FadingSource,
    step: u64,
    stage: Stage,
) -> Vec<bool> {
    let threshold = db_to_linear(threshold_db);
    (0..map.num_gts())
        .map(|k| {
            let mut rng = fading.rng(step, stage, k);
            match broadcast_channel(position, k, map, channel, &mut rng) {
                Ok(h) => broadcast_snr(h, channel) >= threshold,
                // Coincident UAV and terminal: infinite SNR.
                Err(_) => true,
            }
        })
        .collect()
}

/// Serve-once filter: returns `(b̃, c)`.
pub fn update_served(wake: &[bool], served_prev: &[bool]) -> (Vec<bool>, Vec<bool>) {
    let fresh: Vec<bool> = wake.iter().zip(served_prev).map(|(b, c)| *b && !*c).collect();
    let served = served_prev.iter().zip(&fresh).map(|(c, f)| *c || *f).collect();
    (fresh, served)
}

/// `ζ_n = ζ_{n−1} + K_n·κ_cov − κ_dis − P_ob`.
pub fn pheromone_update(zeta_prev: f64, active: usize, kappa_cov: f64, kappa_dis: f64, penalty: f64) -> f64 {
    zeta_prev + active as f64 * kappa_cov - kappa_dis - penalty
}

/// Logistic reward `2/(1 + exp(−ζ/(K·κ_cov))) − 1`, in `(−1, 1)`.
pub fn shaped_reward(zeta: f64, num_gts: usize, kappa_cov: f64) -> f64 {
    2.0 / (1.0 + (-zeta / (num_gts as f64 * kappa_cov)).exp()) - 1.0
}

/// Mission completion time: total flight time plus total hover time.
pub fn mission_time(records: &[StepRecord]) -> f64 {
    let flight: f64 = records.iter().map(|r| r.flight_time).sum();
    let hover: f64 = records.iter().map(|r| r.hover_time).sum();
    flight + hover
}

/// Writes the trajectory log as CSV, one row per step.
pub fn write_trajectory_csv<W: Write>(mut out: W, strategy: &str, records: &[StepRecord]) -> std::io::Result<()> {
    writeln!(out, "strategy,n,x,y,z,speed,pitch,heading,active,hover_s,zeta,reward,served")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            strategy,
            r.n,
            r.position.x,
            r.position.y,
            r.position.z,
            r.action.speed,
            r.action.pitch,
            r.action.heading,
            r.active,
            r.hover_time,
            r.zeta,
            r.reward,
            r.served_total
        )?;
    }
    Ok(())
}

/// Outcome of one transmission stage.
#[derive(Debug, Clone, Default, PartialEq)]
struct Transmission {
    served: Vec<usize>,
    hover: f64,
}

/// A single UAV episode over an immutable map.
#[derive(Debug, Clone)]
pub struct UavEnv<'m> {
    map: &'m UrbanMap,
    channel: ChannelParams,
    link: LinkConfig,
    config: MdpConfig,
    bounds: FlightBox,
    fading: FadingSource,
    state: Option<MdpState>,
    step: usize,
    done: bool,
    records: Vec<StepRecord>,
}

impl<'m> UavEnv<'m> {
    pub fn new(map: &'m UrbanMap, channel: ChannelParams, link: LinkConfig, config: MdpConfig) -> Self {
        Self {
            bounds: FlightBox::of(map),
            map,
            channel,
            link,
            config,
            fading: FadingSource::new(0),
            state: None,
            step: 0,
            done: false,
            records: Vec::new(),
        }
    }

    pub fn map(&self) -> &'m UrbanMap {
        self.map
    }

    pub fn config(&self) -> &MdpConfig {
        &self.config
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    pub fn bounds(&self) -> FlightBox {
        self.bounds
    }

    pub fn num_gts(&self) -> usize {
        self.map.num_gts()
    }

    pub fn state_dim(&self) -> usize {
        MdpState::dim(self.num_gts())
    }

    /// Starts an episode at a uniformly random position.
    pub fn reset(&mut self, seed: u64) -> MdpState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = self.bounds;
        let start = Point3::new(
            rng.random::<f64>() * b.side,
            rng.random::<f64>() * b.side,
            b.z_min + rng.random::<f64>() * (b.z_max - b.z_min),
        );
        let fading_seed = rng.random::<u64>();
        self.start(start, fading_seed)
    }

    /// Starts an episode at a given position (baselines fix their start).
    pub fn reset_at(&mut self, start: Point3, seed: u64) -> MdpState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let _ = rng.random::<[f64; 3]>();
        let fading_seed = rng.random::<u64>();
        self.start(self.bounds.snap(start), fading_seed)
    }

    fn start(&mut self, start: Point3, fading_seed: u64) -> MdpState {
        self.fading = FadingSource::new(fading_seed);
        let k = self.num_gts();
        let wake = wake_up(
            &start,
            self.map,
            &self.channel,
            self.config.snr_threshold_db,
            &self.fading,
            0,
            Stage::Initial,
        );
        let state = MdpState {
            wake,
            served: vec![false; k],
            position: start,
            zeta: self.config.zeta_init,
        };
        self.state = Some(state.clone());
        self.step = 0;
        self.done = false;
        self.records.clear();
        state
    }

    pub fn state(&self) -> Option<&MdpState> {
        self.state.as_ref()
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn mission_time(&self) -> f64 {
        mission_time(&self.records)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, MdpError> {
        if !action.is_valid(self.config.max_speed) {
            return Err(MdpError::InvalidAction(action));
        }
        if self.done {
            return Err(MdpError::EpisodeFinished);
        }
        let state = self.state.as_ref().ok_or(MdpError::NotReset)?;
        let n = self.step;
        let cfg = &self.config;

        let (position, violated) = move_uav(&state.position, &action, cfg.flight_time, &self.bounds);
        let wake = wake_up(
            &position,
            self.map,
            &self.channel,
            cfg.snr_threshold_db,
            &self.fading,
            n as u64,
            Stage::Broadcast,
        );
        let (fresh, _) = update_served(&wake, &state.served);
        let candidates: Vec<usize> = fresh
            .iter()
            .enumerate()
            .filter_map(|(k, f)| f.then_some(k))
            .collect();
        let tx = self.transmit(&position, candidates, n as u64);

        let mut served = state.served.clone();
        for &k in &tx.served {
            served[k] = true;
        }
        let kappa_dis = if tx.served.is_empty() { cfg.kappa_idle } else { tx.hover };
        let penalty = if violated { cfg.boundary_penalty } else { 0.0 };
        let zeta = pheromone_update(state.zeta, tx.served.len(), cfg.kappa_cov, kappa_dis, penalty);
        let num_gts = served.len();
        let mut reward = shaped_reward(zeta, num_gts, cfg.kappa_cov);
        let completed = served.iter().all(|c| *c);
        if completed {
            reward += (cfg.max_steps - n) as f64;
        }
        let done = completed || n + 1 >= cfg.max_steps;

        let next_state = MdpState {
            wake,
            served,
            position,
            zeta,
        };
        self.records.push(StepRecord {
            n,
            position,
            action,
            active: tx.served.len(),
            flight_time: cfg.flight_time,
            hover_time: tx.hover,
            zeta,
            reward,
            served_total: next_state.served_count(),
        });
        self.state = Some(next_state.clone());
        self.step += 1;
        self.done = done;
        Ok(StepOutcome {
            reward,
            next_state,
            done,
            completed,
            step_duration: cfg.flight_time + tx.hover,
            hover_time: tx.hover,
            served_this_step: tx.served,
            violated,
        })
    }

    /// ZF transmission to the fresh terminals. More than `N_t` candidates:
    /// the `N_t` closest are served. Degenerate channels get one redraw,
    /// then the most correlated user is deferred until the rest precode.
    fn transmit(&self, position: &Point3, mut users: Vec<usize>, step: u64) -> Transmission {
        let nt = self.channel.num_antennas;
        if users.len() > nt {
            users.sort_by(|&a, &b| {
                let da = position.distance(&self.map.gts[a]);
                let db = position.distance(&self.map.gts[b]);
                da.total_cmp(&db).then(a.cmp(&b))
            });
            users.truncate(nt);
            users.sort_unstable();
        }
        let mut stage = Stage::Transmission;
        while !users.is_empty() {
            let rows: Vec<_> = users
                .iter()
                .map(|&k| {
                    let mut rng = self.fading.rng(step, stage, k);
                    miso_channel(position, k, self.map, &self.channel, &mut rng)
                        .map(|c| c.gains)
                        .unwrap_or_else(|_| vec![Default::default(); nt])
                })
                .collect();
            let h = stack_rows(&rows);
            match LinkBudget::compute(h, self.channel.tx_power_watts(), self.channel.noise_watts(), &self.link) {
                Ok(budget) => {
                    return Transmission {
                        served: users,
                        hover: budget.hover_time,
                    }
                }
                Err(PrecodingError::Degenerate { .. }) if stage == Stage::Transmission => {
                    stage = Stage::Retry;
                }
                Err(_) => {
                    let drop = most_correlated(&rows);
                    users.remove(drop);
                }
            }
        }
        Transmission::default()
    }
}

/// Index of the row to defer: the weaker member of the most correlated pair.
fn most_correlated(rows: &[Vec<num_complex::Complex64>]) -> usize {
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    if rows.len() < 2 {
        return 0;
    }
    let mut worst = (0, f64::NEG_INFINITY);
    for i in 0..rows.len() {
        if !(norms[i] > 0.0) {
            return i;
        }
        for j in (i + 1)..rows.len() {
            let inner: num_complex::Complex64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b.conj()).sum();
            let corr = inner.norm() / (norms[i] * norms[j]);
            if corr > worst.1 {
                worst = (if norms[i] < norms[j] { i } else { j }, corr);
            }
        }
    }
    worst.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, EnvParams};

    fn open_map(gts: Vec<Point3>, side: f64) -> UrbanMap {
        UrbanMap {
            params: EnvParams {
                area_side: side,
                num_gts: gts.len(),
                ..EnvParams::default()
            },
            seed: 0,
            buildings: vec![],
            gts,
        }
    }

    fn bounds() -> FlightBox {
        FlightBox {
            side: 1000.0,
            z_min: 75.0,
            z_max: 125.0,
        }
    }

    #[test]
    fn vertical_climb() {
        let a = Action { speed: 20.0, pitch: 0.0, heading: 1.0 };
        let (p, v) = move_uav(&Point3::new(10.0, 20.0, 75.0), &a, 2.5, &bounds());
        assert!(!v);
        assert_eq!((p.x, p.y), (10.0, 20.0));
        assert!((p.z - 125.0).abs() < 1e-12);
    }

    #[test]
    fn horizontal_north() {
        let a = Action { speed: 20.0, pitch: PI / 2.0, heading: PI / 2.0 };
        let (p, v) = move_uav(&Point3::new(100.0, 100.0, 100.0), &a, 2.5, &bounds());
        assert!(!v);
        assert!((p.x - 100.0).abs() < 1e-12);
        assert!((p.y - 150.0).abs() < 1e-12);
        assert!((p.z - 100.0).abs() < 1e-12);
    }

    #[test]
    fn leaving_the_box_is_cancelled() {
        let a = Action { speed: 20.0, pitch: 0.0, heading: 1.0 };
        let start = Point3::new(10.0, 20.0, 100.0);
        assert_eq!(move_uav(&start, &a, 2.5, &bounds()), (start, true));
    }

    #[test]
    fn serve_once_rule() {
        let (f, c) = update_served(&[true, true], &[false, true]);
        assert_eq!(f, vec![true, false]);
        assert_eq!(c, vec![true, true]);
        let (f, c2) = update_served(&[false, false], &c);
        assert_eq!(f, vec![false, false]);
        assert_eq!(c2, c);
        let (f2, _) = update_served(&[true, true], &c);
        assert_eq!(f2, vec![false, false]);
    }

    #[test]
    fn pheromone_examples() {
        assert_eq!(pheromone_update(0.0, 2, 10.0, 4.0, 0.0), 16.0);
        assert_eq!(pheromone_update(5.0, 0, 10.0, 2.0, 0.0), 3.0);
        assert_eq!(pheromone_update(5.0, 0, 10.0, 2.0, 20.0), -17.0);
    }

    #[test]
    fn shaped_reward_examples() {
        assert_eq!(shaped_reward(0.0, 5, 10.0), 0.0);
        assert!((shaped_reward(50.0, 5, 10.0) - 0.4621171572600098).abs() < 1e-12);
        assert!(shaped_reward(1e6, 5, 10.0) <= 1.0 && shaped_reward(1e6, 5, 10.0) > 0.999);
        assert!(shaped_reward(-1e6, 5, 10.0) >= -1.0 && shaped_reward(-1e6, 5, 10.0) < -0.999);
    }

    #[test]
    fn wake_up_threshold_extremes() {
        let map = generate_map(&EnvParams { num_gts: 6, ..Default::default() }, 1, 2).unwrap();
        let ch = ChannelParams::default();
        let src = FadingSource::new(3);
        let p = Point3::new(500.0, 500.0, 100.0);
        assert!(wake_up(&p, &map, &ch, f64::NEG_INFINITY, &src, 0, Stage::Broadcast).iter().all(|b| *b));
        assert!(wake_up(&p, &map, &ch, f64::INFINITY, &src, 0, Stage::Broadcast).iter().all(|b| !*b));
    }

    #[test]
    fn wake_up_single_gt_at_5db() {
        // LoS pathloss of 80 dB gives 5 dB broadcast SNR with |g| = 1; at
        // G = ∞ the draw is exactly the steering vector's unit first entry.
        let f0 = crate::units::SPEED_OF_LIGHT / (4.0 * PI);
        let ch = ChannelParams {
            carrier_hz: f0,
            eta_los_db: 0.0,
            rician_factor_db: f64::INFINITY,
            ..Default::default()
        };
        // FSPL = 20·log10(d) at this carrier; d = 10⁴ m → 80 dB.
        let map = open_map(vec![Point3::ground(0.0, 0.0)], 20_000.0);
        let p = Point3::new(0.0, 0.0, 1e4);
        let b = wake_up(&p, &map, &ch, 0.0, &FadingSource::new(0), 0, Stage::Broadcast);
        assert_eq!(b, vec![true]);
        let b = wake_up(&p, &map, &ch, 5.1, &FadingSource::new(0), 0, Stage::Broadcast);
        assert_eq!(b, vec![false]);
    }

    #[test]
    fn reset_contract() {
        let map = generate_map(&EnvParams { num_gts: 5, ..Default::default() }, 4, 5).unwrap();
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        let s0 = env.reset(77);
        assert_eq!(s0.served_count(), 0);
        assert_eq!(s0.zeta, 0.0);
        assert_eq!(s0.flatten().len(), 14);
        assert_eq!(env.reset(77), s0);
        assert!(FlightBox::of(&map).contains(&s0.position));
    }

    #[test]
    fn step_requires_reset_and_valid_action() {
        let map = generate_map(&EnvParams { num_gts: 2, ..Default::default() }, 4, 5).unwrap();
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        assert_eq!(env.step(Action::hover()), Err(MdpError::NotReset));
        env.reset(1);
        let bad = Action { speed: 21.0, ..Action::hover() };
        assert_eq!(env.step(bad), Err(MdpError::InvalidAction(bad)));
    }

    #[test]
    fn idle_step_in_open_space() {
        let map = open_map(vec![Point3::ground(990.0, 990.0)], 1000.0);
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        env.reset_at(Point3::new(10.0, 10.0, 100.0), 3);
        let out = env.step(Action::hover()).unwrap();
        assert!(out.served_this_step.is_empty());
        assert_eq!(out.step_duration, 2.5);
        assert!(!out.done);
        assert_eq!(out.next_state.zeta, -2.0);
        assert_eq!(out.reward, shaped_reward(-2.0, 1, 10.0));
    }

    #[test]
    fn boundary_violation_penalized() {
        let map = open_map(vec![Point3::ground(990.0, 990.0)], 1000.0);
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        let start = Point3::new(10.0, 10.0, 100.0);
        env.reset_at(start, 3);
        let out = env.step(Action { speed: 20.0, pitch: PI / 2.0, heading: PI }).unwrap();
        assert!(out.violated);
        assert_eq!(out.next_state.position, start);
        assert_eq!(out.next_state.zeta, -22.0);
        assert_eq!(out.reward, shaped_reward(-22.0, 1, 10.0));
    }

    #[test]
    fn completion_bonus_and_termination() {
        let map = open_map(vec![Point3::ground(500.0, 500.0)], 1000.0);
        let cfg = MdpConfig::default();
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), cfg.clone());
        env.reset_at(Point3::new(500.0, 500.0, 75.0), 3);
        let out = env.step(Action::hover()).unwrap();
        assert!(out.done && out.completed);
        assert_eq!(out.served_this_step, vec![0]);
        let zeta = 10.0 - out.hover_time;
        assert!((out.next_state.zeta - zeta).abs() < 1e-12);
        assert!((out.reward - (shaped_reward(zeta, 1, 10.0) + 200.0)).abs() < 1e-12);
        assert!((out.step_duration - (2.5 + out.hover_time)).abs() < 1e-12);
        assert_eq!(env.step(Action::hover()), Err(MdpError::EpisodeFinished));
    }

    #[test]
    fn step_budget_ends_episode() {
        let map = open_map(vec![Point3::ground(990.0, 990.0)], 1000.0);
        let cfg = MdpConfig { max_steps: 10, ..Default::default() };
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), cfg);
        env.reset_at(Point3::new(10.0, 10.0, 100.0), 3);
        for i in 0..10 {
            let out = env.step(Action::hover()).unwrap();
            assert_eq!(out.done, i == 9);
        }
        assert_eq!(env.mission_time(), 25.0);
    }

    #[test]
    fn mission_time_sums_flight_and_hover() {
        let rec = |hover| StepRecord {
            n: 0,
            position: Point3::default(),
            action: Action::hover(),
            active: 0,
            flight_time: 2.5,
            hover_time: hover,
            zeta: 0.0,
            reward: 0.0,
            served_total: 0,
        };
        let mut records: Vec<_> = (0..10).map(|_| rec(0.0)).collect();
        assert_eq!(mission_time(&records), 25.0);
        records[3].hover_time = 4.0;
        assert_eq!(mission_time(&records), 29.0);
    }

    #[test]
    fn more_candidates_than_antennas_defers_the_far_ones() {
        let gts: Vec<_> = (0..4).map(|i| Point3::ground(500.0 + 10.0 * i as f64, 500.0)).collect();
        let map = open_map(gts, 1000.0);
        let ch = ChannelParams { num_antennas: 2, ..Default::default() };
        let mut env = UavEnv::new(&map, ch, LinkConfig::default(), MdpConfig::default());
        env.reset_at(Point3::new(500.0, 500.0, 75.0), 1);
        let out = env.step(Action::hover()).unwrap();
        assert_eq!(out.served_this_step, vec![0, 1]);
        assert_eq!(out.next_state.served, vec![true, true, false, false]);
        let out = env.step(Action::hover()).unwrap();
        assert_eq!(out.served_this_step, vec![2, 3]);
        assert!(out.completed);
    }

    #[test]
    fn heading_wraps_into_half_open_circle() {
        assert_eq!(wrap_heading(0.0), 2.0 * PI);
        assert!((wrap_heading(-PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!((wrap_heading(2.5 * PI) - 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn trajectory_csv_has_one_row_per_step() {
        let map = open_map(vec![Point3::ground(990.0, 990.0)], 1000.0);
        let cfg = MdpConfig { max_steps: 4, ..Default::default() };
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), cfg);
        env.reset_at(Point3::new(10.0, 10.0, 100.0), 3);
        while !env.is_done() {
            env.step(Action::hover()).unwrap();
        }
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, "drl", env.records()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("drl,0,"));
    }
}
