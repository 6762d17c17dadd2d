//! DDPG trainer for the UAV environment: replay buffer, decaying Gaussian
//! exploration, critic regression onto bootstrapped targets, deterministic
//! policy gradient for the actor, and soft target updates.
//!
//! The networks see a normalized view of the MDP state (positions scaled to
//! the flight box, pheromone scaled by `K·κ_cov`). The actor emits
//! `u ∈ [−1, 1]³`, which [`ActionScale`] maps affinely onto speed, pitch and
//! heading; exploration noise is added in `u` space and clipped there.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::UrbanMap;
use crate::mdp::{wrap_heading, Action, MdpConfig, MdpError, MdpState, UavEnv};
use crate::nn::{soft_update, Activation, Adam, CheckpointError, Mlp};
use crate::seed::{derive_indexed, derive_seed};

pub const ACTION_DIM: usize = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at episode {episode}, update {update}")]
    Diverged { episode: usize, update: u64 },
    #[error("network widths do not match {num_gts} terminals")]
    WidthMismatch { num_gts: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("progress file: {0}")]
    Progress(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Initial exploration standard deviation (in normalized action units).
    pub noise_std: f64,
    /// Per-episode multiplicative decay of the exploration std.
    pub noise_decay: f64,
    /// Learning starts once the buffer holds more than this many transitions.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub hidden_width: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Checkpoint cadence in episodes; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub noise_space: NoiseSpace,
}

/// Units in which the exploration std is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpace {
    /// Physical units: m/s for speed, radians for pitch and heading.
    Physical,
    /// The actor's `[−1, 1]` output coordinates.
    Normalized,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 8000,
            batch_size: 256,
            gamma: 0.99,
            tau: 0.005,
            noise_std: 0.6,
            noise_decay: 0.999,
            warmup: 2000,
            buffer_capacity: 125_000,
            hidden_width: 200,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            checkpoint_every: 0,
            noise_space: NoiseSpace::Normalized,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err("gamma must lie in (0, 1)".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err("tau must lie in (0, 1]".into());
        }
        if self.batch_size == 0 || self.batch_size > self.warmup.max(1) {
            return Err("batch_size must be in [1, warmup]".into());
        }
        if self.buffer_capacity <= self.warmup {
            return Err("buffer_capacity must exceed warmup".into());
        }
        Ok(())
    }

    /// Exploration std used during episode `episode`.
    pub fn noise_at(&self, episode: usize) -> f64 {
        self.noise_std * self.noise_decay.powi(episode as i32)
    }
}

/// Fixed affine normalization of the flattened MDP state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateScaler {
    pub num_gts: usize,
    pub side: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub zeta_scale: f64,
}

impl StateScaler {
    pub fn new(map: &UrbanMap, mdp: &MdpConfig) -> Self {
        Self {
            num_gts: map.num_gts(),
            side: map.params.area_side,
            z_min: map.params.z_bounds[0],
            z_max: map.params.z_bounds[1],
            zeta_scale: map.num_gts() as f64 * mdp.kappa_cov,
        }
    }

    pub fn dim(&self) -> usize {
        MdpState::dim(self.num_gts)
    }

    /// Writes the normalized state into `out` (length `2K+4`).
    pub fn normalize_into(&self, flat: &[f64], out: &mut [f64]) {
        let k2 = 2 * self.num_gts;
        out[..k2].copy_from_slice(&flat[..k2]);
        out[k2] = 2.0 * flat[k2] / self.side - 1.0;
        out[k2 + 1] = 2.0 * flat[k2 + 1] / self.side - 1.0;
        out[k2 + 2] = 2.0 * (flat[k2 + 2] - self.z_min) / (self.z_max - self.z_min) - 1.0;
        out[k2 + 3] = flat[k2 + 3] / self.zeta_scale;
    }

    pub fn normalize(&self, flat: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; flat.len()];
        self.normalize_into(flat, &mut out);
        out
    }
}

/// Affine map between `u ∈ [−1, 1]³` and the physical action box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScale {
    pub max_speed: f64,
}

impl ActionScale {
    /// Width of each action coordinate's physical range.
    pub fn ranges(&self) -> [f64; 3] {
        [self.max_speed, PI, 2.0 * PI]
    }

    /// Converts a scalar exploration std into per-coordinate `u` units.
    pub fn noise_in_unit(&self, std: f64, space: NoiseSpace) -> [f64; 3] {
        match space {
            NoiseSpace::Normalized => [std; 3],
            NoiseSpace::Physical => self.ranges().map(|r| 2.0 * std / r),
        }
    }

    pub fn to_action(&self, u: [f64; 3]) -> Action {
        let unit = |v: f64| (v.clamp(-1.0, 1.0) + 1.0) / 2.0;
        Action {
            speed: unit(u[0]) * self.max_speed,
            pitch: unit(u[1]) * PI,
            heading: wrap_heading(unit(u[2]) * 2.0 * PI),
        }
    }

    pub fn to_unit(&self, a: &Action) -> [f64; 3] {
        [
            2.0 * a.speed / self.max_speed - 1.0,
            2.0 * a.pitch / PI - 1.0,
            2.0 * a.heading / (2.0 * PI) - 1.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Flattened raw state.
    pub state: Vec<f64>,
    /// Action in normalized `u` coordinates.
    pub action: [f64; ACTION_DIM],
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            cursor: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// `batch` distinct transitions, uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        sample(rng, self.items.len(), batch.min(self.items.len()))
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }

    /// Oldest-to-newest iteration.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.cursor };
        self.items[split..].iter().chain(self.items[..split].iter())
    }
}

/// Actor output `u` plus clipped Gaussian noise with per-coordinate std
/// (in `u` units).
pub fn select_action<R: Rng + ?Sized>(actor: &Mlp, normalized_state: &[f64], noise_std: [f64; 3], rng: &mut R) -> [f64; 3] {
    let out = actor.predict_one(normalized_state);
    let mut u = [0.0; 3];
    for ((ui, oi), sd) in u.iter_mut().zip(&out).zip(noise_std) {
        let eps: f64 = if sd > 0.0 { rng.sample(StandardNormal) } else { 0.0 };
        *ui = (oi + sd * eps).clamp(-1.0, 1.0);
    }
    u
}

/// Concatenates state rows and action rows into critic input rows.
pub fn critic_input(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[states, actions]).expect("matching batch sizes")
}

/// Bootstrapped target `y = r + γ·Q'(s', π'(s'))`, cut at terminal transitions.
pub fn critic_target(
    critic_target: &Mlp,
    actor_target: &Mlp,
    reward: f64,
    next_state: &[f64],
    done: bool,
    gamma: f64,
) -> f64 {
    if done {
        return reward;
    }
    let a = actor_target.predict_one(next_state);
    let mut x = next_state.to_vec();
    x.extend(a);
    reward + gamma * critic_target.predict_one(&x)[0]
}

fn batch_targets(
    critic_target: &Mlp,
    actor_target: &Mlp,
    rewards: &Array1<f64>,
    next_states: &Array2<f64>,
    done: &[bool],
    gamma: f64,
) -> Array1<f64> {
    let next_actions = actor_target.predict(next_states.view());
    let q = critic_target.predict(critic_input(next_states.view(), next_actions.view()).view());
    Array1::from_iter(
        rewards
            .iter()
            .zip(q.column(0))
            .zip(done)
            .map(|((r, q), d)| if *d { *r } else { r + gamma * q }),
    )
}

/// One Adam step on the mean squared TD error; returns the pre-step loss.
pub fn update_critic(
    critic: &mut Mlp,
    opt: &mut Adam,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    targets: &Array1<f64>,
) -> f64 {
    let n = targets.len() as f64;
    let (q, cache) = critic.forward(critic_input(states, actions).view());
    let resid = &q.column(0) - targets;
    let loss = resid.mapv(|e| e * e).sum() / n;
    let grad_q = resid.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, grad_q.view());
    opt.step(critic, &grads);
    loss
}

/// Gradient of `mean Q(s, π(s))` with respect to the actor parameters,
/// chained through the critic's input gradient. Returns the objective too.
pub fn actor_gradient(actor: &Mlp, critic: &Mlp, states: ArrayView2<f64>) -> (crate::nn::Gradients, f64) {
    let n = states.nrows() as f64;
    let (u, actor_cache) = actor.forward(states);
    let (q, critic_cache) = critic.forward(critic_input(states, u.view()).view());
    let objective = q.sum() / n;
    let dq = Array2::from_elem((states.nrows(), 1), 1.0 / n);
    let dx = critic.input_gradient(&critic_cache, dq.view());
    let du = dx.slice(s![.., states.ncols()..]).to_owned();
    let (grads, _) = actor.backward(&actor_cache, du.view());
    (grads, objective)
}

/// One ascent step on `mean Q(s, π(s))`; the critic is left untouched.
pub fn update_actor(actor: &mut Mlp, opt: &mut Adam, critic: &Mlp, states: ArrayView2<f64>) -> f64 {
    let (mut grads, objective) = actor_gradient(actor, critic, states);
    for l in &mut grads.layers {
        l.weights.mapv_inplace(|v| -v);
        l.bias.mapv_inplace(|v| -v);
    }
    opt.step(actor, &grads);
    objective
}

/// Actor, critic, their targets and optimizer states.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub scaler: StateScaler,
    pub scale: ActionScale,
}

impl Agent {
    pub fn new(scaler: StateScaler, mdp: &MdpConfig, cfg: &TrainConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sdim = scaler.dim();
        let h = cfg.hidden_width;
        let actor = Mlp::new(&[sdim, h, h, ACTION_DIM], Activation::Relu, Activation::Tanh, 3e-3, &mut rng);
        let critic = Mlp::new(&[sdim + ACTION_DIM, h, h, 1], Activation::Relu, Activation::Identity, 3e-3, &mut rng);
        Self {
            actor_opt: Adam::new(&actor, cfg.actor_lr),
            critic_opt: Adam::new(&critic, cfg.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            scaler,
            scale: ActionScale { max_speed: mdp.max_speed },
        }
    }

    /// Noisy (training) or greedy (zero std) action for a state. The std
    /// is in `u` units per coordinate.
    pub fn act<R: Rng + ?Sized>(&self, state: &MdpState, noise_std: [f64; 3], rng: &mut R) -> ([f64; 3], Action) {
        let s = self.scaler.normalize(&state.flatten());
        let u = select_action(&self.actor, &s, noise_std, rng);
        (u, self.scale.to_action(u))
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite() && self.actor_target.is_finite() && self.critic_target.is_finite()
    }

    /// Critic step, actor step, then soft target updates on one minibatch.
    /// Returns `(critic_loss, actor_objective)`.
    pub fn learn(&mut self, batch: &[&Transition], gamma: f64, tau: f64) -> (f64, f64) {
        let b = batch.len();
        let sdim = self.scaler.dim();
        let mut states = Array2::zeros((b, sdim));
        let mut next = Array2::zeros((b, sdim));
        let mut actions = Array2::zeros((b, ACTION_DIM));
        let mut rewards = Array1::zeros(b);
        let mut done = Vec::with_capacity(b);
        for (i, t) in batch.iter().enumerate() {
            self.scaler.normalize_into(&t.state, states.row_mut(i).as_slice_mut().unwrap());
            self.scaler.normalize_into(&t.next_state, next.row_mut(i).as_slice_mut().unwrap());
            actions.row_mut(i).assign(&ndarray::ArrayView1::from(&t.action));
            rewards[i] = t.reward;
            done.push(t.done);
        }
        let targets = batch_targets(&self.critic_target, &self.actor_target, &rewards, &next, &done, gamma);
        let loss = update_critic(&mut self.critic, &mut self.critic_opt, states.view(), actions.view(), &targets);
        let objective = update_actor(&mut self.actor, &mut self.actor_opt, &self.critic, states.view());
        soft_update(&mut self.critic_target, &self.critic, tau);
        soft_update(&mut self.actor_target, &self.actor, tau);
        (loss, objective)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), CheckpointError> {
        std::fs::create_dir_all(dir)?;
        self.actor.save(&dir.join("actor.bin"))?;
        self.critic.save(&dir.join("critic.bin"))?;
        self.actor_target.save(&dir.join("actor_target.bin"))?;
        self.critic_target.save(&dir.join("critic_target.bin"))?;
        self.actor_opt.save(&dir.join("actor_opt.bin"))?;
        self.critic_opt.save(&dir.join("critic_opt.bin"))?;
        Ok(())
    }

    pub fn load_dir(dir: &Path, scaler: StateScaler, mdp: &MdpConfig) -> Result<Self, TrainError> {
        let agent = Self {
            actor: Mlp::load(&dir.join("actor.bin"))?,
            critic: Mlp::load(&dir.join("critic.bin"))?,
            actor_target: Mlp::load(&dir.join("actor_target.bin"))?,
            critic_target: Mlp::load(&dir.join("critic_target.bin"))?,
            actor_opt: Adam::load(&dir.join("actor_opt.bin"))?,
            critic_opt: Adam::load(&dir.join("critic_opt.bin"))?,
            scale: ActionScale { max_speed: mdp.max_speed },
            scaler,
        };
        if agent.actor.input_width() != agent.scaler.dim() || agent.critic.input_width() != agent.scaler.dim() + ACTION_DIM {
            return Err(TrainError::WidthMismatch { num_gts: agent.scaler.num_gts });
        }
        Ok(agent)
    }
}

/// Per-episode training statistics (one row of the reward curve).
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub reward: f64,
    pub steps: usize,
    pub completed: bool,
    pub mission_time: f64,
}

pub fn write_reward_curve<W: std::io::Write>(mut out: W, curve: &[EpisodeStats]) -> std::io::Result<()> {
    writeln!(out, "episode,reward,steps,completed")?;
    for e in curve {
        writeln!(out, "{},{},{},{}", e.episode, e.reward, e.steps, u8::from(e.completed))?;
    }
    Ok(())
}

/// Training progress persisted next to the network checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub next_episode: usize,
    pub updates: u64,
}

/// Episode-level driver of the training loop.
#[derive(Debug)]
pub struct Trainer {
    pub agent: Agent,
    pub buffer: ReplayBuffer,
    pub config: TrainConfig,
    pub seed: u64,
    pub next_episode: usize,
    pub updates: u64,
}

impl Trainer {
    pub fn new(map: &UrbanMap, mdp: &MdpConfig, config: TrainConfig, seed: u64) -> Self {
        let agent = Agent::new(StateScaler::new(map, mdp), mdp, &config, derive_seed(seed, "init"));
        Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            agent,
            config,
            seed,
            next_episode: 0,
            updates: 0,
        }
    }

    /// Resumes from a checkpoint directory. The replay buffer is not
    /// persisted and refills through the warmup gate.
    pub fn resume(dir: &Path, map: &UrbanMap, mdp: &MdpConfig, config: TrainConfig, seed: u64) -> Result<Self, TrainError> {
        let agent = Agent::load_dir(dir, StateScaler::new(map, mdp), mdp)?;
        let text = std::fs::read_to_string(dir.join("progress.toml")).map_err(|e| TrainError::Progress(e.to_string()))?;
        let progress: Progress = toml::from_str(&text).map_err(|e| TrainError::Progress(e.to_string()))?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity),
            agent,
            config,
            seed,
            next_episode: progress.next_episode,
            updates: progress.updates,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        self.agent.save_dir(dir)?;
        let progress = Progress {
            next_episode: self.next_episode,
            updates: self.updates,
        };
        let text = toml::to_string(&progress).map_err(|e| TrainError::Progress(e.to_string()))?;
        std::fs::write(dir.join("progress.toml"), text).map_err(|e| TrainError::Progress(e.to_string()))?;
        Ok(())
    }

    pub fn is_finished(&self) -> bool {
        self.next_episode >= self.config.episodes
    }

    /// Runs one full training episode in `env`.
    pub fn run_episode(&mut self, env: &mut UavEnv<'_>) -> Result<EpisodeStats, TrainError> {
        if env.num_gts() != self.agent.scaler.num_gts {
            return Err(TrainError::WidthMismatch { num_gts: env.num_gts() });
        }
        let episode = self.next_episode;
        let ep = episode as u64;
        let noise = self.agent.scale.noise_in_unit(self.config.noise_at(episode), self.config.noise_space);
        let mut explore = ChaCha8Rng::seed_from_u64(derive_indexed(self.seed, "explore", ep));
        let mut minibatch = ChaCha8Rng::seed_from_u64(derive_indexed(self.seed, "minibatch", ep));
        let mut state = env.reset(derive_indexed(self.seed, "episode", ep));
        let mut total = 0.0;
        let completed = loop {
            let (u, action) = self.agent.act(&state, noise, &mut explore);
            let out = env.step(action)?;
            total += out.reward;
            self.buffer.push(Transition {
                state: state.flatten(),
                action: u,
                reward: out.reward,
                next_state: out.next_state.flatten(),
                done: out.done,
            });
            if self.buffer.len() > self.config.warmup {
                let batch = self.buffer.sample(self.config.batch_size, &mut minibatch);
                let (loss, objective) = self.agent.learn(&batch, self.config.gamma, self.config.tau);
                self.updates += 1;
                if !loss.is_finite() || !objective.is_finite() || !self.agent.is_finite() {
                    return Err(TrainError::Diverged {
                        episode,
                        update: self.updates,
                    });
                }
            }
            state = out.next_state;
            if out.done {
                break out.completed;
            }
        };
        self.next_episode += 1;
        Ok(EpisodeStats {
            episode,
            reward: total,
            steps: env.steps_taken(),
            completed,
            mission_time: env.mission_time(),
        })
    }
}

/// Trains for `config.episodes` episodes on one map and returns the trainer
/// together with the reward curve.
pub fn train(
    env: &mut UavEnv<'_>,
    config: TrainConfig,
    seed: u64,
) -> Result<(Trainer, Vec<EpisodeStats>), TrainError> {
    let mut trainer = Trainer::new(env.map(), env.config(), config, seed);
    let mut curve = Vec::with_capacity(trainer.config.episodes);
    while !trainer.is_finished() {
        curve.push(trainer.run_episode(env)?);
    }
    Ok((trainer, curve))
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub realization: usize,
    pub mission_time: f64,
    pub completed: bool,
    pub steps: usize,
    pub served: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub runs: Vec<RunResult>,
    pub mean_time: f64,
    pub std_time: f64,
    pub completion_rate: f64,
}

impl EvalSummary {
    pub fn from_runs(runs: Vec<RunResult>) -> Self {
        let n = runs.len().max(1) as f64;
        let mean_time = runs.iter().map(|r| r.mission_time).sum::<f64>() / n;
        let var = runs.iter().map(|r| (r.mission_time - mean_time).powi(2)).sum::<f64>() / n;
        let completion_rate = runs.iter().filter(|r| r.completed).count() as f64 / n;
        Self {
            runs,
            mean_time,
            std_time: var.sqrt(),
            completion_rate,
        }
    }
}

/// Greedy (noise-free) rollouts of the actor, one per reset seed.
pub fn evaluate(agent: &Agent, env: &mut UavEnv<'_>, reset_seeds: &[u64]) -> Result<EvalSummary, TrainError> {
    let mut runs = Vec::with_capacity(reset_seeds.len());
    let mut no_noise = ChaCha8Rng::seed_from_u64(0);
    for (i, &seed) in reset_seeds.iter().enumerate() {
        let mut state = env.reset(seed);
        let mut completed = false;
        while !env.is_done() {
            let (_, action) = agent.act(&state, [0.0; 3], &mut no_noise);
            let out = env.step(action)?;
            completed = out.completed;
            state = out.next_state;
        }
        runs.push(RunResult {
            realization: i,
            mission_time: env.mission_time(),
            completed,
            steps: env.steps_taken(),
            served: state.served_count(),
        });
    }
    Ok(EvalSummary::from_runs(runs))
}
