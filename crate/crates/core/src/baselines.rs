//! Non-learning reference strategies flown through the same [`UavEnv`]:
//! a boustrophedon Scan sweep, an ant-colony shortest open route, and a
//! uniform-random policy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{free_space_pathloss, ChannelParams};
use crate::ddpg::RunResult;
use crate::env::Point3;
use crate::mdp::{wrap_heading, Action, MdpError, UavEnv};

/// Scan parameters. Unset fields fall back to `z_min`, `υ_max` and the
/// calibrated LoS strip width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub spacing: Option<f64>,
    pub altitude: Option<f64>,
    pub speed: Option<f64>,
    /// Fading margin used when calibrating the strip width.
    pub margin_db: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            spacing: None,
            altitude: None,
            speed: None,
            margin_db: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoConfig {
    pub ants: usize,
    pub iterations: usize,
    /// Exponent on the trail level.
    pub alpha: f64,
    /// Exponent on the inverse-distance heuristic.
    pub beta: f64,
    pub evaporation: f64,
    pub initial_trail: f64,
    pub altitude: Option<f64>,
    pub speed: Option<f64>,
}

impl Default for AcoConfig {
    fn default() -> Self {
        Self {
            ants: 30,
            iterations: 200,
            alpha: 1.0,
            beta: 3.0,
            evaporation: 0.5,
            initial_trail: 1.0,
            altitude: None,
            speed: None,
        }
    }
}

impl AcoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.evaporation > 0.0 && self.evaporation < 1.0) {
            return Err("aco evaporation must lie in (0, 1)".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.initial_trail <= 0.0 {
            return Err("aco weights must be non-negative and the initial trail positive".into());
        }
        if self.ants == 0 || self.iterations == 0 {
            return Err("aco needs at least one ant and one iteration".into());
        }
        Ok(())
    }
}

/// Horizontal distance within which a LoS terminal clears the wake-up
/// threshold with `margin_db` to spare, at altitude `z`. Zero if none.
pub fn los_coverage_radius(channel: &ChannelParams, z: f64, threshold_db: f64, margin_db: f64) -> f64 {
    let budget = channel.tx_power_dbm - channel.noise_dbm - threshold_db - margin_db - channel.eta_los_db;
    // FSPL is 20·log10(d) plus a constant.
    let at_1m = free_space_pathloss(1.0, channel.carrier_hz).expect("positive distance");
    let d = 10f64.powf((budget - at_1m) / 20.0);
    if d <= z {
        0.0
    } else {
        (d * d - z * z).sqrt()
    }
}

/// Widest strip spacing such that every ground point lies within the
/// coverage radius of some sample point, given samples every `step` metres.
pub fn calibrate_spacing(radius: f64, step: f64) -> Option<f64> {
    let half = radius * radius - step * step / 4.0;
    (half > 0.0).then(|| 2.0 * half.sqrt())
}

/// Ordered 2-D corners of the sweep: from `(0, 0)` along vertical strips at
/// `x_i = (i + ½)·D/n`, `n = ceil(D/w)`, finishing at `(0, D)`.
pub fn scan_waypoints(side: f64, spacing: f64) -> Vec<[f64; 2]> {
    let n = (side / spacing).ceil().max(1.0) as usize;
    let mut pts = vec![[0.0, 0.0]];
    for i in 0..n {
        let x = (i as f64 + 0.5) * side / n as f64;
        let (from, to) = if i % 2 == 0 { (0.0, side) } else { (side, 0.0) };
        pts.push([x, from]);
        pts.push([x, to]);
    }
    pts.push([0.0, side]);
    pts
}

/// Closed-form length of [`scan_waypoints`]: `n·D` of strips, the span
/// between the outer strips plus the lead-in, and the return to `(0, D)`.
pub fn scan_length(side: f64, spacing: f64) -> f64 {
    let n = (side / spacing).ceil().max(1.0) as usize;
    let last = (n as f64 - 0.5) * side / n as f64;
    let back = if n % 2 == 1 { last } else { last.hypot(side) };
    n as f64 * side + last + back
}

/// Level-flight actions that visit `waypoints` in order. Each leg is split
/// into full-speed steps plus one shorter final step ending on the corner.
pub fn waypoint_actions(start: [f64; 2], waypoints: &[[f64; 2]], speed: f64, flight_time: f64) -> Vec<Action> {
    let reach = speed * flight_time;
    let mut actions = Vec::new();
    let mut at = start;
    for wp in waypoints {
        let (dx, dy) = (wp[0] - at[0], wp[1] - at[1]);
        let dist = dx.hypot(dy);
        if dist <= 1e-9 {
            continue;
        }
        let heading = wrap_heading(dy.atan2(dx));
        let mut left = dist;
        while left > 1e-9 {
            let m = left.min(reach);
            actions.push(Action {
                speed: m / flight_time,
                pitch: PI / 2.0,
                heading,
            });
            left -= m;
        }
        at = *wp;
    }
    actions
}

fn resolve(v: Option<f64>, fallback: f64) -> f64 {
    v.unwrap_or(fallback)
}

/// The Scan action sequence for the flight box of `env` (map-independent).
pub fn scan_actions(env: &UavEnv<'_>, cfg: &ScanConfig) -> Vec<Action> {
    let bounds = env.bounds();
    let mdp = env.config();
    let z = resolve(cfg.altitude, bounds.z_min);
    let speed = resolve(cfg.speed, mdp.max_speed);
    let step = speed * mdp.flight_time;
    let spacing = cfg.spacing.unwrap_or_else(|| {
        let r = los_coverage_radius(env.channel(), z, mdp.snr_threshold_db, cfg.margin_db);
        calibrate_spacing(r, step).unwrap_or(step)
    });
    let wps = scan_waypoints(bounds.side, spacing);
    waypoint_actions(wps[0], &wps[1..], speed, mdp.flight_time)
}

/// Plays `actions` until they run out or the episode ends.
fn fly(env: &mut UavEnv<'_>, realization: usize, actions: impl IntoIterator<Item = Action>) -> Result<RunResult, MdpError> {
    let mut completed = false;
    for a in actions {
        if env.is_done() {
            break;
        }
        completed = env.step(a)?.completed;
    }
    Ok(RunResult {
        realization,
        mission_time: env.mission_time(),
        completed,
        steps: env.steps_taken(),
        served: env.state().map_or(0, |s| s.served_count()),
    })
}

/// One Scan mission from the lower-left corner at cruise altitude.
pub fn run_scan(env: &mut UavEnv<'_>, cfg: &ScanConfig, realization: usize, seed: u64) -> Result<RunResult, MdpError> {
    let actions = scan_actions(env, cfg);
    let z = resolve(cfg.altitude, env.bounds().z_min);
    env.reset_at(Point3::new(0.0, 0.0, z), seed);
    fly(env, realization, actions)
}

/// An open route chosen by the colony, with the best length after every
/// iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AcoRoute {
    pub order: Vec<usize>,
    pub length: f64,
    pub history: Vec<f64>,
}

/// Length of the open path `start → points[order[0]] → …`.
pub fn route_length(points: &[[f64; 2]], start: [f64; 2], order: &[usize]) -> f64 {
    let mut at = start;
    let mut total = 0.0;
    for &i in order {
        total += (points[i][0] - at[0]).hypot(points[i][1] - at[1]);
        at = points[i];
    }
    total
}

/// Ant System over the complete graph on `{start} ∪ points`. Deposits are
/// normalized by the nearest-neighbour tour length.
pub fn aco_route<R: Rng + ?Sized>(points: &[[f64; 2]], start: [f64; 2], cfg: &AcoConfig, rng: &mut R) -> AcoRoute {
    let k = points.len();
    if k <= 1 {
        let order: Vec<usize> = (0..k).collect();
        let length = route_length(points, start, &order);
        return AcoRoute {
            order,
            length,
            history: vec![length; cfg.iterations],
        };
    }
    // Node k is the start.
    let node = |i: usize| if i == k { start } else { points[i] };
    let n = k + 1;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (node(i), node(j));
            dist[i * n + j] = (a[0] - b[0]).hypot(a[1] - b[1]).max(1e-9);
        }
    }
    let heur: Vec<f64> = dist.iter().map(|d| d.recip().powf(cfg.beta)).collect();
    let mut trail = vec![cfg.initial_trail; n * n];
    let scale = nearest_neighbour_length(&dist, n, k);

    let mut best: Vec<usize> = Vec::new();
    let mut best_len = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut weights = vec![0.0; k];
    let mut tours: Vec<(Vec<usize>, f64)> = Vec::with_capacity(cfg.ants);
    for _ in 0..cfg.iterations {
        tours.clear();
        for _ in 0..cfg.ants {
            let mut visited = vec![false; k];
            let mut tour = Vec::with_capacity(k);
            let mut at = k;
            let mut len = 0.0;
            for _ in 0..k {
                let mut total = 0.0;
                for j in 0..k {
                    weights[j] = if visited[j] {
                        0.0
                    } else {
                        trail[at * n + j].powf(cfg.alpha) * heur[at * n + j]
                    };
                    total += weights[j];
                }
                let next = roulette(&weights, total, &visited, rng);
                visited[next] = true;
                len += dist[at * n + next];
                tour.push(next);
                at = next;
            }
            tours.push((tour, len));
        }
        for t in trail.iter_mut() {
            *t *= 1.0 - cfg.evaporation;
        }
        for (tour, len) in &tours {
            let deposit = scale / len;
            let mut at = k;
            for &j in tour {
                trail[at * n + j] += deposit;
                trail[j * n + at] += deposit;
                at = j;
            }
            if *len < best_len {
                best_len = *len;
                best = tour.clone();
            }
        }
        history.push(best_len);
    }
    AcoRoute {
        order: best,
        length: best_len,
        history,
    }
}

fn roulette<R: Rng + ?Sized>(weights: &[f64], total: f64, visited: &[bool], rng: &mut R) -> usize {
    if total > 0.0 && total.is_finite() {
        let mut pick = rng.random::<f64>() * total;
        for (j, w) in weights.iter().enumerate() {
            if *w > 0.0 {
                if pick < *w {
                    return j;
                }
                pick -= w;
            }
        }
    }
    // Rounding fallthrough or all-zero weights: last unvisited node.
    visited.iter().rposition(|v| !v).expect("an unvisited node remains")
}

fn nearest_neighbour_length(dist: &[f64], n: usize, k: usize) -> f64 {
    let mut visited = vec![false; k];
    let mut at = k;
    let mut len = 0.0;
    for _ in 0..k {
        let next = (0..k)
            .filter(|j| !visited[*j])
            .min_by(|a, b| dist[at * n + a].total_cmp(&dist[at * n + b]))
            .expect("an unvisited node remains");
        visited[next] = true;
        len += dist[at * n + next];
        at = next;
    }
    len
}

/// Flies an ACO route at fixed altitude, skipping terminals that were
/// already served en route and hovering over a terminal until it is served.
pub fn aco_fly(
    env: &mut UavEnv<'_>,
    route: &[usize],
    start: [f64; 2],
    cfg: &AcoConfig,
    realization: usize,
    seed: u64,
) -> Result<RunResult, MdpError> {
    let bounds = env.bounds();
    let mdp = env.config().clone();
    let z = resolve(cfg.altitude, bounds.z_min);
    let speed = resolve(cfg.speed, mdp.max_speed);
    let gts: Vec<[f64; 2]> = env.map().gts.iter().map(|g| [g.x, g.y]).collect();
    env.reset_at(Point3::new(start[0], start[1], z), seed);
    let mut completed = false;
    let mut at = start;
    'route: for &g in route {
        if env.state().is_some_and(|s| s.served[g]) {
            continue;
        }
        for a in waypoint_actions(at, &[gts[g]], speed, mdp.flight_time) {
            if env.is_done() {
                break 'route;
            }
            let out = env.step(a)?;
            completed = out.completed;
            if out.next_state.served[g] {
                break;
            }
        }
        at = env.state().map(|s| [s.position.x, s.position.y]).unwrap_or(at);
        while !env.is_done() && !env.state().is_some_and(|s| s.served[g]) {
            completed = env.step(Action::hover())?.completed;
        }
        if env.is_done() {
            break;
        }
    }
    Ok(RunResult {
        realization,
        mission_time: env.mission_time(),
        completed,
        steps: env.steps_taken(),
        served: env.state().map_or(0, |s| s.served_count()),
    })
}

/// Plans with a colony seeded from `seed` and flies the result from `start`.
pub fn run_aco(
    env: &mut UavEnv<'_>,
    cfg: &AcoConfig,
    start: [f64; 2],
    realization: usize,
    seed: u64,
) -> Result<(AcoRoute, RunResult), MdpError> {
    let gts: Vec<[f64; 2]> = env.map().gts.iter().map(|g| [g.x, g.y]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = aco_route(&gts, start, cfg, &mut rng);
    let run = aco_fly(env, &route.order, start, cfg, realization, seed)?;
    Ok((route, run))
}

/// Accumulated reward of `episodes` uniform-random-action episodes.
pub fn random_policy_rewards(env: &mut UavEnv<'_>, episodes: usize, seed: u64) -> Result<Vec<f64>, MdpError> {
    let max_speed = env.config().max_speed;
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes as u64 {
        let episode_seed = crate::seed::derive_indexed(seed, "random-episode", ep);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_indexed(seed, "random-action", ep));
        env.reset(episode_seed);
        let mut total = 0.0;
        while !env.is_done() {
            total += env.step(Action::random(&mut rng, max_speed))?.reward;
        }
        out.push(total);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_map, EnvParams};
    use crate::mdp::{move_uav, MdpConfig};
    use crate::precoding::LinkConfig;

    fn permutations_min(points: &[[f64; 2]], start: [f64; 2]) -> f64 {
        fn go(points: &[[f64; 2]], at: [f64; 2], left: &mut Vec<usize>, acc: f64, best: &mut f64) {
            if acc >= *best {
                return;
            }
            if left.is_empty() {
                *best = acc;
                return;
            }
            for i in 0..left.len() {
                let j = left.swap_remove(i);
                let p = points[j];
                go(points, p, left, acc + (p[0] - at[0]).hypot(p[1] - at[1]), best);
                left.push(j);
                let last = left.len() - 1;
                left.swap(i, last);
            }
        }
        let mut best = f64::INFINITY;
        go(points, start, &mut (0..points.len()).collect(), 0.0, &mut best);
        best
    }

    #[test]
    fn single_terminal_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = aco_route(&[[3.0, 4.0]], [0.0, 0.0], &AcoConfig::default(), &mut rng);
        assert_eq!(r.order, vec![0]);
        assert_eq!(r.length, 5.0);
    }

    #[test]
    fn collinear_points_are_visited_in_order() {
        let pts = [[30.0, 0.0], [10.0, 0.0], [20.0, 0.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = aco_route(&pts, [0.0, 0.0], &AcoConfig::default(), &mut rng);
        assert_eq!(r.order, vec![1, 2, 0]);
        assert_eq!(r.length, 30.0);
    }

    #[test]
    fn best_length_never_increases_and_is_near_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<[f64; 2]> = (0..7).map(|_| [rng.random::<f64>() * 100.0, rng.random::<f64>() * 100.0]).collect();
        let r = aco_route(&pts, [0.0, 0.0], &AcoConfig { iterations: 60, ..Default::default() }, &mut rng);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!((route_length(&pts, [0.0, 0.0], &r.order) - r.length).abs() < 1e-9);
        let mut sorted = r.order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..7).collect::<Vec<_>>());
        assert!(r.length <= 1.05 * permutations_min(&pts, [0.0, 0.0]));
    }

    #[test]
    fn coverage_radius_matches_budget() {
        let ch = ChannelParams::default();
        let r = los_coverage_radius(&ch, 75.0, 0.0, 3.0);
        let d = r.hypot(75.0);
        let loss = free_space_pathloss(d, ch.carrier_hz).unwrap() + ch.eta_los_db;
        assert!((ch.tx_power_dbm - loss - ch.noise_dbm - 3.0).abs() < 1e-9);
        assert_eq!(los_coverage_radius(&ch, 1e6, 0.0, 3.0), 0.0);
    }

    #[test]
    fn strip_spacing_leaves_no_gap() {
        let w = calibrate_spacing(130.0, 50.0).unwrap();
        // Worst point: halfway between strips, halfway between samples.
        assert!(((w / 2.0).hypot(25.0) - 130.0).abs() < 1e-9);
        assert!(calibrate_spacing(20.0, 50.0).is_none());
    }

    #[test]
    fn sweep_starts_lower_left_and_ends_upper_left() {
        for (side, w) in [(1000.0, 251.0), (400.0, 251.0), (400.0, 120.0), (400.0, 500.0)] {
            let wps = scan_waypoints(side, w);
            assert_eq!(wps[0], [0.0, 0.0]);
            assert_eq!(*wps.last().unwrap(), [0.0, side]);
            let len: f64 = wps.windows(2).map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1])).sum();
            assert!((len - scan_length(side, w)).abs() < 1e-9);
            // Strips spaced at most w apart and at most w/2 from the edges.
            let xs: Vec<f64> = wps[1..wps.len() - 1].iter().step_by(2).map(|p| p[0]).collect();
            assert!(xs[0] <= w / 2.0 + 1e-9);
            assert!(xs.windows(2).all(|p| p[1] - p[0] <= w + 1e-9));
        }
    }

    #[test]
    fn waypoint_actions_land_on_each_corner() {
        let bounds = crate::mdp::FlightBox { side: 400.0, z_min: 75.0, z_max: 125.0 };
        let wps = scan_waypoints(400.0, 251.0);
        let acts = waypoint_actions(wps[0], &wps[1..], 20.0, 2.5);
        let mut p = Point3::new(0.0, 0.0, 75.0);
        let mut flown = 0.0;
        for a in &acts {
            assert!(a.is_valid(20.0));
            let (q, violated) = move_uav(&p, a, 2.5, &bounds);
            assert!(!violated);
            flown += p.distance(&q);
            p = q;
        }
        assert!((p.x).abs() < 1e-6 && (p.y - 400.0).abs() < 1e-6 && p.z == 75.0);
        assert!((flown - scan_length(400.0, 251.0)).abs() < 1e-6);
    }

    fn small_env_map() -> crate::env::UrbanMap {
        generate_map(&EnvParams { area_side: 400.0, num_gts: 5, ..Default::default() }, 4, 5).unwrap()
    }

    #[test]
    fn scan_ignores_reset_seed_for_start_and_actions() {
        let map = small_env_map();
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        let a = scan_actions(&env, &ScanConfig::default());
        run_scan(&mut env, &ScanConfig::default(), 0, 11).unwrap();
        assert_eq!(env.records()[0].n, 0);
        let other = generate_map(&EnvParams { area_side: 400.0, num_gts: 2, ..Default::default() }, 9, 9).unwrap();
        let env2 = UavEnv::new(&other, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        assert_eq!(a, scan_actions(&env2, &ScanConfig::default()));
    }

    #[test]
    fn permissive_threshold_scan_and_aco_complete() {
        let map = small_env_map();
        let mdp = MdpConfig { snr_threshold_db: -200.0, ..Default::default() };
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), mdp);
        let scan = run_scan(&mut env, &ScanConfig::default(), 0, 1).unwrap();
        assert!(scan.completed);
        let (_, aco) = run_aco(&mut env, &AcoConfig::default(), [200.0, 200.0], 0, 1).unwrap();
        assert!(aco.completed);
        assert_eq!(aco.served, 5);
    }

    #[test]
    fn aco_run_is_deterministic_and_times_add_up() {
        let map = small_env_map();
        let mut env = UavEnv::new(&map, ChannelParams::default(), LinkConfig::default(), MdpConfig::default());
        let (r1, a) = run_aco(&mut env, &AcoConfig::default(), [10.0, 390.0], 3, 8).unwrap();
        let recs = env.records().to_vec();
        let (r2, b) = run_aco(&mut env, &AcoConfig::default(), [10.0, 390.0], 3, 8).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(a, b);
        let expected: f64 = recs.iter().map(|r| r.flight_time + r.hover_time).sum();
        assert_eq!(a.mission_time, expected);
    }
}
