//! Procedural urban map: buildings on a jittered regular grid, outdoor ground
//! terminals, and exact line-of-sight queries against the building boxes.
//!
//! The map is parameterized by the usual urban triple: built-area ratio
//! `alpha`, building density `beta` (buildings per km²) and mean building
//! height `lambda`. Building heights are Rayleigh distributed with mean
//! `lambda` and then clipped to `height_clip`.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum rejection draws per ground terminal before giving up.
const MAX_GT_REJECTIONS: usize = 10_000;

/// Intersection chords shorter than this (in segment parameter units) are
/// treated as grazing contacts, not blockage.
const SLAB_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error(
        "building side {side:.2} m exceeds grid cell {cell:.2} m; alpha and beta are inconsistent"
    )]
    InconsistentDensity { side: f64, cell: f64 },
    #[error("could not place ground terminal {index} outdoors after {attempts} draws")]
    NoOutdoorSpace { index: usize, attempts: usize },
    #[error("map file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("map file parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("map file encode: {0}")]
    Encode(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn ground(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn coord(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

/// Statistical description of the urban area and the UAV's flight envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    /// Ratio of built land area to total land area.
    pub alpha: f64,
    /// Buildings per km².
    pub beta: f64,
    /// Mean building height before clipping (m).
    pub lambda: f64,
    /// Side of the square area (m).
    pub area_side: f64,
    /// `[h_min, h_max]` building height clip (m).
    pub height_clip: [f64; 2],
    /// `[z_min, z_max]` UAV altitude bounds (m).
    pub z_bounds: [f64; 2],
    pub num_gts: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 144.0,
            lambda: 50.0,
            area_side: 1000.0,
            height_clip: [10.0, 50.0],
            z_bounds: [75.0, 125.0],
            num_gts: 40,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: &str| Err(EnvError::InvalidParams(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.area_side > 0.0) {
            return bad("area_side must be positive");
        }
        if !(self.height_clip[0] < self.height_clip[1]) {
            return bad("height_clip must satisfy h_min < h_max");
        }
        if !(self.z_bounds[0] < self.z_bounds[1]) {
            return bad("z_bounds must satisfy z_min < z_max");
        }
        if self.num_gts == 0 {
            return bad("num_gts must be at least 1");
        }
        Ok(())
    }

    /// Number of buildings implied by `beta` over the area.
    pub fn building_count(&self) -> usize {
        let km2 = (self.area_side / 1000.0).powi(2);
        (self.beta * km2).round() as usize
    }

    /// Side of each square footprint (m): `1000·√(α/β)`.
    pub fn building_side(&self) -> f64 {
        1000.0 * (self.alpha / self.beta).sqrt()
    }

    /// Rayleigh scale giving a distribution mean of `lambda`.
    pub fn rayleigh_scale(&self) -> f64 {
        self.lambda / (std::f64::consts::PI / 2.0).sqrt()
    }
}

/// A building: square-ish footprint extruded from the ground to `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub center: [f64; 2],
    pub half_extent: [f64; 2],
    pub height: f64,
}

impl Building {
    pub fn min_corner(&self) -> Point3 {
        Point3::new(
            self.center[0] - self.half_extent[0],
            self.center[1] - self.half_extent[1],
            0.0,
        )
    }

    pub fn max_corner(&self) -> Point3 {
        Point3::new(
            self.center[0] + self.half_extent[0],
            self.center[1] + self.half_extent[1],
            self.height,
        )
    }

    /// True when `(x, y)` lies strictly inside the footprint.
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        (x - self.center[0]).abs() < self.half_extent[0]
            && (y - self.center[1]).abs() < self.half_extent[1]
    }

    pub fn footprint_area(&self) -> f64 {
        4.0 * self.half_extent[0] * self.half_extent[1]
    }

    /// Does the open segment `a → b` pass through the interior of this box?
    ///
    /// Slab test: clip the parameter interval `[0, 1]` against each axis
    /// slab; blocked when a chord of positive length survives.
    pub fn blocks(&self, a: &Point3, b: &Point3) -> bool {
        let lo = self.min_corner();
        let hi = self.max_corner();
        let mut t_enter: f64 = 0.0;
        let mut t_exit: f64 = 1.0;
        for axis in 0..3 {
            let origin = a.coord(axis);
            let dir = b.coord(axis) - origin;
            let (min, max) = (lo.coord(axis), hi.coord(axis));
            if dir.abs() < 1e-15 {
                if origin <= min || origin >= max {
                    return false;
                }
                continue;
            }
            let inv = 1.0 / dir;
            let (mut t0, mut t1) = ((min - origin) * inv, (max - origin) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
            if t_exit - t_enter <= SLAB_EPS {
                return false;
            }
        }
        true
    }
}

/// Generated city plus the ground-terminal layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrbanMap {
    pub params: EnvParams,
    pub seed: u64,
    pub buildings: Vec<Building>,
    /// Ground terminal positions (`z = 0`).
    pub gts: Vec<Point3>,
}

/// Draws one Rayleigh height with mean `lambda`, before clipping.
pub fn sample_raw_height<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    let scale = lambda / (std::f64::consts::PI / 2.0).sqrt();
    let u: f64 = rng.random();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Builds the city for `(params, seed)`; no ground terminals yet.
///
/// `round(β·A)` buildings are assigned to distinct cells of the smallest
/// square grid that can hold them. Each footprint is a square of side
/// `1000·√(α/β)` jittered uniformly inside its cell.
pub fn generate_buildings(params: &EnvParams, seed: u64) -> Result<UrbanMap, EnvError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = params.building_count();
    let mut buildings = Vec::with_capacity(count);
    if count > 0 {
        let per_side = (count as f64).sqrt().ceil() as usize;
        let cell = params.area_side / per_side as f64;
        let side = params.building_side();
        if side > cell {
            return Err(EnvError::InconsistentDensity { side, cell });
        }
        let mut cells: Vec<usize> = (0..per_side * per_side).collect();
        cells.shuffle(&mut rng);
        cells.truncate(count);
        cells.sort_unstable();
        let half = side / 2.0;
        let slack = cell - side;
        let [h_min, h_max] = params.height_clip;
        for idx in cells {
            let (col, row) = (idx % per_side, idx / per_side);
            let cx = col as f64 * cell + half + slack * rng.random::<f64>();
            let cy = row as f64 * cell + half + slack * rng.random::<f64>();
            let height = sample_raw_height(&mut rng, params.lambda).clamp(h_min, h_max);
            buildings.push(Building {
                center: [cx, cy],
                half_extent: [half, half],
                height,
            });
        }
    }
    Ok(UrbanMap {
        params: params.clone(),
        seed,
        buildings,
        gts: Vec::new(),
    })
}

/// Replaces the map's ground terminals with `k` outdoor positions drawn
/// uniformly over the area.
pub fn place_gts(mut map: UrbanMap, k: usize, seed: u64) -> Result<UrbanMap, EnvError> {
    if k == 0 {
        return Err(EnvError::InvalidParams("num_gts must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = map.params.area_side;
    let mut gts = Vec::with_capacity(k);
    for index in 0..k {
        let mut placed = None;
        for _ in 0..MAX_GT_REJECTIONS {
            let x = rng.random::<f64>() * side;
            let y = rng.random::<f64>() * side;
            if !map.is_indoor(x, y) {
                placed = Some(Point3::ground(x, y));
                break;
            }
        }
        match placed {
            Some(p) => gts.push(p),
            None => {
                return Err(EnvError::NoOutdoorSpace {
                    index,
                    attempts: MAX_GT_REJECTIONS,
                })
            }
        }
    }
    map.gts = gts;
    map.params.num_gts = k;
    Ok(map)
}

/// Buildings plus `params.num_gts` terminals; GT seed is derived from `seed`.
pub fn generate_map(params: &EnvParams, seed: u64, gt_seed: u64) -> Result<UrbanMap, EnvError> {
    let map = generate_buildings(params, seed)?;
    place_gts(map, params.num_gts, gt_seed)
}

/// Line-of-sight between two points: no building box cuts the open segment.
pub fn is_los(a: &Point3, b: &Point3, map: &UrbanMap) -> bool {
    map.is_los(a, b)
}

impl UrbanMap {
    pub fn side(&self) -> f64 {
        self.params.area_side
    }

    pub fn num_gts(&self) -> usize {
        self.gts.len()
    }

    pub fn is_indoor(&self, x: f64, y: f64) -> bool {
        self.buildings.iter().any(|b| b.footprint_contains(x, y))
    }

    pub fn is_los(&self, a: &Point3, b: &Point3) -> bool {
        let (x_lo, x_hi) = (a.x.min(b.x), a.x.max(b.x));
        let (y_lo, y_hi) = (a.y.min(b.y), a.y.max(b.y));
        let z_lo = a.z.min(b.z);
        !self.buildings.iter().any(|bld| {
            // Cheap bounding-box reject before the slab test.
            let lo = bld.min_corner();
            let hi = bld.max_corner();
            if x_hi < lo.x || x_lo > hi.x || y_hi < lo.y || y_lo > hi.y || z_lo > hi.z {
                return false;
            }
            bld.blocks(a, b)
        })
    }

    pub fn built_fraction(&self) -> f64 {
        let area: f64 = self.buildings.iter().map(Building::footprint_area).sum();
        area / (self.side() * self.side())
    }

    pub fn max_height(&self) -> f64 {
        self.buildings.iter().map(|b| b.height).fold(0.0, f64::max)
    }

    pub fn to_toml(&self) -> Result<String, EnvError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, EnvError> {
        let map: UrbanMap = toml::from_str(text)?;
        map.params.validate()?;
        Ok(map)
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_params() -> EnvParams {
        EnvParams::default()
    }

    #[test]
    fn reference_map_has_144_buildings_with_clipped_heights() {
        let map = generate_buildings(&reference_params(), 7).unwrap();
        assert_eq!(map.buildings.len(), 144);
        for b in &map.buildings {
            assert!((10.0..=50.0).contains(&b.height));
            let lo = b.min_corner();
            let hi = b.max_corner();
            assert!(lo.x >= 0.0 && lo.y >= 0.0 && hi.x <= 1000.0 && hi.y <= 1000.0);
        }
        assert!((map.built_fraction() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn raw_height_mean_matches_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_raw_height(&mut rng, 50.0)).sum::<f64>() / n as f64;
        assert!((47.5..=52.5).contains(&mean), "mean {mean}");
    }

    #[test]
    fn inconsistent_density_is_rejected() {
        let params = EnvParams {
            alpha: 0.95,
            beta: 10_000.0,
            ..reference_params()
        };
        // side = 1000·√(0.95/10⁴) = 9.75 m, cell = 1000/100 = 10 m: fits.
        assert!(generate_buildings(&params, 0).is_ok());
        let params = EnvParams {
            alpha: 0.9,
            beta: 150.0,
            ..reference_params()
        };
        // 150 buildings → 13×13 grid of 76.9 m cells, side 77.5 m.
        assert!(matches!(
            generate_buildings(&params, 0),
            Err(EnvError::InconsistentDensity { .. })
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        for params in [
            EnvParams { alpha: 0.0, ..reference_params() },
            EnvParams { alpha: 1.0, ..reference_params() },
            EnvParams { beta: 0.0, ..reference_params() },
            EnvParams { height_clip: [50.0, 10.0], ..reference_params() },
            EnvParams { z_bounds: [125.0, 75.0], ..reference_params() },
            EnvParams { num_gts: 0, ..reference_params() },
        ] {
            assert!(matches!(
                generate_buildings(&params, 1),
                Err(EnvError::InvalidParams(_))
            ));
        }
    }

    #[test]
    fn tiny_alpha_never_blocks() {
        let params = EnvParams {
            alpha: 1e-12,
            ..reference_params()
        };
        let map = generate_buildings(&params, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let a = Point3::new(rng.random::<f64>() * 1000.0, rng.random::<f64>() * 1000.0, 1.0 + rng.random::<f64>() * 100.0);
            let b = Point3::new(rng.random::<f64>() * 1000.0, rng.random::<f64>() * 1000.0, 1.0 + rng.random::<f64>() * 100.0);
            assert!(map.is_los(&a, &b));
        }
    }

    #[test]
    fn gts_are_outdoor_and_deterministic() {
        let map = generate_buildings(&reference_params(), 1).unwrap();
        let a = place_gts(map.clone(), 40, 99).unwrap();
        let b = place_gts(map, 40, 99).unwrap();
        assert_eq!(a.gts, b.gts);
        assert_eq!(a.gts.len(), 40);
        for g in &a.gts {
            assert!(!a.is_indoor(g.x, g.y));
            assert!((0.0..=1000.0).contains(&g.x) && (0.0..=1000.0).contains(&g.y));
            assert_eq!(g.z, 0.0);
        }
    }

    #[test]
    fn single_gt_on_empty_map() {
        let map = UrbanMap {
            params: reference_params(),
            seed: 0,
            buildings: vec![],
            gts: vec![],
        };
        let map = place_gts(map, 1, 4).unwrap();
        assert_eq!(map.gts.len(), 1);
    }

    #[test]
    fn no_room_for_gts_fails() {
        let params = reference_params();
        let map = UrbanMap {
            buildings: vec![Building {
                center: [500.0, 500.0],
                half_extent: [501.0, 501.0],
                height: 30.0,
            }],
            params,
            seed: 0,
            gts: vec![],
        };
        assert!(matches!(
            place_gts(map, 1, 0),
            Err(EnvError::NoOutdoorSpace { index: 0, .. })
        ));
    }

    #[test]
    fn segment_through_box_interior_is_blocked() {
        let b = Building {
            center: [50.0, 50.0],
            half_extent: [10.0, 10.0],
            height: 50.0,
        };
        let map = UrbanMap {
            params: reference_params(),
            seed: 0,
            buildings: vec![b],
            gts: vec![],
        };
        // Horizontal segment at 30 m height crossing the box.
        assert!(!map.is_los(&Point3::new(0.0, 50.0, 30.0), &Point3::new(100.0, 50.0, 30.0)));
        // Same segment above the roof.
        assert!(map.is_los(&Point3::new(0.0, 50.0, 60.0), &Point3::new(100.0, 50.0, 60.0)));
        // Vertical segment next to the building.
        assert!(map.is_los(&Point3::new(70.0, 50.0, 0.0), &Point3::new(70.0, 50.0, 100.0)));
        // Grazing the roof edge exactly.
        assert!(map.is_los(&Point3::new(0.0, 50.0, 50.0), &Point3::new(100.0, 50.0, 50.0)));
    }

    #[test]
    fn overhead_is_always_los() {
        let map = generate_map(&reference_params(), 2, 3).unwrap();
        for g in &map.gts {
            assert!(map.is_los(&Point3::new(g.x, g.y, 75.0), g));
        }
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let map = generate_map(&reference_params(), 8, 9).unwrap();
        let back = UrbanMap::from_toml(&map.to_toml().unwrap()).unwrap();
        assert_eq!(map, back);
    }
}
