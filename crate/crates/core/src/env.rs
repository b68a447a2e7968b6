//! Reward-free continuous environments with functional reset/step.
//!
//! * [`GridWorld`]: four 5×5 rooms joined by four unit-width hallways; moves
//!   of at most 0.2 per axis, and a move whose straight segment touches a
//!   wall is discarded.
//! * [`MountainCar`]: the continuous mountain-car dynamics with a wall on
//!   top of the right hill, so there is no terminal state.
//! * [`NdGrid`]: an open `[0, L]^d` box with per-axis clamping.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::math::cos;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub step_index: usize,
}

/// Two observation axes and a fixed box used for heatmaps and the
/// discretized entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialView {
    pub dims: [usize; 2],
    pub low: [f64; 2],
    pub high: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    /// Inclusive observation bounds.
    pub obs_low: Vec<f64>,
    pub obs_high: Vec<f64>,
    /// Observation dimensions the entropy is measured over.
    pub entropy_features: Vec<usize>,
    pub spatial: Option<SpatialView>,
}

impl EnvSpec {
    pub fn contains(&self, obs: &[f64]) -> bool {
        obs.len() == self.obs_dim
            && obs
                .iter()
                .zip(self.obs_low.iter().zip(&self.obs_high))
                .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }
}

pub trait Environment: Send + Sync {
    fn spec(&self) -> &EnvSpec;
    fn reset(&self, rng: &mut dyn RngCore) -> EnvState;
    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState;
}

#[inline]
fn clamp_or_zero(x: f64, lo: f64, hi: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(lo, hi)
    }
}

#[inline]
fn uniform_in(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        lo + (hi - lo) * rng.random::<f64>()
    } else {
        lo
    }
}

// --------------------------------------------------------------------------
// GridWorld

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub const fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }

    /// Closed-segment intersection; touching endpoints and collinear
    /// overlap both count.
    pub fn intersects(&self, other: &Segment) -> bool {
        let (p1, p2, q1, q2) = (self.a, self.b, other.a, other.b);
        let d1 = orient(q1, q2, p1);
        let d2 = orient(q1, q2, p2);
        let d3 = orient(p1, p2, q1);
        let d4 = orient(p1, p2, q2);
        if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
            && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
        {
            return true;
        }
        (d1 == 0.0 && on_segment(q1, q2, p1))
            || (d2 == 0.0 && on_segment(q1, q2, p2))
            || (d3 == 0.0 && on_segment(p1, p2, q1))
            || (d4 == 0.0 && on_segment(p1, p2, q2))
    }
}

#[inline]
fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

#[inline]
fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorldLayout {
    pub width: f64,
    pub height: f64,
    pub walls: Vec<Segment>,
    pub start_low: [f64; 2],
    pub start_high: [f64; 2],
    pub max_step: f64,
}

impl GridWorldLayout {
    /// Four 5×5 rooms on a 10×10 map. Each shared wall has a hallway of
    /// width 1 centred on it; the start region is the unit square in the
    /// middle of the bottom-left room.
    ///
    /// ```text
    ///  y=10 +-----------+-----------+
    ///       |    TL    7-8    TR    |
    ///  y=5  +--2-3------+------7-8--+
    ///       |    BL    2-3    BR    |
    ///  y=0  +-----------+-----------+
    ///      x=0         x=5        x=10
    /// ```
    pub fn four_rooms() -> Self {
        let s = Segment::new;
        let walls = vec![
            // outer boundary
            s([0.0, 0.0], [10.0, 0.0]),
            s([10.0, 0.0], [10.0, 10.0]),
            s([10.0, 10.0], [0.0, 10.0]),
            s([0.0, 10.0], [0.0, 0.0]),
            // x = 5, hallways at y ∈ [2,3] and [7,8]
            s([5.0, 0.0], [5.0, 2.0]),
            s([5.0, 3.0], [5.0, 7.0]),
            s([5.0, 8.0], [5.0, 10.0]),
            // y = 5, hallways at x ∈ [2,3] and [7,8]
            s([0.0, 5.0], [2.0, 5.0]),
            s([3.0, 5.0], [7.0, 5.0]),
            s([8.0, 5.0], [10.0, 5.0]),
        ];
        GridWorldLayout {
            width: 10.0,
            height: 10.0,
            walls,
            start_low: [2.0, 2.0],
            start_high: [3.0, 3.0],
            max_step: 0.2,
        }
    }

    /// A single square room with only the outer walls; start region is the
    /// central unit square.
    pub fn single_room(size: f64) -> Self {
        let s = Segment::new;
        let c = size / 2.0;
        GridWorldLayout {
            width: size,
            height: size,
            walls: vec![
                s([0.0, 0.0], [size, 0.0]),
                s([size, 0.0], [size, size]),
                s([size, size], [0.0, size]),
                s([0.0, size], [0.0, 0.0]),
            ],
            start_low: [c - 0.5, c - 0.5],
            start_high: [c + 0.5, c + 0.5],
            max_step: 0.2,
        }
    }

    /// Index of the room (0 = bottom-left, 1 = bottom-right, 2 = top-left,
    /// 3 = top-right) containing a four-rooms position.
    pub fn room_of(&self, pos: [f64; 2]) -> usize {
        let right = pos[0] >= self.width / 2.0;
        let top = pos[1] >= self.height / 2.0;
        (right as usize) + 2 * (top as usize)
    }
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    layout: GridWorldLayout,
    spec: EnvSpec,
}

impl GridWorld {
    pub fn new(layout: GridWorldLayout) -> Self {
        let m = layout.max_step;
        let spec = EnvSpec {
            obs_dim: 2,
            action_dim: 2,
            action_low: vec![-m; 2],
            action_high: vec![m; 2],
            obs_low: vec![0.0, 0.0],
            obs_high: vec![layout.width, layout.height],
            entropy_features: vec![0, 1],
            spatial: Some(SpatialView {
                dims: [0, 1],
                low: [0.0, 0.0],
                high: [layout.width, layout.height],
            }),
        };
        GridWorld { layout, spec }
    }

    pub fn four_rooms() -> Self {
        GridWorld::new(GridWorldLayout::four_rooms())
    }

    pub fn layout(&self) -> &GridWorldLayout {
        &self.layout
    }

    /// True when moving in a straight line between the points touches a wall.
    pub fn blocked(&self, from: [f64; 2], to: [f64; 2]) -> bool {
        let path = Segment::new(from, to);
        self.layout.walls.iter().any(|w| path.intersects(w))
    }
}

impl Environment for GridWorld {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let l = &self.layout;
        let x = uniform_in(rng, l.start_low[0], l.start_high[0]);
        let y = uniform_in(rng, l.start_low[1], l.start_high[1]);
        EnvState {
            observation: vec![x, y],
            step_index: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState {
        let m = self.layout.max_step;
        let from = [state.observation[0], state.observation[1]];
        let to = [
            from[0] + clamp_or_zero(action[0], -m, m),
            from[1] + clamp_or_zero(action[1], -m, m),
        ];
        let next = if to == from || self.blocked(from, to) {
            from
        } else {
            to
        };
        EnvState {
            observation: next.to_vec(),
            step_index: state.step_index + 1,
        }
    }
}

// --------------------------------------------------------------------------
// MountainCar

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MountainCarParams {
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
    pub power: f64,
    pub gravity: f64,
    pub reset_low: f64,
    pub reset_high: f64,
}

impl Default for MountainCarParams {
    fn default() -> Self {
        MountainCarParams {
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
            power: 0.0015,
            gravity: 0.0025,
            reset_low: -0.6,
            reset_high: -0.4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    params: MountainCarParams,
    spec: EnvSpec,
}

impl MountainCar {
    pub fn new(params: MountainCarParams) -> Self {
        let spec = EnvSpec {
            obs_dim: 2,
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            obs_low: vec![params.min_position, -params.max_speed],
            obs_high: vec![params.max_position, params.max_speed],
            entropy_features: vec![0, 1],
            spatial: Some(SpatialView {
                dims: [0, 1],
                low: [params.min_position, -params.max_speed],
                high: [params.max_position, params.max_speed],
            }),
        };
        MountainCar { params, spec }
    }

    pub fn params(&self) -> &MountainCarParams {
        &self.params
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        MountainCar::new(MountainCarParams::default())
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let p = &self.params;
        EnvState {
            observation: vec![uniform_in(rng, p.reset_low, p.reset_high), 0.0],
            step_index: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState {
        let p = &self.params;
        let (mut x, mut v) = (state.observation[0], state.observation[1]);
        let force = clamp_or_zero(action[0], -1.0, 1.0);
        v += force * p.power - p.gravity * cos(3.0 * x);
        v = v.clamp(-p.max_speed, p.max_speed);
        x += v;
        x = x.clamp(p.min_position, p.max_position);
        if (x == p.min_position && v < 0.0) || (x == p.max_position && v > 0.0) {
            v = 0.0;
        }
        EnvState {
            observation: vec![x, v],
            step_index: state.step_index + 1,
        }
    }
}

// --------------------------------------------------------------------------
// N-dimensional GridWorld

#[derive(Debug, Clone)]
pub struct NdGrid {
    side: f64,
    max_step: f64,
    start_low: f64,
    start_high: f64,
    spec: EnvSpec,
}

impl NdGrid {
    /// `[0, side]^dim` with the start region the unit hypercube at the centre.
    pub fn new(dim: usize, side: f64) -> Self {
        let c = side / 2.0;
        NdGrid::with_start(dim, side, c - 0.5, c + 0.5)
    }

    pub fn with_start(dim: usize, side: f64, start_low: f64, start_high: f64) -> Self {
        let spec = EnvSpec {
            obs_dim: dim,
            action_dim: dim,
            action_low: vec![-0.2; dim],
            action_high: vec![0.2; dim],
            obs_low: vec![0.0; dim],
            obs_high: vec![side; dim],
            entropy_features: (0..dim).collect(),
            spatial: (dim >= 2).then_some(SpatialView {
                dims: [0, 1],
                low: [0.0, 0.0],
                high: [side, side],
            }),
        };
        NdGrid {
            side,
            max_step: 0.2,
            start_low,
            start_high,
            spec,
        }
    }

    pub fn dim(&self) -> usize {
        self.spec.obs_dim
    }
}

impl Environment for NdGrid {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let observation = (0..self.dim())
            .map(|_| uniform_in(rng, self.start_low, self.start_high))
            .collect();
        EnvState {
            observation,
            step_index: 0,
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState {
        let m = self.max_step;
        let observation = state
            .observation
            .iter()
            .zip(action)
            .map(|(x, a)| (x + clamp_or_zero(*a, -m, m)).clamp(0.0, self.side))
            .collect();
        EnvState {
            observation,
            step_index: state.step_index + 1,
        }
    }
}

// --------------------------------------------------------------------------

/// Any of the built-in environments.
#[derive(Debug, Clone)]
pub enum Env {
    GridWorld(GridWorld),
    MountainCar(MountainCar),
    NdGrid(NdGrid),
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        match self {
            Env::GridWorld(e) => e.spec(),
            Env::MountainCar(e) => e.spec(),
            Env::NdGrid(e) => e.spec(),
        }
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        match self {
            Env::GridWorld(e) => e.reset(rng),
            Env::MountainCar(e) => e.reset(rng),
            Env::NdGrid(e) => e.reset(rng),
        }
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState {
        match self {
            Env::GridWorld(e) => e.step(state, action),
            Env::MountainCar(e) => e.step(state, action),
            Env::NdGrid(e) => e.step(state, action),
        }
    }
}
