//! Deterministic 2D egocentric sidewalk simulator.
//!
//! The agent walks a narrow sidewalk toward a goal at the far end. A street
//! strip runs along the whole length; stepping into it ends the episode with
//! zero reward and no distinguishing signal, exactly like a timeout. The
//! observation is a forward-facing raycast view over a 90 degree frustum:
//! blocking cells (wall, street, goal) render as distance-scaled color slabs
//! over a sky/floor background.

use crate::error::{FearError, Result};
use crate::numcore::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Flat colors of the renderer, RGB in [0,1].
pub const COLOR_SIDEWALK: [f32; 3] = [0.45, 0.45, 0.45];
pub const COLOR_STREET: [f32; 3] = [0.85, 0.10, 0.10];
pub const COLOR_WALL: [f32; 3] = [0.50, 0.35, 0.20];
pub const COLOR_GOAL: [f32; 3] = [0.10, 0.80, 0.15];
pub const COLOR_SKY: [f32; 3] = [0.10, 0.15, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Heading {
    N,
    E,
    S,
    W,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::N, Heading::E, Heading::S, Heading::W];

    /// Unit step in grid coordinates; y grows toward the street.
    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::N => (0, -1),
            Heading::E => (1, 0),
            Heading::S => (0, 1),
            Heading::W => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        match self {
            Heading::N => Heading::W,
            Heading::W => Heading::S,
            Heading::S => Heading::E,
            Heading::E => Heading::N,
        }
    }

    pub fn right(self) -> Heading {
        match self {
            Heading::N => Heading::E,
            Heading::E => Heading::S,
            Heading::S => Heading::W,
            Heading::W => Heading::N,
        }
    }

    fn angle(self) -> f32 {
        let (dx, dy) = self.delta();
        (dy as f32).atan2(dx as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::Forward];

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| FearError::Index(format!("action index {i}")))
    }

    pub fn index(self) -> usize {
        Action::ALL.iter().position(|&a| a == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: i32,
    pub y: i32,
    pub heading: Heading,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    None,
    Goal,
    Street,
    Timeout,
}

impl std::fmt::Display for Cause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Cause::None => "none",
            Cause::Goal => "goal",
            Cause::Street => "street",
            Cause::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Tensor,
    pub reward: f32,
    pub done: bool,
    pub cause: Cause,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldConfig {
    /// Sidewalk length in cells (x axis).
    pub length: usize,
    /// Sidewalk width in cells (y axis); the street strip sits at y >= width.
    pub width: usize,
    pub max_steps: usize,
    pub obs_channels: usize,
    pub obs_height: usize,
    pub obs_width: usize,
    /// Visible frustum depth in cells.
    pub frustum_depth: f32,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            length: 12,
            width: 3,
            max_steps: 150,
            obs_channels: 3,
            obs_height: 32,
            obs_width: 32,
            frustum_depth: 5.0,
        }
    }
}

impl WorldConfig {
    pub fn goal_cell(&self) -> (i32, i32) {
        (self.length as i32 - 1, self.width as i32 / 2)
    }

    pub fn obs_shape(&self) -> crate::slstm::ObsShape {
        crate::slstm::ObsShape {
            channels: self.obs_channels,
            height: self.obs_height,
            width: self.obs_width,
        }
    }

    /// FNV-1a over the geometry fields; persisted with datasets so a file
    /// generated under one world cannot silently load under another.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.length as u64);
        eat(self.width as u64);
        eat(self.max_steps as u64);
        eat(self.obs_channels as u64);
        eat(self.obs_height as u64);
        eat(self.obs_width as u64);
        eat(self.frustum_depth.to_bits() as u64);
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Sidewalk,
    Street,
    Wall,
    Goal,
}

impl Cell {
    fn blocks_view(self) -> bool {
        !matches!(self, Cell::Sidewalk)
    }

    fn color(self) -> [f32; 3] {
        match self {
            Cell::Sidewalk => COLOR_SIDEWALK,
            Cell::Street => COLOR_STREET,
            Cell::Wall => COLOR_WALL,
            Cell::Goal => COLOR_GOAL,
        }
    }
}

pub fn cell_at(cfg: &WorldConfig, x: i32, y: i32) -> Cell {
    if y >= cfg.width as i32 {
        Cell::Street
    } else if y < 0 || x < 0 || x >= cfg.length as i32 {
        Cell::Wall
    } else if (x, y) == cfg.goal_cell() {
        Cell::Goal
    } else {
        Cell::Sidewalk
    }
}

pub struct SidewalkEnv {
    pub cfg: WorldConfig,
    pose: AgentPose,
    steps: usize,
    done: bool,
}

impl SidewalkEnv {
    pub fn new(cfg: WorldConfig) -> Self {
        let pose = AgentPose { x: 0, y: 0, heading: Heading::E };
        SidewalkEnv { cfg, pose, steps: 0, done: false }
    }

    /// Starts an episode at a fixed pose. Scripted dataset generation and
    /// tests use this; learning runs go through `reset`.
    pub fn from_pose(cfg: WorldConfig, pose: AgentPose) -> Result<Self> {
        if cell_at(&cfg, pose.x, pose.y) != Cell::Sidewalk {
            return Err(FearError::contract(format!("pose {pose:?} not on a sidewalk cell")));
        }
        Ok(SidewalkEnv { cfg, pose, steps: 0, done: false })
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Seeded respawn: uniform over sidewalk cells (goal excluded) and
    /// headings. Returns the first observation.
    pub fn reset(&mut self, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let goal = self.cfg.goal_cell();
        loop {
            let x = rng.gen_range(0..self.cfg.length as i32);
            let y = rng.gen_range(0..self.cfg.width as i32);
            if (x, y) == goal {
                continue;
            }
            let heading = Heading::ALL[rng.gen_range(0..4)];
            self.pose = AgentPose { x, y, heading };
            break;
        }
        self.steps = 0;
        self.done = false;
        self.render_observation(self.pose)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(FearError::contract("step called after episode end"));
        }
        self.steps += 1;
        let mut reward = 0.0f32;
        let mut cause = Cause::None;
        match action {
            Action::TurnLeft => self.pose.heading = self.pose.heading.left(),
            Action::TurnRight => self.pose.heading = self.pose.heading.right(),
            Action::Forward => {
                let (dx, dy) = self.pose.heading.delta();
                let (nx, ny) = (self.pose.x + dx, self.pose.y + dy);
                match cell_at(&self.cfg, nx, ny) {
                    Cell::Wall => {} // bump
                    Cell::Sidewalk => {
                        self.pose.x = nx;
                        self.pose.y = ny;
                    }
                    Cell::Street => {
                        self.pose.x = nx;
                        self.pose.y = ny;
                        self.done = true;
                        cause = Cause::Street;
                    }
                    Cell::Goal => {
                        self.pose.x = nx;
                        self.pose.y = ny;
                        self.done = true;
                        cause = Cause::Goal;
                        reward = 1.0 - self.steps as f32 / self.cfg.max_steps as f32;
                    }
                }
            }
        }
        if !self.done && self.steps >= self.cfg.max_steps {
            self.done = true;
            cause = Cause::Timeout;
        }
        Ok(StepResult {
            observation: self.render_observation(self.pose),
            reward,
            done: self.done,
            cause,
        })
    }

    /// Egocentric forward view; a pure function of the pose.
    pub fn render_observation(&self, pose: AgentPose) -> Tensor {
        render_observation(&self.cfg, pose)
    }
}

/// Raycast renderer: one ray per image column across a 90 degree field of
/// view, grid-traversed out to the frustum depth. A blocking cell paints a
/// vertical slab with half-height proportional to 1/distance
/// (perpendicular-corrected); sky above, sidewalk floor below.
pub fn render_observation(cfg: &WorldConfig, pose: AgentPose) -> Tensor {
    let (h, w) = (cfg.obs_height, cfg.obs_width);
    let mut data = vec![0.0f32; 3 * h * w];
    let ox = pose.x as f32 + 0.5;
    let oy = pose.y as f32 + 0.5;
    let phi = pose.heading.angle();
    let horizon = h as f32 / 2.0;
    for col in 0..w {
        let theta = (-45.0 + 90.0 * (col as f32 + 0.5) / w as f32).to_radians();
        let ang = phi + theta;
        let (dx, dy) = (ang.cos(), ang.sin());
        let hit = cast_ray(cfg, ox, oy, dx, dy, cfg.frustum_depth);
        let (top, bot, color) = match hit {
            Some((t, cell)) => {
                let d_perp = (t * theta.cos()).max(1e-3);
                let half = (horizon / d_perp).min(horizon);
                let top = ((horizon - half).round().max(0.0)) as usize;
                let bot = ((horizon + half).round().min(h as f32)) as usize;
                (top, bot, cell.color())
            }
            None => (horizon as usize, horizon as usize, COLOR_SKY),
        };
        for row in 0..h {
            let c = if row < top {
                COLOR_SKY
            } else if row < bot {
                color
            } else {
                COLOR_SIDEWALK
            };
            for (ch, &v) in c.iter().enumerate() {
                data[(ch * h + row) * w + col] = v;
            }
        }
    }
    Tensor::new(vec![3, h, w], data).expect("observation buffer")
}

/// Amanatides-Woo grid traversal from (ox, oy) along (dx, dy); returns the
/// entry distance and type of the first view-blocking cell within `depth`.
fn cast_ray(cfg: &WorldConfig, ox: f32, oy: f32, dx: f32, dy: f32, depth: f32) -> Option<(f32, Cell)> {
    let mut cx = ox.floor() as i32;
    let mut cy = oy.floor() as i32;
    let step_x: i32 = if dx >= 0.0 { 1 } else { -1 };
    let step_y: i32 = if dy >= 0.0 { 1 } else { -1 };
    let t_delta_x = if dx.abs() < 1e-9 { f32::INFINITY } else { 1.0 / dx.abs() };
    let t_delta_y = if dy.abs() < 1e-9 { f32::INFINITY } else { 1.0 / dy.abs() };
    let mut t_max_x = if dx.abs() < 1e-9 {
        f32::INFINITY
    } else if dx > 0.0 {
        (cx as f32 + 1.0 - ox) / dx
    } else {
        (ox - cx as f32) / -dx
    };
    let mut t_max_y = if dy.abs() < 1e-9 {
        f32::INFINITY
    } else if dy > 0.0 {
        (cy as f32 + 1.0 - oy) / dy
    } else {
        (oy - cy as f32) / -dy
    };
    loop {
        let t = t_max_x.min(t_max_y);
        if t > depth {
            return None;
        }
        if t_max_x < t_max_y {
            cx += step_x;
            t_max_x += t_delta_x;
        } else {
            cy += step_y;
            t_max_y += t_delta_y;
        }
        let cell = cell_at(cfg, cx, cy);
        if cell.blocks_view() {
            return Some((t, cell));
        }
    }
}

/// Fraction of pixels whose RGB matches `color` exactly, optionally limited
/// to a row range. The renderer paints flat colors, so exact matching works.
pub fn color_fraction(obs: &Tensor, color: [f32; 3], rows: Option<std::ops::Range<usize>>) -> f32 {
    let h = obs.shape[1];
    let w = obs.shape[2];
    let rows = rows.unwrap_or(0..h);
    let mut matches = 0usize;
    let mut total = 0usize;
    for row in rows {
        for col in 0..w {
            total += 1;
            let px = [
                obs.data[(row) * w + col],
                obs.data[(h + row) * w + col],
                obs.data[(2 * h + row) * w + col],
            ];
            if px == color {
                matches += 1;
            }
        }
    }
    matches as f32 / total.max(1) as f32
}
