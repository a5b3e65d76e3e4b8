//! Couch Moving: a rectangular couch pushed by a planar force and torque
//! through a grid maze of chambers, corridors and corners.
//!
//! Maze layout (per corner, in the frame of the current heading `h` and the
//! turn direction `x`):
//!
//! ```text
//!   chamber (3x3) -> two-lane corridor along h (lanes 0 and +x)
//!                 -> corner cell K -> one-lane leg along x -> next chamber
//! ```
//!
//! The couch fits the two-lane corridor only with its long axis across it and
//! the one-lane legs only with its long axis along them, so it must rotate in
//! the chamber before the corridor that leads to a corner.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, wrap_angle, Aabb, Obb, Vec2};
use crate::state::{ActionVec, LowState};

pub type Cell = [i32; 2];

const DIRS: [Cell; 4] = [[1, 0], [0, 1], [-1, 0], [0, -1]];

/// Cells of one-lane leg between a corner and the next chamber edge.
const LEG_CELLS: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MazeVariant {
    Short,
    Long,
}

impl MazeVariant {
    /// Inclusive corridor length range in cells.
    pub fn length_range(self) -> (i32, i32) {
        match self {
            MazeVariant::Short => (3, 5),
            MazeVariant::Long => (5, 7),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MazeVariant::Short => "short",
            MazeVariant::Long => "long",
        }
    }
}

impl std::str::FromStr for MazeVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "short" => Ok(MazeVariant::Short),
            "long" => Ok(MazeVariant::Long),
            other => Err(Error::config(format!("unknown maze variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corner {
    pub cell: Cell,
    /// Index of the corner cell in [`Maze::path`].
    pub path_index: usize,
    pub entry: Cell,
    pub exit: Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maze {
    pub variant: MazeVariant,
    pub n_corners: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Row-major, row 0 at `y = 0`; 1 = wall.
    pub walls: Vec<u8>,
    pub path: Vec<Cell>,
    pub chambers: Vec<Cell>,
    pub corners: Vec<Corner>,
    /// Per path cell, unit direction towards the next path cell.
    pub forward: Vec<Cell>,
    /// Corridor lengths drawn for this maze (one per corner plus the final leg).
    pub corridor_lengths: Vec<i32>,
    pub start_heading: Cell,
}

fn cadd(a: Cell, b: Cell) -> Cell {
    [a[0] + b[0], a[1] + b[1]]
}

fn cmul(a: Cell, k: i32) -> Cell {
    [a[0] * k, a[1] * k]
}

pub fn cell_center(c: Cell) -> Vec2 {
    [c[0] as f64 + 0.5, c[1] as f64 + 0.5]
}

fn turn(h: Cell, left: bool) -> Cell {
    if left {
        [-h[1], h[0]]
    } else {
        [h[1], -h[0]]
    }
}

struct Layout {
    /// (cell, section) in carve order.
    cells: Vec<(Cell, usize)>,
    path: Vec<Cell>,
    chambers: Vec<Cell>,
    corners: Vec<Corner>,
    lengths: Vec<i32>,
    heading: Cell,
}

impl Layout {
    fn carve(&mut self, c: Cell, section: usize) {
        self.cells.push((c, section));
    }

    fn chamber(&mut self, center: Cell, section: usize) {
        for dy in -1..=1 {
            for dx in -1..=1 {
                self.carve(cadd(center, [dx, dy]), section);
            }
        }
        self.chambers.push(center);
    }

    /// Cells from sections at least two apart must not touch, so every
    /// corridor keeps its walls.
    fn is_valid(&self) -> bool {
        use std::collections::HashMap;
        let mut owner: HashMap<Cell, usize> = HashMap::new();
        for &(c, s) in &self.cells {
            match owner.get(&c) {
                Some(&o) if o.abs_diff(s) >= 2 => return false,
                Some(_) => {}
                None => {
                    owner.insert(c, s);
                }
            }
        }
        for (&c, &s) in &owner {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(&o) = owner.get(&cadd(c, [dx, dy])) {
                        if o.abs_diff(s) >= 2 {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

fn layout(variant: MazeVariant, n_corners: usize, rng: &mut ChaCha8Rng) -> Layout {
    let (lo, hi) = variant.length_range();
    let mut h = DIRS[rng.random_range(0..4)];
    let mut lay = Layout {
        cells: Vec::new(),
        path: Vec::new(),
        chambers: Vec::new(),
        corners: Vec::new(),
        lengths: Vec::new(),
        heading: h,
    };
    let mut section = 0;
    let mut p: Cell = [0, 0];
    lay.chamber(p, section);
    lay.path.push(p);
    for i in 0..n_corners {
        let x = turn(h, rng.random_bool(0.5));
        let len = rng.random_range(lo..=hi);
        lay.lengths.push(len);
        section += 1;
        for t in 2..=1 + len {
            let c = cadd(p, cmul(h, t));
            lay.carve(c, section);
            lay.carve(cadd(c, x), section);
        }
        for t in 1..=1 + len {
            lay.path.push(cadd(p, cmul(h, t)));
        }
        let k = cadd(p, cmul(h, 1 + len));
        lay.corners.push(Corner {
            cell: k,
            path_index: lay.path.len() - 1,
            entry: h,
            exit: x,
        });
        section += 1;
        if i + 1 < n_corners {
            for u in 2..=LEG_CELLS {
                lay.carve(cadd(k, cmul(x, u)), section);
            }
            for u in 1..=LEG_CELLS + 1 {
                lay.path.push(cadd(k, cmul(x, u)));
            }
            section += 1;
            p = cadd(k, cmul(x, LEG_CELLS + 2));
            lay.chamber(p, section);
            lay.path.push(p);
            h = x;
        } else {
            let lf = rng.random_range(lo..=hi);
            lay.lengths.push(lf);
            for u in 2..=lf {
                lay.carve(cadd(k, cmul(x, u)), section);
            }
            for u in 1..=lf {
                lay.path.push(cadd(k, cmul(x, u)));
            }
        }
    }
    lay
}

/// Builds a maze with `n_corners` corners; deterministic in `seed`.
pub fn generate_maze_seeded(variant: MazeVariant, n_corners: usize, seed: u64) -> Result<Maze> {
    if n_corners == 0 {
        return Err(Error::config("a maze needs at least one corner"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100 {
        let lay = layout(variant, n_corners, &mut rng);
        if lay.is_valid() {
            return Ok(rasterize(variant, n_corners, seed, lay));
        }
    }
    Err(Error::config(format!(
        "maze generation failed after 100 attempts ({} {n_corners}, seed {seed})",
        variant.tag()
    )))
}

/// Draws a seed from `rng` and builds the maze for it.
pub fn generate_maze<R: Rng + ?Sized>(variant: MazeVariant, n_corners: usize, rng: &mut R) -> Result<Maze> {
    generate_maze_seeded(variant, n_corners, rng.random())
}

fn rasterize(variant: MazeVariant, n_corners: usize, seed: u64, lay: Layout) -> Maze {
    const BORDER: i32 = 2;
    let min_x = lay.cells.iter().map(|(c, _)| c[0]).min().unwrap();
    let min_y = lay.cells.iter().map(|(c, _)| c[1]).min().unwrap();
    let max_x = lay.cells.iter().map(|(c, _)| c[0]).max().unwrap();
    let max_y = lay.cells.iter().map(|(c, _)| c[1]).max().unwrap();
    let off = [BORDER - min_x, BORDER - min_y];
    let width = (max_x - min_x + 1 + 2 * BORDER) as usize;
    let height = (max_y - min_y + 1 + 2 * BORDER) as usize;
    let mut walls = vec![1u8; width * height];
    for (c, _) in &lay.cells {
        let s = cadd(*c, off);
        walls[s[1] as usize * width + s[0] as usize] = 0;
    }
    let path: Vec<Cell> = lay.path.iter().map(|c| cadd(*c, off)).collect();
    let forward = forward_field(&path);
    Maze {
        variant,
        n_corners,
        seed,
        width,
        height,
        walls,
        chambers: lay.chambers.iter().map(|c| cadd(*c, off)).collect(),
        corners: lay
            .corners
            .iter()
            .map(|k| Corner {
                cell: cadd(k.cell, off),
                ..*k
            })
            .collect(),
        forward,
        path,
        corridor_lengths: lay.lengths,
        start_heading: lay.heading,
    }
}

fn forward_field(path: &[Cell]) -> Vec<Cell> {
    let mut f: Vec<Cell> = path
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect();
    let last = f.last().copied().unwrap_or([1, 0]);
    f.push(last);
    f
}

impl Maze {
    pub fn is_wall(&self, c: Cell) -> bool {
        if c[0] < 0 || c[1] < 0 || c[0] >= self.width as i32 || c[1] >= self.height as i32 {
            return true;
        }
        self.walls[c[1] as usize * self.width + c[0] as usize] == 1
    }

    pub fn set_wall(&mut self, c: Cell, wall: bool) {
        if c[0] >= 0 && c[1] >= 0 && (c[0] as usize) < self.width && (c[1] as usize) < self.height {
            self.walls[c[1] as usize * self.width + c[0] as usize] = wall as u8;
        }
    }

    pub fn start(&self) -> Cell {
        self.path[0]
    }

    pub fn goal(&self) -> Cell {
        *self.path.last().unwrap()
    }

    pub fn goal_center(&self) -> Vec2 {
        cell_center(self.goal())
    }

    pub fn path_centers(&self) -> Vec<Vec2> {
        self.path.iter().map(|&c| cell_center(c)).collect()
    }

    pub fn chamber_centers(&self) -> Vec<Vec2> {
        self.chambers.iter().map(|&c| cell_center(c)).collect()
    }

    /// Index of the closest path cell center; earliest on ties.
    pub fn nearest_path_index(&self, p: Vec2) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.path.iter().enumerate() {
            let d = dist(cell_center(*c), p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// First corner at or after path index `i`.
    pub fn upcoming_corner(&self, i: usize) -> Option<&Corner> {
        self.corners.iter().find(|k| k.path_index >= i)
    }

    pub fn cell_of(p: Vec2) -> Cell {
        [p[0].floor() as i32, p[1].floor() as i32]
    }

    fn wall_rects_near(&self, bounds: &Aabb) -> impl Iterator<Item = Aabb> + '_ {
        let x0 = bounds.min[0].floor() as i32;
        let x1 = bounds.max[0].floor() as i32;
        let y0 = bounds.min[1].floor() as i32;
        let y1 = bounds.max[1].floor() as i32;
        (y0..=y1).flat_map(move |y| {
            (x0..=x1).filter_map(move |x| {
                self.is_wall([x, y])
                    .then(|| Aabb::new([x as f64, y as f64], [x as f64 + 1.0, y as f64 + 1.0]))
            })
        })
    }

    /// Whether the rectangle penetrates any wall cell by more than `tol`.
    pub fn collides(&self, obb: &Obb, tol: f64) -> bool {
        let b = obb.bounds();
        self.wall_rects_near(&b).any(|w| obb.overlaps_aabb(&w, tol))
    }

    /// ASCII rendering, top row first.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in (0..self.height as i32).rev() {
            for x in 0..self.width as i32 {
                let c = [x, y];
                let ch = if c == self.start() {
                    'S'
                } else if c == self.goal() {
                    'G'
                } else if self.corners.iter().any(|k| k.cell == c) {
                    'K'
                } else if self.is_wall(c) {
                    '#'
                } else if self
                    .chambers
                    .iter()
                    .any(|ch| (ch[0] - x).abs() <= 1 && (ch[1] - y).abs() <= 1)
                {
                    'C'
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Header line plus ASCII grid.
    pub fn to_file_string(&self) -> String {
        format!(
            "variant={} n_corners={} seed={}\n{}",
            self.variant.tag(),
            self.n_corners,
            self.seed,
            self.to_ascii()
        )
    }

    /// Parses a maze file. The header's generator parameters rebuild the
    /// path structure; the grid must agree with the rebuilt maze.
    pub fn from_file_string(text: &str) -> Result<Maze> {
        let (maze, _) = parse_maze_file(text)?;
        Ok(maze)
    }
}

/// Parses a maze file; returns the maze plus any trailing `key=value` lines
/// following the grid (used by couch snapshots).
pub fn parse_maze_file(text: &str) -> Result<(Maze, Vec<(String, String)>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("maze file", "empty"))?;
    let mut variant = None;
    let mut n = None;
    let mut seed = None;
    for tok in header.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse("maze header", format!("bad token `{tok}`")))?;
        match k {
            "variant" => variant = Some(v.parse::<MazeVariant>()?),
            "n_corners" => n = Some(v.parse::<usize>().map_err(|e| Error::parse("n_corners", e.to_string()))?),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::parse("seed", e.to_string()))?),
            "env" => {}
            other => return Err(Error::parse("maze header", format!("unknown key `{other}`"))),
        }
    }
    let (Some(variant), Some(n), Some(seed)) = (variant, n, seed) else {
        return Err(Error::parse("maze header", "need variant, n_corners and seed"));
    };
    let maze = generate_maze_seeded(variant, n, seed)?;
    let mut grid = String::new();
    let mut extras = Vec::new();
    for line in lines {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some((k, v)) = t.split_once('=') {
            extras.push((k.trim().to_string(), v.trim().to_string()));
        } else {
            grid.push_str(t);
            grid.push('\n');
        }
    }
    if grid != maze.to_ascii() {
        return Err(Error::parse("maze file", "grid does not match the header's generator parameters"));
    }
    Ok((maze, extras))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouchConfig {
    pub variant: MazeVariant,
    pub n_corners: usize,
    pub length: f64,
    pub thickness: f64,
    pub mass: f64,
    /// Velocity retained per step.
    pub damping: f64,
    pub dt: f64,
    pub max_force: f64,
    pub max_torque: f64,
    pub chamber_radius: f64,
    pub goal_radius: f64,
    pub max_episode_len: usize,
}

impl Default for CouchConfig {
    fn default() -> Self {
        CouchConfig {
            variant: MazeVariant::Short,
            n_corners: 3,
            length: 1.9,
            thickness: 0.7,
            mass: 1.0,
            damping: 0.9,
            dt: 0.1,
            max_force: 10.0,
            max_torque: 5.0,
            chamber_radius: 1.0,
            goal_radius: 1.0,
            max_episode_len: 150,
        }
    }
}

impl CouchConfig {
    pub fn inertia(&self) -> f64 {
        self.mass * (self.length * self.length + self.thickness * self.thickness) / 12.0
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.length,
            self.thickness,
            self.mass,
            self.dt,
            self.max_force,
            self.max_torque,
            self.chamber_radius,
            self.goal_radius,
        ];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("couch dimensions, mass, dt, bounds and radii must be positive"));
        }
        if !(0.0..=1.0).contains(&self.damping) {
            return Err(Error::config("damping must lie in [0, 1]"));
        }
        if self.n_corners == 0 || self.max_episode_len == 0 {
            return Err(Error::config("n_corners and max_episode_len must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouchState {
    pub pos: Vec2,
    pub theta: f64,
    pub vel: Vec2,
    pub omega: f64,
    pub half_long: f64,
    pub half_short: f64,
    pub step_count: usize,
}

impl CouchState {
    pub fn at_start(maze: &Maze, cfg: &CouchConfig) -> Self {
        let h = maze.start_heading;
        CouchState {
            pos: cell_center(maze.start()),
            theta: (h[1] as f64).atan2(h[0] as f64),
            vel: [0.0, 0.0],
            omega: 0.0,
            half_long: cfg.length / 2.0,
            half_short: cfg.thickness / 2.0,
            step_count: 0,
        }
    }

    pub fn obb(&self) -> Obb {
        Obb {
            center: self.pos,
            half_long: self.half_long,
            half_short: self.half_short,
            theta: self.theta,
        }
    }

    /// Long-axis direction snapped to the nearest grid axis.
    pub fn snapped_axis(&self) -> Cell {
        let t = self.theta.rem_euclid(PI);
        if (FRAC_PI_2 / 2.0..3.0 * FRAC_PI_2 / 2.0).contains(&t) {
            [0, 1]
        } else {
            [1, 0]
        }
    }
}

/// A fresh maze and a couch at rest in the start chamber.
pub fn reset<R: Rng + ?Sized>(cfg: &CouchConfig, rng: &mut R) -> Result<(Maze, CouchState)> {
    cfg.validate()?;
    let maze = generate_maze(cfg.variant, cfg.n_corners, rng)?;
    let state = CouchState::at_start(&maze, cfg);
    Ok((maze, state))
}

const PENETRATION_TOL: f64 = 1e-9;
const SUBSTEP_LEN: f64 = 0.05;

/// Largest fraction in `[0, 1]` of a pose change that stays collision-free.
fn feasible_fraction(maze: &Maze, base: &Obb, d: [f64; 3]) -> f64 {
    let moved = |f: f64| Obb {
        center: [base.center[0] + f * d[0], base.center[1] + f * d[1]],
        theta: base.theta + f * d[2],
        ..*base
    };
    if !maze.collides(&moved(1.0), PENETRATION_TOL) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..12 {
        let mid = 0.5 * (lo + hi);
        if maze.collides(&moved(mid), PENETRATION_TOL) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

/// Semi-implicit damped integration with sub-stepped collision handling:
/// a blocked pose component is advanced only to contact and its velocity
/// component is zeroed.
pub fn step_mut(state: &mut CouchState, maze: &Maze, action: &ActionVec, cfg: &CouchConfig) {
    let a = action.clipped(&[cfg.max_force, cfg.max_force, cfg.max_torque]);
    let (f, tau) = ([a.0[0], a.0[1]], a.0[2]);
    for k in 0..2 {
        state.vel[k] = cfg.damping * (state.vel[k] + f[k] / cfg.mass * cfg.dt);
    }
    state.omega = cfg.damping * (state.omega + tau / cfg.inertia() * cfg.dt);

    let disp = [state.vel[0] * cfg.dt, state.vel[1] * cfg.dt, state.omega * cfg.dt];
    let sweep = disp[0].abs().max(disp[1].abs()).max(disp[2].abs() * state.half_long);
    let n_sub = ((sweep / SUBSTEP_LEN).ceil() as usize).max(1);
    let sub = [disp[0] / n_sub as f64, disp[1] / n_sub as f64, disp[2] / n_sub as f64];
    let mut blocked = [false; 3];
    for _ in 0..n_sub {
        let obb = state.obb();
        let d = [
            if blocked[0] { 0.0 } else { sub[0] },
            if blocked[1] { 0.0 } else { sub[1] },
            if blocked[2] { 0.0 } else { sub[2] },
        ];
        if feasible_fraction(maze, &obb, d) >= 1.0 {
            state.pos = [state.pos[0] + d[0], state.pos[1] + d[1]];
            state.theta += d[2];
            continue;
        }
        for axis in 0..3 {
            if d[axis] == 0.0 {
                continue;
            }
            let mut one = [0.0; 3];
            one[axis] = d[axis];
            let frac = feasible_fraction(maze, &state.obb(), one);
            if axis < 2 {
                state.pos[axis] += frac * d[axis];
            } else {
                state.theta += frac * d[axis];
            }
            if frac < 1.0 {
                blocked[axis] = true;
            }
        }
    }
    if blocked[0] {
        state.vel[0] = 0.0;
    }
    if blocked[1] {
        state.vel[1] = 0.0;
    }
    if blocked[2] {
        state.omega = 0.0;
    }
    state.theta = wrap_angle(state.theta);
    state.step_count += 1;
}

pub fn step(state: &CouchState, maze: &Maze, action: &ActionVec, cfg: &CouchConfig) -> CouchState {
    let mut next = *state;
    step_mut(&mut next, maze, action, cfg);
    next
}

/// 3x3 wall patch around the couch center (top row first, west to east),
/// forward direction of the nearest path cell, then the position.
pub fn observe(state: &CouchState, maze: &Maze) -> LowState {
    let c = Maze::cell_of(state.pos);
    let mut f = Vec::with_capacity(13);
    for dy in [1, 0, -1] {
        for dx in [-1, 0, 1] {
            f.push(if maze.is_wall(cadd(c, [dx, dy])) { 1.0 } else { 0.0 });
        }
    }
    let fwd = maze.forward[maze.nearest_path_index(state.pos)];
    f.push(fwd[0] as f64);
    f.push(fwd[1] as f64);
    f.push(state.pos[0]);
    f.push(state.pos[1]);
    LowState(f)
}

pub fn in_chamber(state: &CouchState, maze: &Maze, cfg: &CouchConfig) -> bool {
    maze.chamber_centers().iter().any(|c| dist(*c, state.pos) <= cfg.chamber_radius)
}

/// Whether the snapped long axis is parallel to the exit of the upcoming corner.
pub fn oriented_for_upcoming(state: &CouchState, maze: &Maze) -> bool {
    let i = maze.nearest_path_index(state.pos);
    match maze.upcoming_corner(i) {
        None => true,
        Some(k) => {
            let axis = state.snapped_axis();
            axis[0] * k.exit[0] != 0 || axis[1] * k.exit[1] != 0
        }
    }
}

/// 0 near a chamber center or when oriented for the next corner, else -1.
pub fn task_reward(state: &CouchState, maze: &Maze, cfg: &CouchConfig) -> f64 {
    if in_chamber(state, maze, cfg) || oriented_for_upcoming(state, maze) {
        0.0
    } else {
        -1.0
    }
}

pub fn success(state: &CouchState, maze: &Maze, cfg: &CouchConfig) -> bool {
    dist(state.pos, maze.goal_center()) < cfg.goal_radius
}

/// Maze file followed by the couch pose.
pub fn to_snapshot(state: &CouchState, maze: &Maze) -> String {
    format!(
        "env=couch {}pose={},{},{}\nvel={},{},{}\nstep_count={}\n",
        maze.to_file_string(),
        state.pos[0],
        state.pos[1],
        state.theta,
        state.vel[0],
        state.vel[1],
        state.omega,
        state.step_count
    )
}

pub fn from_snapshot(text: &str, cfg: &CouchConfig) -> Result<(Maze, CouchState)> {
    let (maze, extras) = parse_maze_file(text)?;
    let mut state = CouchState::at_start(&maze, cfg);
    let triple = |what: &str, v: &str| -> Result<[f64; 3]> {
        let p: Vec<f64> = v
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| Error::parse(what, e.to_string())))
            .collect::<Result<_>>()?;
        if p.len() != 3 {
            return Err(Error::parse(what, "expected three values"));
        }
        Ok([p[0], p[1], p[2]])
    };
    for (k, v) in extras {
        match k.as_str() {
            "pose" => {
                let p = triple("pose", &v)?;
                state.pos = [p[0], p[1]];
                state.theta = p[2];
            }
            "vel" => {
                let p = triple("vel", &v)?;
                state.vel = [p[0], p[1]];
                state.omega = p[2];
            }
            "step_count" => state.step_count = v.parse().map_err(|e| Error::parse("step_count", format!("{e}")))?,
            other => return Err(Error::parse("couch snapshot", format!("unknown key `{other}`"))),
        }
    }
    Ok((maze, state))
}
