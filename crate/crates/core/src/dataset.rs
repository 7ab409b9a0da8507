//! Parent behavior datasets.
//!
//! Danger items are scripted approaches: within three actions the agent
//! turns toward the street and advances until it stands adjacent, facing it.
//! Safe items are random walks in which any street-approaching forward move
//! is rejected, and the final frame never faces the street. The stimuli
//! dataset is the last frame of each behavior item, index-aligned.

use crate::env::{cell_at, render_observation, Action, AgentPose, Cell, Heading, WorldConfig};
use crate::error::{FearError, Result};
use crate::numcore::{derive_seed, Tensor};
use crate::slstm::{BehaviorWindow, WINDOW_LEN};
use crate::smann::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Items per class in the generated datasets.
pub const ITEMS_PER_CLASS: usize = 38;

const MAGIC: &[u8; 4] = b"FCDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct BehaviorDataset {
    pub items: Vec<(BehaviorWindow, Label)>,
    pub seed: u64,
    pub env_hash: u64,
}

#[derive(Debug, Clone)]
pub struct StimuliDataset {
    pub items: Vec<(Tensor, Label)>,
    pub seed: u64,
    pub env_hash: u64,
}

/// Applies an action to a pose without terminating; returns the new pose and
/// the cell type the agent would occupy after the move (walls bump in place).
fn apply(cfg: &WorldConfig, pose: AgentPose, action: Action) -> (AgentPose, Cell) {
    match action {
        Action::TurnLeft => {
            let p = AgentPose { heading: pose.heading.left(), ..pose };
            (p, cell_at(cfg, p.x, p.y))
        }
        Action::TurnRight => {
            let p = AgentPose { heading: pose.heading.right(), ..pose };
            (p, cell_at(cfg, p.x, p.y))
        }
        Action::Forward => {
            let (dx, dy) = pose.heading.delta();
            let (nx, ny) = (pose.x + dx, pose.y + dy);
            match cell_at(cfg, nx, ny) {
                Cell::Wall => (pose, Cell::Sidewalk),
                other => (AgentPose { x: nx, y: ny, ..pose }, other),
            }
        }
    }
}

fn random_spawn(cfg: &WorldConfig, rng: &mut ChaCha8Rng) -> AgentPose {
    let goal = cfg.goal_cell();
    loop {
        let x = rng.gen_range(0..cfg.length as i32);
        let y = rng.gen_range(0..cfg.width as i32);
        if (x, y) == goal {
            continue;
        }
        let heading = Heading::ALL[rng.gen_range(0..4)];
        return AgentPose { x, y, heading };
    }
}

fn faces_street_adjacent(cfg: &WorldConfig, pose: AgentPose) -> bool {
    pose.heading == Heading::S && pose.y == cfg.width as i32 - 1
}

fn render_window(cfg: &WorldConfig, poses: &[AgentPose; WINDOW_LEN]) -> BehaviorWindow {
    let frames = poses.iter().map(|&p| render_observation(cfg, p)).collect();
    BehaviorWindow::new(frames).expect("three poses render three frames")
}

/// Scripted danger item: searches the 27 three-action sequences from a
/// resampled spawn for one that never enters the street or goal mid-window
/// and ends adjacent to the street, facing it.
pub fn gen_danger_behavior(cfg: &WorldConfig, seed: u64) -> Result<BehaviorWindow> {
    gen_danger_with_poses(cfg, seed).map(|(w, _)| w)
}

pub(crate) fn gen_danger_with_poses(
    cfg: &WorldConfig,
    seed: u64,
) -> Result<(BehaviorWindow, [AgentPose; WINDOW_LEN])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..10_000 {
        let spawn = random_spawn(cfg, &mut rng);
        if faces_street_adjacent(cfg, spawn) {
            continue; // must start from a non-street-adjacent-facing pose
        }
        if let Some(poses) = search_danger_script(cfg, spawn) {
            return Ok((render_window(cfg, &poses), poses));
        }
    }
    Err(FearError::contract("no danger spawn admits a 3-action street approach"))
}

fn search_danger_script(cfg: &WorldConfig, spawn: AgentPose) -> Option<[AgentPose; WINDOW_LEN]> {
    for code in 0..27usize {
        let actions = [
            Action::ALL[code / 9],
            Action::ALL[(code / 3) % 3],
            Action::ALL[code % 3],
        ];
        let mut pose = spawn;
        let mut poses = [spawn; WINDOW_LEN];
        let mut ok = true;
        for (i, &a) in actions.iter().enumerate() {
            let (next, entered) = apply(cfg, pose, a);
            if entered == Cell::Street || entered == Cell::Goal {
                ok = false; // entering either would end the episode mid-window
                break;
            }
            pose = next;
            poses[i] = next;
        }
        if ok && faces_street_adjacent(cfg, pose) {
            return Some(poses);
        }
    }
    None
}

/// Safe item: three sampled actions with every street-approaching forward
/// (and any goal entry) rejected and resampled; the last action is also
/// rejected while it would leave the agent facing the street.
pub fn gen_safe_behavior(cfg: &WorldConfig, seed: u64) -> Result<BehaviorWindow> {
    gen_safe_with_poses(cfg, seed).map(|(w, _)| w)
}

pub(crate) fn gen_safe_with_poses(
    cfg: &WorldConfig,
    seed: u64,
) -> Result<(BehaviorWindow, [AgentPose; WINDOW_LEN])> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'respawn: for _ in 0..10_000 {
        let spawn = random_spawn(cfg, &mut rng);
        let mut pose = spawn;
        let mut poses = [spawn; WINDOW_LEN];
        for i in 0..WINDOW_LEN {
            let last = i == WINDOW_LEN - 1;
            let mut accepted = None;
            for _ in 0..100 {
                let a = Action::ALL[rng.gen_range(0..3)];
                // Forward while facing the street closes the distance; that
                // is the conditioned behavior, not a safe one.
                if a == Action::Forward && pose.heading == Heading::S {
                    continue;
                }
                let (next, entered) = apply(cfg, pose, a);
                if entered == Cell::Goal {
                    continue;
                }
                if last && next.heading == Heading::S {
                    continue; // safe windows never face the street at the end
                }
                accepted = Some(next);
                break;
            }
            match accepted {
                Some(next) => {
                    pose = next;
                    poses[i] = next;
                }
                None => continue 'respawn,
            }
        }
        return Ok((render_window(cfg, &poses), poses));
    }
    Err(FearError::contract("safe behavior sampling failed to converge"))
}

/// Generates the full 38+38 behavior dataset and its index-aligned stimuli
/// counterpart. Deterministic in `seed`.
pub fn build_datasets(cfg: &WorldConfig, seed: u64) -> Result<(BehaviorDataset, StimuliDataset)> {
    let mut items = Vec::with_capacity(2 * ITEMS_PER_CLASS);
    for i in 0..ITEMS_PER_CLASS {
        let w = gen_danger_behavior(cfg, derive_seed(seed, i as u64))?;
        items.push((w, Label::Danger));
    }
    for i in 0..ITEMS_PER_CLASS {
        let w = gen_safe_behavior(cfg, derive_seed(seed, 1000 + i as u64))?;
        items.push((w, Label::Safe));
    }
    let stimuli = items
        .iter()
        .map(|(w, label)| (w.last_frame().clone(), *label))
        .collect();
    let env_hash = cfg.hash();
    Ok((
        BehaviorDataset { items, seed, env_hash },
        StimuliDataset { items: stimuli, seed, env_hash },
    ))
}

// ── persistence ─────────────────────────────────────────────────────────

fn write_header(w: &mut impl Write, env_hash: u64, count: usize) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&env_hash.to_le_bytes())?;
    w.write_all(&(count as u32).to_le_bytes())?;
    Ok(())
}

fn write_frame(w: &mut impl Write, frame: &Tensor) -> Result<()> {
    for &v in &frame.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header(r: &mut impl Read, path: &Path) -> Result<(u64, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FearError::Format(format!("{}: bad magic", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(FearError::Format("unsupported dataset version".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hash = u64::from_le_bytes(b8);
    r.read_exact(&mut b4)?;
    Ok((hash, u32::from_le_bytes(b4) as usize))
}

fn read_frame(r: &mut impl Read, cfg: &WorldConfig) -> Result<Tensor> {
    let numel = cfg.obs_channels * cfg.obs_height * cfg.obs_width;
    let mut data = vec![0.0f32; numel];
    let mut buf = [0u8; 4];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f32::from_le_bytes(buf);
    }
    Tensor::new(vec![cfg.obs_channels, cfg.obs_height, cfg.obs_width], data)
}

fn label_byte(l: Label) -> u8 {
    l.index() as u8
}

pub fn save_behavior(ds: &BehaviorDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, ds.env_hash, ds.items.len())?;
    for (window, label) in &ds.items {
        w.write_all(&[label_byte(*label)])?;
        for frame in window.frames() {
            write_frame(&mut w, frame)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_behavior(path: &Path, cfg: &WorldConfig) -> Result<BehaviorDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let (env_hash, count) = read_header(&mut r, path)?;
    if env_hash != cfg.hash() {
        return Err(FearError::Format(format!(
            "{}: dataset generated under a different environment geometry",
            path.display()
        )));
    }
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lb = [0u8; 1];
        r.read_exact(&mut lb)?;
        let label = Label::from_index(lb[0] as usize)?;
        let frames = (0..WINDOW_LEN)
            .map(|_| read_frame(&mut r, cfg))
            .collect::<Result<Vec<_>>>()?;
        items.push((BehaviorWindow::new(frames)?, label));
    }
    Ok(BehaviorDataset { items, seed: 0, env_hash })
}

pub fn save_stimuli(ds: &StimuliDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, ds.env_hash, ds.items.len())?;
    for (frame, label) in &ds.items {
        w.write_all(&[label_byte(*label)])?;
        write_frame(&mut w, frame)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_stimuli(path: &Path, cfg: &WorldConfig) -> Result<StimuliDataset> {
    let mut r = BufReader::new(File::open(path)?);
    let (env_hash, count) = read_header(&mut r, path)?;
    if env_hash != cfg.hash() {
        return Err(FearError::Format(format!(
            "{}: dataset generated under a different environment geometry",
            path.display()
        )));
    }
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let mut lb = [0u8; 1];
        r.read_exact(&mut lb)?;
        let label = Label::from_index(lb[0] as usize)?;
        items.push((read_frame(&mut r, cfg)?, label));
    }
    Ok(StimuliDataset { items, seed: 0, env_hash })
}
