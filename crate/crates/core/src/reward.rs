//! Intrinsic fear rewards.
//!
//! Behavioral fear fires only when the danger probability clears the
//! threshold; stimuli fear is unconditional, behaving like a living cost.
//! Both are non-positive. Mode `None` recovers plain PPO.

use crate::error::{FearError, Result};
use crate::numcore::Tensor;
use crate::slstm::{BehaviorWindow, ObsShape, WINDOW_LEN};
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FearMode {
    None,
    Stimuli,
    Behavior,
}

impl FearMode {
    pub fn parse(s: &str) -> Result<FearMode> {
        match s {
            "none" | "base" => Ok(FearMode::None),
            "stimuli" => Ok(FearMode::Stimuli),
            "behavior" => Ok(FearMode::Behavior),
            other => Err(FearError::Config(format!("unknown fear mode {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FearMode::None => "base",
            FearMode::Stimuli => "stimuli",
            FearMode::Behavior => "behavior",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FearConfig {
    pub mode: FearMode,
    /// Threshold tau: minimum danger probability before behavioral fear fires.
    pub threshold: f32,
    /// Magnitude of the per-step penalty.
    pub beta_scale: f32,
    /// Peer reliability; the parental setting pins it to 1.
    pub kappa: f32,
}

impl Default for FearConfig {
    fn default() -> Self {
        FearConfig { mode: FearMode::Behavior, threshold: 0.6, beta_scale: 1.0, kappa: 1.0 }
    }
}

impl FearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(FearError::Config(format!("fear.threshold {} outside [0,1]", self.threshold)));
        }
        if self.beta_scale <= 0.0 {
            return Err(FearError::Config(format!("fear.beta_scale {} must be > 0", self.beta_scale)));
        }
        if self.kappa != 1.0 {
            return Err(FearError::Config("kappa is fixed at 1.0 in this artifact".into()));
        }
        Ok(())
    }

    /// Dispatches on the mode; `None` always yields 0.
    pub fn intrinsic(&self, p_danger: f32) -> Result<f32> {
        match self.mode {
            FearMode::None => Ok(0.0),
            FearMode::Stimuli => stimuli_fear(p_danger, self),
            FearMode::Behavior => behavior_fear(p_danger, self),
        }
    }
}

fn check_probability(p: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(FearError::contract(format!("danger probability {p} outside [0,1]")));
    }
    Ok(())
}

/// Thresholded fear: `-beta * p` when `p >= tau`, else exactly 0.
pub fn behavior_fear(p_danger: f32, cfg: &FearConfig) -> Result<f32> {
    check_probability(p_danger)?;
    if p_danger >= cfg.threshold {
        Ok(-cfg.beta_scale * p_danger)
    } else {
        Ok(0.0)
    }
}

/// Unconditional fear: `-beta * p` every step.
pub fn stimuli_fear(p_danger: f32, cfg: &FearConfig) -> Result<f32> {
    check_probability(p_danger)?;
    Ok(-cfg.beta_scale * p_danger)
}

/// Agent reward = intrinsic + extrinsic. Callers log both parts separately.
pub fn combine(r_ext: f32, r_int: f32) -> f32 {
    r_ext + r_int
}

/// Ring of the most recent observations, zero-padded until three steps have
/// happened. Oldest first.
#[derive(Debug, Clone)]
pub struct RollingWindow {
    obs: ObsShape,
    frames: VecDeque<Tensor>,
}

impl RollingWindow {
    pub fn new(obs: ObsShape) -> Self {
        RollingWindow { obs, frames: VecDeque::with_capacity(WINDOW_LEN) }
    }

    pub fn push(&mut self, frame: Tensor) {
        if self.frames.len() == WINDOW_LEN {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// The current 3-frame window, zero-padded at the old end.
    pub fn window(&self) -> BehaviorWindow {
        let mut frames = Vec::with_capacity(WINDOW_LEN);
        for _ in self.frames.len()..WINDOW_LEN {
            frames.push(Tensor::zeros(self.obs.dims()));
        }
        frames.extend(self.frames.iter().cloned());
        BehaviorWindow::new(frames).expect("padded to window length")
    }
}
