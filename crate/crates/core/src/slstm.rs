//! Siamese LSTM controller.
//!
//! Each of the four LSTM gates is a twin network that mixes an image branch
//! (a conv stack shared by all gates) with a per-gate vector branch over the
//! previous hidden state and memory reads. Folding a 3-frame behavior window
//! through the recurrence yields one encoding, which downstream code uses as
//! a memory key.

use crate::error::{FearError, Result};
use crate::numcore::{conv_out, Conv2d, Linear, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Controller hidden size. Equal to the memory column width so encodings are
/// directly usable as addressing keys.
pub const HIDDEN: usize = 128;
/// Number of read heads whose previous reads feed the vector branches.
pub const N_READS: usize = 10;
/// Behavior windows are exactly this many consecutive observations.
pub const WINDOW_LEN: usize = 3;

/// Bias on the forget gate's merge layer at init, keeping the gate open.
const FORGET_BIAS: f32 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateId {
    Input,
    Forget,
    Output,
    Candidate,
}

impl GateId {
    pub const ALL: [GateId; 4] = [GateId::Input, GateId::Forget, GateId::Output, GateId::Candidate];

    fn name(self) -> &'static str {
        match self {
            GateId::Input => "input",
            GateId::Forget => "forget",
            GateId::Output => "output",
            GateId::Candidate => "candidate",
        }
    }
}

/// Observation geometry the controller is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ObsShape {
    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Hidden and cell state of the controller; zeroed at every window start.
#[derive(Debug, Clone)]
pub struct ControllerState {
    pub h: Tensor,
    pub c: Tensor,
}

impl ControllerState {
    pub fn zeros() -> Self {
        ControllerState { h: Tensor::zeros(vec![HIDDEN]), c: Tensor::zeros(vec![HIDDEN]) }
    }
}

/// Ordered window of exactly three consecutive observations, oldest first.
#[derive(Debug, Clone)]
pub struct BehaviorWindow {
    frames: [Tensor; WINDOW_LEN],
}

impl BehaviorWindow {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        let n = frames.len();
        let arr: [Tensor; WINDOW_LEN] = frames
            .try_into()
            .map_err(|_| FearError::contract(format!("behavior window needs {WINDOW_LEN} frames, got {n}")))?;
        Ok(BehaviorWindow { frames: arr })
    }

    pub fn frames(&self) -> &[Tensor; WINDOW_LEN] {
        &self.frames
    }

    pub fn last_frame(&self) -> &Tensor {
        &self.frames[WINDOW_LEN - 1]
    }
}

/// Conv stack shared by all four gates: 8 -> 16 -> 16 channels, 3x3 kernels,
/// stride 2, relu, then flatten and project to the hidden size.
struct ImageBranch {
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    proj: Linear,
}

struct GateNet {
    vector: Linear, // (hidden + reads) -> hidden
    merge: Linear,  // 2*hidden -> hidden, then the gate nonlinearity
}

pub struct Slstm {
    pub obs: ObsShape,
    image: ImageBranch,
    gates: [GateNet; 4],
}

impl Slstm {
    /// Builds a controller with parameters registered under `prefix`.
    pub fn new(store: &mut ParamStore, prefix: &str, obs: ObsShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h3 = conv_out(conv_out(conv_out(obs.height, 3, 2), 3, 2), 3, 2);
        let w3 = conv_out(conv_out(conv_out(obs.width, 3, 2), 3, 2), 3, 2);
        let flat = 16 * h3 * w3;
        let image = ImageBranch {
            conv1: Conv2d::new(store, &format!("{prefix}.image.conv1"), obs.channels, 8, 3, 2, &mut rng),
            conv2: Conv2d::new(store, &format!("{prefix}.image.conv2"), 8, 16, 3, 2, &mut rng),
            conv3: Conv2d::new(store, &format!("{prefix}.image.conv3"), 16, 16, 3, 2, &mut rng),
            proj: Linear::new(store, &format!("{prefix}.image.proj"), flat, HIDDEN, &mut rng),
        };
        let gates = GateId::ALL.map(|g| {
            let base = format!("{prefix}.gate.{}", g.name());
            GateNet {
                vector: Linear::new(store, &format!("{base}.vector"), HIDDEN + N_READS * HIDDEN, HIDDEN, &mut rng),
                merge: Linear::new(store, &format!("{base}.merge"), 2 * HIDDEN, HIDDEN, &mut rng),
            }
        });
        let forget_merge_bias = gates[1].merge.bias;
        store.get_mut(forget_merge_bias).data.iter_mut().for_each(|b| *b = FORGET_BIAS);
        Slstm { obs, image, gates }
    }

    fn check_frame(&self, tape: &Tape, frame: Var) -> Result<()> {
        if tape.shape(frame) != self.obs.dims().as_slice() {
            return Err(FearError::dim(format!(
                "frame shape {:?} != configured {:?}",
                tape.shape(frame),
                self.obs.dims()
            )));
        }
        Ok(())
    }

    /// Shared conv features of one frame, as a length-`HIDDEN` vector.
    pub fn image_features(&self, tape: &mut Tape, store: &ParamStore, frame: Var) -> Result<Var> {
        self.check_frame(tape, frame)?;
        let c1 = self.image.conv1.apply(tape, store, frame)?;
        let r1 = tape.relu(c1)?;
        let c2 = self.image.conv2.apply(tape, store, r1)?;
        let r2 = tape.relu(c2)?;
        let c3 = self.image.conv3.apply(tape, store, r2)?;
        let r3 = tape.relu(c3)?;
        let numel = tape.value(r3).len();
        let flat = tape.reshape(r3, vec![numel])?;
        self.image.proj.apply(tape, store, flat)
    }

    fn gate_from_features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gate: GateId,
        img_feat: Var,
        h: Var,
        prev_reads: Var,
    ) -> Result<Var> {
        let net = &self.gates[GateId::ALL.iter().position(|&g| g == gate).unwrap()];
        let vec_in = tape.concat(&[h, prev_reads])?;
        let vec_feat = net.vector.apply(tape, store, vec_in)?;
        let merged_in = tape.concat(&[img_feat, vec_feat])?;
        let pre = net.merge.apply(tape, store, merged_in)?;
        match gate {
            GateId::Candidate => tape.tanh(pre),
            _ => tape.sigmoid(pre),
        }
    }

    /// One gate activation from a raw frame. `prev_reads` is the
    /// concatenated read vectors, length `N_READS * HIDDEN`.
    pub fn siamese_gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        gate: GateId,
        frame: Var,
        h: Var,
        prev_reads: Var,
    ) -> Result<Var> {
        let img = self.image_features(tape, store, frame)?;
        self.gate_from_features(tape, store, gate, img, h, prev_reads)
    }

    /// Standard LSTM recurrence with Siamese gate pre-activations:
    /// `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`. The image features are computd
    /// once and shared by all four gates.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        frame: Var,
        h: Var,
        c: Var,
        prev_reads: Var,
    ) -> Result<(Var, Var)> {
        let img = self.image_features(tape, store, frame)?;
        let i = self.gate_from_features(tape, store, GateId::Input, img, h, prev_reads)?;
        let f = self.gate_from_features(tape, store, GateId::Forget, img, h, prev_reads)?;
        let o = self.gate_from_features(tape, store, GateId::Output, img, h, prev_reads)?;
        let g = self.gate_from_features(tape, store, GateId::Candidate, img, h, prev_reads)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_next = tape.add(fc, ig)?;
        let tc = tape.tanh(c_next)?;
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    /// Folds a 3-frame window (state reset to zeros, `prev_reads` held fixed
    /// across the window) and returns the final hidden state: the memory key.
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        window: &BehaviorWindow,
        prev_reads: &Tensor,
    ) -> Result<Var> {
        if prev_reads.numel() != N_READS * HIDDEN {
            return Err(FearError::dim(format!(
                "prev_reads has {} elements, expected {}",
                prev_reads.numel(),
                N_READS * HIDDEN
            )));
        }
        let reads = tape.constant(prev_reads);
        let state = ControllerState::zeros();
        let mut h = tape.constant(&state.h);
        let mut c = tape.constant(&state.c);
        for frame in window.frames() {
            let fv = tape.constant(frame);
            let (h2, c2) = self.step(tape, store, fv, h, c, reads)?;
            h = h2;
            c = c2;
        }
        Ok(h)
    }
}
