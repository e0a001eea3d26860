//! Versioned binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic   4 bytes  "OPCA"
//! version u32      currently 1
//! then five length-prefixed sections, each [len: u64][payload]:
//!   encoder  image shape (3 x u64) + stack
//!   decoder  stack
//!   layout   mode u64, backward u64, channels/height/width u64,
//!            state count u64, then per state: input_dim u64, components u64,
//!            basis f64s, gamma f64, mean step u64, mean f64s,
//!            steps_taken u64, ortho_period u64, eps_ortho f64,
//!            schedule kind u64, eta0 f64, decay f64
//!   rng      root seed u64, data seed u64
//!   step     global training step u64
//!
//! stack := layer count u64, then per layer: rows u64, cols u64,
//!          activation u64 (0 tanh, 1 identity), weights f64s, bias f64s
//! ```
//!
//! Loading rejects wrong magic, unknown versions, truncation, section length
//! mismatches and trailing bytes, each with its own error.

use std::fs;
use std::path::Path;

use opca_core::autoencoder::{Activation, DenseLayer, MlpStack, ToyAutoencoder};
use opca_core::bottleneck::{BackwardMode, BottleneckLayout, LayoutMode};
use opca_core::linalg::DenseMatrix;
use opca_core::oja::{LearningRateSchedule, OjaPcaState};
use opca_core::stats::GammaFadeMean;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"OPCA";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes, not a checkpoint file")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint truncated")]
    Truncated,

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Everything a run needs to resume evaluation: model, bottleneck and the
/// seeds that produced them.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ToyAutoencoder,
    pub layout: BottleneckLayout,
    pub root_seed: u64,
    pub data_seed: u64,
    pub step: u64,
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { bytes: Vec::new() }
    }

    fn put_u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn put_f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn put_f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.put_f64(v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn take_u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_usize(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = self.take_u64()?;
        usize::try_from(v)
            .map_err(|_| CheckpointError::Corrupt(format!("{what} {v} does not fit in usize")))
    }

    fn take_f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn encode_stack(w: &mut Writer, stack: &MlpStack) {
    w.put_u64(stack.layers.len() as u64);
    for layer in &stack.layers {
        w.put_u64(layer.weight.rows() as u64);
        w.put_u64(layer.weight.cols() as u64);
        w.put_u64(match layer.activation {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        });
        w.put_f64s(layer.weight.data());
        w.put_f64s(&layer.bias);
    }
}

fn decode_stack(r: &mut Reader) -> Result<MlpStack, CheckpointError> {
    let n_layers = r.take_usize("layer count")?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = r.take_usize("weight rows")?;
        let cols = r.take_usize("weight cols")?;
        let activation = match r.take_u64()? {
            0 => Activation::Tanh,
            1 => Activation::Identity,
            other => {
                return Err(CheckpointError::Corrupt(format!(
                    "unknown activation tag {other}"
                )))
            }
        };
        if rows == 0 || cols == 0 || rows.checked_mul(cols).is_none() {
            return Err(CheckpointError::Corrupt(format!(
                "implausible weight shape {rows}x{cols}"
            )));
        }
        let weight = DenseMatrix::new(rows, cols, r.take_f64s(rows * cols)?)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let bias = r.take_f64s(rows)?;
        layers.push(DenseLayer {
            weight,
            bias,
            activation,
        });
    }
    MlpStack::new(layers).map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

fn encode_state(w: &mut Writer, state: &OjaPcaState) {
    w.put_u64(state.input_dim() as u64);
    w.put_u64(state.num_components() as u64);
    w.put_f64s(state.basis().data());
    w.put_f64(state.mean().gamma());
    w.put_u64(state.mean().step());
    w.put_f64s(state.mean().mean());
    w.put_u64(state.steps_taken());
    w.put_u64(state.ortho_period());
    w.put_f64(state.eps_ortho());
    match state.schedule() {
        LearningRateSchedule::Constant { eta0 } => {
            w.put_u64(0);
            w.put_f64(eta0);
            w.put_f64(0.0);
        }
        LearningRateSchedule::InverseTime { eta0, decay } => {
            w.put_u64(1);
            w.put_f64(eta0);
            w.put_f64(decay);
        }
    }
}

fn decode_state(r: &mut Reader) -> Result<OjaPcaState, CheckpointError> {
    let n = r.take_usize("state input dim")?;
    let q = r.take_usize("state components")?;
    if n == 0 || q == 0 || n.checked_mul(q).is_none() {
        return Err(CheckpointError::Corrupt(format!(
            "implausible state shape {n}x{q}"
        )));
    }
    let basis = DenseMatrix::new(n, q, r.take_f64s(n * q)?)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let gamma = r.take_f64()?;
    let mean_step = r.take_u64()?;
    let mu = r.take_f64s(n)?;
    let mean = GammaFadeMean::from_parts(mu, gamma, mean_step)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let steps_taken = r.take_u64()?;
    let ortho_period = r.take_u64()?;
    let eps_ortho = r.take_f64()?;
    let schedule_tag = r.take_u64()?;
    let eta0 = r.take_f64()?;
    let decay = r.take_f64()?;
    let schedule = match schedule_tag {
        0 => LearningRateSchedule::Constant { eta0 },
        1 => LearningRateSchedule::InverseTime { eta0, decay },
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown schedule tag {other}"
            )))
        }
    };
    OjaPcaState::from_parts(basis, mean, steps_taken, ortho_period, eps_ortho, schedule)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

/// Serialize a checkpoint to bytes.
pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut sections: Vec<Vec<u8>> = Vec::with_capacity(5);

    let mut enc = Writer::new();
    enc.put_u64(ck.model.image_shape.0 as u64);
    enc.put_u64(ck.model.image_shape.1 as u64);
    enc.put_u64(ck.model.image_shape.2 as u64);
    encode_stack(&mut enc, &ck.model.encoder);
    sections.push(enc.bytes);

    let mut dec = Writer::new();
    encode_stack(&mut dec, &ck.model.decoder);
    sections.push(dec.bytes);

    let mut lay = Writer::new();
    lay.put_u64(match ck.layout.mode() {
        LayoutMode::SingleVector => 0,
        LayoutMode::MultiPatch => 1,
    });
    lay.put_u64(match ck.layout.backward_mode() {
        BackwardMode::Projector => 0,
        BackwardMode::StraightThrough => 1,
    });
    lay.put_u64(ck.layout.channels() as u64);
    lay.put_u64(ck.layout.height() as u64);
    lay.put_u64(ck.layout.width() as u64);
    lay.put_u64(ck.layout.states().len() as u64);
    for state in ck.layout.states() {
        encode_state(&mut lay, state);
    }
    sections.push(lay.bytes);

    let mut rng = Writer::new();
    rng.put_u64(ck.root_seed);
    rng.put_u64(ck.data_seed);
    sections.push(rng.bytes);

    let mut step = Writer::new();
    step.put_u64(ck.step);
    sections.push(step.bytes);

    let mut out = Writer::new();
    out.bytes.extend_from_slice(MAGIC);
    out.bytes.extend_from_slice(&VERSION.to_le_bytes());
    for section in sections {
        out.put_u64(section.len() as u64);
        out.bytes.extend_from_slice(&section);
    }
    out.bytes
}

/// Parse a checkpoint from bytes. Never partially constructs state: any
/// failure returns an error and nothing else.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4).map_err(|_| CheckpointError::BadMagic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(
        r.take(4)
            .map_err(|_| CheckpointError::Truncated)?
            .try_into()
            .unwrap(),
    );
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }

    let mut sections: Vec<&[u8]> = Vec::with_capacity(5);
    for _ in 0..5 {
        let len = r.take_usize("section length")?;
        sections.push(r.take(len)?);
    }
    if !r.done() {
        return Err(CheckpointError::Corrupt(
            "trailing bytes after sections".into(),
        ));
    }

    let mut enc = Reader::new(sections[0]);
    let image_shape = (
        enc.take_usize("image channels")?,
        enc.take_usize("image height")?,
        enc.take_usize("image width")?,
    );
    let encoder = decode_stack(&mut enc)?;
    if !enc.done() {
        return Err(CheckpointError::Corrupt("encoder section too long".into()));
    }

    let mut dec = Reader::new(sections[1]);
    let decoder = decode_stack(&mut dec)?;
    if !dec.done() {
        return Err(CheckpointError::Corrupt("decoder section too long".into()));
    }

    let mut lay = Reader::new(sections[2]);
    let mode = match lay.take_u64()? {
        0 => LayoutMode::SingleVector,
        1 => LayoutMode::MultiPatch,
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown layout mode tag {other}"
            )))
        }
    };
    let backward_mode = match lay.take_u64()? {
        0 => BackwardMode::Projector,
        1 => BackwardMode::StraightThrough,
        other => {
            return Err(CheckpointError::Corrupt(format!(
                "unknown backward mode tag {other}"
            )))
        }
    };
    let channels = lay.take_usize("layout channels")?;
    let height = lay.take_usize("layout height")?;
    let width = lay.take_usize("layout width")?;
    let n_states = lay.take_usize("state count")?;
    let mut states = Vec::with_capacity(n_states.min(1 << 20));
    for _ in 0..n_states {
        states.push(decode_state(&mut lay)?);
    }
    if !lay.done() {
        return Err(CheckpointError::Corrupt("layout section too long".into()));
    }
    let layout = BottleneckLayout::from_parts(mode, channels, height, width, backward_mode, states)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let latent_shape = (channels, height, width);
    let model = ToyAutoencoder::new(encoder, decoder, image_shape, latent_shape)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;

    let mut rng = Reader::new(sections[3]);
    let root_seed = rng.take_u64()?;
    let data_seed = rng.take_u64()?;
    if !rng.done() {
        return Err(CheckpointError::Corrupt("rng section too long".into()));
    }

    let mut step_r = Reader::new(sections[4]);
    let step = step_r.take_u64()?;
    if !step_r.done() {
        return Err(CheckpointError::Corrupt("step section too long".into()));
    }

    Ok(Checkpoint {
        model,
        layout,
        root_seed,
        data_seed,
        step,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), CheckpointError> {
    fs::write(path, encode(ck)).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    decode(&bytes)
}
