//! Arranges subspace quantizers over a spatial latent tensor: either one
//! global state over the flattened latent, or one independent state per
//! spatial position. Forward and backward are pure; only `update` mutates.

use crate::error::{CoreError, Result};
use crate::linalg::DenseMatrix;
use crate::oja::{OjaConfig, OjaPcaState, OjaStepTrace};

/// Batch of latent feature maps, shape B x D x H x W, row-major in that
/// order. Each sample is therefore one contiguous slice of length D*H*W.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl LatentTensor {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "latent shape {batch}x{channels}x{height}x{width} has an empty dimension"
            )));
        }
        if values.len() != batch * channels * height * width {
            return Err(CoreError::DimensionMismatch(format!(
                "latent shape {batch}x{channels}x{height}x{width} needs {} values, got {}",
                batch * channels * height * width,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite(
                "latent tensor contains NaN or infinity".into(),
            ));
        }
        Ok(Self {
            batch,
            channels,
            height,
            width,
            values,
        })
    }

    /// Reinterpret a B x (D*H*W) matrix of flattened samples.
    pub fn from_rows(
        rows: &DenseMatrix,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if rows.cols() != channels * height * width {
            return Err(CoreError::DimensionMismatch(format!(
                "rows have {} entries, latent shape {channels}x{height}x{width} needs {}",
                rows.cols(),
                channels * height * width
            )));
        }
        Self::new(rows.rows(), channels, height, width, rows.data().to_vec())
    }

    /// Flattened samples as matrix rows, B x (D*H*W).
    pub fn to_rows(&self) -> DenseMatrix {
        DenseMatrix::new(
            self.batch,
            self.channels * self.height * self.width,
            self.values.clone(),
        )
        .expect("shape consistent by construction")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, b: usize, d: usize, y: usize, x: usize) -> f64 {
        self.values[((b * self.channels + d) * self.height + y) * self.width + x]
    }

    /// Contiguous flattened sample, length D*H*W.
    pub fn sample(&self, b: usize) -> &[f64] {
        let len = self.channels * self.height * self.width;
        &self.values[b * len..(b + 1) * len]
    }
}

/// Which latent arrangement a bottleneck uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutMode {
    /// One state over the flattened D*H*W latent of each sample.
    SingleVector,
    /// One independent state per spatial position, each over the D channels.
    MultiPatch,
}

/// Gradient route through the bottleneck for the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackwardMode {
    /// Exact Jacobian of the projection: `grad_in = C C^T grad_out`.
    #[default]
    Projector,
    /// Copy the downstream gradient through unchanged.
    StraightThrough,
}

/// One or many quantizer states tiled over a latent tensor. The basis and
/// mean inside never receive gradients; they change only through
/// [`BottleneckLayout::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct BottleneckLayout {
    mode: LayoutMode,
    channels: usize,
    height: usize,
    width: usize,
    backward_mode: BackwardMode,
    /// One state for `SingleVector`, `height * width` states (row-major
    /// positions) for `MultiPatch`. All states share the same Q.
    states: Vec<OjaPcaState>,
}

impl BottleneckLayout {
    /// Global layout: one state over the flattened D*H*W latent.
    pub fn single_vector(
        channels: usize,
        height: usize,
        width: usize,
        config: &OjaConfig,
    ) -> Result<Self> {
        let state = OjaPcaState::init(channels * height * width, config)?;
        Ok(Self {
            mode: LayoutMode::SingleVector,
            channels,
            height,
            width,
            backward_mode: BackwardMode::default(),
            states: vec![state],
        })
    }

    /// Per-position layout: `height * width` independent states over the D
    /// channels, seeded from `config.seed + position`.
    pub fn multi_patch(
        channels: usize,
        height: usize,
        width: usize,
        config: &OjaConfig,
    ) -> Result<Self> {
        let mut states = Vec::with_capacity(height * width);
        for p in 0..height * width {
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(p as u64);
            states.push(OjaPcaState::init(channels, &cfg)?);
        }
        Ok(Self {
            mode: LayoutMode::MultiPatch,
            channels,
            height,
            width,
            backward_mode: BackwardMode::default(),
            states,
        })
    }

    /// Reassemble a layout from checkpointed parts.
    pub fn from_parts(
        mode: LayoutMode,
        channels: usize,
        height: usize,
        width: usize,
        backward_mode: BackwardMode,
        states: Vec<OjaPcaState>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidArgument(
                "latent shape has an empty dimension".into(),
            ));
        }
        let expected_states = match mode {
            LayoutMode::SingleVector => 1,
            LayoutMode::MultiPatch => height * width,
        };
        if states.len() != expected_states {
            return Err(CoreError::InvalidArgument(format!(
                "layout expects {expected_states} states, got {}",
                states.len()
            )));
        }
        let expected_dim = match mode {
            LayoutMode::SingleVector => channels * height * width,
            LayoutMode::MultiPatch => channels,
        };
        let q = states[0].num_components();
        for (i, s) in states.iter().enumerate() {
            if s.input_dim() != expected_dim {
                return Err(CoreError::DimensionMismatch(format!(
                    "state {i} has input dimension {}, layout needs {expected_dim}",
                    s.input_dim()
                )));
            }
            if s.num_components() != q {
                return Err(CoreError::InvalidArgument(format!(
                    "state {i} has {} components, state 0 has {q}",
                    s.num_components()
                )));
            }
        }
        Ok(Self {
            mode,
            channels,
            height,
            width,
            backward_mode,
            states,
        })
    }

    pub fn with_backward_mode(mut self, mode: BackwardMode) -> Self {
        self.backward_mode = mode;
        self
    }

    pub fn mode(&self) -> LayoutMode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn backward_mode(&self) -> BackwardMode {
        self.backward_mode
    }

    pub fn states(&self) -> &[OjaPcaState] {
        &self.states
    }

    /// Components per state (identical across states).
    pub fn num_components(&self) -> usize {
        self.states[0].num_components()
    }

    /// Spatial token count: 1 for the global layout, H*W for the
    /// per-position layout. This is the `N` of bit-budget accounting.
    pub fn token_count(&self) -> usize {
        match self.mode {
            LayoutMode::SingleVector => 1,
            LayoutMode::MultiPatch => self.height * self.width,
        }
    }

    fn check_shape(&self, h: &LatentTensor, what: &str) -> Result<()> {
        if h.channels() != self.channels || h.height() != self.height || h.width() != self.width {
            return Err(CoreError::DimensionMismatch(format!(
                "{what} has shape {}x{}x{}x{}, layout expects _x{}x{}x{}",
                h.batch(),
                h.channels(),
                h.height(),
                h.width(),
                self.channels,
                self.height,
                self.width
            )));
        }
        Ok(())
    }

    /// Per-state data matrices gathered from `h`: one B x (D*H*W) matrix for
    /// the global layout, or `H*W` B x D matrices in position order.
    pub fn state_batches(&self, h: &LatentTensor) -> Result<Vec<DenseMatrix>> {
        self.check_shape(h, "latent tensor")?;
        match self.mode {
            LayoutMode::SingleVector => Ok(vec![h.to_rows()]),
            LayoutMode::MultiPatch => {
                let mut out = Vec::with_capacity(self.height * self.width);
                for y in 0..self.height {
                    for x in 0..self.width {
                        let mut data = Vec::with_capacity(h.batch() * self.channels);
                        for b in 0..h.batch() {
                            for d in 0..self.channels {
                                data.push(h.at(b, d, y, x));
                            }
                        }
                        out.push(DenseMatrix::new(h.batch(), self.channels, data)?);
                    }
                }
                Ok(out)
            }
        }
    }

    /// Quantize every sample: each block is replaced by its affine projection
    /// onto the corresponding state's subspace. Shape is preserved and no
    /// state changes.
    pub fn forward(&self, h: &LatentTensor) -> Result<LatentTensor> {
        self.map_blocks(h, |state, block| state.quantize(block))
    }

    /// Route a gradient with respect to the bottleneck output back to its
    /// input, treating basis and mean as constants. No gradient for the
    /// states is ever produced.
    pub fn backward(&self, grad_out: &LatentTensor) -> Result<LatentTensor> {
        match self.backward_mode {
            BackwardMode::Projector => {
                self.map_blocks(grad_out, |state, block| state.projector_apply(block))
            }
            BackwardMode::StraightThrough => {
                self.check_shape(grad_out, "gradient tensor")?;
                Ok(grad_out.clone())
            }
        }
    }

    fn map_blocks(
        &self,
        h: &LatentTensor,
        f: impl Fn(&OjaPcaState, &[f64]) -> Result<Vec<f64>>,
    ) -> Result<LatentTensor> {
        self.check_shape(h, "latent tensor")?;
        let mut out = vec![0.0; h.values().len()];
        match self.mode {
            LayoutMode::SingleVector => {
                let state = &self.states[0];
                let len = self.channels * self.height * self.width;
                for b in 0..h.batch() {
                    let mapped = f(state, h.sample(b))?;
                    out[b * len..(b + 1) * len].copy_from_slice(&mapped);
                }
            }
            LayoutMode::MultiPatch => {
                let mut block = vec![0.0; self.channels];
                for b in 0..h.batch() {
                    for y in 0..self.height {
                        for x in 0..self.width {
                            let state = &self.states[y * self.width + x];
                            for (d, v) in block.iter_mut().enumerate() {
                                *v = h.at(b, d, y, x);
                            }
                            let mapped = f(state, &block)?;
                            for (d, &v) in mapped.iter().enumerate() {
                                out[((b * self.channels + d) * self.height + y) * self.width + x] =
                                    v;
                            }
                        }
                    }
                }
            }
        }
        LatentTensor::new(h.batch(), h.channels(), h.height(), h.width(), out)
    }

    /// One streaming update per state from the activations in `h`. Uses only
    /// forward values, never gradients. Returns one trace per state in
    /// position order.
    pub fn update(&mut self, h: &LatentTensor) -> Result<Vec<OjaStepTrace>> {
        let batches = self.state_batches(h)?;
        let mut traces = Vec::with_capacity(batches.len());
        for (state, batch) in self.states.iter_mut().zip(&batches) {
            traces.push(state.oja_step(batch)?);
        }
        Ok(traces)
    }

    /// Worst `||C^T C - I||_F` across states.
    pub fn max_ortho_drift(&self) -> f64 {
        self.states
            .iter()
            .map(|s| s.ortho_drift())
            .fold(0.0, f64::max)
    }

    /// New layout with every state's components sorted by explained variance
    /// on `h` and truncated to the leading `k`. Needs at least 2 samples.
    pub fn sorted_truncated(&self, h: &LatentTensor, k: usize) -> Result<BottleneckLayout> {
        let batches = self.state_batches(h)?;
        let mut states = Vec::with_capacity(self.states.len());
        for (state, batch) in self.states.iter().zip(&batches) {
            states.push(state.sort_components(batch)?.truncate(k)?);
        }
        Ok(BottleneckLayout {
            mode: self.mode,
            channels: self.channels,
            height: self.height,
            width: self.width,
            backward_mode: self.backward_mode,
            states,
        })
    }
}
