//! Synthetic data with known ground-truth spectra, a toy image generator
//! with controllable factors, and dependency-free binary PGM (P5) image IO.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, PgmError, Result};
use crate::linalg::{self, DenseMatrix};

/// Batch of images, shape B x C x H x W with pixel values in [0, 1]
/// (tolerance 1e-6). Produced by generators and loaders; network outputs are
/// plain matrices because they may leave the unit range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    batch: usize,
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageBatch {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if batch == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(CoreError::InvalidArgument(format!(
                "image batch shape {batch}x{channels}x{height}x{width} has an empty dimension"
            )));
        }
        if values.len() != batch * channels * height * width {
            return Err(CoreError::DimensionMismatch(format!(
                "image batch shape {batch}x{channels}x{height}x{width} needs {} values, got {}",
                batch * channels * height * width,
                values.len()
            )));
        }
        if !values
            .iter()
            .all(|v| v.is_finite() && *v >= -1e-6 && *v <= 1.0 + 1e-6)
        {
            return Err(CoreError::InvalidArgument(
                "image values must lie in [0, 1] within 1e-6".into(),
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

    /// Pixels of one image, flattened C x H x W.
    pub fn image(&self, b: usize) -> &[f64] {
        let len = self.channels * self.height * self.width;
        &self.values[b * len..(b + 1) * len]
    }

    /// Flattened images as matrix rows, B x (C*H*W).
    pub fn to_rows(&self) -> DenseMatrix {
        DenseMatrix::new(
            self.batch,
            self.channels * self.height * self.width,
            self.values.clone(),
        )
        .expect("shape consistent by construction")
    }

    /// Contiguous sub-batch `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<ImageBatch> {
        if len == 0 || start + len > self.batch {
            return Err(CoreError::InvalidArgument(format!(
                "slice [{start}, {start}+{len}) out of range for batch {}",
                self.batch
            )));
        }
        let stride = self.channels * self.height * self.width;
        Ok(ImageBatch {
            batch: len,
            channels: self.channels,
            height: self.height,
            width: self.width,
            values: self.values[start * stride..(start + len) * stride].to_vec(),
        })
    }
}

/// Low-rank Gaussian sampler description: `z = U diag(sqrt(spectrum)) e + m`
/// with a seeded random orthonormal `U` and standard normal `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLowRankSpec {
    pub dimension: usize,
    /// Descending positive eigenvalues; fewer entries than `dimension`
    /// leaves the remaining directions at zero variance.
    pub spectrum: Vec<f64>,
    pub count: usize,
    pub seed: u64,
    /// Optional offset, zero when absent.
    pub mean: Option<Vec<f64>>,
}

/// Samples plus the ground truth they were drawn from.
#[derive(Debug, Clone)]
pub struct GaussianLowRankData {
    /// M x N sample matrix.
    pub samples: DenseMatrix,
    /// Orthonormal factor basis, N x rank.
    pub basis: DenseMatrix,
    /// True covariance `U diag(spectrum) U^T`, N x N.
    pub covariance: DenseMatrix,
    pub mean: Vec<f64>,
}

pub fn gen_gaussian_lowrank(spec: &GaussianLowRankSpec) -> Result<GaussianLowRankData> {
    let n = spec.dimension;
    let rank = spec.spectrum.len();
    if n == 0 || spec.count == 0 {
        return Err(CoreError::InvalidArgument(
            "dimension and count must be at least 1".into(),
        ));
    }
    if rank == 0 || rank > n {
        return Err(CoreError::InvalidArgument(format!(
            "spectrum must have between 1 and {n} entries, got {rank}"
        )));
    }
    for w in spec.spectrum.windows(2) {
        if w[1] > w[0] {
            return Err(CoreError::InvalidArgument(
                "spectrum must be non-increasing".into(),
            ));
        }
    }
    if !spec.spectrum.iter().all(|&l| l > 0.0 && l.is_finite()) {
        return Err(CoreError::InvalidArgument(
            "spectrum entries must be positive and finite".into(),
        ));
    }
    let mean = match &spec.mean {
        Some(m) if m.len() != n => {
            return Err(CoreError::DimensionMismatch(format!(
                "mean has dimension {}, expected {n}",
                m.len()
            )))
        }
        Some(m) => m.clone(),
        None => vec![0.0; n],
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let basis = linalg::random_orthonormal(n, rank, &mut rng)?;
    let scales: Vec<f64> = spec.spectrum.iter().map(|l| l.sqrt()).collect();

    let mut samples = Vec::with_capacity(spec.count * n);
    for _ in 0..spec.count {
        let coeffs: Vec<f64> = scales
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for i in 0..n {
            let mut acc = mean[i];
            for (j, &c) in coeffs.iter().enumerate() {
                acc += basis[(i, j)] * c;
            }
            samples.push(acc);
        }
    }

    let mut covariance = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, &l) in spec.spectrum.iter().enumerate() {
                acc += basis[(i, k)] * l * basis[(j, k)];
            }
            covariance[(i, j)] = acc;
            covariance[(j, i)] = acc;
        }
    }

    Ok(GaussianLowRankData {
        samples: DenseMatrix::new(spec.count, n, samples)?,
        basis,
        covariance,
        mean,
    })
}

/// Shape drawn by the toy image generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapeKind {
    #[default]
    Disc,
    Rect,
}

/// Toy image generator description: grayscale `side x side` images of one
/// anti-aliased shape each, with factors drawn from seeded uniforms.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyShapesSpec {
    pub side: usize,
    pub count: usize,
    pub seed: u64,
    pub shape: ShapeKind,
}

/// Generative factors of one toy image, in pixel units except brightness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFactors {
    /// Horizontal center.
    pub x_center: f64,
    /// Radius (disc) or half-extent (rect).
    pub size: f64,
    /// Peak intensity in [0, 1].
    pub brightness: f64,
}

const X_CENTER_RANGE: (f64, f64) = (0.30, 0.70);
const SIZE_RANGE: (f64, f64) = (0.20, 0.32);
const BRIGHTNESS_RANGE: (f64, f64) = (0.30, 1.00);

/// Render one shape into a `side x side` grayscale plane. Edges are
/// anti-aliased over one pixel; the vertical center is fixed at `side / 2`.
pub fn render_shape(side: usize, kind: ShapeKind, factors: &ShapeFactors) -> Vec<f64> {
    let cy = side as f64 / 2.0;
    let mut pixels = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let dx = (x as f64 + 0.5) - factors.x_center;
            let dy = (y as f64 + 0.5) - cy;
            let coverage = match kind {
                ShapeKind::Disc => {
                    let d = (dx * dx + dy * dy).sqrt();
                    (factors.size - d + 0.5).clamp(0.0, 1.0)
                }
                ShapeKind::Rect => {
                    let cx = (factors.size - dx.abs() + 0.5).clamp(0.0, 1.0);
                    let cyv = (factors.size - dy.abs() + 0.5).clamp(0.0, 1.0);
                    cx * cyv
                }
            };
            pixels.push(factors.brightness * coverage);
        }
    }
    pixels
}

/// Generate toy images together with the factors that produced them.
pub fn gen_toy_shapes(spec: &ToyShapesSpec) -> Result<(ImageBatch, Vec<ShapeFactors>)> {
    if spec.side < 8 {
        return Err(CoreError::InvalidArgument(format!(
            "image side must be at least 8, got {}",
            spec.side
        )));
    }
    if spec.count == 0 {
        return Err(CoreError::InvalidArgument(
            "count must be at least 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.side as f64;
    let mut values = Vec::with_capacity(spec.count * spec.side * spec.side);
    let mut factors = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let f = ShapeFactors {
            x_center: rng.random_range(X_CENTER_RANGE.0 * side..X_CENTER_RANGE.1 * side),
            size: rng.random_range(SIZE_RANGE.0 * side..SIZE_RANGE.1 * side),
            brightness: rng.random_range(BRIGHTNESS_RANGE.0..BRIGHTNESS_RANGE.1),
        };
        values.extend(render_shape(spec.side, spec.shape, &f));
        factors.push(f);
    }
    let images = ImageBatch::new(spec.count, 1, spec.side, spec.side, values)?;
    Ok((images, factors))
}

/// Write one grayscale plane as binary PGM (P5), maxval 255. Values are
/// clamped to [0, 1] and rounded.
pub fn save_pgm(path: &Path, width: usize, height: usize, pixels: &[f64]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(CoreError::DimensionMismatch(format!(
            "pgm {width}x{height} needs {} pixels, got {}",
            width * height,
            pixels.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(
        pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes).map_err(|e| {
        CoreError::Pgm(PgmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })
}

/// Read one binary PGM (P5) file with maxval 255; pixels scale to [0, 1].
pub fn load_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| {
        CoreError::Pgm(PgmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    })?;
    let name = path.display().to_string();
    let malformed = |reason: &str| {
        CoreError::Pgm(PgmError::MalformedHeader {
            path: name.clone(),
            reason: reason.to_string(),
        })
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(malformed("missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and '#' comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("header ended early")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(malformed("expected a decimal field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are ascii");
        *field = text
            .parse()
            .map_err(|_| malformed("field does not fit in usize"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(malformed("zero image dimension"));
    }
    if maxval != 255 {
        return Err(malformed("maxval must be 255"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(malformed("expected single whitespace before pixel data")),
    }
    let expected = width * height;
    let pixel_bytes = &bytes[pos..];
    if pixel_bytes.len() < expected {
        return Err(CoreError::Pgm(PgmError::TruncatedData(name)));
    }
    let pixels = pixel_bytes[..expected]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    Ok((width, height, pixels))
}

/// Load every `.pgm` file in a directory, in lexicographic file-name order,
/// as one single-channel image batch. All files must share dimensions.
pub fn load_pgm_dir(dir: &Path) -> Result<ImageBatch> {
    let entries = fs::read_dir(dir)
        .map_err(|_| CoreError::Pgm(PgmError::MissingDirectory(dir.display().to_string())))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|ext| ext.eq_ignore_ascii_case("pgm"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CoreError::Pgm(PgmError::EmptyDirectory(
            dir.display().to_string(),
        )));
    }

    let mut dims: Option<(usize, usize)> = None;
    let mut values = Vec::new();
    for path in &paths {
        let (w, h, pixels) = load_pgm(path)?;
        match dims {
            None => dims = Some((w, h)),
            Some((ew, eh)) if (w, h) != (ew, eh) => {
                return Err(CoreError::Pgm(PgmError::MixedDimensions {
                    path: path.display().to_string(),
                    got: format!("{w}x{h}"),
                    expected: format!("{ew}x{eh}"),
                }));
            }
            Some(_) => {}
        }
        values.extend(pixels);
    }
    let (w, h) = dims.expect("at least one file");
    ImageBatch::new(paths.len(), 1, h, w, values)
}
