//! Reconstruction quality metrics and latent storage-cost accounting.

use crate::error::{CoreError, Result};

/// SSIM window side; uniform weighting, stride 1.
pub const SSIM_WINDOW: usize = 8;

/// Storage cost of one image's latent code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitBudgetSpec {
    /// `tokens * active_channels * bits_per_value` for continuous coefficients.
    Continuous {
        tokens: u64,
        active_channels: u64,
        bits_per_value: u64,
    },
    /// `tokens * log2(codebook_size)` for codebook indices.
    Discrete { tokens: u64, codebook_size: u64 },
}

impl BitBudgetSpec {
    fn validate(&self) -> Result<()> {
        match *self {
            BitBudgetSpec::Continuous {
                tokens,
                active_channels,
                bits_per_value,
            } => {
                if tokens == 0 || active_channels == 0 || bits_per_value == 0 {
                    return Err(CoreError::InvalidArgument(
                        "continuous budget needs tokens, channels and bits >= 1".into(),
                    ));
                }
            }
            BitBudgetSpec::Discrete {
                tokens,
                codebook_size,
            } => {
                if tokens == 0 || codebook_size < 2 {
                    return Err(CoreError::InvalidArgument(
                        "discrete budget needs tokens >= 1 and codebook size >= 2".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Latent bits for one image. Discrete budgets are real-valued
/// (`tokens * log2(K)`, not rounded); see [`bit_budget_ceil`] for the
/// integer-bits-per-token variant.
pub fn bit_budget(spec: &BitBudgetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match *spec {
        BitBudgetSpec::Continuous {
            tokens,
            active_channels,
            bits_per_value,
        } => (tokens * active_channels * bits_per_value) as f64,
        BitBudgetSpec::Discrete {
            tokens,
            codebook_size,
        } => tokens as f64 * (codebook_size as f64).log2(),
    })
}

/// Like [`bit_budget`] but charging whole bits per token:
/// `tokens * ceil(log2(K))` for discrete codes.
pub fn bit_budget_ceil(spec: &BitBudgetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(match *spec {
        BitBudgetSpec::Continuous { .. } => bit_budget(spec)?,
        BitBudgetSpec::Discrete {
            tokens,
            codebook_size,
        } => tokens as f64 * (codebook_size as f64).log2().ceil(),
    })
}

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)` with MSE taken
/// per value. Identical inputs report positive infinity.
pub fn psnr(x_hat: &[f64], x: &[f64], peak: f64) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "psnr inputs have {} and {} values",
            x_hat.len(),
            x.len()
        )));
    }
    if x_hat.is_empty() {
        return Err(CoreError::InvalidArgument(
            "psnr needs at least one value".into(),
        ));
    }
    if !peak.is_finite() || peak <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "peak must be positive, got {peak}"
        )));
    }
    let mse = x_hat
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x_hat.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean structural similarity of two planes over all 8x8 windows at stride 1,
/// uniform weights, constants `C1 = (0.01 peak)^2` and `C2 = (0.03 peak)^2`.
/// Both sides must be at least the window size.
///
/// Window statistics come from summed-area tables; the naive per-window
/// reference lives in the test suite.
pub fn ssim_plane(x_hat: &[f64], x: &[f64], height: usize, width: usize, peak: f64) -> Result<f64> {
    if x_hat.len() != height * width || x.len() != height * width {
        return Err(CoreError::DimensionMismatch(format!(
            "ssim plane {height}x{width} needs {} values, got {} and {}",
            height * width,
            x_hat.len(),
            x.len()
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(CoreError::InvalidArgument(format!(
            "image {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} ssim window"
        )));
    }
    if !peak.is_finite() || peak <= 0.0 {
        return Err(CoreError::InvalidArgument(format!(
            "peak must be positive, got {peak}"
        )));
    }

    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);

    // summed-area tables for x, y, x^2, y^2, xy
    let w1 = width + 1;
    let h1 = height + 1;
    let mut sx = vec![0.0; w1 * h1];
    let mut sy = vec![0.0; w1 * h1];
    let mut sxx = vec![0.0; w1 * h1];
    let mut syy = vec![0.0; w1 * h1];
    let mut sxy = vec![0.0; w1 * h1];
    for r in 0..height {
        for c in 0..width {
            let a = x_hat[r * width + c];
            let b = x[r * width + c];
            let idx = (r + 1) * w1 + (c + 1);
            let up = r * w1 + (c + 1);
            let left = (r + 1) * w1 + c;
            let diag = r * w1 + c;
            sx[idx] = a + sx[up] + sx[left] - sx[diag];
            sy[idx] = b + sy[up] + sy[left] - sy[diag];
            sxx[idx] = a * a + sxx[up] + sxx[left] - sxx[diag];
            syy[idx] = b * b + syy[up] + syy[left] - syy[diag];
            sxy[idx] = a * b + sxy[up] + sxy[left] - sxy[diag];
        }
    }
    let window_sum = |table: &[f64], r: usize, c: usize| -> f64 {
        table[(r + SSIM_WINDOW) * w1 + (c + SSIM_WINDOW)]
            - table[r * w1 + (c + SSIM_WINDOW)]
            - table[(r + SSIM_WINDOW) * w1 + c]
            + table[r * w1 + c]
    };

    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=height - SSIM_WINDOW {
        for c in 0..=width - SSIM_WINDOW {
            let mx = window_sum(&sx, r, c) / area;
            let my = window_sum(&sy, r, c) / area;
            let vx = window_sum(&sxx, r, c) / area - mx * mx;
            let vy = window_sum(&syy, r, c) / area - my * my;
            let cov = window_sum(&sxy, r, c) / area - mx * my;
            let score = ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += score;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// SSIM of multichannel images: the mean of per-channel plane scores.
pub fn ssim_channels(
    x_hat: &[f64],
    x: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    peak: f64,
) -> Result<f64> {
    if channels == 0 {
        return Err(CoreError::InvalidArgument(
            "need at least one channel".into(),
        ));
    }
    let plane = height * width;
    if x_hat.len() != channels * plane || x.len() != channels * plane {
        return Err(CoreError::DimensionMismatch(format!(
            "expected {channels}x{height}x{width} values, got {} and {}",
            x_hat.len(),
            x.len()
        )));
    }
    let mut total = 0.0;
    for ch in 0..channels {
        total += ssim_plane(
            &x_hat[ch * plane..(ch + 1) * plane],
            &x[ch * plane..(ch + 1) * plane],
            height,
            width,
            peak,
        )?;
    }
    Ok(total / channels as f64)
}
