//! Implementations of the `train`, `eval`, `scaling`, `traverse` and
//! `budget` subcommands. Each writes its outputs under the config's
//! `out_dir` and returns the computed values for callers that want them.

use std::fs;
use std::path::{Path, PathBuf};

use opca_core::autoencoder::{AdamConfig, MlpStack, ToyAutoencoder, Trainer};
use opca_core::bottleneck::{BottleneckLayout, LatentTensor, LayoutMode};
use opca_core::datasets::{
    self, gen_toy_shapes, load_pgm_dir, save_pgm, ImageBatch, ShapeFactors, ToyShapesSpec,
};
use opca_core::linalg::DenseMatrix;
use opca_core::metrics::{self, BitBudgetSpec};
use opca_core::oja::OjaConfig;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::csvfmt::fmt_f64;
use crate::grid::{compose_grid, GRID_GAP};
use crate::{config_err, data_err, CliError};

/// Bits per stored float coefficient in budget accounting. A storage claim
/// only; all arithmetic stays in f64.
pub const BITS_PER_VALUE: u64 = 32;

fn ck_err(e: CheckpointError) -> CliError {
    CliError::Data(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

/// Images plus generation factors when the dataset provides them.
pub struct LoadedData {
    pub images: ImageBatch,
    pub factors: Option<Vec<ShapeFactors>>,
}

/// Materialize the config's dataset.
pub fn build_images(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    match cfg.dataset {
        DatasetKind::ToyShapes => {
            let spec = ToyShapesSpec {
                side: cfg.image_side,
                count: cfg.image_count,
                seed: cfg.data_seed,
                shape: cfg.shape,
            };
            let (images, factors) = gen_toy_shapes(&spec).map_err(config_err)?;
            Ok(LoadedData {
                images,
                factors: Some(factors),
            })
        }
        DatasetKind::PgmDir => {
            let dir = cfg.pgm_dir.as_ref().expect("validated by config");
            let images = load_pgm_dir(dir).map_err(data_err)?;
            Ok(LoadedData {
                images,
                factors: None,
            })
        }
    }
}

/// Fresh trainer from config and data shapes. Seeds derive from the root
/// seed: encoder +1, decoder +2, bottleneck +3.
pub fn build_trainer(cfg: &ExperimentConfig, images: &ImageBatch) -> Result<Trainer, CliError> {
    let image_shape = (images.channels(), images.height(), images.width());
    let pixels = image_shape.0 * image_shape.1 * image_shape.2;
    let latent_total = cfg.latent_total();

    let mut enc_dims = vec![pixels];
    enc_dims.extend(&cfg.encoder_hidden);
    enc_dims.push(latent_total);
    let mut dec_dims = vec![latent_total];
    dec_dims.extend(&cfg.decoder_hidden);
    dec_dims.push(pixels);

    let encoder = MlpStack::random(&enc_dims, cfg.seed.wrapping_add(1)).map_err(config_err)?;
    let decoder = MlpStack::random(&dec_dims, cfg.seed.wrapping_add(2)).map_err(config_err)?;
    let model = ToyAutoencoder::new(
        encoder,
        decoder,
        image_shape,
        (cfg.latent_channels, cfg.latent_height, cfg.latent_width),
    )
    .map_err(config_err)?;

    let state_dim = match cfg.layout {
        LayoutMode::SingleVector => latent_total,
        LayoutMode::MultiPatch => cfg.latent_channels,
    };
    let q = cfg.num_components.unwrap_or(state_dim);
    if q > state_dim {
        return Err(CliError::Config(format!(
            "num_components {q} exceeds the state dimension {state_dim}"
        )));
    }
    let oja = OjaConfig {
        num_components: q,
        seed: cfg.seed.wrapping_add(3),
        schedule: cfg.schedule(),
        gamma: cfg.gamma,
        ortho_period: cfg.ortho_period,
        eps_ortho: cfg.eps_ortho,
    };
    let layout = match cfg.layout {
        LayoutMode::SingleVector => BottleneckLayout::single_vector(
            cfg.latent_channels,
            cfg.latent_height,
            cfg.latent_width,
            &oja,
        ),
        LayoutMode::MultiPatch => BottleneckLayout::multi_patch(
            cfg.latent_channels,
            cfg.latent_height,
            cfg.latent_width,
            &oja,
        ),
    }
    .map_err(config_err)?
    .with_backward_mode(cfg.backward_mode);

    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        epsilon: cfg.adam_eps,
    };
    Trainer::new(model, layout, adam, cfg.update_before_forward).map_err(config_err)
}

fn trainer_checkpoint(cfg: &ExperimentConfig, trainer: &Trainer) -> Checkpoint {
    Checkpoint {
        model: trainer.model.clone(),
        layout: trainer.layout.clone(),
        root_seed: cfg.seed,
        data_seed: cfg.data_seed,
        step: trainer.global_step(),
    }
}

/// Paths produced by a training run.
#[derive(Debug)]
pub struct TrainOutputs {
    pub loss_csv: PathBuf,
    pub final_checkpoint: PathBuf,
    pub epoch_checkpoints: Vec<PathBuf>,
}

/// Train per the config: sequential batches in dataset order, a loss-curve
/// CSV row per step, a checkpoint per epoch plus a final one.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutputs, CliError> {
    let data = build_images(cfg)?;
    let mut trainer = build_trainer(cfg, &data.images)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;

    let mut csv = String::from("step,loss,ortho_drift,mean_delta_norm\n");
    let count = data.images.batch();
    let mut step = 0u64;
    let mut epoch_checkpoints = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut start = 0;
        let mut epoch_loss = 0.0;
        let mut batches = 0u64;
        while start < count {
            let len = cfg.batch_size.min(count - start);
            let batch = data.images.slice(start, len).map_err(data_err)?;
            let report = trainer.train_step(&batch).map_err(data_err)?;
            csv.push_str(&format!(
                "{step},{},{},{}\n",
                fmt_f64(report.loss),
                fmt_f64(report.max_ortho_drift),
                fmt_f64(report.mean_delta_norm),
            ));
            epoch_loss += report.loss;
            batches += 1;
            step += 1;
            start += len;
        }
        let path = cfg.out_dir.join(format!("checkpoint_epoch{epoch:03}.opca"));
        save_checkpoint(&path, &trainer_checkpoint(cfg, &trainer)).map_err(ck_err)?;
        epoch_checkpoints.push(path);
        println!(
            "epoch {epoch}/{}: mean loss {}",
            cfg.epochs,
            fmt_f64(epoch_loss / batches as f64)
        );
    }

    let loss_csv = cfg.out_dir.join("loss.csv");
    fs::write(&loss_csv, csv).map_err(|e| io_err(&loss_csv, e))?;
    let final_checkpoint = cfg.out_dir.join("checkpoint.opca");
    save_checkpoint(&final_checkpoint, &trainer_checkpoint(cfg, &trainer)).map_err(ck_err)?;
    println!("wrote {}", loss_csv.display());
    println!("wrote {}", final_checkpoint.display());
    Ok(TrainOutputs {
        loss_csv,
        final_checkpoint,
        epoch_checkpoints,
    })
}

/// One metrics row of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub k: usize,
    pub bits: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check_images_match(ck: &Checkpoint, images: &ImageBatch) -> Result<(), CliError> {
    let got = (images.channels(), images.height(), images.width());
    if got != ck.model.image_shape {
        return Err(CliError::Config(format!(
            "dataset images are {}x{}x{}, checkpoint expects {}x{}x{}",
            got.0,
            got.1,
            got.2,
            ck.model.image_shape.0,
            ck.model.image_shape.1,
            ck.model.image_shape.2
        )));
    }
    Ok(())
}

/// Sorted-truncated evaluation at `k` components: per-pixel MSE over the
/// whole dataset, PSNR from that MSE, mean per-image SSIM, and the
/// continuous bit budget `tokens * k * 32`.
pub fn eval_at_k(ck: &Checkpoint, images: &ImageBatch, k: usize) -> Result<EvalRow, CliError> {
    let q = ck.layout.num_components();
    if k == 0 || k > q {
        return Err(CliError::Config(format!("k must lie in 1..={q}, got {k}")));
    }
    let (h, _) = ck.model.encode(images).map_err(data_err)?;
    let layout = ck.layout.sorted_truncated(&h, k).map_err(config_err)?;
    let h_hat = layout.forward(&h).map_err(data_err)?;
    let (x_hat, _) = ck.model.decode(&h_hat).map_err(data_err)?;

    let target = images.values();
    let mse = x_hat
        .data()
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / target.len() as f64;
    let psnr = metrics::psnr(x_hat.data(), target, 1.0).map_err(data_err)?;
    let mut ssim = 0.0;
    let (c, hh, ww) = ck.model.image_shape;
    for b in 0..images.batch() {
        ssim += metrics::ssim_channels(x_hat.row(b), images.image(b), c, hh, ww, 1.0)
            .map_err(data_err)?;
    }
    ssim /= images.batch() as f64;

    let bits = metrics::bit_budget(&BitBudgetSpec::Continuous {
        tokens: ck.layout.token_count() as u64,
        active_channels: k as u64,
        bits_per_value: BITS_PER_VALUE,
    })
    .map_err(config_err)?;
    Ok(EvalRow {
        k,
        bits,
        mse,
        psnr,
        ssim,
    })
}

fn eval_row_cells(row: &EvalRow) -> String {
    format!(
        "{},{},{},{},{}",
        row.k,
        fmt_f64(row.bits),
        fmt_f64(row.mse),
        fmt_f64(row.psnr),
        fmt_f64(row.ssim)
    )
}

/// Evaluate a checkpoint on the config's dataset at truncation `k`
/// (default: all components). Writes `eval.csv`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    k: Option<usize>,
) -> Result<EvalRow, CliError> {
    let ck = load_checkpoint(checkpoint_path).map_err(ck_err)?;
    let data = build_images(cfg)?;
    check_images_match(&ck, &data.images)?;
    let k = k.unwrap_or_else(|| ck.layout.num_components());
    let row = eval_at_k(&ck, &data.images, k)?;

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    let path = cfg.out_dir.join("eval.csv");
    let csv = format!("k,bits,mse,psnr,ssim\n{}\n", eval_row_cells(&row));
    fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(row)
}

/// Sweep the config's basis fractions (sorted ascending): one metrics row
/// per fraction with `k = max(1, round(fraction * Q))`, plus a PGM grid of
/// originals over reconstructions for each fraction.
pub fn cmd_scaling(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<Vec<(f64, EvalRow)>, CliError> {
    let ck = load_checkpoint(checkpoint_path).map_err(ck_err)?;
    let data = build_images(cfg)?;
    check_images_match(&ck, &data.images)?;
    let q = ck.layout.num_components();

    let mut fractions = cfg.fractions.clone();
    fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    let mut rows = Vec::with_capacity(fractions.len());
    let mut csv = String::from("fraction,k,bits,mse,psnr,ssim\n");
    let preview = data.images.batch().min(8);
    let (c, hh, ww) = ck.model.image_shape;
    for (i, &fraction) in fractions.iter().enumerate() {
        let k = ((fraction * q as f64).round() as usize).max(1).min(q);
        let row = eval_at_k(&ck, &data.images, k)?;
        csv.push_str(&format!("{},{}\n", fmt_f64(fraction), eval_row_cells(&row)));

        // grid: originals on top, reconstructions below
        let (h, _) = ck.model.encode(&data.images).map_err(data_err)?;
        let layout = ck.layout.sorted_truncated(&h, k).map_err(config_err)?;
        let h_hat = layout.forward(&h).map_err(data_err)?;
        let (x_hat, _) = ck.model.decode(&h_hat).map_err(data_err)?;
        if c == 1 {
            let mut cells: Vec<&[f64]> = Vec::with_capacity(2 * preview);
            for b in 0..preview {
                cells.push(data.images.image(b));
            }
            for b in 0..preview {
                cells.push(x_hat.row(b));
            }
            let (gh, gw, pixels) = compose_grid(&cells, 2, preview, hh, ww, GRID_GAP);
            let path = cfg.out_dir.join(format!("scaling_{i:02}_k{k}.pgm"));
            save_pgm(&path, gw, gh, &pixels).map_err(data_err)?;
        }
        rows.push((fraction, row));
    }
    let path = cfg.out_dir.join("scaling.csv");
    fs::write(&path, csv).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(rows)
}

/// Traversal results: the coefficient used per frame and the frames
/// themselves (row-major planes).
#[derive(Debug)]
pub struct TraverseOutput {
    /// Values in units of the component's explained standard deviation.
    pub values: Vec<f64>,
    /// Raw coefficients `value * sigma` substituted into the code.
    pub coefficients: Vec<f64>,
    /// Decoded frames, one plane per traversal step.
    pub frames: Vec<Vec<f64>>,
    pub strip_path: PathBuf,
    pub csv_path: PathBuf,
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..steps)
        .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// Vary one sorted component of a single image's code over an evenly spaced
/// range measured in units of that component's explained standard deviation,
/// holding all other coefficients fixed. Emits a horizontal PGM strip and a
/// CSV of the coefficients used. Defined for the global layout only.
pub fn cmd_traverse(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
) -> Result<TraverseOutput, CliError> {
    let ck = load_checkpoint(checkpoint_path).map_err(ck_err)?;
    if ck.layout.mode() != LayoutMode::SingleVector {
        return Err(CliError::Config(
            "traverse requires a single_vector checkpoint; per-position layouts have no global code".into(),
        ));
    }
    let data = build_images(cfg)?;
    check_images_match(&ck, &data.images)?;
    let (c, hh, ww) = ck.model.image_shape;
    if c != 1 {
        return Err(CliError::Config(
            "traverse strips are grayscale; dataset has multiple channels".into(),
        ));
    }
    let component = cfg.traverse_component;
    let q = ck.layout.num_components();
    if component >= q {
        return Err(CliError::Config(format!(
            "traverse_component {component} out of range for {q} components"
        )));
    }
    if cfg.traverse_image >= data.images.batch() {
        return Err(CliError::Config(format!(
            "traverse_image {} out of range for {} images",
            cfg.traverse_image,
            data.images.batch()
        )));
    }

    // sort components on the dataset's latent statistics
    let (h_all, _) = ck.model.encode(&data.images).map_err(data_err)?;
    let latents = h_all.to_rows();
    let state = ck.layout.states()[0]
        .sort_components(&latents)
        .map_err(config_err)?;
    let variances = state.explained_variance(&latents).map_err(config_err)?;
    let sigma = variances[component].sqrt();

    let target = data
        .images
        .slice(cfg.traverse_image, 1)
        .map_err(config_err)?;
    let (h, _) = ck.model.encode(&target).map_err(data_err)?;
    let code = state.project(h.sample(0)).map_err(data_err)?;

    let values = linspace(cfg.traverse_min, cfg.traverse_max, cfg.traverse_steps);
    let mut coefficients = Vec::with_capacity(values.len());
    let mut frames = Vec::with_capacity(values.len());
    let (d, lh, lw) = ck.model.latent_shape;
    for &v in &values {
        let mut modified = code.clone();
        modified[component] = v * sigma;
        coefficients.push(modified[component]);
        let z = state.reconstruct(&modified).map_err(data_err)?;
        let h_mod = LatentTensor::from_rows(
            &DenseMatrix::new(1, z.len(), z).map_err(data_err)?,
            d,
            lh,
            lw,
        )
        .map_err(data_err)?;
        let (x_hat, _) = ck.model.decode(&h_mod).map_err(data_err)?;
        frames.push(x_hat.row(0).to_vec());
    }

    fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
    let cells: Vec<&[f64]> = frames.iter().map(|f| f.as_slice()).collect();
    let (gh, gw, pixels) = compose_grid(&cells, 1, frames.len(), hh, ww, GRID_GAP);
    let strip_path = cfg.out_dir.join("traverse.pgm");
    save_pgm(&strip_path, gw, gh, &pixels).map_err(data_err)?;

    let mut csv = String::from("frame,value,coefficient\n");
    for (i, (&v, &coeff)) in values.iter().zip(&coefficients).enumerate() {
        csv.push_str(&format!("{i},{},{}\n", fmt_f64(v), fmt_f64(coeff)));
    }
    let csv_path = cfg.out_dir.join("traverse.csv");
    fs::write(&csv_path, &csv).map_err(|e| io_err(&csv_path, e))?;
    println!("wrote {}", strip_path.display());
    println!("wrote {}", csv_path.display());
    Ok(TraverseOutput {
        values,
        coefficients,
        frames,
        strip_path,
        csv_path,
    })
}

/// Parse `N,k,b` / `N,K` budget specs and print one table row each.
/// Returns the table text (also printed by the binary).
pub fn cmd_budget(
    continuous: &[String],
    discrete: &[String],
    ceil: bool,
) -> Result<String, CliError> {
    let mut out = String::from("kind,tokens,active_channels,bits_per_value,codebook_size,bits\n");
    let budget = |spec: &BitBudgetSpec| -> Result<f64, CliError> {
        if ceil {
            metrics::bit_budget_ceil(spec).map_err(config_err)
        } else {
            metrics::bit_budget(spec).map_err(config_err)
        }
    };
    for item in continuous {
        let parts = parse_u64_list(item, 3, "continuous spec needs N,k,b")?;
        let spec = BitBudgetSpec::Continuous {
            tokens: parts[0],
            active_channels: parts[1],
            bits_per_value: parts[2],
        };
        out.push_str(&format!(
            "continuous,{},{},{},,{}\n",
            parts[0],
            parts[1],
            parts[2],
            fmt_f64(budget(&spec)?)
        ));
    }
    for item in discrete {
        let parts = parse_u64_list(item, 2, "discrete spec needs N,K")?;
        let spec = BitBudgetSpec::Discrete {
            tokens: parts[0],
            codebook_size: parts[1],
        };
        out.push_str(&format!(
            "discrete,{},,,{},{}\n",
            parts[0],
            parts[1],
            fmt_f64(budget(&spec)?)
        ));
    }
    Ok(out)
}

fn parse_u64_list(item: &str, want: usize, context: &str) -> Result<Vec<u64>, CliError> {
    let parts: Vec<u64> = item
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{context}: {item:?}")))
        })
        .collect::<Result<_, _>>()?;
    if parts.len() != want {
        return Err(CliError::Config(format!("{context}: {item:?}")));
    }
    Ok(parts)
}

/// Helpers shared with tests: the datasets module re-exported for binary
/// consumers that only link this crate.
pub use datasets::load_pgm;
