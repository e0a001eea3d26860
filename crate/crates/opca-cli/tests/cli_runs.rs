//! Behavior of the binary and command layer: determinism, exit codes,
//! output file shapes and the documented command contracts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use opca_cli::commands::{cmd_eval, cmd_train, cmd_traverse};
use opca_cli::config::load_config;
use opca_core::datasets::load_pgm;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("opca_cli_{tag}_{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn small_config_body(out_dir: &Path, extra: &str) -> String {
    format!(
        "dataset = toy_shapes\n\
         image_side = 16\n\
         image_count = 32\n\
         data_seed = 5\n\
         latent_channels = 8\n\
         encoder_hidden = 24\n\
         decoder_hidden = 24\n\
         seed = 9\n\
         epochs = 2\n\
         batch_size = 8\n\
         learning_rate = 0.002\n\
         out_dir = {}\n\
         {extra}",
        out_dir.display()
    )
}

fn opca() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opca"))
}

#[test]
fn one_epoch_run_emits_a_checkpoint_loadable_by_eval() {
    let dir = temp_dir("smoke");
    let out = dir.join("out");
    let conf = write_config(
        &dir,
        "c.conf",
        &format!(
            "dataset = toy_shapes\nimage_side = 16\nimage_count = 8\nlatent_channels = 4\n\
             encoder_hidden = 16\ndecoder_hidden = 16\nepochs = 1\nbatch_size = 8\nout_dir = {}\n",
            out.display()
        ),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    assert!(outputs.final_checkpoint.exists());
    assert_eq!(outputs.epoch_checkpoints.len(), 1);
    let row = cmd_eval(&cfg, &outputs.final_checkpoint, None).unwrap();
    assert_eq!(row.k, 4);
    assert!(out.join("eval.csv").exists());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn identical_runs_produce_identical_csv_bytes() {
    let dir = temp_dir("determinism");
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    let conf_a = write_config(&dir, "a.conf", &small_config_body(&out_a, ""));
    let conf_b = write_config(&dir, "b.conf", &small_config_body(&out_b, ""));

    let cfg_a = load_config(&conf_a, &[]).unwrap();
    let cfg_b = load_config(&conf_b, &[]).unwrap();
    let outputs_a = cmd_train(&cfg_a).unwrap();
    let outputs_b = cmd_train(&cfg_b).unwrap();

    let loss_a = fs::read(&outputs_a.loss_csv).unwrap();
    let loss_b = fs::read(&outputs_b.loss_csv).unwrap();
    assert_eq!(loss_a, loss_b, "loss CSVs differ between identical runs");

    cmd_eval(&cfg_a, &outputs_a.final_checkpoint, Some(4)).unwrap();
    cmd_eval(&cfg_b, &outputs_b.final_checkpoint, Some(4)).unwrap();
    assert_eq!(
        fs::read(out_a.join("eval.csv")).unwrap(),
        fs::read(out_b.join("eval.csv")).unwrap()
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn overfit_run_loss_decreases_by_step_200() {
    let dir = temp_dir("overfit");
    let out = dir.join("out");
    // one 8-image batch per epoch: step == epoch index
    let conf = write_config(
        &dir,
        "c.conf",
        &format!(
            "dataset = toy_shapes\nimage_side = 16\nimage_count = 8\nlatent_channels = 8\n\
             encoder_hidden = 32\ndecoder_hidden = 32\nepochs = 201\nbatch_size = 8\n\
             learning_rate = 0.005\nout_dir = {}\n",
            out.display()
        ),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let text = fs::read_to_string(&outputs.loss_csv).unwrap();
    let losses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.len() >= 201);
    assert!(
        losses[200] < losses[0],
        "loss did not decrease: {} -> {}",
        losses[0],
        losses[200]
    );
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn eval_default_k_equals_explicit_full_k() {
    let dir = temp_dir("evalk");
    let out = dir.join("out");
    let conf = write_config(&dir, "c.conf", &small_config_body(&out, ""));
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let implicit = cmd_eval(&cfg, &outputs.final_checkpoint, None).unwrap();
    let explicit = cmd_eval(&cfg, &outputs.final_checkpoint, Some(8)).unwrap();
    assert_eq!(implicit, explicit);
    assert!(cmd_eval(&cfg, &outputs.final_checkpoint, Some(9)).is_err());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn traverse_strip_has_exactly_steps_frames() {
    let dir = temp_dir("traverse");
    let out = dir.join("out");
    let conf = write_config(
        &dir,
        "c.conf",
        &small_config_body(&out, "traverse_steps = 5\n"),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let traversal = cmd_traverse(&cfg, &outputs.final_checkpoint).unwrap();
    assert_eq!(traversal.frames.len(), 5);
    // strip dimensions follow the documented grid rule: 1 row of 5 cells
    let (w, h, _) = load_pgm(&traversal.strip_path).unwrap();
    assert_eq!(h, 16 + 2);
    assert_eq!(w, 5 * (16 + 2));
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn zero_width_traversal_range_freezes_the_frames() {
    let dir = temp_dir("traverse0");
    let out = dir.join("out");
    let conf = write_config(
        &dir,
        "c.conf",
        &small_config_body(&out, "traverse_min = 0.5\ntraverse_max = 0.5\n"),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let traversal = cmd_traverse(&cfg, &outputs.final_checkpoint).unwrap();
    for frame in &traversal.frames[1..] {
        assert_eq!(frame, &traversal.frames[0]);
    }
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn traverse_rejects_multi_patch_checkpoints() {
    let dir = temp_dir("traverse_mp");
    let out = dir.join("out");
    let conf = write_config(
        &dir,
        "c.conf",
        &small_config_body(
            &out,
            "layout = multi_patch\nlatent_height = 1\nlatent_width = 1\n",
        ),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let err = cmd_traverse(&cfg, &outputs.final_checkpoint).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn exit_codes_distinguish_error_classes() {
    let dir = temp_dir("exits");

    // unknown key -> config error, exit 1
    let bad_conf = write_config(&dir, "bad.conf", "bogus_key = 1\n");
    let status = opca().args(["train"]).arg(&bad_conf).status().unwrap();
    assert_eq!(status.code(), Some(1));

    // missing pgm directory -> data error, exit 2
    let missing = write_config(
        &dir,
        "missing.conf",
        &format!(
            "dataset = pgm_dir\npgm_dir = {}/nope\nepochs = 1\nout_dir = {}/out\n",
            dir.display(),
            dir.display()
        ),
    );
    let status = opca().args(["train"]).arg(&missing).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // unreadable checkpoint -> data error, exit 2
    let ok_conf = write_config(&dir, "ok.conf", &small_config_body(&dir.join("out"), ""));
    let garbage = dir.join("garbage.opca");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    let status = opca()
        .args(["eval"])
        .arg(&ok_conf)
        .arg("--checkpoint")
        .arg(&garbage)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // bad usage -> exit 1, help -> exit 0
    let status = opca().args(["no-such-command"]).status().unwrap();
    assert_eq!(status.code(), Some(1));
    let status = opca().args(["--help"]).output().unwrap();
    assert_eq!(status.status.code(), Some(0));

    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn set_overrides_reach_the_run() {
    let dir = temp_dir("set");
    let out = dir.join("out");
    let conf = write_config(&dir, "c.conf", &small_config_body(&out, ""));
    let status = opca()
        .args(["train"])
        .arg(&conf)
        .args(["--set", "epochs=1", "--set", "image_count=8"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    // only one epoch checkpoint exists
    assert!(out.join("checkpoint_epoch001.opca").exists());
    assert!(!out.join("checkpoint_epoch002.opca").exists());
    let _ = fs::remove_dir_all(&dir);
}

#[test]
fn pgm_dataset_round_trips_through_training() {
    let dir = temp_dir("pgm");
    let data_dir = dir.join("data");
    fs::create_dir_all(&data_dir).unwrap();
    // 12 tiny gradient images
    for i in 0..12 {
        let pixels: Vec<f64> = (0..16 * 16)
            .map(|p| ((p + i * 7) % 256) as f64 / 255.0)
            .collect();
        opca_core::datasets::save_pgm(&data_dir.join(format!("img_{i:02}.pgm")), 16, 16, &pixels)
            .unwrap();
    }
    let out = dir.join("out");
    let conf = write_config(
        &dir,
        "c.conf",
        &format!(
            "dataset = pgm_dir\npgm_dir = {}\nlatent_channels = 6\nencoder_hidden = 16\n\
             decoder_hidden = 16\nepochs = 1\nbatch_size = 4\nout_dir = {}\n",
            data_dir.display(),
            out.display()
        ),
    );
    let cfg = load_config(&conf, &[]).unwrap();
    let outputs = cmd_train(&cfg).unwrap();
    let row = cmd_eval(&cfg, &outputs.final_checkpoint, None).unwrap();
    assert!(row.mse.is_finite());
    let _ = fs::remove_dir_all(&dir);
}
