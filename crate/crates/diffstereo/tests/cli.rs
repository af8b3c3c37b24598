mod common;

use common::*;
use diffstereo::checkpoint::Checkpoint;
use diffstereo::image_io;

const STAGE1: &str = r#"{
  "stage": 1, "epochs": 2, "batch_size": 1, "augment": true,
  "manifest": "data/manifest.jsonl", "out_dir": "run", "seed": 5
}"#;

const STAGE2: &str = r#"{
  "stage": 2, "epochs": 1, "batch_size": 1,
  "manifest": "data/manifest.jsonl", "out_dir": "run",
  "init_checkpoint": "run/stage1_last.ckpt", "seed": 5
}"#;

#[test]
fn help_and_argument_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
    let o = run(&["train", "--config", "x.json", "--frobnicate"]);
    assert_eq!(code(&o), 1);
    assert_eq!(stderr(&o).trim().lines().count(), 1);
    assert_eq!(code(&run(&["infer", "--task", "sr8"])), 1);
    assert_eq!(code(&run(&[])), 1);
}

#[test]
fn missing_inputs_are_user_errors() {
    let o = run(&["train", "--config", "/nonexistent/c.json"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert_eq!(err.trim().lines().count(), 1);
    assert!(err.contains("/nonexistent/c.json"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "c.json", "{\"stage\": 1, \"lr_typo\": 1}");
    let o = run(&["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("lr_typo"));

    let junk = dir.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let (l, r) = write_lq(dir.path());
    let o = run(&["infer", "--ckpt", junk.to_str().unwrap(), "--left", l.to_str().unwrap(), "--right", r.to_str().unwrap(), "--task", "sr4", "--out", "o"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("not a valid checkpoint"));
}

#[test]
fn selftest_exits_zero() {
    let o = run(&["selftest"]);
    assert_eq!(code(&o), 0);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn prepare_data_writes_cache_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&dir.path().join("src"));
    let out = dir.path().join("prepared");
    let o = run(&["prepare-data", "--manifest", m.to_str().unwrap(), "--task", "sr4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lq = image_io::read_rgb(&out.join("lq_sr4/scene_L.png")).unwrap();
    assert_eq!(lq.shape(), &[3, 30, 90]);
    let index = std::fs::read_to_string(out.join("lq_sr4/patches.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 1);
    assert!(out.join("hq/scene_R.png").exists());
    let copy = diffstereo::manifest::read(&out.join("manifest.jsonl")).unwrap();
    assert_eq!(copy[0].hq_left, out.join("hq/scene_L.png"));
}

/// Stage 1, stage 2, then inference, evaluation and latent dumps.
#[test]
fn two_stage_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = write_dataset(&root.join("data"));
    let c1 = write_config(root, "stage1.json", STAGE1);
    let c2 = write_config(root, "stage2.json", STAGE2);

    let o = run(&["train", "--config", c1.to_str().unwrap(), "--stage", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let log = std::fs::read_to_string(root.join("run/train_stage1.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["step", "loss", "rec", "para", "lr"] {
        assert!(first.get(key).is_some(), "log lacks {key}");
    }
    assert!(root.join("run/stage1_epoch0001.ckpt").exists());
    let s1 = Checkpoint::load(&root.join("run/stage1_last.ckpt")).unwrap();

    let (l, r) = write_lq(root);
    let (ls, rs) = (l.to_str().unwrap(), r.to_str().unwrap());
    let ck1 = root.join("run/stage1_last.ckpt");
    let o = run(&["infer", "--ckpt", ck1.to_str().unwrap(), "--left", ls, "--right", rs, "--task", "sr4", "--out", "x"]);
    assert_eq!(code(&o), 1, "stage-1 guided checkpoints cannot sample latents");
    assert!(stderr(&o).contains("stage 2"));

    let o = run(&["train", "--config", c2.to_str().unwrap(), "--stage", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ck2 = root.join("run/stage2_last.ckpt");
    let s2 = Checkpoint::load(&ck2).unwrap();
    assert_eq!(s2.tensors.fingerprint("lren."), s1.tensors.fingerprint("lren."));
    let log2 = std::fs::read_to_string(root.join("run/train_stage2.jsonl")).unwrap();
    let line: serde_json::Value = serde_json::from_str(log2.lines().next().unwrap()).unwrap();
    assert!(line["diff"].is_number());

    let ck2s = ck2.to_str().unwrap();
    let out = root.join("restored");
    let o = run(&["infer", "--ckpt", ck2s, "--left", ls, "--right", rs, "--task", "sr4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = std::fs::read(out.join("restored_L.png")).unwrap();
    for v in ["restored_L.png", "restored_R.png"] {
        assert_eq!(image_io::read_rgb(&out.join(v)).unwrap().shape(), &[3, 120, 360]);
    }
    let o = run(&["infer", "--ckpt", ck2s, "--left", ls, "--right", rs, "--task", "sr4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(out.join("restored_L.png")).unwrap(), a, "inference is repeatable");
    let o = run(&["infer", "--ckpt", ck2s, "--left", ls, "--right", rs, "--task", "blur", "--out", "x"]);
    assert_eq!(code(&o), 1);
    let o = run(&["--profile", "paper", "infer", "--ckpt", ck2s, "--left", ls, "--right", rs, "--task", "sr4", "--out", "x"]);
    assert_eq!(code(&o), 1);

    let dump = root.join("lhfr");
    let o = run(&["dump-lhfr", "--ckpt", ck2s, "--left", ls, "--right", rs, "--out", dump.to_str().unwrap(), "--per-step"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for view in ["left", "right"] {
        for t in 0..=4 {
            let png = dump.join(format!("{view}_t{t}.png"));
            let gray = image::open(&png).unwrap();
            assert_eq!((gray.width(), gray.height()), (90, 30));
            assert_eq!(std::fs::metadata(png.with_extension("f32")).unwrap().len(), 4 * 30 * 90);
        }
    }
    let pngs = std::fs::read_dir(&dump).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
    assert_eq!(pngs, 10);

    let report = root.join("report.json");
    let o = run(&["eval", "--ckpt", ck2s, "--manifest", manifest.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let item = &rep["items"][0];
    for key in ["id", "psnr_l", "psnr_r", "psnr_avg", "ssim_l", "ssim_r", "ssim_avg"] {
        assert!(item.get(key).is_some(), "report lacks {key}");
    }
    assert_eq!(rep["guide"], "diffusion");
    assert!(rep["mean"]["psnr_avg"].is_number());

    let broken = root.join("data/broken.jsonl");
    std::fs::write(
        &broken,
        "{\"id\":\"scene\",\"hq_left\":\"hq/scene_L.png\",\"hq_right\":\"hq/scene_R.png\"}\n{\"id\":\"gone\",\"hq_left\":\"hq/gone_L.png\",\"hq_right\":\"hq/gone_R.png\"}\n",
    )
    .unwrap();
    let o = run(&["eval", "--ckpt", ck2s, "--manifest", broken.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["errors"], 1);
    assert!(rep["items"][1]["error"].as_str().unwrap().contains("gone_L.png"));
    assert!(rep["items"][0]["psnr_avg"].is_number());
}

/// Same seed and data give byte-identical checkpoints; resuming from the
/// middle reproduces the uninterrupted run; the seed variable matters.
#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_dataset(&root.join("data"));
    let c = write_config(root, "c.json", STAGE1);
    let cs = c.to_str().unwrap();
    let ckpt = root.join("run/stage1_last.ckpt");

    assert_eq!(code(&run(&["train", "--config", cs, "--stage", "1"])), 0);
    let a = std::fs::read(&ckpt).unwrap();
    let mid = std::fs::read(root.join("run/stage1_epoch0001.ckpt")).unwrap();
    assert_eq!(code(&run(&["train", "--config", cs, "--stage", "1"])), 0);
    assert_eq!(std::fs::read(&ckpt).unwrap(), a);

    std::fs::write(root.join("mid.ckpt"), mid).unwrap();
    let resume = write_config(
        root,
        "resume.json",
        &STAGE1.replace("\"seed\": 5", "\"seed\": 5, \"resume\": \"mid.ckpt\", \"out_dir\": \"resumed\"").replace("\"out_dir\": \"run\", ", ""),
    );
    let o = run(&["train", "--config", resume.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(root.join("resumed/stage1_last.ckpt")).unwrap(), a);

    let o = bin().args(["train", "--config", cs]).env("DIFFSTEREO_SEED", "6").output().unwrap();
    assert_eq!(code(&o), 0);
    let b = std::fs::read(&ckpt).unwrap();
    assert_ne!(b, a);
    assert_eq!(Checkpoint::load(&ckpt).unwrap().meta.train.unwrap().seed, 6);
    let o = bin().args(["train", "--config", cs]).env("DIFFSTEREO_SEED", "six").output().unwrap();
    assert_eq!(code(&o), 1);
}
