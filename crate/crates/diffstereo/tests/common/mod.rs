#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffstereo::core::datapipe::{bicubic_downsample, synthetic_pair, StereoImagePair};
use diffstereo::image_io;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diffstereo"));
    c.env_remove("DIFFSTEREO_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The fixed smoke scene: a 120x360 HQ pair with 8 px disparity.
pub fn smoke_scene() -> StereoImagePair {
    synthetic_pair(120, 360, 8, 7, "scene").expect("valid scene")
}

/// A dataset root with one 120x360 HQ pair listed in `manifest.jsonl`.
pub fn write_dataset(root: &Path) -> PathBuf {
    let hq = smoke_scene();
    image_io::write_pair(&root.join("hq/scene_L.png"), &root.join("hq/scene_R.png"), &hq).unwrap();
    let m = root.join("manifest.jsonl");
    std::fs::write(&m, "{\"id\":\"scene\",\"hq_left\":\"hq/scene_L.png\",\"hq_right\":\"hq/scene_R.png\"}\n").unwrap();
    m
}

/// Write the 30x90 LQ views of the smoke scene.
pub fn write_lq(dir: &Path) -> (PathBuf, PathBuf) {
    let hq = smoke_scene();
    let lq = hq.map_views(|v| bicubic_downsample(v, 4)).unwrap();
    let (l, r) = (dir.join("lq_L.png"), dir.join("lq_R.png"));
    image_io::write_pair(&l, &r, &lq).unwrap();
    (l, r)
}

/// A short desk-profile config writing into `out`.
pub fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}
