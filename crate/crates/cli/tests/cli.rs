use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn pointpair(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointpair")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = pointpair(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates a fixture scene and mines it; returns (manifest, z path).
fn mined(dir: &Path, script: &str) -> (PathBuf, PathBuf) {
    let manifest = dir.join("scene").join("manifest.json");
    let z = dir.join("z.bin");
    ok(&["gen", "scene", "--script", s(&fixture(script)), "--out", s(&manifest)]);
    ok(&["ppm", "run", "--scene", s(&manifest), "--out", s(&z)]);
    (manifest, z)
}

#[test]
fn quant_uniform_cloud() {
    let dir = TempDir::new().unwrap();
    let cloud = dir.path().join("uniform.bin");
    ok(&["gen", "cloud", "--count", "200000", "--extent", "50", "--seed", "7", "--out", s(&cloud)]);

    let cart = dir.path().join("cart.json");
    ok(&["quant", "--input", s(&cloud), "--coord", "cart", "--voxel", "0.1,0.1,0.1", "--out", s(&cart)]);
    let summary = json(&cart);
    let mean = summary["mean_error_mm"].as_f64().unwrap();
    assert!((mean - 96.06).abs() < 1.0, "{mean}");
    assert_eq!(summary["input_points"], 200000);
    let retained = summary["retained_points"].as_f64().unwrap();
    let drop = summary["drop_rate"].as_f64().unwrap();
    assert!((drop - (1.0 - retained / 200000.0)).abs() < 1e-12);

    let profile = fs::read_to_string(dir.path().join("cart_profile.csv")).unwrap();
    assert_eq!(profile.lines().next().unwrap(), "bin_lo_m,bin_hi_m,count,mean_error_mm");
    let counted: u64 = profile.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(counted, 200000);

    let cyl = pointpair(&["quant", "--input", s(&cloud), "--coord", "cyl", "--voxel", "0.1,1,0.1"]);
    assert!(cyl.status.success());
    assert!(stdout_json(&cyl)["mean_error_mm"].as_f64().unwrap() > mean);
}

#[test]
fn quant_csv_input() {
    let out = ok(&["quant", "--input", s(&fixture("small_cloud.csv")), "--voxel", "1,1,1"]);
    let v = stdout_json(&out);
    assert_eq!(v["input_points"], 3);
    let expected = [(0.05f64, 0.05f64, 0.05f64), (0.23, 0.56, 0.89), (0.0, 0.01, 0.5)]
        .iter()
        .map(|(x, y, z)| (x * x + y * y + z * z).sqrt())
        .sum::<f64>()
        / 3.0
        * 1000.0;
    assert!((v["mean_error_mm"].as_f64().unwrap() - expected).abs() < 1e-9);
}

#[test]
fn empty_and_malformed_clouds_exit_2() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.bin");
    fs::write(&empty, b"").unwrap();
    let out = pointpair(&["quant", "--input", s(&empty)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty cloud"));

    let junk = dir.path().join("junk.bin");
    fs::write(&junk, b"LDPC not a cloud").unwrap();
    assert_eq!(pointpair(&["quant", "--input", s(&junk)]).status.code(), Some(2));

    let missing = dir.path().join("missing.bin");
    assert_eq!(pointpair(&["quant", "--input", s(&missing)]).status.code(), Some(3));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(pointpair(&["quant", "--input", "x.bin", "--voxel", "1,2"]).status.code(), Some(2));
    assert_eq!(pointpair(&["quant", "--input", "x.bin", "--coord", "polar"]).status.code(), Some(2));
    assert_eq!(pointpair(&["quant", "--input", s(&fixture("small_cloud.csv")), "--voxel", "0,1,1"]).status.code(), Some(2));
    assert_eq!(pointpair(&["gen", "cloud", "--count", "10"]).status.code(), Some(2));
}

#[test]
fn ppm_static_scene_has_no_movers() {
    let dir = TempDir::new().unwrap();
    let (_, z) = mined(dir.path(), "static_scene.json");
    let d = json(&z.with_extension("json"));
    assert_eq!(d["moving_cluster_count"], 0);
    assert!(d["cluster_count"].as_u64().unwrap() >= 2);
}

#[test]
fn ppm_moving_scene_and_downstream_commands() {
    let dir = TempDir::new().unwrap();
    let (manifest, z) = mined(dir.path(), "moving_scene.json");
    let d = json(&z.with_extension("json"));
    assert_eq!(d["moving_cluster_count"], 1);
    for c in d["clusters"].as_array().unwrap().iter().filter(|c| c["is_moving"] == true) {
        assert!(c["rmse"].as_f64().unwrap() < 0.01);
    }
    assert!(d["ground_fraction"].as_f64().unwrap() > 0.0);

    let truth = manifest.with_file_name("truth.json");
    let csv = dir.path().join("flow.csv");
    let mined_eval = stdout_json(&ok(&["eval", "--scene", s(&manifest), "--z", s(&z), "--truth", s(&truth), "--csv", s(&csv)]));
    assert!(mined_eval["static_part"]["epe_avg"].as_f64().unwrap() < 1e-6);
    assert!(mined_eval["dynamic_foreground"]["epe_avg"].as_f64().unwrap() < 0.02);
    let rows = fs::read_to_string(&csv).unwrap();
    assert_eq!(rows.lines().count(), 2);
    assert!(rows.starts_with("static_epe_avg,"));

    // 12 m/s over 0..5 sweeps of 50 ms: flows 3.0, 2.4, ... 0 m on equal-sized sweeps
    let identity = stdout_json(&ok(&["eval", "--scene", s(&manifest), "--truth", s(&truth)]));
    let epe = identity["dynamic_foreground"]["epe_avg"].as_f64().unwrap();
    assert!(epe > 1.0, "{epe}");

    let corr = dir.path().join("corr.csv");
    ok(&["match", "unsynced", "--scene", s(&manifest), "--z", s(&z), "--frame", "0", "--out", s(&corr)]);
    let text = fs::read_to_string(&corr).unwrap();
    assert_eq!(text.lines().next().unwrap(), "point_index,u,v,superpixel_id,point_frame,image_frame");
    assert!(text.lines().count() > 100);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (u, v): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        assert!((0.0..1600.0).contains(&u) && (0.0..900.0).contains(&v));
        assert_eq!(f[3], "0");
        assert_eq!(f[5], "0.25");
    }
}

#[test]
fn ppm_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let (manifest, z) = mined(dir.path(), "moving_scene.json");
    let z1 = dir.path().join("z1.bin");
    ok(&["ppm", "run", "--scene", s(&manifest), "--threads", "1", "--out", s(&z1)]);
    assert_eq!(fs::read(&z).unwrap(), fs::read(&z1).unwrap());
    assert_eq!(fs::read(z.with_extension("json")).unwrap(), fs::read(z1.with_extension("json")).unwrap());
}

#[test]
fn ppm_errors() {
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("scene").join("manifest.json");
    ok(&["gen", "scene", "--script", s(&fixture("static_scene.json")), "--out", s(&manifest)]);

    let out = pointpair(&["ppm", "run", "--scene", s(&manifest), "--out", s(&dir.path().join("no_such_dir").join("z.bin"))]);
    assert_eq!(out.status.code(), Some(3));

    let mut m = json(&manifest);
    m["frames"][0].as_object_mut().unwrap().remove("pose");
    let broken = manifest.with_file_name("no_pose.json");
    fs::write(&broken, serde_json::to_vec(&m).unwrap()).unwrap();
    assert_eq!(pointpair(&["ppm", "run", "--scene", s(&broken), "--out", s(&dir.path().join("z.bin"))]).status.code(), Some(2));

    let mut m = json(&manifest);
    m.as_object_mut().unwrap().remove("camera");
    fs::write(&broken, serde_json::to_vec(&m).unwrap()).unwrap();
    assert_eq!(pointpair(&["ppm", "run", "--scene", s(&broken), "--out", s(&dir.path().join("z.bin"))]).status.code(), Some(2));
}

#[test]
fn match_modes() {
    let dir = TempDir::new().unwrap();
    let (manifest, z) = mined(dir.path(), "static_scene.json");
    let key = dir.path().join("key.csv");
    let unsynced = dir.path().join("unsynced.csv");
    ok(&["match", "synced", "--scene", s(&manifest), "--out", s(&key)]);
    ok(&["match", "unsynced", "--scene", s(&manifest), "--z", s(&z), "--frame", "5", "--out", s(&unsynced)]);
    // every transform of a static scene is the identity, so both modes agree at the keyframe
    assert_eq!(fs::read(&key).unwrap(), fs::read(&unsynced).unwrap());
    assert!(fs::read_to_string(&key).unwrap().lines().count() > 100);

    let short = dir.path().join("short.bin");
    let bytes = fs::read(&z).unwrap();
    let mut truncated = bytes[..bytes.len() - 96].to_vec();
    let count = u64::from_le_bytes(truncated[8..16].try_into().unwrap()) - 1;
    truncated[8..16].copy_from_slice(&count.to_le_bytes());
    fs::write(&short, truncated).unwrap();
    let out = pointpair(&["match", "unsynced", "--scene", s(&manifest), "--z", s(&short), "--frame", "0", "--out", s(&unsynced)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    let out = ok(&["match", "nearest", "--scene", s(&manifest), "--image-times", "0,0.0833,0.1667,0.25,0.3333,0.4167,0.5"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let images: Vec<usize> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert_eq!(images, vec![0, 1, 1, 2, 2, 3, 4, 4, 5, 5, 6]);
    assert_eq!(pointpair(&["match", "nearest", "--scene", s(&manifest), "--image-times", "0.3,0.1"]).status.code(), Some(2));
}

#[test]
fn loss_commands() {
    let check = stdout_json(&ok(&["loss", "check", "--m", "16", "--d", "8", "--tau", "0.5", "--seed", "1"]));
    assert!(check["max_relative_error"].as_f64().unwrap() < 1e-5);
    assert_eq!(check["seed"], 1);

    let dir = TempDir::new().unwrap();
    let two = dir.path().join("two.csv");
    fs::write(&two, "1,0\n0,1\n").unwrap();
    let v = stdout_json(&ok(&["loss", "eval", "--f", s(&two), "--g", s(&two), "--tau", "1"]));
    assert!((v["loss"].as_f64().unwrap() - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);

    let id = fixture("features_identity.csv");
    let v = stdout_json(&ok(&["loss", "eval", "--f", s(&id), "--g", s(&id), "--tau", "1"]));
    assert!((v["loss"].as_f64().unwrap() - (1.0 + 2.0 * (-1.0f64).exp()).ln()).abs() < 1e-12);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,0\n0,1,2\n").unwrap();
    assert_eq!(pointpair(&["loss", "eval", "--f", s(&bad), "--g", s(&two)]).status.code(), Some(2));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    for name in ["a", "b"] {
        let m = dir.path().join(name).join("manifest.json");
        ok(&["gen", "scene", "--script", s(&fixture("moving_scene.json")), "--seed", "3", "--out", s(&m)]);
        ok(&["gen", "cloud", "--count", "1000", "--seed", "3", "--out", s(&dir.path().join(name).join("cloud.bin"))]);
    }
    for file in ["manifest.json", "frame_000.bin", "frame_010.bin", "truth.json", "truth_flow.bin", "superpixels.pgm", "cloud.bin"] {
        assert_eq!(fs::read(dir.path().join("a").join(file)).unwrap(), fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
    }
    let c = dir.path().join("other_seed.bin");
    ok(&["gen", "cloud", "--count", "1000", "--seed", "4", "--out", s(&c)]);
    assert_ne!(fs::read(&c).unwrap(), fs::read(dir.path().join("a").join("cloud.bin")).unwrap());
}
