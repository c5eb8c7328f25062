use pointpair::io::{
    load_sequence, read_per_point_transform, read_truth, save_sequence, write_transforms, write_truth, FlowTruth,
};
use pointpair::ppm::{mine, PpmParams};
use pointpair::synth::{generate, reference_script};
use tempfile::TempDir;

#[test]
fn generated_sequence_survives_manifest_round_trip() {
    let mut script = reference_script([8.0, 0.0, 0.0], 3);
    script.uniform_superpixels = true;
    script.ground.noise_sigma = 0.02;
    let scene = generate(&script).unwrap();
    let dir = TempDir::new().unwrap();
    let manifest = dir.path().join("seq").join("manifest.json");
    save_sequence(&manifest, &scene.frames).unwrap();
    let loaded = load_sequence(&manifest).unwrap();
    assert_eq!(loaded, scene.frames);
    assert!(loaded.superpixels().is_some());
}

#[test]
fn truth_and_mined_transforms_round_trip() {
    let scene = generate(&reference_script([12.0, 0.0, 0.0], 0)).unwrap();
    let dir = TempDir::new().unwrap();

    let truth_path = dir.path().join("truth.json");
    let truth = FlowTruth { flow: scene.flow.clone(), labels: scene.labels.clone() };
    write_truth(&truth_path, &truth).unwrap();
    assert_eq!(read_truth(&truth_path).unwrap(), truth);

    let out = mine(&scene.frames, &PpmParams::default()).unwrap();
    let z_path = dir.path().join("z.bin");
    write_transforms(&z_path, &out.z.transforms).unwrap();
    assert_eq!(read_per_point_transform(&z_path, &scene.frames).unwrap(), out.z);

    let mut fewer = scene.frames.frames().to_vec();
    fewer.pop();
    let shorter = pointpair::FrameSequence::new(fewer, 5, scene.frames.camera().clone()).unwrap();
    assert!(matches!(
        read_per_point_transform(&z_path, &shorter),
        Err(pointpair::Error::ShapeMismatch { .. })
    ));
}
