use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use pointpair::flow::{evaluate_flow, predicted_flow, FlowThresholds, CSV_HEADER};
use pointpair::io;
use pointpair::loss::{contrastive_loss, gradient_check, l2_normalize, FeatureRole, FeatureSet};
use pointpair::matcher::{match_synced, match_unsynced, nearest_alignment};
use pointpair::ppm::{aggregate_in_keyframe, mine, PerPointTransform, PpmParams};
use pointpair::quantizer::{error_vs_distance_profile, quantization_error, quantize, VoxelSpec};
use pointpair::synth::{generate, reference_script, uniform_cube, SceneScript};
use pointpair::{Error, FrameSequence, PointCloud, Result};

use crate::args::*;

pub struct Context {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Context {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn required_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
    }
}

fn emit_json(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit_text(out, &text)
}

fn emit_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn frame_in_range(seq: &FrameSequence, frame: usize) -> Result<()> {
    let n = seq.frames().len();
    if frame >= n {
        return Err(Error::Config(format!("frame {frame} out of range for a sequence of {n} sweeps")));
    }
    Ok(())
}

pub fn run(ctx: &Context, command: &Command) -> Result<()> {
    match command {
        Command::Gen(GenCommand::Scene(a)) => gen_scene(ctx, a),
        Command::Gen(GenCommand::Cloud(a)) => gen_cloud(ctx, a),
        Command::Quant(a) => quant(ctx, a),
        Command::Ppm(PpmCommand::Run(a)) => ppm_run(ctx, a),
        Command::Match(MatchCommand::Synced(a)) => match_synced_cmd(ctx, a),
        Command::Match(MatchCommand::Unsynced(a)) => match_unsynced_cmd(ctx, a),
        Command::Match(MatchCommand::Nearest(a)) => match_nearest_cmd(ctx, a),
        Command::Eval(a) => eval(ctx, a),
        Command::Loss(LossCommand::Check(a)) => loss_check(ctx, a),
        Command::Loss(LossCommand::Eval(a)) => loss_eval(ctx, a),
    }
}

fn gen_scene(ctx: &Context, a: &GenSceneArgs) -> Result<()> {
    let manifest = ctx.required_out()?;
    let mut script: SceneScript = match &a.script {
        Some(path) => serde_json::from_reader(std::io::BufReader::new(fs::File::open(path)?))?,
        None => reference_script(a.velocity, 0),
    };
    if let Some(seed) = ctx.seed {
        script.seed = seed;
    }
    let scene = generate(&script)?;
    io::save_sequence(manifest, &scene.frames)?;
    let truth = a.truth.clone().unwrap_or_else(|| manifest.with_file_name("truth.json"));
    io::write_truth(&truth, &io::FlowTruth { flow: scene.flow, labels: scene.labels })?;
    log::info!("wrote {} sweeps to {}", scene.frames.frames().len(), manifest.display());
    Ok(())
}

fn gen_cloud(ctx: &Context, a: &GenCloudArgs) -> Result<()> {
    let cloud = uniform_cube(a.count, a.extent, ctx.seed())?;
    io::write_points(ctx.required_out()?, cloud.points())
}

#[derive(Serialize)]
struct QuantSummary {
    coord: &'static str,
    voxel: [f64; 3],
    input_points: usize,
    retained_points: usize,
    drop_rate: f64,
    mean_error_mm: f64,
}

fn quant(ctx: &Context, a: &QuantArgs) -> Result<()> {
    let mut points = Vec::new();
    for path in &a.input {
        points.extend(io::read_points(path)?);
    }
    let cloud = PointCloud::new(points, 0.0)?;
    let (spec, coord) = match a.coord {
        Coord::Cart => (VoxelSpec::cartesian(a.voxel[0], a.voxel[1], a.voxel[2])?, "cart"),
        Coord::Cyl => (VoxelSpec::cylindrical_deg(a.voxel[0], a.voxel[1], a.voxel[2])?, "cyl"),
    };
    let q = quantize(&cloud, &spec)?;
    let err = quantization_error(&cloud, &spec)?;
    let summary = QuantSummary {
        coord,
        voxel: a.voxel,
        input_points: q.input_count(),
        retained_points: q.retained_count(),
        drop_rate: q.dropped_count() as f64 / q.input_count() as f64,
        mean_error_mm: err.mean * 1000.0,
    };
    let profile = a.profile.clone().or_else(|| {
        ctx.out.as_ref().map(|o| {
            let stem = o.file_stem().and_then(|s| s.to_str()).unwrap_or("quant");
            o.with_file_name(format!("{stem}_profile.csv"))
        })
    });
    if let Some(path) = profile {
        io::write_profile(&path, &error_vs_distance_profile(&cloud, &spec, a.bin_width)?)?;
    }
    emit_json(ctx.out.as_deref(), &summary)
}

fn ppm_run(ctx: &Context, a: &PpmRunArgs) -> Result<()> {
    let z_path = ctx.required_out()?;
    let seq = io::load_sequence(&a.scene)?;
    let mut params = PpmParams { window: a.window, seed: ctx.seed(), ..PpmParams::default() };
    params.track.threshold = a.threshold;
    params.track.min_track_points = a.min_track_points;
    params.cluster.eps = a.eps;
    params.cluster.min_pts = a.min_pts;
    params.icp.max_iters = a.icp_iters;
    params.icp.tolerance = a.icp_tol;
    params.icp.max_correspondence_dist = a.icp_max_dist;
    let output = mine(&seq, &params)?;
    for w in &output.report.warnings {
        log::warn!("{w}");
    }
    io::write_transforms(z_path, &output.z.transforms)?;
    let diagnostics = a.diagnostics.clone().unwrap_or_else(|| z_path.with_extension("json"));
    emit_json(Some(&diagnostics), &output.report)
}

fn match_synced_cmd(ctx: &Context, a: &MatchSyncedArgs) -> Result<()> {
    let out = ctx.required_out()?;
    let seq = io::load_sequence(&a.scene)?;
    let frame = a.frame.unwrap_or(seq.keyframe_index());
    frame_in_range(&seq, frame)?;
    let set = match_synced(seq.camera(), &seq.in_keyframe_sensor(frame), seq.superpixels())?;
    io::write_correspondences(out, &set)
}

fn match_unsynced_cmd(ctx: &Context, a: &MatchUnsyncedArgs) -> Result<()> {
    let out = ctx.required_out()?;
    let seq = io::load_sequence(&a.scene)?;
    frame_in_range(&seq, a.frame)?;
    let z = io::read_per_point_transform(&a.z, &seq)?;
    let set = match_unsynced(
        seq.camera(),
        &seq.in_keyframe_sensor(a.frame),
        z.frame(a.frame),
        seq.superpixels(),
        seq.keyframe().cloud.timestamp(),
    )?;
    io::write_correspondences(out, &set)
}

fn match_nearest_cmd(ctx: &Context, a: &MatchNearestArgs) -> Result<()> {
    let seq = io::load_sequence(&a.scene)?;
    let pairs = nearest_alignment(&seq, &a.image_times)?;
    let mut text = String::from("lidar_frame,lidar_timestamp,image_index,image_timestamp\n");
    for (k, (t, &img)) in seq.timestamps().iter().zip(&pairs).enumerate() {
        text.push_str(&format!("{k},{t},{img},{}\n", a.image_times[img]));
    }
    emit_text(ctx.out.as_deref(), &text)
}

fn eval(ctx: &Context, a: &EvalArgs) -> Result<()> {
    let seq = io::load_sequence(&a.scene)?;
    let z = match &a.z {
        Some(path) => io::read_per_point_transform(path, &seq)?,
        None => PerPointTransform::identity(&seq),
    };
    let truth = io::read_truth(&a.truth)?;
    let agg = aggregate_in_keyframe(&seq)?;
    let predicted = predicted_flow(agg.cloud.points(), &z)?;
    let result = evaluate_flow(&predicted, &truth.flow, &truth.labels, &FlowThresholds::default())?;
    if let Some(csv) = &a.csv {
        fs::write(csv, format!("{CSV_HEADER}\n{}\n", result.csv_row()))?;
    }
    emit_json(ctx.out.as_deref(), &result)
}

fn loss_check(ctx: &Context, a: &LossCheckArgs) -> Result<()> {
    let report = gradient_check(a.m, a.d, a.tau, ctx.seed(), a.step)?;
    emit_json(ctx.out.as_deref(), &report)
}

#[derive(Serialize)]
struct LossReport {
    pairs: usize,
    dim: usize,
    tau: f64,
    loss: f64,
}

fn loss_eval(ctx: &Context, a: &LossEvalArgs) -> Result<()> {
    let f = l2_normalize(&FeatureSet::from_rows(&io::read_features(&a.f)?, FeatureRole::Point)?)?;
    let g = l2_normalize(&FeatureSet::from_rows(&io::read_features(&a.g)?, FeatureRole::Pixel)?)?;
    let loss = contrastive_loss(&f, &g, a.tau)?;
    emit_json(ctx.out.as_deref(), &LossReport { pairs: f.pairs(), dim: f.dim(), tau: a.tau, loss })
}
