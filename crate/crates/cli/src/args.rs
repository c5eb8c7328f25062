use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "pointpair", version, about = "Voxel quantization analysis and positive pair mining for LiDAR sweeps")]
pub struct Cli {
    /// Seed for every randomized stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Primary output file. Commands that produce a report print it to stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Quantization error summary and error-vs-distance profile.
    Quant(QuantArgs),
    /// Positive pair mining.
    #[command(subcommand)]
    Ppm(PpmCommand),
    /// Point-to-pixel correspondences.
    #[command(subcommand)]
    Match(MatchCommand),
    /// Scene-flow metrics of mined transforms against ground truth.
    Eval(EvalArgs),
    /// Contrastive loss kernel.
    #[command(subcommand)]
    Loss(LossCommand),
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Synthetic sequence with ground-truth flow, written as a manifest.
    Scene(GenSceneArgs),
    /// Points uniform in a cube.
    Cloud(GenCloudArgs),
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    /// Scene script (JSON). Without it the built-in reference scene is used.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Velocity of the reference scene's moving object, m/s.
    #[arg(long, value_parser = parse_triple, default_value = "12,0,0")]
    pub velocity: [f64; 3],
    /// Ground-truth file; defaults to truth.json next to the manifest.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenCloudArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub count: usize,
    /// Cube side, meters.
    #[arg(long, default_value_t = 50.0)]
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Coord {
    Cart,
    Cyl,
}

#[derive(Debug, Args)]
pub struct QuantArgs {
    /// Point files (`.bin` or `.csv`); several are concatenated.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "cart")]
    pub coord: Coord,
    /// `x,y,z` in meters, or `rho,phi_deg,z` for cylindrical cells.
    #[arg(long, value_parser = parse_triple, default_value = "0.1,0.1,0.1")]
    pub voxel: [f64; 3],
    /// Range bin width of the profile, meters.
    #[arg(long, default_value_t = 10.0)]
    pub bin_width: f64,
    /// Profile CSV; defaults to `<out stem>_profile.csv` when `--out` is given.
    #[arg(long)]
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PpmCommand {
    /// Mine per-point transforms for a sequence.
    Run(PpmRunArgs),
}

#[derive(Debug, Args)]
pub struct PpmRunArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Diagnostics JSON; defaults to the Z path with a `.json` extension.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Sweeps aggregated around the keyframe.
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    /// Moving-cluster threshold on L1 centroid displacement, meters.
    #[arg(long = "c", default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 5)]
    pub min_track_points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    #[arg(long, default_value_t = 10)]
    pub min_pts: usize,
    #[arg(long, default_value_t = 50)]
    pub icp_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub icp_tol: f64,
    #[arg(long, default_value_t = 2.0)]
    pub icp_max_dist: f64,
}

#[derive(Debug, Subcommand)]
pub enum MatchCommand {
    /// Project a sweep into the keyframe image as is.
    Synced(MatchSyncedArgs),
    /// Move a sweep by its mined transforms, then project.
    Unsynced(MatchUnsyncedArgs),
    /// Pair every sweep with the temporally closest image.
    Nearest(MatchNearestArgs),
}

#[derive(Debug, Args)]
pub struct MatchSyncedArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Sweep index; defaults to the keyframe.
    #[arg(long)]
    pub frame: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MatchUnsyncedArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Z file from `ppm run`.
    #[arg(long)]
    pub z: PathBuf,
    #[arg(long)]
    pub frame: usize,
}

#[derive(Debug, Args)]
pub struct MatchNearestArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Image timestamps in seconds, sorted.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub image_times: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Z file; omitted means the identity (no compensation).
    #[arg(long)]
    pub z: Option<PathBuf>,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write the metrics as a CSV header and row.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Loss and finite-difference gradient check on a seeded random instance.
    Check(LossCheckArgs),
    /// Loss of two feature matrices read from CSV.
    Eval(LossEvalArgs),
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 16)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
}

#[derive(Debug, Args)]
pub struct LossEvalArgs {
    /// Point-side features, one row per pair.
    #[arg(long)]
    pub f: PathBuf,
    /// Pixel-side features.
    #[arg(long)]
    pub g: PathBuf,
    #[arg(long, default_value_t = 0.07)]
    pub tau: f64,
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got {s:?}"));
    }
    let mut out = [0.0; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|e| format!("{p:?}: {e}"))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triples() {
        assert_eq!(parse_triple("0.1, 1,0.1").unwrap(), [0.1, 1.0, 0.1]);
        assert!(parse_triple("1,2").is_err());
        assert!(parse_triple("1,x,2").is_err());
    }

    #[test]
    fn globals_after_subcommand() {
        let cli = Cli::try_parse_from(["pointpair", "loss", "check", "--seed", "3", "--m", "4"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert!(matches!(cli.command, Command::Loss(LossCommand::Check(LossCheckArgs { m: 4, .. }))));
    }

    #[test]
    fn clap_definition() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
