use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "headforge", version, about = "3D head fitting and pose manipulation from portraits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic morphable model.
    SynthModel(SynthModelArgs),
    /// Render a two-view synthetic scene with ground truth.
    SynthScene(SynthSceneArgs),
    /// Fit the morphable face to one view of a scene.
    FitFace(FitFaceArgs),
    /// Estimate hair and ear depth from both views.
    FitDepth(FitDepthArgs),
    /// Prior-only depth for a single view.
    FitDepthSingle(FitDepthSingleArgs),
    /// Render a head bundle at a new pose.
    Render(RenderArgs),
    /// Move the head by a pose delta, fill vacated pixels and recapture.
    Rotate(RotateArgs),
    /// Fill masked pixels by harmonic interpolation.
    Fill(FillArgs),
    /// Compare predicted and ground-truth depth bundles.
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Serve render-at-pose over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Icosphere subdivision level of the template.
    #[arg(long, default_value_t = 4)]
    pub subdiv: u32,
    #[arg(long, default_value_t = 16)]
    pub k_id: usize,
    #[arg(long, default_value_t = 8)]
    pub k_exp: usize,
    #[arg(long, default_value_t = 16)]
    pub k_tex: usize,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthSceneArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scene spec file; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Use this model instead of synthesizing one from the seed.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Square image size in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    /// Relative yaw between the two views, degrees.
    #[arg(long, allow_negative_numbers = true)]
    pub yaw: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitOptions {
    /// key = value file of fit settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one setting, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Write the optimization trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitFaceArgs {
    /// Scene bundle directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// Which view to fit, 1 or 2.
    #[arg(long, default_value_t = 1)]
    pub view: usize,
    /// Model file; defaults to the scene's.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Initial pose as yaw,pitch,roll,tx,ty,tz (degrees, mm).
    #[arg(long, allow_hyphen_values = true, default_value = "0,0,0,0,0,1100")]
    pub init_pose: String,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitDepthArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Face results for views 1 and 2; without them the scene's
    /// ground-truth face depth and poses are used.
    #[arg(long, num_args = 2, value_names = ["VIEW1", "VIEW2"])]
    pub face: Option<Vec<PathBuf>>,
    /// Start from a fronto-parallel plane at the pose depth instead of the
    /// face-conditioned initialization.
    #[arg(long)]
    pub plane_init: bool,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitDepthSingleArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub view: usize,
    #[arg(long)]
    pub face: Option<PathBuf>,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct PoseArgs {
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub roll: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub tx: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub ty: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub tz: f64,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Head assets bundle directory.
    #[arg(long)]
    pub assets: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Treat the pose as absolute rather than a delta from the source.
    #[arg(long)]
    pub absolute: bool,
    /// Also write the hole mask.
    #[arg(long)]
    pub holes: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RotateArgs {
    #[arg(long)]
    pub assets: PathBuf,
    #[command(flatten)]
    pub pose: PoseArgs,
    /// Leave vacated pixels unfilled.
    #[arg(long)]
    pub no_fill: bool,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FillArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding depth.dpth.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory holding depth.dpth, s.png and s_f.png.
    #[arg(long)]
    pub gt: PathBuf,
    /// Scene bundle providing the camera; defaults to the parent of --gt.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "losses")]
    pub module: String,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub assets: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    /// Directory served under /ui.
    #[arg(long)]
    pub ui: Option<PathBuf>,
}
