use std::fmt;
use std::path::Path;

use nalgebra::Vector3;

use headforge::fit::{evaluate_reconstruction, fit_depth_pair, fit_depth_single, fit_face, plane_init, FitConfig, Trace};
use headforge::losses::gradcheck::run_gradcheck;
use headforge::losses::{DepthView, FaceInputs, FaceParams, PairInputs};
use headforge::manipulate::{fill_holes, manipulate_pose};
use headforge::model::synthesize_model;
use headforge::render::ShLighting;
use headforge::scene::{load_view, synth_scene, synth_scene_with_model, Scene, SceneSpec};
use headforge::{Camera, DepthMap, FaceCoefficients, HeadAssets, Image, Mask, MorphableModel, Pose, PoseTarget, RegionMasks};

use crate::bundle;
use crate::cli::*;

/// Failure reported as one machine-readable line.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<headforge::Error> for CliError {
    fn from(e: headforge::Error) -> Self {
        use headforge::Error as E;
        let kind = match &e {
            E::Dimension { .. } => "dimension",
            E::InvalidParameter(_) => "invalid_parameter",
            E::BadMagic { .. } | E::PayloadSize { .. } | E::Parse { .. } | E::Codec(_) => "format",
            E::InvalidModel(_) => "invalid_model",
            E::UndefinedDepth { .. } => "undefined_depth",
            E::EmptyRegion(_) => "empty_region",
            E::Degenerate(_) => "degenerate",
            E::NonUnitNormal(_) => "non_unit_normal",
            E::NonFinite { .. } => "non_finite",
            E::Config { .. } => "config",
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => "not_found",
            E::Io(_) => "io",
        };
        let message = match &e {
            E::UndefinedDepth { pixels } => format!("depth undefined at {} pixels", pixels.len()),
            _ => e.to_string(),
        };
        Self::new(kind, message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        headforge::Error::Io(e).into()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs one parsed command, writing human-readable results to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> CliResult<()> {
    match command {
        Command::SynthModel(a) => synth_model_cmd(a, out),
        Command::SynthScene(a) => synth_scene_cmd(a, out),
        Command::FitFace(a) => fit_face_cmd(a, out),
        Command::FitDepth(a) => fit_depth_cmd(a, out),
        Command::FitDepthSingle(a) => fit_depth_single_cmd(a, out),
        Command::Render(a) => render_cmd(a, out),
        Command::Rotate(a) => rotate_cmd(a, out),
        Command::Fill(a) => fill_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Gradcheck(a) => gradcheck_cmd(a, out),
        Command::Serve(a) => crate::service::serve_cmd(a),
    }
}

fn synth_model_cmd(a: SynthModelArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let model = synthesize_model(a.seed, a.subdiv, a.k_id, a.k_exp, a.k_tex)?;
    model.save(&a.output)?;
    writeln!(out, "model vertices {} triangles {} k {}/{}/{}", model.n_vertices, model.triangles.len(), a.k_id, a.k_exp, a.k_tex)?;
    Ok(())
}

fn synth_scene_cmd(a: SynthSceneArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let mut spec = match &a.spec {
        Some(p) => SceneSpec::from_config_str(&std::fs::read_to_string(p)?)?,
        None => SceneSpec::with_yaw(a.seed, a.yaw.unwrap_or(10.0)),
    };
    spec.seed = a.seed;
    if let Some(yaw) = a.yaw {
        let base = SceneSpec::with_yaw(a.seed, yaw);
        spec.poses = base.poses;
    }
    if let Some(size) = a.size {
        spec.camera = Camera::default_for(size, size);
    }
    if let Some(noise) = a.noise {
        spec.noise = noise;
    }
    let scene = match &a.model {
        Some(p) => synth_scene_with_model(&spec, MorphableModel::load(p)?)?,
        None => synth_scene(&spec)?,
    };
    scene.save(&a.output)?;
    writeln!(out, "scene {}x{} head pixels {} {}", spec.camera.width, spec.camera.height, scene.views[0].masks.s.count(), scene.views[1].masks.s.count())?;
    Ok(())
}

fn fit_config(o: &FitOptions) -> CliResult<FitConfig> {
    let mut config = match &o.config {
        Some(p) => FitConfig::load(p)?,
        None => FitConfig::default(),
    };
    for kv in &o.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            return Err(CliError::new("usage", format!("--set expects key=value, got {kv:?}")));
        };
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn save_trace(path: Option<&Path>, trace: &Trace) -> CliResult<()> {
    if let Some(p) = path {
        trace.save_csv(p)?;
    }
    Ok(())
}

fn parse_pose_list(text: &str) -> CliResult<Pose> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::new("usage", format!("pose must be six numbers yaw,pitch,roll,tx,ty,tz, got {text:?}")))?;
    if v.len() != 6 || !v.iter().all(|x| x.is_finite()) {
        return Err(CliError::new("usage", format!("pose must be six finite numbers, got {text:?}")));
    }
    Ok(Pose::from_euler_deg(v[0], v[1], v[2], Vector3::new(v[3], v[4], v[5])))
}

pub fn pose_from_args(p: &PoseArgs) -> Pose {
    Pose::from_euler_deg(p.yaw, p.pitch, p.roll, Vector3::new(p.tx, p.ty, p.tz))
}

fn view_index(view: usize) -> CliResult<usize> {
    match view {
        1 | 2 => Ok(view - 1),
        _ => Err(CliError::new("usage", format!("--view must be 1 or 2, got {view}"))),
    }
}

fn load_spec(dir: &Path) -> CliResult<SceneSpec> {
    Ok(SceneSpec::from_config_str(&std::fs::read_to_string(dir.join("scene.cfg"))?)?)
}

fn fit_face_cmd(a: FitFaceArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let i = view_index(a.view)?;
    let config = fit_config(&a.fit)?;
    let spec = load_spec(&a.scene)?;
    let model = MorphableModel::load(a.model.clone().unwrap_or_else(|| a.scene.join("model.p3dm")))?;
    let view = load_view(&a.scene.join(format!("view{}", i + 1)), spec.poses[i])?;
    let init = FaceParams {
        coeffs: FaceCoefficients::zeros(&model),
        lighting: ShLighting::unit_ambient(),
        pose: parse_pose_list(&a.init_pose)?,
    };
    let inputs = FaceInputs { image: &view.image, landmarks: &view.landmarks, face_mask: &view.masks.s_f, camera: &spec.camera };
    let r = fit_face(&model, &inputs, &init, &config)?;
    bundle::save_face_result(&a.output, &model, &r, &spec.camera)?;
    save_trace(a.fit.trace.as_deref(), &r.trace)?;
    writeln!(out, "energy {:.6} photometric {:.6} landmark {:.4} iterations {}", r.energy, r.photometric, r.landmark, r.iterations)?;
    Ok(())
}

/// Face depth, pose, coverage and parameters for one view.
struct FaceSide {
    params: FaceParams,
    face_depth: DepthMap,
    coverage: Mask,
}

fn face_side(scene: &Scene, i: usize, result: Option<&Path>) -> CliResult<FaceSide> {
    match result {
        Some(dir) => {
            let b = bundle::load_face_result(dir, &scene.model)?;
            Ok(FaceSide { params: b.params, face_depth: b.face_depth, coverage: b.coverage })
        }
        None => {
            let v = &scene.views[i];
            Ok(FaceSide { params: scene.truth(i), face_depth: v.face_depth.clone(), coverage: v.masks.f.clone() })
        }
    }
}

fn depth_view(scene: &Scene, i: usize, side: &FaceSide) -> CliResult<DepthView> {
    let v = &scene.views[i];
    let masks = RegionMasks::new(v.masks.s.clone(), v.masks.s_f.clone(), v.masks.s_h.clone(), side.coverage.clone())?;
    Ok(DepthView::new(v.image.clone(), masks, side.face_depth.clone(), side.params.pose)?)
}

fn save_depth_view(dir: &Path, depth: &DepthMap, masks: &RegionMasks) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    depth.save(dir.join("depth.dpth"))?;
    masks.s.save_png(dir.join("s.png"))?;
    masks.s_f.save_png(dir.join("s_f.png"))?;
    Ok(())
}

fn save_assets(scene: &Scene, i: usize, side: &FaceSide, view: &DepthView, depth: &DepthMap, dir: &Path) -> CliResult<()> {
    let v = &scene.views[i];
    let assets = HeadAssets::from_fit(&scene.model, &side.params, &v.image, &v.plate, &view.masks, depth, &scene.spec.camera)?;
    assets.save(dir)?;
    Ok(())
}

fn fit_depth_cmd(a: FitDepthArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let config = fit_config(&a.fit)?;
    let scene = Scene::load(&a.scene)?;
    let faces = a.face.as_deref().unwrap_or_default();
    let sides = [face_side(&scene, 0, faces.first().map(|p| p.as_path()))?, face_side(&scene, 1, faces.get(1).map(|p| p.as_path()))?];
    let inputs = PairInputs { views: [depth_view(&scene, 0, &sides[0])?, depth_view(&scene, 1, &sides[1])?], camera: scene.spec.camera };
    let init = a.plane_init.then(|| {
        let plane = |i: usize| plane_init(&inputs.views[i].masks, sides[i].params.pose.translation.z);
        [plane(0), plane(1)]
    });
    let r = fit_depth_pair(&inputs, &config, init)?;
    for i in 0..2 {
        save_depth_view(&a.output.join(format!("view{}", i + 1)), &r.depths[i], &inputs.views[i].masks)?;
    }
    bundle::save_depth_report(&a.output.join(bundle::REPORT_FILE), &r)?;
    save_assets(&scene, 0, &sides[0], &inputs.views[0], &r.depths[0], &a.output.join("assets"))?;
    save_trace(a.fit.trace.as_deref(), &r.trace)?;
    writeln!(out, "energy {:.6} initial {:.6} iterations {}", r.energy, r.initial_energy, r.iterations)?;
    Ok(())
}

fn fit_depth_single_cmd(a: FitDepthSingleArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let i = view_index(a.view)?;
    let config = fit_config(&a.fit)?;
    let scene = Scene::load(&a.scene)?;
    let side = face_side(&scene, i, a.face.as_deref())?;
    let view = depth_view(&scene, i, &side)?;
    let r = fit_depth_single(&view, &config, None)?;
    save_depth_view(&a.output, &r.depths[0], &view.masks)?;
    bundle::save_depth_report(&a.output.join(bundle::REPORT_FILE), &r)?;
    save_assets(&scene, i, &side, &view, &r.depths[0], &a.output.join("assets"))?;
    save_trace(a.fit.trace.as_deref(), &r.trace)?;
    writeln!(out, "energy {:.6} initial {:.6} iterations {}", r.energy, r.initial_energy, r.iterations)?;
    Ok(())
}

fn target(p: &PoseArgs, absolute: bool) -> PoseTarget {
    let pose = pose_from_args(p);
    if absolute {
        PoseTarget::Absolute(pose)
    } else {
        PoseTarget::Delta(pose)
    }
}

fn render_cmd(a: RenderArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let assets = HeadAssets::load(&a.assets)?;
    let m = manipulate_pose(&assets, target(&a.pose, a.absolute))?;
    m.image.save_png(&a.output)?;
    if let Some(h) = &a.holes {
        m.holes.save_png(h)?;
    }
    writeln!(out, "coverage {} holes {}", m.masks.s.count(), m.holes.count())?;
    Ok(())
}

fn rotate_cmd(a: RotateArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let assets = HeadAssets::load(&a.assets)?;
    let t = target(&a.pose, false);
    let m = manipulate_pose(&assets, t)?;
    std::fs::create_dir_all(&a.output)?;
    m.image.save_png(a.output.join("image.png"))?;
    m.holes.save_png(a.output.join("holes.png"))?;
    if !a.no_fill && !m.holes.is_empty() {
        let filled = fill_holes(&m.image, &m.holes)?;
        bundle::save_filled(&a.output.join("filled.png"), &filled, &m.holes)?;
    }
    assets.recapture(t)?.save(a.output.join("assets"))?;
    writeln!(out, "coverage {} holes {}", m.masks.s.count(), m.holes.count())?;
    Ok(())
}

fn fill_cmd(a: FillArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let image = Image::load_png(&a.image)?;
    let mask = Mask::load_png(&a.mask)?;
    let filled = if mask.is_empty() { image } else { fill_holes(&image, &mask)? };
    bundle::save_filled(&a.output, &filled, &mask)?;
    writeln!(out, "filled {}", mask.count())?;
    Ok(())
}

fn eval_cmd(a: EvalArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    let pred = DepthMap::load(a.pred.join("depth.dpth"))?;
    let gt = DepthMap::load(a.gt.join("depth.dpth"))?;
    let s = Mask::load_png(a.gt.join("s.png"))?;
    let s_f = Mask::load_png(a.gt.join("s_f.png"))?;
    let scene_dir = a.scene.clone().or_else(|| a.gt.parent().map(Path::to_path_buf)).unwrap_or_default();
    let camera = bundle::scene_camera(&scene_dir, gt.width(), gt.height())?;
    let face = s_f.and(&s);
    let non_face = s.minus(&s_f);
    let e = evaluate_reconstruction(&pred, &gt, &face, &non_face, &camera)?;
    writeln!(out, "face {:.3} non-face {:.3}", e.face, e.non_face)?;
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs, out: &mut dyn std::io::Write) -> CliResult<()> {
    if a.module != "losses" {
        return Err(CliError::new("usage", format!("unknown gradcheck module {:?}; available: losses", a.module)));
    }
    let reports = run_gradcheck(a.size, a.seed)?;
    for r in &reports {
        writeln!(out, "{r}")?;
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.ok()).map(|r| r.loss).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new("gradcheck", format!("gradients disagree for {}", failed.join(", "))))
    }
}
