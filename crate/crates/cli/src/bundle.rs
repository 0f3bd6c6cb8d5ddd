//! On-disk layouts produced and consumed by the subcommands.

use std::path::{Path, PathBuf};

use headforge::config::{self, format_list, format_pose};
use headforge::fit::{DepthFitResult, FaceFitResult};
use headforge::losses::FaceParams;
use headforge::render::ShLighting;
use headforge::{Camera, DepthMap, Error, FaceCoefficients, Image, Mask, MorphableModel, Pose, Result};

pub const PARAMS_FILE: &str = "params.cfg";
pub const REPORT_FILE: &str = "report.cfg";

pub fn params_to_string(p: &FaceParams) -> String {
    config::render(&[
        ("alpha", format_list(&p.coeffs.alpha)),
        ("beta", format_list(&p.coeffs.beta)),
        ("delta", format_list(&p.coeffs.delta)),
        ("gamma", format_list(&p.lighting.gamma)),
        ("pose", format_pose(&p.pose)),
    ])
}

pub fn load_params(path: &Path, model: &MorphableModel) -> Result<FaceParams> {
    let mut params = FaceParams {
        coeffs: FaceCoefficients::zeros(model),
        lighting: ShLighting::unit_ambient(),
        pose: Pose::identity(),
    };
    for e in config::load(path)? {
        match e.key.as_str() {
            "alpha" => params.coeffs.alpha = e.f64_list()?,
            "beta" => params.coeffs.beta = e.f64_list()?,
            "delta" => params.coeffs.delta = e.f64_list()?,
            "gamma" => {
                params.lighting.gamma =
                    e.f64_list()?.try_into().map_err(|_| Error::Config { line: e.line, message: "gamma needs 9 values".into() })?
            }
            "pose" => params.pose = e.pose()?,
            _ => return Err(e.unknown()),
        }
    }
    params.coeffs.check(model)?;
    Ok(params)
}

/// Directory written by `fit-face`.
pub struct FaceBundle {
    pub params: FaceParams,
    /// Face coverage `F` of the fitted model.
    pub coverage: Mask,
    pub face_depth: DepthMap,
}

pub fn save_face_result(dir: &Path, model: &MorphableModel, r: &FaceFitResult, camera: &Camera) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(PARAMS_FILE), params_to_string(&r.params))?;
    std::fs::write(
        dir.join(REPORT_FILE),
        config::render(&[
            ("energy", format!("{:?}", r.energy)),
            ("photometric", format!("{:?}", r.photometric)),
            ("landmark", format!("{:?}", r.landmark)),
            ("regularization", format!("{:?}", r.regularization)),
            ("initial_energy", format!("{:?}", r.initial_energy)),
            ("iterations", r.iterations.to_string()),
            ("diagnostic", r.diagnostic.clone().unwrap_or_else(|| "none".into())),
        ]),
    )?;
    let p = &r.params;
    let render = headforge::render::render_face(model, &p.coeffs, &p.pose, &p.lighting, camera)?;
    render.image.save_png(dir.join("render.png"))?;
    render.mask.save_png(dir.join("f.png"))?;
    render.depth.save(dir.join("face_depth.dpth"))?;
    let mesh = headforge::geometry::TriMesh3D {
        vertices: render.posed.clone(),
        triangles: model.triangles.clone(),
        colors: Some(render.colors.iter().map(|c| c.map(|v| v as f32)).collect()),
    };
    mesh.save_obj(dir.join("face.obj"))?;
    Ok(())
}

pub fn load_face_result(dir: &Path, model: &MorphableModel) -> Result<FaceBundle> {
    Ok(FaceBundle {
        params: load_params(&dir.join(PARAMS_FILE), model)?,
        coverage: Mask::load_png(dir.join("f.png"))?,
        face_depth: DepthMap::load(dir.join("face_depth.dpth"))?,
    })
}

pub fn save_depth_report(path: &Path, r: &DepthFitResult) -> Result<()> {
    let t = &r.terms;
    std::fs::write(
        path,
        config::render(&[
            ("energy", format!("{:?}", r.energy)),
            ("initial_energy", format!("{:?}", r.initial_energy)),
            ("color", format!("{:?}", t.color)),
            ("grad", format!("{:?}", t.grad)),
            ("smooth", format!("{:?}", t.smooth)),
            ("face", format!("{:?}", t.face)),
            ("layer", format!("{:?}", t.layer)),
            ("iterations", r.iterations.to_string()),
            ("degenerate_baseline", r.degenerate_baseline.to_string()),
            ("empty_layer_overlap", r.empty_layer_overlap.to_string()),
            ("diagnostic", r.diagnostic.clone().unwrap_or_else(|| "none".into())),
        ]),
    )?;
    Ok(())
}

/// Side file marking which pixels of `image_path` were synthesized.
pub fn fill_note_paths(image_path: &Path) -> (PathBuf, PathBuf) {
    let stem = image_path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let parent = image_path.parent().unwrap_or(Path::new(""));
    (parent.join(format!("{stem}.filled.cfg")), parent.join(format!("{stem}.filled.png")))
}

/// Writes `image` and its fill note.
pub fn save_filled(image_path: &Path, image: &Image, filled: &Mask) -> Result<()> {
    image.save_png(image_path)?;
    let (note, mask) = fill_note_paths(image_path);
    filled.save_png(&mask)?;
    let mask_name = mask.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
    std::fs::write(
        note,
        config::render(&[
            ("method", "harmonic".into()),
            ("filled_pixels", filled.count().to_string()),
            ("filled_mask", mask_name),
        ]),
    )?;
    Ok(())
}

/// Camera of a scene bundle, falling back to the default for the size.
pub fn scene_camera(dir: &Path, width: usize, height: usize) -> Result<Camera> {
    let path = dir.join("scene.cfg");
    if path.exists() {
        let spec = headforge::scene::SceneSpec::from_config_str(&std::fs::read_to_string(path)?)?;
        return Ok(spec.camera);
    }
    Ok(Camera::default_for(width, height))
}
