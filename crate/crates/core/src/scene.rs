//! Synthetic two-view head scenes with full ground truth.
//!
//! A scene is a morphable-model instance wearing a procedurally textured
//! hair shell, rendered over a background plate from two poses.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{self, format_list, format_pose};
use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Camera, DepthMap, Pose, RegionMasks, TriMesh3D};
use crate::image::{Image, Mask};
use crate::losses::{DepthView, FaceParams, Landmark, LandmarkSet, PairInputs};
use crate::model::{synthesize_model, FaceCoefficients, MorphableModel, TEMPLATE_RADII};
use crate::render::{compute_vertex_normals, depth_from_raster, render_face, rasterize_into, RasterMesh, RasterOutput, ShLighting};

/// Hair shell placement and texture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HairSpec {
    /// Distance of the shell from the head surface, mm.
    pub offset: f64,
    /// Shell covers template directions with `y` below this (the crown).
    pub top: f64,
    /// Shell covers directions with `z` above this (the back of the head).
    pub back: f64,
    /// Fringe over the forehead: front directions with `y` below this.
    pub fringe: f64,
    /// Texture frequency in cycles per mm.
    pub frequency: f64,
}

impl Default for HairSpec {
    fn default() -> Self {
        Self { offset: 10.0, top: -0.25, back: 0.2, fringe: -0.45, frequency: 1.0 / 24.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_subdiv: u32,
    pub k_id: usize,
    pub k_exp: usize,
    pub k_tex: usize,
    /// Ground-truth coefficients are drawn with this fraction of each scale.
    pub coeff_fraction: f64,
    pub hair: HairSpec,
    pub poses: [Pose; 2],
    pub camera: Camera,
    /// Standard deviation of additive image noise.
    pub noise: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::with_yaw(0, 10.0)
    }
}

/// Depth agreement, in mm, for a point to count as seen by both views.
const VISIBILITY_TOLERANCE: f64 = 3.0;

const MIN_BASELINE_DEG: f64 = 1.0;
const MAX_BASELINE_DEG: f64 = 30.0;

impl SceneSpec {
    /// Two views at `±yaw/2` degrees, 1.1 m from a 128² camera.
    pub fn with_yaw(seed: u64, yaw: f64) -> Self {
        let t = Vector3::new(0.0, 0.0, 1100.0);
        Self {
            seed,
            n_subdiv: 4,
            k_id: 16,
            k_exp: 8,
            k_tex: 16,
            coeff_fraction: 0.5,
            hair: HairSpec::default(),
            poses: [Pose::from_euler_deg(-yaw / 2.0, 0.0, 0.0, t), Pose::from_euler_deg(yaw / 2.0, 0.0, 0.0, t)],
            camera: Camera::default_for(128, 128),
            noise: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let angle = relative_pose(&self.poses[0], &self.poses[1]).angle().to_degrees();
        if !(MIN_BASELINE_DEG..=MAX_BASELINE_DEG).contains(&angle) {
            return Err(Error::InvalidParameter(format!("relative rotation {angle:.3}° outside 1°–30°")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidParameter("noise must be non-negative".into()));
        }
        if !(self.coeff_fraction >= 0.0 && self.coeff_fraction.is_finite()) {
            return Err(Error::InvalidParameter("coeff_fraction must be non-negative".into()));
        }
        let h = &self.hair;
        if !(h.offset > 0.0 && h.frequency > 0.0) {
            return Err(Error::InvalidParameter("hair offset and frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn to_config_string(&self) -> String {
        let c = &self.camera;
        config::render(&[
            ("seed", self.seed.to_string()),
            ("n_subdiv", self.n_subdiv.to_string()),
            ("k_id", self.k_id.to_string()),
            ("k_exp", self.k_exp.to_string()),
            ("k_tex", self.k_tex.to_string()),
            ("coeff_fraction", format!("{:?}", self.coeff_fraction)),
            ("hair_offset", format!("{:?}", self.hair.offset)),
            ("hair_top", format!("{:?}", self.hair.top)),
            ("hair_back", format!("{:?}", self.hair.back)),
            ("hair_fringe", format!("{:?}", self.hair.fringe)),
            ("hair_frequency", format!("{:?}", self.hair.frequency)),
            ("pose1", format_pose(&self.poses[0])),
            ("pose2", format_pose(&self.poses[1])),
            ("width", c.width.to_string()),
            ("height", c.height.to_string()),
            ("focal", format!("{:?}", c.focal)),
            ("cx", format!("{:?}", c.cx)),
            ("cy", format!("{:?}", c.cy)),
            ("noise", format!("{:?}", self.noise)),
        ])
    }

    /// Parses a spec; keys left out keep their defaults.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut s = Self::default();
        let (mut w, mut h) = (s.camera.width, s.camera.height);
        let (mut focal, mut cx, mut cy) = (None, None, None);
        for e in config::parse(text)? {
            match e.key.as_str() {
                "seed" => s.seed = e.u64()?,
                "n_subdiv" => s.n_subdiv = e.usize()? as u32,
                "k_id" => s.k_id = e.usize()?,
                "k_exp" => s.k_exp = e.usize()?,
                "k_tex" => s.k_tex = e.usize()?,
                "coeff_fraction" => s.coeff_fraction = e.f64()?,
                "hair_offset" => s.hair.offset = e.f64()?,
                "hair_top" => s.hair.top = e.f64()?,
                "hair_back" => s.hair.back = e.f64()?,
                "hair_fringe" => s.hair.fringe = e.f64()?,
                "hair_frequency" => s.hair.frequency = e.f64()?,
                "pose1" => s.poses[0] = e.pose()?,
                "pose2" => s.poses[1] = e.pose()?,
                "width" => w = e.usize()?,
                "height" => h = e.usize()?,
                "focal" => focal = Some(e.f64()?),
                "cx" => cx = Some(e.f64()?),
                "cy" => cy = Some(e.f64()?),
                "noise" => s.noise = e.f64()?,
                _ => return Err(e.unknown()),
            }
        }
        let d = Camera::default_for(w, h);
        s.camera = Camera::new(focal.unwrap_or(d.focal), cx.unwrap_or(d.cx), cy.unwrap_or(d.cy), w, h)?;
        s.validate()?;
        Ok(s)
    }
}

/// Ground truth and observations for one view.
#[derive(Debug, Clone)]
pub struct SceneView {
    pub image: Image,
    /// Background without the head.
    pub plate: Image,
    pub masks: RegionMasks,
    pub landmarks: LandmarkSet,
    /// Depth of the visible head surface on `S`.
    pub depth: DepthMap,
    /// Depth of the face model alone on `F`.
    pub face_depth: DepthMap,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub model: MorphableModel,
    pub coeffs: FaceCoefficients,
    pub lighting: ShLighting,
    /// Hair shell in the model frame, with vertex colours.
    pub hair: TriMesh3D,
    pub views: [SceneView; 2],
}

/// Splits every triangle into four at its edge midpoints.
fn subdivide(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let mut verts = vertices.to_vec();
    let mut mids: HashMap<(u32, u32), u32> = HashMap::new();
    let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| {
        *mids.entry((a.min(b), a.max(b))).or_insert_with(|| {
            verts.push(0.5 * (verts[a as usize] + verts[b as usize]));
            (verts.len() - 1) as u32
        })
    };
    let mut tris = Vec::with_capacity(4 * triangles.len());
    for &[a, b, c] in triangles {
        let ab = mid(a, b, &mut verts);
        let bc = mid(b, c, &mut verts);
        let ca = mid(c, a, &mut verts);
        tris.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    (verts, tris)
}

/// Builds the textured hair shell around `shape` in the model frame.
pub fn hair_shell(shape: &[Vector3<f64>], triangles: &[[u32; 3]], spec: &HairSpec, seed: u64) -> TriMesh3D {
    let (verts, tris) = subdivide(shape, triangles);
    let (normals, _) = compute_vertex_normals(&verts, &tris);
    let [rx, ry, rz] = TEMPLATE_RADII;
    let covered: Vec<bool> = verts
        .iter()
        .map(|p| {
            let d = Vector3::new(p.x / rx, p.y / ry, p.z / rz).normalize();
            d.y < spec.top || d.z > spec.back || (d.z < 0.0 && d.y < spec.fringe)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4841_4952);
    let phase = Normal::new(0.0, 3.0).expect("valid");
    let phases: Vec<f64> = (0..6).map(|_| phase.sample(&mut rng)).collect();
    let w = 2.0 * std::f64::consts::PI * spec.frequency;
    let texture = |p: &Vector3<f64>| {
        let a = (w * p.x + phases[0]).sin() * (w * 0.7 * p.y + phases[1]).cos();
        let b = (w * 1.3 * p.z + phases[2]).sin() * (w * 0.9 * p.x + phases[3]).sin();
        let c = (w * 1.7 * (p.y + p.z) + phases[4]).sin();
        let t = (0.45 * a + 0.35 * b + 0.2 * c).clamp(-1.0, 1.0);
        let streak = (w * 2.3 * p.x + phases[5]).sin();
        [0.36 + 0.2 * t + 0.04 * streak, 0.24 + 0.14 * t + 0.03 * streak, 0.14 + 0.08 * t]
    };

    let mut remap: HashMap<u32, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles_out = Vec::new();
    for tri in &tris {
        if !tri.iter().all(|&i| covered[i as usize]) {
            continue;
        }
        let mapped = tri.map(|i| {
            *remap.entry(i).or_insert_with(|| {
                let p = verts[i as usize] + spec.offset * normals[i as usize];
                vertices.push(p);
                colors.push(texture(&p).map(|v| v.clamp(0.0, 1.0) as f32));
                (vertices.len() - 1) as u32
            })
        });
        triangles_out.push(mapped);
    }
    TriMesh3D { vertices, triangles: triangles_out, colors: Some(colors) }
}

/// Smooth procedural background.
pub fn background_plate(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x504c_4154);
    let n = Normal::new(0.0, 1.0).expect("valid");
    let p: Vec<f64> = (0..6).map(|_| n.sample(&mut rng)).collect();
    Image::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let wave = (6.0 * u + p[0]).sin() * (4.0 * v + p[1]).cos();
        let tiles = (17.0 * u + p[2]).sin() * (13.0 * v + p[3]).sin();
        [
            (0.55 + 0.2 * v + 0.08 * wave + 0.05 * tiles) as f32,
            (0.6 + 0.05 * wave - 0.1 * u + 0.04 * p[4].tanh()) as f32,
            (0.7 - 0.15 * v + 0.06 * tiles + 0.04 * p[5].tanh()) as f32,
        ]
    })
}

fn draw_coefficients(model: &MorphableModel, fraction: f64, rng: &mut ChaCha8Rng) -> FaceCoefficients {
    let n = Normal::new(0.0, 1.0).expect("valid");
    let mut draw = |scales: &[f32]| scales.iter().map(|&s| fraction * s as f64 * n.sample(rng)).collect();
    FaceCoefficients { alpha: draw(model.scales_id()), beta: draw(model.scales_exp()), delta: draw(model.scales_tex()) }
}

fn draw_lighting(rng: &mut ChaCha8Rng) -> ShLighting {
    let n = Normal::new(0.0, 1.0).expect("valid");
    let mut l = ShLighting::unit_ambient();
    let g0 = l.gamma[0];
    l.gamma[0] = g0 * (0.9 + 0.05 * n.sample(rng));
    for k in 1..4 {
        l.gamma[k] = 0.12 * g0 * n.sample(rng).clamp(-2.0, 2.0);
    }
    for k in 4..9 {
        l.gamma[k] = 0.03 * g0 * n.sample(rng).clamp(-2.0, 2.0);
    }
    l
}

fn render_view(
    model: &MorphableModel,
    coeffs: &FaceCoefficients,
    lighting: &ShLighting,
    hair: &TriMesh3D,
    hair_colors: &[[f64; 3]],
    plate: &Image,
    pose: &Pose,
    spec: &SceneSpec,
    view_seed: u64,
) -> Result<SceneView> {
    let camera = &spec.camera;
    let face = render_face(model, coeffs, pose, lighting, camera)?;
    let hair_posed: Vec<Vector3<f64>> = hair.vertices.iter().map(|p| pose.apply(p)).collect();
    let mut raster = RasterOutput::with_background(plate.clone());
    rasterize_into(
        &mut raster,
        &[
            RasterMesh { vertices: &face.posed, triangles: &model.triangles, colors: &face.colors },
            RasterMesh { vertices: &hair_posed, triangles: &hair.triangles, colors: hair_colors },
        ],
        camera,
    );
    let (w, h) = (camera.width, camera.height);
    let s = raster.coverage.clone();
    let s_f = Mask::from_fn(w, h, |x, y| s.get(x, y) && raster.mesh[raster.index(x, y)] == 0);
    let s_h = Mask::from_fn(w, h, |x, y| s.get(x, y) && raster.mesh[raster.index(x, y)] == 1);
    let masks = RegionMasks::new(s, s_f, s_h, face.mask.clone())?;

    let mut image = raster.color.clone();
    if spec.noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(view_seed);
        let n = Normal::new(0.0, spec.noise).expect("validated");
        for y in 0..h {
            for x in 0..w {
                let c = image.get(x, y).map(|v| (v as f64 + n.sample(&mut rng)).clamp(0.0, 1.0) as f32);
                image.set(x, y, c);
            }
        }
    }
    let landmarks = LandmarkSet {
        landmarks: model
            .landmark_indices
            .iter()
            .filter_map(|&v| {
                camera.project(&face.posed[v as usize]).map(|p| Landmark { vertex: v, pixel: [p.u, p.v], weight: 1.0 })
            })
            .collect(),
    };
    Ok(SceneView {
        image,
        plate: plate.clone(),
        masks,
        landmarks,
        depth: depth_from_raster(&raster),
        face_depth: face.depth,
        pose: *pose,
    })
}

/// Renders both views of a scene. Deterministic in the spec.
pub fn synth_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let model = synthesize_model(spec.seed, spec.n_subdiv, spec.k_id, spec.k_exp, spec.k_tex)?;
    synth_scene_with_model(spec, model)
}

/// As [`synth_scene`] with a given model; the spec's basis sizes are
/// replaced by the model's.
pub fn synth_scene_with_model(spec: &SceneSpec, model: MorphableModel) -> Result<Scene> {
    spec.validate()?;
    model.validate()?;
    let spec = &SceneSpec { k_id: model.k_id(), k_exp: model.k_exp(), k_tex: model.k_tex(), ..spec.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5343_454e);
    let coeffs = draw_coefficients(&model, spec.coeff_fraction, &mut rng);
    let lighting = draw_lighting(&mut rng);
    let shape = model.evaluate_shape(&coeffs.alpha, &coeffs.beta)?;
    let hair = hair_shell(&shape, &model.triangles, &spec.hair, spec.seed);
    let hair_colors: Vec<[f64; 3]> =
        hair.colors.as_ref().expect("shell is coloured").iter().map(|c| c.map(|v| v as f64)).collect();
    let plate = background_plate(spec.camera.width, spec.camera.height, spec.seed);
    let view = |i: usize| {
        render_view(&model, &coeffs, &lighting, &hair, &hair_colors, &plate, &spec.poses[i], spec, spec.seed.wrapping_add(i as u64 + 1))
    };
    let views = [view(0)?, view(1)?];
    Ok(Scene { spec: spec.clone(), model, coeffs, lighting, hair, views })
}

impl Scene {
    pub fn truth(&self, view: usize) -> FaceParams {
        FaceParams { coeffs: self.coeffs.clone(), lighting: self.lighting, pose: self.views[view].pose }
    }

    /// Depth-stage inputs built from ground-truth poses and face depth.
    pub fn pair_inputs(&self) -> Result<PairInputs> {
        let v = |i: usize| {
            let s = &self.views[i];
            DepthView::new(s.image.clone(), s.masks.clone(), s.face_depth.clone(), s.pose)
        };
        Ok(PairInputs { views: [v(0)?, v(1)?], camera: self.spec.camera })
    }

    /// Hair pixels of `view` whose surface point is also visible in the
    /// other view and whose image gradient magnitude exceeds `threshold`.
    pub fn textured_hair_overlap(&self, view: usize, threshold: f64) -> Mask {
        let (a, b) = (&self.views[view], &self.views[1 - view]);
        let cam = &self.spec.camera;
        let rel = relative_pose(&a.pose, &b.pose);
        let grads = a.image.forward_gradients();
        let (w, h) = (cam.width, cam.height);
        Mask::from_fn(w, h, |x, y| {
            if !a.masks.h.get(x, y) || x + 1 >= w || y + 1 >= h {
                return false;
            }
            let g = grads.get(x, y);
            let mag = (0..3).map(|c| (g[c] as f64).powi(2) + (g[c + 3] as f64).powi(2)).sum::<f64>().sqrt();
            if mag <= threshold {
                return false;
            }
            let p = rel.apply(&cam.backproject_pixel(x, y, a.depth.get(x, y)));
            let Some(q) = cam.project(&p) else { return false };
            let (u, v) = (q.u.floor(), q.v.floor());
            if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                return false;
            }
            let (u, v) = (u as usize, v as usize);
            b.masks.h.get(u, v) && b.depth.is_defined(u, v) && (b.depth.get(u, v) - q.depth).abs() < VISIBILITY_TOLERANCE
        })
    }

    pub fn mean_scene_depth(&self, view: usize) -> f64 {
        let v = &self.views[view];
        let vals: Vec<f64> = v.masks.s.iter_set().map(|(x, y)| v.depth.get(x, y)).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    /// Writes the scene as a directory bundle.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("scene.cfg"), self.spec.to_config_string())?;
        self.model.save(dir.join("model.p3dm"))?;
        self.hair.save_obj(dir.join("hair.obj"))?;
        std::fs::write(
            dir.join("truth.cfg"),
            config::render(&[
                ("alpha", format_list(&self.coeffs.alpha)),
                ("beta", format_list(&self.coeffs.beta)),
                ("delta", format_list(&self.coeffs.delta)),
                ("gamma", format_list(&self.lighting.gamma)),
            ]),
        )?;
        for (i, v) in self.views.iter().enumerate() {
            let d = dir.join(format!("view{}", i + 1));
            save_view(v, &d)?;
        }
        Ok(())
    }

    /// Reads a bundle written by [`Scene::save`]. Images come back quantized
    /// to 8 bits.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let spec = SceneSpec::from_config_str(&std::fs::read_to_string(dir.join("scene.cfg"))?)?;
        let model = MorphableModel::load(dir.join("model.p3dm"))?;
        let hair = TriMesh3D::load_obj(dir.join("hair.obj"))?;
        let mut coeffs = FaceCoefficients::zeros(&model);
        let mut lighting = ShLighting::unit_ambient();
        for e in config::load(dir.join("truth.cfg"))? {
            let v = e.f64_list()?;
            match e.key.as_str() {
                "alpha" => coeffs.alpha = v,
                "beta" => coeffs.beta = v,
                "delta" => coeffs.delta = v,
                "gamma" => {
                    lighting.gamma = v.try_into().map_err(|_| Error::Config { line: e.line, message: "gamma needs 9 values".into() })?
                }
                _ => return Err(e.unknown()),
            }
        }
        coeffs.check(&model)?;
        let views = [load_view(&dir.join("view1"), spec.poses[0])?, load_view(&dir.join("view2"), spec.poses[1])?];
        Ok(Self { spec, model, coeffs, lighting, hair, views })
    }
}

pub fn save_view(v: &SceneView, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    v.image.save_png(dir.join("image.png"))?;
    v.plate.save_png(dir.join("plate.png"))?;
    v.masks.s.save_png(dir.join("s.png"))?;
    v.masks.s_f.save_png(dir.join("s_f.png"))?;
    v.masks.s_h.save_png(dir.join("s_h.png"))?;
    v.masks.f.save_png(dir.join("f.png"))?;
    v.landmarks.save(dir.join("landmarks.txt"))?;
    v.depth.save(dir.join("depth.dpth"))?;
    v.face_depth.save(dir.join("face_depth.dpth"))?;
    Ok(())
}

pub fn load_view(dir: &Path, pose: Pose) -> Result<SceneView> {
    let masks = RegionMasks::new(
        Mask::load_png(dir.join("s.png"))?,
        Mask::load_png(dir.join("s_f.png"))?,
        Mask::load_png(dir.join("s_h.png"))?,
        Mask::load_png(dir.join("f.png"))?,
    )?;
    Ok(SceneView {
        image: Image::load_png(dir.join("image.png"))?,
        plate: Image::load_png(dir.join("plate.png"))?,
        masks,
        landmarks: LandmarkSet::load(dir.join("landmarks.txt"))?,
        depth: DepthMap::load(dir.join("depth.dpth"))?,
        face_depth: DepthMap::load(dir.join("face_depth.dpth"))?,
        pose,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::evaluate_reconstruction;

    fn small() -> SceneSpec {
        SceneSpec { n_subdiv: 3, k_id: 6, k_exp: 3, k_tex: 6, camera: Camera::default_for(64, 64), ..SceneSpec::with_yaw(3, 10.0) }
    }

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene(&small()).unwrap();
        let b = synth_scene(&small()).unwrap();
        for i in 0..2 {
            assert_eq!(a.views[i].image, b.views[i].image);
            assert_eq!(a.views[i].masks, b.views[i].masks);
            assert_eq!(a.views[i].depth.to_bytes(), b.views[i].depth.to_bytes());
        }
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn masks_have_expected_structure() {
        let s = synth_scene(&small()).unwrap();
        for v in &s.views {
            let m = &v.masks;
            assert!(m.s_f.count() > 200, "{}", m.s_f.count());
            assert!(m.s_h.count() > 100, "{}", m.s_h.count());
            assert!(m.s_f.and(&m.s_h).is_empty());
            assert_eq!(m.s_f.or(&m.s_h), m.s);
            assert!(m.s_f.is_subset_of(&m.f));
            assert!(!m.hair_over_face().is_empty());
            assert!(m.face_target().and(&m.s).count() > 100);
            // The segmented face is never hidden behind the hair shell.
            for (x, y) in m.s_f.iter_set() {
                assert!((v.depth.get(x, y) - v.face_depth.get(x, y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn depth_agrees_with_a_fresh_render() {
        let s = synth_scene(&small()).unwrap();
        let v = &s.views[0];
        let shape = s.model.evaluate_shape(&s.coeffs.alpha, &s.coeffs.beta).unwrap();
        // Hair pixels lie on the shell, in front of the face surface.
        for (x, y) in v.masks.hair_over_face().iter_set() {
            assert!(v.depth.get(x, y) < v.face_depth.get(x, y));
        }
        let r = render_face(&s.model, &s.coeffs, &v.pose, &s.lighting, &s.spec.camera).unwrap();
        for (x, y) in v.masks.f.iter_set() {
            assert!((r.depth.get(x, y) - v.face_depth.get(x, y)).abs() < 1e-3);
        }
        assert_eq!(shape.len(), s.model.n_vertices);
    }

    #[test]
    fn ground_truth_scores_zero() {
        let s = synth_scene(&small()).unwrap();
        let v = &s.views[0];
        let e = evaluate_reconstruction(&v.depth, &v.depth, &v.masks.known_face(), &v.masks.h, &s.spec.camera).unwrap();
        assert!(e.face < 1e-9 && e.non_face < 1e-9, "{e:?}");
    }

    #[test]
    fn textured_overlap_is_substantial() {
        let s = synth_scene(&small()).unwrap();
        let m = s.textured_hair_overlap(0, 0.01);
        assert!(m.count() > 30, "{}", m.count());
        assert!(m.is_subset_of(&s.views[0].masks.h));
    }

    #[test]
    fn spec_round_trips_and_validates() {
        let spec = SceneSpec { noise: 0.01, ..small() };
        assert_eq!(SceneSpec::from_config_str(&spec.to_config_string()).unwrap(), spec);
        let mut bad = small();
        bad.poses[1] = bad.poses[0];
        assert!(bad.validate().is_err());
        let wide = SceneSpec::with_yaw(0, 40.0);
        assert!(wide.validate().is_err());
        assert!(SceneSpec { noise: -1.0, ..small() }.validate().is_err());
        assert!(SceneSpec::from_config_str("colour = 3").is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let s = synth_scene(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let t = Scene::load(dir.path()).unwrap();
        assert_eq!(t.coeffs, s.coeffs);
        assert_eq!(t.lighting, s.lighting);
        assert_eq!(t.views[1].masks, s.views[1].masks);
        assert_eq!(t.views[1].depth.to_bytes(), s.views[1].depth.to_bytes());
        assert_eq!(t.views[0].landmarks, s.views[0].landmarks);
        assert!(t.views[0].image.mae_over(&s.views[0].image, &s.views[0].masks.s).unwrap() < 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn noise_changes_pixels_but_not_geometry() {
        let clean = synth_scene(&small()).unwrap();
        let noisy = synth_scene(&SceneSpec { noise: 0.02, ..small() }).unwrap();
        assert_ne!(clean.views[0].image, noisy.views[0].image);
        assert_eq!(clean.views[0].masks, noisy.views[0].masks);
    }
}
