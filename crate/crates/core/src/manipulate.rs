//! Rigid pose manipulation of an assembled head and harmonic hole filling.

use std::path::Path;

use nalgebra::Vector3;

use crate::config::{self, format_list, format_pose};
use crate::error::{Error, Result};
use crate::geometry::{build_pixel_mesh, Camera, DepthMap, Pose, RegionMasks, TriMesh3D, DEFAULT_DISCONTINUITY_FRACTION};
use crate::harmonic::{solve_harmonic, Cell};
use crate::image::{Image, Mask};
use crate::losses::FaceParams;
use crate::model::MorphableModel;
use crate::render::{compute_vertex_normals, depth_from_raster, rasterize_into, RasterMesh, RasterOutput, ShLighting, NEAR_Z};

/// Everything needed to re-render a head at a new pose. Meshes live in the
/// source camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadAssets {
    /// Face geometry with per-vertex albedo as colours.
    pub face: TriMesh3D,
    pub lighting: ShLighting,
    /// Hair and ear mesh with carried vertex colours.
    pub hair: TriMesh3D,
    /// Source composite the assets were built from.
    pub image: Image,
    pub plate: Image,
    pub masks: RegionMasks,
    /// Head depth, defined on `S`.
    pub depth: DepthMap,
    pub pose: Pose,
    pub camera: Camera,
}

/// Where to move the head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseTarget {
    Absolute(Pose),
    /// Rotation about the head origin followed by a camera-frame translation.
    Delta(Pose),
}

#[derive(Debug, Clone)]
pub struct Manipulation {
    pub image: Image,
    /// Formerly head pixels no longer covered: `S ∖ C_new`.
    pub holes: Mask,
    /// Regions of the re-rendered head; `s` is the new coverage.
    pub masks: RegionMasks,
    pub depth: DepthMap,
    pub pose: Pose,
}

impl HeadAssets {
    /// Assembles assets from a fitted face and a head depth map. The hair
    /// mesh covers `H`, the head pixels the face does not explain.
    pub fn from_fit(
        model: &MorphableModel,
        face: &FaceParams,
        image: &Image,
        plate: &Image,
        masks: &RegionMasks,
        depth: &DepthMap,
        camera: &Camera,
    ) -> Result<Self> {
        let dims = (camera.width, camera.height);
        for (what, d) in [
            ("image width", (image.width(), image.height())),
            ("plate width", (plate.width(), plate.height())),
            ("mask width", (masks.width(), masks.height())),
            ("depth width", (depth.width(), depth.height())),
        ] {
            if d != dims {
                return Err(Error::Dimension { what, expected: dims.0, got: d.0 });
            }
        }
        face.coeffs.check(model)?;
        let shape = model.evaluate_shape(&face.coeffs.alpha, &face.coeffs.beta)?;
        let albedo = model.evaluate_texture(&face.coeffs.delta)?;
        let face_mesh = TriMesh3D {
            vertices: shape.iter().map(|p| face.pose.apply(p)).collect(),
            triangles: model.triangles.clone(),
            colors: Some(albedo.iter().map(|a| [a.x as f32, a.y as f32, a.z as f32]).collect()),
        };
        let hair = if masks.h.is_empty() {
            TriMesh3D { colors: Some(Vec::new()), ..TriMesh3D::default() }
        } else {
            build_pixel_mesh(image, depth, &masks.h, camera, DEFAULT_DISCONTINUITY_FRACTION)?
        };
        Ok(Self {
            face: face_mesh,
            lighting: face.lighting,
            hair,
            image: image.clone(),
            plate: plate.clone(),
            masks: masks.clone(),
            depth: depth.restricted_to(&masks.s),
            pose: face.pose,
            camera: *camera,
        })
    }

    pub fn target_pose(&self, target: PoseTarget) -> Pose {
        match target {
            PoseTarget::Absolute(p) => p,
            PoseTarget::Delta(d) => {
                let q = crate::geometry::quat_mul(d.quaternion(), self.pose.quaternion());
                Pose::new(q, self.pose.translation + d.translation)
            }
        }
    }

    /// Re-renders at `target` and rebuilds the assets from that rendering,
    /// as if it had been the source photo.
    pub fn recapture(&self, target: PoseTarget) -> Result<HeadAssets> {
        let m = manipulate_pose(self, target)?;
        let motion = m.pose.compose(&self.pose.inverse());
        let hair = if m.masks.h.is_empty() {
            TriMesh3D { colors: Some(Vec::new()), ..TriMesh3D::default() }
        } else {
            build_pixel_mesh(&m.image, &m.depth, &m.masks.h, &self.camera, DEFAULT_DISCONTINUITY_FRACTION)?
        };
        Ok(HeadAssets {
            face: self.face.transformed(&motion),
            lighting: self.lighting,
            hair,
            image: m.image,
            plate: self.plate.clone(),
            masks: m.masks,
            depth: m.depth,
            pose: m.pose,
            camera: self.camera,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.face.save_obj(dir.join("face.obj"))?;
        self.hair.save_obj(dir.join("hair.obj"))?;
        self.image.save_png(dir.join("image.png"))?;
        self.plate.save_png(dir.join("plate.png"))?;
        self.masks.s.save_png(dir.join("s.png"))?;
        self.masks.s_f.save_png(dir.join("s_f.png"))?;
        self.masks.s_h.save_png(dir.join("s_h.png"))?;
        self.masks.f.save_png(dir.join("f.png"))?;
        self.depth.save(dir.join("depth.dpth"))?;
        let c = &self.camera;
        std::fs::write(
            dir.join("head.cfg"),
            config::render(&[
                ("pose", format_pose(&self.pose)),
                ("gamma", format_list(&self.lighting.gamma)),
                ("width", c.width.to_string()),
                ("height", c.height.to_string()),
                ("focal", format!("{:?}", c.focal)),
                ("cx", format!("{:?}", c.cx)),
                ("cy", format!("{:?}", c.cy)),
            ]),
        )?;
        Ok(())
    }

    /// Reads a bundle written by [`HeadAssets::save`]; images come back
    /// quantized to 8 bits.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut pose = None;
        let mut gamma = None;
        let (mut w, mut h, mut focal, mut cx, mut cy) = (None, None, None, None, None);
        for e in config::load(dir.join("head.cfg"))? {
            match e.key.as_str() {
                "pose" => pose = Some(e.pose()?),
                "gamma" => {
                    let v: [f64; 9] = e
                        .f64_list()?
                        .try_into()
                        .map_err(|_| Error::Config { line: e.line, message: "gamma needs 9 values".into() })?;
                    gamma = Some(v);
                }
                "width" => w = Some(e.usize()?),
                "height" => h = Some(e.usize()?),
                "focal" => focal = Some(e.f64()?),
                "cx" => cx = Some(e.f64()?),
                "cy" => cy = Some(e.f64()?),
                _ => return Err(e.unknown()),
            }
        }
        let missing = |k: &str| Error::Config { line: 0, message: format!("head.cfg is missing {k}") };
        let camera = Camera::new(
            focal.ok_or_else(|| missing("focal"))?,
            cx.ok_or_else(|| missing("cx"))?,
            cy.ok_or_else(|| missing("cy"))?,
            w.ok_or_else(|| missing("width"))?,
            h.ok_or_else(|| missing("height"))?,
        )?;
        let masks = RegionMasks::new(
            Mask::load_png(dir.join("s.png"))?,
            Mask::load_png(dir.join("s_f.png"))?,
            Mask::load_png(dir.join("s_h.png"))?,
            Mask::load_png(dir.join("f.png"))?,
        )?;
        let assets = Self {
            face: TriMesh3D::load_obj(dir.join("face.obj"))?,
            lighting: ShLighting { gamma: gamma.ok_or_else(|| missing("gamma"))? },
            hair: TriMesh3D::load_obj(dir.join("hair.obj"))?,
            image: Image::load_png(dir.join("image.png"))?,
            plate: Image::load_png(dir.join("plate.png"))?,
            masks,
            depth: DepthMap::load(dir.join("depth.dpth"))?,
            pose: pose.ok_or_else(|| missing("pose"))?,
            camera,
        };
        assets.validate()?;
        Ok(assets)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let dims = (self.camera.width, self.camera.height);
        for (what, d) in [
            ("image width", (self.image.width(), self.image.height())),
            ("plate width", (self.plate.width(), self.plate.height())),
            ("mask width", (self.masks.width(), self.masks.height())),
            ("depth width", (self.depth.width(), self.depth.height())),
        ] {
            if d != dims {
                return Err(Error::Dimension { what, expected: dims.0, got: d.0 });
            }
        }
        for (what, m) in [("face colours", &self.face), ("hair colours", &self.hair)] {
            let n = m.colors.as_ref().map_or(0, Vec::len);
            if n != m.vertices.len() {
                return Err(Error::Dimension { what, expected: m.vertices.len(), got: n });
            }
        }
        Ok(())
    }
}

fn colors_f64(mesh: &TriMesh3D) -> Vec<[f64; 3]> {
    mesh.colors.as_ref().map(|c| c.iter().map(|v| v.map(f64::from)).collect()).unwrap_or_default()
}

/// Moves face and hair rigidly to the target pose and z-buffers them over
/// the plate. The face is reshaded under the unchanged lighting; the hair
/// keeps its colours.
pub fn manipulate_pose(assets: &HeadAssets, target: PoseTarget) -> Result<Manipulation> {
    assets.validate()?;
    let pose = assets.target_pose(target);
    let motion = pose.compose(&assets.pose.inverse());
    let face = assets.face.transformed(&motion);
    let hair = assets.hair.transformed(&motion);
    if !face.vertices.iter().chain(&hair.vertices).any(|p| p.z > NEAR_Z) {
        return Err(Error::Degenerate("head is behind the camera after the transform"));
    }

    let (normals, _) = compute_vertex_normals(&face.vertices, &face.triangles);
    let face_colors: Vec<[f64; 3]> = colors_f64(&face)
        .iter()
        .zip(&normals)
        .map(|(a, n)| {
            let e = assets.lighting.irradiance(n);
            a.map(|v| (v * e).clamp(0.0, 1.0))
        })
        .collect();
    let hair_colors = colors_f64(&hair);
    let face_mesh = RasterMesh { vertices: &face.vertices, triangles: &face.triangles, colors: &face_colors };
    let hair_mesh = RasterMesh { vertices: &hair.vertices, triangles: &hair.triangles, colors: &hair_colors };

    let cam = &assets.camera;
    let mut raster = RasterOutput::with_background(assets.plate.clone());
    rasterize_into(&mut raster, &[face_mesh, hair_mesh], cam);
    let mut face_only = RasterOutput::new(cam.width, cam.height);
    rasterize_into(&mut face_only, &[RasterMesh { colors: &[], ..face_mesh }], cam);

    let (w, h) = (cam.width, cam.height);
    let coverage = raster.coverage.clone();
    let by_mesh = |id: u8| Mask::from_fn(w, h, |x, y| coverage.get(x, y) && raster.mesh[raster.index(x, y)] == id);
    let masks = RegionMasks::new(coverage.clone(), by_mesh(0), by_mesh(1), face_only.coverage)?;
    Ok(Manipulation {
        holes: assets.masks.s.minus(&coverage),
        depth: depth_from_raster(&raster),
        image: raster.color,
        masks,
        pose,
    })
}

/// Replaces the pixels of `holes` with the harmonic extension of the
/// surrounding colours; every other pixel is copied unchanged.
pub fn fill_holes(image: &Image, holes: &Mask) -> Result<Image> {
    let (w, h) = (image.width(), image.height());
    if (holes.width(), holes.height()) != (w, h) {
        return Err(Error::Dimension { what: "hole mask width", expected: w, got: holes.width() });
    }
    if holes.is_empty() {
        return Ok(image.clone());
    }
    if holes.count() == w * h {
        return Err(Error::EmptyRegion("pixels outside the hole mask"));
    }
    let cells: Vec<Cell> = holes.data().iter().map(|&m| if m { Cell::Unknown } else { Cell::Known }).collect();
    // Hole values are discarded so the result depends on the boundary only.
    let mut channels: Vec<Vec<f64>> = (0..3)
        .map(|c| (0..w * h).map(|i| if holes.data()[i] { f64::NAN } else { image.data()[i * 3 + c] as f64 }).collect())
        .collect();
    {
        let [r, g, b] = &mut channels[..] else { unreachable!() };
        solve_harmonic(w, h, &cells, &mut [r, g, b], &[0.0; 3])?;
    }
    let mut out = image.clone();
    for (x, y) in holes.iter_set() {
        let i = y * w + x;
        out.set(x, y, [channels[0][i] as f32, channels[1][i] as f32, channels[2][i] as f32]);
    }
    Ok(out)
}

/// Camera-frame translation that moves a point at depth `z` by `pixels`
/// horizontally in the image.
pub fn image_shift_translation(camera: &Camera, pixels: f64, z: f64) -> Vector3<f64> {
    Vector3::new(pixels * z / camera.focal, 0.0, 0.0)
}
