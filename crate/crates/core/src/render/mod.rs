//! Rendering: spherical-harmonics shading, z-buffer rasterization, face
//! rendering and mesh-based cross-view warping.

mod raster;
mod sh;

pub use raster::{rasterize, rasterize_into, RasterMesh, RasterOutput, NEAR_Z, NO_TRIANGLE};
pub use sh::{sh_basis, shade, shade_unclamped, ShLighting};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{build_hair_mesh, relative_pose, Camera, DepthMap, Pose, DEFAULT_DISCONTINUITY_FRACTION};
use crate::image::{Image, Mask};
use crate::model::{FaceCoefficients, MorphableModel};

/// Area-weighted vertex normals. Vertices touched by no non-degenerate
/// triangle get a zero normal and are flagged in the second vector.
pub fn compute_vertex_normals(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> (Vec<Vector3<f64>>, Vec<bool>) {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        // |cross| is twice the area, which gives the area weighting.
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    let mut isolated = vec![false; vertices.len()];
    for (n, flag) in acc.iter_mut().zip(&mut isolated) {
        let len = n.norm();
        if len > 0.0 {
            *n /= len;
        } else {
            *n = Vector3::zeros();
            *flag = true;
        }
    }
    (acc, isolated)
}

/// Everything produced when rendering the posed, shaded face.
#[derive(Debug, Clone)]
pub struct FaceRender {
    /// Rendered image I′ (black where uncovered).
    pub image: Image,
    /// Coverage F.
    pub mask: Mask,
    /// Face depth d^f, defined on F only.
    pub depth: DepthMap,
    pub raster: RasterOutput,
    /// Model-frame vertex positions.
    pub shape: Vec<Vector3<f64>>,
    /// Camera-frame vertex positions.
    pub posed: Vec<Vector3<f64>>,
    /// Model-frame unit normals.
    pub normals: Vec<Vector3<f64>>,
    /// Unclamped per-vertex albedo.
    pub albedo: Vec<Vector3<f64>>,
    /// Per-vertex shaded colour, clamped.
    pub colors: Vec<[f64; 3]>,
}

/// Shaded vertex colours, lighting in the camera frame.
pub fn shade_vertices(
    albedo: &[Vector3<f64>],
    normals: &[Vector3<f64>],
    pose: &Pose,
    lighting: &ShLighting,
) -> Vec<[f64; 3]> {
    let r = pose.rotation();
    albedo
        .iter()
        .zip(normals)
        .map(|(a, n)| {
            let e = lighting.irradiance(&(r * n));
            [a.x, a.y, a.z].map(|v| (v * e).clamp(0.0, 1.0))
        })
        .collect()
}

/// Renders the morphable model instance: shape, pose, shading,
/// rasterization, coverage and depth.
pub fn render_face(
    model: &MorphableModel,
    coeffs: &FaceCoefficients,
    pose: &Pose,
    lighting: &ShLighting,
    camera: &Camera,
) -> Result<FaceRender> {
    coeffs.check(model)?;
    let shape = model.evaluate_shape(&coeffs.alpha, &coeffs.beta)?;
    let albedo = model.evaluate_texture(&coeffs.delta)?;
    let (normals, _) = compute_vertex_normals(&shape, &model.triangles);
    let posed = crate::geometry::apply_pose(&shape, pose);
    let colors = shade_vertices(&albedo, &normals, pose, lighting);
    let raster = rasterize(RasterMesh { vertices: &posed, triangles: &model.triangles, colors: &colors }, camera);
    let depth = depth_from_raster(&raster);
    Ok(FaceRender {
        image: raster.color.clone(),
        mask: raster.coverage.clone(),
        depth,
        raster,
        shape,
        posed,
        normals,
        albedo,
        colors,
    })
}

/// Depth buffer as a depth map, undefined where uncovered.
pub fn depth_from_raster(raster: &RasterOutput) -> DepthMap {
    DepthMap::from_fn(raster.width, raster.height, |x, y| {
        let d = raster.depth[raster.index(x, y)];
        if d.is_finite() {
            d
        } else {
            f64::NAN
        }
    })
}

/// Warps the pixels of `region` from the source view into the destination
/// view by meshing them with `depth`, moving the mesh by the relative pose
/// and rasterizing it. Returns the warped image and its coverage.
pub fn warp_image(
    src: &Image,
    depth: &DepthMap,
    region: &Mask,
    pose_src: &Pose,
    pose_dst: &Pose,
    camera: &Camera,
) -> Result<(Image, Mask)> {
    if region.is_empty() {
        return Err(Error::EmptyRegion("warp region"));
    }
    let mesh = build_hair_mesh(src, depth, region, camera, DEFAULT_DISCONTINUITY_FRACTION)?;
    let moved = mesh.transformed(&relative_pose(pose_src, pose_dst));
    let colors: Vec<[f64; 3]> = mesh
        .colors
        .as_ref()
        .expect("hair meshes carry colours")
        .iter()
        .map(|c| c.map(|v| v as f64))
        .collect();
    let out = rasterize(RasterMesh { vertices: &moved.vertices, triangles: &moved.triangles, colors: &colors }, camera);
    Ok((out.color, out.coverage))
}
