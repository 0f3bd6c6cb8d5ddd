//! Z-buffered triangle rasterization at pixel centres.
//!
//! Barycentric weights are perspective-correct, i.e. they are the 3D
//! barycentric coordinates of the visible surface point. Shared edges follow
//! a top-left fill rule. Triangles with any vertex at `z <= NEAR_Z` are
//! skipped rather than clipped.

use nalgebra::Vector3;

use crate::geometry::Camera;
use crate::image::{Image, Mask};

pub const NO_TRIANGLE: u32 = u32::MAX;
pub const NEAR_Z: f64 = 1e-3;

/// One mesh submitted to the rasterizer, in camera coordinates.
#[derive(Debug, Clone, Copy)]
pub struct RasterMesh<'a> {
    pub vertices: &'a [Vector3<f64>],
    pub triangles: &'a [[u32; 3]],
    /// Per-vertex colour; empty for geometry-only passes.
    pub colors: &'a [[f64; 3]],
}

/// Caller-owned raster buffers.
#[derive(Debug, Clone)]
pub struct RasterOutput {
    pub width: usize,
    pub height: usize,
    pub color: Image,
    /// Camera-frame depth; `+∞` where uncovered.
    pub depth: Vec<f64>,
    pub coverage: Mask,
    /// Triangle index within its mesh, or [`NO_TRIANGLE`].
    pub triangle: Vec<u32>,
    /// Index of the mesh owning the pixel.
    pub mesh: Vec<u8>,
    pub bary: Vec<[f64; 3]>,
}

impl RasterOutput {
    pub fn new(width: usize, height: usize) -> Self {
        Self::with_background(Image::new(width, height))
    }

    /// Buffers whose colour starts as `background`; uncovered pixels keep it.
    pub fn with_background(background: Image) -> Self {
        let (width, height) = (background.width(), background.height());
        Self {
            width,
            height,
            color: background,
            depth: vec![f64::INFINITY; width * height],
            coverage: Mask::new(width, height),
            triangle: vec![NO_TRIANGLE; width * height],
            mesh: vec![0; width * height],
            bary: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }
}

/// Edge function, evaluated from a canonical endpoint so that
/// `edge(a, b, p) == -edge(b, a, p)` holds exactly.
#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    if (a[0], a[1]) <= (b[0], b[1]) {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    } else {
        -((a[0] - b[0]) * (p[1] - b[1]) - (a[1] - b[1]) * (p[0] - b[0]))
    }
}

/// Top-left rule for edges of a positively oriented (y-down) triangle.
#[inline]
fn is_top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Rasterizes `meshes` into `out` with a shared z-buffer. Earlier meshes
/// and triangles win exact depth ties.
pub fn rasterize_into(out: &mut RasterOutput, meshes: &[RasterMesh<'_>], camera: &Camera) {
    assert_eq!((out.width, out.height), (camera.width, camera.height), "raster size must match camera");
    for (mesh_id, mesh) in meshes.iter().enumerate() {
        let has_color = !mesh.colors.is_empty();
        if has_color {
            assert_eq!(mesh.colors.len(), mesh.vertices.len(), "one colour per vertex");
        }
        let projected: Vec<Option<[f64; 3]>> = mesh
            .vertices
            .iter()
            .map(|p| if p.z > NEAR_Z { camera.project(p).map(|q| [q.u, q.v, q.depth]) } else { None })
            .collect();
        for (tri_id, tri) in mesh.triangles.iter().enumerate() {
            let (Some(p0), Some(p1), Some(p2)) =
                (projected[tri[0] as usize], projected[tri[1] as usize], projected[tri[2] as usize])
            else {
                continue;
            };
            if [p0, p1, p2].iter().flatten().any(|v| !v.is_finite()) {
                continue;
            }
            // Local slot -> triangle corner, after orienting positively.
            let mut order = [0usize, 1, 2];
            let mut s = [[p0[0], p0[1]], [p1[0], p1[1]], [p2[0], p2[1]]];
            let mut z = [p0[2], p1[2], p2[2]];
            let mut area = edge(s[0], s[1], s[2]);
            if area == 0.0 {
                continue;
            }
            if area < 0.0 {
                s.swap(1, 2);
                z.swap(1, 2);
                order.swap(1, 2);
                area = -area;
            }
            let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            // Pixel centres i + 0.5 inside [min, max].
            let x0 = (min_x - 0.5).ceil().max(0.0) as i64;
            let x1 = ((max_x - 0.5).floor() as i64).min(out.width as i64 - 1);
            let y0 = (min_y - 0.5).ceil().max(0.0) as i64;
            let y1 = ((max_y - 0.5).floor() as i64).min(out.height as i64 - 1);
            if x0 > x1 || y0 > y1 {
                continue;
            }
            let tl = [is_top_left(s[1], s[2]), is_top_left(s[2], s[0]), is_top_left(s[0], s[1])];
            let inv_z = z.map(|v| 1.0 / v);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let p = [px as f64 + 0.5, py as f64 + 0.5];
                    let w = [edge(s[1], s[2], p), edge(s[2], s[0], p), edge(s[0], s[1], p)];
                    let inside = (0..3).all(|i| w[i] > 0.0 || (w[i] == 0.0 && tl[i]));
                    if !inside {
                        continue;
                    }
                    let l = w.map(|v| v / area);
                    let denom = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                    let depth = 1.0 / denom;
                    let idx = py as usize * out.width + px as usize;
                    if !(depth < out.depth[idx]) {
                        continue;
                    }
                    let mut b = [0.0; 3];
                    for i in 0..3 {
                        b[order[i]] = l[i] * inv_z[i] * depth;
                    }
                    out.depth[idx] = depth;
                    out.triangle[idx] = tri_id as u32;
                    out.mesh[idx] = mesh_id as u8;
                    out.bary[idx] = b;
                    out.coverage.set(px as usize, py as usize, true);
                    if has_color {
                        let c = tri.map(|v| mesh.colors[v as usize]);
                        let rgb = std::array::from_fn(|ch| (b[0] * c[0][ch] + b[1] * c[1][ch] + b[2] * c[2][ch]) as f32);
                        out.color.set(px as usize, py as usize, rgb);
                    }
                }
            }
        }
    }
}

/// Rasterizes a single mesh over a black background.
pub fn rasterize(mesh: RasterMesh<'_>, camera: &Camera) -> RasterOutput {
    let mut out = RasterOutput::new(camera.width, camera.height);
    rasterize_into(&mut out, &[mesh], camera);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::new(200.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn quad_at(z: f64, half: f64) -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(-half, -half, z),
            Vector3::new(half, -half, z),
            Vector3::new(half, half, z),
            Vector3::new(-half, half, z),
        ]
    }

    #[test]
    fn nearest_surface_wins() {
        let near: Vec<_> = [(-30.0, -30.0), (40.0, -10.0), (0.0, 40.0)].iter().map(|&(x, y)| Vector3::new(x, y, 500.0)).collect();
        let far: Vec<_> = [(-60.0, -60.0), (80.0, -20.0), (0.0, 80.0)].iter().map(|&(x, y)| Vector3::new(x, y, 800.0)).collect();
        let tris = [[0u32, 1, 2]];
        let camera = cam();
        for order in [[0, 1], [1, 0]] {
            let meshes = [
                RasterMesh { vertices: &near, triangles: &tris, colors: &[] },
                RasterMesh { vertices: &far, triangles: &tris, colors: &[] },
            ];
            let mut out = RasterOutput::new(64, 64);
            rasterize_into(&mut out, &[meshes[order[0]], meshes[order[1]]], &camera);
            let i = out.index(32, 32);
            assert!((out.depth[i] - 500.0).abs() < 1e-9);
            assert_eq!(out.mesh[i] as usize, order.iter().position(|&m| m == 0).unwrap());
        }
    }

    #[test]
    fn constant_attribute_is_constant() {
        let v = quad_at(400.0, 50.0);
        let colors = vec![[0.25, 0.5, 0.75]; 4];
        let out = rasterize(RasterMesh { vertices: &v, triangles: &[[0, 1, 2], [0, 2, 3]], colors: &colors }, &cam());
        assert!(out.coverage.count() > 100);
        for (x, y) in out.coverage.iter_set() {
            let c = out.color.get(x, y);
            assert!((c[0] - 0.25).abs() < 1e-6 && (c[1] - 0.5).abs() < 1e-6 && (c[2] - 0.75).abs() < 1e-6);
            let b = out.bary[out.index(x, y)];
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        }
        let i = out.index(0, 0);
        assert_eq!(out.triangle[i], NO_TRIANGLE);
        assert!(out.depth[i].is_infinite());
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // Vertices on pixel centres put many centres exactly on edges.
        let camera = Camera::new(100.0, 8.0, 8.0, 16, 16).unwrap();
        let px = |x: f64, y: f64| camera.backproject(x, y, 100.0);
        let v = vec![px(2.5, 2.5), px(12.5, 2.5), px(12.5, 12.5), px(2.5, 12.5), px(7.5, 7.5)];
        let tris = [[0u32, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]];
        let mut hits = vec![0u32; 256];
        for t in &tris {
            let out = rasterize(RasterMesh { vertices: &v, triangles: std::slice::from_ref(t), colors: &[] }, &camera);
            for (x, y) in out.coverage.iter_set() {
                hits[y * 16 + x] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h <= 1));
        // Interior pixels are covered exactly once; the square spans centres 2.5..12.5 with
        // the top and left boundary included.
        for y in 3..12 {
            for x in 3..12 {
                assert_eq!(hits[y * 16 + x], 1, "pixel {x},{y}");
            }
        }
    }

    #[test]
    fn depth_matches_ray_cast() {
        let v = vec![Vector3::new(-80.0, -60.0, 450.0), Vector3::new(90.0, -40.0, 700.0), Vector3::new(-10.0, 90.0, 600.0)];
        let camera = cam();
        let out = rasterize(RasterMesh { vertices: &v, triangles: &[[0, 1, 2]], colors: &[] }, &camera);
        let n = (v[1] - v[0]).cross(&(v[2] - v[0]));
        assert!(out.coverage.count() > 50);
        for (x, y) in out.coverage.iter_set() {
            let dir = camera.backproject_pixel(x, y, 1.0);
            let t = n.dot(&v[0]) / n.dot(&dir);
            let hit = dir * t;
            let d = out.depth[out.index(x, y)];
            assert!((d - hit.z).abs() < 1e-4, "{d} vs {}", hit.z);
            // Barycentrics reproduce the hit point.
            let b = out.bary[out.index(x, y)];
            let p = v[0] * b[0] + v[1] * b[1] + v[2] * b[2];
            assert!((p - hit).norm() < 1e-6);
        }
    }

    #[test]
    fn behind_camera_triangles_are_skipped() {
        let v = vec![Vector3::new(-10.0, -10.0, -5.0), Vector3::new(10.0, -10.0, 100.0), Vector3::new(0.0, 10.0, 100.0)];
        let out = rasterize(RasterMesh { vertices: &v, triangles: &[[0, 1, 2]], colors: &[] }, &cam());
        assert!(out.coverage.is_empty());
    }
}
