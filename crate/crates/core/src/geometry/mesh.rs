use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{Camera, DepthMap};
use crate::error::{Error, Result};
use crate::image::{Image, Mask};

/// A triangle is dropped from the hair mesh when its vertex depth range
/// exceeds this fraction of the region's median depth.
pub const DEFAULT_DISCONTINUITY_FRACTION: f64 = 0.03;

/// Pixel-grid mesh: one vertex per mask pixel at its centre.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh2D {
    pub vertices: Vec<[f64; 2]>,
    /// Source pixel of each vertex.
    pub pixels: Vec<(usize, usize)>,
    pub triangles: Vec<[u32; 3]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriMesh3D {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Option<Vec<[f32; 3]>>,
}

/// Triangulates the regular pixel grid of `mask`. Every 2×2 block fully
/// inside the mask contributes two triangles split along the ↘ diagonal.
pub fn triangulate_region(mask: &Mask) -> Result<TriMesh2D> {
    if mask.is_empty() {
        return Err(Error::EmptyRegion("triangulation mask"));
    }
    let (w, h) = (mask.width(), mask.height());
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::new();
    let mut pixels = Vec::new();
    for (x, y) in mask.iter_set() {
        index[y * w + x] = vertices.len() as u32;
        vertices.push([x as f64 + 0.5, y as f64 + 0.5]);
        pixels.push((x, y));
    }
    let mut triangles = Vec::new();
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            let tl = index[y * w + x];
            let tr = index[y * w + x + 1];
            let bl = index[(y + 1) * w + x];
            let br = index[(y + 1) * w + x + 1];
            if [tl, tr, bl, br].contains(&u32::MAX) {
                continue;
            }
            triangles.push([tl, tr, br]);
            triangles.push([tl, br, bl]);
        }
    }
    Ok(TriMesh2D { vertices, pixels, triangles })
}

/// Lifts the grid triangulation of `region` to 3D with `depth`, colouring
/// vertices from `image`. Triangles spanning a depth discontinuity are
/// dropped and unreferenced vertices removed.
pub fn build_hair_mesh(
    image: &Image,
    depth: &DepthMap,
    region: &Mask,
    camera: &Camera,
    discontinuity_fraction: f64,
) -> Result<TriMesh3D> {
    let undefined: Vec<_> = region.iter_set().filter(|&(x, y)| !depth.is_defined(x, y)).collect();
    if !undefined.is_empty() {
        return Err(Error::UndefinedDepth { pixels: undefined });
    }
    let grid = triangulate_region(region)?;
    let median = depth.median_over(region).expect("region is non-empty and defined");
    let threshold = discontinuity_fraction * median;
    let zs: Vec<f64> = grid.pixels.iter().map(|&(x, y)| depth.get(x, y)).collect();

    let mut remap: HashMap<u32, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();
    for tri in &grid.triangles {
        let z = tri.map(|i| zs[i as usize]);
        let range = z.iter().cloned().fold(f64::MIN, f64::max) - z.iter().cloned().fold(f64::MAX, f64::min);
        if range > threshold {
            continue;
        }
        let mapped = tri.map(|i| {
            *remap.entry(i).or_insert_with(|| {
                let (x, y) = grid.pixels[i as usize];
                vertices.push(camera.backproject_pixel(x, y, zs[i as usize]));
                colors.push(image.get(x, y));
                (vertices.len() - 1) as u32
            })
        });
        triangles.push(mapped);
    }
    Ok(TriMesh3D { vertices, triangles, colors: Some(colors) })
}

/// Lifts every pixel of `region` to a fan of four triangles tiling its
/// square footprint. The centre vertex carries the pixel's depth and colour;
/// corner vertices average the touching pixels that are continuous in
/// depth and are shared between them, so the mesh splits only at depth
/// discontinuities.
pub fn build_pixel_mesh(
    image: &Image,
    depth: &DepthMap,
    region: &Mask,
    camera: &Camera,
    discontinuity_fraction: f64,
) -> Result<TriMesh3D> {
    let undefined: Vec<_> = region.iter_set().filter(|&(x, y)| !depth.is_defined(x, y)).collect();
    if !undefined.is_empty() {
        return Err(Error::UndefinedDepth { pixels: undefined });
    }
    if region.is_empty() {
        return Err(Error::EmptyRegion("pixel mesh region"));
    }
    let (w, h) = (region.width(), region.height());
    let threshold = discontinuity_fraction * depth.median_over(region).expect("region is non-empty and defined");
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    // Corner vertex of each pixel, indexed top-left, top-right, bottom-right, bottom-left.
    let mut corner = vec![u32::MAX; w * h * 4];
    for cy in 0..=h {
        for cx in 0..=w {
            // Pixels around the corner in cyclic order, with the slot the corner occupies in each.
            let ring: [(isize, isize, usize); 4] = [(-1, -1, 2), (0, -1, 3), (0, 0, 0), (-1, 0, 1)];
            let px: Vec<Option<usize>> = ring
                .iter()
                .map(|&(dx, dy, _)| {
                    let (x, y) = (cx as isize + dx, cy as isize + dy);
                    region.get_signed(x, y).then(|| y as usize * w + x as usize)
                })
                .collect();
            // Union adjacent ring members that are continuous in depth.
            let mut label = [0usize, 1, 2, 3];
            for k in 0..4 {
                let j = (k + 1) % 4;
                if let (Some(a), Some(b)) = (px[k], px[j]) {
                    if (depth.values()[a] - depth.values()[b]).abs() <= threshold {
                        let (la, lb) = (label[k], label[j]);
                        for l in label.iter_mut() {
                            if *l == lb {
                                *l = la;
                            }
                        }
                    }
                }
            }
            for group in 0..4 {
                let members: Vec<usize> = (0..4).filter(|&k| label[k] == group && px[k].is_some()).collect();
                if members.is_empty() {
                    continue;
                }
                let n = members.len() as f64;
                let mut d = 0.0;
                let mut c = [0.0f64; 3];
                for &k in &members {
                    let i = px[k].unwrap();
                    d += depth.values()[i] / n;
                    let rgb = image.get(i % w, i / w);
                    for ch in 0..3 {
                        c[ch] += rgb[ch] as f64 / n;
                    }
                }
                let id = vertices.len() as u32;
                vertices.push(camera.backproject(cx as f64, cy as f64, d));
                colors.push(c.map(|v| v as f32));
                for &k in &members {
                    corner[px[k].unwrap() * 4 + ring[k].2] = id;
                }
            }
        }
    }
    let mut triangles = Vec::with_capacity(region.count() * 4);
    for (x, y) in region.iter_set() {
        let i = y * w + x;
        let centre = vertices.len() as u32;
        vertices.push(camera.backproject_pixel(x, y, depth.get(x, y)));
        colors.push(image.get(x, y));
        let c = &corner[i * 4..i * 4 + 4];
        for k in 0..4 {
            triangles.push([centre, c[k], c[(k + 1) % 4]]);
        }
    }
    Ok(TriMesh3D { vertices, triangles, colors: Some(colors) })
}

impl TriMesh3D {
    /// Writes an OBJ file; vertex colours, when present, follow the
    /// position on each `v` line.
    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_obj())?;
        Ok(())
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]).unwrap();
                }
                None => writeln!(s, "v {} {} {}", v.x, v.y, v.z).unwrap(),
            }
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
        }
        s
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_obj(&text).map_err(|message| Error::Parse { path: path.to_owned(), message })
    }

    pub fn parse_obj(text: &str) -> std::result::Result<Self, String> {
        let mut mesh = TriMesh3D::default();
        let mut colors = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let vals: Vec<f64> = it
                        .map(|t| t.parse::<f64>().map_err(|e| format!("line {}: {e}", ln + 1)))
                        .collect::<std::result::Result<_, _>>()?;
                    match vals.len() {
                        3 | 6 => {}
                        n => return Err(format!("line {}: expected 3 or 6 vertex values, got {n}", ln + 1)),
                    }
                    mesh.vertices.push(Vector3::new(vals[0], vals[1], vals[2]));
                    if vals.len() == 6 {
                        colors.push([vals[3] as f32, vals[4] as f32, vals[5] as f32]);
                    }
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|t| {
                            let first = t.split('/').next().unwrap_or(t);
                            first
                                .parse::<u32>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| format!("line {}: bad face index {t:?}", ln + 1))
                        })
                        .collect::<std::result::Result<_, _>>()?;
                    if idx.len() != 3 {
                        return Err(format!("line {}: only triangles are supported", ln + 1));
                    }
                    mesh.triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        if !colors.is_empty() {
            if colors.len() != mesh.vertices.len() {
                return Err("vertex colours must be given for all vertices or none".into());
            }
            mesh.colors = Some(colors);
        }
        let n = mesh.vertices.len() as u32;
        if mesh.triangles.iter().flatten().any(|&i| i >= n) {
            return Err("face index out of range".into());
        }
        Ok(mesh)
    }

    /// Vertex positions transformed by `pose`.
    pub fn transformed(&self, pose: &super::Pose) -> TriMesh3D {
        TriMesh3D {
            vertices: super::apply_pose(&self.vertices, pose),
            triangles: self.triangles.clone(),
            colors: self.colors.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grids() {
        let m = triangulate_region(&Mask::full(2, 2)).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (4, 2));
        let m = triangulate_region(&Mask::full(3, 3)).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (9, 8));
        let mut one = Mask::new(4, 4);
        one.set(2, 1, true);
        let m = triangulate_region(&one).unwrap();
        assert_eq!((m.vertices.len(), m.triangles.len()), (1, 0));
        assert_eq!(m.vertices[0], [2.5, 1.5]);
        assert!(triangulate_region(&Mask::new(3, 3)).is_err());
    }

    #[test]
    fn quad_count_matches_formula() {
        for (w, h) in [(2, 5), (4, 4), (7, 3)] {
            let m = triangulate_region(&Mask::full(w, h)).unwrap();
            assert_eq!(m.triangles.len(), 2 * (w - 1) * (h - 1));
        }
    }

    #[test]
    fn triangles_stay_inside_mask() {
        let mask = Mask::from_fn(9, 7, |x, y| (x * 7 + y * 3) % 5 != 0);
        let m = triangulate_region(&mask).unwrap();
        for t in &m.triangles {
            for &i in t {
                let (x, y) = m.pixels[i as usize];
                assert!(mask.get(x, y));
            }
        }
    }

    fn camera() -> Camera {
        Camera::default_for(16, 16)
    }

    #[test]
    fn flat_plane_keeps_every_triangle() {
        let img = Image::from_fn(16, 16, |x, y| [x as f32 / 16.0, y as f32 / 16.0, 0.5]);
        let depth = DepthMap::filled(16, 16, 800.0);
        let region = Mask::from_fn(16, 16, |x, y| (3..11).contains(&x) && (2..9).contains(&y));
        let mesh = build_hair_mesh(&img, &depth, &region, &camera(), DEFAULT_DISCONTINUITY_FRACTION).unwrap();
        assert_eq!(mesh.triangles.len(), 2 * 7 * 6);
        assert_eq!(mesh.vertices.len(), region.count());
        assert!(mesh.vertices.iter().all(|v| v.z == 800.0));
        let c = mesh.colors.as_ref().unwrap();
        let i = mesh.vertices.iter().position(|v| camera().project(v).unwrap().u.floor() == 3.0).unwrap();
        assert_eq!(c[i][0], 3.0 / 16.0);
    }

    #[test]
    fn step_edge_drops_straddling_quads() {
        let img = Image::new(16, 16);
        // Median depth is 1150, so the threshold is 34.5 mm; the step is 300 mm.
        let depth = DepthMap::from_fn(16, 16, |x, _| if x < 8 { 1000.0 } else { 1300.0 });
        let region = Mask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..10).contains(&y));
        let mesh = build_hair_mesh(&img, &depth, &region, &camera(), DEFAULT_DISCONTINUITY_FRACTION).unwrap();
        // Columns 4..=7 and 8..=11 each keep 3×5 quads; the 7|8 column of quads goes.
        assert_eq!(mesh.triangles.len(), 2 * (3 * 5 + 3 * 5));
        for t in &mesh.triangles {
            let z: Vec<f64> = t.iter().map(|&i| mesh.vertices[i as usize].z).collect();
            assert!(z.iter().all(|&v| v == z[0]));
        }
    }

    #[test]
    fn isolated_pixels_are_not_vertices() {
        let img = Image::new(10, 10);
        let depth = DepthMap::filled(10, 10, 500.0);
        let mut region = Mask::from_fn(10, 10, |x, y| x < 3 && y < 3);
        region.set(7, 7, true);
        region.set(5, 0, true);
        let mesh = build_hair_mesh(&img, &depth, &region, &Camera::default_for(10, 10), 0.03).unwrap();
        // Oracle: a pixel is a vertex iff some fully-set 2×2 block contains it.
        let in_quad = |x: usize, y: usize| {
            [(0isize, 0isize), (-1, 0), (0, -1), (-1, -1)].iter().any(|&(dx, dy)| {
                let (qx, qy) = (x as isize + dx, y as isize + dy);
                [(0, 0), (1, 0), (0, 1), (1, 1)].iter().all(|&(ox, oy)| region.get_signed(qx + ox, qy + oy))
            })
        };
        let expected = region.iter_set().filter(|&(x, y)| in_quad(x, y)).count();
        assert_eq!(mesh.vertices.len(), expected);
        assert_eq!(expected, region.count() - 2);
    }

    #[test]
    fn pixel_mesh_reproduces_its_region_exactly() {
        let cam = Camera::default_for(24, 20);
        let img = Image::from_fn(24, 20, |x, y| [((x * 7 + y * 3) % 11) as f32 / 11.0, y as f32 / 20.0, 0.3]);
        let depth = DepthMap::from_fn(24, 20, |x, y| 900.0 + 3.0 * x as f64 + if y > 12 { 200.0 } else { 0.0 });
        let mut region = Mask::from_fn(24, 20, |x, y| (x * 5 + y * 11) % 7 != 0 && (2..22).contains(&x) && (1..19).contains(&y));
        region.set(0, 0, true);
        let mesh = build_pixel_mesh(&img, &depth, &region, &cam, DEFAULT_DISCONTINUITY_FRACTION).unwrap();
        assert_eq!(mesh.triangles.len(), 4 * region.count());
        let colors: Vec<[f64; 3]> = mesh.colors.as_ref().unwrap().iter().map(|c| c.map(f64::from)).collect();
        let r = crate::render::rasterize(
            crate::render::RasterMesh { vertices: &mesh.vertices, triangles: &mesh.triangles, colors: &colors },
            &cam,
        );
        assert_eq!(r.coverage, region);
        for (x, y) in region.iter_set() {
            let (got, want) = (r.color.get(x, y), img.get(x, y));
            assert!((0..3).all(|c| (got[c] - want[c]).abs() < 1e-6), "{got:?} {want:?}");
            assert!((r.depth[r.index(x, y)] - depth.get(x, y)).abs() < 1e-9);
        }
    }

    #[test]
    fn pixel_mesh_shares_corners_only_across_continuous_depth() {
        let cam = Camera::default_for(16, 16);
        let depth = DepthMap::from_fn(16, 16, |x, _| if x < 8 { 1000.0 } else { 1300.0 });
        let region = Mask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..10).contains(&y));
        let mesh = build_pixel_mesh(&Image::new(16, 16), &depth, &region, &cam, DEFAULT_DISCONTINUITY_FRACTION).unwrap();
        // 9×7 corner lattice, with the 7 corners on the step duplicated, plus one centre per pixel.
        assert_eq!(mesh.vertices.len(), 9 * 7 + 7 + region.count());
        for t in &mesh.triangles {
            let z: Vec<f64> = t.iter().map(|&i| mesh.vertices[i as usize].z).collect();
            assert!(z.iter().all(|&v| v == z[0]), "{z:?}");
        }
    }

    #[test]
    fn undefined_depth_in_region_is_an_error() {
        let mut depth = DepthMap::filled(6, 6, 500.0);
        depth.set_undefined(2, 2);
        let err = build_hair_mesh(&Image::new(6, 6), &depth, &Mask::full(6, 6), &Camera::default_for(6, 6), 0.03);
        assert!(matches!(err, Err(Error::UndefinedDepth { .. })));
    }

    #[test]
    fn obj_round_trip() {
        let mesh = TriMesh3D {
            vertices: vec![Vector3::new(0.0, 1.5, 2.0), Vector3::new(-1.0, 0.0, 3.25), Vector3::new(4.0, 4.0, 4.0)],
            triangles: vec![[0, 1, 2]],
            colors: Some(vec![[0.5, 0.25, 1.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]),
        };
        assert_eq!(TriMesh3D::parse_obj(&mesh.to_obj()).unwrap(), mesh);
        assert!(TriMesh3D::parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }
}
