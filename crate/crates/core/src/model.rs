//! Affine morphable face model: `shape = mean + B_id·α + B_exp·β`,
//! `albedo = mean_tex + B_tex·δ`.
//!
//! Model coordinates share the camera axis convention (x right, y down,
//! z away from the viewer), so the template face looks towards −z and an
//! identity rotation is a frontal view. Units are millimetres.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 5] = b"P3DM1";

/// Column-major `rows × cols` matrix of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Basis {
    pub fn from_columns(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension { what: "basis storage", expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f32] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Accumulates `self · coeffs` into `out` (length `rows`).
    pub fn mul_add(&self, coeffs: &[f64], out: &mut [f64]) {
        debug_assert_eq!(coeffs.len(), self.cols);
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &b) in out.iter_mut().zip(self.column(j)) {
                *o += b as f64 * c;
            }
        }
    }

    /// `selfᵀ · v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        (0..self.cols)
            .map(|j| self.column(j).iter().zip(v).map(|(&b, &x)| b as f64 * x).sum())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    pub n_vertices: usize,
    pub triangles: Vec<[u32; 3]>,
    pub mean_shape: Vec<f32>,
    pub mean_texture: Vec<f32>,
    pub basis_id: Basis,
    pub basis_exp: Basis,
    pub basis_tex: Basis,
    /// Per-mode standard deviations, identity modes first, then expression,
    /// then texture.
    pub coeff_scales: Vec<f32>,
    pub landmark_indices: Vec<u32>,
}

/// Identity, expression and texture coefficients for one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCoefficients {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
}

impl FaceCoefficients {
    pub fn zeros(model: &MorphableModel) -> Self {
        Self {
            alpha: vec![0.0; model.k_id()],
            beta: vec![0.0; model.k_exp()],
            delta: vec![0.0; model.k_tex()],
        }
    }

    pub fn check(&self, model: &MorphableModel) -> Result<()> {
        check_len("alpha", model.k_id(), self.alpha.len())?;
        check_len("beta", model.k_exp(), self.beta.len())?;
        check_len("delta", model.k_tex(), self.delta.len())
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

impl MorphableModel {
    pub fn k_id(&self) -> usize {
        self.basis_id.cols()
    }

    pub fn k_exp(&self) -> usize {
        self.basis_exp.cols()
    }

    pub fn k_tex(&self) -> usize {
        self.basis_tex.cols()
    }

    pub fn scales_id(&self) -> &[f32] {
        &self.coeff_scales[..self.k_id()]
    }

    pub fn scales_exp(&self) -> &[f32] {
        &self.coeff_scales[self.k_id()..self.k_id() + self.k_exp()]
    }

    pub fn scales_tex(&self) -> &[f32] {
        &self.coeff_scales[self.k_id() + self.k_exp()..]
    }

    /// Checks every structural invariant of the model.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices;
        let bad = |m: String| Err(Error::InvalidModel(m));
        if self.mean_shape.len() != 3 * n || self.mean_texture.len() != 3 * n {
            return bad("mean vectors must have length 3·n_vertices".into());
        }
        for (name, b) in [("identity", &self.basis_id), ("expression", &self.basis_exp), ("texture", &self.basis_tex)] {
            if b.rows() != 3 * n {
                return bad(format!("{name} basis has {} rows, expected {}", b.rows(), 3 * n));
            }
        }
        if self.coeff_scales.len() != self.k_id() + self.k_exp() + self.k_tex() {
            return bad("coeff_scales length must equal k_id + k_exp + k_tex".into());
        }
        if self.coeff_scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("coeff_scales must be strictly positive".into());
        }
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return bad(format!("triangle {t:?} references a vertex >= {n}"));
        }
        let mut seen = vec![false; n];
        for &l in &self.landmark_indices {
            let l = l as usize;
            if l >= n {
                return bad(format!("landmark index {l} out of range"));
            }
            if std::mem::replace(&mut seen[l], true) {
                return bad(format!("duplicate landmark index {l}"));
            }
        }
        if self.mean_shape.iter().chain(&self.mean_texture).any(|v| !v.is_finite()) {
            return bad("non-finite mean values".into());
        }
        Ok(())
    }

    /// Vertex positions in millimetres for the given identity and expression coefficients.
    pub fn evaluate_shape(&self, alpha: &[f64], beta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_len("alpha", self.k_id(), alpha.len())?;
        check_len("beta", self.k_exp(), beta.len())?;
        let mut flat: Vec<f64> = self.mean_shape.iter().map(|&v| v as f64).collect();
        self.basis_id.mul_add(alpha, &mut flat);
        self.basis_exp.mul_add(beta, &mut flat);
        Ok(to_points(&flat))
    }

    /// Per-vertex albedo, not clamped.
    pub fn evaluate_texture(&self, delta: &[f64]) -> Result<Vec<Vector3<f64>>> {
        check_len("delta", self.k_tex(), delta.len())?;
        let mut flat: Vec<f64> = self.mean_texture.iter().map(|&v| v as f64).collect();
        self.basis_tex.mul_add(delta, &mut flat);
        Ok(to_points(&flat))
    }

    pub fn landmark_positions(&self, shape: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        self.landmark_indices.iter().map(|&i| shape[i as usize]).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_len() + 29);
        out.extend_from_slice(MODEL_MAGIC);
        for v in [
            self.n_vertices,
            self.triangles.len(),
            self.k_id(),
            self.k_exp(),
            self.k_tex(),
            self.landmark_indices.len(),
        ] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for t in &self.triangles {
            for i in t {
                out.extend_from_slice(&i.to_le_bytes());
            }
        }
        let floats = self
            .mean_shape
            .iter()
            .chain(&self.mean_texture)
            .chain(self.basis_id.as_slice())
            .chain(self.basis_exp.as_slice())
            .chain(self.basis_tex.as_slice())
            .chain(&self.coeff_scales);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in &self.landmark_indices {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    fn payload_len(&self) -> usize {
        let n3 = 3 * self.n_vertices;
        4 * (3 * self.triangles.len()
            + 2 * n3
            + n3 * (self.k_id() + self.k_exp() + self.k_tex())
            + self.coeff_scales.len()
            + self.landmark_indices.len())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const FORMAT: &str = "P3DM1";
        if bytes.len() < 5 || &bytes[..5] != MODEL_MAGIC {
            return Err(Error::BadMagic { format: FORMAT });
        }
        if bytes.len() < 29 {
            return Err(Error::PayloadSize { format: FORMAT, expected: 24, found: bytes.len() - 5 });
        }
        let header: Vec<usize> =
            bytes[5..29].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
        let (n, nt, kid, kexp, ktex, nl) = (header[0], header[1], header[2], header[3], header[4], header[5]);
        let expected = (|| {
            let n3 = n.checked_mul(3)?;
            let words = nt
                .checked_mul(3)?
                .checked_add(n3.checked_mul(2)?)?
                .checked_add(n3.checked_mul(kid.checked_add(kexp)?.checked_add(ktex)?)?)?
                .checked_add(kid + kexp + ktex)?
                .checked_add(nl)?;
            words.checked_mul(4)
        })()
        .unwrap_or(usize::MAX);
        let payload = &bytes[29..];
        if payload.len() != expected {
            return Err(Error::PayloadSize { format: FORMAT, expected, found: payload.len() });
        }
        let mut words = payload.chunks_exact(4).map(|c| c.try_into().unwrap());
        let mut take_u32 = |k: usize| -> Vec<u32> { (&mut words).take(k).map(u32::from_le_bytes).collect() };
        let tri_flat = take_u32(3 * nt);
        let n3 = 3 * n;
        let floats: Vec<f32> = take_u32(2 * n3 + n3 * (kid + kexp + ktex) + kid + kexp + ktex)
            .into_iter()
            .map(f32::from_bits)
            .collect();
        let landmark_indices = take_u32(nl);
        let mut off = 0;
        let mut slice = |len: usize| {
            let s = floats[off..off + len].to_vec();
            off += len;
            s
        };
        let mean_shape = slice(n3);
        let mean_texture = slice(n3);
        let basis_id = Basis::from_columns(n3, kid, slice(n3 * kid))?;
        let basis_exp = Basis::from_columns(n3, kexp, slice(n3 * kexp))?;
        let basis_tex = Basis::from_columns(n3, ktex, slice(n3 * ktex))?;
        let coeff_scales = slice(kid + kexp + ktex);
        let model = MorphableModel {
            n_vertices: n,
            triangles: tri_flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            mean_shape,
            mean_texture,
            basis_id,
            basis_exp,
            basis_tex,
            coeff_scales,
            landmark_indices,
        };
        model.validate()?;
        Ok(model)
    }
}

fn to_points(flat: &[f64]) -> Vec<Vector3<f64>> {
    flat.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect()
}

/// Head template radii (mm) along x, y, z.
pub const TEMPLATE_RADII: [f64; 3] = [78.0, 98.0, 88.0];

/// Target RMS per-vertex effect of a one-standard-deviation coefficient.
const ID_RMS_MM: f64 = 3.0;
const EXP_RMS_MM: f64 = 1.5;
const TEX_RMS: f64 = 0.04;

/// Generates a deterministic stand-in morphable model.
///
/// The template is an icosphere with `n_subdiv` subdivisions stretched into
/// an ellipsoid, with a nose-like bump on the −z side. Each basis holds
/// smooth polynomial deformation fields with rigid motions projected out,
/// orthonormalized column-wise.
pub fn synthesize_model(seed: u64, n_subdiv: u32, k_id: usize, k_exp: usize, k_tex: usize) -> Result<MorphableModel> {
    if n_subdiv < 1 || n_subdiv > 7 {
        return Err(Error::InvalidParameter(format!("n_subdiv must be in 1..=7, got {n_subdiv}")));
    }
    if k_id == 0 || k_exp == 0 || k_tex == 0 {
        return Err(Error::InvalidParameter("basis widths must be at least 1".into()));
    }
    let (dirs, triangles) = icosphere(n_subdiv);
    let n = dirs.len();
    if k_id.max(k_exp).max(k_tex) > 3 * n - 6 {
        return Err(Error::InvalidParameter(format!("basis width exceeds available modes for {n} vertices")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let positions: Vec<Vector3<f64>> = dirs.iter().map(template_point).collect();
    let mean_shape: Vec<f32> = positions.iter().flat_map(|p| [p.x as f32, p.y as f32, p.z as f32]).collect();
    let mean_texture: Vec<f32> = dirs.iter().flat_map(|d| template_albedo(d).map(|v| v as f32)).collect();

    let rigid = rigid_fields(&positions);
    let face_weight = |d: &Vector3<f64>| 0.25 + 0.75 * (-d.z).max(0.0);
    let basis_id = random_basis(&mut rng, &dirs, k_id, &rigid, |_| 1.0)?;
    let basis_exp = random_basis(&mut rng, &dirs, k_exp, &rigid, face_weight)?;
    let basis_tex = random_basis(&mut rng, &dirs, k_tex, &[], |_| 1.0)?;

    let sqrt_n = (n as f64).sqrt();
    let sqrt_3n = (3.0 * n as f64).sqrt();
    let decay = |j: usize| 1.0 / (1.0 + 0.08 * j as f64);
    let mut coeff_scales = Vec::with_capacity(k_id + k_exp + k_tex);
    coeff_scales.extend((0..k_id).map(|j| (ID_RMS_MM * sqrt_n * decay(j)) as f32));
    coeff_scales.extend((0..k_exp).map(|j| (EXP_RMS_MM * sqrt_n * decay(j)) as f32));
    coeff_scales.extend((0..k_tex).map(|j| (TEX_RMS * sqrt_3n * decay(j)) as f32));

    let model = MorphableModel {
        n_vertices: n,
        triangles,
        mean_shape,
        mean_texture,
        basis_id,
        basis_exp,
        basis_tex,
        coeff_scales,
        landmark_indices: pick_landmarks(&dirs, &positions),
    };
    model.validate()?;
    Ok(model)
}

fn template_point(d: &Vector3<f64>) -> Vector3<f64> {
    let [rx, ry, rz] = TEMPLATE_RADII;
    let base = Vector3::new(rx * d.x, ry * d.y, rz * d.z);
    let nose_dir = Vector3::new(0.0, 0.08, -1.0).normalize();
    let ang = d.dot(&nose_dir).clamp(-1.0, 1.0).acos();
    let nose = 26.0 * (-(ang / 0.2).powi(2)).exp();
    let brow_dir = Vector3::new(0.0, -0.35, -0.94).normalize();
    let brow = 6.0 * (-(d.dot(&brow_dir).clamp(-1.0, 1.0).acos() / 0.3).powi(2)).exp();
    base + Vector3::new(0.0, 0.0, -(nose + brow))
}

fn template_albedo(d: &Vector3<f64>) -> [f64; 3] {
    let skin = [0.78, 0.6, 0.5];
    let blob = |c: Vector3<f64>, width: f64| (-(d.dot(&c.normalize()).clamp(-1.0, 1.0).acos() / width).powi(2)).exp();
    let eyes = blob(Vector3::new(0.33, -0.18, -0.93), 0.1) + blob(Vector3::new(-0.33, -0.18, -0.93), 0.1);
    let brows = blob(Vector3::new(0.3, -0.36, -0.88), 0.09) + blob(Vector3::new(-0.3, -0.36, -0.88), 0.09);
    let lips = blob(Vector3::new(0.0, 0.42, -0.9), 0.12);
    let cheeks = blob(Vector3::new(0.55, 0.15, -0.82), 0.2) + blob(Vector3::new(-0.55, 0.15, -0.82), 0.2);
    let dark = (0.7 * eyes + 0.55 * brows).min(0.8);
    [
        (skin[0] * (1.0 - dark) + 0.12 * lips + 0.06 * cheeks).clamp(0.0, 1.0),
        (skin[1] * (1.0 - dark) - 0.15 * lips).clamp(0.0, 1.0),
        (skin[2] * (1.0 - dark) - 0.1 * lips).clamp(0.0, 1.0),
    ]
}

/// Unit vertex directions and outward-wound triangles of a subdivided icosahedron.
pub fn icosphere(n_subdiv: u32) -> (Vec<Vector3<f64>>, Vec<[u32; 3]>) {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..n_subdiv {
        let mut cache: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push((verts[a as usize] + verts[b as usize]).normalize());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// The six infinitesimal rigid motions of a point set, as flat 3n-vectors.
fn rigid_fields(points: &[Vector3<f64>]) -> Vec<Vec<f64>> {
    let mut fields = Vec::with_capacity(6);
    for axis in 0..3 {
        let mut t = vec![0.0; 3 * points.len()];
        for i in 0..points.len() {
            t[3 * i + axis] = 1.0;
        }
        fields.push(t);
    }
    for axis in 0..3 {
        let w = Vector3::ith(axis, 1.0);
        fields.push(points.iter().flat_map(|p| { let v = w.cross(p); [v.x, v.y, v.z] }).collect());
    }
    orthonormalize(fields, 1e-9)
}

fn monomials(d: &Vector3<f64>, degree: u32) -> Vec<f64> {
    let mut out = Vec::new();
    for total in 1..=degree {
        for i in 0..=total {
            for j in 0..=(total - i) {
                let k = total - i - j;
                out.push(d.x.powi(i as i32) * d.y.powi(j as i32) * d.z.powi(k as i32));
            }
        }
    }
    out
}

fn random_basis(
    rng: &mut ChaCha8Rng,
    dirs: &[Vector3<f64>],
    k: usize,
    excluded: &[Vec<f64>],
    weight: impl Fn(&Vector3<f64>) -> f64,
) -> Result<Basis> {
    let n = dirs.len();
    // Polynomials of degree ≤ d restricted to the sphere span (d+1)² scalar
    // fields; keep a generous margin so random draws stay well conditioned.
    let mut degree = 2;
    while 3 * (degree as usize + 1).pow(2) < 2 * (k + excluded.len()) + 8 && degree < 12 {
        degree += 1;
    }
    let feats: Vec<Vec<f64>> = dirs.iter().map(|d| monomials(d, degree)).collect();
    let weights: Vec<f64> = dirs.iter().map(&weight).collect();
    let m = feats[0].len();
    let falloff: Vec<f64> = (1..=degree).flat_map(|t| std::iter::repeat_n(1.0 / t as f64, ((t + 1) * (t + 2) / 2) as usize)).collect();

    let mut cols: Vec<Vec<f64>> = excluded.to_vec();
    let mut attempts = 0;
    while cols.len() < excluded.len() + k {
        attempts += 1;
        if attempts > 20 * (k + 10) {
            return Err(Error::InvalidParameter("could not generate independent basis columns".into()));
        }
        // Random coefficients with 1/degree falloff keep the fields low-frequency.
        let coeffs: Vec<[f64; 3]> = (0..m)
            .map(|j| std::array::from_fn(|_| falloff[j] * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let mut col = vec![0.0; 3 * n];
        for i in 0..n {
            for (f, c) in feats[i].iter().zip(&coeffs) {
                for a in 0..3 {
                    col[3 * i + a] += weights[i] * f * c[a];
                }
            }
        }
        if let Some(v) = orthonormal_complement(&cols, col, 1e-6) {
            cols.push(v);
        }
    }
    let data: Vec<f32> = cols[excluded.len()..].iter().flatten().map(|&v| v as f32).collect();
    Basis::from_columns(3 * n, k, data)
}

fn orthonormalize(vectors: Vec<Vec<f64>>, tol: f64) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        if let Some(u) = orthonormal_complement(&out, v, tol) {
            out.push(u);
        }
    }
    out
}

/// Gram-Schmidt with one re-orthogonalization pass; `None` when `v` is
/// numerically inside the span of `basis`.
fn orthonormal_complement(basis: &[Vec<f64>], mut v: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let d: f64 = b.iter().zip(&v).map(|(a, c)| a * c).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= d * y;
            }
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < tol * norm0 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Landmarks at the nose tip, the four silhouette extremes of the front
/// half and a grid of frontal directions.
fn pick_landmarks(dirs: &[Vector3<f64>], positions: &[Vector3<f64>]) -> Vec<u32> {
    let front: Vec<usize> = (0..dirs.len()).filter(|&i| dirs[i].z < 0.0).collect();
    let arg = |f: &dyn Fn(&Vector3<f64>) -> f64| -> u32 {
        *front
            .iter()
            .min_by(|&&a, &&b| f(&positions[a]).total_cmp(&f(&positions[b])))
            .expect("front half is non-empty") as u32
    };
    let mut picks = vec![
        arg(&|p| p.z),
        arg(&|p| p.x),
        arg(&|p| -p.x),
        arg(&|p| p.y),
        arg(&|p| -p.y),
    ];
    for &(yaw, pitch) in &[
        (-50.0, -25.0),
        (0.0, -30.0),
        (50.0, -25.0),
        (-30.0, -12.0),
        (30.0, -12.0),
        (-55.0, 10.0),
        (-20.0, 15.0),
        (20.0, 15.0),
        (55.0, 10.0),
        (-30.0, 35.0),
        (0.0, 30.0),
        (30.0, 35.0),
        (0.0, 50.0),
    ] {
        let (yaw, pitch): (f64, f64) = (f64::to_radians(yaw), f64::to_radians(pitch));
        let target = Vector3::new(yaw.sin() * pitch.cos(), pitch.sin(), -yaw.cos() * pitch.cos());
        let best = (0..dirs.len())
            .max_by(|&a, &b| dirs[a].dot(&target).total_cmp(&dirs[b].dot(&target)))
            .unwrap() as u32;
        picks.push(best);
    }
    let mut seen = std::collections::HashSet::new();
    picks.retain(|i| seen.insert(*i));
    picks
}
