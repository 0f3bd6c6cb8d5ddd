use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{quat_gradient_from_rotation, Camera, Pose};
use crate::image::{Image, Mask};
use crate::model::{FaceCoefficients, MorphableModel};
use crate::render::{render_face, sh_basis, FaceRender, ShLighting, NO_TRIANGLE};

use super::{coef_regularization, LandmarkSet, LossWeights};

/// Everything the face stage estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub coeffs: FaceCoefficients,
    pub lighting: ShLighting,
    pub pose: Pose,
}

/// Observations for the face stage.
#[derive(Debug, Clone, Copy)]
pub struct FaceInputs<'a> {
    pub image: &'a Image,
    pub landmarks: &'a LandmarkSet,
    /// Segmented face `S_f`; the photometric term integrates over `F ∩ S_f`.
    pub face_mask: &'a Mask,
    pub camera: &'a Camera,
}

/// Pixel-to-surface assignment and model-frame normals held fixed within
/// one iteration.
#[derive(Debug, Clone)]
pub struct Correspondences {
    pub pixels: Vec<(usize, usize)>,
    pub triangles: Vec<u32>,
    pub bary: Vec<[f64; 3]>,
    pub normals: Vec<Vector3<f64>>,
}

/// Renders the current estimate and freezes its correspondences over `F ∩ S_f`.
pub fn freeze_correspondences(
    model: &MorphableModel,
    params: &FaceParams,
    face_mask: &Mask,
    camera: &Camera,
) -> Result<(Correspondences, FaceRender)> {
    let render = render_face(model, &params.coeffs, &params.pose, &params.lighting, camera)?;
    let mut corr = Correspondences { pixels: Vec::new(), triangles: Vec::new(), bary: Vec::new(), normals: render.normals.clone() };
    for (x, y) in render.mask.and(face_mask).iter_set() {
        let i = render.raster.index(x, y);
        let t = render.raster.triangle[i];
        if t == NO_TRIANGLE {
            continue;
        }
        corr.pixels.push((x, y));
        corr.triangles.push(t);
        corr.bary.push(render.raster.bary[i]);
    }
    Ok((corr, render))
}

/// Gradient of the face energy in raw parameter units.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceGradient {
    pub coeffs: FaceCoefficients,
    pub gamma: [f64; 9],
    /// With respect to the stored quaternion, including normalization.
    pub quaternion: [f64; 4],
    pub translation: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct FaceEnergy {
    pub value: f64,
    pub photometric: f64,
    pub landmark: f64,
    pub regularization: f64,
    /// Pixels contributing to the photometric term.
    pub photometric_pixels: usize,
    pub grad: FaceGradient,
}

/// `w_photo·l_photo + w_lmk·l_lmk + regularization` under frozen
/// correspondences.
///
/// Each frozen pixel contributes the surface point `Σ b_k X_k` of its
/// triangle. Its projection samples the observed image bilinearly and its
/// colour is the barycentric blend of the shaded vertex colours. With fresh
/// correspondences every projection lands on its own pixel centre, so the
/// photometric value equals the ℓ2 residual mean against the rendering.
pub fn face_energy(
    model: &MorphableModel,
    params: &FaceParams,
    inputs: &FaceInputs<'_>,
    corr: &Correspondences,
    weights: &LossWeights,
) -> Result<FaceEnergy> {
    params.coeffs.check(model)?;
    if corr.normals.len() != model.n_vertices {
        return Err(Error::Dimension { what: "frozen normals", expected: model.n_vertices, got: corr.normals.len() });
    }
    let n = model.n_vertices;
    let shape = model.evaluate_shape(&params.coeffs.alpha, &params.coeffs.beta)?;
    let r = params.pose.rotation();
    let t = params.pose.translation;
    let cam = inputs.camera;

    let mut grad_x = vec![Vector3::zeros(); n];
    let mut grad_r = Matrix3::zeros();
    let mut grad_t = Vector3::zeros();
    let mut grad_gamma = [0.0; 9];
    let mut grad_albedo = vec![[0.0; 3]; n];

    // Photometric term.
    let mut photometric = 0.0;
    let mut used = 0usize;
    if weights.w_photo > 0.0 {
        let albedo = model.evaluate_texture(&params.coeffs.delta)?;
        let rotated: Vec<Vector3<f64>> = corr.normals.iter().map(|nk| r * nk).collect();
        let basis: Vec<[f64; 9]> = rotated.iter().map(sh_basis_or_zero).collect();
        let irradiance: Vec<f64> =
            basis.iter().map(|y| y.iter().zip(&params.lighting.gamma).map(|(a, b)| a * b).sum()).collect();

        struct PixelTerm {
            tri: [usize; 3],
            b: [f64; 3],
            xbar: Vector3<f64>,
            p: Vector3<f64>,
            residual: [f64; 3],
            dsample: [[f64; 3]; 2],
        }
        let mut terms = Vec::with_capacity(corr.pixels.len());
        for (k, &tri_id) in corr.triangles.iter().enumerate() {
            let tri = model.triangles[tri_id as usize].map(|v| v as usize);
            let b = corr.bary[k];
            let xbar = shape[tri[0]] * b[0] + shape[tri[1]] * b[1] + shape[tri[2]] * b[2];
            let p = r * xbar + t;
            let Some(proj) = cam.project(&p) else { continue };
            let Some(s) = inputs.image.sample_cubic(proj.u - 0.5, proj.v - 0.5) else { continue };
            let mut color = [0.0; 3];
            for (j, &v) in tri.iter().enumerate() {
                for c in 0..3 {
                    color[c] += b[j] * (albedo[v][c] * irradiance[v]).clamp(0.0, 1.0);
                }
            }
            let residual: [f64; 3] = std::array::from_fn(|c| color[c] - s.value[c]);
            terms.push(PixelTerm { tri, b, xbar, p, residual, dsample: [s.dx, s.dy] });
        }
        used = terms.len();
        if used == 0 {
            return Err(Error::EmptyRegion("no face pixel projects inside the image"));
        }
        let scale = weights.w_photo / used as f64;
        let mut grad_irr = vec![0.0; n];
        for pt in &terms {
            let norm = pt.residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            photometric += norm;
            if norm == 0.0 {
                continue;
            }
            let g: [f64; 3] = pt.residual.map(|v| scale * v / norm);
            // Shading path.
            for (j, &v) in pt.tri.iter().enumerate() {
                for c in 0..3 {
                    let shaded = albedo[v][c] * irradiance[v];
                    if shaded > 0.0 && shaded < 1.0 {
                        grad_albedo[v][c] += g[c] * pt.b[j] * irradiance[v];
                        grad_irr[v] += g[c] * pt.b[j] * albedo[v][c];
                    }
                }
            }
            // Sampling path: the observation moves with the projected point.
            let gu = -(0..3).map(|c| g[c] * pt.dsample[0][c]).sum::<f64>();
            let gv = -(0..3).map(|c| g[c] * pt.dsample[1][c]).sum::<f64>();
            let jac = cam.projection_jacobian(&pt.p);
            let gp = Vector3::new(
                jac[0][0] * gu + jac[1][0] * gv,
                jac[0][1] * gu + jac[1][1] * gv,
                jac[0][2] * gu + jac[1][2] * gv,
            );
            grad_t += gp;
            grad_r += gp * pt.xbar.transpose();
            let gx = r.transpose() * gp;
            for (j, &v) in pt.tri.iter().enumerate() {
                grad_x[v] += gx * pt.b[j];
            }
        }
        photometric /= used as f64;
        for v in 0..n {
            if grad_irr[v] == 0.0 {
                continue;
            }
            for m in 0..9 {
                grad_gamma[m] += grad_irr[v] * basis[v][m];
            }
            let gn = params.lighting.irradiance_normal_gradient(&rotated[v]) * grad_irr[v];
            grad_r += gn * corr.normals[v].transpose();
        }
    }

    // Landmark term.
    let mut landmark = 0.0;
    if weights.w_lmk > 0.0 {
        let set = inputs.landmarks;
        if set.landmarks.is_empty() {
            return Err(Error::EmptyRegion("landmark set"));
        }
        let count = set.landmarks.len() as f64;
        for l in &set.landmarks {
            let v = l.vertex as usize;
            if v >= n {
                return Err(Error::InvalidParameter(format!("landmark vertex {v} out of range")));
            }
            let p = r * shape[v] + t;
            let Some(proj) = cam.project(&p) else {
                return Err(Error::Degenerate("landmark vertex behind the camera"));
            };
            let d = [proj.u - l.pixel[0], proj.v - l.pixel[1]];
            landmark += l.weight * (d[0] * d[0] + d[1] * d[1]) / count;
            let (gu, gv) = (weights.w_lmk * 2.0 * l.weight * d[0] / count, weights.w_lmk * 2.0 * l.weight * d[1] / count);
            let jac = cam.projection_jacobian(&p);
            let gp = Vector3::new(
                jac[0][0] * gu + jac[1][0] * gv,
                jac[0][1] * gu + jac[1][1] * gv,
                jac[0][2] * gu + jac[1][2] * gv,
            );
            grad_t += gp;
            grad_r += gp * shape[v].transpose();
            grad_x[v] += r.transpose() * gp;
        }
    }

    let (regularization, reg_grad) = coef_regularization(&params.coeffs, model, weights)?;

    let flat_x: Vec<f64> = grad_x.iter().flat_map(|g| [g.x, g.y, g.z]).collect();
    let flat_a: Vec<f64> = grad_albedo.iter().flatten().copied().collect();
    let add = |a: Vec<f64>, b: &[f64]| -> Vec<f64> { a.into_iter().zip(b).map(|(x, y)| x + y).collect() };
    let coeffs = FaceCoefficients {
        alpha: add(model.basis_id.transpose_mul(&flat_x), &reg_grad.alpha),
        beta: add(model.basis_exp.transpose_mul(&flat_x), &reg_grad.beta),
        delta: add(model.basis_tex.transpose_mul(&flat_a), &reg_grad.delta),
    };
    let value = weights.w_photo * photometric + weights.w_lmk * landmark + regularization;
    if !value.is_finite() {
        return Err(Error::NonFinite { iteration: 0, detail: "face energy".into() });
    }
    Ok(FaceEnergy {
        value,
        photometric,
        landmark,
        regularization,
        photometric_pixels: used,
        grad: FaceGradient {
            coeffs,
            gamma: grad_gamma,
            quaternion: quat_gradient_from_rotation(params.pose.quaternion(), &grad_r),
            translation: grad_t,
        },
    })
}

/// Degenerate vertices carry a zero normal and get no directional light.
fn sh_basis_or_zero(n: &Vector3<f64>) -> [f64; 9] {
    if n.norm_squared() == 0.0 {
        let mut y = [0.0; 9];
        y[0] = sh_basis(&Vector3::z()).expect("unit")[0];
        return y;
    }
    sh_basis(&n.normalize()).expect("normalized")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{photometric_loss, Landmark};
    use crate::model::synthesize_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        model: MorphableModel,
        truth: FaceParams,
        image: Image,
        landmarks: LandmarkSet,
        mask: Mask,
        camera: Camera,
    }

    fn setup() -> Setup {
        let model = synthesize_model(4, 3, 6, 4, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut coeffs = FaceCoefficients::zeros(&model);
        for (c, s) in coeffs.alpha.iter_mut().zip(model.scales_id()) {
            *c = 0.5 * *s as f64 * rng.random_range(-1.0..1.0);
        }
        for (c, s) in coeffs.delta.iter_mut().zip(model.scales_tex()) {
            *c = 0.5 * *s as f64 * rng.random_range(-1.0..1.0);
        }
        let mut lighting = ShLighting::unit_ambient();
        lighting.gamma[0] *= 0.8;
        lighting.gamma[2] = -0.3;
        lighting.gamma[3] = 0.15;
        let truth = FaceParams { coeffs, lighting, pose: Pose::from_euler_deg(8.0, -4.0, 2.0, Vector3::new(4.0, -3.0, 1000.0)) };
        let camera = Camera::default_for(64, 64);
        let r = render_face(&model, &truth.coeffs, &truth.pose, &truth.lighting, &camera).unwrap();
        let image = r.image.clone();
        let shape = model.evaluate_shape(&truth.coeffs.alpha, &truth.coeffs.beta).unwrap();
        let landmarks = LandmarkSet {
            landmarks: model
                .landmark_indices
                .iter()
                .map(|&v| {
                    let p = camera.project(&truth.pose.apply(&shape[v as usize])).unwrap();
                    Landmark { vertex: v, pixel: [p.u + 0.7, p.v - 0.4], weight: 1.0 }
                })
                .collect(),
        };
        Setup { model, truth, image, landmarks, mask: r.mask.clone(), camera }
    }

    fn inputs(s: &Setup) -> FaceInputs<'_> {
        FaceInputs { image: &s.image, landmarks: &s.landmarks, face_mask: &s.mask, camera: &s.camera }
    }

    #[test]
    fn fresh_correspondences_match_render_form() {
        let s = setup();
        let mut est = s.truth.clone();
        est.pose = Pose::from_euler_deg(10.0, -3.0, 2.0, Vector3::new(6.0, -2.0, 1010.0));
        let (corr, render) = freeze_correspondences(&s.model, &est, &s.mask, &s.camera).unwrap();
        let w = LossWeights { w_photo: 1.0, ..LossWeights::zero() };
        let e = face_energy(&s.model, &est, &inputs(&s), &corr, &w).unwrap();
        let region = render.mask.and(&s.mask);
        let (v, _) = photometric_loss(&s.image, &render.image, &region).unwrap();
        assert!((e.photometric - v).abs() < 1e-5, "{} vs {v}", e.photometric);
    }

    #[test]
    fn truth_is_a_fixed_point_of_the_photometric_term() {
        let s = setup();
        let (corr, _) = freeze_correspondences(&s.model, &s.truth, &s.mask, &s.camera).unwrap();
        let w = LossWeights { w_photo: 1.0, ..LossWeights::zero() };
        let e = face_energy(&s.model, &s.truth, &inputs(&s), &corr, &w).unwrap();
        assert!(e.photometric < 1e-6, "{}", e.photometric);
    }

    /// Flattened parameter vector for finite differences.
    fn flatten(p: &FaceParams) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&p.coeffs.alpha);
        v.extend(&p.coeffs.beta);
        v.extend(&p.coeffs.delta);
        v.extend(p.lighting.gamma);
        v.extend(p.pose.quaternion());
        v.extend(p.pose.translation.iter());
        v
    }

    fn unflatten(model: &MorphableModel, v: &[f64]) -> FaceParams {
        let (ki, ke, kt) = (model.k_id(), model.k_exp(), model.k_tex());
        let mut o = 0;
        let mut take = |n: usize| {
            let s = v[o..o + n].to_vec();
            o += n;
            s
        };
        let alpha = take(ki);
        let beta = take(ke);
        let delta = take(kt);
        let gamma: [f64; 9] = take(9).try_into().unwrap();
        let q: [f64; 4] = take(4).try_into().unwrap();
        let t = take(3);
        FaceParams {
            coeffs: FaceCoefficients { alpha, beta, delta },
            lighting: ShLighting { gamma },
            pose: Pose::new(q, Vector3::new(t[0], t[1], t[2])),
        }
    }

    fn flatten_grad(g: &FaceGradient) -> Vec<f64> {
        let mut v = Vec::new();
        v.extend(&g.coeffs.alpha);
        v.extend(&g.coeffs.beta);
        v.extend(&g.coeffs.delta);
        v.extend(g.gamma);
        v.extend(g.quaternion);
        v.extend(g.translation.iter());
        v
    }

    #[test]
    fn face_energy_gradient_by_finite_differences() {
        let s = setup();
        let mut est = s.truth.clone();
        est.pose = Pose::from_euler_deg(9.0, -3.0, 2.5, Vector3::new(5.0, -2.0, 1005.0));
        est.coeffs.beta[1] = 0.3 * s.model.scales_exp()[1] as f64;
        est.lighting.gamma[1] = 0.05;
        let (corr, _) = freeze_correspondences(&s.model, &est, &s.mask, &s.camera).unwrap();
        // Fresh correspondences sample exactly on texel-grid lines; move off them.
        est.pose.translation += Vector3::new(0.37, -0.23, 0.0);
        let weights = LossWeights { w_lmk: 0.01, ..LossWeights::default() };
        let e = face_energy(&s.model, &est, &inputs(&s), &corr, &weights).unwrap();
        let analytic = flatten_grad(&e.grad);
        let x = flatten(&est);
        let (mut ok, mut total) = (0, 0);
        let nq = x.len() - 7;
        for i in 0..x.len() {
            let step = if i >= nq && i < nq + 4 { 1e-6 } else { 1e-4 };
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += step;
            xm[i] -= step;
            let fp = face_energy(&s.model, &unflatten(&s.model, &xp), &inputs(&s), &corr, &weights).unwrap().value;
            let fm = face_energy(&s.model, &unflatten(&s.model, &xm), &inputs(&s), &corr, &weights).unwrap().value;
            let fd = (fp - fm) / (2.0 * step);
            total += 1;
            let a = analytic[i];
            if (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()) || (fd - a).abs() < 1e-10 {
                ok += 1;
            } else {
                eprintln!("coordinate {i}: fd {fd} analytic {a}");
            }
        }
        assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
    }
}
