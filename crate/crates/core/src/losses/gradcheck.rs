//! Finite-difference audit of every analytic gradient in this module.

use std::fmt;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::{relative_pose, Camera, DepthMap, Pose};
use crate::image::{Image, Mask};
use crate::model::{FaceCoefficients, MorphableModel};
use crate::render::{render_face, ShLighting};
use crate::scene::{synth_scene, SceneSpec};

use super::{
    coef_regularization, color_constancy_loss, depth_energy, face_depth_loss, face_energy, freeze_correspondences,
    gradient_loss, landmark_loss, layer_order_loss, photometric_loss, smoothness_loss, FaceGradient, FaceInputs,
    FaceParams, Landmark, LandmarkSet, LossWeights, PairInputs,
};

pub const RELATIVE_TOLERANCE: f64 = 1e-3;
pub const PASS_FRACTION: f64 = 0.95;
/// Step for depth coordinates, in mm.
pub const DEPTH_STEP: f64 = 1e-3;
/// Step for coefficients, pose, lighting and image values.
pub const PARAM_STEP: f64 = 1e-4;
/// Both sides below this count as agreeing zeros.
const ZERO_FLOOR: f64 = 1e-10;
/// Landings closer than this to the image border are boundary cases.
const BORDER: f64 = 1.0;

/// Outcome for one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: &'static str,
    pub checked: usize,
    pub passed: usize,
    /// Coordinates skipped for sitting on a texel-grid line or a boundary.
    pub excluded: usize,
    pub worst_relative_error: f64,
}

impl GradcheckReport {
    pub fn fraction(&self) -> f64 {
        if self.checked == 0 {
            0.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn ok(&self) -> bool {
        self.checked > 0 && self.fraction() >= PASS_FRACTION
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<20} {} {}/{} ({:.1}%) excluded {} worst {:.2e}",
            self.loss,
            if self.ok() { "ok  " } else { "FAIL" },
            self.passed,
            self.checked,
            100.0 * self.fraction(),
            self.excluded,
            self.worst_relative_error
        )
    }
}

pub fn gradients_agree(fd: f64, analytic: f64) -> bool {
    let scale = fd.abs().max(analytic.abs());
    scale < ZERO_FLOOR || (fd - analytic).abs() <= RELATIVE_TOLERANCE * scale
}

struct Tally {
    report: GradcheckReport,
}

impl Tally {
    fn new(loss: &'static str) -> Self {
        Self { report: GradcheckReport { loss, checked: 0, passed: 0, excluded: 0, worst_relative_error: 0.0 } }
    }

    fn exclude(&mut self) {
        self.report.excluded += 1;
    }

    fn record(&mut self, fd: f64, analytic: f64) {
        self.report.checked += 1;
        if gradients_agree(fd, analytic) {
            self.report.passed += 1;
        } else {
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
            self.report.worst_relative_error = self.report.worst_relative_error.max(rel);
        }
    }
}

fn central(f: impl Fn(f64) -> Result<f64>, step: f64) -> Result<f64> {
    Ok((f(step)? - f(-step)?) / (2.0 * step))
}

/// Runs the audit on a seeded synthetic scene rendered at `size²`.
pub fn run_gradcheck(size: usize, seed: u64) -> Result<Vec<GradcheckReport>> {
    let mut spec = SceneSpec::with_yaw(seed, 10.0);
    spec.camera = Camera::default_for(size, size);
    let scene = synth_scene(&spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let model = &scene.model;
    let view = &scene.views[0];
    let camera = &scene.spec.camera;

    let mut est = scene.truth(0);
    perturb_coeffs(&mut est.coeffs, model, &mut rng);
    est.pose = Pose::from_euler_deg(2.0, -1.5, 1.0, Vector3::zeros()).compose(&est.pose);
    est.pose.translation += Vector3::new(3.0, -2.0, 8.0);
    est.lighting.gamma[1] += 0.05;

    let mut reports = Vec::new();
    reports.push(check_photometric(&view.image, model, &est, &view.masks.s_f, camera, &mut rng)?);
    reports.push(check_landmark(&view.landmarks, &mut rng)?);
    reports.push(check_regularization(model, &est.coeffs)?);
    let inputs = FaceInputs { image: &view.image, landmarks: &view.landmarks, face_mask: &view.masks.s_f, camera };
    reports.push(check_face_energy(model, &est, &inputs)?);

    let pair = scene.pair_inputs()?;
    let noisy = |i: usize, rng: &mut ChaCha8Rng| {
        let v = &scene.views[i];
        DepthMap::from_fn(size, size, |x, y| if v.masks.s.get(x, y) { v.depth.get(x, y) + rng.random_range(-15.0..15.0) } else { f64::NAN })
    };
    let d = [noisy(0, &mut rng), noisy(1, &mut rng)];
    reports.push(check_cross_view("color_constancy", &pair, &d, color_constancy_loss)?);
    reports.push(check_cross_view("gradient", &pair, &d, gradient_loss)?);
    reports.push(check_single("smoothness", &d[0], &view.masks.s, |d| smoothness_loss(d, &view.masks.s).map(|t| (t.value, t.grad)))?);
    let face_region = view.masks.face_target().and(&view.masks.s);
    reports.push(check_single("face_depth", &d[0], &face_region, |d| {
        face_depth_loss(d, &view.face_depth, &view.masks).map(|t| (t.value, t.grad))
    })?);
    let layered = DepthMap::from_fn(size, size, |x, y| {
        if view.masks.s.get(x, y) {
            let base = if view.face_depth.is_defined(x, y) { view.face_depth.get(x, y) } else { view.depth.get(x, y) };
            base + rng.random_range(-10.0..10.0)
        } else {
            f64::NAN
        }
    });
    reports.push(check_single("layer_order", &layered, &view.masks.hair_over_face(), |d| {
        layer_order_loss(d, &view.face_depth, &view.masks).map(|t| (t.value, t.grad))
    })?);
    reports.push(check_depth_energy(&pair, &d)?);
    Ok(reports)
}

fn perturb_coeffs(c: &mut FaceCoefficients, model: &MorphableModel, rng: &mut ChaCha8Rng) {
    for (v, s) in c.alpha.iter_mut().zip(model.scales_id()) {
        *v += 0.1 * *s as f64 * rng.random_range(-1.0..1.0);
    }
    for (v, s) in c.beta.iter_mut().zip(model.scales_exp()) {
        *v += 0.1 * *s as f64 * rng.random_range(-1.0..1.0);
    }
    for (v, s) in c.delta.iter_mut().zip(model.scales_tex()) {
        *v += 0.1 * *s as f64 * rng.random_range(-1.0..1.0);
    }
}

fn check_photometric(
    observed: &Image,
    model: &MorphableModel,
    est: &FaceParams,
    face_mask: &Mask,
    camera: &Camera,
    rng: &mut ChaCha8Rng,
) -> Result<GradcheckReport> {
    let render = render_face(model, &est.coeffs, &est.pose, &est.lighting, camera)?;
    let region = render.mask.and(face_mask);
    let rendered = render.image;
    let (_, grad) = photometric_loss(observed, &rendered, &region)?;
    let w = rendered.width();
    let mut tally = Tally::new("photometric");
    let mut probe = rendered.clone();
    for (x, y) in region.iter_set() {
        let c = rng.random_range(0..3);
        let base = rendered.get(x, y);
        let mut at = |delta: f64| -> Result<(f64, f64)> {
            let mut v = base;
            v[c] = (base[c] as f64 + delta) as f32;
            probe.set(x, y, v);
            let value = photometric_loss(observed, &probe, &region)?.0;
            probe.set(x, y, base);
            Ok((value, v[c] as f64 - base[c] as f64))
        };
        // Steps are taken in f32, so divide by the realised step.
        let (fp, hp) = at(PARAM_STEP)?;
        let (fm, hm) = at(-PARAM_STEP)?;
        tally.record((fp - fm) / (hp - hm), grad[y * w + x][c]);
    }
    Ok(tally.report)
}

fn check_landmark(set: &LandmarkSet, rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let weighted = LandmarkSet {
        landmarks: set.landmarks.iter().map(|l| Landmark { weight: rng.random_range(0.5..2.0), ..*l }).collect(),
    };
    let projected: Vec<[f64; 2]> =
        weighted.landmarks.iter().map(|l| [l.pixel[0] + rng.random_range(-3.0..3.0), l.pixel[1] + rng.random_range(-3.0..3.0)]).collect();
    let (_, grad) = landmark_loss(&projected, &weighted)?;
    let mut tally = Tally::new("landmark");
    for i in 0..projected.len() {
        for a in 0..2 {
            let fd = central(
                |h| {
                    let mut p = projected.clone();
                    p[i][a] += h;
                    Ok(landmark_loss(&p, &weighted)?.0)
                },
                PARAM_STEP,
            )?;
            tally.record(fd, grad[i][a]);
        }
    }
    Ok(tally.report)
}

fn flatten_coeffs(c: &FaceCoefficients) -> Vec<f64> {
    c.alpha.iter().chain(&c.beta).chain(&c.delta).copied().collect()
}

fn unflatten_coeffs(model: &MorphableModel, v: &[f64]) -> FaceCoefficients {
    let (ki, ke) = (model.k_id(), model.k_exp());
    FaceCoefficients { alpha: v[..ki].to_vec(), beta: v[ki..ki + ke].to_vec(), delta: v[ki + ke..].to_vec() }
}

fn check_regularization(model: &MorphableModel, coeffs: &FaceCoefficients) -> Result<GradcheckReport> {
    let weights = LossWeights::default();
    let (_, grad) = coef_regularization(coeffs, model, &weights)?;
    let analytic = flatten_coeffs(&grad);
    let x = flatten_coeffs(coeffs);
    let mut tally = Tally::new("coef_regularization");
    for i in 0..x.len() {
        let fd = central(
            |h| {
                let mut p = x.clone();
                p[i] += h;
                Ok(coef_regularization(&unflatten_coeffs(model, &p), model, &weights)?.0)
            },
            PARAM_STEP,
        )?;
        tally.record(fd, analytic[i]);
    }
    Ok(tally.report)
}

fn flatten_params(p: &FaceParams) -> Vec<f64> {
    let mut v = flatten_coeffs(&p.coeffs);
    v.extend(p.lighting.gamma);
    v.extend(p.pose.quaternion());
    v.extend(p.pose.translation.iter());
    v
}

fn unflatten_params(model: &MorphableModel, v: &[f64]) -> FaceParams {
    let n = v.len() - 16;
    let gamma: [f64; 9] = v[n..n + 9].try_into().expect("nine lighting coefficients");
    let q: [f64; 4] = v[n + 9..n + 13].try_into().expect("four quaternion components");
    FaceParams {
        coeffs: unflatten_coeffs(model, &v[..n]),
        lighting: ShLighting { gamma },
        pose: Pose::new(q, Vector3::new(v[n + 13], v[n + 14], v[n + 15])),
    }
}

fn flatten_gradient(g: &FaceGradient) -> Vec<f64> {
    let mut v = flatten_coeffs(&g.coeffs);
    v.extend(g.gamma);
    v.extend(g.quaternion);
    v.extend(g.translation.iter());
    v
}

fn check_face_energy(model: &MorphableModel, est: &FaceParams, inputs: &FaceInputs) -> Result<GradcheckReport> {
    let (corr, _) = freeze_correspondences(model, est, inputs.face_mask, inputs.camera)?;
    // Fresh correspondences sample exactly on texel-grid lines; move off them.
    let mut at = est.clone();
    at.pose.translation += Vector3::new(0.37, -0.23, 0.0);
    let weights = LossWeights { w_lmk: 0.01, ..LossWeights::default() };
    let analytic = flatten_gradient(&face_energy(model, &at, inputs, &corr, &weights)?.grad);
    let x = flatten_params(&at);
    let mut tally = Tally::new("face_energy");
    for i in 0..x.len() {
        let fd = central(
            |h| {
                let mut p = x.clone();
                p[i] += h;
                Ok(face_energy(model, &unflatten_params(model, &p), inputs, &corr, &weights)?.value)
            },
            PARAM_STEP,
        )?;
        tally.record(fd, analytic[i]);
    }
    Ok(tally.report)
}

/// Where pixel `(x, y)` of view `src` at depth `d` samples view `1 − src`.
fn landing(inputs: &PairInputs, src: usize, x: usize, y: usize, d: f64) -> Option<(f64, f64)> {
    let rel = relative_pose(&inputs.views[src].pose, &inputs.views[1 - src].pose);
    let p = inputs.camera.project(&rel.apply(&inputs.camera.backproject_pixel(x, y, d)))?;
    Some((p.u - 0.5, p.v - 0.5))
}

/// A step that moves the landing across a texel-grid line or near the
/// border makes the bilinear sample non-differentiable there.
fn on_kink(inputs: &PairInputs, src: usize, x: usize, y: usize, d: f64, step: f64) -> bool {
    let (w, h) = (inputs.camera.width as f64, inputs.camera.height as f64);
    let (Some(a), Some(b)) = (landing(inputs, src, x, y, d - step), landing(inputs, src, x, y, d + step)) else {
        return true;
    };
    let inside = |p: (f64, f64)| p.0 >= BORDER && p.1 >= BORDER && p.0 <= w - 1.0 - BORDER && p.1 <= h - 1.0 - BORDER;
    a.0.floor() != b.0.floor() || a.1.floor() != b.1.floor() || !inside(a) || !inside(b)
}

type PairLoss = fn(&PairInputs, &DepthMap, &DepthMap) -> Result<(f64, [Vec<f64>; 2])>;

fn check_cross_view(name: &'static str, inputs: &PairInputs, d: &[DepthMap; 2], loss: PairLoss) -> Result<GradcheckReport> {
    let (_, grads) = loss(inputs, &d[0], &d[1])?;
    let mut tally = Tally::new(name);
    let w = inputs.camera.width;
    for which in 0..2 {
        for (x, y) in inputs.views[which].masks.h.iter_set() {
            let i = y * w + x;
            if on_kink(inputs, which, x, y, d[which].values()[i], DEPTH_STEP) {
                tally.exclude();
                continue;
            }
            let fd = central(
                |h| {
                    let mut p = d.clone();
                    p[which].values_mut()[i] += h;
                    Ok(loss(inputs, &p[0], &p[1])?.0)
                },
                DEPTH_STEP,
            )?;
            tally.record(fd, grads[which][i]);
        }
    }
    Ok(tally.report)
}

fn check_single(
    name: &'static str,
    d: &DepthMap,
    region: &Mask,
    loss: impl Fn(&DepthMap) -> Result<(f64, Vec<f64>)>,
) -> Result<GradcheckReport> {
    let (_, grad) = loss(d)?;
    let mut tally = Tally::new(name);
    let w = d.width();
    for (x, y) in region.iter_set() {
        let i = y * w + x;
        let fd = central(
            |h| {
                let mut p = d.clone();
                p.values_mut()[i] += h;
                Ok(loss(&p)?.0)
            },
            DEPTH_STEP,
        )?;
        tally.record(fd, grad[i]);
    }
    Ok(tally.report)
}

fn check_depth_energy(inputs: &PairInputs, d: &[DepthMap; 2]) -> Result<GradcheckReport> {
    let weights = LossWeights::default();
    let e = depth_energy(&d[0], &d[1], inputs, &weights)?;
    let mut tally = Tally::new("depth_energy");
    let w = inputs.camera.width;
    for which in 0..2 {
        let masks = &inputs.views[which].masks;
        for (x, y) in masks.s.iter_set() {
            let i = y * w + x;
            if masks.h.get(x, y) && on_kink(inputs, which, x, y, d[which].values()[i], DEPTH_STEP) {
                tally.exclude();
                continue;
            }
            let fd = central(
                |h| {
                    let mut p = d.clone();
                    p[which].values_mut()[i] += h;
                    Ok(depth_energy(&p[0], &p[1], inputs, &weights)?.value)
                },
                DEPTH_STEP,
            )?;
            tally.record(fd, e.grads[which][i]);
        }
    }
    Ok(tally.report)
}
