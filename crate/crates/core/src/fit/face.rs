use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::losses::{face_energy, freeze_correspondences, FaceEnergy, FaceInputs, FaceParams, LossWeights};
use crate::model::MorphableModel;
use crate::render::ShLighting;

use super::{Adam, FitConfig, Progress, Trace};

/// Outcome of the face stage.
#[derive(Debug, Clone)]
pub struct FaceFitResult {
    pub params: FaceParams,
    pub energy: f64,
    pub photometric: f64,
    pub landmark: f64,
    pub regularization: f64,
    pub initial_energy: f64,
    pub iterations: usize,
    pub trace: Trace,
    /// Set when the run stopped on a non-finite energy.
    pub diagnostic: Option<String>,
}

#[derive(Clone)]
struct Snapshot {
    params: FaceParams,
    photometric: f64,
    landmark: f64,
    regularization: f64,
}

impl Snapshot {
    fn new(params: &FaceParams, e: &FaceEnergy) -> Self {
        Self { params: params.clone(), photometric: e.photometric, landmark: e.landmark, regularization: e.regularization }
    }
}

const TRANSLATION_UNIT: f64 = 1000.0;

/// Layout of the optimizer vector: coefficients over their scales, γ, the raw
/// quaternion and translation in metres.
struct Layout {
    sid: Vec<f64>,
    sexp: Vec<f64>,
    stex: Vec<f64>,
}

impl Layout {
    fn new(model: &MorphableModel) -> Self {
        let f = |s: &[f32]| s.iter().map(|&v| if v > 0.0 { v as f64 } else { 1.0 }).collect();
        Self { sid: f(model.scales_id()), sexp: f(model.scales_exp()), stex: f(model.scales_tex()) }
    }

    fn len(&self) -> usize {
        self.sid.len() + self.sexp.len() + self.stex.len() + 9 + 4 + 3
    }

    fn steps(&self, config: &FitConfig) -> Vec<f64> {
        let nc = self.sid.len() + self.sexp.len() + self.stex.len() + 9;
        let mut s = vec![config.lr_coeff; nc];
        s.extend([config.lr_pose; 7]);
        s
    }

    fn pack(&self, p: &FaceParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend(p.coeffs.alpha.iter().zip(&self.sid).map(|(a, s)| a / s));
        v.extend(p.coeffs.beta.iter().zip(&self.sexp).map(|(a, s)| a / s));
        v.extend(p.coeffs.delta.iter().zip(&self.stex).map(|(a, s)| a / s));
        v.extend(p.lighting.gamma);
        v.extend(p.pose.quaternion());
        v.extend(p.pose.translation.iter().map(|t| t / TRANSLATION_UNIT));
        v
    }

    fn unpack(&self, v: &[f64], into: &mut FaceParams) {
        let mut o = 0;
        for (c, s) in into.coeffs.alpha.iter_mut().zip(&self.sid) {
            *c = v[o] * s;
            o += 1;
        }
        for (c, s) in into.coeffs.beta.iter_mut().zip(&self.sexp) {
            *c = v[o] * s;
            o += 1;
        }
        for (c, s) in into.coeffs.delta.iter_mut().zip(&self.stex) {
            *c = v[o] * s;
            o += 1;
        }
        let mut gamma = [0.0; 9];
        gamma.copy_from_slice(&v[o..o + 9]);
        into.lighting = ShLighting { gamma };
        o += 9;
        let q = [v[o], v[o + 1], v[o + 2], v[o + 3]];
        o += 4;
        let t = Vector3::new(v[o], v[o + 1], v[o + 2]) * TRANSLATION_UNIT;
        into.pose = Pose::new(q, t);
    }

    /// Writes the renormalized quaternion back into the optimizer vector.
    fn sync_quaternion(&self, x: &mut [f64], p: &FaceParams) {
        let nq = self.len() - 7;
        x[nq..nq + 4].copy_from_slice(&p.pose.quaternion());
    }

    fn pack_grad(&self, e: &FaceEnergy) -> Vec<f64> {
        let g = &e.grad;
        let mut v = Vec::with_capacity(self.len());
        v.extend(g.coeffs.alpha.iter().zip(&self.sid).map(|(a, s)| a * s));
        v.extend(g.coeffs.beta.iter().zip(&self.sexp).map(|(a, s)| a * s));
        v.extend(g.coeffs.delta.iter().zip(&self.stex).map(|(a, s)| a * s));
        v.extend(g.gamma);
        v.extend(g.quaternion);
        v.extend(g.translation.iter().map(|t| t * TRANSLATION_UNIT));
        v
    }
}

fn describe(e: &FaceEnergy) -> String {
    format!("photometric {} landmark {} regularization {}", e.photometric, e.landmark, e.regularization)
}

fn energy_is_finite(e: &FaceEnergy) -> bool {
    e.value.is_finite() && e.photometric.is_finite() && e.landmark.is_finite() && e.regularization.is_finite()
}

/// Adam over the coordinates selected by `active`; stops early on any failure.
fn warm_up(
    layout: &Layout,
    params: &mut FaceParams,
    config: &FitConfig,
    iterations: usize,
    active: impl Fn(usize) -> bool,
    evaluate: impl Fn(&FaceParams) -> Result<FaceEnergy>,
) {
    let mut x = layout.pack(params);
    let mut adam = Adam::new(layout.steps(config));
    for it in 0..iterations {
        let e = match evaluate(params) {
            Ok(e) if energy_is_finite(&e) => e,
            _ => break,
        };
        let mut g = layout.pack_grad(&e);
        for (i, v) in g.iter_mut().enumerate() {
            if !active(i) {
                *v = 0.0;
            }
        }
        adam.step(&mut x, &g, config.decay(it, iterations));
        layout.unpack(&x, params);
        layout.sync_quaternion(&mut x, params);
    }
}

/// Minimizes the face energy from `init`. Correspondences are re-rasterized
/// and frozen at every iteration; the best iterate is returned.
pub fn fit_face(model: &MorphableModel, inputs: &FaceInputs<'_>, init: &FaceParams, config: &FitConfig) -> Result<FaceFitResult> {
    config.validate()?;
    init.coeffs.check(model)?;
    inputs.landmarks.validate(model)?;
    inputs.camera.validate()?;
    if inputs.image.width() != inputs.camera.width || inputs.image.height() != inputs.camera.height {
        return Err(Error::Dimension { what: "face image width", expected: inputs.camera.width, got: inputs.image.width() });
    }

    let layout = Layout::new(model);
    let mut params = init.clone();
    let mut progress: Progress<Snapshot> = Progress::new(config.tolerance, config.patience);
    let mut trace = Trace::new(&["photometric", "landmark", "regularization"]);
    let mut diagnostic = None;
    let mut iterations = 0;

    let evaluate = |params: &FaceParams, weights: &LossWeights| {
        freeze_correspondences(model, params, inputs.face_mask, inputs.camera)
            .and_then(|(corr, _)| face_energy(model, params, inputs, &corr, weights))
    };
    let first = evaluate(&params, &config.weights)?;
    if !energy_is_finite(&first) {
        return Err(Error::NonFinite { iteration: 0, detail: describe(&first) });
    }
    let initial_energy = first.value;
    progress.observe(first.value, &Snapshot::new(&params, &first));

    // Landmarks settle pose and shape, then appearance is fitted to the
    // image with geometry held, before all parameters move together.
    let n_shape = layout.sid.len() + layout.sexp.len();
    let n_appearance = layout.stex.len() + 9;
    if config.weights.w_lmk > 0.0 {
        let weights = LossWeights { w_photo: 0.0, ..config.weights };
        warm_up(&layout, &mut params, config, config.landmark_warmup, |i| i < n_shape || i >= n_shape + n_appearance, |p| evaluate(p, &weights));
    }
    if config.weights.w_photo > 0.0 {
        warm_up(&layout, &mut params, config, config.appearance_warmup, |i| (n_shape..n_shape + n_appearance).contains(&i), |p| {
            evaluate(p, &config.weights)
        });
    }

    let mut x = layout.pack(&params);
    let mut adam = Adam::new(layout.steps(config));
    let total = config.face_iterations;
    for it in 0..total {
        let e = match evaluate(&params, &config.weights) {
            Ok(e) if energy_is_finite(&e) => e,
            Ok(e) => {
                diagnostic = Some(Error::NonFinite { iteration: it, detail: describe(&e) }.to_string());
                break;
            }
            Err(err) => {
                diagnostic = Some(format!("stopped at iteration {it}: {err}"));
                break;
            }
        };
        iterations = it + 1;
        trace.push(it, vec![e.photometric, e.landmark, e.regularization], e.value);
        progress.observe(e.value, &Snapshot::new(&params, &e));
        if progress.converged() || it + 1 == total {
            break;
        }
        let g = layout.pack_grad(&e);
        adam.step(&mut x, &g, config.decay(it, total));
        layout.unpack(&x, &mut params);
        layout.sync_quaternion(&mut x, &params);
    }

    let (energy, best) = progress.best.expect("at least one iteration evaluated");
    Ok(FaceFitResult {
        params: best.params,
        energy,
        photometric: best.photometric,
        landmark: best.landmark,
        regularization: best.regularization,
        initial_energy,
        iterations,
        trace,
        diagnostic,
    })
}
