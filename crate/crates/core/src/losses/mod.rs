//! Objective terms with analytic gradients and the weighted stage energies.
//!
//! Every region integral is a mean over the pixels of its region.

mod depth;
mod face;
pub mod gradcheck;

pub use depth::{
    color_constancy_loss, depth_energy, depth_energy_single, face_depth_loss, gradient_loss, layer_order_loss,
    smoothness_loss, DepthEnergy, DepthTerm, DepthTerms, DepthView, PairInputs,
};
pub use face::{face_energy, freeze_correspondences, Correspondences, FaceEnergy, FaceGradient, FaceInputs, FaceParams};

use std::path::Path;

use crate::config;
use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::model::{FaceCoefficients, MorphableModel};

/// Non-negative weights for every energy term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_photo: f64,
    pub w_lmk: f64,
    pub w_reg_id: f64,
    pub w_reg_exp: f64,
    pub w_reg_tex: f64,
    pub w_color: f64,
    pub w_grad: f64,
    pub w_smooth: f64,
    pub w_face: f64,
    pub w_layer: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_photo: 1.9,
            w_lmk: 1.6e-3,
            w_reg_id: 3e-4,
            w_reg_exp: 8e-4,
            w_reg_tex: 1.7e-5,
            w_color: 1.0,
            w_grad: 1.0,
            w_smooth: 0.05,
            w_face: 1.0,
            w_layer: 1.0,
        }
    }
}

impl LossWeights {
    pub const KEYS: [&'static str; 10] =
        ["w_photo", "w_lmk", "w_reg_id", "w_reg_exp", "w_reg_tex", "w_color", "w_grad", "w_smooth", "w_face", "w_layer"];

    pub fn zero() -> Self {
        Self {
            w_photo: 0.0,
            w_lmk: 0.0,
            w_reg_id: 0.0,
            w_reg_exp: 0.0,
            w_reg_tex: 0.0,
            w_color: 0.0,
            w_grad: 0.0,
            w_smooth: 0.0,
            w_face: 0.0,
            w_layer: 0.0,
        }
    }

    fn slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "w_photo" => &mut self.w_photo,
            "w_lmk" => &mut self.w_lmk,
            "w_reg_id" => &mut self.w_reg_id,
            "w_reg_exp" => &mut self.w_reg_exp,
            "w_reg_tex" => &mut self.w_reg_tex,
            "w_color" => &mut self.w_color,
            "w_grad" => &mut self.w_grad,
            "w_smooth" => &mut self.w_smooth,
            "w_face" => &mut self.w_face,
            "w_layer" => &mut self.w_layer,
            _ => return None,
        })
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        let mut copy = *self;
        copy.slot(key).map(|v| *v)
    }

    /// Sets one weight by name. Returns `Ok(false)` for keys that are not weights.
    pub fn set(&mut self, key: &str, value: f64) -> Result<bool> {
        let Some(slot) = self.slot(key) else { return Ok(false) };
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!("{key} must be finite and non-negative, got {value}")));
        }
        *slot = value;
        Ok(true)
    }

    pub fn validate(&self) -> Result<()> {
        for k in Self::KEYS {
            let v = self.get(k).expect("known key");
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{k} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Parses a configuration holding only weight keys.
    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut w = Self::default();
        for e in config::parse(text)? {
            if !w.set(&e.key, e.f64()?).map_err(|err| Error::Config { line: e.line, message: err.to_string() })? {
                return Err(e.unknown());
            }
        }
        Ok(w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let entries: Vec<(&str, String)> =
            Self::KEYS.iter().map(|k| (*k, format!("{:?}", self.get(k).expect("known key")))).collect();
        config::render(&entries)
    }
}

/// One observed 2D landmark bound to a model vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub vertex: u32,
    /// Observed position in continuous pixel coordinates.
    pub pixel: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkSet {
    pub landmarks: Vec<Landmark>,
}

impl LandmarkSet {
    pub fn validate(&self, model: &MorphableModel) -> Result<()> {
        for l in &self.landmarks {
            if l.vertex as usize >= model.n_vertices {
                return Err(Error::InvalidParameter(format!("landmark vertex {} out of range", l.vertex)));
            }
            if !(l.weight >= 0.0 && l.weight.is_finite()) || !l.pixel.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidParameter(format!("landmark on vertex {} is not finite", l.vertex)));
            }
        }
        Ok(())
    }

    /// Text format: one `vertex x y weight` line per landmark.
    pub fn to_text(&self) -> String {
        self.landmarks.iter().map(|l| format!("{} {:?} {:?} {:?}\n", l.vertex, l.pixel[0], l.pixel[1], l.weight)).collect()
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut landmarks = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(format!("line {}: expected `vertex x y weight`", i + 1));
            }
            let bad = |_| format!("line {}: bad number", i + 1);
            landmarks.push(Landmark {
                vertex: f[0].parse().map_err(|_| format!("line {}: bad vertex index", i + 1))?,
                pixel: [f[1].parse().map_err(bad)?, f[2].parse().map_err(bad)?],
                weight: f[3].parse().map_err(bad)?,
            });
        }
        Ok(Self { landmarks })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?).map_err(|message| Error::Parse { path: path.into(), message })
    }
}

/// Mean over `region` of the per-pixel ℓ2 norm of the rgb residual
/// `I′ − I`, with its gradient with respect to `I′`.
pub fn photometric_loss(observed: &Image, rendered: &Image, region: &Mask) -> Result<(f64, Vec<[f64; 3]>)> {
    let dims = (observed.width(), observed.height());
    if (rendered.width(), rendered.height()) != dims || (region.width(), region.height()) != dims {
        return Err(Error::Dimension { what: "photometric images", expected: dims.0 * dims.1, got: rendered.width() * rendered.height() });
    }
    let n = region.count();
    if n == 0 {
        return Err(Error::EmptyRegion("photometric region"));
    }
    let mut grad = vec![[0.0; 3]; dims.0 * dims.1];
    let mut total = 0.0;
    for (x, y) in region.iter_set() {
        let (a, b) = (observed.get(x, y), rendered.get(x, y));
        let r: [f64; 3] = std::array::from_fn(|c| b[c] as f64 - a[c] as f64);
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        total += norm;
        if norm > 0.0 {
            grad[y * dims.0 + x] = r.map(|v| v / norm / n as f64);
        }
    }
    Ok((total / n as f64, grad))
}

/// Weighted mean squared 2D distance between projections and observations,
/// with its gradient with respect to the projections.
pub fn landmark_loss(projected: &[[f64; 2]], set: &LandmarkSet) -> Result<(f64, Vec<[f64; 2]>)> {
    if set.landmarks.is_empty() {
        return Err(Error::EmptyRegion("landmark set"));
    }
    if projected.len() != set.landmarks.len() {
        return Err(Error::Dimension { what: "landmark projections", expected: set.landmarks.len(), got: projected.len() });
    }
    let n = projected.len() as f64;
    let mut total = 0.0;
    let grad = projected
        .iter()
        .zip(&set.landmarks)
        .map(|(p, l)| {
            let d = [p[0] - l.pixel[0], p[1] - l.pixel[1]];
            total += l.weight * (d[0] * d[0] + d[1] * d[1]);
            d.map(|v| 2.0 * l.weight * v / n)
        })
        .collect();
    Ok((total / n, grad))
}

/// `Σ w · ‖coeff / scale‖²` over the three coefficient groups, with its gradient.
pub fn coef_regularization(
    coeffs: &FaceCoefficients,
    model: &MorphableModel,
    weights: &LossWeights,
) -> Result<(f64, FaceCoefficients)> {
    coeffs.check(model)?;
    let mut value = 0.0;
    let mut term = |c: &[f64], s: &[f32], w: f64| -> Vec<f64> {
        c.iter()
            .zip(s)
            .map(|(&c, &s)| {
                let s = s as f64;
                value += w * (c / s) * (c / s);
                2.0 * w * c / (s * s)
            })
            .collect()
    };
    let grad = FaceCoefficients {
        alpha: term(&coeffs.alpha, model.scales_id(), weights.w_reg_id),
        beta: term(&coeffs.beta, model.scales_exp(), weights.w_reg_exp),
        delta: term(&coeffs.delta, model.scales_tex(), weights.w_reg_tex),
    };
    Ok((value, grad))
}
