//! Per-instance energy minimization: the face stage, the depth stage, the
//! finite-difference oracle and reconstruction evaluation.

mod depth;
mod eval;
mod face;

pub use depth::{fit_depth_pair, fit_depth_single, init_depth, plane_init, DepthFitResult, InitReport};
pub use eval::{evaluate_mesh_reconstruction, evaluate_reconstruction, ReconstructionError};
pub use face::{fit_face, FaceFitResult};

use std::io::Write;
use std::path::Path;

use crate::config;
use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Optimizer and energy settings for both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub weights: LossWeights,
    pub face_iterations: usize,
    /// Landmark-only iterations over pose and shape, run first.
    pub landmark_warmup: usize,
    /// Photometric iterations over texture and lighting with geometry held.
    pub appearance_warmup: usize,
    pub depth_iterations: usize,
    /// Step for coefficients and lighting, in units of their scales.
    pub lr_coeff: f64,
    /// Step for quaternion components and translation in metres.
    pub lr_pose: f64,
    /// Step for depth pixels in mm.
    pub lr_depth: f64,
    /// Steps decay geometrically to this fraction of their initial value.
    pub lr_final_fraction: f64,
    /// Stop when the best energy improved by less than this relative amount
    /// over the last `patience` iterations.
    pub tolerance: f64,
    pub patience: usize,
    /// Run a half-resolution depth stage first and start from its result.
    pub coarse_to_fine: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            face_iterations: 300,
            landmark_warmup: 300,
            appearance_warmup: 400,
            depth_iterations: 400,
            lr_coeff: 1e-2,
            lr_pose: 5e-4,
            lr_depth: 0.5,
            lr_final_fraction: 0.1,
            tolerance: 1e-9,
            patience: 50,
            coarse_to_fine: true,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.face_iterations == 0 || self.depth_iterations == 0 {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be positive".into()));
        }
        for (name, v) in [("lr_coeff", self.lr_coeff), ("lr_pose", self.lr_pose), ("lr_depth", self.lr_depth)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::InvalidParameter("lr_final_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let entry = config::Entry { line: 0, key: key.into(), value: value.into() };
        self.apply(&entry)
    }

    fn apply(&mut self, e: &config::Entry) -> Result<()> {
        match e.key.as_str() {
            "face_iterations" => self.face_iterations = e.usize()?,
            "landmark_warmup" => self.landmark_warmup = e.usize()?,
            "appearance_warmup" => self.appearance_warmup = e.usize()?,
            "depth_iterations" => self.depth_iterations = e.usize()?,
            "lr_coeff" => self.lr_coeff = e.f64()?,
            "lr_pose" => self.lr_pose = e.f64()?,
            "lr_depth" => self.lr_depth = e.f64()?,
            "lr_final_fraction" => self.lr_final_fraction = e.f64()?,
            "tolerance" => self.tolerance = e.f64()?,
            "patience" => self.patience = e.usize()?,
            "coarse_to_fine" => self.coarse_to_fine = e.bool()?,
            "seed" => self.seed = e.u64()?,
            key => {
                let known = self
                    .weights
                    .set(key, e.f64()?)
                    .map_err(|err| Error::Config { line: e.line, message: err.to_string() })?;
                if !known {
                    return Err(e.unknown());
                }
            }
        }
        Ok(())
    }

    pub fn from_config_str(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for e in config::parse(text)? {
            c.apply(&e)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = self.weights.to_config_string();
        s.push_str(&config::render(&[
            ("face_iterations", self.face_iterations.to_string()),
            ("landmark_warmup", self.landmark_warmup.to_string()),
            ("appearance_warmup", self.appearance_warmup.to_string()),
            ("depth_iterations", self.depth_iterations.to_string()),
            ("lr_coeff", format!("{:?}", self.lr_coeff)),
            ("lr_pose", format!("{:?}", self.lr_pose)),
            ("lr_depth", format!("{:?}", self.lr_depth)),
            ("lr_final_fraction", format!("{:?}", self.lr_final_fraction)),
            ("tolerance", format!("{:?}", self.tolerance)),
            ("patience", self.patience.to_string()),
            ("coarse_to_fine", self.coarse_to_fine.to_string()),
            ("seed", self.seed.to_string()),
        ]));
        s
    }

    /// Step multiplier at `iteration` of `total`.
    pub(crate) fn decay(&self, iteration: usize, total: usize) -> f64 {
        if total <= 1 {
            return 1.0;
        }
        self.lr_final_fraction.powf(iteration as f64 / (total - 1) as f64)
    }
}

/// Adaptive-moment optimizer with a per-coordinate base step.
#[derive(Debug, Clone)]
pub struct Adam {
    steps: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(steps: Vec<f64>) -> Self {
        let n = steps.len();
        Self { steps, m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of `x` along `-grad`, with all steps scaled by `scale`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64], scale: f64) {
        assert_eq!(x.len(), self.steps.len());
        assert_eq!(grad.len(), self.steps.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= scale * self.steps[i] * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Central differences, one coordinate at a time.
pub fn finite_difference_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter("finite-difference step must be positive".into()));
    }
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = f(&probe);
        probe[i] = x[i] - step;
        let fm = f(&probe);
        probe[i] = x[i];
        g.push((fp - fm) / (2.0 * step));
    }
    Ok(g)
}

/// One row of an optimization trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub terms: Vec<f64>,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub columns: Vec<&'static str>,
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, iteration: usize, terms: Vec<f64>, energy: f64) {
        self.rows.push(TraceRow { iteration, terms, energy });
    }

    pub fn energies(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.energy).collect()
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "iteration")?;
        for c in &self.columns {
            write!(out, ",{c}")?;
        }
        writeln!(out, ",energy")?;
        for r in &self.rows {
            write!(out, "{}", r.iteration)?;
            for t in &r.terms {
                write!(out, ",{t:?}")?;
            }
            writeln!(out, ",{:?}", r.energy)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}

/// Tracks the best iterate and the early-stopping window.
pub(crate) struct Progress<T> {
    pub best: Option<(f64, T)>,
    history: Vec<f64>,
    tolerance: f64,
    patience: usize,
}

impl<T: Clone> Progress<T> {
    pub fn new(tolerance: f64, patience: usize) -> Self {
        Self { best: None, history: Vec::new(), tolerance, patience }
    }

    pub fn observe(&mut self, energy: f64, state: &T) {
        if self.best.as_ref().is_none_or(|(e, _)| energy < *e) {
            self.best = Some((energy, state.clone()));
        }
        self.history.push(self.best.as_ref().expect("set above").0);
    }

    pub fn converged(&self) -> bool {
        if self.patience == 0 || self.history.len() <= self.patience {
            return false;
        }
        let now = *self.history.last().expect("non-empty");
        let then = self.history[self.history.len() - 1 - self.patience];
        then - now <= self.tolerance * then.abs().max(f64::MIN_POSITIVE)
    }
}
