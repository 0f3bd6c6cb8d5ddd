use crate::error::{Error, Result};
use crate::geometry::{relative_pose, DepthMap, RegionMasks};
use crate::harmonic::{interior_residual, solve_harmonic, Cell, HarmonicReport};
use crate::image::Mask;
use crate::losses::{depth_energy, depth_energy_single, DepthEnergy, DepthTerms, DepthView, PairInputs};

use super::{Adam, FitConfig, Progress, Trace};

/// Smallest depth the optimizer may assign, in mm.
const MIN_DEPTH: f64 = 1.0;

/// Relative rotations below this many degrees make a pair degenerate.
const DEGENERATE_BASELINE_DEG: f64 = 1.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitReport {
    /// Head pixels with no path to the face, filled with the face median.
    pub unanchored: Vec<(usize, usize)>,
    /// Largest |Laplacian| over interior unknown pixels after the solve.
    pub residual: f64,
    pub iterations: usize,
}

/// Harmonic extension of the face depth over the head region: face pixels
/// keep `d^f`, the remaining head pixels solve the Laplace equation, and
/// the result is defined exactly on `S`.
pub fn init_depth(face_depth: &DepthMap, masks: &RegionMasks) -> Result<(DepthMap, InitReport)> {
    let (w, h) = (masks.width(), masks.height());
    if (face_depth.width(), face_depth.height()) != (w, h) {
        return Err(Error::Dimension { what: "face depth width", expected: w, got: face_depth.width() });
    }
    let undefined: Vec<(usize, usize)> = masks.f.iter_set().filter(|&(x, y)| !face_depth.is_defined(x, y)).collect();
    if !undefined.is_empty() {
        return Err(Error::UndefinedDepth { pixels: undefined });
    }
    let median = face_depth.median_over(&masks.f).ok_or(Error::EmptyRegion("face region for depth initialization"))?;

    let mut cells = vec![Cell::Absent; w * h];
    let mut values = vec![f64::NAN; w * h];
    for (x, y) in masks.s.iter_set() {
        let i = y * w + x;
        if masks.f.get(x, y) {
            cells[i] = Cell::Known;
            values[i] = face_depth.get(x, y);
        } else {
            cells[i] = Cell::Unknown;
        }
    }
    let HarmonicReport { unanchored, iterations, .. } = solve_harmonic(w, h, &cells, &mut [&mut values], &[median])?;
    let residual = interior_residual(w, h, &cells, &values);
    Ok((DepthMap::from_values(w, h, values)?, InitReport { unanchored, residual, iterations }))
}

/// Constant depth on `S`, undefined elsewhere.
pub fn plane_init(masks: &RegionMasks, depth: f64) -> DepthMap {
    DepthMap::from_fn(masks.width(), masks.height(), |x, y| if masks.s.get(x, y) { depth } else { f64::NAN })
}

#[derive(Debug, Clone)]
pub struct DepthFitResult {
    /// One map per view, defined on that view's `S`.
    pub depths: Vec<DepthMap>,
    pub energy: f64,
    pub terms: DepthTerms,
    pub initial_energy: f64,
    pub iterations: usize,
    pub trace: Trace,
    /// Relative rotation below one degree.
    pub degenerate_baseline: bool,
    pub empty_layer_overlap: bool,
    pub init_reports: Vec<InitReport>,
    pub diagnostic: Option<String>,
}

struct Run {
    depths: Vec<DepthMap>,
    energy: f64,
    terms: DepthTerms,
    empty_layer_overlap: bool,
    iterations: usize,
    trace: Trace,
    diagnostic: Option<String>,
}

fn energy_is_finite(e: &DepthEnergy) -> bool {
    let t = &e.terms;
    e.value.is_finite() && [t.color, t.grad, t.smooth, t.face, t.layer].iter().all(|v| v.is_finite())
}

/// Per-pixel upper bounds that keep hair in front of the face on `S_h ∩ F`
/// while the layer term is active; unbounded elsewhere.
fn layer_ceilings(views: &[&DepthView], w_layer: f64) -> Vec<Vec<f64>> {
    views
        .iter()
        .map(|v| {
            let w = v.width();
            let mut c = vec![f64::INFINITY; w * v.height()];
            if w_layer > 0.0 {
                for (x, y) in v.masks.s_h.and(&v.masks.f).iter_set() {
                    if v.face_depth.is_defined(x, y) {
                        c[y * w + x] = v.face_depth.get(x, y).max(MIN_DEPTH);
                    }
                }
            }
            c
        })
        .collect()
}

fn project_onto(maps: &mut [DepthMap], regions: &[&Mask], ceilings: &[Vec<f64>]) {
    for ((d, m), c) in maps.iter_mut().zip(regions).zip(ceilings) {
        let w = d.width();
        let values = d.values_mut();
        for (x, y) in m.iter_set() {
            let i = y * w + x;
            values[i] = values[i].max(MIN_DEPTH).min(c[i]);
        }
    }
}

/// Projected Adam over the head pixels of every map. `anchor` is an extra
/// candidate that competes for the best iterate without being a starting point.
fn optimize(
    mut start: Vec<DepthMap>,
    regions: &[&Mask],
    ceilings: &[Vec<f64>],
    anchor: Option<&[DepthMap]>,
    config: &FitConfig,
    total: usize,
    eval: impl Fn(&[DepthMap]) -> Result<DepthEnergy>,
) -> Result<Run> {
    project_onto(&mut start, regions, ceilings);
    let index: Vec<Vec<usize>> =
        regions.iter().zip(&start).map(|(m, d)| m.iter_set().map(|(x, y)| y * d.width() + x).collect()).collect();
    let mut x: Vec<f64> = index.iter().zip(&start).flat_map(|(idx, d)| idx.iter().map(|&i| d.values()[i])).collect();
    let mut adam = Adam::new(vec![config.lr_depth; x.len()]);
    let mut maps = start;
    let mut progress: Progress<(Vec<DepthMap>, DepthTerms, bool)> = Progress::new(config.tolerance, config.patience);
    let mut trace = Trace::new(&["color", "grad", "smooth", "face", "layer"]);
    let mut diagnostic = None;
    let mut iterations = 0;

    // The anchor is kept out of `progress` so it cannot end the run early.
    let mut fallback = None;
    if let Some(a) = anchor {
        let mut a = a.to_vec();
        project_onto(&mut a, regions, ceilings);
        let e = eval(&a)?;
        if energy_is_finite(&e) {
            fallback = Some((e.value, (a, e.terms, e.empty_layer_overlap)));
        }
    }

    for it in 0..total {
        let e = match eval(&maps) {
            Ok(e) if energy_is_finite(&e) => e,
            Ok(e) => {
                let detail = format!("{:?}", e.terms);
                if progress.best.is_none() && fallback.is_none() {
                    return Err(Error::NonFinite { iteration: it, detail });
                }
                diagnostic = Some(Error::NonFinite { iteration: it, detail }.to_string());
                break;
            }
            Err(err) if progress.best.is_some() || fallback.is_some() => {
                diagnostic = Some(format!("stopped at iteration {it}: {err}"));
                break;
            }
            Err(err) => return Err(err),
        };
        iterations = it + 1;
        let t = e.terms;
        trace.push(it, vec![t.color, t.grad, t.smooth, t.face, t.layer], e.value);
        progress.observe(e.value, &(maps.clone(), e.terms, e.empty_layer_overlap));
        if progress.converged() || it + 1 == total {
            break;
        }
        let g: Vec<f64> = index.iter().zip(&e.grads).flat_map(|(idx, g)| idx.iter().map(|&i| g[i])).collect();
        adam.step(&mut x, &g, config.decay(it, total));
        let mut o = 0;
        for ((idx, d), c) in index.iter().zip(maps.iter_mut()).zip(ceilings) {
            let values = d.values_mut();
            for &i in idx {
                x[o] = x[o].max(MIN_DEPTH).min(c[i]);
                values[i] = x[o];
                o += 1;
            }
        }
    }
    let best = match (progress.best, fallback) {
        (Some(run), Some(anchor)) => Some(if anchor.0 < run.0 { anchor } else { run }),
        (run, anchor) => run.or(anchor),
    };
    let (energy, (depths, terms, empty_layer_overlap)) = best.expect("at least one evaluation");
    Ok(Run { depths, energy, terms, empty_layer_overlap, iterations, trace, diagnostic })
}

fn check_init(d: &DepthMap, view: &DepthView) -> Result<()> {
    if (d.width(), d.height()) != (view.width(), view.height()) {
        return Err(Error::Dimension { what: "initial depth width", expected: view.width(), got: d.width() });
    }
    let bad: Vec<(usize, usize)> =
        view.masks.s.iter_set().filter(|&(x, y)| !(d.is_defined(x, y) && d.get(x, y) > 0.0)).collect();
    if !bad.is_empty() {
        return Err(Error::UndefinedDepth { pixels: bad });
    }
    Ok(())
}

/// Coarse start: the half-resolution solution upsampled onto `S`, keeping
/// the full-resolution value wherever the coarse map has no support.
fn refine_start(coarse: &DepthMap, fine: &DepthMap, s: &Mask) -> DepthMap {
    let up = coarse.upsample_to(fine.width(), fine.height());
    DepthMap::from_fn(fine.width(), fine.height(), |x, y| {
        if !s.get(x, y) {
            f64::NAN
        } else if up.is_defined(x, y) && up.get(x, y) > 0.0 {
            up.get(x, y)
        } else {
            fine.get(x, y)
        }
    })
}

fn pair_energy(inputs: &PairInputs, weights: crate::losses::LossWeights) -> impl Fn(&[DepthMap]) -> Result<DepthEnergy> + '_ {
    move |m: &[DepthMap]| depth_energy(&m[0], &m[1], inputs, &weights)
}

fn can_halve(view: &DepthView) -> bool {
    view.width() >= 32 && view.height() >= 32
}

/// Jointly minimizes the pair energy over both depth maps on their head
/// regions. Without `init`, each map starts from [`init_depth`]. While
/// `w_layer > 0`, hair depth on `S_h ∩ F` is held at or in front of `d^f`.
pub fn fit_depth_pair(inputs: &PairInputs, config: &FitConfig, init: Option<[DepthMap; 2]>) -> Result<DepthFitResult> {
    config.validate()?;
    inputs.camera.validate()?;
    for v in &inputs.views {
        if (v.width(), v.height()) != (inputs.camera.width, inputs.camera.height) {
            return Err(Error::Dimension { what: "view width", expected: inputs.camera.width, got: v.width() });
        }
    }
    let (start, init_reports) = match init {
        Some(maps) => (maps.to_vec(), Vec::new()),
        None => {
            let (d1, r1) = init_depth(&inputs.views[0].face_depth, &inputs.views[0].masks)?;
            let (d2, r2) = init_depth(&inputs.views[1].face_depth, &inputs.views[1].masks)?;
            (vec![d1, d2], vec![r1, r2])
        }
    };
    for (d, v) in start.iter().zip(&inputs.views) {
        check_init(d, v)?;
    }
    let degenerate_baseline =
        relative_pose(&inputs.views[0].pose, &inputs.views[1].pose).angle().to_degrees() < DEGENERATE_BASELINE_DEG;
    let weights = config.weights;
    let initial_energy = pair_energy(inputs, weights)(&start)?.value;

    let mut first = start.clone();
    if config.coarse_to_fine && inputs.views.iter().all(can_halve) {
        let coarse_inputs = PairInputs {
            views: [inputs.views[0].downsample2()?, inputs.views[1].downsample2()?],
            camera: inputs.camera.half(),
        };
        let coarse_start: Vec<DepthMap> =
            start.iter().zip(&coarse_inputs.views).map(|(d, v)| d.downsample2().restricted_to(&v.masks.s)).collect();
        let regions: Vec<&Mask> = coarse_inputs.views.iter().map(|v| &v.masks.s).collect();
        let ceilings = layer_ceilings(&[&coarse_inputs.views[0], &coarse_inputs.views[1]], weights.w_layer);
        // A failing coarse stage (for example an empty overlap) only costs the warm start.
        if let Ok(run) = optimize(coarse_start, &regions, &ceilings, None, config, config.depth_iterations, pair_energy(&coarse_inputs, weights)) {
            first = run.depths.iter().zip(&start).zip(&inputs.views).map(|((c, f), v)| refine_start(c, f, &v.masks.s)).collect();
        }
    }

    let regions: Vec<&Mask> = inputs.views.iter().map(|v| &v.masks.s).collect();
    let anchor = (first != start).then_some(start.as_slice());
    let ceilings = layer_ceilings(&[&inputs.views[0], &inputs.views[1]], weights.w_layer);
    let run = optimize(first, &regions, &ceilings, anchor, config, config.depth_iterations, pair_energy(inputs, weights))?;
    Ok(DepthFitResult {
        depths: run.depths,
        energy: run.energy,
        terms: run.terms,
        initial_energy,
        iterations: run.iterations,
        trace: run.trace,
        degenerate_baseline,
        empty_layer_overlap: run.empty_layer_overlap,
        init_reports,
        diagnostic: run.diagnostic,
    })
}

/// Prior-only single-view stand-in: smoothness, face depth and layer order
/// from the harmonic initialization. It does not use the image.
pub fn fit_depth_single(view: &DepthView, config: &FitConfig, init: Option<DepthMap>) -> Result<DepthFitResult> {
    config.validate()?;
    let (start, init_reports) = match init {
        Some(d) => (d, Vec::new()),
        None => {
            let (d, r) = init_depth(&view.face_depth, &view.masks)?;
            (d, vec![r])
        }
    };
    check_init(&start, view)?;
    let weights = config.weights;
    let eval = |m: &[DepthMap]| depth_energy_single(&m[0], view, &weights);
    let initial_energy = eval(std::slice::from_ref(&start))?.value;
    let ceilings = layer_ceilings(&[view], weights.w_layer);
    let run = optimize(vec![start], &[&view.masks.s], &ceilings, None, config, config.depth_iterations, eval)?;
    Ok(DepthFitResult {
        depths: run.depths,
        energy: run.energy,
        terms: run.terms,
        initial_energy,
        iterations: run.iterations,
        trace: run.trace,
        degenerate_baseline: false,
        empty_layer_overlap: run.empty_layer_overlap,
        init_reports,
        diagnostic: run.diagnostic,
    })
}
