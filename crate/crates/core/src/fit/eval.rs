use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{rigid_align, Camera, DepthMap, Pose};
use crate::image::Mask;

/// Mean 3D distances after rigid alignment, in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionError {
    pub face: f64,
    pub non_face: f64,
    /// Transform applied to the prediction.
    pub alignment: Pose,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Depth maps correspond by pixel. Both maps are back-projected over
/// `face ∪ non_face` where both are defined; the prediction is rigidly
/// aligned to the ground truth on that union and distances are averaged
/// separately per side.
pub fn evaluate_reconstruction(
    predicted: &DepthMap,
    truth: &DepthMap,
    face: &Mask,
    non_face: &Mask,
    camera: &Camera,
) -> Result<ReconstructionError> {
    let dims = (camera.width, camera.height);
    for (what, d) in [("predicted depth width", (predicted.width(), predicted.height())), ("truth depth width", (truth.width(), truth.height()))] {
        if d != dims {
            return Err(Error::Dimension { what, expected: dims.0, got: d.0 });
        }
    }
    for m in [face, non_face] {
        if (m.width(), m.height()) != dims {
            return Err(Error::Dimension { what: "partition mask width", expected: dims.0, got: m.width() });
        }
    }
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    let mut is_face = Vec::new();
    for (x, y) in face.or(non_face).iter_set() {
        if predicted.is_defined(x, y) && truth.is_defined(x, y) {
            pred.push(camera.backproject_pixel(x, y, predicted.get(x, y)));
            gt.push(camera.backproject_pixel(x, y, truth.get(x, y)));
            is_face.push(face.get(x, y));
        }
    }
    split_errors(&pred, &gt, &is_face)
}

fn split_errors(pred: &[Vector3<f64>], gt: &[Vector3<f64>], is_face: &[bool]) -> Result<ReconstructionError> {
    if !is_face.iter().any(|&f| f) {
        return Err(Error::EmptyRegion("face side of the evaluation partition"));
    }
    if is_face.iter().all(|&f| f) {
        return Err(Error::EmptyRegion("non-face side of the evaluation partition"));
    }
    let fit = rigid_align(pred, gt)?;
    let (mut f, mut n) = (Vec::new(), Vec::new());
    for ((p, g), &side) in pred.iter().zip(gt).zip(is_face) {
        let d = (fit.pose.apply(p) - g).norm();
        if side {
            f.push(d)
        } else {
            n.push(d)
        }
    }
    Ok(ReconstructionError { face: mean(&f), non_face: mean(&n), alignment: fit.pose })
}

fn nearest(points: &[Vector3<f64>], q: &Vector3<f64>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, p) in points.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Point sets correspond by nearest point: every ground-truth point is
/// matched to its closest predicted point, the matches are rigidly aligned,
/// and matching is repeated once after alignment.
pub fn evaluate_mesh_reconstruction(
    predicted: &[Vector3<f64>],
    truth: &[Vector3<f64>],
    truth_is_face: &[bool],
) -> Result<ReconstructionError> {
    if truth.len() != truth_is_face.len() {
        return Err(Error::Dimension { what: "face labels", expected: truth.len(), got: truth_is_face.len() });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyRegion("predicted point set"));
    }
    let matched: Vec<Vector3<f64>> = truth.iter().map(|g| predicted[nearest(predicted, g)]).collect();
    let first = split_errors(&matched, truth, truth_is_face)?;
    let moved: Vec<Vector3<f64>> = predicted.iter().map(|p| first.alignment.apply(p)).collect();
    let rematched: Vec<Vector3<f64>> = truth.iter().map(|g| moved[nearest(&moved, g)]).collect();
    let second = split_errors(&rematched, truth, truth_is_face)?;
    Ok(ReconstructionError { alignment: second.alignment.compose(&first.alignment), ..second })
}
