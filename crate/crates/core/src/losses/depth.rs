use crate::error::{Error, Result};
use crate::geometry::{relative_pose, Camera, DepthMap, Pose, RegionMasks};
use crate::image::{GradientImage, Image, Mask};

use super::LossWeights;

/// One view of the depth stage.
#[derive(Debug, Clone)]
pub struct DepthView {
    pub image: Image,
    pub gradients: GradientImage,
    pub masks: RegionMasks,
    /// Rendered face depth `d^f`, defined on `F`.
    pub face_depth: DepthMap,
    pub pose: Pose,
}

impl DepthView {
    pub fn new(image: Image, masks: RegionMasks, face_depth: DepthMap, pose: Pose) -> Result<Self> {
        let dims = (image.width(), image.height());
        if (masks.width(), masks.height()) != dims || (face_depth.width(), face_depth.height()) != dims {
            return Err(Error::InvalidParameter("view image, masks and face depth must share dimensions".into()));
        }
        let gradients = image.forward_gradients();
        Ok(Self { image, gradients, masks, face_depth, pose })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn downsample2(&self) -> Result<Self> {
        Self::new(self.image.downsample2(), self.masks.downsample2(), self.face_depth.downsample2(), self.pose)
    }
}

/// Two views seen by one camera.
#[derive(Debug, Clone)]
pub struct PairInputs {
    pub views: [DepthView; 2],
    pub camera: Camera,
}

/// Value and per-pixel gradient (row-major, zero outside the region) of a
/// single-map term.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthTerm {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when the term's region was empty and the value defaulted to 0.
    pub empty: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Channel {
    Color,
    Gradient,
}

struct Direction {
    sum: f64,
    count: usize,
    grad: Vec<f64>,
}

fn check_defined(d: &DepthMap, region: &Mask) -> Result<()> {
    let undefined: Vec<_> = region.iter_set().filter(|&(x, y)| !d.is_defined(x, y)).collect();
    if undefined.is_empty() {
        Ok(())
    } else {
        Err(Error::UndefinedDepth { pixels: undefined })
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Back-projects every `H` pixel of `src` with `d`, moves it into the
/// destination camera and compares against a bilinear sample there.
fn cross_view(src: &DepthView, dst: &DepthView, d: &DepthMap, camera: &Camera, channel: Channel) -> Result<Direction> {
    check_defined(d, &src.masks.h)?;
    let (w, h) = (src.width(), src.height());
    let rel = relative_pose(&src.pose, &dst.pose);
    let r = rel.rotation();
    let mut out = Direction { sum: 0.0, count: 0, grad: vec![0.0; w * h] };
    for (x, y) in src.masks.h.iter_set() {
        if channel == Channel::Gradient && (x + 1 >= w || y + 1 >= h) {
            continue;
        }
        let depth = d.get(x, y);
        let ray = camera.backproject_pixel(x, y, 1.0);
        let q = r * (ray * depth) + rel.translation;
        let Some(p) = camera.project(&q) else { continue };
        // Same camera pose: every pixel lands on itself, without round-off.
        let (sx, sy) = if rel.is_identity() { (x as f64, y as f64) } else { (p.u - 0.5, p.v - 0.5) };
        let jac = camera.projection_jacobian(&q);
        let dq = r * ray;
        let du = jac[0][0] * dq.x + jac[0][1] * dq.y + jac[0][2] * dq.z;
        let dv = jac[1][0] * dq.x + jac[1][1] * dq.y + jac[1][2] * dq.z;
        let mut acc = 0.0;
        let mut g = 0.0;
        match channel {
            Channel::Color => {
                let Some(s) = dst.image.sample_bilinear(sx, sy) else { continue };
                let a = src.image.get(x, y);
                for c in 0..3 {
                    let res = a[c] as f64 - s.value[c];
                    acc += res.abs();
                    g -= sign(res) * (s.dx[c] * du + s.dy[c] * dv);
                }
            }
            Channel::Gradient => {
                let Some(s) = dst.gradients.sample_bilinear(sx, sy) else { continue };
                let a = src.gradients.get(x, y);
                for c in 0..6 {
                    let res = a[c] as f64 - s.value[c];
                    acc += res.abs();
                    g -= sign(res) * (s.dx[c] * du + s.dy[c] * dv);
                }
            }
        }
        out.sum += acc;
        out.count += 1;
        out.grad[y * w + x] = g;
    }
    Ok(out)
}

fn symmetric(inputs: &PairInputs, d: [&DepthMap; 2], channel: Channel) -> Result<(f64, [Vec<f64>; 2])> {
    let [v1, v2] = &inputs.views;
    let a = cross_view(v1, v2, d[0], &inputs.camera, channel)?;
    let b = cross_view(v2, v1, d[1], &inputs.camera, channel)?;
    let dirs = (a.count > 0) as usize + (b.count > 0) as usize;
    if dirs == 0 {
        return Err(Error::EmptyRegion("no cross-view sample lands inside the other image"));
    }
    let mut value = 0.0;
    let mut finish = |dir: Direction| -> Vec<f64> {
        if dir.count == 0 {
            return dir.grad;
        }
        let scale = 1.0 / (dir.count as f64 * dirs as f64);
        value += dir.sum * scale;
        dir.grad.into_iter().map(|g| g * scale).collect()
    };
    let ga = finish(a);
    let gb = finish(b);
    Ok((value, [ga, gb]))
}

/// Colour constancy between the two views in sampling form: the mean ℓ1 rgb
/// residual per direction, averaged over the directions that have valid
/// samples. Returns gradients with respect to `d₁` and `d₂`.
pub fn color_constancy_loss(inputs: &PairInputs, d1: &DepthMap, d2: &DepthMap) -> Result<(f64, [Vec<f64>; 2])> {
    symmetric(inputs, [d1, d2], Channel::Color)
}

/// As [`color_constancy_loss`] on forward-difference image gradients.
pub fn gradient_loss(inputs: &PairInputs, d1: &DepthMap, d2: &DepthMap) -> Result<(f64, [Vec<f64>; 2])> {
    symmetric(inputs, [d1, d2], Channel::Gradient)
}

/// Mean over interior head pixels of the absolute 5-point Laplacian.
pub fn smoothness_loss(d: &DepthMap, s: &Mask) -> Result<DepthTerm> {
    check_defined(d, s)?;
    let (w, h) = (d.width(), d.height());
    let interior: Vec<(usize, usize)> = s
        .iter_set()
        .filter(|&(x, y)| x > 0 && y > 0 && x + 1 < w && y + 1 < h)
        .filter(|&(x, y)| s.get(x - 1, y) && s.get(x + 1, y) && s.get(x, y - 1) && s.get(x, y + 1))
        .collect();
    if interior.is_empty() {
        return Err(Error::EmptyRegion("no interior head pixels for smoothness"));
    }
    let n = interior.len() as f64;
    let mut grad = vec![0.0; w * h];
    let mut total = 0.0;
    for &(x, y) in &interior {
        let lap = d.get(x - 1, y) + d.get(x + 1, y) + d.get(x, y - 1) + d.get(x, y + 1) - 4.0 * d.get(x, y);
        total += lap.abs();
        let g = sign(lap) / n;
        grad[y * w + x] -= 4.0 * g;
        for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
            grad[ny * w + nx] += g;
        }
    }
    Ok(DepthTerm { value: total / n, grad, empty: false })
}

/// Mean `|d − d^f|` over the visible face `(F − S_h) ∩ S`.
pub fn face_depth_loss(d: &DepthMap, face_depth: &DepthMap, masks: &RegionMasks) -> Result<DepthTerm> {
    let region = masks.face_target().and(&masks.s);
    if region.is_empty() {
        return Err(Error::EmptyRegion("visible face region for face depth"));
    }
    check_defined(d, &region)?;
    check_defined(face_depth, &region)?;
    let n = region.count() as f64;
    let w = d.width();
    let mut grad = vec![0.0; w * d.height()];
    let mut total = 0.0;
    for (x, y) in region.iter_set() {
        let r = d.get(x, y) - face_depth.get(x, y);
        total += r.abs();
        grad[y * w + x] = sign(r) / n;
    }
    Ok(DepthTerm { value: total / n, grad, empty: false })
}

/// Mean over `S_h ∩ F` of `max(0, d − d^f)`; an empty overlap gives 0 with
/// the `empty` flag set.
pub fn layer_order_loss(d: &DepthMap, face_depth: &DepthMap, masks: &RegionMasks) -> Result<DepthTerm> {
    let region = masks.hair_over_face();
    let w = d.width();
    let mut grad = vec![0.0; w * d.height()];
    if region.is_empty() {
        return Ok(DepthTerm { value: 0.0, grad, empty: true });
    }
    check_defined(d, &region)?;
    check_defined(face_depth, &region)?;
    let n = region.count() as f64;
    let mut total = 0.0;
    for (x, y) in region.iter_set() {
        let r = d.get(x, y) - face_depth.get(x, y);
        if r > 0.0 {
            total += r;
            grad[y * w + x] = 1.0 / n;
        }
    }
    Ok(DepthTerm { value: total / n, grad, empty: false })
}

/// Per-term values of a depth energy, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DepthTerms {
    pub color: f64,
    pub grad: f64,
    pub smooth: f64,
    pub face: f64,
    pub layer: f64,
}

#[derive(Debug, Clone)]
pub struct DepthEnergy {
    pub value: f64,
    pub terms: DepthTerms,
    /// One gradient per depth map.
    pub grads: Vec<Vec<f64>>,
    /// Set when some view had no hair-over-face overlap.
    pub empty_layer_overlap: bool,
}

fn add_scaled(acc: &mut [f64], g: &[f64], w: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += w * b;
    }
}

fn prior_terms(d: &DepthMap, view: &DepthView, weights: &LossWeights, e: &mut DepthEnergy, slot: usize) -> Result<()> {
    if weights.w_smooth > 0.0 {
        let t = smoothness_loss(d, &view.masks.s)?;
        e.terms.smooth += t.value;
        add_scaled(&mut e.grads[slot], &t.grad, weights.w_smooth);
    }
    if weights.w_face > 0.0 {
        let t = face_depth_loss(d, &view.face_depth, &view.masks)?;
        e.terms.face += t.value;
        add_scaled(&mut e.grads[slot], &t.grad, weights.w_face);
    }
    if weights.w_layer > 0.0 {
        let t = layer_order_loss(d, &view.face_depth, &view.masks)?;
        e.empty_layer_overlap |= t.empty;
        e.terms.layer += t.value;
        add_scaled(&mut e.grads[slot], &t.grad, weights.w_layer);
    }
    Ok(())
}

fn total(terms: &DepthTerms, w: &LossWeights) -> f64 {
    // Zero-weight terms are skipped so an unevaluated term never contributes.
    let mut v = 0.0;
    for (wk, tk) in [(w.w_color, terms.color), (w.w_grad, terms.grad), (w.w_smooth, terms.smooth), (w.w_face, terms.face), (w.w_layer, terms.layer)] {
        if wk > 0.0 {
            v += wk * tk;
        }
    }
    v
}

/// `w_color·l_color + w_grad·l_grad + w_smooth·l_smooth + w_face·l_face +
/// w_layer·l_layer`, with prior terms summed over both views. Terms with zero
/// weight are not evaluated.
pub fn depth_energy(d1: &DepthMap, d2: &DepthMap, inputs: &PairInputs, weights: &LossWeights) -> Result<DepthEnergy> {
    let n1 = d1.width() * d1.height();
    let n2 = d2.width() * d2.height();
    let mut e = DepthEnergy { value: 0.0, terms: DepthTerms::default(), grads: vec![vec![0.0; n1], vec![0.0; n2]], empty_layer_overlap: false };
    if weights.w_color > 0.0 {
        let (v, [g1, g2]) = color_constancy_loss(inputs, d1, d2)?;
        e.terms.color = v;
        add_scaled(&mut e.grads[0], &g1, weights.w_color);
        add_scaled(&mut e.grads[1], &g2, weights.w_color);
    }
    if weights.w_grad > 0.0 {
        let (v, [g1, g2]) = gradient_loss(inputs, d1, d2)?;
        e.terms.grad = v;
        add_scaled(&mut e.grads[0], &g1, weights.w_grad);
        add_scaled(&mut e.grads[1], &g2, weights.w_grad);
    }
    prior_terms(d1, &inputs.views[0], weights, &mut e, 0)?;
    prior_terms(d2, &inputs.views[1], weights, &mut e, 1)?;
    e.value = total(&e.terms, weights);
    Ok(e)
}

/// Prior-only energy for one view: smoothness, face depth and layer order.
pub fn depth_energy_single(d: &DepthMap, view: &DepthView, weights: &LossWeights) -> Result<DepthEnergy> {
    let mut e = DepthEnergy {
        value: 0.0,
        terms: DepthTerms::default(),
        grads: vec![vec![0.0; d.width() * d.height()]],
        empty_layer_overlap: false,
    };
    prior_terms(d, view, weights, &mut e, 0)?;
    let w = LossWeights { w_color: 0.0, w_grad: 0.0, ..*weights };
    e.value = total(&e.terms, &w);
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn masks_all(w: usize, h: usize, face: impl Fn(usize, usize) -> bool, hair: impl Fn(usize, usize) -> bool) -> RegionMasks {
        let s = Mask::full(w, h);
        let f = Mask::from_fn(w, h, &face);
        let s_h = Mask::from_fn(w, h, &hair);
        let s_f = f.minus(&s_h);
        RegionMasks::new(s, s_f, s_h, f).unwrap()
    }

    fn textured(w: usize, h: usize, phase: f32) -> Image {
        Image::from_fn(w, h, |x, y| {
            let (fx, fy) = (x as f32 * 0.37 + phase, y as f32 * 0.29);
            [0.5 + 0.3 * fx.sin() * fy.cos(), 0.5 + 0.25 * (0.7 * fx + fy).sin(), 0.4 + 0.2 * (fy * 1.3).cos()]
        })
    }

    fn pair(img1: Image, img2: Image, pose1: Pose, pose2: Pose) -> PairInputs {
        let (w, h) = (img1.width(), img1.height());
        let masks = masks_all(w, h, |_, _| false, |_, _| true);
        let df = DepthMap::undefined(w, h);
        PairInputs {
            views: [
                DepthView::new(img1, masks.clone(), df.clone(), pose1).unwrap(),
                DepthView::new(img2, masks, df, pose2).unwrap(),
            ],
            camera: Camera::default_for(w, h),
        }
    }

    fn random_depth(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
        DepthMap::from_fn(w, h, |_, _| rng.random_range(900.0..1100.0))
    }

    fn frontal(z: f64) -> Pose {
        Pose::new([1.0, 0.0, 0.0, 0.0], Vector3::new(0.0, 0.0, z))
    }

    #[test]
    fn identity_transform_lands_on_source_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = textured(20, 16, 0.0);
        let inputs = pair(img.clone(), img, frontal(1000.0), frontal(1000.0));
        let d = random_depth(&mut rng, 20, 16);
        let (v, g) = color_constancy_loss(&inputs, &d, &d).unwrap();
        assert!(v <= 1e-6, "{v}");
        let (vg, _) = gradient_loss(&inputs, &d, &d).unwrap();
        assert!(vg <= 1e-6);
        assert_eq!(g[0].len(), 320);
    }

    #[test]
    fn constant_offset_costs_three_channels() {
        let img = textured(20, 16, 0.0);
        let brighter = Image::from_fn(20, 16, |x, y| img.get(x, y).map(|v| v + 0.1));
        let inputs = pair(img, brighter, frontal(1000.0), frontal(1000.0));
        let d = DepthMap::filled(20, 16, 1000.0);
        let (v, _) = color_constancy_loss(&inputs, &d, &d).unwrap();
        assert!((v - 0.3).abs() < 1e-6, "{v}");
        let (vg, _) = gradient_loss(&inputs, &d, &d).unwrap();
        assert!(vg < 1e-6, "gradient loss must ignore offsets: {vg}");
    }

    #[test]
    fn gradient_loss_exactly_ignores_offsets_between_identical_poses() {
        let img = Image::from_fn(20, 16, |x, y| [((x * 7 + y * 3) % 128) as f32 / 256.0, (x % 5) as f32 / 64.0, (y % 9) as f32 / 32.0]);
        let brighter = Image::from_fn(20, 16, |x, y| img.get(x, y).map(|v| v + 0.25));
        let pose = Pose::from_euler_deg(3.0, -2.0, 1.0, Vector3::new(4.0, -6.0, 1000.0));
        let inputs = pair(img, brighter, pose, pose);
        let d = DepthMap::from_fn(20, 16, |x, y| 980.0 + x as f64 + 0.5 * y as f64);
        let (v, g) = gradient_loss(&inputs, &d, &d).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_loss_is_zero_for_constant_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = pair(Image::filled(12, 10, [0.2, 0.4, 0.6]), Image::filled(12, 10, [0.9, 0.1, 0.3]), frontal(1000.0), Pose::from_euler_deg(8.0, 0.0, 0.0, Vector3::new(0.0, 0.0, 1000.0)));
        let (d1, d2) = (random_depth(&mut rng, 12, 10), random_depth(&mut rng, 12, 10));
        assert_eq!(gradient_loss(&inputs, &d1, &d2).unwrap().0, 0.0);
    }

    /// Direct double loop with its own projection arithmetic.
    fn brute_force_gradient_term(inputs: &PairInputs, d: [&DepthMap; 2]) -> f64 {
        let cam = inputs.camera;
        let mut means = Vec::new();
        for (s, t) in [(0, 1), (1, 0)] {
            let (src, dst) = (&inputs.views[s], &inputs.views[t]);
            let (r1, r2) = (src.pose.rotation(), dst.pose.rotation());
            let (w, h) = (src.width(), src.height());
            let (mut sum, mut n) = (0.0, 0usize);
            for y in 0..h - 1 {
                for x in 0..w - 1 {
                    if !src.masks.h.get(x, y) {
                        continue;
                    }
                    let z = d[s].get(x, y);
                    let pc = Vector3::new((x as f64 + 0.5 - cam.cx) / cam.focal * z, (y as f64 + 0.5 - cam.cy) / cam.focal * z, z);
                    let world = r1.transpose() * (pc - src.pose.translation);
                    let q = r2 * world + dst.pose.translation;
                    let (u, v) = (cam.focal * q.x / q.z + cam.cx - 0.5, cam.focal * q.y / q.z + cam.cy - 0.5);
                    if !(u >= 0.0 && v >= 0.0 && u <= (w - 2) as f64 && v <= (h - 2) as f64) {
                        continue;
                    }
                    let (x0, y0) = ((u.floor() as usize).min(w - 3), (v.floor() as usize).min(h - 3));
                    let (fx, fy) = (u - x0 as f64, v - y0 as f64);
                    let grad_at = |img: &Image, xx: usize, yy: usize| -> [f64; 6] {
                        let (c, r, b) = (img.get(xx, yy), img.get(xx + 1, yy), img.get(xx, yy + 1));
                        std::array::from_fn(|k| if k < 3 { (r[k] - c[k]) as f64 } else { (b[k - 3] - c[k - 3]) as f64 })
                    };
                    let a = grad_at(&src.image, x, y);
                    let (g00, g10, g01, g11) = (
                        grad_at(&dst.image, x0, y0),
                        grad_at(&dst.image, x0 + 1, y0),
                        grad_at(&dst.image, x0, y0 + 1),
                        grad_at(&dst.image, x0 + 1, y0 + 1),
                    );
                    for k in 0..6 {
                        let b = (1.0 - fx) * (1.0 - fy) * g00[k] + fx * (1.0 - fy) * g10[k] + (1.0 - fx) * fy * g01[k] + fx * fy * g11[k];
                        sum += (a[k] - b).abs();
                    }
                    n += 1;
                }
            }
            if n > 0 {
                means.push(sum / n as f64);
            }
        }
        means.iter().sum::<f64>() / means.len() as f64
    }

    #[test]
    fn gradient_loss_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p1 = frontal(1000.0);
        let p2 = Pose::from_euler_deg(6.0, -2.0, 1.0, Vector3::new(3.0, -2.0, 1010.0));
        let inputs = pair(textured(24, 20, 0.0), textured(24, 20, 0.8), p1, p2);
        let (d1, d2) = (random_depth(&mut rng, 24, 20), random_depth(&mut rng, 24, 20));
        let v = gradient_loss(&inputs, &d1, &d2).unwrap().0;
        let oracle = brute_force_gradient_term(&inputs, [&d1, &d2]);
        assert!((v - oracle).abs() < 1e-6, "{v} vs {oracle}");
    }

    #[test]
    fn cross_view_gradients_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p1 = frontal(1000.0);
        let p2 = Pose::from_euler_deg(10.0, 3.0, 0.0, Vector3::new(-5.0, 0.0, 1000.0));
        let inputs = pair(textured(24, 20, 0.0), textured(24, 20, 0.5), p1, p2);
        let d1 = DepthMap::from_fn(24, 20, |_, _| rng.random_range(950.0..1050.0));
        let d2 = DepthMap::from_fn(24, 20, |_, _| rng.random_range(950.0..1050.0));
        for loss in [color_constancy_loss, gradient_loss] {
            let (_, g) = loss(&inputs, &d1, &d2).unwrap();
            let (mut ok, mut total) = (0, 0);
            for which in 0..2 {
                for i in (0..480).step_by(7) {
                    let mut dp = [d1.clone(), d2.clone()];
                    let mut dm = [d1.clone(), d2.clone()];
                    dp[which].values_mut()[i] += 1e-3;
                    dm[which].values_mut()[i] -= 1e-3;
                    let fd = (loss(&inputs, &dp[0], &dp[1]).unwrap().0 - loss(&inputs, &dm[0], &dm[1]).unwrap().0) / 2e-3;
                    let a = g[which][i];
                    total += 1;
                    if (fd - a).abs() <= 1e-3 * fd.abs().max(a.abs()) || (fd.abs() < 1e-12 && a.abs() < 1e-12) {
                        ok += 1;
                    }
                }
            }
            assert!(ok as f64 >= 0.95 * total as f64, "{ok}/{total}");
        }
    }

    #[test]
    fn out_of_bounds_landings_are_dropped() {
        let p1 = frontal(1000.0);
        // A large lateral shift pushes every landing outside image 2 and vice versa.
        let p2 = Pose::new([1.0, 0.0, 0.0, 0.0], Vector3::new(5000.0, 0.0, 1000.0));
        let inputs = pair(textured(10, 10, 0.0), textured(10, 10, 0.0), p1, p2);
        let d = DepthMap::filled(10, 10, 1000.0);
        assert!(matches!(color_constancy_loss(&inputs, &d, &d), Err(Error::EmptyRegion(_))));
    }

    #[test]
    fn smoothness_cases() {
        let affine = DepthMap::from_fn(8, 7, |x, y| 1000.0 + 2.5 * x as f64 - 1.5 * y as f64);
        let s = Mask::full(8, 7);
        assert!(smoothness_loss(&affine, &s).unwrap().value.abs() < 1e-9);

        let bump = DepthMap::from_fn(3, 3, |x, y| if (x, y) == (1, 1) { 2.0 } else { 1.0 });
        assert_eq!(smoothness_loss(&bump, &Mask::full(3, 3)).unwrap().value, 4.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_depth(&mut rng, 9, 9);
        let scaled = DepthMap::from_fn(9, 9, |x, y| 3.0 * d.get(x, y));
        let full = Mask::full(9, 9);
        let (a, b) = (smoothness_loss(&d, &full).unwrap().value, smoothness_loss(&scaled, &full).unwrap().value);
        assert!((b - 3.0 * a).abs() < 1e-9 * b);
        assert!(smoothness_loss(&d, &Mask::from_fn(9, 9, |x, _| x == 4)).is_err());
    }

    #[test]
    fn smoothness_gradient_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_depth(&mut rng, 10, 9);
        let s = Mask::from_fn(10, 9, |x, y| (x as i32 - 5).pow(2) + (y as i32 - 4).pow(2) < 14);
        let g = smoothness_loss(&d, &s).unwrap().grad;
        for i in 0..90 {
            if !s.data()[i] {
                continue;
            }
            let (mut p, mut m) = (d.clone(), d.clone());
            p.values_mut()[i] += 1e-3;
            m.values_mut()[i] -= 1e-3;
            let fd = (smoothness_loss(&p, &s).unwrap().value - smoothness_loss(&m, &s).unwrap().value) / 2e-3;
            assert!((fd - g[i]).abs() < 1e-9, "{i}: {fd} vs {}", g[i]);
        }
    }

    fn face_masks() -> RegionMasks {
        masks_all(10, 10, |x, y| (2..8).contains(&x) && (2..8).contains(&y), |_, y| y < 4)
    }

    #[test]
    fn face_depth_cases() {
        let m = face_masks();
        let df = DepthMap::from_fn(10, 10, |x, y| if m.f.get(x, y) { 950.0 + x as f64 } else { f64::NAN });
        let d = DepthMap::from_fn(10, 10, |x, _| 950.0 + x as f64);
        assert_eq!(face_depth_loss(&d, &df, &m).unwrap().value, 0.0);
        let d7 = DepthMap::from_fn(10, 10, |x, _| 957.0 + x as f64);
        assert!((face_depth_loss(&d7, &df, &m).unwrap().value - 7.0).abs() < 1e-12);
        // Hair-occluded face pixels do not count.
        let mut mutated = d7.clone();
        for (x, y) in m.hair_over_face().iter_set() {
            mutated.set(x, y, 10.0);
        }
        assert_eq!(face_depth_loss(&mutated, &df, &m).unwrap().value, face_depth_loss(&d7, &df, &m).unwrap().value);
        let no_face = masks_all(10, 10, |_, _| false, |_, _| false);
        assert!(face_depth_loss(&d, &df, &no_face).is_err());
    }

    #[test]
    fn layer_order_cases() {
        let m = face_masks();
        let overlap = m.hair_over_face();
        assert_eq!(overlap.count(), 12);
        let df = DepthMap::from_fn(10, 10, |x, y| if m.f.get(x, y) { 1000.0 } else { f64::NAN });
        let front = DepthMap::filled(10, 10, 995.0);
        assert_eq!(layer_order_loss(&front, &df, &m).unwrap().value, 0.0);
        let behind = DepthMap::filled(10, 10, 1002.0);
        assert_eq!(layer_order_loss(&behind, &df, &m).unwrap().value, 2.0);
        // Half the overlap violates by 4.
        let mixed = DepthMap::from_fn(10, 10, |_, y| if y == 2 { 1004.0 } else { 990.0 });
        assert_eq!(layer_order_loss(&mixed, &df, &m).unwrap().value, 2.0);
        let none = masks_all(10, 10, |x, _| x < 3, |x, _| x > 6);
        let t = layer_order_loss(&front, &df, &none).unwrap();
        assert!(t.empty && t.value == 0.0);
    }

    #[test]
    fn region_terms_ignore_outside_pixels() {
        let m = face_masks();
        let df = DepthMap::from_fn(10, 10, |x, y| if m.f.get(x, y) { 1000.0 } else { f64::NAN });
        let d = DepthMap::from_fn(10, 10, |x, y| 990.0 + (x * y) as f64 * 0.7);
        let mut changed = d.clone();
        changed.set(0, 9, 5.0);
        changed.set(9, 0, 5000.0);
        assert_eq!(face_depth_loss(&d, &df, &m).unwrap(), face_depth_loss(&changed, &df, &m).unwrap());
        assert_eq!(layer_order_loss(&d, &df, &m).unwrap(), layer_order_loss(&changed, &df, &m).unwrap());
    }

    #[test]
    fn energy_weights_select_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = face_masks();
        let df = DepthMap::from_fn(10, 10, |x, y| if m.f.get(x, y) { 1000.0 + x as f64 } else { f64::NAN });
        let img1 = textured(10, 10, 0.0);
        let img2 = textured(10, 10, 0.3);
        let camera = Camera::default_for(10, 10);
        let inputs = PairInputs {
            views: [
                DepthView::new(img1, m.clone(), df.clone(), frontal(1000.0)).unwrap(),
                DepthView::new(img2, m.clone(), df.clone(), Pose::from_euler_deg(5.0, 0.0, 0.0, Vector3::new(0.0, 0.0, 1000.0))).unwrap(),
            ],
            camera,
        };
        let (d1, d2) = (random_depth(&mut rng, 10, 10), random_depth(&mut rng, 10, 10));
        assert_eq!(depth_energy(&d1, &d2, &inputs, &LossWeights::zero()).unwrap().value, 0.0);
        let smooth = LossWeights { w_smooth: 1.0, ..LossWeights::zero() };
        let e = depth_energy(&d1, &d2, &inputs, &smooth).unwrap();
        let want = smoothness_loss(&d1, &m.s).unwrap().value + smoothness_loss(&d2, &m.s).unwrap().value;
        assert!((e.value - want).abs() < 1e-12);
        let color = LossWeights { w_color: 1.0, ..LossWeights::zero() };
        let e = depth_energy(&d1, &d2, &inputs, &color).unwrap();
        assert_eq!(e.value, color_constancy_loss(&inputs, &d1, &d2).unwrap().0);
    }
}
