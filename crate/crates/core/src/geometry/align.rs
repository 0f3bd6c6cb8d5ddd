use nalgebra::{Matrix3, Vector3};

use super::Pose;
use crate::error::{Error, Result};

/// Result of a least-squares rigid registration.
#[derive(Debug, Clone, Copy)]
pub struct RigidFit {
    /// Transform taking source points onto the target.
    pub pose: Pose,
    /// Mean Euclidean distance after alignment.
    pub mean_distance: f64,
}

/// Least-squares rotation and translation (no scale) minimizing
/// `Σ‖R·s + t − g‖²`, via the SVD of the cross-covariance (Kabsch).
pub fn rigid_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidFit> {
    if source.len() != target.len() {
        return Err(Error::Dimension { what: "alignment correspondences", expected: source.len(), got: target.len() });
    }
    if source.len() < 3 {
        return Err(Error::Degenerate("rigid alignment needs at least 3 correspondences"));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;

    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, g) in source.iter().zip(target) {
        let (ds, dg) = (s - cs, g - ct);
        cov += dg * ds.transpose();
        spread += ds * ds.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (max_sv, mid_sv) = {
        let mut v = [sv[0], sv[1], sv[2]];
        v.sort_by(f64::total_cmp);
        (v[2], v[1])
    };
    if !(max_sv > 0.0) || mid_sv <= 1e-12 * max_sv {
        return Err(Error::Degenerate("source points are collinear or coincident"));
    }

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let t = ct - r * cs;
    let q = nalgebra::UnitQuaternion::from_matrix(&r);
    let pose = Pose::new([q.w, q.i, q.j, q.k], t);
    let rr = pose.rotation();
    let mean_distance = source.iter().zip(target).map(|(s, g)| (rr * s + t - g).norm()).sum::<f64>() / n;
    Ok(RigidFit { pose, mean_distance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cloud(seed: u64, n: usize) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vector3::new(rng.random_range(-80.0..80.0), rng.random_range(-100.0..100.0), rng.random_range(-60.0..60.0)))
            .collect()
    }

    #[test]
    fn identical_clouds_align_to_identity() {
        let pts = cloud(1, 30);
        let fit = rigid_align(&pts, &pts).unwrap();
        assert!(fit.pose.angle() < 1e-7);
        assert!(fit.pose.translation.norm() < 1e-9);
        assert!(fit.mean_distance < 1e-9);
    }

    #[test]
    fn recovers_known_transform() {
        let pts = cloud(2, 40);
        let truth = Pose::from_euler_deg(20.0, -10.0, 5.0, Vector3::new(3.0, -7.0, 950.0));
        let moved: Vec<_> = pts.iter().map(|p| truth.apply(p)).collect();
        let fit = rigid_align(&pts, &moved).unwrap();
        assert!(fit.mean_distance < 1e-9);
        assert!((fit.pose.rotation() - truth.rotation()).norm() < 1e-9);
        assert!((fit.pose.translation - truth.translation).norm() < 1e-7);
    }

    #[test]
    fn collinear_input_is_flagged() {
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(rigid_align(&line, &line), Err(Error::Degenerate(_))));
        assert!(rigid_align(&line[..2], &line[..2]).is_err());
    }

    /// Gauss-Newton over a rotation vector, independent of any SVD.
    fn iterative_oracle(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vector3<f64>>() / n;
        let ct = dst.iter().sum::<Vector3<f64>>() / n;
        let mut r = Matrix3::<f64>::identity();
        for _ in 0..100 {
            // Linearize R(ω)·R ≈ (I + [ω]×)·R and solve the 3×3 normal equations.
            let mut jtj = Matrix3::zeros();
            let mut jtr = Vector3::zeros();
            for (s, g) in src.iter().zip(dst) {
                let rs = r * (s - cs);
                let res = rs - (g - ct);
                let skew = Matrix3::new(0.0, rs.z, -rs.y, -rs.z, 0.0, rs.x, rs.y, -rs.x, 0.0);
                jtj += skew.transpose() * skew;
                jtr += skew.transpose() * res;
            }
            let w = -jtj.try_inverse().unwrap() * jtr;
            let angle = w.norm();
            if angle < 1e-15 {
                break;
            }
            let step = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(w), angle);
            r = step.matrix() * r;
        }
        let t = ct - r * cs;
        src.iter().zip(dst).map(|(s, g)| (r * s + t - g).norm()).sum::<f64>() / n
    }

    #[test]
    fn noisy_residual_matches_iterative_oracle() {
        let pts = cloud(3, 60);
        let truth = Pose::from_euler_deg(-12.0, 8.0, 3.0, Vector3::new(-4.0, 2.0, 1000.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noisy: Vec<_> = pts
            .iter()
            .map(|p| truth.apply(p) + Vector3::from_fn(|_, _| 2.0 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let fit = rigid_align(&pts, &noisy).unwrap();
        let oracle = iterative_oracle(&pts, &noisy);
        assert!((fit.mean_distance - oracle).abs() < 1e-6, "{} vs {oracle}", fit.mean_distance);
    }
}
