use nalgebra::Vector3;

use crate::error::{Error, Result};

const C0: f64 = 0.282_094_791_773_878_14; // 1/(2√π)
const C1: f64 = 0.488_602_511_902_919_9; // √(3/4π)
const C2: f64 = 1.092_548_430_592_079_2; // ½√(15/π)
const C3: f64 = 0.315_391_565_252_520_05; // ¼√(5/π)
const C4: f64 = 0.546_274_215_296_039_6; // ¼√(15/π)

/// Nine spherical-harmonics lighting coefficients shared by r, g and b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShLighting {
    pub gamma: [f64; 9],
}

impl ShLighting {
    /// Ambient light that reproduces albedo exactly.
    pub fn unit_ambient() -> Self {
        let mut gamma = [0.0; 9];
        gamma[0] = 1.0 / C0;
        Self { gamma }
    }

    /// Irradiance factor for a unit normal.
    #[inline]
    pub fn irradiance(&self, n: &Vector3<f64>) -> f64 {
        let y = sh_basis_unchecked(n);
        self.gamma.iter().zip(&y).map(|(g, b)| g * b).sum()
    }

    /// Gradient of [`ShLighting::irradiance`] with respect to the normal.
    #[inline]
    pub fn irradiance_normal_gradient(&self, n: &Vector3<f64>) -> Vector3<f64> {
        let j = sh_basis_jacobian(n);
        let mut g = Vector3::zeros();
        for (k, row) in j.iter().enumerate() {
            g += self.gamma[k] * Vector3::new(row[0], row[1], row[2]);
        }
        g
    }
}

/// Real spherical-harmonics basis, bands 0–2, ordered
/// `(Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22)`.
pub fn sh_basis(n: &Vector3<f64>) -> Result<[f64; 9]> {
    let norm = n.norm();
    if !((norm - 1.0).abs() <= 1e-6) {
        return Err(Error::NonUnitNormal(norm));
    }
    Ok(sh_basis_unchecked(n))
}

#[inline]
pub(crate) fn sh_basis_unchecked(n: &Vector3<f64>) -> [f64; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C3 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C4 * (x * x - y * y),
    ]
}

/// Rows are `∂Y_k/∂(x, y, z)`.
fn sh_basis_jacobian(n: &Vector3<f64>) -> [[f64; 3]; 9] {
    let (x, y, z) = (n.x, n.y, n.z);
    [
        [0.0, 0.0, 0.0],
        [0.0, C1, 0.0],
        [0.0, 0.0, C1],
        [C1, 0.0, 0.0],
        [C2 * y, C2 * x, 0.0],
        [0.0, C2 * z, C2 * y],
        [0.0, 0.0, 6.0 * C3 * z],
        [C2 * z, 0.0, C2 * x],
        [2.0 * C4 * x, -2.0 * C4 * y, 0.0],
    ]
}

/// Lambertian shading `albedo · (γ · Y(n))` before clamping.
#[inline]
pub fn shade_unclamped(albedo: &[f64; 3], normal: &Vector3<f64>, lighting: &ShLighting) -> [f64; 3] {
    let e = lighting.irradiance(normal);
    albedo.map(|a| a * e)
}

/// Lambertian shading clamped to `[0, 1]`.
pub fn shade(albedo: &[f64; 3], normal: &Vector3<f64>, lighting: &ShLighting) -> Result<[f64; 3]> {
    sh_basis(normal)?;
    Ok(shade_unclamped(albedo, normal, lighting).map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_band() {
        for n in [Vector3::x(), Vector3::new(0.6, 0.0, -0.8), -Vector3::z()] {
            assert!((sh_basis(&n).unwrap()[0] - 0.282095).abs() < 1e-6);
        }
    }

    #[test]
    fn band_one_on_z_axis() {
        let y = sh_basis(&Vector3::z()).unwrap();
        let c = (3.0 / (4.0 * std::f64::consts::PI)).sqrt();
        assert!((y[1] - 0.0).abs() < 1e-12);
        assert!((y[2] - c).abs() < 1e-12);
        assert!((y[3] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn non_unit_normal_rejected() {
        assert!(matches!(sh_basis(&Vector3::new(0.0, 0.0, 1.1)), Err(Error::NonUnitNormal(_))));
    }

    #[test]
    fn monte_carlo_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let samples = 100_000;
        let mut gram = [[0.0f64; 9]; 9];
        for _ in 0..samples {
            let v = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
            let y = sh_basis(&v).unwrap();
            for i in 0..9 {
                for j in 0..9 {
                    gram[i][j] += y[i] * y[j];
                }
            }
        }
        let area = 4.0 * std::f64::consts::PI / samples as f64;
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[i][j] * area - want).abs() < 2e-2, "({i},{j}) = {}", gram[i][j] * area);
            }
        }
    }

    #[test]
    fn shading_cases() {
        let albedo = [0.3, 0.6, 0.9];
        let n = Vector3::new(0.0, 0.6, -0.8);
        let out = shade(&albedo, &n, &ShLighting::unit_ambient()).unwrap();
        for c in 0..3 {
            assert!((out[c] - albedo[c]).abs() < 1e-12);
        }
        let black = shade(&albedo, &n, &ShLighting { gamma: [0.0; 9] }).unwrap();
        assert_eq!(black, [0.0; 3]);
    }

    #[test]
    fn lighting_gradient_by_finite_differences() {
        let albedo = [0.4, 0.5, 0.7];
        let n = Vector3::new(0.36, -0.48, -0.8);
        let gamma = [1.2, 0.3, -0.2, 0.1, 0.05, -0.1, 0.2, 0.0, -0.05];
        let y = sh_basis(&n).unwrap();
        for k in 0..9 {
            let mut gp = gamma;
            let mut gm = gamma;
            gp[k] += 1e-6;
            gm[k] -= 1e-6;
            let fp = shade_unclamped(&albedo, &n, &ShLighting { gamma: gp });
            let fm = shade_unclamped(&albedo, &n, &ShLighting { gamma: gm });
            for c in 0..3 {
                let fd = (fp[c] - fm[c]) / 2e-6;
                assert!((fd - albedo[c] * y[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn normal_gradient_by_finite_differences() {
        let light = ShLighting { gamma: [1.0, 0.4, -0.3, 0.2, 0.1, 0.3, -0.2, 0.15, 0.05] };
        let n = Vector3::new(0.2, 0.3, -0.9);
        let g = light.irradiance_normal_gradient(&n);
        for a in 0..3 {
            let mut np = n;
            let mut nm = n;
            np[a] += 1e-6;
            nm[a] -= 1e-6;
            let fd = (light.irradiance(&np) - light.irradiance(&nm)) / 2e-6;
            assert!((fd - g[a]).abs() < 1e-7);
        }
    }

    #[test]
    fn shading_is_linear_before_clamp() {
        let n = Vector3::new(0.0, 0.0, -1.0);
        let a = ShLighting { gamma: [1.0, 0.1, 0.2, 0.0, 0.0, 0.0, 0.1, 0.0, 0.0] };
        let b = ShLighting { gamma: [0.5, -0.1, 0.3, 0.2, 0.0, 0.1, 0.0, 0.0, 0.2] };
        let sum = ShLighting { gamma: std::array::from_fn(|k| a.gamma[k] + 2.0 * b.gamma[k]) };
        let albedo = [0.2, 0.4, 0.6];
        let (sa, sb, ss) = (
            shade_unclamped(&albedo, &n, &a),
            shade_unclamped(&albedo, &n, &b),
            shade_unclamped(&albedo, &n, &sum),
        );
        for c in 0..3 {
            assert!((ss[c] - (sa[c] + 2.0 * sb[c])).abs() < 1e-12);
        }
        let double = shade_unclamped(&albedo.map(|v| 2.0 * v), &n, &a);
        for c in 0..3 {
            assert!((double[c] - 2.0 * sa[c]).abs() < 1e-12);
        }
    }
}
