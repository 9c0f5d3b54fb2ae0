use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use crate::geom::{
    distortion_factor, distortion_factor_derivative, undistort_to_plane, ImageFrame,
    RadialDistortion,
};

/// Smallest camera-frame depth for which a point is considered projectable.
pub(crate) const MIN_DEPTH: f64 = 1e-9;

/// Pixel projection model: pinhole with normalized focal length, forward
/// division distortion, then the frame's denormalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub distortion: RadialDistortion,
    pub frame: ImageFrame,
}

/// Projection of a camera-frame point with its derivatives.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionJacobian {
    pub pixel: Vector2<f64>,
    pub d_point: Matrix2x3<f64>,
    pub d_focal: Vector2<f64>,
    pub d_lambda: Vector2<f64>,
}

impl Camera {
    pub fn new(focal: f64, distortion: RadialDistortion, frame: ImageFrame) -> Self {
        Self {
            focal,
            distortion,
            frame,
        }
    }

    /// Unit ray in the camera frame through a pixel.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Option<Vector3<f64>> {
        let u = undistort_to_plane(&self.frame.normalize(pixel), self.distortion).ok()?;
        Some(Vector3::new(u.x / self.focal, u.y / self.focal, 1.0).normalize())
    }

    pub fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x.z <= MIN_DEPTH {
            return None;
        }
        let q = Vector2::new(x.x / x.z, x.y / x.z) * self.focal;
        let g = distortion_factor(self.distortion.lambda * q.norm_squared())?;
        Some(self.frame.denormalize(&(q * g)))
    }

    pub(crate) fn project_with_jacobian(&self, x: &Vector3<f64>) -> Option<ProjectionJacobian> {
        if x.z <= MIN_DEPTH {
            return None;
        }
        let lambda = self.distortion.lambda;
        let iz = 1.0 / x.z;
        let m = Vector2::new(x.x * iz, x.y * iz);
        let q = m * self.focal;
        let r2 = q.norm_squared();
        let t = lambda * r2;
        let g = distortion_factor(t)?;
        let dg = distortion_factor_derivative(t);
        let s = self.frame.scale();
        let dp_dq = Matrix2::identity() * g + q * q.transpose() * (2.0 * lambda * dg);
        let dm_dx = Matrix2x3::new(iz, 0.0, -x.x * iz * iz, 0.0, iz, -x.y * iz * iz);
        Some(ProjectionJacobian {
            pixel: self.frame.denormalize(&(q * g)),
            d_point: dp_dq * dm_dx * (self.focal * s),
            d_focal: dp_dq * m * s,
            d_lambda: q * (dg * r2 * s),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn camera() -> Camera {
        Camera::new(
            0.625,
            RadialDistortion::new(-0.2),
            ImageFrame::new(1920, 1080),
        )
    }

    #[test]
    fn bearing_inverts_projection() {
        let cam = camera();
        let x = Vector3::new(0.3, -0.2, 1.4);
        let px = cam.project(&x).unwrap();
        let b = cam.bearing(&px).unwrap();
        assert!((b - x.normalize()).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let cam = camera();
        let x = Vector3::new(0.35, -0.25, 1.1);
        let j = cam.project_with_jacobian(&x).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let fd = (cam.project(&xp).unwrap() - cam.project(&xm).unwrap()) / (2.0 * h);
            let an = j.d_point.column(k);
            assert!(
                (fd - an).norm() < 1e-5 * an.norm().max(1.0),
                "{k}: {fd} {an}"
            );
        }
        let with = |f: f64, l: f64| {
            Camera::new(f, RadialDistortion::new(l), cam.frame)
                .project(&x)
                .unwrap()
        };
        let fd_f = (with(cam.focal + h, -0.2) - with(cam.focal - h, -0.2)) / (2.0 * h);
        let fd_l = (with(cam.focal, -0.2 + h) - with(cam.focal, -0.2 - h)) / (2.0 * h);
        assert!((fd_f - j.d_focal).norm() < 1e-5 * j.d_focal.norm());
        assert!((fd_l - j.d_lambda).norm() < 1e-5 * j.d_lambda.norm());
    }

    #[test]
    fn points_behind_do_not_project() {
        assert!(camera().project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }
}
