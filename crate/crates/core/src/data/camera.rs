//! Pinhole cameras (OpenCV convention: x right, y down, z forward).

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{Ray, SceneBounds};
use crate::scalar::Real;
use crate::vec3::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world `[R | t]`, row-major 3x4.
    pub pose: [[f64; 4]; 3],
    pub image: String,
    pub split: Split,
    /// Embedding row; `None` for held-out views.
    pub appearance_id: Option<usize>,
}

impl Camera {
    /// Camera at `eye` looking at `target` with `up` as the world up hint.
    pub fn look_at(eye: Vec3<f64>, target: Vec3<f64>, up: Vec3<f64>, width: usize, height: usize, fov_x_deg: f64) -> Self {
        let f = (target - eye).normalized();
        let r = f.cross(up).normalized();
        let d = f.cross(r);
        let fx = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        let pose = [[r.x, d.x, f.x, eye.x], [r.y, d.y, f.y, eye.y], [r.z, d.z, f.z, eye.z]];
        Self {
            width,
            height,
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            pose,
            image: String::new(),
            split: Split::Train,
            appearance_id: None,
        }
    }

    pub fn origin(&self) -> Vec3<f64> {
        Vec3::new(self.pose[0][3], self.pose[1][3], self.pose[2][3])
    }

    pub fn rotate(&self, v: Vec3<f64>) -> Vec3<f64> {
        let p = &self.pose;
        Vec3::new(
            p[0][0] * v.x + p[0][1] * v.y + p[0][2] * v.z,
            p[1][0] * v.x + p[1][1] * v.y + p[1][2] * v.z,
            p[2][0] * v.x + p[2][1] * v.y + p[2][2] * v.z,
        )
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, x: Vec3<f64>) -> Vec3<f64> {
        let v = x - self.origin();
        let p = &self.pose;
        Vec3::new(
            p[0][0] * v.x + p[1][0] * v.y + p[2][0] * v.z,
            p[0][1] * v.x + p[1][1] * v.y + p[2][1] * v.z,
            p[0][2] * v.x + p[1][2] * v.y + p[2][2] * v.z,
        )
    }

    /// Continuous pixel coordinates of a world point in front of the camera.
    pub fn project(&self, x: Vec3<f64>) -> (f64, f64) {
        let c = self.to_camera(x);
        (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(DataError::InvalidCamera("focal lengths and image size must be positive".into()));
        }
        let col = |j: usize| Vec3::new(self.pose[0][j], self.pose[1][j], self.pose[2][j]);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (col(i).dot(col(j)) - expect).abs() > 1e-5 {
                    return Err(DataError::InvalidCamera("pose rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    /// World-space ray through the center of pixel `(px, py)`.
    pub fn pixel_ray<T: Real>(&self, px: usize, py: usize, bounds: &SceneBounds<T>) -> Result<Ray<T>, DataError> {
        if px >= self.width || py >= self.height {
            return Err(DataError::OutOfImage { px, py, width: self.width, height: self.height });
        }
        let d = Vec3::new((px as f64 + 0.5 - self.cx) / self.fx, (py as f64 + 0.5 - self.cy) / self.fy, 1.0);
        let dir = self.rotate(d).normalized();
        let ray = Ray::new(self.origin().cast(), dir.cast(), bounds.t_near(), bounds.t_far())?;
        Ok(ray)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at(Vec3::new(3.0, -2.0, 1.5), Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.0, 0.0, 1.0), 40, 30, 60.0)
    }

    #[test]
    fn look_at_is_orthonormal_and_upright() {
        let c = cam();
        c.validate().unwrap();
        // image "down" has a negative world-z component
        assert!(c.rotate(Vec3::new(0.0, 1.0, 0.0)).z < 0.0);
    }

    #[test]
    fn principal_point_ray_is_forward() {
        let mut c = cam();
        c.cx = 20.5;
        c.cy = 15.5;
        let b = SceneBounds::new(Vec3::zero(), 1.0);
        let r = c.pixel_ray::<f64>(20, 15, &b).unwrap();
        let fwd = c.rotate(Vec3::new(0.0, 0.0, 1.0));
        assert!((r.direction - fwd).norm() < 1e-12);
    }

    #[test]
    fn out_of_image() {
        let b = SceneBounds::new(Vec3::zero(), 1.0);
        assert!(matches!(cam().pixel_ray::<f64>(40, 0, &b), Err(DataError::OutOfImage { .. })));
    }
}
