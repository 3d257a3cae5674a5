use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Pose = [[f64; 4]; 3];

pub const IDENTITY_K: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
pub const IDENTITY_POSE: Pose = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
];

/// How a view relates to the central view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CameraMode {
    /// Full pinhole projection; depth labels are camera-space z.
    Projective,
    /// Rectified light-field grid: views differ only by their `(u, v)` grid
    /// position and labels are disparities. A disparity `d` moves a pixel by
    /// `d * (u - u_c) * baseline_u` horizontally and `d * (v - v_c) * baseline_v`
    /// vertically.
    LightFieldShift {
        u: f64,
        v: f64,
        baseline_u: f64,
        baseline_v: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Upper-triangular 3×3 projection matrix in pixels.
    pub intrinsics: Mat3,
    /// World-to-camera rigid transform `[R | t]`.
    pub pose: Pose,
    pub mode: CameraMode,
}

impl CameraModel {
    pub fn projective(intrinsics: Mat3, pose: Pose) -> Result<Self> {
        let cam = CameraModel {
            intrinsics,
            pose,
            mode: CameraMode::Projective,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn light_field(u: f64, v: f64, baseline: f64) -> Result<Self> {
        let cam = CameraModel {
            intrinsics: IDENTITY_K,
            pose: IDENTITY_POSE,
            mode: CameraMode::LightFieldShift {
                u,
                v,
                baseline_u: baseline,
                baseline_v: baseline,
            },
        };
        cam.validate()?;
        Ok(cam)
    }

    /// The camera of the same view after box-downsampling its image by
    /// `factor`. Light-field labels keep their units: the baselines shrink
    /// instead.
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return *self;
        }
        let f = factor as f64;
        let mut cam = *self;
        match &mut cam.mode {
            CameraMode::LightFieldShift {
                baseline_u,
                baseline_v,
                ..
            } => {
                *baseline_u /= f;
                *baseline_v /= f;
            }
            CameraMode::Projective => {
                let off = 0.5 / f - 0.5;
                let s = [[1.0 / f, 0.0, off], [0.0, 1.0 / f, off], [0.0, 0.0, 1.0]];
                cam.intrinsics = mat_mul(&s, &self.intrinsics);
            }
        }
        cam
    }

    pub fn is_light_field(&self) -> bool {
        matches!(self.mode, CameraMode::LightFieldShift { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k.iter().flatten().chain(self.pose.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Camera("non-finite entry".into()));
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return Err(Error::Camera(format!(
                "focal entries must be positive (got {}, {})",
                k[0][0], k[1][1]
            )));
        }
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(Error::Camera(
                "intrinsics must be upper triangular".into(),
            ));
        }
        if k[2][2] == 0.0 {
            return Err(Error::Camera("intrinsics K[2][2] is zero".into()));
        }
        // R Rᵀ = I
        let r = self.rotation();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|c| r[i][c] * r[j][c]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-6 {
                    return Err(Error::Camera("pose rotation is not orthonormal".into()));
                }
            }
        }
        if let CameraMode::LightFieldShift {
            u,
            v,
            baseline_u,
            baseline_v,
        } = self.mode
        {
            if ![u, v, baseline_u, baseline_v].iter().all(|x| x.is_finite()) {
                return Err(Error::Camera("non-finite light-field entry".into()));
            }
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        let p = &self.pose;
        [
            [p[0][0], p[0][1], p[0][2]],
            [p[1][0], p[1][1], p[1][2]],
            [p[2][0], p[2][1], p[2][2]],
        ]
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.pose[0][3], self.pose[1][3], self.pose[2][3]]
    }

    /// Projects a world point; returns `(x, y, depth)` or `None` when the point
    /// is not in front of the camera.
    pub fn project_world(&self, world: [f64; 3]) -> Option<(f64, f64, f64)> {
        let cam = add(mat_vec(&self.rotation(), world), self.translation());
        if !(cam[2] > 0.0) {
            return None;
        }
        let p = mat_vec(&self.intrinsics, cam);
        Some((p[0] / p[2], p[1] / p[2], cam[2]))
    }

    /// Camera-space direction through pixel `(x, y)`, scaled to unit z.
    pub fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        let r = mat_vec(&invert_upper(&self.intrinsics), [x, y, 1.0]);
        [r[0] / r[2], r[1] / r[2], 1.0]
    }

    /// Back-projects pixel `(x, y)` at camera depth `depth` to world space.
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        let ray = self.ray(x, y);
        let cam = [ray[0] * depth, ray[1] * depth, depth];
        let r = self.rotation();
        let d = sub(cam, self.translation());
        // Rᵀ d
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }
}

/// Pixel coordinate after box-downsampling by `factor`.
pub fn downsample_coord(v: f64, factor: usize) -> f64 {
    let f = factor.max(1) as f64;
    (v + 0.5) / f - 0.5
}

pub(crate) fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub(crate) fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub(crate) fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub(crate) fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Inverse of an upper-triangular 3×3 matrix.
pub(crate) fn invert_upper(k: &Mat3) -> Mat3 {
    let (a, b, c) = (k[0][0], k[0][1], k[0][2]);
    let (d, e) = (k[1][1], k[1][2]);
    let f = k[2][2];
    [
        [1.0 / a, -b / (a * d), (b * e - c * d) / (a * d * f)],
        [0.0, 1.0 / d, -e / (d * f)],
        [0.0, 0.0, 1.0 / f],
    ]
}
