//! Thin-lens optics and pinhole projection.
//!
//! Focal length and circle of confusion are carried in millimeters, all scene
//! distances (focus, near/far limits, hyperfocal) in meters. The only place
//! where the two meet is [`mm_to_m`].
//!
//! Camera frame: x right, y down, z forward (depth), matching pixel axes.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("non-physical depth-of-field configuration (H + F - 2f = {denominator})")]
    SingularDof { denominator: f64 },
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("calibration matrix is not invertible")]
    SingularK,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid camera spec: {0}")]
    InvalidSpec(String),
}

/// Millimeters to meters. Every mm→m conversion in the crate goes through here.
#[inline]
pub fn mm_to_m(mm: f64) -> f64 {
    mm * 1e-3
}

/// Fixed sensor and image description of a camera.
///
/// The pixel-per-millimeter ratios are derived from the image and sensor
/// dimensions rather than stored, so they cannot disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSensorSpec {
    /// Image width in pixels.
    pub image_width: f64,
    /// Image height in pixels.
    pub image_height: f64,
    /// Sensor width in millimeters.
    pub sensor_width: f64,
    /// Sensor height in millimeters.
    pub sensor_height: f64,
    pub principal_u: f64,
    pub principal_v: f64,
    #[serde(default)]
    pub skew: f64,
    /// Circle of confusion in millimeters.
    pub circle_of_confusion: f64,
}

impl CameraSensorSpec {
    /// 960×540 px on a 23.76×13.365 mm sensor, principal point at the image
    /// center, zero skew, c = 0.03 mm.
    pub fn simulation_default() -> Self {
        Self {
            image_width: 960.0,
            image_height: 540.0,
            sensor_width: 23.76,
            sensor_height: 13.365,
            principal_u: 480.0,
            principal_v: 270.0,
            skew: 0.0,
            circle_of_confusion: 0.03,
        }
    }

    /// 675×380 px on a 6.29×4.71 mm sensor (small board camera).
    pub fn board_camera() -> Self {
        Self {
            image_width: 675.0,
            image_height: 380.0,
            sensor_width: 6.29,
            sensor_height: 4.71,
            principal_u: 337.0,
            principal_v: 190.0,
            skew: 0.0,
            circle_of_confusion: 0.001,
        }
    }

    pub fn beta_x(&self) -> f64 {
        self.image_width / self.sensor_width
    }

    pub fn beta_y(&self) -> f64 {
        self.image_height / self.sensor_height
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        let positive = [
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("sensor_width", self.sensor_width),
            ("sensor_height", self.sensor_height),
            ("circle_of_confusion", self.circle_of_confusion),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(OpticsError::InvalidSpec(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if !(self.principal_u.is_finite() && self.principal_v.is_finite() && self.skew.is_finite())
        {
            return Err(OpticsError::InvalidSpec(
                "non-finite principal point or skew".into(),
            ));
        }
        Ok(())
    }

    /// Whether a pixel lies inside the image rectangle.
    pub fn contains_pixel(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.image_width && px.y <= self.image_height
    }
}

/// Lens state: focal length (mm), focus distance (m), aperture (f-number).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicState {
    pub focal_length: f64,
    pub focus_distance: f64,
    pub aperture: f64,
}

impl IntrinsicState {
    pub fn new(focal_length: f64, focus_distance: f64, aperture: f64) -> Self {
        Self {
            focal_length,
            focus_distance,
            aperture,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        for (name, v) in [
            ("focal_length", self.focal_length),
            ("focus_distance", self.focus_distance),
            ("aperture", self.aperture),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(OpticsError::InvalidIntrinsics(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Far limit of acceptable sharpness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FarDistance {
    Finite(f64),
    Infinite,
}

impl FarDistance {
    pub fn is_infinite(&self) -> bool {
        matches!(self, FarDistance::Infinite)
    }

    /// `f64::INFINITY` for the infinite case.
    pub fn as_f64(&self) -> f64 {
        match self {
            FarDistance::Finite(v) => *v,
            FarDistance::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthOfField {
    pub hyperfocal: f64,
    pub near_distance: f64,
    pub far_distance: FarDistance,
}

/// Hyperfocal distance `f²/(A·c) + f`, evaluated in millimeters and returned in
/// meters.
pub fn hyperfocal(intr: &IntrinsicState, spec: &CameraSensorSpec) -> f64 {
    let f = intr.focal_length;
    mm_to_m(f * f / (intr.aperture * spec.circle_of_confusion) + f)
}

/// Near and far limits of the depth of field.
pub fn depth_of_field(
    intr: &IntrinsicState,
    spec: &CameraSensorSpec,
) -> Result<DepthOfField, OpticsError> {
    intr.validate()?;
    let h = hyperfocal(intr, spec);
    let f = mm_to_m(intr.focal_length);
    let focus = intr.focus_distance;
    let denominator = h + focus - 2.0 * f;
    if denominator <= 0.0 {
        return Err(OpticsError::SingularDof { denominator });
    }
    let near_distance = focus * (h - f) / denominator;
    let far_distance = if focus >= h {
        FarDistance::Infinite
    } else {
        FarDistance::Finite(focus * (h - f) / (h - focus))
    };
    Ok(DepthOfField {
        hyperfocal: h,
        near_distance,
        far_distance,
    })
}

/// `K = [[βx·f, s, cu], [0, βy·f, cv], [0, 0, 1]]` with f in millimeters.
pub fn calibration_matrix(
    intr: &IntrinsicState,
    spec: &CameraSensorSpec,
) -> Result<Matrix3<f64>, OpticsError> {
    intr.validate()?;
    Ok(calibration_matrix_unchecked(intr.focal_length, spec))
}

pub(crate) fn calibration_matrix_unchecked(focal_mm: f64, spec: &CameraSensorSpec) -> Matrix3<f64> {
    Matrix3::new(
        spec.beta_x() * focal_mm,
        spec.skew,
        spec.principal_u,
        0.0,
        spec.beta_y() * focal_mm,
        spec.principal_v,
        0.0,
        0.0,
        1.0,
    )
}

/// Pinhole projection of a camera-frame point.
pub fn project(rel_pos: &Vector3<f64>, k: &Matrix3<f64>) -> Result<Vector2<f64>, OpticsError> {
    if !(rel_pos.z > 0.0) {
        return Err(OpticsError::BehindCamera { depth: rel_pos.z });
    }
    let h = k * rel_pos;
    Ok(Vector2::new(h.x / rel_pos.z, h.y / rel_pos.z))
}

/// Camera-frame point at `depth` along the ray through `pixel`.
pub fn back_project(
    pixel: &Vector2<f64>,
    depth: f64,
    k: &Matrix3<f64>,
) -> Result<Vector3<f64>, OpticsError> {
    if !(depth > 0.0) {
        return Err(OpticsError::BehindCamera { depth });
    }
    let k_inv = k.try_inverse().ok_or(OpticsError::SingularK)?;
    if !k_inv.iter().all(|v| v.is_finite()) {
        return Err(OpticsError::SingularK);
    }
    Ok(k_inv * Vector3::new(pixel.x, pixel.y, 1.0) * depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sim() -> CameraSensorSpec {
        CameraSensorSpec::simulation_default()
    }

    #[test]
    fn hyperfocal_worked_values() {
        let h = hyperfocal(&IntrinsicState::new(35.0, 10.0, 1.2), &sim());
        assert!((h - 34.0628).abs() < 1e-4, "{h}");
        let h = hyperfocal(&IntrinsicState::new(15.0, 10.0, 22.0), &sim());
        assert!((h - 0.3559).abs() < 1e-4, "{h}");
        let h = hyperfocal(&IntrinsicState::new(35.0, 10.0, 1e12), &sim());
        assert!((h - 0.035).abs() < 1e-9, "{h}");
    }

    #[test]
    fn dof_worked_values() {
        let dof = depth_of_field(&IntrinsicState::new(35.0, 10.0, 1.2), &sim()).unwrap();
        assert!((dof.near_distance - 7.735).abs() < 1e-3);
        match dof.far_distance {
            FarDistance::Finite(v) => assert!((v - 14.141).abs() < 1e-3),
            FarDistance::Infinite => panic!("expected finite far distance"),
        }
    }

    #[test]
    fn dof_at_upper_bounds_is_finite() {
        // H = 6944.94 m > F = 2000 m, so the far limit stays finite.
        let dof = depth_of_field(&IntrinsicState::new(500.0, 2000.0, 1.2), &sim()).unwrap();
        assert!((dof.hyperfocal - 6944.944444).abs() < 1e-5);
        assert!((dof.near_distance - 1552.881838).abs() < 1e-5);
        assert!((dof.far_distance.as_f64() - 2808.704738).abs() < 1e-5);
    }

    #[test]
    fn focus_at_hyperfocal_gives_infinite_far() {
        let mut intr = IntrinsicState::new(35.0, 1.0, 1.2);
        intr.focus_distance = hyperfocal(&intr, &sim());
        let dof = depth_of_field(&intr, &sim()).unwrap();
        assert!((dof.near_distance - dof.hyperfocal / 2.0).abs() < 1e-9 * dof.hyperfocal);
        assert!(dof.far_distance.is_infinite());
    }

    #[test]
    fn calibration_matrix_values() {
        let k = calibration_matrix(&IntrinsicState::new(35.0, 10.0, 1.2), &sim()).unwrap();
        assert!((k[(0, 0)] - 1414.0).abs() / 1414.0 < 1e-3);
        assert!((k[(1, 1)] - 1414.0).abs() / 1414.0 < 1e-3);
        assert_eq!(k[(0, 2)], 480.0);
        assert_eq!(k[(1, 2)], 270.0);
        assert_eq!(k[(0, 1)], 0.0);
        assert_eq!(k[(2, 2)], 1.0);

        // Board camera: the printed ratios (107.3, 80.6) are rounded from the
        // sensor dimensions, hence the 0.2% tolerance.
        let k = calibration_matrix(
            &IntrinsicState::new(5.0, 1.0, 2.0),
            &CameraSensorSpec::board_camera(),
        )
        .unwrap();
        assert!((k[(0, 0)] - 536.5).abs() / 536.5 < 2e-3);
        assert!((k[(1, 1)] - 403.0).abs() / 403.0 < 2e-3);
        assert_eq!((k[(0, 2)], k[(1, 2)]), (337.0, 190.0));

        let err = calibration_matrix(&IntrinsicState::new(0.0, 10.0, 1.2), &sim());
        assert!(matches!(err, Err(OpticsError::InvalidIntrinsics(_))));
    }

    #[test]
    fn projection_examples() {
        let k = calibration_matrix(&IntrinsicState::new(35.0, 10.0, 1.2), &sim()).unwrap();
        let px = project(&Vector3::new(0.0, 0.0, 10.0), &k).unwrap();
        assert_eq!((px.x, px.y), (480.0, 270.0));
        let px = project(&Vector3::new(1.0, 0.0, 10.0), &k).unwrap();
        assert!((px.x - 621.4).abs() < 0.05 && (px.y - 270.0).abs() < 1e-12);
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &k),
            Err(OpticsError::BehindCamera { .. })
        ));

        let p = back_project(&Vector2::new(480.0, 270.0), 10.0, &k).unwrap();
        assert!((p - Vector3::new(0.0, 0.0, 10.0)).norm() < 1e-12);
        let p = back_project(&px, 10.0, &k).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 10.0)).norm() < 1e-12);

        assert_eq!(
            back_project(&px, 10.0, &Matrix3::zeros()),
            Err(OpticsError::SingularK)
        );
    }

    proptest! {
        #[test]
        fn back_project_inverts_project(
            x in -20.0..20.0f64, y in -20.0..20.0f64, z in 0.1..200.0f64,
            f in 15.0..500.0f64,
        ) {
            let k = calibration_matrix_unchecked(f, &sim());
            let p = Vector3::new(x, y, z);
            let px = project(&p, &k).unwrap();
            let back = back_project(&px, z, &k).unwrap();
            prop_assert!((back - p).norm() <= 1e-9 * p.norm().max(1.0));
            let px2 = project(&back, &k).unwrap();
            prop_assert!((px2 - px).norm() < 1e-9);
        }

        #[test]
        fn hyperfocal_is_monotone(f in 15.0..500.0f64, a in 1.2..22.0f64, da in 0.01..5.0f64, df in 0.1..50.0f64) {
            let spec = sim();
            let h = hyperfocal(&IntrinsicState::new(f, 10.0, a), &spec);
            prop_assert!(hyperfocal(&IntrinsicState::new(f, 10.0, a + da), &spec) < h);
            prop_assert!(hyperfocal(&IntrinsicState::new(f + df, 10.0, a), &spec) > h);
        }

        #[test]
        fn dof_brackets_focus(f in 15.0..500.0f64, a in 1.2..22.0f64, focus in 4.0..2000.0f64) {
            let dof = depth_of_field(&IntrinsicState::new(f, focus, a), &sim()).unwrap();
            prop_assert!(dof.near_distance > 0.0);
            prop_assert!(dof.near_distance <= focus);
            if let FarDistance::Finite(far) = dof.far_distance {
                prop_assert!(dof.near_distance < focus && focus < far);
            }
        }
    }
}
