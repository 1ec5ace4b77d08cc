//! Rigid-body poses between sensor frames and the global frame.
//!
//! The global frame is right-handed and `z`-up.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::cloud::PointCloud;
use crate::error::{DecodeError, Error, Result};

/// Tolerance for re-validating rotation matrices on ingestion.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Column names of the pose CSV, in order.
pub const POSE_CSV_HEADER: [&str; 13] = [
    "frame_id", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
];

/// A rotation followed by a translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6DoF {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose6DoF {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6DoF {
    /// Validates that `rotation` is orthonormal with determinant +1.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::validation("pose has non-finite entries"));
        }
        let gram_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if gram_err > ORTHONORMAL_TOL {
            return Err(Error::validation(format!(
                "rotation is not orthonormal (max |R^T R - I| = {gram_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::validation(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::from(t),
        }
    }

    /// Rotation by `angle` radians about the up (`z`) axis, then translation.
    pub fn from_yaw(angle: f64, t: [f64; 3]) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix(),
            translation: Vector3::from(t),
        }
    }

    /// From a row-major 3x3 rotation and a translation.
    pub fn from_row_major(r: [f64; 9], t: [f64; 3]) -> Result<Self> {
        Self::new(Matrix3::from_row_slice(&r), Vector3::from(t))
    }

    /// Row-major rotation followed by translation (12 values).
    pub fn to_row_major(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.rotation[(r, c)];
            }
            out[9 + r] = self.translation[r];
        }
        out
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6DoF) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + t.x,
            r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + t.y,
            r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + t.z,
        ]
    }

    /// Maps every point through the pose; channels pass through unchanged.
    pub fn transform_points(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.points().iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::validation("cloud has non-finite coordinates"));
        }
        let points = cloud.points().iter().map(|&p| self.transform_point(p)).collect();
        Ok(PointCloud::from_parts_unchecked(
            points,
            cloud.channels().to_vec(),
            cloud.n_channels(),
        ))
    }
}

/// Parses a pose CSV (`frame_id, r00..r22, tx, ty, tz`, header required).
pub fn parse_pose_csv(text: &str) -> Result<Vec<(u64, Pose6DoF)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| DecodeError::malformed(format!("pose csv header: {e}")))?;
    if headers.iter().ne(POSE_CSV_HEADER.iter().copied()) {
        return Err(DecodeError::malformed(format!(
            "pose csv header must be `{}`",
            POSE_CSV_HEADER.join(",")
        ))
        .into());
    }
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record =
            record.map_err(|e| DecodeError::malformed(format!("pose csv row {}: {e}", line + 1)))?;
        if record.len() != POSE_CSV_HEADER.len() {
            return Err(DecodeError::malformed(format!(
                "pose csv row {} has {} fields",
                line + 1,
                record.len()
            ))
            .into());
        }
        let frame_id: u64 = record[0]
            .parse()
            .map_err(|_| DecodeError::malformed(format!("pose csv row {}: bad frame_id", line + 1)))?;
        let mut vals = [0.0f64; 12];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = record[k + 1].parse().map_err(|_| {
                DecodeError::malformed(format!("pose csv row {}: bad number", line + 1))
            })?;
        }
        let mut r = [0.0; 9];
        r.copy_from_slice(&vals[..9]);
        let pose = Pose6DoF::from_row_major(r, [vals[9], vals[10], vals[11]])?;
        out.push((frame_id, pose));
    }
    Ok(out)
}

/// Formats poses in the pose CSV layout. Values use shortest round-trip
/// formatting so parsing returns identical bits.
pub fn format_pose_csv(rows: &[(u64, Pose6DoF)]) -> String {
    let mut out = POSE_CSV_HEADER.join(",");
    out.push('\n');
    for (id, pose) in rows {
        out.push_str(&id.to_string());
        for v in pose.to_row_major() {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}
