use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Geometric tolerance used for orthonormality checks, degenerate-extent
/// detection, and strict-overlap tests.
pub const GEOM_EPS: f64 = 1e-9;

/// Position + orientation of a graph vertex or robot-agnostic object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl Pose {
    pub fn new(position: Vector3<f64>, rotation: Matrix3<f64>) -> Self {
        Self { position, rotation }
    }

    /// Identity orientation at the given position.
    pub fn at(position: Vector3<f64>) -> Self {
        Self { position, rotation: Matrix3::identity() }
    }

    /// True when the rotation part is orthonormal with det ≈ +1.
    pub fn rotation_valid(&self, tol: f64) -> bool {
        let r = self.rotation;
        let should_be_id = r.transpose() * r - Matrix3::identity();
        should_be_id.norm() <= tol * 10.0 && (r.determinant() - 1.0).abs() <= tol * 10.0
    }
}

/// Axis-aligned box described by its center and half-extents.
/// Half-extents may be zero along any axis (planes, segments, points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl Aabb {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self { center, half_extents }
    }

    pub fn from_min_max(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { center: (min + max) * 0.5, half_extents: (max - min) * 0.5 }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vector3<f64> {
        self.center + self.half_extents
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    /// Smallest box containing both inputs.
    pub fn union(&self, other: &Aabb) -> Aabb {
        let min = self.min().inf(&other.min());
        let max = self.max().sup(&other.max());
        Aabb::from_min_max(min, max)
    }

    /// Per-axis widths of the intersection; negative where separated.
    pub fn axis_overlaps(&self, other: &Aabb) -> [f64; 3] {
        let mut o = [0.0; 3];
        for k in 0..3 {
            let lo = (self.min()[k]).max(other.min()[k]);
            let hi = (self.max()[k]).min(other.max()[k]);
            o[k] = hi - lo;
        }
        o
    }

    /// Distance from a point to this box (0 inside).
    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let lo = self.min()[k];
            let hi = self.max()[k];
            let v = if p[k] < lo {
                lo - p[k]
            } else if p[k] > hi {
                p[k] - hi
            } else {
                0.0
            };
            d2 += v * v;
        }
        d2.sqrt()
    }
}

/// True iff the boxes intersect with strictly positive volume.
/// Plane/edge contact and coincident degenerate boxes do not count.
pub fn positive_volume_overlap(a: &Aabb, b: &Aabb) -> bool {
    a.axis_overlaps(b).iter().all(|&o| o > GEOM_EPS)
}

/// True iff `inner` lies within `outer` on every axis (ε-tolerant, so
/// shared faces count as inside).
pub fn contains_box(outer: &Aabb, inner: &Aabb) -> bool {
    (0..3).all(|k| {
        inner.min()[k] >= outer.min()[k] - GEOM_EPS && inner.max()[k] <= outer.max()[k] + GEOM_EPS
    })
}

/// Fractional overlap test: true iff the intersection measure is at least
/// `kappa` times the smaller box's measure. Axes along which either box is
/// degenerate (zero extent) only require contact; the measure is taken over
/// the remaining axes, so volumes compare by volume, a rectangle against a
/// volume compares by area, and so on.
pub fn overlap_test(a: &Aabb, b: &Aabb, kappa: f64) -> bool {
    let overlaps = a.axis_overlaps(b);
    let mut inter = 1.0;
    let mut measure_a = 1.0;
    let mut measure_b = 1.0;
    for k in 0..3 {
        let ea = 2.0 * a.half_extents[k];
        let eb = 2.0 * b.half_extents[k];
        if ea.min(eb) <= GEOM_EPS {
            // Degenerate axis: the thin box must touch the other's interval.
            if overlaps[k] < -GEOM_EPS {
                return false;
            }
        } else {
            if overlaps[k] <= 0.0 {
                return false;
            }
            inter *= overlaps[k];
            measure_a *= ea;
            measure_b *= eb;
        }
    }
    inter >= kappa * measure_a.min(measure_b) - GEOM_EPS
}

/// Rigid-body transform: rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose { position: self.apply(&pose.position), rotation: self.rotation * pose.rotation }
    }

    /// Transform an axis-aligned box, returning the tight AABB of the result.
    pub fn apply_aabb(&self, b: &Aabb) -> Aabb {
        let center = self.apply(&b.center);
        let mut he = Vector3::zeros();
        for k in 0..3 {
            he[k] = (0..3).map(|j| self.rotation[(k, j)].abs() * b.half_extents[j]).sum();
        }
        Aabb::new(center, he)
    }

    /// The transform mapping `from`'s pose onto `to`'s pose exactly:
    /// R = R_to·R_fromᵀ, t = p_to − R·p_from.
    pub fn aligning(from: &Pose, to: &Pose) -> Self {
        let rotation = to.rotation * from.rotation.transpose();
        let translation = to.position - rotation * from.position;
        Self { rotation, translation }
    }
}

/// Closed-form least-squares rigid alignment mapping `source` points onto
/// `target` points (index-wise correspondences). With fewer than 3 points,
/// or a collinear point set, falls back to translation-only alignment of
/// centroids with identity rotation.
pub fn rigid_align(target: &[Vector3<f64>], source: &[Vector3<f64>]) -> RigidTransform {
    assert_eq!(target.len(), source.len());
    assert!(!target.is_empty());
    let n = target.len() as f64;
    let ct: Vector3<f64> = target.iter().sum::<Vector3<f64>>() / n;
    let cs: Vector3<f64> = source.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (p, q) in target.iter().zip(source.iter()) {
        h += (q - cs) * (p - ct).transpose();
    }

    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let scale = sv[0].max(GEOM_EPS);
    let degenerate = target.len() < 3 || sv[1] <= 1e-9 * scale;
    let rotation = if degenerate {
        Matrix3::identity()
    } else {
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut r = v_t.transpose() * u.transpose();
        if r.determinant() < 0.0 {
            // Reflection correction: flip the axis of least variance.
            let mut d = Matrix3::identity();
            d[(2, 2)] = -1.0;
            r = v_t.transpose() * d * u.transpose();
        }
        r
    };
    let translation = ct - rotation * cs;
    RigidTransform { rotation, translation }
}

/// Distance clamp used by the pose cost: free play below `d_min`, saturation
/// at `d_max`.
pub fn clamp_distance(d: f64, d_min: f64, d_max: f64) -> f64 {
    if d <= d_min {
        0.0
    } else if d >= d_max {
        d_max
    } else {
        d
    }
}

/// Rotation of `angle` radians about the z axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}
