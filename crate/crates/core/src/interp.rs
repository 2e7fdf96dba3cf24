//! Keyframe infilling by interpolation.
//!
//! [`lerp_infill`] fills every channel linearly between consecutive
//! keyframes. [`slerp_infill`] does the same except for the 6D rotation
//! channels, which travel through quaternion space along the shortest
//! great-circle arc. Both copy keyframe rows through unchanged.

use crate::error::{Error, Result};
use crate::motion::{matrix_to_rot6d, rot6d_to_matrix, MotionSequence};
use crate::real::Real;
use crate::select::KeyframeSet;

/// Unit quaternion `w + xi + yj + zk` representing a rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quaternion<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quaternion<T> {
    pub fn identity() -> Self {
        Quaternion { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    pub fn dot(self, other: Self) -> T {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Result<Self> {
        let n = self.norm();
        if n < T::c(1e-12) {
            return Err(Error::degenerate("quaternion", "norm too small to normalize"));
        }
        Ok(self.scale(T::one() / n))
    }

    fn scale(self, s: T) -> Self {
        Quaternion { w: self.w * s, x: self.x * s, y: self.y * s, z: self.z * s }
    }

    fn add(self, o: Self) -> Self {
        Quaternion { w: self.w + o.w, x: self.x + o.x, y: self.y + o.y, z: self.z + o.z }
    }

    fn neg(self) -> Self {
        self.scale(-T::one())
    }

    /// Shepperd's method: pick the largest of the four squared components
    /// from the diagonal to avoid cancellation.
    pub fn from_matrix(m: &[[T; 3]; 3]) -> Self {
        let trace = m[0][0] + m[1][1] + m[2][2];
        let one = T::one();
        let quarter = T::c(0.25);
        if trace > T::zero() {
            let s = (trace + one).sqrt() * T::c(2.0);
            Quaternion {
                w: quarter * s,
                x: (m[2][1] - m[1][2]) / s,
                y: (m[0][2] - m[2][0]) / s,
                z: (m[1][0] - m[0][1]) / s,
            }
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::c(2.0);
            Quaternion {
                w: (m[2][1] - m[1][2]) / s,
                x: quarter * s,
                y: (m[0][1] + m[1][0]) / s,
                z: (m[0][2] + m[2][0]) / s,
            }
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::c(2.0);
            Quaternion {
                w: (m[0][2] - m[2][0]) / s,
                x: (m[0][1] + m[1][0]) / s,
                y: quarter * s,
                z: (m[1][2] + m[2][1]) / s,
            }
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::c(2.0);
            Quaternion {
                w: (m[1][0] - m[0][1]) / s,
                x: (m[0][2] + m[2][0]) / s,
                y: (m[1][2] + m[2][1]) / s,
                z: quarter * s,
            }
        }
    }

    pub fn to_matrix(self) -> [[T; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let two = T::c(2.0);
        let one = T::one();
        [
            [
                one - two * (y * y + z * z),
                two * (x * y - w * z),
                two * (x * z + w * y),
            ],
            [
                two * (x * y + w * z),
                one - two * (x * x + z * z),
                two * (y * z - w * x),
            ],
            [
                two * (x * z - w * y),
                two * (y * z + w * x),
                one - two * (x * x + y * y),
            ],
        ]
    }
}

/// Spherical linear interpolation along the shortest arc.
///
/// When the quaternions are within ~1e-6 radians, falls back to normalized
/// linear interpolation, which is numerically stable there and agrees with
/// the great-circle path to first order.
pub fn slerp<T: Real>(a: Quaternion<T>, b: Quaternion<T>, t: T) -> Quaternion<T> {
    let mut b = b;
    let mut dot = a.dot(b);
    if dot < T::zero() {
        b = b.neg();
        dot = -dot;
    }
    let dot = dot.min(T::one());
    let theta = dot.acos();
    if theta < T::c(1e-6) {
        let lerped = a.scale(T::one() - t).add(b.scale(t));
        return lerped.normalize().unwrap_or(a);
    }
    let sin_theta = theta.sin();
    let wa = ((T::one() - t) * theta).sin() / sin_theta;
    let wb = (t * theta).sin() / sin_theta;
    a.scale(wa).add(b.scale(wb))
}

fn check_infill_args<T: Real>(seq: &MotionSequence<T>, keys: &KeyframeSet) -> Result<()> {
    if keys.motion_len() != seq.len() {
        return Err(Error::dim("infill keyframes vs sequence", seq.len(), keys.motion_len()));
    }
    Ok(())
}

/// Rebuild a full sequence from its keyframes by per-channel linear
/// interpolation. Keyframe rows are copied through bit for bit.
pub fn lerp_infill<T: Real>(seq: &MotionSequence<T>, keys: &KeyframeSet) -> Result<MotionSequence<T>> {
    check_infill_args(seq, keys)?;
    let d = seq.dim();
    let mut out = vec![T::zero(); seq.len() * d];
    for w in keys.indices().windows(2) {
        let (i, j) = (w[0], w[1]);
        let span = T::from_usize(j - i).unwrap();
        for t in i..=j {
            let alpha = T::from_usize(t - i).unwrap() / span;
            let row = &mut out[t * d..(t + 1) * d];
            if t == i {
                row.copy_from_slice(seq.frame(i));
            } else if t == j {
                row.copy_from_slice(seq.frame(j));
            } else {
                let (fi, fj) = (seq.frame(i), seq.frame(j));
                for c in 0..d {
                    row[c] = (T::one() - alpha) * fi[c] + alpha * fj[c];
                }
            }
        }
    }
    MotionSequence::new(out, seq.len(), seq.joints(), seq.frame_rate)
}

/// Rebuild a full sequence from its keyframes, interpolating 6D rotation
/// channels along quaternion great circles and everything else linearly.
/// Keyframe rows are copied through bit for bit.
pub fn slerp_infill<T: Real>(seq: &MotionSequence<T>, keys: &KeyframeSet) -> Result<MotionSequence<T>> {
    check_infill_args(seq, keys)?;
    let d = seq.dim();
    let layout = seq.layout();
    let rot = layout.rotations_6d();
    let mut out = vec![T::zero(); seq.len() * d];
    for w in keys.indices().windows(2) {
        let (i, j) = (w[0], w[1]);
        let span = T::from_usize(j - i).unwrap();
        // Keyframe rotations converted once per segment.
        let quats_i = frame_quats(seq.frame(i), rot.clone())?;
        let quats_j = frame_quats(seq.frame(j), rot.clone())?;
        for t in i..=j {
            let alpha = T::from_usize(t - i).unwrap() / span;
            let row = &mut out[t * d..(t + 1) * d];
            if t == i {
                row.copy_from_slice(seq.frame(i));
                continue;
            }
            if t == j {
                row.copy_from_slice(seq.frame(j));
                continue;
            }
            let (fi, fj) = (seq.frame(i), seq.frame(j));
            for c in 0..d {
                row[c] = (T::one() - alpha) * fi[c] + alpha * fj[c];
            }
            for (g, (qa, qb)) in quats_i.iter().zip(&quats_j).enumerate() {
                let q = slerp(*qa, *qb, alpha);
                let r6 = matrix_to_rot6d(&q.to_matrix());
                let base = rot.start + 6 * g;
                row[base..base + 6].copy_from_slice(&r6);
            }
        }
    }
    MotionSequence::new(out, seq.len(), seq.joints(), seq.frame_rate)
}

fn frame_quats<T: Real>(frame: &[T], rot: std::ops::Range<usize>) -> Result<Vec<Quaternion<T>>> {
    frame[rot]
        .chunks_exact(6)
        .map(|r6| Ok(Quaternion::from_matrix(&rot6d_to_matrix(r6)?)))
        .collect()
}

/// Mean over frames of the Euclidean distance between corresponding rows
/// of two equally shaped sequences.
pub fn interpolation_error<T: Real>(a: &MotionSequence<T>, b: &MotionSequence<T>) -> Result<T> {
    if a.len() != b.len() || a.joints() != b.joints() {
        return Err(Error::dim(
            "interpolation_error shapes",
            format!("N={} J={}", a.len(), a.joints()),
            format!("N={} J={}", b.len(), b.joints()),
        ));
    }
    let mut total = T::zero();
    for (ra, rb) in a.rows().zip(b.rows()) {
        total += crate::select::frame_distance(ra, rb);
    }
    Ok(total / T::from_usize(a.len()).unwrap())
}
