//! Redundant motion representation: skeletons, per-frame channel layout,
//! motion sequences, forward kinematics, and file formats.
//!
//! A frame is the concatenation, in canonical order, of
//! root angular velocity about Y (1), root linear velocity on XZ (2),
//! root height (1), local joint positions (3(J-1)), local joint velocities
//! (3J), 6D joint rotations (6(J-1)), and foot-contact labels (4),
//! giving `d = 4 + 3(J-1) + 3J + 6(J-1) + 4` (263 at J=22, 251 at J=21).

mod fk;
mod io;
mod rot6d;

pub use fk::{bone_lengths, forward_kinematics, forward_kinematics_isolated};
pub use io::{load_motion, load_motion_json, save_motion, save_motion_json};
pub use rot6d::{matrix_to_rot6d, rot6d_to_matrix};

use crate::error::{Error, Result};
use crate::real::Real;

/// Channel offsets of the redundant representation for a given joint count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub joints: usize,
}

impl FrameLayout {
    pub fn new(joints: usize) -> Self {
        assert!(joints >= 2, "a skeleton needs at least a root and one child");
        FrameLayout { joints }
    }

    /// Total frame dimension `d`.
    pub fn dim(&self) -> usize {
        let j = self.joints;
        4 + 3 * (j - 1) + 3 * j + 6 * (j - 1) + 4
    }

    /// Inverts [`FrameLayout::dim`] (`d = 12·J − 1`); errors when no
    /// joint count produces the given width.
    pub fn from_dim(dim: usize) -> Result<FrameLayout> {
        if dim >= 23 && (dim + 1) % 12 == 0 {
            Ok(FrameLayout::new((dim + 1) / 12))
        } else {
            Err(Error::invalid(format!("no skeleton produces frame dimension {dim}")))
        }
    }

    pub fn root_ang_vel(&self) -> std::ops::Range<usize> {
        0..1
    }
    pub fn root_lin_vel_xz(&self) -> std::ops::Range<usize> {
        1..3
    }
    pub fn root_height(&self) -> std::ops::Range<usize> {
        3..4
    }
    pub fn local_positions(&self) -> std::ops::Range<usize> {
        4..4 + 3 * (self.joints - 1)
    }
    pub fn local_velocities(&self) -> std::ops::Range<usize> {
        let s = self.local_positions().end;
        s..s + 3 * self.joints
    }
    pub fn rotations_6d(&self) -> std::ops::Range<usize> {
        let s = self.local_velocities().end;
        s..s + 6 * (self.joints - 1)
    }
    pub fn foot_contacts(&self) -> std::ops::Range<usize> {
        let s = self.rotations_6d().end;
        s..s + 4
    }
}

/// Kinematic tree. Joint 0 is the root; `parents[j] < j` for every non-root
/// joint, so iterating in index order visits parents before children.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton<T: Real> {
    parents: Vec<i64>,
    rest_offsets: Vec<[T; 3]>,
}

impl<T: Real> Skeleton<T> {
    /// Validates the tree structure. `parents[0]` must be -1, every other
    /// parent index must point at an earlier joint, the root offset must be
    /// zero, and every bone must have positive rest length.
    pub fn new(parents: Vec<i64>, rest_offsets: Vec<[T; 3]>) -> Result<Self> {
        if parents.is_empty() || parents.len() != rest_offsets.len() {
            return Err(Error::dim(
                "skeleton parents vs rest_offsets",
                parents.len(),
                rest_offsets.len(),
            ));
        }
        if parents[0] != -1 {
            return Err(Error::invalid("skeleton root (joint 0) must have parent -1"));
        }
        for (j, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(Error::invalid(format!(
                    "parent of joint {j} must be an earlier joint, got {p}"
                )));
            }
        }
        let zero = rest_offsets[0];
        if zero.iter().any(|&c| c != T::zero()) {
            return Err(Error::invalid("root rest offset must be (0,0,0)"));
        }
        for (j, off) in rest_offsets.iter().enumerate().skip(1) {
            let len2: T = off.iter().map(|&c| c * c).sum();
            if len2 <= T::zero() {
                return Err(Error::invalid(format!("bone to joint {j} has zero rest length")));
            }
        }
        Ok(Skeleton { parents, rest_offsets })
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn parents(&self) -> &[i64] {
        &self.parents
    }

    pub fn parent_of(&self, joint: usize) -> Option<usize> {
        let p = self.parents[joint];
        (p >= 0).then_some(p as usize)
    }

    pub fn rest_offsets(&self) -> &[[T; 3]] {
        &self.rest_offsets
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.joints())
    }

    /// Five-joint test skeleton: root, spine, head, and two legs.
    pub fn toy() -> Self {
        let parents = vec![-1, 0, 1, 0, 0];
        let rest = vec![
            [T::zero(), T::zero(), T::zero()],
            [T::zero(), T::c(0.4), T::zero()],
            [T::zero(), T::c(0.3), T::zero()],
            [T::c(0.15), T::c(-0.45), T::zero()],
            [T::c(-0.15), T::c(-0.45), T::zero()],
        ];
        Skeleton::new(parents, rest).expect("toy skeleton is valid")
    }

    /// 22-joint humanoid matching the 263-dimensional representation.
    pub fn humanoid22() -> Self {
        // Chain layout: pelvis, two 4-joint legs, 5-joint spine/neck/head,
        // two 4-joint arms. Offsets are plausible metric values; only the
        // tree shape and d = 263 matter for format fidelity.
        let parents = vec![
            -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
        ];
        let mut rest = vec![[T::zero(); 3]; 22];
        let o = |x: f64, y: f64, z: f64| [T::c(x), T::c(y), T::c(z)];
        rest[1] = o(0.11, -0.06, 0.0); // l_hip
        rest[2] = o(-0.11, -0.06, 0.0); // r_hip
        rest[3] = o(0.0, 0.11, 0.0); // spine1
        rest[4] = o(0.0, -0.40, 0.0); // l_knee
        rest[5] = o(0.0, -0.40, 0.0); // r_knee
        rest[6] = o(0.0, 0.14, 0.0); // spine2
        rest[7] = o(0.0, -0.41, 0.0); // l_ankle
        rest[8] = o(0.0, -0.41, 0.0); // r_ankle
        rest[9] = o(0.0, 0.16, 0.0); // spine3
        rest[10] = o(0.0, -0.07, 0.13); // l_foot
        rest[11] = o(0.0, -0.07, 0.13); // r_foot
        rest[12] = o(0.0, 0.09, 0.0); // neck
        rest[13] = o(0.08, 0.11, 0.0); // l_collar
        rest[14] = o(-0.08, 0.11, 0.0); // r_collar
        rest[15] = o(0.0, 0.11, 0.0); // head
        rest[16] = o(0.11, 0.0, 0.0); // l_shoulder
        rest[17] = o(-0.11, 0.0, 0.0); // r_shoulder
        rest[18] = o(0.26, 0.0, 0.0); // l_elbow
        rest[19] = o(-0.26, 0.0, 0.0); // r_elbow
        rest[20] = o(0.25, 0.0, 0.0); // l_wrist
        rest[21] = o(-0.25, 0.0, 0.0); // r_wrist
        Skeleton::new(parents, rest).expect("humanoid22 skeleton is valid")
    }
}

/// One frame split into its named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame<T: Real> {
    pub root_ang_vel: T,
    pub root_lin_vel_xz: [T; 2],
    pub root_height: T,
    pub local_positions: Vec<T>,
    pub local_velocities: Vec<T>,
    pub rotations_6d: Vec<T>,
    pub foot_contacts: [T; 4],
}

impl<T: Real> MotionFrame<T> {
    /// Split a flat `d`-vector into channels. Fails unless
    /// `frame.len() == FrameLayout::new(joints).dim()`.
    pub fn decompose(frame: &[T], joints: usize) -> Result<Self> {
        let layout = FrameLayout::new(joints);
        if frame.len() != layout.dim() {
            return Err(Error::dim(
                format!("frame for J={joints}"),
                layout.dim(),
                frame.len(),
            ));
        }
        Ok(MotionFrame {
            root_ang_vel: frame[0],
            root_lin_vel_xz: [frame[1], frame[2]],
            root_height: frame[3],
            local_positions: frame[layout.local_positions()].to_vec(),
            local_velocities: frame[layout.local_velocities()].to_vec(),
            rotations_6d: frame[layout.rotations_6d()].to_vec(),
            foot_contacts: {
                let c = &frame[layout.foot_contacts()];
                [c[0], c[1], c[2], c[3]]
            },
        })
    }

    /// Concatenate the channels back into the canonical flat order.
    /// `recompose(decompose(x)) == x` bit for bit.
    pub fn recompose(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(
            4 + self.local_positions.len() + self.local_velocities.len() + self.rotations_6d.len() + 4,
        );
        out.push(self.root_ang_vel);
        out.extend_from_slice(&self.root_lin_vel_xz);
        out.push(self.root_height);
        out.extend_from_slice(&self.local_positions);
        out.extend_from_slice(&self.local_velocities);
        out.extend_from_slice(&self.rotations_6d);
        out.extend_from_slice(&self.foot_contacts);
        out
    }
}

/// N frames of the redundant representation, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence<T: Real> {
    frames: Vec<T>,
    len: usize,
    joints: usize,
    pub frame_rate: f64,
}

impl<T: Real> MotionSequence<T> {
    pub fn new(frames: Vec<T>, len: usize, joints: usize, frame_rate: f64) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid(format!("a motion sequence needs N >= 2 frames, got {len}")));
        }
        let d = FrameLayout::new(joints).dim();
        if frames.len() != len * d {
            return Err(Error::dim(
                format!("motion sequence N={len} J={joints}"),
                len * d,
                frames.len(),
            ));
        }
        Ok(MotionSequence { frames, len, joints, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false // N >= 2 by construction
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn dim(&self) -> usize {
        FrameLayout::new(self.joints).dim()
    }

    pub fn layout(&self) -> FrameLayout {
        FrameLayout::new(self.joints)
    }

    pub fn frame(&self, k: usize) -> &[T] {
        let d = self.dim();
        &self.frames[k * d..(k + 1) * d]
    }

    pub fn frames_flat(&self) -> &[T] {
        &self.frames
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.frames.chunks_exact(self.dim())
    }

    /// Round every value through `f32`, matching on-disk precision.
    pub fn quantize_f32(&self) -> Self {
        let frames = self.frames.iter().map(|&v| T::c(v.f64() as f32 as f64)).collect();
        MotionSequence { frames, ..self.clone() }
    }
}

/// World-space joint positions, `N x J x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions<T: Real> {
    data: Vec<T>,
    len: usize,
    joints: usize,
}

impl<T: Real> JointPositions<T> {
    pub fn new(data: Vec<T>, len: usize, joints: usize) -> Result<Self> {
        if data.len() != len * joints * 3 {
            return Err(Error::dim("joint positions", len * joints * 3, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("joint positions".into()));
        }
        Ok(JointPositions { data, len, joints })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn get(&self, frame: usize, joint: usize) -> [T; 3] {
        let i = (frame * self.joints + joint) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}
