//! Forward kinematics: recover world-space joint positions from the
//! redundant representation by integrating root velocities and placing
//! local joint positions in the rotated root frame.

use super::{JointPositions, MotionFrame, MotionSequence, Skeleton};
use crate::error::{Error, Result};
use crate::real::Real;

/// Rotate `(x, z)` by yaw `psi` about the +Y axis.
fn yaw_rotate<T: Real>(psi: T, x: T, z: T) -> (T, T) {
    let (s, c) = (psi.sin(), psi.cos());
    (c * x + s * z, -s * x + c * z)
}

/// World-space joint positions for every frame.
///
/// Root yaw integrates forward-Euler from zero (`psi_{k+1} = psi_k + w_k`),
/// the planar root position integrates the yaw-rotated XZ velocity from the
/// origin, and each non-root joint is its local position rotated by the
/// current yaw and translated by the root.
pub fn forward_kinematics<T: Real>(
    seq: &MotionSequence<T>,
    skeleton: &Skeleton<T>,
) -> Result<JointPositions<T>> {
    if seq.joints() != skeleton.joints() {
        return Err(Error::dim("forward kinematics joints", skeleton.joints(), seq.joints()));
    }
    let (n, j) = (seq.len(), seq.joints());
    let mut out = Vec::with_capacity(n * j * 3);
    let mut psi = T::zero();
    let mut px = T::zero();
    let mut pz = T::zero();
    for k in 0..n {
        let frame = MotionFrame::decompose(seq.frame(k), j)?;
        place_frame(&frame, psi, px, pz, j, &mut out);
        let (wx, wz) = yaw_rotate(psi, frame.root_lin_vel_xz[0], frame.root_lin_vel_xz[1]);
        px += wx;
        pz += wz;
        psi += frame.root_ang_vel;
    }
    JointPositions::new(out, n, j)
}

/// Per-frame kinematics with the root fixed at the origin and zero yaw.
///
/// Used wherever frames are compared individually (bone lengths, keyframe
/// position errors) so that integrated root drift cannot leak in.
pub fn forward_kinematics_isolated<T: Real>(
    seq: &MotionSequence<T>,
    skeleton: &Skeleton<T>,
) -> Result<JointPositions<T>> {
    if seq.joints() != skeleton.joints() {
        return Err(Error::dim("forward kinematics joints", skeleton.joints(), seq.joints()));
    }
    let (n, j) = (seq.len(), seq.joints());
    let mut out = Vec::with_capacity(n * j * 3);
    for k in 0..n {
        let frame = MotionFrame::decompose(seq.frame(k), j)?;
        place_frame(&frame, T::zero(), T::zero(), T::zero(), j, &mut out);
    }
    JointPositions::new(out, n, j)
}

fn place_frame<T: Real>(frame: &MotionFrame<T>, psi: T, px: T, pz: T, joints: usize, out: &mut Vec<T>) {
    out.push(px);
    out.push(frame.root_height);
    out.push(pz);
    for i in 1..joints {
        let l = &frame.local_positions[3 * (i - 1)..3 * i];
        let (rx, rz) = yaw_rotate(psi, l[0], l[2]);
        out.push(px + rx);
        out.push(frame.root_height + l[1]);
        out.push(pz + rz);
    }
}

/// Per-frame bone lengths, `N x (J-1)`; entry `(k, i-1)` is the distance
/// from joint `i` to its parent at frame `k`.
pub fn bone_lengths<T: Real>(positions: &JointPositions<T>, skeleton: &Skeleton<T>) -> Result<Vec<T>> {
    if positions.joints() != skeleton.joints() {
        return Err(Error::dim("bone lengths joints", skeleton.joints(), positions.joints()));
    }
    let (n, j) = (positions.len(), positions.joints());
    let mut out = Vec::with_capacity(n * (j - 1));
    for k in 0..n {
        for i in 1..j {
            let p = skeleton.parent_of(i).expect("non-root joint has a parent");
            let a = positions.get(k, i);
            let b = positions.get(k, p);
            let mut s = T::zero();
            for c in 0..3 {
                let dlt = a[c] - b[c];
                s += dlt * dlt;
            }
            out.push(s.sqrt());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::FrameLayout;
    use approx::assert_relative_eq;

    fn static_sequence(
        joints: usize,
        n: usize,
        height: f64,
        locals: &[f64],
        ang_vel: f64,
        lin_vel: [f64; 2],
    ) -> MotionSequence<f64> {
        let layout = FrameLayout::new(joints);
        let mut frame = vec![0.0; layout.dim()];
        frame[0] = ang_vel;
        frame[1] = lin_vel[0];
        frame[2] = lin_vel[1];
        frame[3] = height;
        frame[layout.local_positions()].copy_from_slice(locals);
        let frames: Vec<f64> = (0..n).flat_map(|_| frame.clone()).collect();
        MotionSequence::new(frames, n, joints, 20.0).unwrap()
    }

    /// Rest-pose local positions: accumulate offsets root-to-joint.
    fn toy_locals() -> Vec<f64> {
        let skel = Skeleton::<f64>::toy();
        let j = skel.joints();
        let mut abs = vec![[0.0f64; 3]; j];
        for i in 1..j {
            let p = skel.parent_of(i).unwrap();
            let o = skel.rest_offsets()[i];
            for c in 0..3 {
                abs[i][c] = abs[p][c] + o[c];
            }
        }
        abs[1..].iter().flatten().copied().collect()
    }

    #[test]
    fn zero_velocity_keeps_joints_at_local_offsets() {
        let skel = Skeleton::<f64>::toy();
        let locals = toy_locals();
        let seq = static_sequence(5, 4, 0.9, &locals, 0.0, [0.0, 0.0]);
        let pos = forward_kinematics(&seq, &skel).unwrap();
        for k in 0..4 {
            assert_eq!(pos.get(k, 0), [0.0, 0.9, 0.0]);
            for i in 1..5 {
                let l = &locals[3 * (i - 1)..3 * i];
                let p = pos.get(k, i);
                assert_relative_eq!(p[0], l[0]);
                assert_relative_eq!(p[1], 0.9 + l[1]);
                assert_relative_eq!(p[2], l[2]);
            }
        }
    }

    #[test]
    fn constant_forward_velocity_advances_root_linearly() {
        let skel = Skeleton::<f64>::toy();
        let seq = static_sequence(5, 5, 1.0, &toy_locals(), 0.0, [0.0, 0.1]);
        let pos = forward_kinematics(&seq, &skel).unwrap();
        for k in 0..5 {
            let p = pos.get(k, 0);
            assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
            assert_relative_eq!(p[2], 0.1 * k as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_integration_rotates_velocity_direction() {
        // Quarter-turn per frame with unit +x velocity: headings are
        // psi_k = k * pi/2, each step adds R(psi_k) applied to (1, 0).
        let skel = Skeleton::<f64>::toy();
        let seq = static_sequence(5, 4, 1.0, &toy_locals(), std::f64::consts::FRAC_PI_2, [1.0, 0.0]);
        let pos = forward_kinematics(&seq, &skel).unwrap();
        // Steps: (1,0), then (0,-1), then (-1,0).
        let want = [[0.0, 0.0], [1.0, 0.0], [1.0, -1.0], [0.0, -1.0]];
        for k in 0..4 {
            let p = pos.get(k, 0);
            assert_relative_eq!(p[0], want[k][0], epsilon = 1e-12);
            assert_relative_eq!(p[2], want[k][1], epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_rotates_local_offsets() {
        // A joint one unit along +x, yaw of pi/2 already integrated by
        // frame 1: its world offset becomes (0, ., -1).
        let skel = Skeleton::<f64>::new(vec![-1, 0], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        let layout = FrameLayout::new(2);
        let mut f0 = vec![0.0; layout.dim()];
        f0[0] = std::f64::consts::FRAC_PI_2;
        f0[layout.local_positions()].copy_from_slice(&[1.0, 0.0, 0.0]);
        let mut f1 = vec![0.0; layout.dim()];
        f1[layout.local_positions()].copy_from_slice(&[1.0, 0.0, 0.0]);
        let seq = MotionSequence::new([f0, f1].concat(), 2, 2, 20.0).unwrap();
        let pos = forward_kinematics(&seq, &skel).unwrap();
        assert_eq!(pos.get(0, 1)[0], 1.0);
        let p = pos.get(1, 1);
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn isolated_ignores_root_velocities() {
        let skel = Skeleton::<f64>::toy();
        let seq = static_sequence(5, 6, 0.5, &toy_locals(), 0.3, [0.2, -0.1]);
        let pos = forward_kinematics_isolated(&seq, &skel).unwrap();
        for k in 0..6 {
            assert_eq!(pos.get(k, 0), [0.0, 0.5, 0.0]);
        }
        // Every frame identical despite nonzero velocities.
        assert_eq!(pos.get(0, 3), pos.get(5, 3));
    }

    #[test]
    fn bone_lengths_match_rest_offsets_for_rest_pose() {
        let skel = Skeleton::<f64>::toy();
        let seq = static_sequence(5, 3, 1.0, &toy_locals(), 0.0, [0.0, 0.0]);
        let pos = forward_kinematics(&seq, &skel).unwrap();
        let bl = bone_lengths(&pos, &skel).unwrap();
        assert_eq!(bl.len(), 3 * 4);
        for k in 0..3 {
            for i in 1..5 {
                let o = skel.rest_offsets()[i];
                let rest_len = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
                assert_relative_eq!(bl[k * 4 + (i - 1)], rest_len, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn joint_count_mismatch_rejected() {
        let skel = Skeleton::<f64>::toy();
        let seq = static_sequence(2, 2, 0.0, &[0.0, 1.0, 0.0], 0.0, [0.0, 0.0]);
        assert!(forward_kinematics(&seq, &skel).is_err());
    }
}
