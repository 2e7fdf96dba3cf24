//! Procedural motion synthesis: deterministic gait-like sequences in
//! the redundant frame representation, paired with condition strings
//! derived from the generation parameters.
//!
//! Limbs oscillate through per-joint rotation chains applied to the
//! skeleton's rest offsets, so bone lengths are exact by construction;
//! root channels (yaw rate, planar velocity, height) follow the motion
//! family; velocities are forward differences of the generated
//! positions; foot contacts flag stance/airborne phases.

use crate::error::{Error, Result};
use crate::motion::{matrix_to_rot6d, FrameLayout, MotionSequence, Skeleton};
use crate::real::Real;
use crate::rng::Prng;

/// Motion family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Walk,
    Turn,
    Jump,
    Sit,
    /// Two sub-families stitched back to back.
    Compose,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Walk => "walk",
            Family::Turn => "turn",
            Family::Jump => "jump",
            Family::Sit => "sit",
            Family::Compose => "compose",
        }
    }

    pub const ALL: [Family; 5] = [Family::Walk, Family::Turn, Family::Jump, Family::Sit, Family::Compose];
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walk" => Ok(Family::Walk),
            "turn" => Ok(Family::Turn),
            "jump" => Ok(Family::Jump),
            "sit" => Ok(Family::Sit),
            "compose" => Ok(Family::Compose),
            other => Err(Error::invalid(format!(
                "unknown motion family '{other}' (expected walk|turn|jump|sit|compose)"
            ))),
        }
    }
}

/// Per-frame control tracks prior to assembly into the frame layout.
struct Tracks {
    omega: Vec<f64>,
    vx: Vec<f64>,
    vz: Vec<f64>,
    height: Vec<f64>,
    /// Rotation angle about the X axis per non-root joint per frame,
    /// indexed `[frame][joint - 1]`.
    angles: Vec<Vec<f64>>,
    contacts: Vec<[f64; 4]>,
    text: String,
}

fn smooth_step(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-joint oscillation scale: primary joints (legs: rest offset below
/// the parent) get the full amplitude with left/right phase opposition;
/// the rest sway gently.
fn joint_profile<T: Real>(skel: &Skeleton<T>, j: usize) -> (f64, f64) {
    let off = skel.rest_offsets()[j];
    let (x, y) = (off[0].f64(), off[1].f64());
    if y < 0.0 {
        (1.0, if x >= 0.0 { 0.0 } else { std::f64::consts::PI })
    } else {
        (0.3, 0.9 * j as f64)
    }
}

fn gait_tracks<T: Real>(
    skel: &Skeleton<T>,
    n: usize,
    rng: &mut Prng,
    turning: bool,
) -> Tracks {
    let joints = skel.joints();
    let speed = 0.02 + rng.uniform_f64() * 0.04;
    let freq = 0.06 + rng.uniform_f64() * 0.03;
    let amp = 0.5 + rng.uniform_f64() * 0.4;
    let bob = 0.02 + rng.uniform_f64() * 0.02;
    let h0 = 0.9 + rng.uniform_f64() * 0.1;
    let omega = if turning {
        let mag = 0.02 + rng.uniform_f64() * 0.03;
        if rng.bernoulli(0.5) {
            mag
        } else {
            -mag
        }
    } else {
        0.0
    };
    let tau = std::f64::consts::TAU;
    let mut tracks = Tracks {
        omega: vec![omega; n],
        vx: Vec::with_capacity(n),
        vz: vec![0.0; n],
        height: Vec::with_capacity(n),
        angles: Vec::with_capacity(n),
        contacts: Vec::with_capacity(n),
        text: String::new(),
    };
    for k in 0..n {
        let phase = tau * freq * k as f64;
        tracks.vx.push(speed * (1.0 + 0.1 * (phase * 0.5).sin()));
        tracks.height.push(h0 + bob * (2.0 * phase).sin());
        let mut row = Vec::with_capacity(joints - 1);
        for j in 1..joints {
            let (scale, shift) = joint_profile(skel, j);
            row.push(amp * scale * (phase + shift).sin());
        }
        tracks.angles.push(row);
        let left = (phase.sin() <= 0.0) as usize as f64;
        let right = ((phase + std::f64::consts::PI).sin() <= 0.0) as usize as f64;
        tracks.contacts.push([left, left, right, right]);
    }
    let pace = if speed < 0.033 {
        "slowly"
    } else if speed < 0.047 {
        "at a steady pace"
    } else {
        "briskly"
    };
    tracks.text = if turning {
        let dir = if omega > 0.0 { "left" } else { "right" };
        format!("a person walks {pace} while turning {dir}")
    } else {
        format!("a person walks {pace}")
    };
    tracks
}

fn jump_tracks<T: Real>(skel: &Skeleton<T>, n: usize, rng: &mut Prng) -> Tracks {
    let joints = skel.joints();
    let freq = 0.04 + rng.uniform_f64() * 0.02;
    let lift = 0.15 + rng.uniform_f64() * 0.15;
    let tuck_amp = 0.6 + rng.uniform_f64() * 0.4;
    let h0 = 0.9 + rng.uniform_f64() * 0.1;
    let tau = std::f64::consts::TAU;
    let mut tracks = Tracks {
        omega: vec![0.0; n],
        vx: vec![0.0; n],
        vz: vec![0.0; n],
        height: Vec::with_capacity(n),
        angles: Vec::with_capacity(n),
        contacts: Vec::with_capacity(n),
        text: "a person jumps in place".to_string(),
    };
    for k in 0..n {
        let s = (tau * freq * k as f64).sin();
        let air = s.max(0.0);
        tracks.height.push(h0 + lift * air * air);
        let tuck = tuck_amp * air;
        let mut row = Vec::with_capacity(joints - 1);
        for j in 1..joints {
            let (scale, shift) = joint_profile(skel, j);
            let base = if scale >= 1.0 { tuck * 0.9 } else { -tuck * 0.25 };
            row.push(base + 0.05 * (tau * freq * k as f64 + shift).sin());
        }
        tracks.angles.push(row);
        let grounded = if s > 0.1 { 0.0 } else { 1.0 };
        tracks.contacts.push([grounded; 4]);
    }
    tracks
}

fn sit_tracks<T: Real>(skel: &Skeleton<T>, n: usize, rng: &mut Prng) -> Tracks {
    let joints = skel.joints();
    let h0 = 0.9 + rng.uniform_f64() * 0.1;
    let drop = 0.3 + rng.uniform_f64() * 0.15;
    let sharp = 0.25 + rng.uniform_f64() * 0.2;
    let fold_amp = 1.0 + rng.uniform_f64() * 0.3;
    let mid = n as f64 / 2.0;
    let mut tracks = Tracks {
        omega: vec![0.0; n],
        vx: vec![0.0; n],
        vz: vec![0.0; n],
        height: Vec::with_capacity(n),
        angles: Vec::with_capacity(n),
        contacts: vec![[1.0; 4]; n],
        text: "a person sits down".to_string(),
    };
    for k in 0..n {
        let fold = smooth_step(sharp * (k as f64 - mid));
        tracks.height.push(h0 - drop * fold);
        let mut row = Vec::with_capacity(joints - 1);
        for j in 1..joints {
            let (scale, shift) = joint_profile(skel, j);
            let target = if scale >= 1.0 { fold_amp } else { 0.3 };
            row.push(target * fold + 0.03 * (0.4 * k as f64 + shift).sin());
        }
        tracks.angles.push(row);
    }
    tracks
}

fn family_tracks<T: Real>(family: Family, skel: &Skeleton<T>, n: usize, rng: &mut Prng) -> Result<Tracks> {
    match family {
        Family::Walk => Ok(gait_tracks(skel, n, rng, false)),
        Family::Turn => Ok(gait_tracks(skel, n, rng, true)),
        Family::Jump => Ok(jump_tracks(skel, n, rng)),
        Family::Sit => Ok(sit_tracks(skel, n, rng)),
        Family::Compose => {
            let simple = [Family::Walk, Family::Turn, Family::Jump, Family::Sit];
            let first = simple[rng.below(4)];
            let second = loop {
                let c = simple[rng.below(4)];
                if c != first {
                    break c;
                }
            };
            let half = n / 2;
            let a = family_tracks(first, skel, half, rng)?;
            let b = family_tracks(second, skel, n - half, rng)?;
            let phrase = |t: &Tracks, f: Family| match f {
                Family::Walk => "walks".to_string(),
                Family::Turn => {
                    if t.omega[0] > 0.0 {
                        "turns left".to_string()
                    } else {
                        "turns right".to_string()
                    }
                }
                Family::Jump => "jumps".to_string(),
                Family::Sit => "sits down".to_string(),
                Family::Compose => unreachable!("compose never nests"),
            };
            let text = format!("a person {}, then {}", phrase(&a, first), phrase(&b, second));
            Ok(Tracks {
                omega: [a.omega, b.omega].concat(),
                vx: [a.vx, b.vx].concat(),
                vz: [a.vz, b.vz].concat(),
                height: [a.height, b.height].concat(),
                angles: [a.angles, b.angles].concat(),
                contacts: [a.contacts, b.contacts].concat(),
                text,
            })
        }
    }
}

fn rot_x(theta: f64) -> [[f64; 3]; 3] {
    let (s, c) = theta.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            for k in 0..3 {
                out[r][c] += a[r][k] * b[k][c];
            }
        }
    }
    out
}

fn mat_vec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

/// Assembles control tracks into the redundant frame layout.
fn assemble<T: Real>(skel: &Skeleton<T>, tracks: &Tracks, frame_rate: f64) -> Result<MotionSequence<T>> {
    let joints = skel.joints();
    let layout = skel.layout();
    let d = layout.dim();
    let n = tracks.height.len();
    // Root-relative joint positions and local rotations per frame.
    let mut locals = vec![vec![[0.0f64; 3]; joints]; n];
    let mut rot6 = vec![Vec::with_capacity(6 * (joints - 1)); n];
    for k in 0..n {
        let mut chains = vec![[[0.0; 3]; 3]; joints];
        chains[0] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for j in 1..joints {
            let parent = skel.parent_of(j).expect("non-root joint has a parent");
            let local = rot_x(tracks.angles[k][j - 1]);
            chains[j] = mat_mul(&chains[parent], &local);
            let off = skel.rest_offsets()[j];
            let rotated = mat_vec(&chains[j], [off[0].f64(), off[1].f64(), off[2].f64()]);
            locals[k][j] = [
                locals[k][parent][0] + rotated[0],
                locals[k][parent][1] + rotated[1],
                locals[k][parent][2] + rotated[2],
            ];
            let local_t = [
                [T::c(local[0][0]), T::c(local[0][1]), T::c(local[0][2])],
                [T::c(local[1][0]), T::c(local[1][1]), T::c(local[1][2])],
                [T::c(local[2][0]), T::c(local[2][1]), T::c(local[2][2])],
            ];
            rot6[k].extend_from_slice(&matrix_to_rot6d(&local_t));
        }
    }
    let mut frames = Vec::with_capacity(n * d);
    for k in 0..n {
        let next = if k + 1 < n { k + 1 } else { k };
        let prev_for_last = if k + 1 < n { k } else { k - 1 };
        frames.push(T::c(tracks.omega[k]));
        frames.push(T::c(tracks.vx[k]));
        frames.push(T::c(tracks.vz[k]));
        frames.push(T::c(tracks.height[k]));
        for j in 1..joints {
            for c in 0..3 {
                frames.push(T::c(locals[k][j][c]));
            }
        }
        // Velocities: root = (planar velocity, height difference), then
        // forward differences of the root-relative positions; the final
        // frame repeats the previous difference.
        let (va, vb) = (prev_for_last, if k + 1 < n { next } else { k });
        frames.push(T::c(tracks.vx[k]));
        frames.push(T::c(tracks.height[vb] - tracks.height[va]));
        frames.push(T::c(tracks.vz[k]));
        for j in 1..joints {
            for c in 0..3 {
                frames.push(T::c(locals[vb][j][c] - locals[va][j][c]));
            }
        }
        frames.extend(rot6[k].iter().copied());
        for c in 0..4 {
            frames.push(T::c(tracks.contacts[k][c]));
        }
    }
    MotionSequence::new(frames, n, joints, frame_rate)
}

/// Generates one sequence of the family with its condition string.
/// Deterministic for a given RNG state.
pub fn generate<T: Real>(
    family: Family,
    skel: &Skeleton<T>,
    n: usize,
    frame_rate: f64,
    rng: &mut Prng,
) -> Result<(MotionSequence<T>, String)> {
    if n < 4 {
        return Err(Error::invalid("synthetic sequences need at least 4 frames"));
    }
    let tracks = family_tracks(family, skel, n, rng)?;
    let seq = assemble(skel, &tracks, frame_rate)?;
    Ok((seq, tracks.text))
}

/// Generates `count` sequences; item `i` draws from an RNG derived from
/// `(seed, family, i)`, so datasets are reproducible item by item.
pub fn generate_dataset<T: Real>(
    family: Family,
    skel: &Skeleton<T>,
    n: usize,
    frame_rate: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<(MotionSequence<T>, String)>> {
    (0..count)
        .map(|i| {
            let mut rng = Prng::derive(seed, &format!("synth-{}-{i}", family.name()));
            generate(family, skel, n, frame_rate, &mut rng)
        })
        .collect()
}

/// Frame dimension for a joint count, exposed for manifest checks.
pub fn frame_dim(joints: usize) -> usize {
    FrameLayout::new(joints).dim()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{bone_lengths, forward_kinematics_isolated, rot6d_to_matrix};
    use approx::assert_relative_eq;

    fn all_families() -> [Family; 5] {
        Family::ALL
    }

    #[test]
    fn dimensions_follow_the_layout_formula() {
        let toy = Skeleton::<f64>::toy();
        let big = Skeleton::<f64>::humanoid22();
        assert_eq!(frame_dim(toy.joints()), 59);
        assert_eq!(frame_dim(big.joints()), 263);
        for family in all_families() {
            let mut rng = Prng::seed_from_u64(1);
            let (seq, text) = generate(family, &toy, 24, 20.0, &mut rng).unwrap();
            assert_eq!(seq.len(), 24);
            assert_eq!(seq.dim(), 59);
            assert!(!text.is_empty());
            let mut rng = Prng::seed_from_u64(1);
            let (seq22, _) = generate(family, &big, 12, 20.0, &mut rng).unwrap();
            assert_eq!(seq22.dim(), 263);
        }
        let mut rng = Prng::seed_from_u64(1);
        assert!(generate(Family::Walk, &toy, 3, 20.0, &mut rng).is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let skel = Skeleton::<f64>::toy();
        for family in all_families() {
            let a = generate_dataset(family, &skel, 16, 20.0, 3, 7).unwrap();
            let b = generate_dataset(family, &skel, 16, 20.0, 3, 7).unwrap();
            for ((sa, ta), (sb, tb)) in a.iter().zip(&b) {
                assert_eq!(sa.frames_flat(), sb.frames_flat());
                assert_eq!(ta, tb);
            }
            let c = generate_dataset(family, &skel, 16, 20.0, 3, 8).unwrap();
            assert_ne!(a[0].0.frames_flat(), c[0].0.frames_flat());
        }
    }

    #[test]
    fn bone_lengths_are_exact_for_every_family() {
        let skel = Skeleton::<f64>::toy();
        let rest: Vec<f64> = skel
            .rest_offsets()
            .iter()
            .skip(1)
            .map(|o| (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt())
            .collect();
        for family in all_families() {
            let mut rng = Prng::seed_from_u64(11);
            let (seq, _) = generate(family, &skel, 20, 20.0, &mut rng).unwrap();
            let pos = forward_kinematics_isolated(&seq, &skel).unwrap();
            let bl = bone_lengths(&pos, &skel).unwrap();
            for (k, chunk) in bl.chunks(skel.joints() - 1).enumerate() {
                for (b, r) in chunk.iter().zip(&rest) {
                    assert_relative_eq!(b, r, epsilon = 1e-9, max_relative = 1e-9);
                }
                let _ = k;
            }
        }
    }

    #[test]
    fn velocity_channels_match_position_differences() {
        let skel = Skeleton::<f64>::toy();
        let layout = skel.layout();
        for family in all_families() {
            let mut rng = Prng::seed_from_u64(13);
            let (seq, _) = generate(family, &skel, 18, 20.0, &mut rng).unwrap();
            let n = seq.len();
            let pos_range = layout.local_positions();
            let vel_range = layout.local_velocities();
            for k in 0..n {
                let (a, b) = if k + 1 < n { (k, k + 1) } else { (k - 1, k) };
                let cur = seq.frame(k);
                let pa = &seq.frame(a)[pos_range.clone()];
                let pb = &seq.frame(b)[pos_range.clone()];
                let vel = &cur.to_vec()[vel_range.clone()];
                // Joint velocities occupy the slots after the root triple.
                for (i, v) in vel[3..].iter().enumerate() {
                    assert_relative_eq!(*v, pb[i] - pa[i], epsilon = 1e-12);
                }
                let ha = seq.frame(a)[layout.root_height().start];
                let hb = seq.frame(b)[layout.root_height().start];
                assert_relative_eq!(vel[1], hb - ha, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rotations_roundtrip_as_valid_6d() {
        let skel = Skeleton::<f64>::toy();
        let layout = skel.layout();
        let mut rng = Prng::seed_from_u64(17);
        let (seq, _) = generate(Family::Walk, &skel, 10, 20.0, &mut rng).unwrap();
        for k in 0..seq.len() {
            let rots = &seq.frame(k)[layout.rotations_6d()];
            for r6 in rots.chunks(6) {
                let m = rot6d_to_matrix(r6).unwrap();
                let back = matrix_to_rot6d(&m);
                for (a, b) in r6.iter().zip(&back) {
                    assert_relative_eq!(a, b, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn families_have_their_signatures() {
        let skel = Skeleton::<f64>::toy();
        let layout = skel.layout();
        let mut rng = Prng::seed_from_u64(19);
        let (walk, walk_text) = generate(Family::Walk, &skel, 30, 20.0, &mut rng).unwrap();
        let (turn, turn_text) = generate(Family::Turn, &skel, 30, 20.0, &mut rng).unwrap();
        let (jump, jump_text) = generate(Family::Jump, &skel, 30, 20.0, &mut rng).unwrap();
        let (sit, sit_text) = generate(Family::Sit, &skel, 30, 20.0, &mut rng).unwrap();
        let (_, compose_text) = generate(Family::Compose, &skel, 30, 20.0, &mut rng).unwrap();

        assert!(walk_text.contains("walks"));
        assert!(turn_text.contains("turning"));
        assert!(jump_text.contains("jumps"));
        assert!(sit_text.contains("sits"));
        assert!(compose_text.contains("then"));

        // Walk: straight (zero yaw rate), moving, always one foot down.
        assert!(walk.rows().all(|f| f[0] == 0.0));
        assert!(walk.rows().all(|f| f[1] > 0.0));
        // Turn: constant non-zero yaw rate.
        assert!(turn.rows().all(|f| f[0] != 0.0));
        // Jump: stationary, airborne at some point (all contacts zero).
        assert!(jump.rows().all(|f| f[1] == 0.0));
        let airborne = jump.rows().any(|f| f[layout.foot_contacts()].iter().all(|c| *c == 0.0));
        assert!(airborne, "jump never leaves the ground");
        // Walk never has all four contacts zero.
        assert!(walk.rows().all(|f| f[layout.foot_contacts()].iter().any(|c| *c == 1.0)));
        // Sit: height decreases substantially and contacts stay planted.
        let h = layout.root_height().start;
        assert!(sit.frame(29)[h] < sit.frame(0)[h] - 0.2);
        assert!(sit.rows().all(|f| f[layout.foot_contacts()].iter().all(|c| *c == 1.0)));
    }

    #[test]
    fn condition_strings_are_parameter_buckets() {
        let skel = Skeleton::<f64>::toy();
        // Across many seeds every pace bucket should appear.
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..40u64 {
            let mut rng = Prng::seed_from_u64(seed);
            let (_, text) = generate(Family::Walk, &skel, 8, 20.0, &mut rng).unwrap();
            seen.insert(text);
        }
        assert!(seen.iter().any(|t| t.contains("slowly")));
        assert!(seen.iter().any(|t| t.contains("steady")));
        assert!(seen.iter().any(|t| t.contains("briskly")));
        let mut seen_turn = std::collections::BTreeSet::new();
        for seed in 0..40u64 {
            let mut rng = Prng::seed_from_u64(seed);
            let (_, text) = generate(Family::Turn, &skel, 8, 20.0, &mut rng).unwrap();
            seen_turn.insert(text);
        }
        assert!(seen_turn.iter().any(|t| t.contains("left")));
        assert!(seen_turn.iter().any(|t| t.contains("right")));
    }
}
