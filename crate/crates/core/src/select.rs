//! Keyframe selection.
//!
//! Four strategies pick `K` of `N` frames, always keeping the endpoints:
//!
//! * [`select_uniform`] — evenly spaced indices.
//! * [`select_mdo`] — dynamic program maximizing the accumulated Euclidean
//!   distance between consecutive keyframes (maximum dispersion).
//! * [`select_mieo`] — dynamic program minimizing the summed per-segment
//!   mean squared linear-interpolation error (minimum reconstruction error).
//! * [`select_imdo`] — greedy interval variant of dispersion: one keyframe
//!   per uniform interval, farthest from the previous pick.
//!
//! Both dynamic programs run in `O(K N^2)` after an `O(N^2 d)` pairwise
//! precomputation and break ties toward smaller indices.

use crate::error::{Error, Result};
use crate::motion::MotionSequence;
use crate::real::Real;

/// A validated set of keyframe indices into a sequence of `motion_len`
/// frames: strictly increasing, starting at 0 and ending at
/// `motion_len - 1`, with at least two entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeSet {
    indices: Vec<usize>,
    motion_len: usize,
}

impl KeyframeSet {
    pub fn new(indices: Vec<usize>, motion_len: usize) -> Result<Self> {
        if indices.len() < 2 {
            return Err(Error::invalid(format!(
                "a keyframe set needs at least 2 indices, got {}",
                indices.len()
            )));
        }
        if indices[0] != 0 {
            return Err(Error::invalid(format!("first keyframe must be 0, got {}", indices[0])));
        }
        if *indices.last().unwrap() != motion_len - 1 {
            return Err(Error::invalid(format!(
                "last keyframe must be {}, got {}",
                motion_len - 1,
                indices.last().unwrap()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("keyframe indices must be strictly increasing"));
        }
        Ok(KeyframeSet { indices, motion_len })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn motion_len(&self) -> usize {
        self.motion_len
    }
}

/// Keyframe budget for a sequence of `n` frames at the given ratio:
/// `max(2, round(ratio * n))`, capped at `n`.
pub fn keyframe_count(n: usize, ratio: f64) -> usize {
    let k = (ratio * n as f64).round() as usize;
    k.max(2).min(n)
}

/// Euclidean distance between two frame vectors.
///
/// Panics if the slices differ in length.
pub fn frame_distance<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "frame_distance requires equal lengths");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt()
}

/// Total Euclidean distance along consecutive keyframes — the objective
/// maximized by [`select_mdo`].
pub fn accumulated_distance<T: Real>(seq: &MotionSequence<T>, set: &KeyframeSet) -> T {
    set.indices()
        .windows(2)
        .map(|w| frame_distance(seq.frame(w[0]), seq.frame(w[1])))
        .sum()
}

/// Summed per-segment mean squared linear-interpolation error — the
/// objective minimized by [`select_mieo`].
pub fn interpolation_cost<T: Real>(seq: &MotionSequence<T>, set: &KeyframeSet) -> T {
    set.indices()
        .windows(2)
        .map(|w| segment_cost_naive(seq, w[0], w[1]))
        .sum()
}

/// Mean over frames `i..=j` of the squared error against the straight line
/// between frames `i` and `j`. Direct evaluation; the dynamic program uses
/// an algebraically identical O(1)-per-pair form.
fn segment_cost_naive<T: Real>(seq: &MotionSequence<T>, i: usize, j: usize) -> T {
    let span = T::from_usize(j - i).unwrap();
    let mut total = T::zero();
    for t in i..=j {
        let alpha = T::from_usize(t - i).unwrap() / span;
        let (fi, fj, ft) = (seq.frame(i), seq.frame(j), seq.frame(t));
        for c in 0..ft.len() {
            let lerp = (T::one() - alpha) * fi[c] + alpha * fj[c];
            let e = ft[c] - lerp;
            total += e * e;
        }
    }
    total / T::from_usize(j - i + 1).unwrap()
}

fn check_budget(n: usize, k: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!("selection needs N >= 2 frames, got {n}")));
    }
    if k < 2 || k > n {
        return Err(Error::invalid(format!("keyframe count must satisfy 2 <= K <= N, got K={k}, N={n}")));
    }
    Ok(())
}

/// Evenly spaced keyframes: index `i` maps to
/// `round_ties_even(i * (N-1) / (K-1))`.
pub fn select_uniform(n: usize, k: usize) -> Result<KeyframeSet> {
    check_budget(n, k)?;
    let step = (n - 1) as f64 / (k - 1) as f64;
    let indices = (0..k).map(|i| (i as f64 * step).round_ties_even() as usize).collect();
    KeyframeSet::new(indices, n)
}

/// Pairwise Euclidean distances between all frames, row-major `n x n`.
fn distance_matrix<T: Real>(seq: &MotionSequence<T>) -> Vec<T> {
    let n = seq.len();
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = frame_distance(seq.frame(i), seq.frame(j));
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Shared DP skeleton: `best[m][j] = opt_{i<j} best[m-1][i] + cost(i, j)`
/// with keyframe 0 pinned to frame 0 and keyframe `k-1` to frame `n-1`.
/// `better(candidate, incumbent)` must be a strict improvement test so that
/// scanning `i` in ascending order breaks ties toward smaller indices.
fn chain_dp<T: Real>(
    n: usize,
    k: usize,
    cost: impl Fn(usize, usize) -> T,
    init: T,
    better: impl Fn(T, T) -> bool,
) -> Vec<usize> {
    let mut prev = vec![init; n];
    let mut cur = vec![init; n];
    prev[0] = T::zero();
    let mut parent = vec![0u32; k * n];
    for m in 1..k {
        // Frame j can host keyframe m only if enough frames remain on
        // both sides: m <= j <= n-1-(k-1-m).
        let hi = n - 1 - (k - 1 - m);
        for x in cur.iter_mut() {
            *x = init;
        }
        for j in m..=hi {
            let mut best = init;
            let mut arg = 0u32;
            for i in (m - 1)..j {
                let c = prev[i] + cost(i, j);
                if better(c, best) {
                    best = c;
                    arg = i as u32;
                }
            }
            cur[j] = best;
            parent[m * n + j] = arg;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let mut indices = vec![0usize; k];
    indices[k - 1] = n - 1;
    for m in (1..k).rev() {
        indices[m - 1] = parent[m * n + indices[m]] as usize;
    }
    indices
}

/// Maximum-dispersion keyframes: maximize the accumulated Euclidean
/// distance between consecutive picks, endpoints fixed.
pub fn select_mdo<T: Real>(seq: &MotionSequence<T>, k: usize) -> Result<KeyframeSet> {
    let n = seq.len();
    check_budget(n, k)?;
    let dist = distance_matrix(seq);
    let indices = chain_dp(
        n,
        k,
        |i, j| dist[i * n + j],
        T::neg_infinity(),
        |c, best| c > best,
    );
    KeyframeSet::new(indices, n)
}

/// O(1)-per-pair evaluator for the mean squared linear-interpolation error
/// of a segment, built from the frame Gram matrix and its index-weighted
/// prefix sums. Algebraically identical to [`interpolation_cost`]'s direct
/// per-frame evaluation, which serves as its independent check in tests.
struct SegmentCostTable<T> {
    n: usize,
    gram: Vec<T>,
    prefix: Vec<T>,
    weighted: Vec<T>,
    sq_prefix: Vec<T>,
}

impl<T: Real> SegmentCostTable<T> {
    /// O(N^2 d) precomputation: `gram[i*n+t] = <f_i, f_t>` plus running
    /// sums over `t` of `gram` and `t * gram`.
    fn new(seq: &MotionSequence<T>) -> Self {
        let n = seq.len();
        let mut gram = vec![T::zero(); n * n];
        for i in 0..n {
            for t in i..n {
                let fi = seq.frame(i);
                let ft = seq.frame(t);
                let mut s = T::zero();
                for c in 0..fi.len() {
                    s += fi[c] * ft[c];
                }
                gram[i * n + t] = s;
                gram[t * n + i] = s;
            }
        }
        let mut prefix = vec![T::zero(); n * n];
        let mut weighted = vec![T::zero(); n * n];
        for i in 0..n {
            let mut acc_p = T::zero();
            let mut acc_w = T::zero();
            for t in 0..n {
                let g = gram[i * n + t];
                acc_p += g;
                acc_w += T::from_usize(t).unwrap() * g;
                prefix[i * n + t] = acc_p;
                weighted[i * n + t] = acc_w;
            }
        }
        let mut sq_prefix = vec![T::zero(); n];
        let mut acc = T::zero();
        for t in 0..n {
            acc += gram[t * n + t];
            sq_prefix[t] = acc;
        }
        SegmentCostTable { n, gram, prefix, weighted, sq_prefix }
    }

    fn range(&self, row: &[T], i: usize, lo: usize, hi: usize) -> T {
        let hi_v = row[i * self.n + hi];
        if lo == 0 { hi_v } else { hi_v - row[i * self.n + lo - 1] }
    }

    /// Mean over `t = i..=j` of `||f_t - (1-a) f_i - a f_j||^2` with
    /// `a = (t-i)/L`. Expanding the square and summing:
    ///   sum ||f_t||^2
    ///   + (||f_i||^2 + ||f_j||^2) * Q/L^2
    ///   - 2 [ P_i - (W_i - i P_i)/L ]
    ///   - (2/L) (W_j - i P_j)
    ///   + 2 <f_i,f_j> (L S - Q)/L^2
    /// where S and Q sum v and v^2 over v = 0..=L, and P_x / W_x are the
    /// plain and index-weighted sums of `<f_x, f_t>` over the segment.
    fn cost(&self, i: usize, j: usize) -> T {
        let n = self.n;
        let l = (j - i) as f64;
        let s = l * (l + 1.0) / 2.0;
        let q = l * (l + 1.0) * (2.0 * l + 1.0) / 6.0;
        let ii = T::from_usize(i).unwrap();
        let sq_t = if i == 0 {
            self.sq_prefix[j]
        } else {
            self.sq_prefix[j] - self.sq_prefix[i - 1]
        };
        let p_i = self.range(&self.prefix, i, i, j);
        let w_i = self.range(&self.weighted, i, i, j);
        let p_j = self.range(&self.prefix, j, i, j);
        let w_j = self.range(&self.weighted, j, i, j);
        let norm_ends = (self.gram[i * n + i] + self.gram[j * n + j]) * T::c(q / (l * l));
        let two = T::c(2.0);
        let cross_i = two * (p_i - (w_i - ii * p_i) / T::c(l));
        let cross_j = two / T::c(l) * (w_j - ii * p_j);
        let mix = two * self.gram[i * n + j] * T::c((l * s - q) / (l * l));
        let total = sq_t + norm_ends - cross_i - cross_j + mix;
        // Cancellation can leave a tiny negative residue on exact fits.
        (total / T::from_usize(j - i + 1).unwrap()).max(T::zero())
    }
}

/// Minimum-interpolation-error keyframes: minimize the summed per-segment
/// mean squared error of linear interpolation, endpoints fixed.
pub fn select_mieo<T: Real>(seq: &MotionSequence<T>, k: usize) -> Result<KeyframeSet> {
    let n = seq.len();
    check_budget(n, k)?;
    let table = SegmentCostTable::new(seq);
    let indices = chain_dp(n, k, |i, j| table.cost(i, j), T::infinity(), |c, best| c < best);
    KeyframeSet::new(indices, n)
}

/// Greedy interval dispersion: split `1..=N-1` into `K-1` uniform
/// intervals `[1 + floor((r-1)(N-1)/(K-1)), floor(r(N-1)/(K-1))]` and pick
/// from each the frame farthest from the previous keyframe; the final
/// interval always yields `N-1` to keep the endpoint.
pub fn select_imdo<T: Real>(seq: &MotionSequence<T>, k: usize) -> Result<KeyframeSet> {
    let n = seq.len();
    check_budget(n, k)?;
    let mut indices = Vec::with_capacity(k);
    indices.push(0usize);
    let mut prev = 0usize;
    for r in 1..k {
        if r == k - 1 {
            indices.push(n - 1);
            break;
        }
        let lo = 1 + (r - 1) * (n - 1) / (k - 1);
        let hi = r * (n - 1) / (k - 1);
        let mut best = T::neg_infinity();
        let mut arg = lo;
        for t in lo..=hi {
            let d = frame_distance(seq.frame(t), seq.frame(prev));
            if d > best {
                best = d;
                arg = t;
            }
        }
        indices.push(arg);
        prev = arg;
    }
    KeyframeSet::new(indices, n)
}

/// Selection strategy chosen at runtime (training loops, CLI).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    /// Evenly spaced indices.
    Uniform,
    /// Dynamic program maximizing accumulated frame distance.
    MaxDistance,
    /// Dynamic program minimizing interpolation error.
    MinInterpError,
    /// Greedy per-bucket maximum-distance approximation.
    GreedyMaxDistance,
}

impl SelectorKind {
    pub fn select<T: Real>(&self, seq: &MotionSequence<T>, k: usize) -> Result<KeyframeSet> {
        match self {
            SelectorKind::Uniform => select_uniform(seq.len(), k),
            SelectorKind::MaxDistance => select_mdo(seq, k),
            SelectorKind::MinInterpError => select_mieo(seq, k),
            SelectorKind::GreedyMaxDistance => select_imdo(seq, k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::Uniform => "uniform",
            SelectorKind::MaxDistance => "mdo",
            SelectorKind::MinInterpError => "mieo",
            SelectorKind::GreedyMaxDistance => "imdo",
        }
    }
}

impl std::str::FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SelectorKind::Uniform),
            "mdo" => Ok(SelectorKind::MaxDistance),
            "mieo" => Ok(SelectorKind::MinInterpError),
            "imdo" => Ok(SelectorKind::GreedyMaxDistance),
            other => Err(Error::invalid(format!(
                "unknown selector '{other}' (expected uniform|mdo|mieo|imdo)"
            ))),
        }
    }
}
