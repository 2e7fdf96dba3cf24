//! Evaluation metrics: distribution distance (FID-style), diversity,
//! multimodality, paired text–motion distance, retrieval precision,
//! per-joint position errors, and a repeated-evaluation protocol with
//! 95% confidence intervals.
//!
//! Feature extraction is pluggable through [`FeatureExtractor`]. The
//! shipped default is a seeded random projection of pooled per-channel
//! motion statistics (plus a hashed token-bag for text), chosen so that
//! evaluation is deterministic and self-contained. Absolute metric
//! values from this extractor are only meaningful relative to each
//! other — they cannot be compared against numbers produced with
//! pretrained feature networks.

use crate::error::{Error, Result};
use crate::features::text_embedding;
use crate::motion::{JointPositions, MotionSequence};
use crate::real::Real;
use crate::rng::Prng;
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Default width of the shipped feature extractor.
pub const FEATURE_DIM: usize = 64;

/// Default repeat count of the confidence-interval protocol.
pub const DEFAULT_REPEATS: usize = 20;

/// Gaussian summary (mean, covariance, sample count) of a feature set.
#[derive(Debug, Clone)]
pub struct FeatureDistribution {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    count: usize,
}

impl FeatureDistribution {
    /// Fits mean and Bessel-corrected covariance; needs at least two
    /// samples of equal dimension.
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::invalid("need at least two feature vectors to fit a distribution"));
        }
        let m = features[0].len();
        if m == 0 || features.iter().any(|f| f.len() != m) {
            return Err(Error::invalid("feature vectors must share one non-zero dimension"));
        }
        let n = features.len() as f64;
        let mut mean = DVector::zeros(m);
        for f in features {
            for (i, v) in f.iter().enumerate() {
                mean[i] += v;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(m, m);
        for f in features {
            let centered = DVector::from_row_slice(f) - &mean;
            cov += &centered * centered.transpose();
        }
        cov /= n - 1.0;
        Ok(FeatureDistribution { mean, cov, count: features.len() })
    }

    /// Builds a distribution from explicit moments. The covariance must
    /// be square, match the mean, and be symmetric within 1e-9.
    pub fn from_moments(mean: Vec<f64>, cov: Vec<Vec<f64>>, count: usize) -> Result<Self> {
        let m = mean.len();
        if cov.len() != m || cov.iter().any(|row| row.len() != m) {
            return Err(Error::invalid("covariance must be square and match the mean dimension"));
        }
        let cov = DMatrix::from_fn(m, m, |r, c| cov[r][c]);
        check_symmetric(&cov)?;
        Ok(FeatureDistribution { mean: DVector::from_vec(mean), cov, count })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    for r in 0..m.nrows() {
        for c in (r + 1)..m.ncols() {
            if (m[(r, c)] - m[(c, r)]).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "covariance not symmetric at ({r}, {c}): {} vs {}",
                    m[(r, c)],
                    m[(c, r)]
                )));
            }
        }
    }
    Ok(())
}

/// Symmetric PSD matrix square root via eigendecomposition; eigenvalues
/// below -1e-8 are rejected, small negatives are clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-8 {
            return Err(Error::invalid(format!("covariance has negative eigenvalue {v}")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between two Gaussian feature summaries:
/// ‖μ−μ′‖² + Tr(Σ + Σ′ − 2 (Σ Σ′)^{1/2}), with the matrix square root
/// evaluated through the symmetric product Σ^{1/2} Σ′ Σ^{1/2}.
/// Eigenvalues of the product below 1e-10 are treated as zero.
pub fn fid(a: &FeatureDistribution, b: &FeatureDistribution) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::dim("feature distribution", a.dim(), b.dim()));
    }
    check_symmetric(&a.cov)?;
    check_symmetric(&b.cov)?;
    let diff = &a.mean - &b.mean;
    let mean_term = diff.dot(&diff);
    let sqrt_a = sym_sqrt(&a.cov)?;
    let mid = &sqrt_a * &b.cov * &sqrt_a;
    let mid = (&mid + mid.transpose()) * 0.5;
    let eig = mid.symmetric_eigen();
    let mut trace_sqrt = 0.0;
    for v in eig.eigenvalues.iter() {
        if *v < -1e-8 {
            return Err(Error::invalid(format!("covariance product has negative eigenvalue {v}")));
        }
        if *v >= 1e-10 {
            trace_sqrt += v.sqrt();
        }
    }
    let value = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Draws two disjoint index subsets of size `s` and returns the mean
/// paired distance (optionally squared).
fn paired_subset_distance(features: &[Vec<f64>], s: usize, squared: bool, rng: &mut Prng) -> Result<f64> {
    if s == 0 {
        return Err(Error::invalid("subset size must be positive"));
    }
    if features.len() < 2 * s {
        return Err(Error::invalid(format!(
            "need at least {} features for disjoint subsets of size {s}, got {}",
            2 * s,
            features.len()
        )));
    }
    let picks = rng.sample_indices(features.len(), 2 * s);
    let mut sum = 0.0;
    for i in 0..s {
        let d = euclid(&features[picks[i]], &features[picks[s + i]]);
        sum += if squared { d * d } else { d };
    }
    Ok(sum / s as f64)
}

/// Spread of a feature set: mean distance between two disjoint random
/// subsets of size `s_d`, paired elementwise. Unsquared Euclidean
/// distance by convention; [`diversity_squared`] exposes the squared
/// variant.
pub fn diversity(features: &[Vec<f64>], s_d: usize, rng: &mut Prng) -> Result<f64> {
    paired_subset_distance(features, s_d, false, rng)
}

/// Squared-distance variant of [`diversity`].
pub fn diversity_squared(features: &[Vec<f64>], s_d: usize, rng: &mut Prng) -> Result<f64> {
    paired_subset_distance(features, s_d, true, rng)
}

/// Within-condition spread: the paired-subset distance of each group,
/// averaged over groups ((1/(C·S_l)) Σ_c Σ_i d(f_{c,i}, f′_{c,i})).
/// A single group reduces exactly to [`diversity`].
pub fn multimodality(groups: &[Vec<Vec<f64>>], s_l: usize, rng: &mut Prng) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::invalid("need at least one condition group"));
    }
    let mut sum = 0.0;
    for g in groups {
        sum += paired_subset_distance(g, s_l, false, rng)?;
    }
    Ok(sum / groups.len() as f64)
}

/// Paired text–motion distance: √((1/n) Σ ‖f_text,i − f_motion,i‖²).
pub fn mmd(text_features: &[Vec<f64>], motion_features: &[Vec<f64>]) -> Result<f64> {
    if text_features.len() != motion_features.len() {
        return Err(Error::dim("paired feature count", text_features.len(), motion_features.len()));
    }
    if text_features.is_empty() {
        return Err(Error::invalid("need at least one feature pair"));
    }
    let mut sum = 0.0;
    for (t, m) in text_features.iter().zip(motion_features) {
        let d = euclid(t, m);
        sum += d * d;
    }
    Ok((sum / text_features.len() as f64).sqrt())
}

/// Retrieval accuracy: for every motion, its true text competes with
/// `pool_size − 1` randomly drawn mismatched texts, ranked by Euclidean
/// distance (ties broken by text index); returns the fraction of
/// motions whose true text ranks within `top_k`.
pub fn r_precision(
    text_features: &[Vec<f64>],
    motion_features: &[Vec<f64>],
    pool_size: usize,
    top_k: usize,
    rng: &mut Prng,
) -> Result<f64> {
    let n = text_features.len();
    if n != motion_features.len() {
        return Err(Error::dim("paired feature count", n, motion_features.len()));
    }
    if pool_size < 2 || top_k == 0 || top_k >= pool_size {
        return Err(Error::invalid("need pool_size >= 2 and 1 <= top_k < pool_size"));
    }
    if n < pool_size {
        return Err(Error::invalid(format!("need at least pool_size = {pool_size} samples, got {n}")));
    }
    let mut hits = 0usize;
    for (i, motion) in motion_features.iter().enumerate() {
        // Candidate texts: the true one plus pool_size - 1 mismatches
        // drawn from the others.
        let mut candidates = vec![i];
        for pick in rng.sample_indices(n - 1, pool_size - 1) {
            candidates.push(if pick >= i { pick + 1 } else { pick });
        }
        let true_dist = euclid(&text_features[i], motion);
        let mut rank = 1usize;
        for &c in &candidates[1..] {
            let d = euclid(&text_features[c], motion);
            if d < true_dist || (d == true_dist && c < i) {
                rank += 1;
            }
        }
        if rank <= top_k {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// Mean per-joint position error in millimeters.
pub fn mpjpe(pred: &JointPositions<f64>, gt: &JointPositions<f64>) -> Result<f64> {
    check_positions(pred, gt)?;
    let (n, j) = (pred.len(), pred.joints());
    let mut sum = 0.0;
    for k in 0..n {
        for joint in 0..j {
            let a = pred.get(k, joint);
            let b = gt.get(k, joint);
            sum += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        }
    }
    Ok(sum / (n * j) as f64 * 1000.0)
}

/// MPJPE after per-frame rigid Procrustes alignment (rotation and
/// translation, no scaling) of the prediction onto the ground truth.
pub fn pampjpe(pred: &JointPositions<f64>, gt: &JointPositions<f64>) -> Result<f64> {
    check_positions(pred, gt)?;
    let (n, j) = (pred.len(), pred.joints());
    if j < 2 {
        return Err(Error::invalid("rigid alignment needs at least two joints"));
    }
    let mut sum = 0.0;
    for k in 0..n {
        let p: Vec<Vector3<f64>> = (0..j).map(|jj| Vector3::from(pred.get(k, jj))).collect();
        let g: Vec<Vector3<f64>> = (0..j).map(|jj| Vector3::from(gt.get(k, jj))).collect();
        let p_bar = p.iter().sum::<Vector3<f64>>() / j as f64;
        let g_bar = g.iter().sum::<Vector3<f64>>() / j as f64;
        // Cross-covariance of centered clouds; Kabsch rotation with a
        // determinant fix to exclude reflections.
        let mut h = Matrix3::zeros();
        for (pi, gi) in p.iter().zip(&g) {
            h += (pi - p_bar) * (gi - g_bar).transpose();
        }
        let svd = h.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::invalid("SVD failed to produce U"))?;
        let v_t = svd.v_t.ok_or_else(|| Error::invalid("SVD failed to produce V"))?;
        let d = (v_t.transpose() * u.transpose()).determinant();
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum()));
        let r = v_t.transpose() * flip * u.transpose();
        for (pi, gi) in p.iter().zip(&g) {
            let aligned = r * (pi - p_bar) + g_bar;
            sum += (aligned - gi).norm();
        }
    }
    Ok(sum / (n * j) as f64 * 1000.0)
}

fn check_positions(pred: &JointPositions<f64>, gt: &JointPositions<f64>) -> Result<()> {
    if pred.len() != gt.len() || pred.joints() != gt.joints() {
        return Err(Error::dim(
            "joint positions",
            format!("[{}, {}]", gt.len(), gt.joints()),
            format!("[{}, {}]", pred.len(), pred.joints()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::invalid("need at least one frame"));
    }
    Ok(())
}

/// A metric evaluated under the repeated protocol, serialized as the
/// standard report JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
    pub repeats: usize,
    pub seed: u64,
}

/// Runs `metric_fn` `repeats` times on independent derived RNG streams
/// and reports mean ± 1.96 · (sample std / √repeats).
pub fn repeat_eval(
    metric: &str,
    repeats: usize,
    seed: u64,
    mut metric_fn: impl FnMut(&mut Prng) -> Result<f64>,
) -> Result<MetricReport> {
    if repeats < 2 {
        return Err(Error::invalid("repeat protocol needs at least 2 repeats"));
    }
    let mut values = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let mut rng = Prng::derive(seed, &format!("{metric}-repeat-{i}"));
        values.push(metric_fn(&mut rng)?);
    }
    let n = repeats as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let ci95 = 1.96 * (var / n).sqrt();
    Ok(MetricReport { metric: metric.to_string(), mean, ci95, repeats, seed: seed })
}

/// Deterministic mapping from motions and texts into a shared feature
/// space of fixed dimension.
pub trait FeatureExtractor<T: Real> {
    fn dim(&self) -> usize;
    fn motion(&self, seq: &MotionSequence<T>) -> Result<Vec<f64>>;
    fn text(&self, text: &str) -> Result<Vec<f64>>;
}

/// Default extractor: pooled per-channel statistics (mean, std, min,
/// max) pushed through a fixed seeded random projection; text through
/// the hashed token-bag embedding. Deterministic for a given frame
/// dimension and seed.
pub struct StatProjection {
    frame_dim: usize,
    out_dim: usize,
    projection: Vec<f64>,
}

impl StatProjection {
    pub fn new(frame_dim: usize, seed: u64) -> Result<Self> {
        if frame_dim == 0 {
            return Err(Error::invalid("frame dimension must be positive"));
        }
        let out_dim = FEATURE_DIM;
        let mut rng = Prng::derive(seed, &format!("feature-proj-{frame_dim}"));
        let rows = 4 * frame_dim;
        let scale = 1.0 / (rows as f64).sqrt();
        let projection = (0..rows * out_dim).map(|_| rng.normal_f64() * scale).collect();
        Ok(StatProjection { frame_dim, out_dim, projection })
    }
}

impl<T: Real> FeatureExtractor<T> for StatProjection {
    fn dim(&self) -> usize {
        self.out_dim
    }

    fn motion(&self, seq: &MotionSequence<T>) -> Result<Vec<f64>> {
        if seq.dim() != self.frame_dim {
            return Err(Error::dim("feature extractor frame width", self.frame_dim, seq.dim()));
        }
        let (n, d) = (seq.len(), seq.dim());
        let mut stats = vec![0.0f64; 4 * d];
        for c in 0..d {
            let mut mean = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for k in 0..n {
                let v = seq.frame(k)[c].f64();
                mean += v;
                lo = lo.min(v);
                hi = hi.max(v);
            }
            mean /= n as f64;
            let mut var = 0.0;
            for k in 0..n {
                let v = seq.frame(k)[c].f64() - mean;
                var += v * v;
            }
            stats[4 * c] = mean;
            stats[4 * c + 1] = (var / n as f64).sqrt();
            stats[4 * c + 2] = lo;
            stats[4 * c + 3] = hi;
        }
        let mut out = vec![0.0; self.out_dim];
        for (r, s) in stats.iter().enumerate() {
            if *s == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate() {
                *o += s * self.projection[r * self.out_dim + c];
            }
        }
        Ok(out)
    }

    fn text(&self, text: &str) -> Result<Vec<f64>> {
        text_embedding(text, self.out_dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::Skeleton;
    use approx::assert_relative_eq;

    fn random_features(n: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Prng::seed_from_u64(seed);
        (0..n).map(|_| rng.normal_vec(m)).collect()
    }

    #[test]
    fn fit_matches_hand_loop() {
        let feats = random_features(7, 3, 1);
        let d = FeatureDistribution::fit(&feats).unwrap();
        assert_eq!(d.count(), 7);
        for i in 0..3 {
            let mean = feats.iter().map(|f| f[i]).sum::<f64>() / 7.0;
            assert_relative_eq!(d.mean[i], mean, epsilon = 1e-12);
            for j in 0..3 {
                let mj = feats.iter().map(|f| f[j]).sum::<f64>() / 7.0;
                let cov = feats.iter().map(|f| (f[i] - mean) * (f[j] - mj)).sum::<f64>() / 6.0;
                assert_relative_eq!(d.cov[(i, j)], cov, epsilon = 1e-12);
            }
        }
        assert!(FeatureDistribution::fit(&feats[..1]).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(FeatureDistribution::fit(&ragged).is_err());
    }

    #[test]
    fn identical_distributions_have_zero_distance() {
        let feats = random_features(40, 5, 2);
        let d = FeatureDistribution::fit(&feats).unwrap();
        let value = fid(&d, &d).unwrap();
        assert!(value.abs() < 1e-8, "fid(A, A) = {value}");
    }

    #[test]
    fn unit_mean_shift_scores_one() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let a = FeatureDistribution::from_moments(vec![0.0, 0.0], eye.clone(), 10).unwrap();
        let b = FeatureDistribution::from_moments(vec![1.0, 0.0], eye, 10).unwrap();
        assert_relative_eq!(fid(&a, &b).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn one_dimensional_variance_gap() {
        let a = FeatureDistribution::from_moments(vec![0.5], vec![vec![1.0]], 10).unwrap();
        let b = FeatureDistribution::from_moments(vec![0.5], vec![vec![4.0]], 10).unwrap();
        // 1 + 4 − 2·√4 = 1.
        assert_relative_eq!(fid(&a, &b).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn diagonal_covariances_match_closed_form() {
        let mut rng = Prng::seed_from_u64(3);
        for _ in 0..100 {
            let m = 1 + rng.below(6);
            let mu_a: Vec<f64> = rng.normal_vec(m);
            let mu_b: Vec<f64> = rng.normal_vec(m);
            let sig_a: Vec<f64> = (0..m).map(|_| 0.1 + rng.uniform_f64() * 3.0).collect();
            let sig_b: Vec<f64> = (0..m).map(|_| 0.1 + rng.uniform_f64() * 3.0).collect();
            let diag = |s: &[f64]| -> Vec<Vec<f64>> {
                (0..m).map(|r| (0..m).map(|c| if r == c { s[r] } else { 0.0 }).collect()).collect()
            };
            let a = FeatureDistribution::from_moments(mu_a.clone(), diag(&sig_a), 10).unwrap();
            let b = FeatureDistribution::from_moments(mu_b.clone(), diag(&sig_b), 10).unwrap();
            let closed: f64 = mu_a.iter().zip(&mu_b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
                + sig_a
                    .iter()
                    .zip(&sig_b)
                    .map(|(x, y)| x + y - 2.0 * (x * y).sqrt())
                    .sum::<f64>();
            let got = fid(&a, &b).unwrap();
            assert!((got - closed).abs() < 1e-7, "fid {got} vs closed form {closed}");
        }
    }

    #[test]
    fn distance_is_symmetric() {
        for seed in 0..10u64 {
            let a = FeatureDistribution::fit(&random_features(30, 4, 100 + seed)).unwrap();
            let b = FeatureDistribution::fit(&random_features(25, 4, 200 + seed)).unwrap();
            let ab = fid(&a, &b).unwrap();
            let ba = fid(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-7, "asymmetry: {ab} vs {ba}");
            assert!(ab >= 0.0);
        }
    }

    #[test]
    fn invalid_covariances_are_rejected() {
        let bad = FeatureDistribution::from_moments(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.5], vec![0.1, 1.0]],
            5,
        );
        assert!(bad.is_err());
        let a = FeatureDistribution::from_moments(vec![0.0], vec![vec![1.0]], 5).unwrap();
        let b = FeatureDistribution::from_moments(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 5)
            .unwrap();
        assert!(fid(&a, &b).is_err());
    }

    #[test]
    fn diversity_basics() {
        let constant = vec![vec![1.0, 2.0]; 8];
        let mut rng = Prng::seed_from_u64(4);
        assert_eq!(diversity(&constant, 3, &mut rng).unwrap(), 0.0);

        let feats = random_features(12, 3, 5);
        let a = diversity(&feats, 4, &mut Prng::seed_from_u64(6)).unwrap();
        let b = diversity(&feats, 4, &mut Prng::seed_from_u64(6)).unwrap();
        assert_eq!(a, b);
        assert!(diversity(&feats, 7, &mut rng).is_err());

        // Two points at distance D: the only disjoint pairing has
        // distance exactly D (squared variant: D²).
        let two = vec![vec![0.0], vec![3.0]];
        assert_relative_eq!(diversity(&two, 1, &mut rng).unwrap(), 3.0);
        assert_relative_eq!(diversity_squared(&two, 1, &mut rng).unwrap(), 9.0);
    }

    #[test]
    fn diversity_approaches_exhaustive_pairing_mean() {
        // Two clusters of 3 at distance 2: the mean over all ordered
        // disjoint pairs (i, j), i != j, is the Monte Carlo limit.
        let feats: Vec<Vec<f64>> =
            vec![vec![0.0], vec![0.0], vec![0.0], vec![2.0], vec![2.0], vec![2.0]];
        let n = feats.len();
        let mut brute = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    brute += euclid(&feats[i], &feats[j]);
                }
            }
        }
        brute /= (n * (n - 1)) as f64;
        let mut rng = Prng::seed_from_u64(7);
        let trials = 4000;
        let mut mc = 0.0;
        for _ in 0..trials {
            mc += diversity(&feats, 1, &mut rng).unwrap();
        }
        mc /= trials as f64;
        assert!((mc - brute).abs() < 0.06, "Monte Carlo {mc} vs exhaustive {brute}");
    }

    #[test]
    fn multimodality_reduces_and_matches_oracle() {
        let constant_groups = vec![vec![vec![1.0]; 6], vec![vec![-2.0]; 6]];
        let mut rng = Prng::seed_from_u64(8);
        assert_eq!(multimodality(&constant_groups, 2, &mut rng).unwrap(), 0.0);

        // One group: identical RNG stream gives exactly the diversity.
        let feats = random_features(10, 3, 9);
        let single = vec![feats.clone()];
        let mm = multimodality(&single, 4, &mut Prng::seed_from_u64(10)).unwrap();
        let div = diversity(&feats, 4, &mut Prng::seed_from_u64(10)).unwrap();
        assert_eq!(mm, div);

        // Two groups of two members with s_l = 1: the paired subsets are
        // forced, so the value is the exact mean of the two gaps.
        let forced = vec![
            vec![vec![0.0], vec![5.0]],
            vec![vec![1.0], vec![4.0]],
        ];
        let got = multimodality(&forced, 1, &mut rng).unwrap();
        assert_relative_eq!(got, (5.0 + 3.0) / 2.0, epsilon = 1e-12);

        let small = vec![vec![vec![0.0]; 3]];
        assert!(multimodality(&small, 2, &mut rng).is_err());
        assert!(multimodality(&[], 2, &mut rng).is_err());
    }

    #[test]
    fn paired_distance_examples() {
        let t = vec![vec![1.0, 2.0]];
        assert_eq!(mmd(&t, &t).unwrap(), 0.0);
        let m = vec![vec![1.0, 5.0]];
        assert_relative_eq!(mmd(&t, &m).unwrap(), 3.0, epsilon = 1e-12);
        let t2 = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let m2 = vec![vec![3.0, 0.0], vec![0.0, 4.0]];
        assert_relative_eq!(mmd(&t2, &m2).unwrap(), 12.5f64.sqrt(), epsilon = 1e-12);
        assert!(mmd(&t, &t2).is_err());
        assert!(mmd(&[], &[]).is_err());
    }

    #[test]
    fn retrieval_identity_is_perfect() {
        let feats = random_features(40, 6, 11);
        let mut rng = Prng::seed_from_u64(12);
        let top1 = r_precision(&feats, &feats, 32, 1, &mut rng).unwrap();
        assert_eq!(top1, 1.0);
    }

    #[test]
    fn retrieval_is_monotone_in_k() {
        let texts = random_features(40, 6, 13);
        let mut rng = Prng::seed_from_u64(14);
        let motions: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| t.iter().map(|v| v + rng.normal_f64() * 0.8).collect())
            .collect();
        let r1 = r_precision(&texts, &motions, 32, 1, &mut Prng::seed_from_u64(15)).unwrap();
        let r2 = r_precision(&texts, &motions, 32, 2, &mut Prng::seed_from_u64(15)).unwrap();
        let r3 = r_precision(&texts, &motions, 32, 3, &mut Prng::seed_from_u64(15)).unwrap();
        assert!(r1 <= r2 && r2 <= r3, "top-k not monotone: {r1}, {r2}, {r3}");
    }

    #[test]
    fn retrieval_matches_brute_force_on_full_pools() {
        // With n == pool_size the mismatch sample is forced to be all
        // other texts, so an independent loop can reproduce the ranking.
        let n = 32;
        let texts = random_features(n, 4, 16);
        let mut rng = Prng::seed_from_u64(17);
        let motions: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| t.iter().map(|v| v + rng.normal_f64() * 1.2).collect())
            .collect();
        for top_k in 1..=3usize {
            let got = r_precision(&texts, &motions, n, top_k, &mut Prng::seed_from_u64(18)).unwrap();
            let mut hits = 0;
            for i in 0..n {
                let own = euclid(&texts[i], &motions[i]);
                let mut rank = 1;
                for (c, t) in texts.iter().enumerate() {
                    if c == i {
                        continue;
                    }
                    let d = euclid(t, &motions[i]);
                    if d < own || (d == own && c < i) {
                        rank += 1;
                    }
                }
                if rank <= top_k {
                    hits += 1;
                }
            }
            assert_relative_eq!(got, hits as f64 / n as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn retrieval_decoy_defeats_mismatched_motions() {
        // Every motion's feature equals text 0, far from its own text.
        let n = 33;
        let mut texts = vec![vec![0.0; 8]; n];
        for (i, t) in texts.iter_mut().enumerate() {
            t[i % 8] = 1.0 + (i / 8) as f64;
        }
        let motions = vec![texts[0].clone(); n];
        let top1 = r_precision(&texts, &motions, 32, 1, &mut Prng::seed_from_u64(19)).unwrap();
        assert!(top1 < 0.15, "decoy should defeat retrieval, got {top1}");
        assert!(r_precision(&texts[..10], &motions[..10], 32, 1, &mut Prng::seed_from_u64(20)).is_err());
    }

    fn positions(data: Vec<f64>, n: usize, j: usize) -> JointPositions<f64> {
        JointPositions::new(data, n, j).unwrap()
    }

    #[test]
    fn position_errors_on_exact_and_translated_inputs() {
        let mut rng = Prng::seed_from_u64(21);
        let (n, j) = (4, 5);
        let data: Vec<f64> = rng.normal_vec(n * j * 3);
        let gt = positions(data.clone(), n, j);
        let same = positions(data.clone(), n, j);
        assert_eq!(mpjpe(&same, &gt).unwrap(), 0.0);
        assert!(pampjpe(&same, &gt).unwrap() < 1e-9);

        let t = [0.3, -0.1, 0.2];
        let shifted: Vec<f64> =
            data.iter().enumerate().map(|(i, v)| v + t[i % 3]).collect();
        let pred = positions(shifted, n, j);
        let norm = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        assert_relative_eq!(mpjpe(&pred, &gt).unwrap(), 1000.0 * norm, epsilon = 1e-9);
        assert!(pampjpe(&pred, &gt).unwrap() < 1e-7);
    }

    #[test]
    fn alignment_removes_rotation_about_centroid() {
        let mut rng = Prng::seed_from_u64(22);
        let (n, j) = (3, 6);
        let data: Vec<f64> = rng.normal_vec(n * j * 3);
        let gt = positions(data.clone(), n, j);
        // Rotate every frame's cloud about its centroid by a fixed yaw.
        let angle = 0.7f64;
        let (s, c) = angle.sin_cos();
        let mut rotated = vec![0.0; n * j * 3];
        for k in 0..n {
            let frame = &data[k * j * 3..(k + 1) * j * 3];
            let cx = (0..j).map(|q| frame[3 * q]).sum::<f64>() / j as f64;
            let cy = (0..j).map(|q| frame[3 * q + 1]).sum::<f64>() / j as f64;
            let cz = (0..j).map(|q| frame[3 * q + 2]).sum::<f64>() / j as f64;
            for q in 0..j {
                let x = frame[3 * q] - cx;
                let y = frame[3 * q + 1] - cy;
                let z = frame[3 * q + 2] - cz;
                rotated[k * j * 3 + 3 * q] = cx + c * x + s * z;
                rotated[k * j * 3 + 3 * q + 1] = cy + y;
                rotated[k * j * 3 + 3 * q + 2] = cz - s * x + c * z;
            }
        }
        let pred = positions(rotated, n, j);
        assert!(mpjpe(&pred, &gt).unwrap() > 1.0);
        assert!(pampjpe(&pred, &gt).unwrap() < 1e-7, "pampjpe = {}", pampjpe(&pred, &gt).unwrap());
    }

    #[test]
    fn alignment_never_hurts() {
        for seed in 0..50u64 {
            let mut rng = Prng::seed_from_u64(300 + seed);
            let (n, j) = (2, 5);
            let a: Vec<f64> = rng.normal_vec(n * j * 3);
            let b: Vec<f64> = rng.normal_vec(n * j * 3);
            let pred = positions(a, n, j);
            let gt = positions(b, n, j);
            let plain = mpjpe(&pred, &gt).unwrap();
            let aligned = pampjpe(&pred, &gt).unwrap();
            assert!(aligned <= plain + 1e-9, "seed {seed}: pampjpe {aligned} > mpjpe {plain}");
        }
        let a = positions(vec![0.0; 6], 1, 2);
        let b = positions(vec![0.0; 9], 1, 3);
        assert!(mpjpe(&a, &b).is_err());
    }

    #[test]
    fn repeat_protocol_reports_mean_and_interval() {
        let constant = repeat_eval("const", 20, 1, |_| Ok(2.5)).unwrap();
        assert_eq!(constant.mean, 2.5);
        assert_eq!(constant.ci95, 0.0);
        assert_eq!(constant.repeats, 20);
        assert_eq!(constant.metric, "const");
        assert!(repeat_eval("x", 1, 1, |_| Ok(0.0)).is_err());

        // Standard-normal metric: the interval should approach
        // 1.96/sqrt(repeats).
        let report = repeat_eval("gauss", 400, 2, |rng| Ok(rng.normal_f64())).unwrap();
        let expect = 1.96 / 400f64.sqrt();
        assert!((report.ci95 - expect).abs() / expect < 0.2, "ci {} vs {}", report.ci95, expect);
        assert!(report.mean.abs() < 4.0 * expect / 1.96);

        let json = serde_json::to_string(&report).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mean, report.mean);
        assert_eq!(back.seed, 2);
    }

    #[test]
    fn default_extractor_is_deterministic_and_sized() {
        let skel = Skeleton::<f64>::toy();
        let d = skel.layout().dim();
        let ex = StatProjection::new(d, 42).unwrap();
        let mut rng = Prng::seed_from_u64(23);
        let frames: Vec<f64> = rng.normal_vec(6 * d);
        let seq = MotionSequence::new(frames, 6, skel.joints(), 20.0).unwrap();
        let f1 = FeatureExtractor::<f64>::motion(&ex, &seq).unwrap();
        let f2 = FeatureExtractor::<f64>::motion(&ex, &seq).unwrap();
        assert_eq!(f1.len(), FEATURE_DIM);
        assert_eq!(f1, f2);
        let t1 = FeatureExtractor::<f64>::text(&ex, "walk forward quickly").unwrap();
        assert_eq!(t1.len(), FEATURE_DIM);
        let ex2 = StatProjection::new(d, 42).unwrap();
        assert_eq!(FeatureExtractor::<f64>::motion(&ex2, &seq).unwrap(), f1);
        let other = StatProjection::new(d, 43).unwrap();
        assert_ne!(FeatureExtractor::<f64>::motion(&other, &seq).unwrap(), f1);
    }
}
