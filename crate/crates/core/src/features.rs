//! Deterministic text conditioning: a vocabulary-free hashed token-bag
//! embedding and the condition wrapper consumed by the conditional models.
//!
//! Tokens are lower-cased alphanumeric runs. Each token is hashed with
//! FNV-1a; the hash picks a bucket and a sign, the signed counts are
//! accumulated into a fixed-width vector, and the result is ℓ2-normalized.
//! The embedding is therefore order-independent, deterministic across runs
//! and platforms, and needs no external vocabulary or weights.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::fnv1a;

/// Signed hashed token-bag embedding of `text` into `dim` buckets,
/// ℓ2-normalized. Empty or punctuation-only text maps to the zero vector.
pub fn text_embedding<T: Real>(text: &str, dim: usize) -> Result<Vec<T>> {
    if dim == 0 {
        return Err(Error::invalid("text embedding dimension must be positive"));
    }
    let mut acc = vec![0.0f64; dim];
    let lowered = text.to_lowercase();
    for token in lowered.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let h = fnv1a(token.as_bytes());
        let bucket = ((h >> 1) % dim as u64) as usize;
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut acc {
            *v /= norm;
        }
    }
    Ok(acc.into_iter().map(T::c).collect())
}

/// Conditioning input for the generative models: either a text-derived
/// embedding or the explicit unconditional marker. Models that support
/// classifier-free guidance substitute their own learned placeholder
/// vector when `is_unconditional` is set, so the embedding stored here is
/// all-zero in that case.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition<T: Real> {
    embedding: Vec<T>,
    is_unconditional: bool,
}

impl<T: Real> Condition<T> {
    /// Conditional input built from raw text via [`text_embedding`].
    pub fn from_text(text: &str, dim: usize) -> Result<Self> {
        Ok(Condition { embedding: text_embedding(text, dim)?, is_unconditional: false })
    }

    /// Conditional input from a precomputed embedding.
    pub fn from_embedding(embedding: Vec<T>) -> Result<Self> {
        if embedding.is_empty() {
            return Err(Error::invalid("condition embedding must not be empty"));
        }
        Ok(Condition { embedding, is_unconditional: false })
    }

    /// The unconditional marker of width `dim`.
    pub fn unconditional(dim: usize) -> Self {
        Condition { embedding: vec![T::zero(); dim], is_unconditional: true }
    }

    pub fn embedding(&self) -> &[T] {
        &self.embedding
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    pub fn is_unconditional(&self) -> bool {
        self.is_unconditional
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let a: Vec<f64> = text_embedding("a person walks forward", 64).unwrap();
        let b: Vec<f64> = text_embedding("a person walks forward", 64).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_ignores_token_order_case_and_punctuation() {
        let a: Vec<f64> = text_embedding("Walks forward, quickly!", 32).unwrap();
        let b: Vec<f64> = text_embedding("quickly forward walks", 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_sentences_produce_different_embeddings() {
        let a: Vec<f64> = text_embedding("a person walks in a circle", 64).unwrap();
        let b: Vec<f64> = text_embedding("a person jumps straight up", 64).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn empty_text_maps_to_zero_vector() {
        let a: Vec<f64> = text_embedding("", 16).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        let b: Vec<f64> = text_embedding(" ,. !", 16).unwrap();
        assert!(b.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(text_embedding::<f64>("walk", 0).is_err());
    }

    #[test]
    fn condition_wrappers_expose_flag_and_width() {
        let c = Condition::<f64>::from_text("jump", 8).unwrap();
        assert!(!c.is_unconditional());
        assert_eq!(c.dim(), 8);
        let u = Condition::<f64>::unconditional(8);
        assert!(u.is_unconditional());
        assert!(u.embedding().iter().all(|v| *v == 0.0));
        assert!(Condition::<f64>::from_embedding(vec![]).is_err());
    }
}
