//! Block-partitioned decision vectors and block-sparse Gaussian directions.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, PartialEq, Eq)]
struct LayoutInner {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

/// Partition of `ℝⁿ` into one contiguous block per agent.
///
/// Cloning is cheap; the dimension table is shared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    inner: Arc<LayoutInner>,
}

impl BlockLayout {
    pub fn new(block_dims: Vec<usize>) -> Result<Self> {
        if block_dims.is_empty() {
            return Err(Error::Layout("layout needs at least one block".into()));
        }
        if let Some(i) = block_dims.iter().position(|&d| d == 0) {
            return Err(Error::Layout(format!("block {i} has zero dimension")));
        }
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut total = 0;
        for &d in &block_dims {
            offsets.push(total);
            total += d;
        }
        Ok(Self { inner: Arc::new(LayoutInner { dims: block_dims, offsets, total }) })
    }

    /// `num_blocks` blocks of dimension `dim` each.
    pub fn uniform(num_blocks: usize, dim: usize) -> Result<Self> {
        Self::new(vec![dim; num_blocks])
    }

    pub fn num_blocks(&self) -> usize {
        self.inner.dims.len()
    }

    pub fn block_dims(&self) -> &[usize] {
        &self.inner.dims
    }

    pub fn block_dim(&self, agent: usize) -> usize {
        self.inner.dims[agent]
    }

    pub fn total_dim(&self) -> usize {
        self.inner.total
    }

    pub fn range(&self, agent: usize) -> Range<usize> {
        let start = self.inner.offsets[agent];
        start..start + self.inner.dims[agent]
    }

    pub fn is_uniform(&self) -> bool {
        self.inner.dims.windows(2).all(|w| w[0] == w[1])
    }

    /// The common block size when all blocks are equal.
    pub fn common_block_dim(&self) -> Option<usize> {
        self.is_uniform().then(|| self.inner.dims[0])
    }

    pub fn check_agent(&self, agent: usize) -> Result<()> {
        if agent < self.num_blocks() {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "agent index {agent} out of range for {} blocks",
                self.num_blocks()
            )))
        }
    }

    pub fn check_same(&self, other: &BlockLayout) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "layout mismatch: {:?} vs {:?}",
                self.block_dims(),
                other.block_dims()
            )))
        }
    }
}

/// Dense joint decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    layout: BlockLayout,
    values: Vec<f64>,
}

impl BlockVector {
    pub fn zeros(layout: &BlockLayout) -> Self {
        Self { layout: layout.clone(), values: vec![0.0; layout.total_dim()] }
    }

    pub fn from_values(layout: &BlockLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::Layout(format!(
                "expected {} values, got {}",
                layout.total_dim(),
                values.len()
            )));
        }
        Ok(Self { layout: layout.clone(), values })
    }

    /// Entries i.i.d. standard normal.
    pub fn standard_gaussian(layout: &BlockLayout, rng: &mut RngStream) -> Self {
        let mut v = Self::zeros(layout);
        rng.fill_standard_normal(&mut v.values);
        v
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn block(&self, agent: usize) -> &[f64] {
        &self.values[self.layout.range(agent)]
    }

    pub fn block_mut(&mut self, agent: usize) -> &mut [f64] {
        let r = self.layout.range(agent);
        &mut self.values[r]
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// In-place `self.block(agent) += scale * u.block_values`.
    pub fn add_scaled(&mut self, scale: f64, u: &PerturbationDirection) -> Result<()> {
        self.layout.check_same(&u.layout)?;
        for (x, d) in self.block_mut(u.agent).iter_mut().zip(&u.block_values) {
            *x += scale * d;
        }
        Ok(())
    }
}

/// Gaussian direction that is nonzero on a single agent's block.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDirection {
    layout: BlockLayout,
    agent: usize,
    block_values: Vec<f64>,
}

impl PerturbationDirection {
    pub fn new(layout: &BlockLayout, agent: usize, block_values: Vec<f64>) -> Result<Self> {
        layout.check_agent(agent)?;
        if block_values.len() != layout.block_dim(agent) {
            return Err(Error::Layout(format!(
                "block {agent} has dimension {}, got {} values",
                layout.block_dim(agent),
                block_values.len()
            )));
        }
        Ok(Self { layout: layout.clone(), agent, block_values })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn block_values(&self) -> &[f64] {
        &self.block_values
    }

    pub fn norm_sq(&self) -> f64 {
        self.block_values.iter().map(|v| v * v).sum()
    }

    pub fn as_full_vector(&self) -> BlockVector {
        let mut v = BlockVector::zeros(&self.layout);
        v.block_mut(self.agent).copy_from_slice(&self.block_values);
        v
    }
}

/// Draws `u` with agent's block i.i.d. `N(0, 1)` and every other block zero.
pub fn sample_block_gaussian(
    layout: &BlockLayout,
    agent: usize,
    rng: &mut RngStream,
) -> Result<PerturbationDirection> {
    layout.check_agent(agent)?;
    let mut values = vec![0.0; layout.block_dim(agent)];
    rng.fill_standard_normal(&mut values);
    Ok(PerturbationDirection { layout: layout.clone(), agent, block_values: values })
}

const PROB_SUM_TOL: f64 = 1e-12;

pub fn validate_probabilities(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Config("empty probability vector".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::Config(format!("invalid probability {p}")));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::Config(format!("probabilities sum to {total}, not 1")));
    }
    Ok(())
}

/// Inverse-CDF draw from a finite distribution.
pub fn sample_categorical(probs: &[f64], rng: &mut RngStream) -> Result<usize> {
    validate_probabilities(probs)?;
    let u = rng.uniform();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // rounding left u above the running sum; take the last index with mass
    Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
}

/// Returns `x` with `scale * u` added to `u`'s block.
pub fn axpy_block(x: &BlockVector, scale: f64, u: &PerturbationDirection) -> Result<BlockVector> {
    let mut out = x.clone();
    out.add_scaled(scale, u)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_rejects_bad_dims() {
        assert!(BlockLayout::new(vec![]).is_err());
        assert!(BlockLayout::new(vec![2, 0]).is_err());
    }

    #[test]
    fn layout_offsets_are_contiguous() {
        let l = BlockLayout::new(vec![2, 3, 1]).unwrap();
        assert_eq!(l.total_dim(), 6);
        assert_eq!(l.range(0), 0..2);
        assert_eq!(l.range(1), 2..5);
        assert_eq!(l.range(2), 5..6);
        assert!(!l.is_uniform());
        assert_eq!(BlockLayout::uniform(5, 10).unwrap().common_block_dim(), Some(10));
    }

    #[test]
    fn gaussian_direction_is_block_sparse() {
        let l = BlockLayout::new(vec![2, 3]).unwrap();
        let mut rng = RngStream::new(1, 0);
        let u = sample_block_gaussian(&l, 0, &mut rng).unwrap();
        let full = u.as_full_vector();
        assert_eq!(&full.values()[2..], &[0.0, 0.0, 0.0]);
        assert!((full.norm_sq() - u.norm_sq()).abs() < 1e-15);
    }

    #[test]
    fn gaussian_direction_rejects_bad_agent() {
        let l = BlockLayout::new(vec![2, 3]).unwrap();
        let mut rng = RngStream::new(1, 0);
        assert!(matches!(sample_block_gaussian(&l, 2, &mut rng), Err(Error::Layout(_))));
    }

    #[test]
    fn gaussian_direction_moments() {
        let n = 1_000_000;
        let l = BlockLayout::new(vec![5]).unwrap();
        let mut rng = RngStream::new(2024, 9);
        let mut mean = [0.0; 5];
        let mut sq = 0.0;
        let mut quad = Vec::with_capacity(n);
        for _ in 0..n {
            let u = sample_block_gaussian(&l, 0, &mut rng).unwrap();
            for (m, v) in mean.iter_mut().zip(u.block_values()) {
                *m += v;
            }
            let s = u.norm_sq();
            sq += s;
            quad.push(s * s);
        }
        for m in mean {
            assert!((m / n as f64).abs() < 4e-3, "coordinate mean {}", m / n as f64);
        }
        assert!((sq / n as f64 - 5.0).abs() < 0.02);
        // E|u|^4 = n(n+2) for a chi-square with n degrees of freedom
        let m4 = quad.iter().sum::<f64>() / n as f64;
        let var = quad.iter().map(|q| (q - m4).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!((m4 - 35.0).abs() < 3.0 * se, "fourth moment {m4} +- {se}");
    }

    #[test]
    fn categorical_degenerate_and_invalid() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..100 {
            assert_eq!(sample_categorical(&[1.0], &mut rng).unwrap(), 0);
        }
        assert!(sample_categorical(&[0.5, 0.6], &mut rng).is_err());
        assert!(sample_categorical(&[1.2, -0.2], &mut rng).is_err());
        assert!(sample_categorical(&[], &mut rng).is_err());
    }

    fn frequencies(probs: &[f64], draws: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, 0);
        let mut counts = vec![0usize; probs.len()];
        for _ in 0..draws {
            counts[sample_categorical(probs, &mut rng).unwrap()] += 1;
        }
        counts.into_iter().map(|c| c as f64 / draws as f64).collect()
    }

    #[test]
    fn categorical_uniform_frequencies() {
        for f in frequencies(&[0.2; 5], 1_000_000, 17) {
            assert!((f - 0.2).abs() < 0.0012, "{f}");
        }
    }

    #[test]
    fn categorical_skewed_frequencies() {
        let f = frequencies(&[0.9, 0.1], 1_000_000, 18);
        assert!((f[0] - 0.9).abs() < 0.0009, "{}", f[0]);
    }

    #[test]
    fn axpy_examples() {
        let l = BlockLayout::new(vec![2, 3]).unwrap();
        let x = BlockVector::from_values(&l, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let u = PerturbationDirection::new(&l, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(axpy_block(&x, 0.0, &u).unwrap(), x);

        let z = BlockVector::zeros(&l);
        let u0 = PerturbationDirection::new(&l, 0, vec![1.0, 2.0]).unwrap();
        assert_eq!(axpy_block(&z, 1.0, &u0).unwrap().values(), &[1.0, 2.0, 0.0, 0.0, 0.0]);

        let l3 = BlockLayout::new(vec![1, 1, 1]).unwrap();
        let ones = BlockVector::from_values(&l3, vec![1.0; 3]).unwrap();
        let u1 = PerturbationDirection::new(&l3, 1, vec![3.0]).unwrap();
        assert_eq!(axpy_block(&ones, -2.0, &u1).unwrap().values(), &[1.0, -5.0, 1.0]);
    }

    #[test]
    fn axpy_layout_mismatch() {
        let a = BlockLayout::new(vec![2, 3]).unwrap();
        let b = BlockLayout::new(vec![3, 2]).unwrap();
        let u = PerturbationDirection::new(&b, 0, vec![1.0; 3]).unwrap();
        assert!(matches!(axpy_block(&BlockVector::zeros(&a), 1.0, &u), Err(Error::Layout(_))));
    }

    proptest! {
        #[test]
        fn axpy_touches_only_owning_block(
            dims in proptest::collection::vec(1usize..4, 1..5),
            seed in any::<u64>(),
            scale in -10.0f64..10.0,
        ) {
            let l = BlockLayout::new(dims).unwrap();
            let mut rng = RngStream::new(seed, 1);
            let x = BlockVector::standard_gaussian(&l, &mut rng);
            let agent = rng.below(l.num_blocks());
            let u = sample_block_gaussian(&l, agent, &mut rng).unwrap();
            let y = axpy_block(&x, scale, &u).unwrap();
            for b in 0..l.num_blocks() {
                if b != agent {
                    prop_assert_eq!(x.block(b), y.block(b));
                }
            }
        }

        #[test]
        fn sampling_replays_identically(seed in any::<u64>(), stream in any::<u64>()) {
            let l = BlockLayout::new(vec![3, 2]).unwrap();
            let mut a = RngStream::new(seed, stream);
            let mut b = RngStream::new(seed, stream);
            let ua = sample_block_gaussian(&l, 1, &mut a).unwrap();
            let ub = sample_block_gaussian(&l, 1, &mut b).unwrap();
            let bits = |u: &PerturbationDirection| u.block_values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&ua), bits(&ub));
        }
    }
}
