//! Minimal dense-network engine: parameter matrices, MLPs with analytic
//! backprop, Adam, Polyak target updates and the checkpoint container.

mod adam;
pub mod checkpoint;
mod matrix;
mod mlp;

pub use adam::AdamState;
pub use checkpoint::{Checkpoint, NamedBlock};
pub use matrix::ParamMatrix;
pub use mlp::{Activation, LayerSpec, Mlp, MlpCache, MlpSpec};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Anything that owns an ordered list of learnable blocks.
///
/// The order is part of the contract: gradients, optimizer moments and
/// checkpoints all follow it.
pub trait ParamSet<T: Real> {
    fn blocks(&self) -> Vec<&ParamMatrix<T>>;
    fn blocks_mut(&mut self) -> Vec<&mut ParamMatrix<T>>;

    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn block_shapes(&self) -> Vec<(usize, usize)> {
        self.blocks().iter().map(|b| b.shape()).collect()
    }

    /// All parameters concatenated in block order.
    fn flat(&self) -> Vec<T> {
        self.blocks().iter().flat_map(|b| b.as_slice().iter().copied()).collect()
    }
}

impl<T: Real> ParamSet<T> for Vec<ParamMatrix<T>> {
    fn blocks(&self) -> Vec<&ParamMatrix<T>> {
        self.iter().collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamMatrix<T>> {
        self.iter_mut().collect()
    }
}

/// Polyak update: `target <- (1 - tau) * target + tau * source`.
pub fn soft_update<T: Real, P: ParamSet<T> + ?Sized>(target: &mut P, source: &P, tau: T) -> Result<()> {
    if !(tau >= T::zero() && tau <= T::one()) {
        return Err(Error::Config(format!("soft update rate must lie in [0, 1], got {tau}")));
    }
    let src = source.blocks();
    if target.block_shapes() != source.block_shapes() {
        return Err(Error::dim(
            "soft_update",
            format!("{:?}", source.block_shapes()),
            format!("{:?}", target.block_shapes()),
        ));
    }
    let keep = T::one() - tau;
    for (t, s) in target.blocks_mut().into_iter().zip(src) {
        for (tv, &sv) in t.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *tv = keep * *tv + tau * sv;
        }
    }
    Ok(())
}

/// Overwrites `target` with `source`.
pub fn hard_update<T: Real, P: ParamSet<T> + ?Sized>(target: &mut P, source: &P) -> Result<()> {
    soft_update(target, source, T::one())
}

/// Euclidean norm over every entry of a gradient list.
pub fn global_norm<T: Real>(grads: &[ParamMatrix<T>]) -> T {
    grads.iter().map(|g| g.sq_norm()).sum::<T>().sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
pub fn clip_global_norm<T: Real>(grads: &mut [ParamMatrix<T>], max_norm: T) -> T {
    let norm = global_norm(grads);
    if norm > max_norm && norm > T::zero() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mats(vals: &[f64]) -> Vec<ParamMatrix<f64>> {
        vec![ParamMatrix::from_vec(1, vals.len(), vals.to_vec()).unwrap()]
    }

    #[test]
    fn soft_update_endpoints() {
        let src = mats(&[1.0, 2.0, 3.0]);
        let mut t = mats(&[-1.0, 0.0, 5.0]);
        soft_update(&mut t, &src, 0.0).unwrap();
        assert_eq!(t, mats(&[-1.0, 0.0, 5.0]));
        soft_update(&mut t, &src, 1.0).unwrap();
        assert_eq!(t, src);
    }

    #[test]
    fn soft_update_geometric_decay() {
        let src = mats(&[1.0, -2.0, 0.5]);
        let mut t = mats(&[3.0, 4.0, -1.0]);
        let tau = 0.01;
        let dist = |a: &Vec<ParamMatrix<f64>>| {
            a[0].as_slice().iter().zip(src[0].as_slice()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let mut prev = dist(&t);
        for _ in 0..50 {
            soft_update(&mut t, &src, tau).unwrap();
            let d = dist(&t);
            assert!((d / prev - (1.0 - tau)).abs() < 1e-12);
            prev = d;
        }
    }

    #[test]
    fn soft_update_rejects_bad_input() {
        let src = mats(&[1.0, 2.0]);
        let mut t = mats(&[1.0, 2.0, 3.0]);
        assert!(matches!(soft_update(&mut t, &mats(&[1.0, 2.0, 3.0]), 1.5), Err(Error::Config(_))));
        assert!(matches!(soft_update(&mut t, &src, 0.5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = mats(&[3.0, 4.0]);
        let before = clip_global_norm(&mut g, 1.0);
        assert_eq!(before, 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }
}
