use super::{ParamMatrix, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// First/second moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new<P: ParamSet<T> + ?Sized>(params: &P) -> Self {
        Self::with_constants(params, T::lit(0.9), T::lit(0.999), T::lit(1e-8))
    }

    pub fn with_constants<P: ParamSet<T> + ?Sized>(params: &P, beta1: T, beta2: T, eps: T) -> Self {
        let zeros: Vec<Vec<T>> = params.blocks().iter().map(|b| vec![T::zero(); b.len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of `params` along `grads`.
    ///
    /// Gradients are checked before anything is touched, so a non-finite
    /// gradient leaves both parameters and moments unchanged.
    pub fn step<P: ParamSet<T> + ?Sized>(&mut self, params: &mut P, grads: &[ParamMatrix<T>], lr: T) -> Result<()> {
        let shapes = params.block_shapes();
        let grad_shapes: Vec<_> = grads.iter().map(|g| g.shape()).collect();
        if shapes != grad_shapes || shapes.len() != self.first.len() {
            return Err(Error::dim("adam_step", format!("{shapes:?}"), format!("{grad_shapes:?}")));
        }
        if let Some((block, _)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::TrainingFault(format!(
                "non-finite gradient in parameter block {block} at optimizer step {}",
                self.step + 1
            )));
        }
        self.step += 1;
        let t = i32::try_from(self.step).unwrap_or(i32::MAX);
        let (b1, b2) = (self.beta1, self.beta2);
        let corr1 = T::one() - b1.powi(t);
        let corr2 = T::one() - b2.powi(t);
        for (((p, g), m), v) in params
            .blocks_mut()
            .into_iter()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / corr1;
                let v_hat = *vv / corr2;
                *pv -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
