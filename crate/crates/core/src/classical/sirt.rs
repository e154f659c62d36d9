use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Image, Projector, SirtWeights, Sinogram};
use crate::real::{norm2, Real};

/// `sum_n w[n] * channels[n]`.
pub fn weighted_mean<T: Real>(channels: &[Image<T>], weights: &[T]) -> Result<Image<T>> {
    let first = channels
        .first()
        .ok_or_else(|| invalid("channel set", "no channels"))?;
    if weights.len() != channels.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} channels",
            weights.len(),
            channels.len()
        )));
    }
    let mut out = Image::zeros(first.grid);
    for (c, &w) in channels.iter().zip(weights) {
        first.same_grid(c)?;
        out.axpy(w, c);
    }
    Ok(out)
}

/// One simultaneous update shared by all channels:
/// `r = y - A(sum w x)`, then `x_n += D Aᵀ E r` for every `n`.
///
/// Returns `||r||₂` measured before the update.
pub fn sirt_step<T: Real>(
    channels: &mut [Image<T>],
    weights: &[T],
    y: &Sinogram<T>,
    sw: &SirtWeights<T>,
    projector: &Projector,
) -> Result<T> {
    let mean = weighted_mean(channels, weights)?;
    if mean.grid != *projector.grid() {
        return Err(Error::Shape("channel grid differs from projector grid".into()));
    }
    if y.values.len() != sw.row_inv.len() || y.geometry != *projector.geometry() {
        return Err(Error::Shape("sinogram does not match the projector".into()));
    }
    let mut r = vec![T::zero(); y.values.len()];
    projector.forward_into(&mean.values, &mut r);
    for (ri, &yi) in r.iter_mut().zip(&y.values) {
        *ri = yi - *ri;
    }
    let res_norm = norm2(&r);
    if !res_norm.is_finite() {
        return Err(Error::NonFinite("SIRT residual".into()));
    }
    r.iter_mut().zip(&sw.row_inv).for_each(|(ri, &e)| *ri *= e);
    let mut corr = vec![T::zero(); sw.col_inv.len()];
    projector.back_into(&r, &mut corr);
    corr.iter_mut().zip(&sw.col_inv).for_each(|(c, &d)| *c *= d);
    channels.par_iter_mut().for_each(|ch| {
        ch.values.iter_mut().zip(&corr).for_each(|(v, &c)| *v += c);
    });
    Ok(res_norm)
}

/// Plain single-channel SIRT from `x0`. Returns the iterate and the residual
/// norm before every update followed by the final one.
pub fn sirt<T: Real>(y: &Sinogram<T>, x0: Image<T>, n_iters: usize, projector: &Projector) -> Result<(Image<T>, Vec<T>)> {
    let sw = projector.sirt_weights::<T>();
    let mut ch = vec![x0];
    let w = [T::one()];
    let mut history = Vec::with_capacity(n_iters + 1);
    for _ in 0..n_iters {
        history.push(sirt_step(&mut ch, &w, y, &sw, projector)?);
    }
    let x = ch.pop().expect("one channel");
    let ax = projector.forward(&x)?;
    let r: Vec<T> = y.values.iter().zip(&ax.values).map(|(&a, &b)| a - b).collect();
    history.push(norm2(&r));
    Ok((x, history))
}
