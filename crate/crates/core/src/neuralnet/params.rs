/// A bundle of trainable tensors that optimizers can walk in a fixed order.
///
/// Gradients use the same type as the parameters they belong to, so
/// `tensors()` of a gradient lines up entry for entry with the parameters.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    /// Same shapes, all entries zero.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

pub fn global_norm<P: Parameters>(p: &P) -> f64 {
    p.tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<P: Parameters>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// `acc += scale · other`
pub fn accumulate<P: Parameters>(acc: &mut P, other: &P, scale: f64) {
    for (a, o) in acc.tensors_mut().into_iter().zip(other.tensors()) {
        for (x, y) in a.iter_mut().zip(o) {
            *x += scale * y;
        }
    }
}

pub fn all_finite<P: Parameters>(p: &P) -> bool {
    p.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
}

/// Copies every entry of `src` into `dst`.
pub fn copy_into<P: Parameters>(dst: &mut P, src: &P) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        d.copy_from_slice(s);
    }
}
