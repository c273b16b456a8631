//! Batched gated recurrent unit with a hand-written backward pass.
//!
//! Gate layout along the `3H` axis is `[reset, update, candidate]`:
//!
//! ```text
//! r  = σ(x Wx_r + bx_r + h Wh_r + bh_r)
//! z  = σ(x Wx_z + bx_z + h Wh_z + bh_z)
//! n  = tanh(x Wx_n + bx_n + r ⊙ (h Wh_n + bh_n))
//! h' = (1 - z) ⊙ n + z ⊙ h
//! ```
//!
//! Rows whose mask is off keep their previous hidden state unchanged.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};

use super::real::sigmoid;
use super::Real;

pub(crate) struct GruWeights<'a, F> {
    pub wx: &'a Array2<F>,
    pub wh: &'a Array2<F>,
    pub bx: &'a Array2<F>,
    pub bh: &'a Array2<F>,
}

pub(crate) struct GruGrads<'a, F> {
    pub wx: &'a mut Array2<F>,
    pub wh: &'a mut Array2<F>,
    pub bx: &'a mut Array2<F>,
    pub bh: &'a mut Array2<F>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub(crate) struct GruCache<F> {
    pub input_tokens: Vec<usize>,
    pub x: Array2<F>,
    pub h_prev: Array2<F>,
    pub r: Array2<F>,
    pub z: Array2<F>,
    pub n: Array2<F>,
    /// `h Wh_n + bh_n`, before the reset gate is applied.
    pub gh_n: Array2<F>,
    pub mask: Option<Vec<bool>>,
}

fn affine<F: Real>(input: &ArrayView2<F>, w: &Array2<F>, b: &Array2<F>) -> Array2<F> {
    let rows = input.nrows();
    let mut out = b.broadcast((rows, b.ncols())).expect("bias row").to_owned();
    general_mat_mul(F::one(), input, w, F::one(), &mut out);
    out
}

/// One step. Returns the new hidden state and the cache (always built; it is
/// cheap relative to the matrix products).
pub(crate) fn forward<F: Real>(
    w: &GruWeights<'_, F>,
    x: Array2<F>,
    h: &Array2<F>,
    mask: Option<&[bool]>,
    input_tokens: Vec<usize>,
) -> (Array2<F>, GruCache<F>) {
    let (batch, hidden) = h.dim();
    let gx = affine(&x.view(), w.wx, w.bx);
    let gh = affine(&h.view(), w.wh, w.bh);
    let mut r = Array2::zeros((batch, hidden));
    let mut z = Array2::zeros((batch, hidden));
    let mut n = Array2::zeros((batch, hidden));
    let mut gh_n = Array2::zeros((batch, hidden));
    let mut h_new = Array2::zeros((batch, hidden));
    for b in 0..batch {
        let gxr = gx.row(b);
        let ghr = gh.row(b);
        let (gx, gh) = (gxr.as_slice().unwrap(), ghr.as_slice().unwrap());
        let keep = mask.is_none_or(|m| m[b]);
        for j in 0..hidden {
            let rj = sigmoid(gx[j] + gh[j]);
            let zj = sigmoid(gx[hidden + j] + gh[hidden + j]);
            let ghn = gh[2 * hidden + j];
            let nj = (gx[2 * hidden + j] + rj * ghn).tanh();
            let hp = h[[b, j]];
            r[[b, j]] = rj;
            z[[b, j]] = zj;
            n[[b, j]] = nj;
            gh_n[[b, j]] = ghn;
            h_new[[b, j]] = if keep { (F::one() - zj) * nj + zj * hp } else { hp };
        }
    }
    let cache = GruCache {
        input_tokens,
        x,
        h_prev: h.clone(),
        r,
        z,
        n,
        gh_n,
        mask: mask.map(<[bool]>::to_vec),
    };
    (h_new, cache)
}

/// Forward without keeping intermediates.
pub(crate) fn step<F: Real>(w: &GruWeights<'_, F>, x: &Array2<F>, h: &Array2<F>) -> Array2<F> {
    let (batch, hidden) = h.dim();
    let gx = affine(&x.view(), w.wx, w.bx);
    let gh = affine(&h.view(), w.wh, w.bh);
    let mut h_new = Array2::zeros((batch, hidden));
    for b in 0..batch {
        let gxr = gx.row(b);
        let ghr = gh.row(b);
        let (gx, gh) = (gxr.as_slice().unwrap(), ghr.as_slice().unwrap());
        let mut out = h_new.row_mut(b);
        for j in 0..hidden {
            let rj = sigmoid(gx[j] + gh[j]);
            let zj = sigmoid(gx[hidden + j] + gh[hidden + j]);
            let nj = (gx[2 * hidden + j] + rj * gh[2 * hidden + j]).tanh();
            out[j] = (F::one() - zj) * nj + zj * h[[b, j]];
        }
    }
    h_new
}

/// Accumulates weight gradients and returns `(d_input, d_h_prev)`.
pub(crate) fn backward<F: Real>(
    w: &GruWeights<'_, F>,
    g: GruGrads<'_, F>,
    cache: &GruCache<F>,
    dh_out: &Array2<F>,
) -> (Array2<F>, Array2<F>) {
    let (batch, hidden) = dh_out.dim();
    let mut dgx = Array2::zeros((batch, 3 * hidden));
    let mut dgh = Array2::zeros((batch, 3 * hidden));
    let mut dh_prev = Array2::zeros((batch, hidden));
    for b in 0..batch {
        let keep = cache.mask.as_ref().is_none_or(|m| m[b]);
        if !keep {
            dh_prev.row_mut(b).assign(&dh_out.row(b));
            continue;
        }
        for j in 0..hidden {
            let d = dh_out[[b, j]];
            let (r, z, n) = (cache.r[[b, j]], cache.z[[b, j]], cache.n[[b, j]]);
            let hp = cache.h_prev[[b, j]];
            let dn = d * (F::one() - z);
            let dz = d * (hp - n);
            dh_prev[[b, j]] = d * z;
            let dn_pre = dn * (F::one() - n * n);
            let dr = dn_pre * cache.gh_n[[b, j]];
            let dr_pre = dr * r * (F::one() - r);
            let dz_pre = dz * z * (F::one() - z);
            dgx[[b, j]] = dr_pre;
            dgx[[b, hidden + j]] = dz_pre;
            dgx[[b, 2 * hidden + j]] = dn_pre;
            dgh[[b, j]] = dr_pre;
            dgh[[b, hidden + j]] = dz_pre;
            dgh[[b, 2 * hidden + j]] = dn_pre * r;
        }
    }
    general_mat_mul(F::one(), &cache.x.t(), &dgx, F::one(), g.wx);
    general_mat_mul(F::one(), &cache.h_prev.t(), &dgh, F::one(), g.wh);
    *g.bx += &dgx.sum_axis(Axis(0)).insert_axis(Axis(0));
    *g.bh += &dgh.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dx = dgx.dot(&w.wx.t());
    general_mat_mul(F::one(), &dgh, &w.wh.t(), F::one(), &mut dh_prev);
    (dx, dh_prev)
}
