use super::{dim_err, Result, Tensor, TensorError};

/// Which entries of the last axis a softmax may see.
#[derive(Clone, Debug, PartialEq)]
pub enum Mask {
    /// Entry `(.., i, j)` is visible iff `j <= i`; needs rank ≥ 2.
    Causal,
    /// Row `r` (flattened over leading axes) sees its first `lengths[r]` entries.
    Lengths(Vec<usize>),
}

impl Mask {
    /// Number of visible entries for flattened row `r` of a tensor whose
    /// second-to-last extent is `inner_rows`.
    fn visible(&self, r: usize, inner_rows: usize, cols: usize) -> usize {
        match self {
            Mask::Causal => (r % inner_rows + 1).min(cols),
            Mask::Lengths(l) => l[r].min(cols),
        }
    }

    fn validate(&self, x: &Tensor) -> Result<()> {
        match self {
            Mask::Causal if x.rank() < 2 => Err(TensorError::Domain {
                op: "softmax_lastdim",
                reason: format!("causal mask needs rank >= 2, got {:?}", x.shape()),
            }),
            Mask::Lengths(l) if l.len() != x.rows() => Err(TensorError::Contract(format!(
                "{} lengths for {} rows",
                l.len(),
                x.rows()
            ))),
            Mask::Lengths(l) if l.iter().any(|&n| n == 0) => Err(TensorError::Domain {
                op: "softmax_lastdim",
                reason: "fully masked row".into(),
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn inner_rows(x: &Tensor) -> usize {
        if x.rank() >= 2 {
            x.shape()[x.rank() - 2]
        } else {
            1
        }
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` aligned to `out`, zero on broadcast axes.
fn aligned_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - shape.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every multi-index of `out` in row-major order, yielding the linear
/// offsets into two operands with the given aligned strides.
fn for_each_offset(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = out.iter().product();
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..n {
        f(oa, ob);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out[ax] {
                break;
            }
            oa -= sa[ax] * out[ax];
            ob -= sb[ax] * out[ax];
            idx[ax] = 0;
        }
    }
}

pub(crate) fn broadcast_binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shapes(a.shape(), b.shape()).ok_or_else(|| dim_err(op, a.shape(), b.shape()))?;
    if b.numel() == 1 && out == a.shape() {
        let y = b.data()[0];
        return Ok(a.map(|x| f(x, y)));
    }
    let sa = aligned_strides(a.shape(), &out);
    let sb = aligned_strides(b.shape(), &out);
    let mut data = Vec::with_capacity(out.iter().product());
    let (da, db) = (a.data(), b.data());
    for_each_offset(&out, &sa, &sb, |ia, ib| data.push(f(da[ia], db[ib])));
    Tensor::new(out, data)
}

/// Sums `grad` (shaped like a broadcast result) back down to `shape`.
pub(crate) fn reduce_to_shape(grad: &Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        return grad.clone();
    }
    let target = if shape.is_empty() { vec![] } else { shape.to_vec() };
    let numel: usize = target.iter().product();
    let mut data = vec![0.0; numel];
    let st = aligned_strides(&target, grad.shape());
    let strides_out = {
        let mut s = vec![0; grad.rank()];
        let mut acc = 1;
        for i in (0..grad.rank()).rev() {
            s[i] = acc;
            acc *= grad.shape()[i];
        }
        s
    };
    let g = grad.data();
    for_each_offset(grad.shape(), &strides_out, &st, |io, it| data[it] += g[io]);
    Tensor::new(target, data).expect("reduced shape is valid")
}

fn check_matrix(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(dim_err(op, a.shape(), b.shape()));
    }
    Ok(())
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix("matmul", a, b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(dim_err("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix("matmul_nt", a, b)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (n, k2) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(dim_err("matmul_nt", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            out.push(arow.iter().zip(brow).map(|(x, y)| x * y).sum());
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_matrix("matmul_tn", a, b)?;
    let (k, m) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(dim_err("matmul_tn", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &ad[p * m..(p + 1) * m];
        let brow = &bd[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

pub(crate) fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(TensorError::Contract(format!(
            "transpose needs a matrix, got {:?}",
            a.shape()
        )));
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(d[i * n + j]);
        }
    }
    Tensor::new(vec![n, m], out)
}

pub(crate) fn softmax_lastdim(x: &Tensor, mask: Option<&Mask>) -> Result<Tensor> {
    if let Some(m) = mask {
        m.validate(x)?;
    }
    let cols = x.cols();
    let inner = Mask::inner_rows(x);
    let mut out = vec![0.0; x.numel()];
    for r in 0..x.rows() {
        let visible = mask.map_or(cols, |m| m.visible(r, inner, cols));
        let row = &x.row(r)[..visible];
        let o = &mut out[r * cols..r * cols + visible];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (oi, &xi) in o.iter_mut().zip(row) {
            *oi = (xi - max).exp();
            total += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn log_softmax_lastdim(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|v| v - lse));
    }
    debug_assert_eq!(out.len(), x.rows() * cols);
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Sum over the last axis, keeping it with extent 1.
pub(crate) fn sum_lastdim(x: &Tensor) -> Tensor {
    let data = (0..x.rows()).map(|r| x.row(r).iter().sum()).collect();
    let mut shape = x.shape().to_vec();
    match shape.last_mut() {
        Some(last) => *last = 1,
        None => shape.push(1),
    }
    Tensor::new(shape, data).expect("rows > 0")
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales the whole set so its joint L2 norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold && norm > 0.0 {
        let c = threshold / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= c;
            }
        }
    }
    norm
}
