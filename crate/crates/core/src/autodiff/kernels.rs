//! Forward evaluation of every primitive.

use super::conv::{conv1d_forward, conv1d_input_grad, conv1d_weight_grad, ConvGeom};
use super::{AutodiffError, BnAux, BnPart, Op, Result};
use crate::scalar::Scalar;
use crate::tensor::{broadcast_shapes, broadcast_strides, for_each_broadcast, Tensor};

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

pub(super) fn compute<T: Scalar>(
    op: &Op<T>,
    v: &[&Tensor<T>],
    parent_aux: Option<&BnAux<T>>,
) -> Result<(Tensor<T>, Option<BnAux<T>>)> {
    let plain = |t: Tensor<T>| Ok((t, None));
    match op {
        Op::Leaf(_) => unreachable!("leaves are never recomputed"),
        Op::Add => plain(binary(v[0], v[1], "add", |a, b| a + b)?),
        Op::Sub => plain(binary(v[0], v[1], "sub", |a, b| a - b)?),
        Op::Mul => plain(binary(v[0], v[1], "mul", |a, b| a * b)?),
        Op::Div => plain(binary(v[0], v[1], "div", |a, b| a / b)?),
        Op::Neg => plain(v[0].map(|x| -x)),
        Op::Scale(c) => plain(v[0].map(|x| x * *c)),
        Op::AddScalar(c) => plain(v[0].map(|x| x + *c)),
        Op::Relu => plain(v[0].map(|x| if x > T::zero() { x } else { T::zero() })),
        Op::PositiveMask => plain(v[0].map(|x| if x > T::zero() { T::one() } else { T::zero() })),
        Op::RangeMask(lo, hi) => plain(v[0].map(|x| {
            if x >= *lo && x <= *hi {
                T::one()
            } else {
                T::zero()
            }
        })),
        Op::Clamp(lo, hi) => plain(v[0].map(|x| x.max(*lo).min(*hi))),
        Op::Sigmoid => plain(v[0].map(sigmoid)),
        Op::Softmax => plain(softmax(v[0])),
        Op::Log => plain(v[0].map(|x| x.ln())),
        Op::MatMul { ta, tb } => plain(matmul(v[0], v[1], *ta, *tb)?),
        Op::Conv(g) => {
            check_shape("conv1d", v[0], &g.input_shape())?;
            check_shape("conv1d", v[1], &g.weight_shape())?;
            plain(Tensor::new(
                g.output_shape(),
                conv1d_forward(g, v[0].data(), v[1].data()),
            )?)
        }
        Op::ConvInputGrad(g) => {
            check_shape("conv1d_input_grad", v[0], &g.output_shape())?;
            check_shape("conv1d_input_grad", v[1], &g.weight_shape())?;
            plain(Tensor::new(
                g.input_shape(),
                conv1d_input_grad(g, v[0].data(), v[1].data()),
            )?)
        }
        Op::ConvWeightGrad(g) => {
            check_shape("conv1d_weight_grad", v[0], &g.input_shape())?;
            check_shape("conv1d_weight_grad", v[1], &g.output_shape())?;
            plain(Tensor::new(
                g.weight_shape(),
                conv1d_weight_grad(g, v[0].data(), v[1].data()),
            )?)
        }
        Op::BatchNorm { eps } => {
            let (out, aux) = batch_norm(v[0], v[1], v[2], *eps)?;
            Ok((out, Some(aux)))
        }
        Op::BnSaved(part) => {
            let aux = parent_aux.ok_or_else(|| {
                shape_err("batch_norm_statistics", "parent is not batch-norm".into())
            })?;
            plain(match part {
                BnPart::Normalized => aux.normalized.clone(),
                BnPart::InvStd => aux.inv_std.clone(),
            })
        }
        Op::ConcatLast => plain(concat_last(v)?),
        Op::SliceLast { start, len } => plain(slice_last(v[0], *start, *len)?),
        Op::PadLast { start, total } => plain(pad_last(v[0], *start, *total)?),
        Op::Reshape(shape) => plain(v[0].reshaped(shape.clone())?),
        Op::SumTo(shape) => plain(sum_to(v[0], shape)?),
        Op::BroadcastTo(shape) => {
            let out = broadcast_shapes(v[0].shape(), shape)?;
            if &out != shape {
                return Err(shape_err(
                    "broadcast_to",
                    format!("{:?} does not broadcast to {:?}", v[0].shape(), shape),
                ));
            }
            let zeros = Tensor::zeros(shape.clone())?;
            plain(binary(v[0], &zeros, "broadcast_to", |a, _| a)?)
        }
        Op::SumAll => plain(Tensor::scalar(v[0].data().iter().copied().sum())),
        Op::Detach | Op::GradReverse(_) => plain(v[0].clone()),
    }
}

fn check_shape<T: Scalar>(op: &'static str, t: &Tensor<T>, want: &[usize]) -> Result<()> {
    if t.shape() != want {
        return Err(shape_err(
            op,
            format!("expected {:?}, got {:?}", want, t.shape()),
        ));
    }
    Ok(())
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Ok(Tensor::new(a.shape().to_vec(), data)?);
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape())
        .map_err(|_| shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())))?;
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let n: usize = out_shape.iter().product();
    let mut data = vec![T::zero(); n];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| data[o] = f(ad[i], bd[j]));
    Ok(Tensor::new(out_shape, data)?)
}

pub(crate) fn sum_to<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    if x.shape() == shape {
        return Ok(x.clone());
    }
    let ok = shape.len() <= x.rank()
        && broadcast_shapes(shape, x.shape()).ok().as_deref() == Some(x.shape());
    if !ok {
        return Err(shape_err(
            "sum_to",
            format!("cannot reduce {:?} to {:?}", x.shape(), shape),
        ));
    }
    let st = broadcast_strides(shape, x.shape());
    let ident = broadcast_strides(x.shape(), x.shape());
    let mut out = vec![T::zero(); shape.iter().product()];
    let xd = x.data();
    for_each_broadcast(x.shape(), &ident, &st, |_, i, j| out[j] += xd[i]);
    Ok(Tensor::new(shape.to_vec(), out)?)
}

fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let d = *x.shape().last().expect("non-empty shape");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(shape_err(
            "matmul",
            format!("operands must be rank 2, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, n) = if tb { (bc, br) } else { (br, bc) };
    if k != k2 {
        return Err(shape_err(
            "matmul",
            format!(
                "inner dimensions differ: {:?}{} x {:?}{}",
                a.shape(),
                if ta { "^T" } else { "" },
                b.shape(),
                if tb { "^T" } else { "" }
            ),
        ));
    }
    let a_strides = if ta { (1, ac as isize) } else { (ac as isize, 1) };
    let b_strides = if tb { (1, bc as isize) } else { (bc as isize, 1) };
    let mut c = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        a_strides,
        b.data(),
        b_strides,
        T::zero(),
        &mut c,
        (n as isize, 1),
    );
    Ok(Tensor::new(vec![m, n], c)?)
}

fn batch_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BnAux<T>)> {
    if x.rank() != 3 {
        return Err(shape_err("batch_norm", format!("input must be [B, C, L], got {:?}", x.shape())));
    }
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    check_shape("batch_norm", gamma, &[c])?;
    check_shape("batch_norm", beta, &[c])?;
    let count = T::lit((b * l) as f64);
    let xd = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for bi in 0..b {
        for ci in 0..c {
            for &v in &xd[(bi * c + ci) * l..][..l] {
                mean[ci] += v;
            }
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for bi in 0..b {
        for ci in 0..c {
            for &v in &xd[(bi * c + ci) * l..][..l] {
                let d = v - mean[ci];
                var[ci] += d * d;
            }
        }
    }
    for s in &mut var {
        *s /= count;
    }
    let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s + eps).sqrt()).collect();
    let mut normalized = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let (gd, bd) = (gamma.data(), beta.data());
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * l;
            for j in base..base + l {
                let h = (xd[j] - mean[ci]) * inv_std[ci];
                normalized[j] = h;
                out[j] = gd[ci] * h + bd[ci];
            }
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        BnAux {
            normalized: Tensor::new(shape, normalized)?,
            inv_std: Tensor::new(vec![1, c, 1], inv_std)?,
            mean: Tensor::new(vec![c], mean)?,
            var: Tensor::new(vec![c], var)?,
        },
    ))
}

fn concat_last<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| shape_err("concat", "no operands".into()))?;
    let lead = &first.shape()[..first.rank() - 1];
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        if &p.shape()[..p.rank() - 1] != lead {
            return Err(shape_err(
                "concat",
                format!("{:?} vs {:?}", first.shape(), p.shape()),
            ));
        }
        widths.push(*p.shape().last().unwrap());
    }
    let rows: usize = lead.iter().product();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Ok(Tensor::new(shape, data)?)
}

fn slice_last<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let w = *x.shape().last().unwrap();
    if start + len > w || len == 0 {
        return Err(shape_err(
            "slice",
            format!("[{start}, {}) outside width {w}", start + len),
        ));
    }
    let data = x
        .data()
        .chunks(w)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Ok(Tensor::new(shape, data)?)
}

fn pad_last<T: Scalar>(x: &Tensor<T>, start: usize, total: usize) -> Result<Tensor<T>> {
    let w = *x.shape().last().unwrap();
    if start + w > total {
        return Err(shape_err("pad", format!("width {w} at {start} exceeds {total}")));
    }
    let rows = x.len() / w;
    let mut data = vec![T::zero(); rows * total];
    for (r, row) in x.data().chunks(w).enumerate() {
        data[r * total + start..r * total + start + w].copy_from_slice(row);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = total;
    Ok(Tensor::new(shape, data)?)
}

pub(crate) fn conv_geom_for(x: &[usize], w: &[usize], stride: usize) -> Result<ConvGeom> {
    if x.len() != 3 || w.len() != 3 {
        return Err(shape_err(
            "conv1d",
            format!("expected [B,C,L] and [O,C,K], got {x:?} and {w:?}"),
        ));
    }
    if x[1] != w[1] {
        return Err(shape_err(
            "conv1d",
            format!("input has {} channels, weight expects {}", x[1], w[1]),
        ));
    }
    if stride == 0 {
        return Err(shape_err("conv1d", "stride must be positive".into()));
    }
    Ok(ConvGeom::new(x[0], x[1], w[0], w[2], stride, x[2]))
}
