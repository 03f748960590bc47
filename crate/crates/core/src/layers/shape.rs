use crate::tensor::{record, Tensor};
use crate::{Error, Result};

/// Stack `a`'s channels followed by `b`'s.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, ca, h, w) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let hw = h * w;
    let c = ca + cb;
    let mut out = Vec::with_capacity(n * c * hw);
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * ca * hw..(i + 1) * ca * hw]);
        out.extend_from_slice(&b.data()[i * cb * hw..(i + 1) * cb * hw]);
    }
    record("concat_channels", &[a, b], vec![n, c, h, w], out, move |g, wants| {
        let split = |start: usize, len: usize| {
            let mut d = Vec::with_capacity(n * len * hw);
            for i in 0..n {
                d.extend_from_slice(&g[(i * c + start) * hw..(i * c + start + len) * hw]);
            }
            d
        };
        vec![wants[0].then(|| split(0, ca)), wants[1].then(|| split(ca, cb))]
    })
}

/// Channels `[start, start + len)` of an `[N,C,H,W]` tensor.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if len == 0 || start + len > c {
        return Err(Error::InvalidArgument {
            op: "slice_channels",
            msg: format!("range {start}..{} outside {c} channels", start + len),
        });
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(n * len * hw);
    for i in 0..n {
        out.extend_from_slice(&x.data()[(i * c + start) * hw..(i * c + start + len) * hw]);
    }
    record("slice_channels", &[x], vec![n, len, h, w], out, move |g, _| {
        let mut dx = vec![0.0; n * c * hw];
        for i in 0..n {
            dx[(i * c + start) * hw..(i * c + start + len) * hw]
                .copy_from_slice(&g[i * len * hw..(i + 1) * len * hw]);
        }
        vec![Some(dx)]
    })
}
