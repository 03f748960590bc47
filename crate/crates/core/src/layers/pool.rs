use crate::tensor::{record, Tensor};
use crate::{Error, Result};

/// 2x2 max pooling with stride 2. The gradient of each window goes to its
/// maximum; ties resolve to the first element in scan order.
pub fn maxpool2d(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument {
            op: "maxpool2d",
            msg: format!("spatial dims must be even, got {h}x{w}"),
        });
    }
    let (ho, wo) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    let len = xd.len();
    record("maxpool2d", &[x], vec![n, c, ho, wo], out, move |g, _| {
        let mut dx = vec![0.0; len];
        for (gi, &src) in g.iter().zip(&argmax) {
            dx[src] += gi;
        }
        vec![Some(dx)]
    })
}
