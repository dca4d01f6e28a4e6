// Raw loops behind the convolution and pooling nodes. All buffers are one
// batch item in (C, H, W) order; callers iterate over the batch.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn in_len(&self) -> usize {
        self.c_in * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.c_out * self.oh * self.ow
    }

    /// Output positions `o` in `0..n_out` with `0 <= o*stride + k - pad < n_in`.
    fn valid(&self, k: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > k {
            (self.pad - k).div_ceil(s)
        } else {
            0
        };
        // largest o with o*s + k - pad <= n_in - 1
        let top = n_in + self.pad;
        let hi = if top > k { (top - k - 1) / s + 1 } else { 0 };
        (lo.min(n_out), hi.min(n_out))
    }
}

/// `out[f] += Σ_c,ky,kx weight[f,c,ky,kx] * input[c, oy*s+ky-p, ox*s+kx-p]`.
pub(crate) fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], out: &mut [f64]) {
    let (ih, iw, oh, ow, s, p) = (g.h, g.w, g.oh, g.ow, g.stride, g.pad);
    for f in 0..g.c_out {
        let out_plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
        for c in 0..g.c_in {
            let in_plane = &input[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..g.kh {
                let (y0, y1) = g.valid(ky, ih, oh);
                for kx in 0..g.kw {
                    let wv = weight[((f * g.c_in + c) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = g.valid(kx, iw, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let orow = &mut out_plane[oy * ow + x0..oy * ow + x1];
                        let ix0 = x0 * s + kx - p;
                        let irow = &in_plane[iy * iw..(iy + 1) * iw];
                        if s == 1 {
                            for (o, i) in orow.iter_mut().zip(&irow[ix0..ix0 + (x1 - x0)]) {
                                *o += wv * i;
                            }
                        } else {
                            for (o, i) in orow.iter_mut().zip(irow[ix0..].iter().step_by(s)) {
                                *o += wv * i;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`conv_forward`] in its input: scatters `gout` back through `weight`.
pub(crate) fn conv_backward_input(g: &ConvGeom, gout: &[f64], weight: &[f64], gin: &mut [f64]) {
    let (ih, iw, oh, ow, s, p) = (g.h, g.w, g.oh, g.ow, g.stride, g.pad);
    for f in 0..g.c_out {
        let gplane = &gout[f * oh * ow..(f + 1) * oh * ow];
        for c in 0..g.c_in {
            let in_plane = &mut gin[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..g.kh {
                let (y0, y1) = g.valid(ky, ih, oh);
                for kx in 0..g.kw {
                    let wv = weight[((f * g.c_in + c) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = g.valid(kx, iw, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * ow + x0..oy * ow + x1];
                        let ix0 = x0 * s + kx - p;
                        let irow = &mut in_plane[iy * iw..(iy + 1) * iw];
                        if s == 1 {
                            for (i, o) in irow[ix0..ix0 + (x1 - x0)].iter_mut().zip(grow) {
                                *i += wv * o;
                            }
                        } else {
                            for (i, o) in irow[ix0..].iter_mut().step_by(s).zip(grow) {
                                *i += wv * o;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`conv_forward`] in its weight, accumulated into `gw`.
pub(crate) fn conv_backward_weight(g: &ConvGeom, input: &[f64], gout: &[f64], gw: &mut [f64]) {
    let (ih, iw, oh, ow, s, p) = (g.h, g.w, g.oh, g.ow, g.stride, g.pad);
    for f in 0..g.c_out {
        let gplane = &gout[f * oh * ow..(f + 1) * oh * ow];
        for c in 0..g.c_in {
            let in_plane = &input[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..g.kh {
                let (y0, y1) = g.valid(ky, ih, oh);
                for kx in 0..g.kw {
                    let (x0, x1) = g.valid(kx, iw, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let grow = &gplane[oy * ow + x0..oy * ow + x1];
                        let ix0 = x0 * s + kx - p;
                        let irow = &in_plane[iy * iw..(iy + 1) * iw];
                        if s == 1 {
                            acc += grow
                                .iter()
                                .zip(&irow[ix0..ix0 + (x1 - x0)])
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        } else {
                            acc += grow
                                .iter()
                                .zip(irow[ix0..].iter().step_by(s))
                                .map(|(a, b)| a * b)
                                .sum::<f64>();
                        }
                    }
                    gw[((f * g.c_in + c) * g.kh + ky) * g.kw + kx] += acc;
                }
            }
        }
    }
}

/// Max pooling over each plane; returns the flat in-plane argmax of every output.
/// Ties resolve to the first position in row-major order.
pub(crate) fn max_pool_forward(
    planes: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
    input: &[f64],
    out: &mut [f64],
    argmax: &mut [usize],
) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    for pl in 0..planes {
        let ip = &input[pl * h * w..(pl + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = (oy * stride) * w + ox * stride;
                for dy in 0..window {
                    let row = (oy * stride + dy) * w;
                    for dx in 0..window {
                        let idx = row + ox * stride + dx;
                        if ip[idx] > best {
                            best = ip[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = pl * oh * ow + oy * ow + ox;
                out[o] = best;
                argmax[o] = pl * h * w + best_idx;
            }
        }
    }
}
