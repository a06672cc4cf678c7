//! Raw loops behind the differentiable operators. Everything here works on
//! plain slices of `[c, h, w]` planes.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }
}

/// Output indices `o` in `[lo, hi)` whose input index `o * s + k - p` falls
/// inside `[0, n)`.
#[inline]
fn valid_range(n: usize, out: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
    let hi = if n + p > k { (n - 1 + p - k) / s + 1 } else { 0 };
    (lo, hi.min(out))
}

/// Visit every (output plane, input plane, kernel tap) triple of a grouped
/// convolution together with the rows that tap touches.
#[inline]
fn for_each_tap(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let ci_per = g.in_ch / g.groups;
    let co_per = g.out_ch / g.groups;
    for o in 0..g.out_ch {
        let group = o / co_per;
        for il in 0..ci_per {
            let i = group * ci_per + il;
            for ky in 0..g.k {
                for kx in 0..g.k {
                    f(o, i, il, ky, kx);
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let mut out = vec![0.0; g.out_ch * plane];
    if let Some(b) = bias {
        for (o, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b[o]);
        }
    }
    let ci_per = g.in_ch / g.groups;
    let (s, p, w) = (g.stride, g.pad, g.w);
    for_each_tap(g, |o, i, il, ky, kx| {
        let wv = wt[((o * ci_per + il) * g.k + ky) * g.k + kx];
        let (ylo, yhi) = valid_range(g.h, oh, ky, s, p);
        let (xlo, xhi) = valid_range(g.w, ow, kx, s, p);
        if xlo >= xhi {
            return;
        }
        let xplane = &x[i * g.h * w..(i + 1) * g.h * w];
        let oplane = &mut out[o * plane..(o + 1) * plane];
        for oy in ylo..yhi {
            let iy = oy * s + ky - p;
            let orow = &mut oplane[oy * ow + xlo..oy * ow + xhi];
            let xrow = &xplane[iy * w..(iy + 1) * w];
            if s == 1 {
                let start = xlo + kx - p;
                for (ov, xv) in orow.iter_mut().zip(&xrow[start..start + (xhi - xlo)]) {
                    *ov += wv * xv;
                }
            } else {
                for (j, ov) in orow.iter_mut().enumerate() {
                    *ov += wv * xrow[(xlo + j) * s + kx - p];
                }
            }
        }
    });
    out
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    wt: &[f64],
    dout: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Vec<f64>) {
    let (oh, ow) = g.out_hw();
    let plane = oh * ow;
    let ci_per = g.in_ch / g.groups;
    let (s, p, w) = (g.stride, g.pad, g.w);
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut dw = need_dw.then(|| vec![0.0; wt.len()]);
    let db: Vec<f64> = dout.chunks(plane).map(|c| c.iter().sum()).collect();
    for_each_tap(g, |o, i, il, ky, kx| {
        let widx = ((o * ci_per + il) * g.k + ky) * g.k + kx;
        let wv = wt[widx];
        let (ylo, yhi) = valid_range(g.h, oh, ky, s, p);
        let (xlo, xhi) = valid_range(g.w, ow, kx, s, p);
        if xlo >= xhi {
            return;
        }
        let dplane = &dout[o * plane..(o + 1) * plane];
        let mut acc = 0.0;
        for oy in ylo..yhi {
            let iy = oy * s + ky - p;
            let drow = &dplane[oy * ow + xlo..oy * ow + xhi];
            let base = i * g.h * w + iy * w;
            if let Some(dx) = dx.as_mut() {
                let xrow = &mut dx[base..base + w];
                if s == 1 {
                    let start = xlo + kx - p;
                    for (xv, dv) in xrow[start..start + drow.len()].iter_mut().zip(drow) {
                        *xv += wv * dv;
                    }
                } else {
                    for (j, dv) in drow.iter().enumerate() {
                        xrow[(xlo + j) * s + kx - p] += wv * dv;
                    }
                }
            }
            if dw.is_some() {
                let xrow = &x[base..base + w];
                if s == 1 {
                    let start = xlo + kx - p;
                    acc += drow
                        .iter()
                        .zip(&xrow[start..start + drow.len()])
                        .map(|(d, v)| d * v)
                        .sum::<f64>();
                } else {
                    for (j, dv) in drow.iter().enumerate() {
                        acc += dv * xrow[(xlo + j) * s + kx - p];
                    }
                }
            }
        }
        if let Some(dw) = dw.as_mut() {
            dw[widx] += acc;
        }
    });
    (dx, dw, db)
}

/// Source rows/columns and blend weights for bilinear resizing with
/// half-pixel centers (`align_corners = false`).
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub(crate) fn resize_forward(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        let op = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = (1.0 - lx) * xp[y0 * w + x0] + lx * xp[y0 * w + x1];
                let bot = (1.0 - lx) * xp[y1 * w + x0] + lx * xp[y1 * w + x1];
                op[oy * ow + ox] = (1.0 - ly) * top + ly * bot;
            }
        }
    }
    out
}

pub(crate) fn resize_backward(dout: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let dp = &dout[ch * oh * ow..(ch + 1) * oh * ow];
        let xp = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let d = dp[oy * ow + ox];
                xp[y0 * w + x0] += (1.0 - ly) * (1.0 - lx) * d;
                xp[y0 * w + x1] += (1.0 - ly) * lx * d;
                xp[y1 * w + x0] += ly * (1.0 - lx) * d;
                xp[y1 * w + x1] += ly * lx * d;
            }
        }
    }
    dx
}

/// Valid-mode correlation with a 1-D kernel along x (`vertical == false`)
/// or y.
pub(crate) fn filter1d_forward(x: &[f64], c: usize, h: usize, w: usize, kern: &[f64], vertical: bool) -> Vec<f64> {
    let k = kern.len();
    let (oh, ow) = if vertical { (h - k + 1, w) } else { (h, w - k + 1) };
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let xp = &x[ch * h * w..(ch + 1) * h * w];
        let op = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            for (t, &kv) in kern.iter().enumerate() {
                let row = &mut op[oy * ow..(oy + 1) * ow];
                if vertical {
                    let src = &xp[(oy + t) * w..(oy + t + 1) * w];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += kv * s;
                    }
                } else {
                    let src = &xp[oy * w + t..oy * w + t + ow];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += kv * s;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn filter1d_backward(dout: &[f64], c: usize, h: usize, w: usize, kern: &[f64], vertical: bool) -> Vec<f64> {
    let k = kern.len();
    let (oh, ow) = if vertical { (h - k + 1, w) } else { (h, w - k + 1) };
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let dp = &dout[ch * oh * ow..(ch + 1) * oh * ow];
        let xp = &mut dx[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let row = &dp[oy * ow..(oy + 1) * ow];
            for (t, &kv) in kern.iter().enumerate() {
                let dst = if vertical {
                    &mut xp[(oy + t) * w..(oy + t + 1) * w]
                } else {
                    &mut xp[oy * w + t..oy * w + t + ow]
                };
                for (d, g) in dst.iter_mut().zip(row) {
                    *d += kv * g;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(g: &ConvGeom, x: &[f64], wt: &[f64]) -> Vec<f64> {
        let (oh, ow) = g.out_hw();
        let ci_per = g.in_ch / g.groups;
        let co_per = g.out_ch / g.groups;
        let mut out = vec![0.0; g.out_ch * oh * ow];
        for o in 0..g.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for il in 0..ci_per {
                        let i = (o / co_per) * ci_per + il;
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += wt[((o * ci_per + il) * g.k + ky) * g.k + kx]
                                    * x[(i * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loops() {
        for &(stride, groups, in_ch, out_ch, h, w) in &[
            (1, 1, 3, 4, 7, 6),
            (2, 1, 2, 2, 8, 8),
            (2, 1, 3, 2, 5, 7),
            (1, 3, 3, 3, 6, 5),
        ] {
            let g = ConvGeom { in_ch, out_ch, h, w, k: 3, stride, pad: 1, groups };
            let x: Vec<f64> = (0..in_ch * h * w).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let wt: Vec<f64> = (0..out_ch * (in_ch / groups) * 9).map(|i| ((i * 13) % 7) as f64 * 0.1 - 0.3).collect();
            let fast = conv2d_forward(&g, &x, &wt, None);
            let slow = naive_conv(&g, &x, &wt);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_identity_at_same_size() {
        let x: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(resize_forward(&x, 1, 3, 4, 3, 4), x);
    }

    #[test]
    fn upsample_of_constant_is_constant() {
        let x = vec![0.25; 2 * 4 * 4];
        assert!(resize_forward(&x, 2, 4, 4, 16, 16).iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
