//! A second, independently written SSIM: a full 2-D 11x11 Gaussian window
//! (σ = 1.5, normalised), valid positions only, evaluated window by window
//! and averaged over positions and then over channels.

use manas::Tensor;

fn window() -> [[f64; 11]; 11] {
    let mut w = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in w.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    w
}

pub fn reference_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let (c, h, w) = a.chw();
    let win = window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut channel_means = Vec::new();
    for ch in 0..c {
        let mut acc = 0.0;
        let mut n = 0usize;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, &k) in row.iter().enumerate() {
                        let va = a.at(ch, y0 + i, x0 + j);
                        let vb = b.at(ch, y0 + i, x0 + j);
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1;
            }
        }
        channel_means.push(acc / n as f64);
    }
    channel_means.iter().sum::<f64>() / c as f64
}
