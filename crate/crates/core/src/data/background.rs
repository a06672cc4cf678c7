use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// A clean `3 x h x w` scene: a two-colour linear gradient with a few
/// rectangles and discs on top. Values stay in `[0.05, 0.8]` so rain has
/// headroom before clipping.
pub fn procedural_background(h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> [f64; 3] { std::array::from_fn(|_| rng.random_range(0.05..0.8)) };
    let c0 = colour(&mut rng);
    let c1 = colour(&mut rng);
    let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ux, uy) = (theta.cos(), theta.sin());
    let span = (w as f64 * ux.abs() + h as f64 * uy.abs()).max(1.0);

    let mut img = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f64 - w as f64 / 2.0) * ux + (y as f64 - h as f64 / 2.0) * uy) / span + 0.5;
            for c in 0..3 {
                img.set(c, y, x, c0[c] + (c1[c] - c0[c]) * t.clamp(0.0, 1.0));
            }
        }
    }

    let shapes = rng.random_range(2..6);
    for _ in 0..shapes {
        let col = colour(&mut rng);
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.1..0.35) * h as f64;
        let rx = rng.random_range(0.1..0.35) * w as f64;
        let disc = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (ny, nx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                let inside = if disc { nx * nx + ny * ny <= 1.0 } else { nx.abs() <= 1.0 && ny.abs() <= 1.0 };
                if inside {
                    for (c, &v) in col.iter().enumerate() {
                        img.set(c, y, x, v);
                    }
                }
            }
        }
    }
    img
}
