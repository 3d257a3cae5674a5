//! Structural dissimilarity on 3×3 windows (clipped at the borders).

use crate::grid::Image;

const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window(x: usize, y: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    (x.saturating_sub(1), (x + 1).min(w - 1), y.saturating_sub(1), (y + 1).min(h - 1))
}

struct Stats {
    n: f64,
    mu_a: f64,
    mu_b: f64,
    var_a: f64,
    var_b: f64,
    cov: f64,
}

fn stats(a: &Image, b: &Image, x: usize, y: usize, c: usize) -> Stats {
    let (x0, x1, y0, y1) = window(x, y, a.width(), a.height());
    let (mut sa, mut sb, mut saa, mut sbb, mut sab, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for yy in y0..=y1 {
        for xx in x0..=x1 {
            let (va, vb) = (a.get(xx, yy, c), b.get(xx, yy, c));
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
            n += 1.0;
        }
    }
    let (mu_a, mu_b) = (sa / n, sb / n);
    Stats {
        n,
        mu_a,
        mu_b,
        var_a: saa / n - mu_a * mu_a,
        var_b: sbb / n - mu_b * mu_b,
        cov: sab / n - mu_a * mu_b,
    }
}

fn ssim(s: &Stats) -> f64 {
    ((2.0 * s.mu_a * s.mu_b + C1) * (2.0 * s.cov + C2))
        / ((s.mu_a * s.mu_a + s.mu_b * s.mu_b + C1) * (s.var_a + s.var_b + C2))
}

/// Per-pixel `(1 − SSIM) / 2`, averaged over channels.
pub(crate) fn dssim_map(a: &Image, b: &Image) -> Vec<f64> {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for c in 0..ch {
                acc += 0.5 * (1.0 - ssim(&stats(a, b, x, y, c)));
            }
            out[y * w + x] = acc / ch as f64;
        }
    }
    out
}

/// Pulls per-pixel gradients `g` on [`dssim_map`] back to the samples of
/// `b` (interleaved like `b`).
pub(crate) fn dssim_adjoint(a: &Image, b: &Image, g: &[f64]) -> Vec<f64> {
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let mut out = vec![0.0; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            let gp = g[y * w + x];
            if gp == 0.0 {
                continue;
            }
            let (x0, x1, y0, y1) = window(x, y, w, h);
            for c in 0..ch {
                let s = stats(a, b, x, y, c);
                let a1 = 2.0 * s.mu_a * s.mu_b + C1;
                let a2 = 2.0 * s.cov + C2;
                let b1 = s.mu_a * s.mu_a + s.mu_b * s.mu_b + C1;
                let b2 = s.var_a + s.var_b + C2;
                let v = a1 * a2 / (b1 * b2);
                let d_mu = 2.0 * s.mu_a * a2 / (b1 * b2) - v * 2.0 * s.mu_b / b1;
                let d_cov = 2.0 * a1 / (b1 * b2);
                let d_var = -v / b2;
                // d dssim / d SSIM for this channel.
                let scale = -0.5 / ch as f64 * gp;
                for yy in y0..=y1 {
                    for xx in x0..=x1 {
                        let (va, vb) = (a.get(xx, yy, c), b.get(xx, yy, c));
                        let ds = (d_mu + d_var * 2.0 * (vb - s.mu_b) + d_cov * (va - s.mu_a)) / s.n;
                        out[(yy * w + xx) * ch + c] += scale * ds;
                    }
                }
            }
        }
    }
    out
}
