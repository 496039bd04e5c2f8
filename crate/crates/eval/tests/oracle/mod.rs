//! Straight-loop reference implementations of the saliency metrics, written
//! pixel by pixel without sharing code with the library.
#![allow(dead_code)]

/// Row-major `h x w` grid.
pub struct Pair {
    pub h: usize,
    pub w: usize,
    pub y: Vec<f64>,
    pub g: Vec<bool>,
}

impl Pair {
    fn at(&self, r: usize, c: usize) -> (f64, bool) {
        (self.y[r * self.w + c], self.g[r * self.w + c])
    }
}

pub fn mae(p: &Pair) -> f64 {
    let mut s = 0.0;
    for i in 0..p.y.len() {
        let gv = if p.g[i] { 1.0 } else { 0.0 };
        s += (p.y[i] - gv).abs();
    }
    s / p.y.len() as f64
}

fn binarize(p: &Pair, t: f64) -> Vec<bool> {
    p.y.iter().map(|&v| v > 0.0 && v >= t).collect()
}

/// `(P, R, F)`; `None` when the truth is empty.
pub fn prf(p: &Pair, t: f64) -> Option<(f64, f64, f64)> {
    let b = binarize(p, t);
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for i in 0..b.len() {
        if b[i] && p.g[i] {
            tp += 1.0;
        } else if b[i] {
            fp += 1.0;
        } else if p.g[i] {
            fneg += 1.0;
        }
    }
    if tp + fneg == 0.0 {
        return None;
    }
    let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let rec = tp / (tp + fneg);
    let f = if prec + rec > 0.0 {
        1.3 * prec * rec / (0.3 * prec + rec)
    } else {
        0.0
    };
    Some((prec, rec, f))
}

pub fn e_at(p: &Pair, t: f64) -> f64 {
    let b = binarize(p, t);
    let n = b.len() as f64;
    let gsum = p.g.iter().filter(|&&v| v).count();
    if gsum == 0 {
        return b.iter().filter(|&&v| !v).count() as f64 / n;
    }
    if gsum == b.len() {
        return b.iter().filter(|&&v| v).count() as f64 / n;
    }
    let my = b.iter().filter(|&&v| v).count() as f64 / n;
    let mg = gsum as f64 / n;
    let mut s = 0.0;
    for i in 0..b.len() {
        let fy = if b[i] { 1.0 } else { 0.0 } - my;
        let fg = if p.g[i] { 1.0 } else { 0.0 } - mg;
        let xi = 2.0 * fg * fy / (fg * fg + fy * fy);
        s += (1.0 + xi).powi(2) / 4.0;
    }
    s / n
}

pub fn e_sweep(p: &Pair) -> f64 {
    (0..256).map(|k| e_at(p, k as f64 / 255.0)).sum::<f64>() / 256.0
}

/// Per-threshold F over the 256-step grid.
pub fn f_sweep(p: &Pair) -> Option<Vec<f64>> {
    (0..256).map(|k| prf(p, k as f64 / 255.0).map(|x| x.2)).collect()
}

fn object(vals: &[f64]) -> f64 {
    let n = vals.len() as f64;
    let mut mean = 0.0;
    for v in vals {
        mean += v;
    }
    mean /= n;
    let mut var = 0.0;
    for v in vals {
        var += (v - mean) * (v - mean);
    }
    let sd = if vals.len() > 1 { (var / (n - 1.0)).sqrt() } else { 0.0 };
    2.0 * mean / (mean * mean + 1.0 + sd + f64::EPSILON)
}

fn ssim(p: &Pair, r0: usize, r1: usize, c0: usize, c1: usize) -> f64 {
    let mut ys = Vec::new();
    let mut gs = Vec::new();
    for r in r0..r1 {
        for c in c0..c1 {
            let (y, g) = p.at(r, c);
            ys.push(y);
            gs.push(if g { 1.0 } else { 0.0 });
        }
    }
    let n = ys.len();
    if n == 0 {
        return 0.0;
    }
    let mx = ys.iter().sum::<f64>() / n as f64;
    let mg = gs.iter().sum::<f64>() / n as f64;
    let d = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let mut vx = 0.0;
    let mut vg = 0.0;
    let mut cov = 0.0;
    for i in 0..n {
        vx += (ys[i] - mx).powi(2) / d;
        vg += (gs[i] - mg).powi(2) / d;
        cov += (ys[i] - mx) * (gs[i] - mg) / d;
    }
    let a = 4.0 * mx * mg * cov;
    let b = (mx * mx + mg * mg) * (vx + vg);
    if a != 0.0 {
        a / (b + f64::EPSILON)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn s_measure(p: &Pair) -> f64 {
    let n = p.y.len();
    let mean_y = p.y.iter().sum::<f64>() / n as f64;
    let fg_n = p.g.iter().filter(|&&v| v).count();
    if fg_n == 0 {
        return 1.0 - mean_y;
    }
    if fg_n == n {
        return mean_y;
    }
    let fg: Vec<f64> = (0..n).filter(|&i| p.g[i]).map(|i| p.y[i]).collect();
    let bg: Vec<f64> = (0..n).filter(|&i| !p.g[i]).map(|i| 1.0 - p.y[i]).collect();
    let u = fg_n as f64 / n as f64;
    let so = u * object(&fg) + (1.0 - u) * object(&bg);

    let (mut sr, mut sc) = (0.0, 0.0);
    for r in 0..p.h {
        for c in 0..p.w {
            if p.at(r, c).1 {
                sr += r as f64;
                sc += c as f64;
            }
        }
    }
    let y = (sr / fg_n as f64).round() as usize + 1;
    let x = (sc / fg_n as f64).round() as usize + 1;
    let (h, w) = (p.h, p.w);
    let area = (h * w) as f64;
    let region = (x * y) as f64 / area * ssim(p, 0, y, 0, x)
        + ((w - x) * y) as f64 / area * ssim(p, 0, y, x, w)
        + (x * (h - y)) as f64 / area * ssim(p, y, h, 0, x)
        + ((w - x) * (h - y)) as f64 / area * ssim(p, y, h, x, w);
    let q = 0.5 * so + 0.5 * region;
    if q < 0.0 {
        0.0
    } else {
        q
    }
}
