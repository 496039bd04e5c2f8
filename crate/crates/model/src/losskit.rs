//! Training losses and their supervision targets.
//!
//! Every loss is a per-pixel mean so magnitudes do not depend on resolution.
//! Each loss has a matching `_grad` returning the derivative with respect to
//! its first argument, used by the trainer and checked against finite
//! differences in the tests.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use sodkit_core::{BinaryMask, CertaintyMask, EdgeMap};

use crate::autograd::sigmoid;
use crate::error::{ModelError, Result};

/// Probability clamp used by every cross-entropy term.
pub const EPS: f64 = 1e-7;

/// Side of the square structuring element that defines the uncertain band.
pub const DEFAULT_BAND: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub lambda_edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            lambda_edge: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("lambda_edge", self.lambda_edge),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::Config(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn same_shape(y: (usize, usize), g: (usize, usize)) -> Result<()> {
    if y != g {
        return Err(ModelError::Shape(format!("prediction {y:?} vs target {g:?}")));
    }
    Ok(())
}

fn bce_term(y: f64, g: f64) -> f64 {
    let yc = y.clamp(EPS, 1.0 - EPS);
    -(g * yc.ln() + (1.0 - g) * (1.0 - yc).ln())
}

/// Derivative of `bce_term` in `y`; zero where the clamp is active.
fn bce_term_grad(y: f64, g: f64) -> f64 {
    if y <= EPS || y >= 1.0 - EPS {
        0.0
    } else {
        -g / y + (1.0 - g) / (1.0 - y)
    }
}

pub fn bce(y: ArrayView2<f64>, g: &BinaryMask) -> Result<f64> {
    same_shape(y.dim(), g.shape())?;
    let sum = Zip::from(&y)
        .and(g.view())
        .fold(0.0, |acc, &p, &t| acc + bce_term(p, t as f64));
    Ok(sum / y.len() as f64)
}

pub fn bce_grad(y: ArrayView2<f64>, g: &BinaryMask) -> Result<Array2<f64>> {
    same_shape(y.dim(), g.shape())?;
    let n = y.len() as f64;
    Ok(Zip::from(&y)
        .and(g.view())
        .map_collect(|&p, &t| bce_term_grad(p, t as f64) / n))
}

/// Mean cross-entropy over the certain pixels `J` only.
pub fn pbce(y: ArrayView2<f64>, g: &BinaryMask, j: &CertaintyMask) -> Result<f64> {
    same_shape(y.dim(), g.shape())?;
    same_shape(y.dim(), j.0.shape())?;
    let count = j.certain_count();
    if count == 0 {
        return Err(ModelError::EmptyCertainty);
    }
    let sum =
        Zip::from(&y).and(g.view()).and(j.0.view()).fold(
            0.0,
            |acc, &p, &t, &m| if m == 1 { acc + bce_term(p, t as f64) } else { acc },
        );
    Ok(sum / count as f64)
}

pub fn pbce_grad(y: ArrayView2<f64>, g: &BinaryMask, j: &CertaintyMask) -> Result<Array2<f64>> {
    same_shape(y.dim(), g.shape())?;
    same_shape(y.dim(), j.0.shape())?;
    let count = j.certain_count();
    if count == 0 {
        return Err(ModelError::EmptyCertainty);
    }
    let n = count as f64;
    Ok(Zip::from(&y).and(g.view()).and(j.0.view()).map_collect(|&p, &t, &m| {
        if m == 1 {
            bce_term_grad(p, t as f64) / n
        } else {
            0.0
        }
    }))
}

fn soft_iou_parts(y: ArrayView2<f64>, g: &BinaryMask) -> (f64, f64) {
    Zip::from(&y).and(g.view()).fold((0.0, 0.0), |(i, u), &p, &t| {
        let t = t as f64;
        (i + p * t, u + p + t - p * t)
    })
}

/// `1 - sum(Y*G) / sum(Y + G - Y*G)`, zero when both maps are empty.
pub fn iou_loss(y: ArrayView2<f64>, g: &BinaryMask) -> Result<f64> {
    same_shape(y.dim(), g.shape())?;
    let (i, u) = soft_iou_parts(y, g);
    Ok(if u == 0.0 { 0.0 } else { 1.0 - i / u })
}

pub fn iou_loss_grad(y: ArrayView2<f64>, g: &BinaryMask) -> Result<Array2<f64>> {
    same_shape(y.dim(), g.shape())?;
    let (i, u) = soft_iou_parts(y, g);
    if u == 0.0 {
        return Ok(Array2::zeros(y.dim()));
    }
    Ok(g.view().mapv(|t| {
        let t = t as f64;
        -(t * u - i * (1.0 - t)) / (u * u)
    }))
}

/// Cross-entropy of `sigmoid(logits)` against the edge map.
pub fn edge_loss(logits: ArrayView2<f64>, e: &EdgeMap) -> Result<f64> {
    let y = logits.mapv(sigmoid);
    bce(y.view(), &e.0)
}

pub fn edge_loss_grad(logits: ArrayView2<f64>, e: &EdgeMap) -> Result<Array2<f64>> {
    let y = logits.mapv(sigmoid);
    let mut d = bce_grad(y.view(), &e.0)?;
    Zip::from(&mut d).and(&y).for_each(|d, &s| *d *= s * (1.0 - s));
    Ok(d)
}

/// Unweighted loss components of one image.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub bce: f64,
    pub pbce: f64,
    pub iou: f64,
    pub edge: f64,
}

impl LossTerms {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.alpha1 * self.bce + w.alpha2 * self.pbce + w.alpha3 * self.iou + w.lambda_edge * self.edge
    }
}

pub fn loss_terms(
    y: ArrayView2<f64>,
    g: &BinaryMask,
    j: &CertaintyMask,
    edge: Option<(ArrayView2<f64>, &EdgeMap)>,
) -> Result<LossTerms> {
    Ok(LossTerms {
        bce: bce(y, g)?,
        pbce: pbce(y, g, j)?,
        iou: iou_loss(y, g)?,
        edge: match edge {
            Some((logits, e)) => edge_loss(logits, e)?,
            None => 0.0,
        },
    })
}

/// `alpha1*bce + alpha2*pbce + alpha3*iou + lambda_edge*edge`; the edge
/// term is absent when the model has no edge branch.
pub fn total_loss(
    y: ArrayView2<f64>,
    g: &BinaryMask,
    j: &CertaintyMask,
    edge: Option<(ArrayView2<f64>, &EdgeMap)>,
    w: &LossWeights,
) -> Result<f64> {
    Ok(loss_terms(y, g, j, edge)?.weighted(w))
}

/// Gradients of [`total_loss`] with respect to `y` and the edge logits.
pub fn total_loss_grad(
    y: ArrayView2<f64>,
    g: &BinaryMask,
    j: &CertaintyMask,
    edge: Option<(ArrayView2<f64>, &EdgeMap)>,
    w: &LossWeights,
) -> Result<(Array2<f64>, Option<Array2<f64>>)> {
    let mut dy = bce_grad(y, g)? * w.alpha1;
    dy.scaled_add(w.alpha2, &pbce_grad(y, g, j)?);
    dy.scaled_add(w.alpha3, &iou_loss_grad(y, g)?);
    let de = match edge {
        Some((logits, e)) => Some(edge_loss_grad(logits, e)? * w.lambda_edge),
        None => None,
    };
    Ok((dy, de))
}

// ---- certainty ---------------------------------------------------------------

/// Max (`dilate`) or min filter over a `size x size` square window clipped to
/// the image.
fn square_filter(m: &Array2<u8>, size: usize, dilate: bool) -> Array2<u8> {
    let (h, w) = m.dim();
    let lo = (size - 1) / 2;
    let hi = size / 2;
    let pick = |a: u8, b: u8| if dilate { a.max(b) } else { a.min(b) };
    let mut rows = m.clone();
    for r in 0..h {
        for c in 0..w {
            let (a, b) = (c.saturating_sub(lo), (c + hi).min(w - 1));
            rows[(r, c)] = (a..=b).map(|k| m[(r, k)]).reduce(pick).unwrap_or(0);
        }
    }
    let mut out = rows.clone();
    for r in 0..h {
        let (a, b) = (r.saturating_sub(lo), (r + hi).min(h - 1));
        for c in 0..w {
            out[(r, c)] = (a..=b).map(|k| rows[(k, c)]).reduce(pick).unwrap_or(0);
        }
    }
    out
}

/// Certain pixels are those outside `dilate(mask) XOR erode(mask)` with a
/// `band x band` square structuring element.
pub fn certainty_mask(mask: &BinaryMask, band: usize) -> CertaintyMask {
    let (h, w) = mask.shape();
    if band <= 1 || h == 0 || w == 0 {
        return CertaintyMask::all_certain(h, w);
    }
    let dil = square_filter(mask.as_array(), band, true);
    let ero = square_filter(mask.as_array(), band, false);
    let certain = Zip::from(&dil).and(&ero).map_collect(|&d, &e| u8::from(d == e));
    CertaintyMask(BinaryMask::from_array(certain).expect("binary by construction"))
}

// ---- edges -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub radius: usize,
    /// Fractions of the maximum gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams {
            sigma: 1.4,
            radius: 5,
            low: 0.1,
            high: 0.3,
        }
    }
}

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Separable Gaussian blur with replicated borders.
fn gaussian_blur(img: ArrayView2<f64>, sigma: f64, radius: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let k = gaussian_kernel(sigma, radius);
    let r = radius as isize;
    let horiz = Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(i, &kv)| kv * img[(y, clamp_idx(x as isize + i as isize - r, w))])
            .sum::<f64>()
    });
    Array2::from_shape_fn((h, w), |(y, x)| {
        k.iter()
            .enumerate()
            .map(|(i, &kv)| kv * horiz[(clamp_idx(y as isize + i as isize - r, h), x)])
            .sum::<f64>()
    })
}

/// Canny detector: Gaussian smoothing, Sobel gradients, four-direction
/// non-maximum suppression and 8-connected hysteresis.
pub fn canny(img: ArrayView2<f64>, p: &CannyParams) -> BinaryMask {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return BinaryMask::zeros(h, w);
    }
    let sm = gaussian_blur(img, p.sigma, p.radius);
    let at = |y: isize, x: isize| sm[(clamp_idx(y, h), clamp_idx(x, w))];
    let mut mag = Array2::<f64>::zeros((h, w));
    let mut dir = Array2::<u8>::zeros((h, w));
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let (yu, xu) = (y as usize, x as usize);
            mag[(yu, xu)] = gx.hypot(gy);
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[(yu, xu)] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let mag_at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[(y as usize, x as usize)]
        }
    };
    let mut thin = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let m = mag[(y, x)];
            if m <= 0.0 {
                continue;
            }
            // (dy, dx) of the "next" neighbour along the gradient.
            let (dy, dx) = match dir[(y, x)] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let (yi, xi) = (y as isize, x as isize);
            let prev = mag_at(yi - dy, xi - dx);
            let next = mag_at(yi + dy, xi + dx);
            if m >= prev && m > next {
                thin[(y, x)] = m;
            }
        }
    }
    let max = thin.fold(0.0f64, |a, &b| a.max(b));
    let mut out = BinaryMask::zeros(h, w);
    if max <= 0.0 {
        return out;
    }
    let (low, high) = (p.low * max, p.high * max);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if thin[(y, x)] >= high {
                out.set(y, x, true);
                stack.push((y, x));
            }
        }
    }
    while let Some((y, x)) = stack.pop() {
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                if !out.get(ny, nx) && thin[(ny, nx)] >= low {
                    out.set(ny, nx, true);
                    stack.push((ny, nx));
                }
            }
        }
    }
    out
}

/// Edge supervision target of a pseudo-label mask.
pub fn edge_target(mask: &BinaryMask) -> EdgeMap {
    EdgeMap(canny(mask.to_f64().view(), &CannyParams::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_pair(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Array2<f64>, BinaryMask) {
        let y = Array2::from_shape_fn((h, w), |_| rng.random_range(0.01..0.99));
        let g = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(0.5));
        (y, g)
    }

    fn rect(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| r >= r0 && r < r0 + size && c >= c0 && c < c0 + size)
    }

    #[test]
    fn bce_examples() {
        let g = rect(4, 4, 0, 0, 2);
        let perfect = g.to_f64();
        let v = bce(perfect.view(), &g).unwrap();
        assert!((v - -(1.0f64 - 1e-7).ln()).abs() < 1e-15);
        let half = Array2::from_elem((4, 4), 0.5);
        assert!((bce(half.view(), &g).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(bce(half.view(), &BinaryMask::zeros(3, 4)).is_err());
    }

    #[test]
    fn bce_and_pbce_match_straight_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (y, g) = rand_pair(&mut rng, 4, 4);
        let mut sum = 0.0;
        for r in 0..4 {
            for c in 0..4 {
                let t = f64::from(u8::from(g.get(r, c)));
                let p = y[(r, c)];
                sum -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
        }
        assert!((bce(y.view(), &g).unwrap() - sum / 16.0).abs() < 1e-12);

        let j = CertaintyMask(BinaryMask::from_fn(4, 4, |_, _| rng.random_bool(0.6)));
        let (mut s, mut n) = (0.0, 0);
        for r in 0..4 {
            for c in 0..4 {
                if j.0.get(r, c) {
                    let t = f64::from(u8::from(g.get(r, c)));
                    let p = y[(r, c)];
                    s -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
                    n += 1;
                }
            }
        }
        assert!((pbce(y.view(), &g, &j).unwrap() - s / n as f64).abs() < 1e-12);
    }

    #[test]
    fn pbce_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (y, g) = rand_pair(&mut rng, 5, 3);
        let all = CertaintyMask::all_certain(5, 3);
        assert_eq!(pbce(y.view(), &g, &all).unwrap(), bce(y.view(), &g).unwrap());
        let mut one = BinaryMask::zeros(2, 2);
        one.set(1, 0, true);
        let half = Array2::from_elem((2, 2), 0.5);
        let v = pbce(half.view(), &BinaryMask::zeros(2, 2), &CertaintyMask(one)).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-15);
        let none = CertaintyMask(BinaryMask::zeros(2, 2));
        assert!(matches!(
            pbce(half.view(), &BinaryMask::zeros(2, 2), &none),
            Err(ModelError::EmptyCertainty)
        ));
    }

    #[test]
    fn iou_examples() {
        let g = BinaryMask::from_fn(4, 4, |r, _| r < 2);
        assert_eq!(iou_loss(g.to_f64().view(), &g).unwrap(), 0.0);
        let other = g.complement();
        assert_eq!(iou_loss(other.to_f64().view(), &g).unwrap(), 1.0);
        let half = Array2::from_elem((4, 4), 0.5);
        assert!((iou_loss(half.view(), &g).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::zeros(3, 3);
        assert_eq!(iou_loss(empty.to_f64().view(), &empty).unwrap(), 0.0);
    }

    #[test]
    fn edge_loss_examples() {
        let e = EdgeMap(rect(4, 4, 1, 1, 2));
        let logits = e.0.to_f64().mapv(|v| if v > 0.5 { 40.0 } else { -40.0 });
        assert!(edge_loss(logits.view(), &e).unwrap() < 1e-6);
        let zero = Array2::zeros((4, 4));
        assert!((edge_loss(zero.view(), &e).unwrap() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (y, _) = rand_pair(&mut rng, 6, 6);
        let g = rect(6, 6, 1, 1, 3);
        let j = CertaintyMask(BinaryMask::from_fn(6, 6, |_, _| rng.random_bool(0.5)));
        let logits = Array2::from_shape_fn((6, 6), |_| rng.random_range(-3.0..3.0));
        let e = edge_target(&g);
        let edge = Some((logits.view(), &e));
        let w = LossWeights {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
            lambda_edge: 0.0,
        };
        let expected = bce(y.view(), &g).unwrap() + pbce(y.view(), &g, &j).unwrap() + iou_loss(y.view(), &g).unwrap();
        assert!((total_loss(y.view(), &g, &j, edge, &w).unwrap() - expected).abs() < 1e-12);
        let only_bce = LossWeights {
            alpha1: 1.0,
            alpha2: 0.0,
            alpha3: 0.0,
            lambda_edge: 0.0,
        };
        assert_eq!(
            total_loss(y.view(), &g, &j, edge, &only_bce).unwrap(),
            bce(y.view(), &g).unwrap()
        );
        let base = LossWeights::default();
        let doubled = LossWeights { alpha3: 2.0, ..base };
        let diff =
            total_loss(y.view(), &g, &j, edge, &doubled).unwrap() - total_loss(y.view(), &g, &j, edge, &base).unwrap();
        assert!((diff - iou_loss(y.view(), &g).unwrap()).abs() < 1e-12);
    }

    fn fd_check(f: impl Fn(&Array2<f64>) -> f64, grad: Array2<f64>, at: &Array2<f64>) {
        let h = 1e-6;
        for idx in 0..at.len() {
            let (r, c) = (idx / at.ncols(), idx % at.ncols());
            let mut p = at.clone();
            p[(r, c)] += h;
            let mut m = at.clone();
            m[(r, c)] -= h;
            let num = (f(&p) - f(&m)) / (2.0 * h);
            let a = grad[(r, c)];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "({r},{c}) analytic {a} numeric {num}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (y, g) = rand_pair(&mut rng, 4, 5);
        let j = CertaintyMask(BinaryMask::from_fn(4, 5, |_, _| rng.random_bool(0.7)));
        fd_check(|y| bce(y.view(), &g).unwrap(), bce_grad(y.view(), &g).unwrap(), &y);
        fd_check(
            |y| pbce(y.view(), &g, &j).unwrap(),
            pbce_grad(y.view(), &g, &j).unwrap(),
            &y,
        );
        fd_check(
            |y| iou_loss(y.view(), &g).unwrap(),
            iou_loss_grad(y.view(), &g).unwrap(),
            &y,
        );
        let logits = Array2::from_shape_fn((4, 5), |_| rng.random_range(-3.0..3.0));
        let e = EdgeMap(g.clone());
        fd_check(
            |l| edge_loss(l.view(), &e).unwrap(),
            edge_loss_grad(logits.view(), &e).unwrap(),
            &logits,
        );
    }

    #[test]
    fn certainty_band_geometry() {
        let m = rect(12, 12, 3, 3, 6);
        let j = certainty_mask(&m, DEFAULT_BAND);
        // Band reaches two pixels either side of the border.
        assert!(j.0.get(0, 5));
        assert!(!j.0.get(1, 5));
        assert!(!j.0.get(4, 5));
        assert!(j.0.get(5, 5));
        assert_eq!(
            certainty_mask(&BinaryMask::zeros(5, 5), 5),
            CertaintyMask::all_certain(5, 5)
        );
        assert_eq!(
            certainty_mask(&BinaryMask::ones(5, 5), 5),
            CertaintyMask::all_certain(5, 5)
        );
    }

    #[test]
    fn canny_of_empty_is_empty() {
        assert!(edge_target(&BinaryMask::zeros(32, 32)).0.is_empty());
    }

    /// 4-connected flood from the corner through non-edge pixels.
    fn outside_reach(edges: &BinaryMask) -> BinaryMask {
        let (h, w) = edges.shape();
        let mut seen = BinaryMask::zeros(h, w);
        let mut stack = vec![(0usize, 0usize)];
        seen.set(0, 0, true);
        while let Some((r, c)) = stack.pop() {
            let nbrs = [(r.wrapping_sub(1), c), (r + 1, c), (r, c.wrapping_sub(1)), (r, c + 1)];
            for (nr, nc) in nbrs {
                if nr < h && nc < w && !seen.get(nr, nc) && !edges.get(nr, nc) {
                    seen.set(nr, nc, true);
                    stack.push((nr, nc));
                }
            }
        }
        seen
    }

    fn border_distance(r: usize, c: usize, r0: f64, c0: f64, size: f64) -> f64 {
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        let (r1, c1) = (r0 + size, c0 + size);
        let inside = y >= r0 && y <= r1 && x >= c0 && x <= c1;
        if inside {
            (y - r0).min(r1 - y).min(x - c0).min(c1 - x)
        } else {
            let dy = (r0 - y).max(y - r1).max(0.0);
            let dx = (c0 - x).max(x - c1).max(0.0);
            dy.hypot(dx)
        }
    }

    #[test]
    fn canny_rectangle_is_closed_and_tight() {
        let m = rect(64, 64, 22, 22, 20);
        let e = edge_target(&m).0;
        assert!(!e.is_empty());
        assert!(!outside_reach(&e).get(32, 32), "boundary is not closed");
        for r in 0..64 {
            for c in 0..64 {
                if e.get(r, c) {
                    assert!(
                        border_distance(r, c, 22.0, 22.0, 20.0) <= 2.0,
                        "edge pixel ({r},{c}) strays"
                    );
                }
            }
        }
    }

    #[test]
    fn canny_translation_equivariance() {
        let a = edge_target(&rect(64, 64, 20, 18, 20)).0;
        let b = edge_target(&rect(64, 64, 23, 23, 20)).0;
        for r in 0..64 {
            for c in 0..64 {
                let shifted = r >= 3 && c >= 5 && a.get(r - 3, c - 5);
                assert_eq!(b.get(r, c), shifted, "({r},{c})");
            }
        }
    }

    fn dilated(m: &BinaryMask, size: usize) -> BinaryMask {
        BinaryMask::from_array(square_filter(m.as_array(), size, true)).unwrap()
    }

    #[test]
    fn redetected_edges_flank_a_thin_line() {
        let e = edge_target(&rect(64, 64, 22, 22, 20)).0;
        let ee = edge_target(&e).0;
        let one_px = dilated(&e, 3);
        assert!((0..64).any(|r| (0..64).any(|c| ee.get(r, c) && !one_px.get(r, c))));
    }

    proptest! {
        #[test]
        fn iou_is_bounded_and_symmetric(bits in proptest::collection::vec(any::<(bool, bool)>(), 16)) {
            let a = BinaryMask::from_fn(4, 4, |r, c| bits[r * 4 + c].0);
            let b = BinaryMask::from_fn(4, 4, |r, c| bits[r * 4 + c].1);
            let ab = iou_loss(a.to_f64().view(), &b).unwrap();
            let ba = iou_loss(b.to_f64().view(), &a).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn full_certainty_pbce_equals_bce(vals in proptest::collection::vec((0.0f64..1.0, any::<bool>()), 12)) {
            let y = Array2::from_shape_fn((3, 4), |(r, c)| vals[r * 4 + c].0);
            let g = BinaryMask::from_fn(3, 4, |r, c| vals[r * 4 + c].1);
            let all = CertaintyMask::all_certain(3, 4);
            prop_assert_eq!(pbce(y.view(), &g, &all).unwrap(), bce(y.view(), &g).unwrap());
        }

        #[test]
        fn redetected_edges_stay_within_two_pixels(r0 in 2usize..30, c0 in 2usize..30, hh in 3usize..30, ww in 3usize..30) {
            let m = BinaryMask::from_fn(64, 64, |r, c| r >= r0 && r < r0 + hh && c >= c0 && c < c0 + ww);
            let e = edge_target(&m).0;
            let ee = edge_target(&e).0;
            let two_px = dilated(&e, 5);
            for r in 0..64 {
                for c in 0..64 {
                    prop_assert!(!ee.get(r, c) || two_px.get(r, c));
                }
            }
        }
    }
}
