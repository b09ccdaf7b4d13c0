//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfmedit_core::memory::FeatureTokenMap;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Line-by-line interpreter of the memory update pseudocode, 1-based as
/// printed. Returns the stored items after offering `incoming`.
pub fn alg1_step<T: Clone>(m: &mut Vec<T>, incoming: T, n_max: usize, dist: impl Fn(&T, &T) -> f64) {
    // M = {m_1 .. m_n}; helper for 1-based access
    let at = |m: &Vec<T>, i: usize| m[i - 1].clone();
    if m.len() >= n_max {
        let n = m.len();
        // K = {k_1 .. k_{n-1}}, k_j = distance(m_j, m_{j+1})
        let mut k = vec![0.0; n];
        for j in 1..=n - 1 {
            k[j] = dist(&at(m, j), &at(m, j + 1));
        }
        let k_prime = dist(&at(m, n), &incoming);
        let mut j = n - 1;
        while j >= 1 {
            if k[j] <= k_prime {
                m.remove(j + 1 - 1);
                m.push(incoming);
                break;
            }
            j -= 1;
        }
    } else {
        m.push(incoming);
    }
}

pub fn frame_gap(a: &usize, b: &usize) -> f64 {
    (*a as f64 - *b as f64).abs()
}

/// 1 − mean cosine of same-position rows, computed in f64 from scratch.
pub fn mean_token_cosine_distance(a: &FeatureTokenMap, b: &FeatureTokenMap) -> f64 {
    let mut total = 0.0;
    for i in 0..a.n_tokens() {
        total += cosine(a.row(i), b.row(i));
    }
    1.0 - total / a.n_tokens() as f64
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut d = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        d += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (d / (na * nb).sqrt()).clamp(-1.0, 1.0)
    }
}

pub fn random_features(rng: &mut ChaCha8Rng, frame: usize, n: usize, dim: usize, layer: &str) -> FeatureTokenMap {
    let tokens = (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    FeatureTokenMap::new(frame, layer, n, dim, tokens).unwrap()
}

/// Features drawn from a tiny value set so that exact ties are common.
pub fn coarse_features(rng: &mut ChaCha8Rng, frame: usize, n: usize, dim: usize) -> FeatureTokenMap {
    let tokens = (0..n * dim).map(|_| rng.random_range(-2i32..=2) as f32 * 0.5).collect();
    FeatureTokenMap::new(frame, "l", n, dim, tokens).unwrap()
}

/// Exhaustive nearest-row search: returns, per current row, the winning
/// (frame, token) or `None` when below `lambda`.
pub fn fmp_oracle(current: &FeatureTokenMap, memory: &[FeatureTokenMap], lambda: f64) -> Vec<Option<(usize, usize)>> {
    (0..current.n_tokens())
        .map(|i| {
            let mut best: Option<(f64, usize, usize)> = None;
            for m in memory {
                for t in 0..m.n_tokens() {
                    let s = cosine(current.row(i), m.row(t));
                    if best.is_none_or(|(b, _, _)| s > b) {
                        best = Some((s, m.frame_index(), t));
                    }
                }
            }
            best.filter(|(s, _, _)| *s >= lambda).map(|(_, f, t)| (f, t))
        })
        .collect()
}

/// Local SSIM over every valid 11×11 window, with a directly evaluated
/// 2-D Gaussian weight (no separable filtering).
pub fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let (win, sigma) = (11usize, 1.5f64);
    let half = (win / 2) as f64;
    let mut weights = vec![0.0; win * win];
    for y in 0..win {
        for x in 0..win {
            let (dy, dx) = (y as f64 - half, x as f64 - half);
            weights[y * win + x] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for oy in 0..=h - win {
        for ox in 0..=w - win {
            let (mut mx, mut my, mut mxx, mut myy, mut mxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in 0..win {
                for x in 0..win {
                    let g = weights[y * win + x];
                    let (p, q) = (a[(oy + y) * w + ox + x], b[(oy + y) * w + ox + x]);
                    mx += g * p;
                    my += g * q;
                    mxx += g * p * p;
                    myy += g * q * q;
                    mxy += g * p * q;
                }
            }
            let (vx, vy, cxy) = (mxx - mx * mx, myy - my * my, mxy - mx * my);
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}
