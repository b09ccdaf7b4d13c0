//! Background-preservation and temporal-consistency metrics.

use thiserror::Error;

use crate::diffusion::LatentGrid;
use crate::exec::{self, Execution};
use crate::mask::BinaryMask;
use crate::memory::{cosine_from_parts, dot, FeatureTokenMap};

/// PSNR reported for (numerically) identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("image shapes differ: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize, usize),
        b: (usize, usize, usize),
    },
    #[error("region mask is {mask:?} but images are {image:?}")]
    RegionShape {
        mask: (usize, usize),
        image: (usize, usize),
    },
    #[error("region selects no pixels")]
    EmptyRegion,
    #[error("image {height}x{width} is smaller than the {window}x{window} SSIM window")]
    TooSmall {
        height: usize,
        width: usize,
        window: usize,
    },
    #[error("image needs {expected} values, got {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("image value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("token drift needs at least two frames, got {0}")]
    TooFewFrames(usize),
    #[error("feature maps differ in shape: {a:?} vs {b:?}")]
    FeatureShape { a: (usize, usize), b: (usize, usize) },
}

/// Planar C×H×W image with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

const RANGE_SLACK: f64 = 1e-9;

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self, MetricsError> {
        let expected = channels * height * width;
        if values.len() != expected || expected == 0 {
            return Err(MetricsError::ValueCount {
                expected,
                found: values.len(),
            });
        }
        if let Some(v) = values
            .iter()
            .find(|v| !(**v >= -RANGE_SLACK && **v <= 1.0 + RANGE_SLACK))
        {
            return Err(MetricsError::OutOfRange(*v));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    /// Display proxy for a latent: `0.5 + 0.5·tanh(z)` per element.
    ///
    /// Monotone and deterministic, so equal latents give equal images.
    pub fn from_latent(latent: &LatentGrid) -> Self {
        let s = latent.shape();
        Self {
            channels: s.channels,
            height: s.height,
            width: s.width,
            values: latent
                .values()
                .iter()
                .map(|&v| 0.5 + 0.5 * f64::from(v).tanh())
                .collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values[c * n..(c + 1) * n]
    }
}

fn check_pair(a: &ImageGrid, b: &ImageGrid, region: Option<&BinaryMask>) -> Result<(), MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::ShapeMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    if let Some(r) = region {
        if r.dims() != (a.height, a.width) {
            return Err(MetricsError::RegionShape {
                mask: r.dims(),
                image: (a.height, a.width),
            });
        }
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1, over the pixels set in
/// `region` (all pixels when `None`). Capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageGrid, b: &ImageGrid, region: Option<&BinaryMask>) -> Result<f64, MetricsError> {
    check_pair(a, b, region)?;
    let n = a.height * a.width;
    let included = |i: usize| region.is_none_or(|r| r.bits()[i]);
    let pixels = (0..n).filter(|&i| included(i)).count();
    if pixels == 0 {
        return Err(MetricsError::EmptyRegion);
    }
    let mut sum = 0.0;
    for c in 0..a.channels {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for i in (0..n).filter(|&i| included(i)) {
            let d = pa[i] - pb[i];
            sum += d * d;
        }
    }
    let mse = sum / (pixels * a.channels) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable "valid" Gaussian filtering: output is (h−10)×(w−10).
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; h * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| k[j] * horiz[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5).
///
/// Only windows fully inside the image are used. Channels are averaged.
/// With a `region`, only windows whose centre pixel is set contribute, and
/// each window's means, variances and covariance are taken over its region
/// pixels alone (Gaussian weights renormalised), so pixels outside the
/// region never influence the score.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, region: Option<&BinaryMask>) -> Result<f64, MetricsError> {
    ssim_with(a, b, region, Execution::default())
}

pub fn ssim_with(
    a: &ImageGrid,
    b: &ImageGrid,
    region: Option<&BinaryMask>,
    execution: Execution,
) -> Result<f64, MetricsError> {
    check_pair(a, b, region)?;
    let (h, w) = (a.height, a.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricsError::TooSmall {
            height: h,
            width: w,
            window: SSIM_WINDOW,
        });
    }
    let half = SSIM_WINDOW / 2;
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let centers: Vec<usize> = (0..oh * ow)
        .filter(|&i| region.is_none_or(|r| r.get(i / ow + half, i % ow + half)))
        .collect();
    if centers.is_empty() {
        return Err(MetricsError::EmptyRegion);
    }

    let k = gaussian_kernel();
    let weights: Option<Vec<f64>> = region.map(|r| r.bits().iter().map(|&b| f64::from(u8::from(b))).collect());
    let window_mass = weights.as_ref().map(|wt| filter_valid(wt, h, w, &k));
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let per_channel = exec::map_indices(a.channels, execution, |c| {
        let (x, y) = (a.plane(c), b.plane(c));
        let weigh = |v: Vec<f64>| match &weights {
            Some(wt) => v.iter().zip(wt).map(|(p, q)| p * q).collect(),
            None => v,
        };
        let filt = |v: Vec<f64>| {
            let mut f = filter_valid(&weigh(v), h, w, &k);
            if let Some(m) = &window_mass {
                f.iter_mut().zip(m).for_each(|(v, m)| *v /= m);
            }
            f
        };
        let mx = filt(x.to_vec());
        let my = filt(y.to_vec());
        let mxx = filt(x.iter().map(|v| v * v).collect());
        let myy = filt(y.iter().map(|v| v * v).collect());
        let mxy = filt(x.iter().zip(y).map(|(p, q)| p * q).collect());
        let total: f64 = centers
            .iter()
            .map(|&i| {
                let (ux, uy) = (mx[i], my[i]);
                let vx = mxx[i] - ux * ux;
                let vy = myy[i] - uy * uy;
                let cxy = mxy[i] - ux * uy;
                ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
            })
            .sum();
        total / centers.len() as f64
    });
    Ok(per_channel.iter().sum::<f64>() / a.channels as f64)
}

/// Mean cosine between each token and the same token one frame later.
pub fn token_drift(features: &[FeatureTokenMap]) -> Result<f64, MetricsError> {
    let pairs = adjacent_token_cosines(features)?;
    Ok(pairs.iter().sum::<f64>() / pairs.len() as f64)
}

/// Per adjacent pair `(f, f+1)`, the mean token cosine.
pub fn adjacent_token_cosines(features: &[FeatureTokenMap]) -> Result<Vec<f64>, MetricsError> {
    if features.len() < 2 {
        return Err(MetricsError::TooFewFrames(features.len()));
    }
    features
        .windows(2)
        .map(|pair| {
            let (a, b) = (&pair[0], &pair[1]);
            if a.shape() != b.shape() {
                return Err(MetricsError::FeatureShape {
                    a: a.shape(),
                    b: b.shape(),
                });
            }
            let total: f64 = (0..a.n_tokens())
                .map(|t| {
                    let (ra, rb) = (a.row(t), b.row(t));
                    cosine_from_parts(dot(ra, rb), dot(ra, ra), dot(rb, rb))
                })
                .sum();
            Ok(total / a.n_tokens() as f64)
        })
        .collect()
}
