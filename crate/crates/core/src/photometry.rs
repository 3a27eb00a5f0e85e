//! Photometric loss and edge-reliability masking.
//!
//! The loss is a mean absolute difference over an optional pixel mask.
//! Masks are built from patch statistics of the Laplacian of the
//! rendered image: high-curvature patches localize well under pose
//! perturbations, while flat patches mostly contribute noise, so the
//! mask keeps patches whose mean absolute Laplacian clears a
//! threshold.

use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Boolean pixel mask. True marks pixels inside the loss domain.
#[derive(Debug, Clone)]
pub struct ReliabilityMask {
    pub width: usize,
    pub height: usize,
    data: Vec<bool>,
}

impl ReliabilityMask {
    pub fn full(width: usize, height: usize) -> Self {
        ReliabilityMask { width, height, data: vec![true; width * height] }
    }

    /// Builds a mask by evaluating `f` at every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = vec![false; width * height];
        for y in 0..height {
            for x in 0..width {
                data[y * width + x] = f(x, y);
            }
        }
        ReliabilityMask { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of image pixels inside the domain.
    pub fn coverage(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.data.len() as f64
    }
}

/// Mean absolute radiance difference and its size metadata.
#[derive(Debug, Clone, Copy)]
pub struct PhotometricLoss {
    pub value: f64,
    /// Pixels inside the loss domain (masked pixels excluded).
    pub domain_pixels: usize,
}

/// L1 photometric loss between a rendered image and a target, averaged
/// over `3 * domain_pixels` channel samples. Also returns the exact
/// derivative of the loss with respect to each rendered channel as an
/// image (zero outside the domain, subgradient zero at ties), shaped
/// for [`crate::render::render_backward`].
///
/// An empty domain yields a zero loss and all-zero weights; callers
/// that care distinguish that case via `domain_pixels`.
pub fn photometric_l1(
    rendered: &Image,
    target: &Image,
    mask: Option<&ReliabilityMask>,
) -> (PhotometricLoss, Image) {
    assert!(
        rendered.width == target.width && rendered.height == target.height,
        "image shapes differ: {}x{} vs {}x{}",
        rendered.width,
        rendered.height,
        target.width,
        target.height
    );
    if let Some(m) = mask {
        assert!(
            m.width == rendered.width && m.height == rendered.height,
            "mask shape {}x{} does not match image {}x{}",
            m.width,
            m.height,
            rendered.width,
            rendered.height
        );
    }

    let domain_pixels = match mask {
        Some(m) => m.count(),
        None => rendered.width * rendered.height,
    };
    let mut weights = Image::zeros(rendered.width, rendered.height);
    if domain_pixels == 0 {
        return (PhotometricLoss { value: 0.0, domain_pixels }, weights);
    }
    let inv_n = 1.0 / (3.0 * domain_pixels as f64);

    let mut total = 0.0;
    for y in 0..rendered.height {
        for x in 0..rendered.width {
            if let Some(m) = mask {
                if !m.at(x, y) {
                    continue;
                }
            }
            let r = rendered.pixel(x, y);
            let t = target.pixel(x, y);
            let mut w = [0.0; 3];
            for c in 0..3 {
                let diff = r[c] - t[c];
                total += diff.abs();
                w[c] = if diff > 0.0 {
                    inv_n
                } else if diff < 0.0 {
                    -inv_n
                } else {
                    0.0
                };
            }
            weights.set_pixel(x, y, w);
        }
    }
    (PhotometricLoss { value: total * inv_n, domain_pixels }, weights)
}

/// Mean absolute 4-neighbor Laplacian per patch, replicate border.
#[derive(Debug, Clone)]
pub struct PatchScores {
    pub image_width: usize,
    pub image_height: usize,
    pub patch: usize,
    pub cols: usize,
    pub rows: usize,
    /// Row-major patch grid; edge patches cover the image remainder
    /// and average over their actual pixel count.
    pub scores: Vec<f64>,
}

impl PatchScores {
    #[inline]
    pub fn patch_of(&self, x: usize, y: usize) -> usize {
        (y / self.patch) * self.cols + (x / self.patch)
    }

    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// Scores each `patch`-sized tile of `img` by the mean absolute
/// response of the 4-neighbor Laplacian of luminance.
pub fn laplacian_scores(img: &Image, patch: usize) -> PatchScores {
    assert!(patch > 0, "patch size must be positive");
    let lum = img.luminance();
    let w = img.width;
    let h = img.height;
    let cols = w.div_ceil(patch);
    let rows = h.div_ceil(patch);
    let mut sums = vec![0.0f64; cols * rows];
    let mut counts = vec![0usize; cols * rows];

    let clamped = |x: i64, y: i64| -> f64 {
        let cx = x.clamp(0, w as i64 - 1) as usize;
        let cy = y.clamp(0, h as i64 - 1) as usize;
        lum.at(cx, cy)
    };
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as i64, y as i64);
            let lap = clamped(xi - 1, yi) + clamped(xi + 1, yi) + clamped(xi, yi - 1)
                + clamped(xi, yi + 1)
                - 4.0 * lum.at(x, y);
            let p = (y / patch) * cols + (x / patch);
            sums[p] += lap.abs();
            counts[p] += 1;
        }
    }
    let scores = sums
        .iter()
        .zip(counts.iter())
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect();
    PatchScores { image_width: w, image_height: h, patch, cols, rows, scores }
}

/// Patch-score threshold rule.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauPolicy {
    /// Fixed threshold on the mean absolute Laplacian.
    Absolute { tau: f64 },
    /// Threshold at `factor` times the mean patch score of this image.
    RelativeMean { factor: f64 },
    /// Threshold at the `q`-quantile of patch scores (nearest rank),
    /// keeping roughly the top `1 - q` fraction of patches.
    Quantile { q: f64 },
}

impl Default for TauPolicy {
    fn default() -> Self {
        TauPolicy::RelativeMean { factor: 0.5 }
    }
}

/// Outcome of mask construction.
#[derive(Debug, Clone)]
pub struct MaskBuild {
    pub mask: ReliabilityMask,
    /// Effective threshold after any fallback relaxation.
    pub tau: f64,
    /// True when the policy threshold kept too little of the image and
    /// the threshold was relaxed to meet `min_keep_fraction`.
    pub fallback_used: bool,
}

/// Builds the pixel mask `mask(u) = score(patch(u)) >= tau`.
///
/// If the policy's threshold keeps less than `min_keep_fraction` of
/// the pixels, the threshold is lowered to the highest value that
/// meets the fraction, so downstream optimization always has a usable
/// domain and the mask stays a pure threshold of the patch scores.
pub fn build_mask(scores: &PatchScores, policy: &TauPolicy, min_keep_fraction: f64) -> MaskBuild {
    assert!(
        (0.0..=1.0).contains(&min_keep_fraction),
        "min_keep_fraction {min_keep_fraction} outside [0, 1]"
    );
    let tau_policy = match *policy {
        TauPolicy::Absolute { tau } => tau,
        TauPolicy::RelativeMean { factor } => factor * scores.mean(),
        TauPolicy::Quantile { q } => {
            assert!((0.0..=1.0).contains(&q), "quantile {q} outside [0, 1]");
            let mut sorted = scores.scores.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.is_empty() {
                0.0
            } else {
                // Index such that about (1 - q) * n scores sit at or
                // above the threshold.
                let rank = (q * sorted.len() as f64).ceil() as usize;
                sorted[rank.min(sorted.len() - 1)]
            }
        }
    };

    let total_pixels = scores.image_width * scores.image_height;
    let needed = (min_keep_fraction * total_pixels as f64).ceil() as usize;

    let build = |tau: f64| -> (ReliabilityMask, usize) {
        let mut data = vec![false; total_pixels];
        let mut kept = 0usize;
        for y in 0..scores.image_height {
            for x in 0..scores.image_width {
                if scores.scores[scores.patch_of(x, y)] >= tau {
                    data[y * scores.image_width + x] = true;
                    kept += 1;
                }
            }
        }
        (
            ReliabilityMask { width: scores.image_width, height: scores.image_height, data },
            kept,
        )
    };

    let (mask, kept) = build(tau_policy);
    if kept >= needed {
        return MaskBuild { mask, tau: tau_policy, fallback_used: false };
    }

    // Relax: admit patches in descending score order (index ascending
    // on ties) until enough pixels are kept, then threshold at the
    // last admitted score so the mask remains score >= tau.
    let mut order: Vec<usize> = (0..scores.scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores.scores[b].total_cmp(&scores.scores[a]).then(a.cmp(&b))
    });
    let mut patch_pixels = vec![0usize; scores.scores.len()];
    for y in 0..scores.image_height {
        for x in 0..scores.image_width {
            patch_pixels[scores.patch_of(x, y)] += 1;
        }
    }
    let mut covered = 0usize;
    let mut tau_eff = tau_policy;
    for &p in &order {
        covered += patch_pixels[p];
        tau_eff = scores.scores[p];
        if covered >= needed {
            break;
        }
    }
    let (mask, _) = build(tau_eff);
    MaskBuild { mask, tau: tau_eff, fallback_used: true }
}
