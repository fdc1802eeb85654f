//! Windowed SSIM and multi-scale SSIM kernels.
//!
//! Key properties, all covered by tests:
//!
//! * sliding 11x11 Gaussian window (sigma 1.5, L1-normalized), stride 1, no
//!   padding; per-window means/variances are the Gaussian-weighted estimators;
//! * `ssim(x, x) == ms_ssim(x, x) == 1.0` and both metrics are symmetric,
//!   bit-for-bit;
//! * MS-SSIM pools 2x2 (floor dimensions) between scales, clamps negative
//!   per-window contrast-structure values to zero, and truncates the scale
//!   count (renormalizing weights) when an image is too small for the
//!   requested pyramid;
//! * batch evaluation is embarrassingly parallel and bit-identical for every
//!   worker count.
//!
//! [`reference`] holds deliberately naive re-implementations used as oracles.

pub mod reference;

use rayon::prelude::*;
use thiserror::Error;

use crate::pixel::PixelImage;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },
    #[error("window buffers hold {left} and {right} values")]
    WindowLengthMismatch { left: usize, right: usize },
    #[error("empty window")]
    EmptyWindow,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("batch pair (query {query}, corpus {corpus}): {source}")]
    Pair {
        query: usize,
        corpus: usize,
        #[source]
        source: Box<MetricError>,
    },
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

/// Single-scale SSIM parameters. `c1 = (k1 L)^2`, `c2 = (k2 L)^2`, and the
/// structure stabilizer is fixed at `c3 = c2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Value range `L` of the pixel data; 1.0 for normalized luminance.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(MetricError::InvalidParams(format!(
                "window_size must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        for (name, value) in [
            ("window_sigma", self.window_sigma),
            ("k1", self.k1),
            ("k2", self.k2),
            ("dynamic_range", self.dynamic_range),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(MetricError::InvalidParams(format!(
                    "{name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-scale exponents. `alpha` weights the luminance term (applied at the
/// coarsest scale only), `beta`/`gamma` the contrast/structure terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl ScaleWeights {
    fn uniform(value: f64) -> Self {
        Self {
            alpha: value,
            beta: value,
            gamma: value,
        }
    }
}

/// Classic five-scale exponents from the original multi-scale evaluation
/// study.
const CLASSIC_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Multi-scale parameters: the windowed base plus one weight triple per
/// scale. Weight vectors are normalized per component at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MsSsimParams {
    pub base: SsimParams,
    pub weights: Vec<ScaleWeights>,
}

impl Default for MsSsimParams {
    fn default() -> Self {
        Self::equal(5)
    }
}

impl MsSsimParams {
    /// Equal normalized weights (`1/K` everywhere) over `scales` scales.
    pub fn equal(scales: usize) -> Self {
        let w = 1.0 / scales.max(1) as f64;
        Self {
            base: SsimParams::default(),
            weights: vec![ScaleWeights::uniform(w); scales.max(1)],
        }
    }

    /// The classic five-scale weight vector, normalized.
    pub fn classic() -> Self {
        let sum: f64 = CLASSIC_WEIGHTS.iter().sum();
        Self {
            base: SsimParams::default(),
            weights: CLASSIC_WEIGHTS
                .iter()
                .map(|&w| ScaleWeights::uniform(w / sum))
                .collect(),
        }
    }

    /// Custom weight triples; `validate` will insist each component sums to 1.
    pub fn with_weights(base: SsimParams, weights: Vec<ScaleWeights>) -> Self {
        Self { base, weights }
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        self.base.validate()?;
        if self.weights.is_empty() {
            return Err(MetricError::InvalidParams(
                "at least one scale is required".into(),
            ));
        }
        let (mut sa, mut sb, mut sg) = (0.0, 0.0, 0.0);
        for (j, w) in self.weights.iter().enumerate() {
            for (name, v) in [("alpha", w.alpha), ("beta", w.beta), ("gamma", w.gamma)] {
                if !v.is_finite() || v <= 0.0 {
                    return Err(MetricError::InvalidParams(format!(
                        "scale {j} {name} must be positive, got {v}"
                    )));
                }
            }
            if w.beta != w.gamma {
                // The kernel evaluates the factored contrast-structure map,
                // which merges the beta and gamma exponents; they must agree.
                return Err(MetricError::InvalidParams(format!(
                    "scale {j}: beta ({}) and gamma ({}) must be equal",
                    w.beta, w.gamma
                )));
            }
            sa += w.alpha;
            sb += w.beta;
            sg += w.gamma;
        }
        for (name, sum) in [("alpha", sa), ("beta", sb), ("gamma", sg)] {
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MetricError::InvalidParams(format!(
                    "{name} weights sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// A scalar similarity. SSIM values live in `[-1, 1]`; MS-SSIM values are
/// additionally nonnegative thanks to the clamping rule. A hair of
/// floating-point slack is tolerated at the bounds.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        debug_assert!(
            value.is_finite() && value.abs() <= 1.0 + 1e-9,
            "similarity {value} outside [-1, 1]"
        );
        Self(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Deepest scale count usable for `width` x `height` before 2x2 pooling
/// shrinks either dimension below the window.
pub fn max_scales(width: usize, height: usize, window: usize) -> usize {
    let (mut w, mut h, mut n) = (width, height, 0);
    while w >= window && h >= window {
        n += 1;
        w /= 2;
        h /= 2;
    }
    n
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size - 1) as f64 / 2.0;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = kernel.iter().sum();
    for v in &mut kernel {
        *v /= sum;
    }
    kernel
}

/// Separable valid-mode convolution (output `(w - k + 1) x (h - k + 1)`).
/// Tap order is fixed, so results are deterministic.
fn convolve_valid(
    src: &[f64],
    width: usize,
    height: usize,
    kernel: &[f64],
    tmp: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let taps = kernel.len();
    let out_w = width - taps + 1;
    let out_h = height - taps + 1;
    tmp.clear();
    tmp.resize(height * out_w, 0.0);
    for row in 0..height {
        let src_row = &src[row * width..row * width + width];
        let tmp_row = &mut tmp[row * out_w..(row + 1) * out_w];
        for (i, &g) in kernel.iter().enumerate() {
            let shifted = &src_row[i..i + out_w];
            for (acc, &v) in tmp_row.iter_mut().zip(shifted) {
                *acc += g * v;
            }
        }
    }
    out.clear();
    out.resize(out_h * out_w, 0.0);
    for row in 0..out_h {
        let out_row = &mut out[row * out_w..(row + 1) * out_w];
        for (i, &g) in kernel.iter().enumerate() {
            let tmp_row = &tmp[(row + i) * out_w..(row + i + 1) * out_w];
            for (acc, &v) in out_row.iter_mut().zip(tmp_row) {
                *acc += g * v;
            }
        }
    }
}

fn downsample_2x2(src: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let out_w = width / 2;
    let out_h = height / 2;
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let top = &src[(2 * y) * width..];
        let bottom = &src[(2 * y + 1) * width..];
        for x in 0..out_w {
            let sum = top[2 * x] + top[2 * x + 1] + bottom[2 * x] + bottom[2 * x + 1];
            out.push(sum * 0.25);
        }
    }
    (out, out_w, out_h)
}

#[derive(Debug)]
struct ScaleData {
    pixels: Vec<f64>,
    width: usize,
    height: usize,
    /// Gaussian mean map over valid window positions.
    mu: Vec<f64>,
    /// Gaussian variance map (`E[x^2] - mu^2`), same shape as `mu`.
    var: Vec<f64>,
}

/// The pair-independent half of an MS-SSIM evaluation: the 2x2 image pyramid
/// with per-scale Gaussian mean and variance maps. Precomputing corpus images
/// once lets each pair evaluation get away with a single cross-correlation
/// convolution per scale.
#[derive(Debug)]
pub struct MsSsimPrecomp {
    params: MsSsimParams,
    scales: Vec<ScaleData>,
}

impl MsSsimPrecomp {
    pub fn new(image: &PixelImage, params: &MsSsimParams) -> Result<Self, MetricError> {
        params.validate()?;
        let window = params.base.window_size;
        let feasible = max_scales(image.width(), image.height(), window);
        if feasible == 0 {
            return Err(MetricError::ImageTooSmall {
                width: image.width(),
                height: image.height(),
                window,
            });
        }
        let levels = feasible.min(params.scales());
        let kernel = gaussian_kernel(window, params.base.window_sigma);
        let mut scales = Vec::with_capacity(levels);
        let mut pixels = image.pixels().to_vec();
        let (mut w, mut h) = (image.width(), image.height());
        let (mut tmp, mut sq) = (Vec::new(), Vec::new());
        for level in 0..levels {
            let mut mu = Vec::new();
            convolve_valid(&pixels, w, h, &kernel, &mut tmp, &mut mu);
            sq.clear();
            sq.extend(pixels.iter().map(|&v| v * v));
            let mut var = Vec::new();
            convolve_valid(&sq, w, h, &kernel, &mut tmp, &mut var);
            for (v, m) in var.iter_mut().zip(&mu) {
                *v -= m * m;
            }
            let next = if level + 1 < levels {
                Some(downsample_2x2(&pixels, w, h))
            } else {
                None
            };
            scales.push(ScaleData {
                pixels,
                width: w,
                height: h,
                mu,
                var,
            });
            match next {
                Some((p, nw, nh)) => {
                    pixels = p;
                    w = nw;
                    h = nh;
                }
                None => break,
            }
        }
        Ok(Self {
            params: params.clone(),
            scales,
        })
    }

    pub fn width(&self) -> usize {
        self.scales[0].width
    }

    pub fn height(&self) -> usize {
        self.scales[0].height
    }

    /// Rough heap footprint; used to budget corpus-side precomputation.
    pub(crate) fn byte_estimate(width: usize, height: usize, params: &MsSsimParams) -> usize {
        let window = params.base.window_size;
        let levels = max_scales(width, height, window).min(params.scales());
        let (mut w, mut h, mut total) = (width, height, 0usize);
        for _ in 0..levels {
            let valid = (w + 1 - window) * (h + 1 - window);
            total += (w * h + 2 * valid) * std::mem::size_of::<f64>();
            w /= 2;
            h /= 2;
        }
        total
    }
}

fn renormalize(weights: &[ScaleWeights]) -> Vec<ScaleWeights> {
    let (mut sa, mut sb, mut sg) = (0.0, 0.0, 0.0);
    for w in weights {
        sa += w.alpha;
        sb += w.beta;
        sg += w.gamma;
    }
    weights
        .iter()
        .map(|w| ScaleWeights {
            alpha: w.alpha / sa,
            beta: w.beta / sb,
            gamma: w.gamma / sg,
        })
        .collect()
}

/// Multi-scale SSIM over shared precomputations. Both sides must have been
/// prepared with identical parameters and dimensions.
pub fn ms_ssim_precomputed(
    a: &MsSsimPrecomp,
    b: &MsSsimPrecomp,
) -> Result<SimilarityScore, MetricError> {
    if a.params != b.params {
        return Err(MetricError::InvalidParams(
            "precomputations built with different parameters".into(),
        ));
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    debug_assert_eq!(a.scales.len(), b.scales.len());
    let params = &a.params;
    let weights = renormalize(&params.weights[..a.scales.len()]);
    let kernel = gaussian_kernel(params.base.window_size, params.base.window_sigma);
    let c1 = params.base.c1();
    let c2 = params.base.c2();
    let last = a.scales.len() - 1;
    let (mut xy, mut tmp, mut sxy) = (Vec::new(), Vec::new(), Vec::new());
    let mut result = 1.0;
    for (level, w) in weights.iter().enumerate() {
        let sa = &a.scales[level];
        let sb = &b.scales[level];
        xy.clear();
        xy.extend(sa.pixels.iter().zip(&sb.pixels).map(|(&x, &y)| x * y));
        convolve_valid(&xy, sa.width, sa.height, &kernel, &mut tmp, &mut sxy);
        let mut cs_sum = 0.0;
        for (i, &raw) in sxy.iter().enumerate() {
            let cov = raw - sa.mu[i] * sb.mu[i];
            let cs = (2.0 * cov + c2) / (sa.var[i] + sb.var[i] + c2);
            // Negative contrast-structure contributions are clamped to zero
            // so the fractional exponents below stay real-valued.
            cs_sum += cs.max(0.0);
        }
        let mean_cs = cs_sum / sxy.len() as f64;
        result *= mean_cs.powf(w.beta);
        if level == last {
            let mut lum_sum = 0.0;
            for i in 0..sxy.len() {
                let mx = sa.mu[i];
                let my = sb.mu[i];
                lum_sum += (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            }
            result *= (lum_sum / sxy.len() as f64).powf(w.alpha);
        }
    }
    Ok(SimilarityScore::new(result))
}

/// Multi-scale SSIM between two equal-sized images.
pub fn ms_ssim(
    a: &PixelImage,
    b: &PixelImage,
    params: &MsSsimParams,
) -> Result<SimilarityScore, MetricError> {
    if !a.same_dimensions(b) {
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let pa = MsSsimPrecomp::new(a, params)?;
    let pb = MsSsimPrecomp::new(b, params)?;
    ms_ssim_precomputed(&pa, &pb)
}

/// Mean single-scale SSIM over all window positions.
pub fn ssim(
    a: &PixelImage,
    b: &PixelImage,
    params: &SsimParams,
) -> Result<SimilarityScore, MetricError> {
    params.validate()?;
    if !a.same_dimensions(b) {
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            b.width(),
            b.height(),
        ));
    }
    let window = params.window_size;
    let (w, h) = (a.width(), a.height());
    if w < window || h < window {
        return Err(MetricError::ImageTooSmall {
            width: w,
            height: h,
            window,
        });
    }
    let kernel = gaussian_kernel(window, params.window_sigma);
    let (mut tmp, mut buf) = (Vec::new(), Vec::new());
    let mut mu_a = Vec::new();
    let mut mu_b = Vec::new();
    let mut s_aa = Vec::new();
    let mut s_bb = Vec::new();
    let mut s_ab = Vec::new();
    let xs = a.pixels();
    let ys = b.pixels();
    convolve_valid(xs, w, h, &kernel, &mut tmp, &mut mu_a);
    convolve_valid(ys, w, h, &kernel, &mut tmp, &mut mu_b);
    buf.clear();
    buf.extend(xs.iter().map(|&v| v * v));
    convolve_valid(&buf, w, h, &kernel, &mut tmp, &mut s_aa);
    buf.clear();
    buf.extend(ys.iter().map(|&v| v * v));
    convolve_valid(&buf, w, h, &kernel, &mut tmp, &mut s_bb);
    buf.clear();
    buf.extend(xs.iter().zip(ys).map(|(&x, &y)| x * y));
    convolve_valid(&buf, w, h, &kernel, &mut tmp, &mut s_ab);

    let c1 = params.c1();
    let c2 = params.c2();
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let mx = mu_a[i];
        let my = mu_b[i];
        let va = s_aa[i] - mx * mx;
        let vb = s_bb[i] - my * my;
        let cov = s_ab[i] - mx * my;
        sum +=
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (va + vb + c2));
    }
    Ok(SimilarityScore::new(sum / mu_a.len() as f64))
}

/// Luminance/contrast/structure components of two raw windows, using uniform
/// (unweighted) moment estimators.
pub fn ssim_components(
    m: &[f64],
    n: &[f64],
    params: &SsimParams,
) -> Result<(f64, f64, f64), MetricError> {
    params.validate()?;
    if m.is_empty() {
        return Err(MetricError::EmptyWindow);
    }
    if m.len() != n.len() {
        return Err(MetricError::WindowLengthMismatch {
            left: m.len(),
            right: n.len(),
        });
    }
    let count = m.len() as f64;
    let mu_m = m.iter().sum::<f64>() / count;
    let mu_n = n.iter().sum::<f64>() / count;
    let (mut var_m, mut var_n, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in m.iter().zip(n) {
        let dx = x - mu_m;
        let dy = y - mu_n;
        var_m += dx * dx;
        var_n += dy * dy;
        cov += dx * dy;
    }
    var_m /= count;
    var_n /= count;
    cov /= count;
    let sigma_m = var_m.sqrt();
    let sigma_n = var_n.sqrt();
    let c1 = params.c1();
    let c2 = params.c2();
    let c3 = params.c3();
    let l = (2.0 * mu_m * mu_n + c1) / (mu_m * mu_m + mu_n * mu_n + c1);
    let c = (2.0 * sigma_m * sigma_n + c2) / (sigma_m * sigma_m + sigma_n * sigma_n + c2);
    let s = (cov + c3) / (sigma_m * sigma_n + c3);
    Ok((l, c, s))
}

/// Row-major score matrix: `rows` queries by `cols` corpus images.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: usize,
    cols: usize,
    scores: Vec<SimilarityScore>,
}

impl ScoreMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> SimilarityScore {
        self.scores[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[SimilarityScore] {
        &self.scores[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[SimilarityScore] {
        &self.scores
    }
}

/// Per-side heap budget below which batch evaluation keeps precomputations
/// for every image of that side alive at once.
const PRECOMP_BUDGET_BYTES: usize = 1 << 30;

fn precompute_side(
    images: &[PixelImage],
    params: &MsSsimParams,
    wrap: impl Fn(usize, MetricError) -> MetricError,
) -> Result<Option<Vec<MsSsimPrecomp>>, MetricError> {
    let total: usize = images
        .iter()
        .map(|img| MsSsimPrecomp::byte_estimate(img.width(), img.height(), params))
        .sum();
    if total > PRECOMP_BUDGET_BYTES {
        return Ok(None);
    }
    // Fan out across the current pool; errors are surfaced lowest index
    // first so failure reporting stays deterministic.
    let results: Vec<Result<MsSsimPrecomp, MetricError>> = images
        .par_iter()
        .map(|img| MsSsimPrecomp::new(img, params))
        .collect();
    let mut out = Vec::with_capacity(images.len());
    for (i, result) in results.into_iter().enumerate() {
        out.push(result.map_err(|e| wrap(i, e))?);
    }
    Ok(Some(out))
}

/// MS-SSIM for every (query, corpus) pair, fanned out over `jobs` workers.
/// Scores land in a preallocated matrix slot per pair, so the result is
/// bit-identical for any worker count; on failure the lowest pair index wins.
pub fn batch_similarity(
    queries: &[PixelImage],
    corpus: &[PixelImage],
    params: &MsSsimParams,
    jobs: usize,
) -> Result<ScoreMatrix, MetricError> {
    params.validate()?;
    let rows = queries.len();
    let cols = corpus.len();
    if rows == 0 || cols == 0 {
        return Ok(ScoreMatrix {
            rows,
            cols,
            scores: Vec::new(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MetricError::Pool(e.to_string()))?;
    let (pre_q, pre_c) = pool.install(|| {
        let pre_q = precompute_side(queries, params, |i, e| MetricError::Pair {
            query: i,
            corpus: 0,
            source: Box::new(e),
        })?;
        let pre_c = precompute_side(corpus, params, |j, e| MetricError::Pair {
            query: 0,
            corpus: j,
            source: Box::new(e),
        })?;
        Ok::<_, MetricError>((pre_q, pre_c))
    })?;
    let results: Vec<Result<SimilarityScore, MetricError>> = pool.install(|| {
        (0..rows * cols)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / cols, idx % cols);
                let fresh_q;
                let q = match &pre_q {
                    Some(v) => &v[i],
                    None => {
                        fresh_q = MsSsimPrecomp::new(&queries[i], params)?;
                        &fresh_q
                    }
                };
                let fresh_c;
                let c = match &pre_c {
                    Some(v) => &v[j],
                    None => {
                        fresh_c = MsSsimPrecomp::new(&corpus[j], params)?;
                        &fresh_c
                    }
                };
                ms_ssim_precomputed(q, c)
            })
            .collect()
    });
    let mut scores = Vec::with_capacity(rows * cols);
    for (idx, result) in results.into_iter().enumerate() {
        match result {
            Ok(score) => scores.push(score),
            Err(source) => {
                return Err(MetricError::Pair {
                    query: idx / cols,
                    corpus: idx % cols,
                    source: Box::new(source),
                })
            }
        }
    }
    Ok(ScoreMatrix { rows, cols, scores })
}
