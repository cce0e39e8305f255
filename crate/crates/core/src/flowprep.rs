//! Clip preprocessing: spatial resize, temporal resampling and dense optical
//! flow by polynomial expansion (Farnebäck).
//!
//! Frames are `[T, C, H, W]` tensors with values in `[0, 1]`, `C` either 1
//! (grayscale) or 3 (RGB). Flow fields carry `(dx, dy)` in pixels.

use std::path::Path;

use numcore::Tensor;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Luminance weights for RGB to gray.
pub const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Tensor,
    pub frame_rate: Option<f64>,
}

impl FrameSequence {
    pub fn new(frames: Tensor) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || !(s[1] == 1 || s[1] == 3) {
            return Err(Error::Contract(format!(
                "frame sequence must be [T, 1|3, H, W], got {s:?}"
            )));
        }
        if s[0] < 2 {
            return Err(Error::Contract(format!("frame sequence needs T >= 2, got {}", s[0])));
        }
        if frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("frame values must lie in [0, 1]".into()));
        }
        Ok(FrameSequence { frames, frame_rate: None })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    fn plane_len(&self) -> usize {
        self.height() * self.width()
    }

    /// Channel `c` of frame `t` as a row-major slice.
    pub fn plane(&self, t: usize, c: usize) -> &[f32] {
        let n = self.plane_len();
        let o = (t * self.channels() + c) * n;
        &self.frames.data()[o..o + n]
    }

    /// Grayscale frame `t` (luminance for RGB input).
    pub fn gray(&self, t: usize) -> Plane {
        let (h, w) = (self.height(), self.width());
        let data = if self.channels() == 1 {
            self.plane(t, 0).iter().map(|&v| v as f64).collect()
        } else {
            let (r, g, b) = (self.plane(t, 0), self.plane(t, 1), self.plane(t, 2));
            (0..h * w)
                .map(|i| (LUMA[0] * r[i] + LUMA[1] * g[i] + LUMA[2] * b[i]) as f64)
                .collect()
        };
        Plane { h, w, data }
    }
}

/// Single-channel image in f64, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(h * w, data.len());
        Plane { h, w, data }
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| f(y, x)).collect();
        Plane { h, w, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    #[inline]
    fn clamped(&self, y: isize, x: isize) -> f64 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// Bilinear sample with edge replication.
    pub fn sample(&self, y: f64, x: f64) -> f64 {
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        let (y1, x1) = ((y0 + 1).min(self.h - 1), (x0 + 1).min(self.w - 1));
        let top = self.at(y0, x0) * (1.0 - fx) + self.at(y0, x1) * fx;
        let bot = self.at(y1, x0) * (1.0 - fx) + self.at(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Corner-aligned source coordinate of output index `i` when mapping `n_in -> n_out` samples.
fn corner_aligned(i: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

fn lerp_weights(pos: f64, n: usize) -> (usize, usize, f64) {
    let i0 = (pos.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, pos - i0 as f64)
}

/// Bilinear resize of every frame to `h x w` with corner-aligned sampling.
pub fn resize_bilinear(seq: &FrameSequence, h: usize, w: usize) -> Result<FrameSequence> {
    if h == 0 || w == 0 {
        return Err(Error::Contract("resize target must be at least 1x1".into()));
    }
    let (t, c, hi, wi) = (seq.len(), seq.channels(), seq.height(), seq.width());
    let rows: Vec<_> = (0..h).map(|y| lerp_weights(corner_aligned(y, hi, h), hi)).collect();
    let cols: Vec<_> = (0..w).map(|x| lerp_weights(corner_aligned(x, wi, w), wi)).collect();
    let mut out = Vec::with_capacity(t * c * h * w);
    for ti in 0..t {
        for ci in 0..c {
            let p = seq.plane(ti, ci);
            for &(y0, y1, fy) in &rows {
                for &(x0, x1, fx) in &cols {
                    let g = |y: usize, x: usize| p[y * wi + x] as f64;
                    let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
                    let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
                    out.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    let mut r = FrameSequence::new(Tensor::new(&[t, c, h, w], out)?)?;
    r.frame_rate = seq.frame_rate;
    Ok(r)
}

/// Resample to `t_out` uniformly spaced frames, each a linear blend of its two
/// bracketing input frames.
pub fn resample_time(seq: &FrameSequence, t_out: usize) -> Result<FrameSequence> {
    if t_out < 2 {
        return Err(Error::Contract(format!("t_out must be >= 2, got {t_out}")));
    }
    let t_in = seq.len();
    let n = seq.channels() * seq.plane_len();
    let data = seq.frames.data();
    let mut out = Vec::with_capacity(t_out * n);
    for j in 0..t_out {
        let (a, b, f) = lerp_weights(corner_aligned(j, t_in, t_out), t_in);
        let (fa, fb) = (&data[a * n..(a + 1) * n], &data[b * n..(b + 1) * n]);
        if f == 0.0 {
            out.extend_from_slice(fa);
        } else {
            out.extend(
                fa.iter().zip(fb).map(|(&x, &y)| ((1.0 - f) * x as f64 + f * y as f64) as f32),
            );
        }
    }
    let shape = [t_out, seq.channels(), seq.height(), seq.width()];
    let mut r = FrameSequence::new(Tensor::new(&shape, out)?)?;
    r.frame_rate = seq.frame_rate.map(|hz| hz * (t_out - 1) as f64 / (t_in - 1) as f64);
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FarnebackParams {
    pub pyramid_scale: f64,
    pub levels: usize,
    pub window: usize,
    pub iterations: usize,
    pub poly_n: usize,
    pub poly_sigma: f64,
}

impl Default for FarnebackParams {
    fn default() -> Self {
        FarnebackParams {
            pyramid_scale: 0.5,
            levels: 3,
            window: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.1,
        }
    }
}

impl FarnebackParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("farneback: {m}")));
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return bad("pyramid_scale must lie in (0, 1)");
        }
        if self.levels < 1 || self.iterations < 1 {
            return bad("levels and iterations must be >= 1");
        }
        if self.window % 2 == 0 || self.poly_n % 2 == 0 {
            return bad("window and poly_n must be odd");
        }
        if !(self.poly_sigma > 0.0) {
            return bad("poly_sigma must be positive");
        }
        Ok(())
    }
}

/// Intensities are scaled to 0..255 internally so the solver's regularizer
/// has the same relative weight as in classical implementations.
const INTENSITY_SCALE: f64 = 255.0;
const DET_REGULARIZER: f64 = 1e-3;
/// Pyramid levels below this size are skipped.
const MIN_LEVEL_SIZE: usize = 16;
/// Down-weighting of constraint matrices within this many pixels of the border.
const BORDER: [f64; 5] = [0.14, 0.14, 0.4472, 0.4472, 0.4472];

fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable correlation with edge replication; `kx` runs along columns, `ky` along rows.
fn correlate(p: &Plane, kx: &[f64], ky: &[f64]) -> Plane {
    let (rx, ry) = ((kx.len() / 2) as isize, (ky.len() / 2) as isize);
    let mut tmp = vec![0.0; p.h * p.w];
    for y in 0..p.h {
        for x in 0..p.w {
            tmp[y * p.w + x] = (0..ky.len())
                .map(|i| ky[i] * p.clamped(y as isize + i as isize - ry, x as isize))
                .sum();
        }
    }
    let tmp = Plane::new(p.h, p.w, tmp);
    Plane::from_fn(p.h, p.w, |y, x| {
        (0..kx.len()).map(|i| kx[i] * tmp.clamped(y as isize, x as isize + i as isize - rx)).sum()
    })
}

fn box_blur(p: &Plane, window: usize) -> Plane {
    let k = vec![1.0 / window as f64; window];
    correlate(p, &k, &k)
}

fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let k = gaussian_kernel(sigma, (3.0 * sigma).ceil().max(1.0) as usize);
    correlate(p, &k, &k)
}

/// Half-pixel-center bilinear resize, used inside the pyramid.
fn resize_plane(p: &Plane, h: usize, w: usize) -> Plane {
    let (sy, sx) = (p.h as f64 / h as f64, p.w as f64 / w as f64);
    Plane::from_fn(h, w, |y, x| p.sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5))
}

/// Quadratic polynomial expansion coefficients per pixel:
/// `f(dx, dy) ~ c + b.x dx + b.y dy + a_xx dx^2 + a_yy dy^2 + a_xy dx dy`.
struct PolyCoeffs {
    bx: Plane,
    by: Plane,
    axx: Plane,
    ayy: Plane,
    axy: Plane,
}

/// Solve a small dense system in place (Gaussian elimination with partial pivoting).
fn solve_dense<const N: usize>(mut m: [[f64; N]; N], mut rhs: [f64; N]) -> [f64; N] {
    for col in 0..N {
        let piv = (col..N).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        rhs.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            for k in col..N {
                m[row][k] -= f * m[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let s: f64 = (row + 1..N).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - s) / m[row][row];
    }
    x
}

/// Gaussian-weighted least-squares fit of a quadratic over a `(2n+1)^2` window,
/// computed with separable correlations.
fn poly_expand(img: &Plane, n: usize, sigma: f64) -> PolyCoeffs {
    let offsets: Vec<f64> = (0..=2 * n).map(|i| i as f64 - n as f64).collect();
    let g: Vec<f64> = offsets.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let gs: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|v| v / gs).collect();
    let k = |p: i32| -> Vec<f64> { g.iter().zip(&offsets).map(|(w, x)| w * x.powi(p)).collect() };
    let (k0, k1, k2) = (k(0), k(1), k(2));

    // Basis order: 1, x, y, x^2, y^2, xy. Gram matrix of the weighted basis.
    let basis = |x: f64, y: f64| [1.0, x, y, x * x, y * y, x * y];
    let mut gram = [[0.0; 6]; 6];
    for (iy, &y) in offsets.iter().enumerate() {
        for (ix, &x) in offsets.iter().enumerate() {
            let b = basis(x, y);
            let w = g[ix] * g[iy];
            for i in 0..6 {
                for j in 0..6 {
                    gram[i][j] += w * b[i] * b[j];
                }
            }
        }
    }
    // Rows of the inverse Gram matrix map correlations to coefficients.
    let mut inv = [[0.0; 6]; 6];
    for j in 0..6 {
        let mut e = [0.0; 6];
        e[j] = 1.0;
        let col = solve_dense(gram, e);
        for i in 0..6 {
            inv[i][j] = col[i];
        }
    }

    let c = [
        correlate(img, &k0, &k0),
        correlate(img, &k1, &k0),
        correlate(img, &k0, &k1),
        correlate(img, &k2, &k0),
        correlate(img, &k0, &k2),
        correlate(img, &k1, &k1),
    ];
    let coef = |row: usize| {
        Plane::from_fn(img.h, img.w, |y, x| {
            let i = y * img.w + x;
            (0..6).map(|j| inv[row][j] * c[j].data[i]).sum()
        })
    };
    PolyCoeffs { bx: coef(1), by: coef(2), axx: coef(3), ayy: coef(4), axy: coef(5) }
}

/// Per-pixel normal-equation terms `G = A^T A`, `h = A^T db`.
struct Constraints {
    g11: Plane,
    g12: Plane,
    g22: Plane,
    h1: Plane,
    h2: Plane,
}

fn border_weight(i: usize, n: usize) -> f64 {
    let d = i.min(n - 1 - i);
    BORDER.get(d).copied().unwrap_or(1.0)
}

fn build_constraints(r0: &PolyCoeffs, r1: &PolyCoeffs, fx: &Plane, fy: &Plane) -> Constraints {
    let (h, w) = (fx.h, fx.w);
    let mut out = Constraints {
        g11: Plane::new(h, w, vec![0.0; h * w]),
        g12: Plane::new(h, w, vec![0.0; h * w]),
        g22: Plane::new(h, w, vec![0.0; h * w]),
        h1: Plane::new(h, w, vec![0.0; h * w]),
        h2: Plane::new(h, w, vec![0.0; h * w]),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (fx.data[i], fy.data[i]);
            let (sy, sx) = (y as f64 + dy, x as f64 + dx);
            // A is the average of both expansions; off-diagonal terms are halved xy coefficients.
            let a11 = 0.5 * (r0.axx.data[i] + r1.axx.sample(sy, sx));
            let a22 = 0.5 * (r0.ayy.data[i] + r1.ayy.sample(sy, sx));
            let a12 = 0.25 * (r0.axy.data[i] + r1.axy.sample(sy, sx));
            let db1 = -0.5 * (r1.bx.sample(sy, sx) - r0.bx.data[i]) + a11 * dx + a12 * dy;
            let db2 = -0.5 * (r1.by.sample(sy, sx) - r0.by.data[i]) + a12 * dx + a22 * dy;
            let wgt = border_weight(y, h) * border_weight(x, w);
            out.g11.data[i] = wgt * (a11 * a11 + a12 * a12);
            out.g12.data[i] = wgt * a12 * (a11 + a22);
            out.g22.data[i] = wgt * (a12 * a12 + a22 * a22);
            out.h1.data[i] = wgt * (a11 * db1 + a12 * db2);
            out.h2.data[i] = wgt * (a12 * db1 + a22 * db2);
        }
    }
    out
}

fn solve_flow(m: &Constraints, window: usize, fx: &mut Plane, fy: &mut Plane) {
    let (g11, g12, g22) = (box_blur(&m.g11, window), box_blur(&m.g12, window), box_blur(&m.g22, window));
    let (h1, h2) = (box_blur(&m.h1, window), box_blur(&m.h2, window));
    for i in 0..fx.data.len() {
        let det = g11.data[i] * g22.data[i] - g12.data[i] * g12.data[i] + DET_REGULARIZER;
        fx.data[i] = (g22.data[i] * h1.data[i] - g12.data[i] * h2.data[i]) / det;
        fy.data[i] = (g11.data[i] * h2.data[i] - g12.data[i] * h1.data[i]) / det;
    }
}

/// Dense flow from `prev` to `next`: channel 0 is dx, channel 1 is dy.
pub fn farneback_flow(prev: &Plane, next: &Plane, params: &FarnebackParams) -> Result<Tensor> {
    params.validate()?;
    if prev.h != next.h || prev.w != next.w {
        return Err(Error::Contract(format!(
            "flow frames differ in size: {}x{} vs {}x{}",
            prev.h, prev.w, next.h, next.w
        )));
    }
    if prev.h < params.poly_n || prev.w < params.poly_n {
        return Err(Error::Contract(format!(
            "frame {}x{} smaller than poly_n {}",
            prev.h, prev.w, params.poly_n
        )));
    }
    let scale_img = |p: &Plane| Plane::new(p.h, p.w, p.data.iter().map(|v| v * INTENSITY_SCALE).collect());
    let (img0, img1) = (scale_img(prev), scale_img(next));

    let mut levels = 0;
    while levels < params.levels {
        let s = params.pyramid_scale.powi(levels as i32);
        let (h, w) = ((prev.h as f64 * s).round() as usize, (prev.w as f64 * s).round() as usize);
        if levels > 0 && h.min(w) < MIN_LEVEL_SIZE {
            break;
        }
        levels += 1;
    }

    let mut flow: Option<(Plane, Plane)> = None;
    for k in (0..levels).rev() {
        let s = params.pyramid_scale.powi(k as i32);
        let (h, w) = ((prev.h as f64 * s).round() as usize, (prev.w as f64 * s).round() as usize);
        let sigma = (1.0 / s - 1.0) * 0.5;
        let level = |p: &Plane| {
            if k == 0 {
                p.clone()
            } else {
                resize_plane(&gaussian_blur(p, sigma), h, w)
            }
        };
        let (l0, l1) = (level(&img0), level(&img1));
        let (mut fx, mut fy) = match flow.take() {
            None => (Plane::new(h, w, vec![0.0; h * w]), Plane::new(h, w, vec![0.0; h * w])),
            Some((px, py)) => {
                let (rx, ry) = (w as f64 / px.w as f64, h as f64 / px.h as f64);
                let mut fx = resize_plane(&px, h, w);
                let mut fy = resize_plane(&py, h, w);
                fx.data.iter_mut().for_each(|v| *v *= rx);
                fy.data.iter_mut().for_each(|v| *v *= ry);
                (fx, fy)
            }
        };
        let r0 = poly_expand(&l0, params.poly_n, params.poly_sigma);
        let r1 = poly_expand(&l1, params.poly_n, params.poly_sigma);
        for _ in 0..params.iterations {
            let m = build_constraints(&r0, &r1, &fx, &fy);
            solve_flow(&m, params.window, &mut fx, &mut fy);
        }
        flow = Some((fx, fy));
    }
    let (fx, fy) = flow.expect("at least one pyramid level");
    let data = fx.data.iter().chain(&fy.data).map(|&v| v as f32).collect();
    let t = Tensor::new(&[2, prev.h, prev.w], data)?;
    if !t.all_finite() {
        return Err(Error::Degenerate("optical flow produced non-finite values".into()));
    }
    Ok(t)
}

/// Flow between consecutive frames: `[T-1, 2, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub flow: Tensor,
}

pub fn sequence_flow(seq: &FrameSequence, params: &FarnebackParams) -> Result<FlowField> {
    let grays: Vec<Plane> = (0..seq.len()).map(|t| seq.gray(t)).collect();
    let fields = grays
        .windows(2)
        .map(|p| farneback_flow(&p[0], &p[1], params))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor> = fields.iter().collect();
    Ok(FlowField { flow: Tensor::stack(&refs)? })
}

/// Network-ready streams of one clip: `rgb [3, T, H, W]`, `flow [2, T, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensors {
    pub rgb: Tensor,
    pub flow: Tensor,
}

/// Zero-mean, unit-variance per channel of a `[C, ...]` tensor; constant channels become zeros.
pub fn standardize_channels(t: &mut Tensor) {
    let c = t.shape()[0];
    let n = t.numel() / c;
    for chunk in t.data_mut().chunks_exact_mut(n) {
        let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        for v in chunk.iter_mut() {
            *v = if std > 1e-12 { ((*v as f64 - mean) / std) as f32 } else { 0.0 };
        }
    }
}

/// `[T, C, H, W] -> [C, T, H, W]`.
fn channels_first(frames: &Tensor) -> Result<Tensor> {
    let [t, c, h, w] = *frames.shape() else {
        return Err(Error::Contract(format!("expected rank 4, got {:?}", frames.shape())));
    };
    let n = h * w;
    let src = frames.data();
    let mut out = Vec::with_capacity(src.len());
    for ci in 0..c {
        for ti in 0..t {
            let o = (ti * c + ci) * n;
            out.extend_from_slice(&src[o..o + n]);
        }
    }
    Ok(Tensor::new(&[c, t, h, w], out)?)
}

/// Split a preprocessed sequence into standardized RGB and flow streams. Gray
/// input is replicated to three channels; the last flow field is repeated so
/// both streams have `T` frames.
pub fn clip_to_pair(seq: &FrameSequence, params: &FarnebackParams) -> Result<ClipTensors> {
    let (t, h, w) = (seq.len(), seq.height(), seq.width());
    let flow = sequence_flow(seq, params)?.flow;
    let mut flow_frames = flow.data().to_vec();
    let last = (t - 2) * 2 * h * w;
    flow_frames.extend_from_within(last..last + 2 * h * w);
    let mut flow = channels_first(&Tensor::new(&[t, 2, h, w], flow_frames)?)?;

    let mut rgb = channels_first(seq.frames())?;
    if seq.channels() == 1 {
        let g = rgb.data().to_vec();
        rgb = Tensor::new(&[3, t, h, w], [g.as_slice(), &g, &g].concat())?;
    }
    standardize_channels(&mut rgb);
    standardize_channels(&mut flow);
    Ok(ClipTensors { rgb, flow })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrepConfig {
    pub frames: usize,
    pub size: usize,
    pub farneback: FarnebackParams,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig { frames: 16, size: 112, farneback: FarnebackParams::default() }
    }
}

/// Resize, resample to `frames` and split into streams.
pub fn preprocess(seq: &FrameSequence, cfg: &PrepConfig) -> Result<ClipTensors> {
    let resized = if seq.height() == cfg.size && seq.width() == cfg.size {
        seq.clone()
    } else {
        resize_bilinear(seq, cfg.size, cfg.size)?
    };
    let resampled =
        if resized.len() == cfg.frames { resized } else { resample_time(&resized, cfg.frames)? };
    clip_to_pair(&resampled, &cfg.farneback)
}

/// Read a clip from an MXT1 `[T, C, H, W]` file or a directory of PNG frames
/// (lexicographic order).
pub fn load_frames(path: &Path) -> Result<FrameSequence> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
            .collect();
        files.sort();
        let mut frames = Vec::new();
        let mut dims = None;
        for f in &files {
            let img = image::open(f)
                .map_err(|e| Error::Format(format!("{}: {e}", f.display())))?
                .to_rgb32f();
            let d = (img.height() as usize, img.width() as usize);
            if *dims.get_or_insert(d) != d {
                return Err(Error::Format(format!("{}: frame size differs", f.display())));
            }
            let (h, w) = d;
            let raw = img.into_raw();
            for c in 0..3 {
                frames.extend((0..h * w).map(|i| raw[i * 3 + c].clamp(0.0, 1.0)));
            }
        }
        let (h, w) = dims.ok_or_else(|| Error::Format(format!("{}: no PNG frames", path.display())))?;
        FrameSequence::new(Tensor::new(&[files.len(), 3, h, w], frames)?)
    } else {
        let t = numcore::mxt::load::<f32>(path).map_err(|e| match e {
            numcore::NumError::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?;
        FrameSequence::new(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_from(t: usize, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> FrameSequence {
        let mut data = Vec::new();
        for ti in 0..t {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ti, y, x));
                }
            }
        }
        FrameSequence::new(Tensor::new(&[t, 1, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn sequence_validation() {
        assert!(FrameSequence::new(Tensor::zeros(&[1, 1, 4, 4])).is_err());
        assert!(FrameSequence::new(Tensor::zeros(&[2, 2, 4, 4])).is_err());
        assert!(FrameSequence::new(Tensor::full(&[2, 1, 4, 4], 1.5)).is_err());
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let s = seq_from(2, 5, 7, |t, y, x| ((t * 31 + y * 7 + x) % 11) as f32 / 10.0);
        assert_eq!(resize_bilinear(&s, 5, 7).unwrap(), s);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let s = seq_from(2, 9, 6, |_, _, _| 0.375);
        let r = resize_bilinear(&s, 4, 13).unwrap();
        assert!(r.frames().data().iter().all(|&v| v == 0.375));
    }

    #[test]
    fn resize_ramp_matches_closed_form() {
        // f(y, x) = (x + 2y) / 9 on a 4x4 grid; corner-aligned 2x2 picks the corners.
        let s = seq_from(2, 4, 4, |_, y, x| (x + 2 * y) as f32 / 9.0);
        let r = resize_bilinear(&s, 2, 2).unwrap();
        let expect = [0.0, 3.0 / 9.0, 6.0 / 9.0, 1.0];
        for (a, e) in r.plane(0, 0).iter().zip(expect) {
            assert!((*a as f64 - e).abs() < 1e-7);
        }
        // 4x4 -> 3x3 samples at 0, 1.5, 3: the ramp is linear so values are exact.
        let r = resize_bilinear(&s, 3, 3).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                let e = (1.5 * x as f64 + 3.0 * y as f64) / 9.0;
                assert!((r.plane(1, 0)[y * 3 + x] as f64 - e).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn resample_identity_and_midpoint() {
        let s = seq_from(16, 3, 3, |t, y, x| ((t + y + x) % 5) as f32 / 4.0);
        assert_eq!(resample_time(&s, 16).unwrap(), s);

        let ab = seq_from(2, 2, 2, |t, y, x| if t == 0 { 0.2 + 0.1 * (y + x) as f32 } else { 0.8 });
        let r = resample_time(&ab, 3).unwrap();
        assert_eq!(r.plane(0, 0), ab.plane(0, 0));
        assert_eq!(r.plane(2, 0), ab.plane(1, 0));
        for (m, (a, b)) in r.plane(1, 0).iter().zip(ab.plane(0, 0).iter().zip(ab.plane(1, 0))) {
            assert!((m - (0.5 * a + 0.5 * b)).abs() < 1e-7);
        }
        assert!(resample_time(&ab, 1).is_err());
    }

    #[test]
    fn resample_preserves_linear_brightness() {
        let s = seq_from(32, 2, 2, |t, _, _| 0.1 + 0.8 * t as f32 / 31.0);
        let r = resample_time(&s, 16).unwrap();
        for j in 0..16 {
            let expect = 0.1 + 0.8 * j as f64 / 15.0;
            assert!(r.plane(j, 0).iter().all(|&v| (v as f64 - expect).abs() < 1e-6));
        }
    }

    #[test]
    fn params_validation() {
        assert!(FarnebackParams::default().validate().is_ok());
        let bad = FarnebackParams { window: 14, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FarnebackParams { pyramid_scale: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_frames_are_rejected() {
        let p = Plane::new(3, 3, vec![0.5; 9]);
        assert!(farneback_flow(&p, &p, &FarnebackParams::default()).is_err());
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let p = Plane::from_fn(40, 40, |y, x| 0.5 + 0.3 * ((x as f64) * 0.4).sin() * ((y as f64) * 0.3).cos());
        let f = farneback_flow(&p, &p, &FarnebackParams::default()).unwrap();
        assert!(f.data().iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn standardized_channels() {
        let s = seq_from(16, 12, 12, |t, y, x| ((t * 3 + y * 5 + x * 7) % 13) as f32 / 12.0);
        let pair = clip_to_pair(&s, &FarnebackParams::default()).unwrap();
        assert_eq!(pair.rgb.shape(), &[3, 16, 12, 12]);
        assert_eq!(pair.flow.shape(), &[2, 16, 12, 12]);
        for chunk in pair.rgb.data().chunks_exact(16 * 144) {
            let m = chunk.iter().map(|&v| v as f64).sum::<f64>() / chunk.len() as f64;
            let v = chunk.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / chunk.len() as f64;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn static_clip_has_zero_flow_stream() {
        let s = seq_from(16, 20, 20, |_, y, x| 0.3 + 0.02 * ((x * y) % 9) as f32);
        let pair = clip_to_pair(&s, &FarnebackParams::default()).unwrap();
        // flow is identically zero, so standardization maps it to zeros too
        assert!(pair.flow.data().iter().all(|&v| v == 0.0));
    }
}
