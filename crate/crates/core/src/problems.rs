//! Deterministic test problems: Gaussian blurs with zero boundary
//! conditions, a parallel-beam ray-transform with exact intersection
//! lengths, the modified Shepp-Logan phantom, and seeded white noise.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::norm2;
use crate::linops::LinearOp;
use crate::rng::NormalStream;

/// One side of the kernel, truncated at `min(⌈4σ⌉, n − 1)` and normalized
/// to unit sum over the truncated support.
fn gaussian_kernel(n: usize, psf_sigma: f64) -> Result<Vec<f64>> {
    if !(psf_sigma > 0.0) || !psf_sigma.is_finite() {
        return Err(Error::InvalidArgument("psf_sigma must be positive"));
    }
    let radius = (libm::ceil(4.0 * psf_sigma) as usize).min(n.saturating_sub(1));
    let mut w: Vec<f64> = (0..=radius)
        .map(|d| {
            let d = d as f64;
            libm::exp(-d * d / (2.0 * psf_sigma * psf_sigma))
        })
        .collect();
    let total = w[0] + 2.0 * w[1..].iter().sum::<f64>();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

/// Half-kernel convolution along one axis with zero boundary conditions.
/// `stride` steps between consecutive samples, `len` samples per line.
fn convolve_line(
    kernel: &[f64],
    src: &[f64],
    dst: &mut [f64],
    start: usize,
    stride: usize,
    len: usize,
) {
    let r = kernel.len() - 1;
    for i in 0..len {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(len - 1);
        let mut acc = 0.0;
        for j in lo..=hi {
            acc += kernel[i.abs_diff(j)] * src[start + j * stride];
        }
        dst[start + i * stride] = acc;
    }
}

/// Symmetric Toeplitz Gaussian blur on a 1-D signal.
#[derive(Clone, Debug)]
pub struct GaussianBlur1d {
    n: usize,
    kernel: Vec<f64>,
}

impl GaussianBlur1d {
    pub fn new(n: usize, psf_sigma: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("signal length must be positive"));
        }
        Ok(Self {
            n,
            kernel: gaussian_kernel(n, psf_sigma)?,
        })
    }

    /// One side of the normalized kernel, index = distance from center.
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }
}

pub fn gaussian_blur_1d(n: usize, psf_sigma: f64) -> Result<GaussianBlur1d> {
    GaussianBlur1d::new(n, psf_sigma)
}

impl LinearOp for GaussianBlur1d {
    fn nrows(&self) -> usize {
        self.n
    }
    fn ncols(&self) -> usize {
        self.n
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        convolve_line(&self.kernel, x, out, 0, 1, self.n);
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        self.apply_into(y, out);
    }
}

/// Separable Gaussian blur on an `ny × nx` image stored row-major
/// (`index = row * nx + col`).
#[derive(Clone, Debug)]
pub struct GaussianBlur2d {
    nx: usize,
    ny: usize,
    kx: Vec<f64>,
    ky: Vec<f64>,
}

pub fn gaussian_blur_2d(nx: usize, ny: usize, psf_sigma: f64) -> Result<GaussianBlur2d> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("image dimensions must be positive"));
    }
    Ok(GaussianBlur2d {
        nx,
        ny,
        kx: gaussian_kernel(nx, psf_sigma)?,
        ky: gaussian_kernel(ny, psf_sigma)?,
    })
}

impl GaussianBlur2d {
    pub fn shape(&self) -> (usize, usize) {
        (self.ny, self.nx)
    }
}

impl LinearOp for GaussianBlur2d {
    fn nrows(&self) -> usize {
        self.nx * self.ny
    }
    fn ncols(&self) -> usize {
        self.nx * self.ny
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; x.len()];
        for r in 0..self.ny {
            convolve_line(&self.kx, x, &mut tmp, r * self.nx, 1, self.nx);
        }
        for c in 0..self.nx {
            convolve_line(&self.ky, &tmp, out, c, self.nx, self.ny);
        }
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        // both factors are symmetric and act on different axes, so they commute
        self.apply_into(y, out);
    }
}

/// Parallel-beam ray transform on an `n × n` pixel grid covering `[-1, 1]²`.
///
/// Row 0 of the image is the top (`y = 1`). Ray `i` of an angle `θ` is the
/// line `s_i (cos θ, sin θ) + t (−sin θ, cos θ)` with detector offsets
/// `s_i = (i − (n_rays − 1)/2)·h`, `h = 2/n`, so rays are one pixel apart.
/// Entries are exact intersection lengths (Siddon traversal), computed on
/// the fly in every product.
#[derive(Clone, Debug)]
pub struct ParallelTomo {
    n: usize,
    n_rays: usize,
    angles_deg: Vec<f64>,
    trig: Vec<(f64, f64)>,
    h: f64,
}

/// Ray count that spans the circumscribed circle of the grid while keeping
/// rays on pixel centers at 0°.
pub fn default_ray_count(n: usize) -> usize {
    let mut p = libm::ceil(core::f64::consts::SQRT_2 * n as f64) as usize;
    if (p + n) % 2 == 1 {
        p += 1;
    }
    p
}

pub fn parallel_tomo(n: usize, angles_deg: &[f64], n_rays: usize) -> Result<ParallelTomo> {
    if n < 2 {
        return Err(Error::InvalidArgument("grid size must be at least 2"));
    }
    if angles_deg.is_empty() {
        return Err(Error::InvalidArgument("angle list is empty"));
    }
    if n_rays == 0 {
        return Err(Error::InvalidArgument("ray count must be positive"));
    }
    if angles_deg.iter().any(|a| !a.is_finite()) {
        return Err(Error::InvalidArgument("angles must be finite"));
    }
    let trig = angles_deg
        .iter()
        .map(|&a| {
            let t = a.to_radians();
            (libm::cos(t), libm::sin(t))
        })
        .collect();
    Ok(ParallelTomo {
        n,
        n_rays,
        angles_deg: angles_deg.to_vec(),
        trig,
        h: 2.0 / n as f64,
    })
}

impl ParallelTomo {
    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn ray_count(&self) -> usize {
        self.n_rays
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    /// Visits `(pixel, length)` for every pixel the ray crosses.
    fn trace(
        &self,
        angle: usize,
        ray: usize,
        ts: &mut Vec<f64>,
        mut visit: impl FnMut(usize, f64),
    ) {
        const AXIS_EPS: f64 = 1e-14;
        let (c, s) = self.trig[angle];
        let offset = (ray as f64 - (self.n_rays as f64 - 1.0) / 2.0) * self.h;
        let (ox, oy) = (offset * c, offset * s);
        let (dx, dy) = (-s, c);

        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        for (o, d) in [(ox, dx), (oy, dy)] {
            if d.abs() < AXIS_EPS {
                if o <= -1.0 || o >= 1.0 {
                    return;
                }
            } else {
                let t1 = (-1.0 - o) / d;
                let t2 = (1.0 - o) / d;
                tmin = tmin.max(t1.min(t2));
                tmax = tmax.min(t1.max(t2));
            }
        }
        if !(tmax > tmin) {
            return;
        }
        ts.clear();
        ts.push(tmin);
        ts.push(tmax);
        for (o, d) in [(ox, dx), (oy, dy)] {
            if d.abs() < AXIS_EPS {
                continue;
            }
            for k in 1..self.n {
                let line = -1.0 + k as f64 * self.h;
                let t = (line - o) / d;
                if t > tmin && t < tmax {
                    ts.push(t);
                }
            }
        }
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        let min_len = 1e-14 * self.h;
        let last = self.n as isize - 1;
        for w in ts.windows(2) {
            let len = w[1] - w[0];
            if len <= min_len {
                continue;
            }
            let tm = 0.5 * (w[0] + w[1]);
            let (x, y) = (ox + tm * dx, oy + tm * dy);
            let col = (libm::floor((x + 1.0) / self.h) as isize).clamp(0, last) as usize;
            let row = (libm::floor((1.0 - y) / self.h) as isize).clamp(0, last) as usize;
            visit(row * self.n + col, len);
        }
    }
}

impl LinearOp for ParallelTomo {
    fn nrows(&self) -> usize {
        self.angles_deg.len() * self.n_rays
    }
    fn ncols(&self) -> usize {
        self.n * self.n
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut ts = Vec::with_capacity(2 * self.n + 2);
        for a in 0..self.angles_deg.len() {
            for r in 0..self.n_rays {
                let mut acc = 0.0;
                self.trace(a, r, &mut ts, |p, len| acc += len * x[p]);
                out[a * self.n_rays + r] = acc;
            }
        }
    }
    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut ts = Vec::with_capacity(2 * self.n + 2);
        for a in 0..self.angles_deg.len() {
            for r in 0..self.n_rays {
                let yi = y[a * self.n_rays + r];
                if yi == 0.0 {
                    continue;
                }
                self.trace(a, r, &mut ts, |p, len| out[p] += len * yi);
            }
        }
    }
}

/// Modified (Toft) Shepp-Logan ellipses:
/// intensity, semi-axis a, semi-axis b, center x, center y, rotation (degrees).
pub const SHEPP_LOGAN_ELLIPSES: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0],
];

/// `n × n` phantom sampled at pixel centers, row-major with row 0 at the top,
/// values clipped to `[0, 1]`.
pub fn shepp_logan(n: usize) -> Result<Vec<f64>> {
    if n < 8 {
        return Err(Error::InvalidArgument("phantom size must be at least 8"));
    }
    let h = 2.0 / n as f64;
    let mut img = vec![0.0; n * n];
    for r in 0..n {
        let y = 1.0 - (r as f64 + 0.5) * h;
        for c in 0..n {
            let x = -1.0 + (c as f64 + 0.5) * h;
            let mut v = 0.0;
            for e in &SHEPP_LOGAN_ELLIPSES {
                let phi = e[5].to_radians();
                let (cp, sp) = (libm::cos(phi), libm::sin(phi));
                let (px, py) = (x - e[3], y - e[4]);
                let xr = px * cp + py * sp;
                let yr = -px * sp + py * cp;
                if (xr / e[1]) * (xr / e[1]) + (yr / e[2]) * (yr / e[2]) <= 1.0 {
                    v += e[0];
                }
            }
            img[r * n + c] = v.clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Adds seeded Gaussian white noise rescaled so `‖ε‖ / ‖b_exact‖ = level`.
/// Returns the noisy data and `‖ε‖`.
pub fn add_noise(b_exact: &[f64], level: f64, seed: u64) -> Result<(Vec<f64>, f64)> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::InvalidArgument("noise level must be nonnegative"));
    }
    if level == 0.0 {
        return Ok((b_exact.to_vec(), 0.0));
    }
    let bnorm = norm2(b_exact);
    if bnorm == 0.0 {
        return Err(Error::ZeroRhs);
    }
    let mut e = vec![0.0; b_exact.len()];
    NormalStream::new(seed).fill(&mut e);
    let target = level * bnorm;
    let s = target / norm2(&e);
    let b = b_exact.iter().zip(&e).map(|(bi, ei)| bi + s * ei).collect();
    Ok((b, target))
}

/// Forward operator with a known true solution and noisy data.
pub struct NoisyProblem<O> {
    pub op: O,
    pub x_true: Vec<f64>,
    pub b_exact: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_level: f64,
    pub noise_norm: f64,
    pub seed: u64,
}

impl<O: LinearOp> NoisyProblem<O> {
    pub fn new(op: O, x_true: Vec<f64>, noise_level: f64, seed: u64) -> Result<Self> {
        let b_exact = op.apply(&x_true)?;
        let (b, noise_norm) = add_noise(&b_exact, noise_level, seed)?;
        Ok(Self {
            op,
            x_true,
            b_exact,
            b,
            noise_level,
            noise_norm,
            seed,
        })
    }

    pub fn relative_error(&self, x: &[f64]) -> f64 {
        let d = crate::linalg::sub(x, &self.x_true);
        norm2(&d) / norm2(&self.x_true)
    }
}

/// Smooth 1-D test signal on `n` samples: two Gaussian bumps and a plateau.
pub fn smooth_signal(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = (i as f64 + 0.5) / n as f64;
            let bump = |c: f64, w: f64| libm::exp(-((t - c) / w) * ((t - c) / w));
            let plateau = if (0.62..0.8).contains(&t) { 0.5 } else { 0.0 };
            bump(0.25, 0.06) + 0.7 * bump(0.45, 0.04) + plateau
        })
        .collect()
}

/// Smooth 2-D test image (`ny × nx`, row-major): a few Gaussian blobs and a
/// rectangle, standing in for a natural image.
pub fn smooth_image(nx: usize, ny: usize) -> Vec<f64> {
    let mut img = vec![0.0; nx * ny];
    for r in 0..ny {
        let y = (r as f64 + 0.5) / ny as f64;
        for c in 0..nx {
            let x = (c as f64 + 0.5) / nx as f64;
            let blob = |cx: f64, cy: f64, w: f64| {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                libm::exp(-d2 / (w * w))
            };
            let rect = if (0.6..0.85).contains(&x) && (0.15..0.4).contains(&y) {
                0.6
            } else {
                0.0
            };
            img[r * nx + c] = blob(0.3, 0.3, 0.12)
                + 0.8 * blob(0.65, 0.7, 0.08)
                + 0.5 * blob(0.3, 0.75, 0.05)
                + rect;
        }
    }
    img
}
