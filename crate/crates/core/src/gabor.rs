//! Oriented odd-phase Gabor kernels, whole-image convolution, and
//! receptive-field max pooling.
//!
//! Kernels pair a 2:1 anisotropic Gaussian envelope (standard deviation
//! `sigma` along the wave direction, `2 sigma` across it) with a zero-phase
//! sine carrier, so every kernel has zero DC response and image brightness
//! offsets vanish under convolution. The carrier frequency is tied to the
//! envelope through the octave bandwidth.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::Image;

/// Octave bandwidth shared by every kernel in the stack.
pub const BANDWIDTH_OCTAVES: f64 = 1.5;

/// Carrier frequency (cycles/pixel) for an envelope scale `sigma` and octave
/// bandwidth `phi`:
///
/// `f0 = 2 sqrt(ln 2) * (2^phi + 1) / (2^phi - 1) / (2 pi sigma)`
pub fn f0_from_bandwidth(sigma: f64, phi: f64) -> f64 {
    assert!(sigma > 0.0 && phi > 0.0);
    let pow = 2f64.powf(phi);
    2.0 * (2f64.ln()).sqrt() * (pow + 1.0) / (pow - 1.0) / (2.0 * std::f64::consts::PI * sigma)
}

/// One oriented odd-phase Gabor kernel sampled on an integer grid.
#[derive(Debug, Clone)]
pub struct GaborKernel {
    pub sigma: f64,
    pub theta: f64,
    pub f0: f64,
    pub half_width: usize,
    /// `(2*half_width+1)^2` weights, row-major, centered.
    weights: Vec<f64>,
}

impl GaborKernel {
    pub fn side(&self) -> usize {
        2 * self.half_width + 1
    }

    /// Weight at integer offset `(x, y)` from the kernel center.
    #[inline]
    pub fn weight(&self, x: i64, y: i64) -> f64 {
        let h = self.half_width as i64;
        debug_assert!(x.abs() <= h && y.abs() <= h);
        self.weights[((y + h) * (2 * h + 1) + (x + h)) as usize]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// CSV grid of the sampled weights, one row per kernel row.
    pub fn to_csv(&self) -> String {
        let side = self.side();
        let mut out = String::new();
        for row in self.weights.chunks(side) {
            let cells: Vec<String> = row.iter().map(|w| w.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Sample the kernel at integer offsets over `half_width = ceil(6 sigma)`,
/// covering three standard deviations of the wider envelope axis.
pub fn make_kernel(sigma: f64, theta: f64, phi: f64) -> GaborKernel {
    assert!(sigma > 0.0);
    let f0 = f0_from_bandwidth(sigma, phi);
    let half_width = (6.0 * sigma).ceil() as usize;
    let side = 2 * half_width + 1;
    let amplitude = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    let (cos_t, sin_t) = (theta.cos(), theta.sin());
    let h = half_width as i64;
    let mut weights = Vec::with_capacity(side * side);
    for y in -h..=h {
        for x in -h..=h {
            let u = x as f64 * cos_t + y as f64 * sin_t;
            let v = y as f64 * cos_t - x as f64 * sin_t;
            let envelope = (-(4.0 * u * u + v * v) / (8.0 * sigma * sigma)).exp();
            let carrier = (2.0 * std::f64::consts::PI * f0 * u).sin();
            weights.push(amplitude * envelope * carrier);
        }
    }
    GaborKernel {
        sigma,
        theta,
        f0,
        half_width,
        weights,
    }
}

/// The oriented kernels for one scale.
#[derive(Debug, Clone)]
pub struct GaborBank {
    pub sigma: f64,
    pub bandwidth_phi: f64,
    pub orientations: Vec<f64>,
    pub kernels: Vec<GaborKernel>,
}

impl GaborBank {
    /// Evenly spaced orientations `k * pi / n` for `k = 0..n`.
    pub fn new(sigma: f64, phi: f64, n_orientations: usize) -> GaborBank {
        assert!(n_orientations >= 1);
        let orientations: Vec<f64> = (0..n_orientations)
            .map(|k| k as f64 * std::f64::consts::PI / n_orientations as f64)
            .collect();
        let kernels = orientations
            .iter()
            .map(|&theta| make_kernel(sigma, theta, phi))
            .collect();
        GaborBank {
            sigma,
            bandwidth_phi: phi,
            orientations,
            kernels,
        }
    }
}

/// Signed convolution output, same dimensions as the source image.
#[derive(Debug, Clone)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ResponseMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Signed correlation of the image with the kernel at every pixel, with
/// reflected-border padding.
///
/// Internally runs through zero-padded FFTs; the direct O(n k^2) sum is the
/// reference the tests compare against.
pub fn convolve(img: &Image, kernel: &GaborKernel) -> Result<ResponseMap> {
    let (w, h) = (img.width(), img.height());
    let side = kernel.side();
    if side > w || side > h {
        return Err(Error::KernelTooLarge {
            kernel: side,
            width: w,
            height: h,
        });
    }
    let half = kernel.half_width;
    let (pad_w, pad_h) = (w + 2 * half, h + 2 * half);
    let fft_w = next_fast_size(pad_w + side - 1);
    let fft_h = next_fast_size(pad_h + side - 1);

    let mut planner = FftPlanner::new();
    // Reflected-border padded image.
    let mut img_buf = vec![Complex::new(0.0, 0.0); fft_w * fft_h];
    for py in 0..pad_h {
        let sy = reflect_101(py as i64 - half as i64, h);
        let row = &mut img_buf[py * fft_w..py * fft_w + pad_w];
        for (px, slot) in row.iter_mut().enumerate() {
            let sx = reflect_101(px as i64 - half as i64, w);
            slot.re = img.get(sx, sy);
        }
    }
    // Reversed kernel, so the circular convolution realizes correlation.
    let mut ker_buf = vec![Complex::new(0.0, 0.0); fft_w * fft_h];
    let kw = kernel.weights();
    for y in 0..side {
        for x in 0..side {
            ker_buf[y * fft_w + x].re = kw[(side - 1 - y) * side + (side - 1 - x)];
        }
    }

    fft_2d(&mut img_buf, fft_w, fft_h, &mut planner, false);
    fft_2d(&mut ker_buf, fft_w, fft_h, &mut planner, false);
    for (a, b) in img_buf.iter_mut().zip(&ker_buf) {
        *a *= b;
    }
    fft_2d(&mut img_buf, fft_w, fft_h, &mut planner, true);

    let scale = 1.0 / (fft_w * fft_h) as f64;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = (y + side - 1) * fft_w + side - 1;
        data.extend(img_buf[row..row + w].iter().map(|c| c.re * scale));
    }
    Ok(ResponseMap {
        width: w,
        height: h,
        data,
    })
}

/// Convolve the image with every kernel of the bank, one map per orientation.
pub fn convolve_bank(img: &Image, bank: &GaborBank) -> Result<Vec<ResponseMap>> {
    bank.kernels.par_iter().map(|k| convolve(img, k)).collect()
}

/// Maximum signed response over pixels within `radius` of `center`.
/// Pixels outside the image are ignored; an empty pool yields 0.
pub fn pool_rf(rm: &ResponseMap, center: Point, radius: f64) -> f64 {
    pool_rf_checked(rm, center, radius).unwrap_or(0.0)
}

/// As [`pool_rf`], but `None` when no pixel falls inside the field.
pub fn pool_rf_checked(rm: &ResponseMap, center: Point, radius: f64) -> Option<f64> {
    debug_assert!(radius > 0.0);
    let x_lo = ((center.x - radius).ceil().max(0.0)) as i64;
    let x_hi = ((center.x + radius).floor()).min(rm.width as f64 - 1.0) as i64;
    let y_lo = ((center.y - radius).ceil().max(0.0)) as i64;
    let y_hi = ((center.y + radius).floor()).min(rm.height as f64 - 1.0) as i64;
    let r2 = radius * radius;
    let mut best: Option<f64> = None;
    for y in y_lo..=y_hi {
        let dy = y as f64 - center.y;
        let row = y as usize * rm.width;
        for x in x_lo..=x_hi {
            let dx = x as f64 - center.x;
            if dx * dx + dy * dy <= r2 {
                let v = rm.data[row + x as usize];
                best = Some(match best {
                    Some(b) if b >= v => b,
                    _ => v,
                });
            }
        }
    }
    best
}

/// Whether a disc of the given radius around `center` contains at least one
/// pixel center of a `width` x `height` image.
pub(crate) fn disc_contains_pixel(width: usize, height: usize, center: Point, radius: f64) -> bool {
    if width == 0 || height == 0 {
        return false;
    }
    let nearest = |c: f64, n: usize| -> f64 { c.round().clamp(0.0, n as f64 - 1.0) };
    let dx = center.x - nearest(center.x, width);
    let dy = center.y - nearest(center.y, height);
    dx * dx + dy * dy <= radius * radius
}

/// Mirror an index into `[0, n)` without repeating the edge sample.
fn reflect_101(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Smallest size >= `n` whose prime factors are all in {2, 3, 5}, keeping the
/// FFT on fast mixed-radix paths.
fn next_fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 {
            return m;
        }
        m += 1;
    }
}

fn fft_2d(
    data: &mut [Complex<f64>],
    width: usize,
    height: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(width)
    } else {
        planner.plan_fft_forward(width)
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(height)
    } else {
        planner.plan_fft_forward(height)
    };
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = data[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            data[y * width + x] = col[y];
        }
    }
}
