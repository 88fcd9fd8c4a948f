//! Seeded synthetic test imagery: multi-octave value noise overlaid with
//! soft discs and bars, giving texture at every scale the stack responds to.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geom::Point;
use crate::raster::Image;

/// Deterministic textured image with pixel values spanning `[lo, hi]`.
pub fn textured_image(width: usize, height: usize, seed: u64, lo: f64, hi: f64) -> Image {
    assert!(width > 0 && height > 0 && lo < hi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![0.0f64; width * height];

    // Fractal value noise with a flat-ish spectrum so every layer of the
    // stack sees structure.
    let mut amplitude = 1.0;
    for cell in [64usize, 32, 16, 8, 4] {
        add_value_noise(&mut field, width, height, cell, amplitude, &mut rng);
        amplitude *= 0.75;
    }

    // Soft discs.
    let area_units = ((width * height) as f64 / (256.0 * 256.0)).max(0.25);
    let n_discs = (28.0 * area_units) as usize;
    for _ in 0..n_discs {
        let cx = rng.gen::<f64>() * width as f64;
        let cy = rng.gen::<f64>() * height as f64;
        let r = rng.gen_range(5.0..36.0);
        let amp = rng.gen_range(0.35..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        stamp_disc(&mut field, width, height, cx, cy, r, amp);
    }

    // Soft oriented bars, widths down to the finest kernel scale.
    let n_bars = (30.0 * area_units) as usize;
    for _ in 0..n_bars {
        let cx = rng.gen::<f64>() * width as f64;
        let cy = rng.gen::<f64>() * height as f64;
        let angle = rng.gen::<f64>() * std::f64::consts::PI;
        let half_len = rng.gen_range(12.0..55.0);
        let half_w = rng.gen_range(1.2..4.5);
        let amp = rng.gen_range(0.4..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        stamp_bar(&mut field, width, height, cx, cy, angle, half_len, half_w, amp);
    }

    // Affine-normalize into [lo, hi].
    let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if max > min { (hi - lo) / (max - min) } else { 0.0 };
    let data = field.iter().map(|&v| lo + (v - min) * scale).collect();
    Image::from_vec(width, height, data).expect("length by construction")
}

fn add_value_noise(
    field: &mut [f64],
    width: usize,
    height: usize,
    cell: usize,
    amplitude: f64,
    rng: &mut ChaCha8Rng,
) {
    let gw = width / cell + 2;
    let gh = height / cell + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    for y in 0..height {
        let gy = y as f64 / cell as f64;
        let y0 = gy as usize;
        let fy = smooth(gy - y0 as f64);
        for x in 0..width {
            let gx = x as f64 / cell as f64;
            let x0 = gx as usize;
            let fx = smooth(gx - x0 as f64);
            let v00 = lattice[y0 * gw + x0];
            let v10 = lattice[y0 * gw + x0 + 1];
            let v01 = lattice[(y0 + 1) * gw + x0];
            let v11 = lattice[(y0 + 1) * gw + x0 + 1];
            let v = v00 * (1.0 - fx) * (1.0 - fy)
                + v10 * fx * (1.0 - fy)
                + v01 * (1.0 - fx) * fy
                + v11 * fx * fy;
            field[y * width + x] += amplitude * v;
        }
    }
}

fn stamp_disc(field: &mut [f64], width: usize, height: usize, cx: f64, cy: f64, r: f64, amp: f64) {
    let x_lo = ((cx - r).floor().max(0.0)) as usize;
    let x_hi = ((cx + r).ceil().min(width as f64 - 1.0)) as usize;
    let y_lo = ((cy - r).floor().max(0.0)) as usize;
    let y_hi = ((cy + r).ceil().min(height as f64 - 1.0)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let d2 = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / (r * r);
            if d2 < 1.0 {
                let falloff = (1.0 - d2) * (1.0 - d2);
                field[y * width + x] += amp * falloff;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn stamp_bar(
    field: &mut [f64],
    width: usize,
    height: usize,
    cx: f64,
    cy: f64,
    angle: f64,
    half_len: f64,
    half_w: f64,
    amp: f64,
) {
    let (cos_a, sin_a) = (angle.cos(), angle.sin());
    let reach = half_len + half_w;
    let x_lo = ((cx - reach).floor().max(0.0)) as usize;
    let x_hi = ((cx + reach).ceil().min(width as f64 - 1.0)) as usize;
    let y_lo = ((cy - reach).floor().max(0.0)) as usize;
    let y_hi = ((cy + reach).ceil().min(height as f64 - 1.0)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let along = (dx * cos_a + dy * sin_a) / half_len;
            let across = (dy * cos_a - dx * sin_a) / half_w;
            if along.abs() < 1.0 && across.abs() < 1.0 {
                let profile = (1.0 - along * along) * (1.0 - across * across);
                field[y * width + x] += amp * profile;
            }
        }
    }
}

/// Uniform random points with at least `margin` pixels of clearance from
/// every border.
pub fn sample_points(width: usize, height: usize, margin: f64, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x_span = (width as f64 - 1.0) - 2.0 * margin;
    let y_span = (height as f64 - 1.0) - 2.0 * margin;
    assert!(
        x_span > 0.0 && y_span > 0.0,
        "margin {margin} leaves no interior in {width}x{height}"
    );
    (0..count)
        .map(|_| {
            Point::new(
                margin + rng.gen::<f64>() * x_span,
                margin + rng.gen::<f64>() * y_span,
            )
        })
        .collect()
}

/// Copy the square patch of half-side `half` centered at `src` over the
/// location `dst` (integer-aligned, clipped at borders). Used to build
/// images containing the same pattern at two places.
pub fn stamp_patch(img: &mut Image, src: Point, half: usize, dst: Point) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (sx, sy) = (src.x.round() as i64, src.y.round() as i64);
    let (dx, dy) = (dst.x.round() as i64, dst.y.round() as i64);
    let half = half as i64;
    let mut patch = Vec::with_capacity(((2 * half + 1) * (2 * half + 1)) as usize);
    for oy in -half..=half {
        for ox in -half..=half {
            let (x, y) = (sx + ox, sy + oy);
            let v = if x >= 0 && y >= 0 && x < w && y < h {
                Some(img.get(x as usize, y as usize))
            } else {
                None
            };
            patch.push(v);
        }
    }
    let side = 2 * half + 1;
    for oy in -half..=half {
        for ox in -half..=half {
            let (x, y) = (dx + ox, dy + oy);
            if x >= 0 && y >= 0 && x < w && y < h {
                if let Some(v) = patch[((oy + half) * side + (ox + half)) as usize] {
                    img.set(x as usize, y as usize, v);
                }
            }
        }
    }
}
