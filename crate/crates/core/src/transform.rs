//! Benchmark image transformations with exact ground-truth coordinate maps.
//!
//! Photometric transforms (contrast, brightness, pixel noise) leave pixel
//! coordinates alone and carry an identity [`CoordMap`]. Geometric transforms
//! (rotate, scale, skew) resample by inverse-mapped bilinear interpolation
//! and report the exact forward affine map, so every source point has a known
//! true position in the transformed image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::raster::Image;

/// Gray value used for destination pixels that map outside the source frame.
/// Neutral under zero-DC Gabor filtering.
const OUT_OF_FRAME_FILL: f64 = 0.5;

/// One image transformation.
#[derive(Debug, Clone, PartialEq)]
pub enum TransformSpec {
    /// `v' = 0.5 + factor * (v - 0.5)`, clipped to `[0, 1]`.
    Contrast { factor: f64 },
    /// `v' = v + delta`, clipped to `[0, 1]`.
    Brightness { delta: f64 },
    /// Rotation about the image center, same canvas size.
    Rotate { degrees: f64 },
    /// Uniform rescale about the origin; the canvas is resized to match.
    Scale { factor: f64 },
    /// Horizontal shear `x' = x + y * tan(angle)` applied about the image
    /// center, same canvas size.
    Skew { degrees: f64 },
    /// Replaces `round(fraction * pixels)` distinct pixels, chosen by the
    /// seeded generator, with uniform `[0, 1)` samples.
    PixelNoise { fraction: f64, seed: u64 },
    /// Members applied in listed order; coordinate maps compose.
    Composite(Vec<TransformSpec>),
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            TransformSpec::Scale { factor } if *factor <= 0.0 => Err(Error::InvalidParam(
                format!("scale factor must be positive, got {factor}"),
            )),
            TransformSpec::PixelNoise { fraction, .. } if !(0.0..=1.0).contains(fraction) => Err(
                Error::InvalidParam(format!("noise fraction must be in [0,1], got {fraction}")),
            ),
            TransformSpec::Composite(members) => {
                if members.is_empty() {
                    return Err(Error::InvalidParam("empty composite transform".into()));
                }
                members.iter().try_for_each(TransformSpec::validate)
            }
            _ => Ok(()),
        }
    }

    /// The nine benchmark transformations, rows A through I.
    pub fn benchmark_rows(noise_seed: u64) -> Vec<TransformSpec> {
        use TransformSpec::*;
        vec![
            Contrast { factor: 1.2 },
            Brightness { delta: -0.2 },
            Rotate { degrees: 10.0 },
            Scale { factor: 0.7 },
            Scale { factor: 0.5 },
            PixelNoise {
                fraction: 0.1,
                seed: noise_seed,
            },
            Skew { degrees: 7.0 },
            Scale { factor: 1.5 },
            Composite(vec![
                Contrast { factor: 1.2 },
                Brightness { delta: -0.2 },
                Scale { factor: 0.7 },
                PixelNoise {
                    fraction: 0.1,
                    seed: noise_seed,
                },
                Skew { degrees: 7.0 },
            ]),
        ]
    }

    /// Parse a spec string such as `scale:0.7` or
    /// `contrast:1.2+brightness:-0.2`. `+` separates composite members.
    pub fn parse(text: &str, noise_seed: u64) -> Result<TransformSpec> {
        let parts: Vec<&str> = text.split('+').collect();
        if parts.len() > 1 {
            let members = parts
                .iter()
                .map(|p| Self::parse_single(p, noise_seed))
                .collect::<Result<Vec<_>>>()?;
            let spec = TransformSpec::Composite(members);
            spec.validate()?;
            return Ok(spec);
        }
        let spec = Self::parse_single(text, noise_seed)?;
        spec.validate()?;
        Ok(spec)
    }

    fn parse_single(text: &str, noise_seed: u64) -> Result<TransformSpec> {
        let (kind, value) = text
            .split_once(':')
            .ok_or_else(|| Error::InvalidParam(format!("transform `{text}`: expected kind:value")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParam(format!("transform `{text}`: bad number")))?;
        Ok(match kind.trim() {
            "contrast" => TransformSpec::Contrast { factor: value },
            "brightness" => TransformSpec::Brightness { delta: value },
            "rotate" => TransformSpec::Rotate { degrees: value },
            "scale" => TransformSpec::Scale { factor: value },
            "skew" => TransformSpec::Skew { degrees: value },
            "noise" => TransformSpec::PixelNoise {
                fraction: value,
                seed: noise_seed,
            },
            other => {
                return Err(Error::InvalidParam(format!(
                    "unknown transform kind `{other}`"
                )))
            }
        })
    }
}

impl std::fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransformSpec::Contrast { factor } => write!(f, "contrast:{factor}"),
            TransformSpec::Brightness { delta } => write!(f, "brightness:{delta}"),
            TransformSpec::Rotate { degrees } => write!(f, "rotate:{degrees}"),
            TransformSpec::Scale { factor } => write!(f, "scale:{factor}"),
            TransformSpec::Skew { degrees } => write!(f, "skew:{degrees}"),
            TransformSpec::PixelNoise { fraction, .. } => write!(f, "noise:{fraction}"),
            TransformSpec::Composite(members) => {
                let parts: Vec<String> = members.iter().map(|m| m.to_string()).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

/// Forward affine map from source pixel coordinates to transformed-image
/// coordinates: `p' = [a b; c d] p + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordMap {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub tx: f64,
    pub ty: f64,
}

impl CoordMap {
    pub const IDENTITY: CoordMap = CoordMap {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    fn linear(a: f64, b: f64, c: f64, d: f64) -> CoordMap {
        CoordMap {
            a,
            b,
            c,
            d,
            tx: 0.0,
            ty: 0.0,
        }
    }

    /// Linear part about a fixed point: `p' = A (p - center) + center`.
    fn about(a: f64, b: f64, c: f64, d: f64, center: Point) -> CoordMap {
        let mut m = CoordMap::linear(a, b, c, d);
        let mc = m.map(center);
        m.tx = center.x - mc.x;
        m.ty = center.y - mc.y;
        m
    }

    #[inline]
    pub fn map(&self, p: Point) -> Point {
        Point::new(
            self.a * p.x + self.b * p.y + self.tx,
            self.c * p.x + self.d * p.y + self.ty,
        )
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn inverse(&self) -> CoordMap {
        let det = self.det();
        assert!(det != 0.0, "coordinate map is singular");
        let (ia, ib, ic, id) = (self.d / det, -self.b / det, -self.c / det, self.a / det);
        CoordMap {
            a: ia,
            b: ib,
            c: ic,
            d: id,
            tx: -(ia * self.tx + ib * self.ty),
            ty: -(ic * self.tx + id * self.ty),
        }
    }

    /// Composition: apply `self` first, then `next`.
    pub fn then(&self, next: &CoordMap) -> CoordMap {
        let t = next.map(Point::new(self.tx, self.ty));
        CoordMap {
            a: next.a * self.a + next.b * self.c,
            b: next.a * self.b + next.b * self.d,
            c: next.c * self.a + next.d * self.c,
            d: next.c * self.b + next.d * self.d,
            tx: t.x,
            ty: t.y,
        }
    }

    /// Six-number CSV row `a,b,c,d,tx,ty`.
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.a, self.b, self.c, self.d, self.tx, self.ty
        )
    }
}

/// Map a source point to its true position in the transformed image.
pub fn map_point(cm: &CoordMap, p: Point) -> Point {
    cm.map(p)
}

fn image_center(img: &Image) -> Point {
    Point::new(
        (img.width() as f64 - 1.0) / 2.0,
        (img.height() as f64 - 1.0) / 2.0,
    )
}

/// Apply a transformation, returning the transformed image together with the
/// exact forward coordinate map.
pub fn apply_transform(img: &Image, spec: &TransformSpec) -> Result<(Image, CoordMap)> {
    spec.validate()?;
    Ok(match spec {
        TransformSpec::Contrast { factor } => {
            let f = *factor;
            (
                img.map_clipped(|v| 0.5 + f * (v - 0.5)),
                CoordMap::IDENTITY,
            )
        }
        TransformSpec::Brightness { delta } => {
            let d = *delta;
            (img.map_clipped(|v| v + d), CoordMap::IDENTITY)
        }
        TransformSpec::PixelNoise { fraction, seed } => {
            (apply_pixel_noise(img, *fraction, *seed), CoordMap::IDENTITY)
        }
        TransformSpec::Rotate { degrees } => {
            let r = degrees.to_radians();
            let (cos, sin) = (r.cos(), r.sin());
            let fwd = CoordMap::about(cos, -sin, sin, cos, image_center(img));
            (resample(img, &fwd, img.width(), img.height()), fwd)
        }
        TransformSpec::Skew { degrees } => {
            let shear = degrees.to_radians().tan();
            let fwd = CoordMap::about(1.0, shear, 0.0, 1.0, image_center(img));
            (resample(img, &fwd, img.width(), img.height()), fwd)
        }
        TransformSpec::Scale { factor } => {
            let f = *factor;
            let fwd = CoordMap::linear(f, 0.0, 0.0, f);
            let w = ((img.width() as f64 * f).round() as usize).max(1);
            let h = ((img.height() as f64 * f).round() as usize).max(1);
            (resample(img, &fwd, w, h), fwd)
        }
        TransformSpec::Composite(members) => {
            let mut current = img.clone();
            let mut total = CoordMap::IDENTITY;
            for member in members {
                let (next, cm) = apply_transform(&current, member)?;
                current = next;
                total = total.then(&cm);
            }
            (current, total)
        }
    })
}

fn resample(img: &Image, forward: &CoordMap, out_w: usize, out_h: usize) -> Image {
    let inv = forward.inverse();
    let mut out = Image::new(out_w, out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let src = inv.map(Point::new(x as f64, y as f64));
            out.set(x, y, img.sample_bilinear(src.x, src.y, OUT_OF_FRAME_FILL));
        }
    }
    out
}

fn apply_pixel_noise(img: &Image, fraction: f64, seed: u64) -> Image {
    let mut out = img.clone();
    let n = out.data().len();
    if n == 0 {
        return out;
    }
    let count = ((fraction * n as f64).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample of
    // distinct pixel indices.
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let data = out.data_mut();
    for &idx in &indices[..count] {
        data[idx] = rng.gen::<f64>();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> Image {
        let data = (0..w * h)
            .map(|i| 0.2 + 0.6 * (i as f64 / (w * h - 1) as f64))
            .collect();
        Image::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn brightness_shifts_and_keeps_identity_map() {
        let img = Image::filled(3, 3, 0.5);
        let (out, cm) = apply_transform(
            &img,
            &TransformSpec::Brightness { delta: -0.2 },
        )
        .unwrap();
        assert!((out.get(1, 1) - 0.3).abs() < 1e-15);
        assert_eq!(cm, CoordMap::IDENTITY);
    }

    #[test]
    fn contrast_pivots_on_midgray_and_clips() {
        let img = Image::from_vec(2, 1, vec![0.75, 0.99]).unwrap();
        let (out, cm) = apply_transform(&img, &TransformSpec::Contrast { factor: 1.2 }).unwrap();
        assert!((out.get(0, 0) - 0.8).abs() < 1e-12);
        assert!((out.get(1, 0) - 1.0).abs() < 1e-12); // 1.088 clipped
        assert_eq!(cm, CoordMap::IDENTITY);
    }

    #[test]
    fn scale_maps_points_linearly() {
        let img = gradient_image(200, 200);
        let (_, cm) = apply_transform(&img, &TransformSpec::Scale { factor: 0.5 }).unwrap();
        let p = map_point(&cm, Point::new(100.0, 100.0));
        assert_eq!((p.x, p.y), (50.0, 50.0));
        let (_, cm7) = apply_transform(&img, &TransformSpec::Scale { factor: 0.7 }).unwrap();
        let q = map_point(&cm7, Point::new(100.0, 0.0));
        assert!((q.x - 70.0).abs() < 1e-12 && q.y.abs() < 1e-12);
    }

    #[test]
    fn identity_map_on_named_point() {
        let p = Point::new(197.0, 259.0);
        assert_eq!(map_point(&CoordMap::IDENTITY, p), p);
    }

    #[test]
    fn rotate_matches_independent_rotation_matrix() {
        let img = gradient_image(101, 81);
        let (_, cm) = apply_transform(&img, &TransformSpec::Rotate { degrees: 10.0 }).unwrap();
        let center = Point::new(50.0, 40.0);
        let p = Point::new(72.0, 13.0);
        // Independent evaluation of the 2x2 rotation matrix about the center.
        let r = 10.0_f64.to_radians();
        let dx = p.x - center.x;
        let dy = p.y - center.y;
        let expected = Point::new(
            center.x + r.cos() * dx - r.sin() * dy,
            center.y + r.sin() * dx + r.cos() * dy,
        );
        let got = map_point(&cm, p);
        assert!(got.distance(expected) < 1e-9, "{got} vs {expected}");
        // The center is a fixed point.
        assert!(map_point(&cm, center).distance(center) < 1e-12);
    }

    #[test]
    fn skew_is_horizontal_shear_about_center() {
        let img = gradient_image(100, 100);
        let (_, cm) = apply_transform(&img, &TransformSpec::Skew { degrees: 7.0 }).unwrap();
        let center = image_center(&img);
        let p = Point::new(30.0, 80.0);
        let expected = Point::new(
            p.x + (p.y - center.y) * 7.0_f64.to_radians().tan(),
            p.y,
        );
        assert!(map_point(&cm, p).distance(expected) < 1e-12);
    }

    #[test]
    fn composite_of_inverse_scales_is_identity_map() {
        let img = gradient_image(64, 64);
        let spec = TransformSpec::Composite(vec![
            TransformSpec::Scale { factor: 0.5 },
            TransformSpec::Scale { factor: 2.0 },
        ]);
        let (_, cm) = apply_transform(&img, &spec).unwrap();
        for &(x, y) in &[(0.0, 0.0), (13.5, 20.25), (63.0, 1.0)] {
            let p = Point::new(x, y);
            assert!(map_point(&cm, p).distance(p) < 1e-9);
        }
    }

    #[test]
    fn forward_then_inverse_is_identity_for_all_rows() {
        let img = gradient_image(80, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for spec in TransformSpec::benchmark_rows(3) {
            let (_, cm) = apply_transform(&img, &spec).unwrap();
            let inv = cm.inverse();
            for _ in 0..100 {
                let p = Point::new(rng.gen::<f64>() * 80.0, rng.gen::<f64>() * 60.0);
                let back = inv.map(cm.map(p));
                assert!(back.distance(p) < 1e-9, "{spec}: {p} -> {back}");
            }
        }
    }

    #[test]
    fn unit_scale_is_bit_identical() {
        let img = gradient_image(33, 47);
        let (out, cm) = apply_transform(&img, &TransformSpec::Scale { factor: 1.0 }).unwrap();
        assert_eq!(img, out);
        assert_eq!(cm, CoordMap::IDENTITY);
    }

    #[test]
    fn pixel_noise_is_seeded_and_replaces_exact_fraction() {
        let img = Image::filled(40, 25, 0.5);
        let spec = TransformSpec::PixelNoise {
            fraction: 0.1,
            seed: 42,
        };
        let (a, cm) = apply_transform(&img, &spec).unwrap();
        let (b, _) = apply_transform(&img, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(cm, CoordMap::IDENTITY);
        let changed = a
            .data()
            .iter()
            .zip(img.data())
            .filter(|(x, y)| x != y)
            .count();
        assert_eq!(changed, 100); // round(0.1 * 1000)
        let (c, _) = apply_transform(
            &img,
            &TransformSpec::PixelNoise {
                fraction: 0.1,
                seed: 43,
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(TransformSpec::Scale { factor: 0.0 }.validate().is_err());
        assert!(TransformSpec::PixelNoise {
            fraction: 1.5,
            seed: 0
        }
        .validate()
        .is_err());
        assert!(TransformSpec::Composite(vec![]).validate().is_err());
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in [
            "contrast:1.2",
            "brightness:-0.2",
            "rotate:10",
            "scale:0.7",
            "noise:0.1",
            "skew:7",
            "contrast:1.2+brightness:-0.2+scale:0.7+noise:0.1+skew:7",
        ] {
            let spec = TransformSpec::parse(text, 0).unwrap();
            assert_eq!(spec.to_string(), text);
        }
        assert!(TransformSpec::parse("warp:1", 0).is_err());
        assert!(TransformSpec::parse("scale", 0).is_err());
    }

    #[test]
    fn coordmap_csv_row() {
        assert_eq!(CoordMap::IDENTITY.to_csv_row(), "1,0,0,1,0,0");
    }
}
