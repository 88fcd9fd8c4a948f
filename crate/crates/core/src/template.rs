//! Training templates: the quantized feature vectors and element offsets of
//! every layer around each selected key point, persisted in a checksummed
//! binary format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{
    extract_layer_raw, quantize_layer, FeatureVector, LayerResponses,
};
use crate::gabor::{GaborBank, BANDWIDTH_OCTAVES};
use crate::geom::Point;
use crate::raster::Image;
use crate::topology::{ElementAddress, StackConfig, ELEMENTS_PER_LAYER, RFS_PER_ELEMENT};

/// Version written by [`save_template`]; [`load_template`] accepts only this.
pub const FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 4] = b"HMTP";

/// One layer of a trained key point: 19 feature vectors and the relative
/// element positions `Y` (element center minus training location).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatures {
    pub vectors: Vec<FeatureVector>,
    pub offsets: Vec<Point>,
}

/// All layers trained around one key point.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPointTemplate {
    pub training_location: Point,
    /// Index 0 holds layer 1 (the smallest scale).
    pub layers: Vec<LayerFeatures>,
}

impl KeyPointTemplate {
    pub fn layer(&self, m: usize) -> &LayerFeatures {
        &self.layers[m - 1]
    }
}

/// A trained multi-point template.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub config: StackConfig,
    pub format_version: u32,
    pub source_image_id: String,
    pub key_points: Vec<KeyPointTemplate>,
}

/// Train a template around each given point.
///
/// Every layer of every point is extracted and quantized with the mask
/// centered on the point. A point must keep the center element of each layer
/// fully inside the image; the largest layer binds first, and a violation
/// reports the offending point and layer.
pub fn train(
    img: &Image,
    points: &[Point],
    cfg: &StackConfig,
    source_image_id: &str,
) -> Result<Template> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(Error::InvalidParam("training needs at least one point".into()));
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut key_points: Vec<KeyPointTemplate> = points
        .iter()
        .map(|&p| KeyPointTemplate {
            training_location: p,
            layers: Vec::with_capacity(cfg.num_layers),
        })
        .collect();

    for m in 1..=cfg.num_layers {
        let geometry = cfg.layer(m)?;
        let footprint = geometry.element_footprint_radius();
        for kp in &key_points {
            let p = kp.training_location;
            if p.x - footprint < 0.0
                || p.y - footprint < 0.0
                || p.x + footprint > w - 1.0
                || p.y + footprint > h - 1.0
            {
                return Err(Error::Coverage {
                    x: p.x,
                    y: p.y,
                    layer: m,
                });
            }
        }
        let bank = GaborBank::new(geometry.sigma, BANDWIDTH_OCTAVES, cfg.orientations);
        let responses = LayerResponses::compute(img, &bank)?;
        for kp in &mut key_points {
            let raw = extract_layer_raw(&responses, &geometry, kp.training_location)?;
            kp.layers.push(LayerFeatures {
                vectors: quantize_layer(&raw),
                offsets: geometry.element_offsets.to_vec(),
            });
        }
    }

    Ok(Template {
        config: cfg.clone(),
        format_version: FORMAT_VERSION,
        source_image_id: source_image_id.to_string(),
        key_points,
    })
}

/// Write the template in the binary `HMTP` format: magic, version,
/// little-endian integers, 64-bit reals, and a CRC32 after each section
/// (header, then one section per key point).
pub fn save_template(template: &Template, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_template(template);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Read a template written by [`save_template`]. Version mismatches and
/// corrupted sections are reported as such.
pub fn load_template(path: impl AsRef<Path>) -> Result<Template> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_template(&bytes)
}

fn encode_template(template: &Template) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&template.format_version.to_le_bytes());

    let mut header = Vec::new();
    header.extend_from_slice(&(template.config.num_layers as u32).to_le_bytes());
    header.extend_from_slice(&template.config.base_sigma.to_le_bytes());
    header.extend_from_slice(&(template.config.orientations as u32).to_le_bytes());
    header.extend_from_slice(&template.config.element_spacing_factor.to_le_bytes());
    let id = template.source_image_id.as_bytes();
    header.extend_from_slice(&(id.len() as u32).to_le_bytes());
    header.extend_from_slice(id);
    header.extend_from_slice(&(template.key_points.len() as u32).to_le_bytes());
    push_section(&mut out, &header);

    for kp in &template.key_points {
        let mut body = Vec::new();
        body.extend_from_slice(&kp.training_location.x.to_le_bytes());
        body.extend_from_slice(&kp.training_location.y.to_le_bytes());
        for layer in &kp.layers {
            for vector in &layer.vectors {
                body.extend_from_slice(vector.levels());
            }
            for offset in &layer.offsets {
                body.extend_from_slice(&offset.x.to_le_bytes());
                body.extend_from_slice(&offset.y.to_le_bytes());
            }
        }
        push_section(&mut out, &body);
    }
    out
}

fn push_section(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
}

fn decode_template(bytes: &[u8]) -> Result<Template> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Format("not a template file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }

    let header_start = r.pos;
    let num_layers = r.u32()? as usize;
    let base_sigma = r.f64()?;
    let orientations = r.u32()? as usize;
    let element_spacing_factor = r.f64()?;
    let id_len = r.u32()? as usize;
    let id_bytes = r.take(id_len)?.to_vec();
    let n_key_points = r.u32()? as usize;
    r.check_crc(header_start, "header")?;

    let config = StackConfig {
        num_layers,
        base_sigma,
        orientations,
        element_spacing_factor,
    };
    config.validate()?;
    let source_image_id = String::from_utf8(id_bytes)
        .map_err(|_| Error::Format("template image id is not UTF-8".into()))?;

    let vector_len = RFS_PER_ELEMENT * orientations;
    let mut key_points = Vec::with_capacity(n_key_points);
    for kp_index in 0..n_key_points {
        let start = r.pos;
        let training_location = Point::new(r.f64()?, r.f64()?);
        let mut layers = Vec::with_capacity(num_layers);
        for m in 1..=num_layers {
            let mut vectors = Vec::with_capacity(ELEMENTS_PER_LAYER);
            for l in 0..ELEMENTS_PER_LAYER {
                let levels = r.take(vector_len)?.to_vec();
                vectors.push(FeatureVector::from_levels(
                    ElementAddress {
                        layer: m,
                        element: l + 1,
                    },
                    orientations,
                    levels,
                ));
            }
            let mut offsets = Vec::with_capacity(ELEMENTS_PER_LAYER);
            for _ in 0..ELEMENTS_PER_LAYER {
                offsets.push(Point::new(r.f64()?, r.f64()?));
            }
            layers.push(LayerFeatures { vectors, offsets });
        }
        r.check_crc(start, &format!("key_point {kp_index}"))?;
        key_points.push(KeyPointTemplate {
            training_location,
            layers,
        });
    }
    if key_points.is_empty() {
        return Err(Error::Format("template holds no key points".into()));
    }

    Ok(Template {
        config,
        format_version: version,
        source_image_id,
        key_points,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("template file truncated".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("length checked")))
    }

    fn check_crc(&mut self, section_start: usize, section: &str) -> Result<()> {
        let payload = &self.bytes[section_start..self.pos];
        let expected = crc32fast::hash(payload);
        let stored = self.u32()?;
        if stored != expected {
            return Err(Error::Checksum {
                section: section.to_string(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::similarity;
    use crate::synth::textured_image;
    use crate::topology::SQRT_2;

    fn test_stack() -> StackConfig {
        StackConfig {
            num_layers: 3,
            base_sigma: 1.5,
            orientations: 4,
            element_spacing_factor: 0.6,
        }
    }

    fn trained() -> (Image, Template) {
        let img = textured_image(160, 160, 40, 0.2, 0.9);
        let cfg = test_stack();
        let points = vec![Point::new(80.0, 80.0), Point::new(65.5, 91.0)];
        let t = train(&img, &points, &cfg, "synthetic-40").unwrap();
        (img, t)
    }

    #[test]
    fn template_structure_and_self_similarity() {
        let (img, t) = trained();
        assert_eq!(t.key_points.len(), 2);
        let kp = &t.key_points[0];
        assert_eq!(kp.layers.len(), 3);
        for layer in &kp.layers {
            assert_eq!(layer.vectors.len(), ELEMENTS_PER_LAYER);
            assert_eq!(layer.offsets.len(), ELEMENTS_PER_LAYER);
        }
        assert_eq!(kp.training_location, Point::new(80.0, 80.0));
        // Center element offset is exactly zero.
        assert_eq!(kp.layer(1).offsets[0], Point::ORIGIN);
        // Offsets scale by sqrt(2) between layers.
        for m in 1..3 {
            for (a, b) in kp.layer(m).offsets.iter().zip(&kp.layer(m + 1).offsets) {
                assert!((*a * SQRT_2).distance(*b) < 1e-9);
            }
        }
        // Re-extracting at the training point reproduces the vectors.
        let cfg = &t.config;
        let g = cfg.layer(1).unwrap();
        let bank = GaborBank::new(g.sigma, BANDWIDTH_OCTAVES, cfg.orientations);
        let resp = LayerResponses::compute(&img, &bank).unwrap();
        let q = quantize_layer(&extract_layer_raw(&resp, &g, kp.training_location).unwrap());
        assert_eq!(similarity(&q[0], &kp.layer(1).vectors[0]).unwrap(), 1.0);
    }

    #[test]
    fn vector_count_scales_with_layers() {
        let img = textured_image(256, 256, 41, 0.2, 0.9);
        let cfg = StackConfig {
            num_layers: 6,
            base_sigma: 1.0,
            orientations: 2,
            element_spacing_factor: 0.5,
        };
        let t = train(&img, &[Point::new(128.0, 128.0)], &cfg, "synthetic").unwrap();
        let total: usize = t.key_points[0].layers.iter().map(|l| l.vectors.len()).sum();
        assert_eq!(total, 6 * 19);
    }

    #[test]
    fn training_point_near_border_names_point_and_layer() {
        let img = textured_image(160, 160, 42, 0.2, 0.9);
        let cfg = test_stack();
        // Inside for layer 1 but too close for layer 3.
        let bad = Point::new(20.0, 80.0);
        match train(&img, &[bad], &cfg, "synthetic") {
            Err(Error::Coverage { x, y, layer }) => {
                assert_eq!((x, y), (20.0, 80.0));
                assert!(layer > 1);
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (_, a) = trained();
        let (_, b) = trained();
        assert_eq!(a, b);
        assert_eq!(encode_template(&a), encode_template(&b));
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (_, t) = trained();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_template(&t, f.path()).unwrap();
        let back = load_template(f.path()).unwrap();
        assert_eq!(t, back);
        // Byte-stable on rewrite.
        let bytes = fs::read(f.path()).unwrap();
        save_template(&back, f.path()).unwrap();
        assert_eq!(bytes, fs::read(f.path()).unwrap());
    }

    #[test]
    fn flipped_payload_byte_is_checksum_error() {
        let (_, t) = trained();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_template(&t, f.path()).unwrap();
        let mut bytes = fs::read(f.path()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(
            load_template(f.path()),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn future_version_is_version_error() {
        let (_, t) = trained();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_template(&t, f.path()).unwrap();
        let mut bytes = fs::read(f.path()).unwrap();
        let bumped = (FORMAT_VERSION + 1).to_le_bytes();
        bytes[4..8].copy_from_slice(&bumped);
        fs::write(f.path(), &bytes).unwrap();
        match load_template(f.path()) {
            Err(Error::Version { expected, found }) => {
                assert_eq!(expected, FORMAT_VERSION);
                assert_eq!(found, FORMAT_VERSION + 1);
            }
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_format_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), b"NOPE....").unwrap();
        assert!(matches!(load_template(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn empty_point_list_is_rejected() {
        let img = textured_image(64, 64, 1, 0.2, 0.9);
        assert!(train(&img, &[], &test_stack(), "x").is_err());
    }
}
