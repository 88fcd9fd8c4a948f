//! Per-element raw responses, layer-normalized quantized feature vectors,
//! and the exponential similarity between them.
//!
//! Raw responses are pooled Gabor maxima, one per receptive field per
//! orientation. Quantization rescales each orientation column over all
//! 19x19 responses of a layer to the integer range 0..=16, which cancels
//! positive affine intensity changes of the source image and makes vectors
//! comparable across layers and scales.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gabor::{convolve, disc_contains_pixel, pool_rf_checked, GaborBank, ResponseMap};
use crate::geom::Point;
use crate::raster::Image;
use crate::topology::{
    absolute_rf_centers, ElementAddress, LayerGeometry, ELEMENTS_PER_LAYER, RFS_PER_ELEMENT,
};

/// Quantization levels run 0..=16: ceil of 16 times the normalized response.
pub const QUANT_LEVELS: u8 = 16;

/// Threshold below which a layer's response range counts as degenerate
/// (featureless); the whole orientation column quantizes to zero.
pub const DEGENERATE_RANGE: f64 = 1e-12;

/// The oriented convolution maps of one layer over a whole image.
#[derive(Debug)]
pub struct LayerResponses {
    pub sigma: f64,
    maps: Vec<ResponseMap>,
}

impl LayerResponses {
    /// Convolve the image with every kernel of the bank (orientations run in
    /// parallel).
    pub fn compute(img: &Image, bank: &GaborBank) -> Result<LayerResponses> {
        let maps = bank
            .kernels
            .par_iter()
            .map(|k| convolve(img, k))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerResponses {
            sigma: bank.sigma,
            maps,
        })
    }

    pub fn orientations(&self) -> usize {
        self.maps.len()
    }

    pub fn map(&self, orientation: usize) -> &ResponseMap {
        &self.maps[orientation]
    }

    pub fn width(&self) -> usize {
        self.maps[0].width()
    }

    pub fn height(&self) -> usize {
        self.maps[0].height()
    }
}

/// Pooled raw responses of one element: 19 RFs x O orientations, row-major
/// by RF.
#[derive(Debug, Clone, PartialEq)]
pub struct RawElementResponse {
    pub address: ElementAddress,
    pub orientations: usize,
    values: Vec<f64>,
}

impl RawElementResponse {
    #[inline]
    pub fn value(&self, rf: usize, orientation: usize) -> f64 {
        self.values[rf * self.orientations + orientation]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Quantized feature vector of one element: 19 RFs x O orientations of
/// integer levels in 0..=16.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureVector {
    pub address: ElementAddress,
    pub orientations: usize,
    levels: Vec<u8>,
}

impl FeatureVector {
    pub fn from_levels(address: ElementAddress, orientations: usize, levels: Vec<u8>) -> Self {
        debug_assert_eq!(levels.len(), RFS_PER_ELEMENT * orientations);
        FeatureVector {
            address,
            orientations,
            levels,
        }
    }

    #[inline]
    pub fn level(&self, rf: usize, orientation: usize) -> u8 {
        self.levels[rf * self.orientations + orientation]
    }

    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    pub fn rf_count(&self) -> usize {
        self.levels.len() / self.orientations.max(1)
    }

    /// True when every level is zero (featureless extraction).
    pub fn is_zero(&self) -> bool {
        self.levels.iter().all(|&q| q == 0)
    }
}

/// Pool the layer's response maps over every receptive field of every
/// element of a mask placed at `mask_center`.
///
/// Receptive fields falling partly outside the image pool over what is
/// inside; fields entirely outside contribute 0. Fails only when no field of
/// the whole mask covers any pixel.
pub fn extract_layer_raw(
    responses: &LayerResponses,
    geometry: &LayerGeometry,
    mask_center: Point,
) -> Result<Vec<RawElementResponse>> {
    assert!(
        (responses.sigma - geometry.sigma).abs() < 1e-9,
        "response maps at sigma {} do not match layer sigma {}",
        responses.sigma,
        geometry.sigma
    );
    let orientations = responses.orientations();
    let (w, h) = (responses.width(), responses.height());
    let mut any_covered = false;
    let mut out = Vec::with_capacity(ELEMENTS_PER_LAYER);
    for l in 0..ELEMENTS_PER_LAYER {
        let centers = absolute_rf_centers(geometry, mask_center, l);
        let mut values = vec![0.0; RFS_PER_ELEMENT * orientations];
        for (j, &center) in centers.iter().enumerate() {
            if !disc_contains_pixel(w, h, center, geometry.rf_radius) {
                continue;
            }
            any_covered = true;
            for o in 0..orientations {
                values[j * orientations + o] =
                    pool_rf_checked(responses.map(o), center, geometry.rf_radius)
                        .expect("disc checked non-empty");
            }
        }
        out.push(RawElementResponse {
            address: ElementAddress {
                layer: geometry.layer_index,
                element: l + 1,
            },
            orientations,
            values,
        });
    }
    if !any_covered {
        return Err(Error::Coverage {
            x: mask_center.x,
            y: mask_center.y,
            layer: geometry.layer_index,
        });
    }
    Ok(out)
}

/// Quantize a layer's 19 raw element responses.
///
/// Each orientation column is normalized by the min and max taken over all
/// 19x19 raw values of the layer, then mapped through
/// `ceil(16 * (v - min) / (max - min))`. A column with no spread quantizes
/// to all zeros.
pub fn quantize_layer(raw: &[RawElementResponse]) -> Vec<FeatureVector> {
    assert_eq!(raw.len(), ELEMENTS_PER_LAYER);
    let orientations = raw[0].orientations;
    debug_assert!(raw.iter().all(|r| r.orientations == orientations));
    debug_assert!(raw
        .iter()
        .all(|r| r.address.layer == raw[0].address.layer));

    let mut out = Vec::with_capacity(ELEMENTS_PER_LAYER);
    let mut column_range = Vec::with_capacity(orientations);
    for o in 0..orientations {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for r in raw {
            for j in 0..RFS_PER_ELEMENT {
                let v = r.value(j, o);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        column_range.push((lo, hi - lo));
    }
    for r in raw {
        let mut levels = Vec::with_capacity(RFS_PER_ELEMENT * orientations);
        for j in 0..RFS_PER_ELEMENT {
            for (o, &(lo, range)) in column_range.iter().enumerate() {
                let q = if range < DEGENERATE_RANGE {
                    0.0
                } else {
                    (f64::from(QUANT_LEVELS) * (r.value(j, o) - lo) / range).ceil()
                };
                levels.push(q as u8);
            }
        }
        out.push(FeatureVector {
            address: r.address,
            orientations,
            levels,
        });
    }
    out
}

/// Sum of absolute level differences between two feature vectors.
pub fn level_distance(a: &FeatureVector, b: &FeatureVector) -> Result<u32> {
    if a.levels.len() != b.levels.len() || a.orientations != b.orientations {
        return Err(Error::Shape {
            a_rfs: a.rf_count(),
            a_orients: a.orientations,
            b_rfs: b.rf_count(),
            b_orients: b.orientations,
        });
    }
    Ok(a
        .levels
        .iter()
        .zip(&b.levels)
        .map(|(&x, &y)| u32::from(x.abs_diff(y)))
        .sum())
}

/// Similarity of two feature vectors: `exp(-sum |a - b|)`, in `(0, 1]`.
/// Vectors may come from different layers or images.
pub fn similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    Ok(similarity_from_distance(level_distance(a, b)?))
}

#[inline]
pub fn similarity_from_distance(distance: u32) -> f64 {
    (-f64::from(distance)).exp()
}
