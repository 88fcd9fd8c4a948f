//! Geometry of the layer stack: per-layer scale, the hexagonal
//! receptive-field layout inside an element, and the element layout inside a
//! layer.
//!
//! Every layer holds 19 elements and every element 19 receptive fields, both
//! arranged as a centered hexagonal pattern (1 + 6 + 12). Adjacent layers
//! scale by exactly `sqrt(2)`.

use crate::error::{Error, Result};
use crate::geom::Point;

pub const ELEMENTS_PER_LAYER: usize = 19;
pub const RFS_PER_ELEMENT: usize = 19;

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Stack-wide configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    /// Number of layers `M`.
    pub num_layers: usize,
    /// Envelope scale of layer 1 in pixels.
    pub base_sigma: f64,
    /// Number of kernel orientations per layer.
    pub orientations: usize,
    /// Element center spacing as a multiple of the element inner-ring
    /// diameter (`4 * rf_radius`).
    pub element_spacing_factor: f64,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            num_layers: 6,
            base_sigma: 2.0,
            orientations: 4,
            element_spacing_factor: 2.0,
        }
    }
}

impl StackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::InvalidParam(format!(
                "stack needs at least 2 layers, got {}",
                self.num_layers
            )));
        }
        if !(self.base_sigma > 0.0) {
            return Err(Error::InvalidParam(format!(
                "base sigma must be positive, got {}",
                self.base_sigma
            )));
        }
        if self.orientations < 1 {
            return Err(Error::InvalidParam("need at least one orientation".into()));
        }
        if !(self.element_spacing_factor > 0.0) {
            return Err(Error::InvalidParam(format!(
                "element spacing factor must be positive, got {}",
                self.element_spacing_factor
            )));
        }
        Ok(())
    }

    /// Geometry of layer `m` (1-based).
    pub fn layer(&self, m: usize) -> Result<LayerGeometry> {
        layer_geometry(self, m)
    }

    /// Geometry of all layers, index 0 holding layer 1.
    pub fn all_layers(&self) -> Result<Vec<LayerGeometry>> {
        (1..=self.num_layers).map(|m| self.layer(m)).collect()
    }
}

/// Identifies one element on one layer. Both indices are 1-based, matching
/// the layer numbering used throughout (`sigma_m = sigma_1 * sqrt(2)^(m-1)`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementAddress {
    pub layer: usize,
    pub element: usize,
}

/// Geometry of a single layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGeometry {
    /// 1-based layer index `m`.
    pub layer_index: usize,
    /// Envelope scale `sigma_1 * sqrt(2)^(m-1)`.
    pub sigma: f64,
    /// Receptive-field radius `sqrt(2) * sigma`.
    pub rf_radius: f64,
    /// 19 receptive-field centers relative to an element center. Adjacent
    /// fields touch: spacing equals the RF diameter.
    pub rf_offsets: [Point; 19],
    /// 19 element centers relative to the mask center.
    pub element_offsets: [Point; 19],
}

impl LayerGeometry {
    /// Radius of one element's coverage: outermost RF center plus RF radius.
    pub fn element_footprint_radius(&self) -> f64 {
        let furthest = self
            .rf_offsets
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        furthest + self.rf_radius
    }

    /// Radius of the whole layer's coverage around the mask center.
    pub fn mask_footprint_radius(&self) -> f64 {
        let furthest = self
            .element_offsets
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        furthest + self.element_footprint_radius()
    }
}

/// The centered hexagonal 19-point pattern: the origin, six points at
/// `spacing` (angles k*60 deg), and the second ring of twelve (six at
/// `2*spacing` on the axes, six at `sqrt(3)*spacing` between them), ordered
/// center first, then each ring counterclockwise from angle zero.
pub fn hex_offsets(spacing: f64) -> [Point; 19] {
    assert!(spacing > 0.0);
    let mut pts = [Point::ORIGIN; 19];
    let dir = |deg: f64| -> Point {
        let r = deg.to_radians();
        Point::new(r.cos(), r.sin())
    };
    for k in 0..6 {
        pts[1 + k] = dir(k as f64 * 60.0) * spacing;
    }
    let sqrt3 = 3.0_f64.sqrt();
    for k in 0..6 {
        pts[7 + 2 * k] = dir(k as f64 * 60.0) * (2.0 * spacing);
        pts[8 + 2 * k] = dir(k as f64 * 60.0 + 30.0) * (sqrt3 * spacing);
    }
    pts
}

/// Geometry of layer `m` under the given configuration.
pub fn layer_geometry(cfg: &StackConfig, m: usize) -> Result<LayerGeometry> {
    cfg.validate()?;
    if m < 1 || m > cfg.num_layers {
        return Err(Error::InvalidParam(format!(
            "layer {m} out of range 1..={}",
            cfg.num_layers
        )));
    }
    let sigma = cfg.base_sigma * SQRT_2.powi(m as i32 - 1);
    let rf_radius = SQRT_2 * sigma;
    let rf_offsets = hex_offsets(2.0 * rf_radius);
    let element_offsets = hex_offsets(cfg.element_spacing_factor * 2.0 * rf_radius * 2.0);
    Ok(LayerGeometry {
        layer_index: m,
        sigma,
        rf_radius,
        rf_offsets,
        element_offsets,
    })
}

/// Absolute RF centers of element `element_idx` (0-based) for a mask placed
/// at `mask_center`, in `rf_offsets` order.
pub fn absolute_rf_centers(
    geometry: &LayerGeometry,
    mask_center: Point,
    element_idx: usize,
) -> [Point; 19] {
    let base = mask_center + geometry.element_offsets[element_idx];
    let mut out = [Point::ORIGIN; 19];
    for (slot, &off) in out.iter_mut().zip(&geometry.rf_offsets) {
        *slot = base + off;
    }
    out
}
