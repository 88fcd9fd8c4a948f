//! Two-step coarse-to-fine template search.
//!
//! For each pre-selected subregion seed, the scan layer (by default the
//! second largest) is extracted at the seed and matched against every
//! element of every template layer in nearest-neighbor fashion. The matched
//! layer pair fixes the relative scale `sqrt(2)^(m - m')`, and the matched
//! element pair moves the mask to the corrected location
//! `X_l - scale * Y_l'`. The smallest layer is then extracted there and
//! matched against the scale-corresponding template layer to produce the
//! final location and an evaluation score.
//!
//! All seeds are searched independently; search work is instrumented in
//! [`SearchStats`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{
    extract_layer_raw, level_distance, quantize_layer, similarity_from_distance, FeatureVector,
    LayerResponses,
};
use crate::gabor::{GaborBank, BANDWIDTH_OCTAVES};
use crate::geom::Point;
use crate::raster::Image;
use crate::template::{KeyPointTemplate, Template};
use crate::topology::{LayerGeometry, ELEMENTS_PER_LAYER, SQRT_2};

/// How many element pairs enter the final evaluation product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// All 19 elements of the refinement layer, in index order.
    AllElements,
    /// Only the matched element pair.
    MatchedOnly,
}

impl EvalMode {
    pub fn element_count(self) -> usize {
        match self {
            EvalMode::AllElements => ELEMENTS_PER_LAYER,
            EvalMode::MatchedOnly => 1,
        }
    }
}

/// Search parameters. `scan_layer = None` selects layer `M - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub scan_layer: Option<usize>,
    /// Side of the square subregions tiling the image.
    pub subregion: usize,
    pub eval_mode: EvalMode,
    /// Zero returns the best candidate per key point; a positive threshold
    /// returns every candidate scoring at least this much (multi-object).
    pub threshold: f64,
    /// Subregions whose mean gradient magnitude falls below this are skipped.
    pub energy_threshold: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            scan_layer: None,
            subregion: 150,
            eval_mode: EvalMode::AllElements,
            threshold: 0.0,
            energy_threshold: 0.0,
        }
    }
}

/// Result of the coarse scanning step at one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMatch {
    /// Matched query element `l` (1-based).
    pub query_element: usize,
    /// Matched template element `l'` (1-based).
    pub template_element: usize,
    /// Matched template layer `m'` (1-based).
    pub template_layer: usize,
    /// Query layer `m` the scan ran on.
    pub scan_layer: usize,
    pub best_similarity: f64,
    /// Estimated relative scale `sqrt(2)^(m - m')`.
    pub scale: f64,
    /// Absolute center of the matched query element (C.M.).
    pub matched_center: Point,
    /// Corrected mask location (C.L.).
    pub corrected_location: Point,
    /// The whole query layer quantized to zero (featureless region).
    pub degenerate: bool,
}

/// One localization hypothesis after refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCandidate {
    pub key_point_index: usize,
    pub seed_index: usize,
    /// Initial location (I.L.): the subregion seed.
    pub seed: Point,
    pub coarse: CoarseMatch,
    /// Template layer the refinement matched against.
    pub refine_layer: usize,
    /// Final localized point (F.L.).
    pub final_location: Point,
    /// Product of element-pair similarities, in `[0, 1]`. Very poor
    /// candidates underflow to 0.0; ranking uses `eval_total_distance`,
    /// which orders identically without underflow.
    pub eval_score: f64,
    /// Total level distance across the evaluated element pairs
    /// (`eval_score = exp(-eval_total_distance)` before rounding);
    /// `u32::MAX` for out-of-bounds candidates.
    pub eval_total_distance: u32,
    /// Number of element pairs in the evaluation (1 or 19).
    pub eval_t: usize,
    /// Coarse or refined extraction was entirely featureless.
    pub degenerate: bool,
    /// Corrected location fell too far outside the image to refine.
    pub out_of_bounds: bool,
}

/// Instrumentation counters for one search.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Feature-vector similarity comparisons.
    pub similarity_evaluations: u64,
    /// Elements whose features were extracted and quantized.
    pub elements_extracted: u64,
    /// Seed visits across all key-point searches (skipped seeds included).
    pub subregions_visited: u64,
}

impl std::ops::AddAssign for SearchStats {
    fn add_assign(&mut self, rhs: SearchStats) {
        self.similarity_evaluations += rhs.similarity_evaluations;
        self.elements_extracted += rhs.elements_extracted;
        self.subregions_visited += rhs.subregions_visited;
    }
}

/// Ranked candidates plus the merged instrumentation counters.
#[derive(Debug, Clone, PartialEq)]
pub struct FindResult {
    /// Grouped by key point (ascending), best candidate first within each.
    pub candidates: Vec<MatchCandidate>,
    pub stats: SearchStats,
}

impl FindResult {
    /// Best candidate for one key point, if any survived.
    pub fn best_for(&self, key_point: usize) -> Option<&MatchCandidate> {
        self.candidates
            .iter()
            .find(|c| c.key_point_index == key_point)
    }
}

/// One seed per grid cell tiling the image with `subregion`-sided cells.
/// Cells whose mean gradient magnitude falls below `energy_threshold` are
/// dropped; a zero threshold keeps every cell.
pub fn preselect_seeds(img: &Image, subregion: usize, energy_threshold: f64) -> Vec<Point> {
    assert!(subregion >= 1, "subregion side must be positive");
    let (w, h) = (img.width(), img.height());
    let mut seeds = Vec::new();
    for y0 in (0..h).step_by(subregion) {
        let y1 = (y0 + subregion).min(h);
        for x0 in (0..w).step_by(subregion) {
            let x1 = (x0 + subregion).min(w);
            if energy_threshold > 0.0 {
                let energy = mean_gradient_magnitude(img, x0, x1, y0, y1);
                if energy < energy_threshold {
                    continue;
                }
            }
            seeds.push(Point::new(
                (x0 + x1 - 1) as f64 / 2.0,
                (y0 + y1 - 1) as f64 / 2.0,
            ));
        }
    }
    seeds
}

fn mean_gradient_magnitude(img: &Image, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let mut total = 0.0;
    for y in y0..y1 {
        let y_prev = y.saturating_sub(1);
        let y_next = (y + 1).min(h - 1);
        for x in x0..x1 {
            let x_prev = x.saturating_sub(1);
            let x_next = (x + 1).min(w - 1);
            let gx = (img.get(x_next, y) - img.get(x_prev, y)) / 2.0;
            let gy = (img.get(x, y_next) - img.get(x, y_prev)) / 2.0;
            total += gx.hypot(gy);
        }
    }
    total / ((x1 - x0) * (y1 - y0)) as f64
}

/// Nearest neighbor of a 19-element query (all at one layer) over every
/// element of every template layer.
///
/// Maximizes the similarity; ties break toward smaller `|m - m'|`, then
/// smaller `l'`, then smaller `l`. Returns 1-based `(l, l', m', similarity)`.
pub fn nearest_neighbor(
    query: &[FeatureVector],
    kp: &KeyPointTemplate,
) -> Result<(usize, usize, usize, f64)> {
    let scan_layer = query[0].address.layer;
    // Key minimized lexicographically: (distance, |m - m'|, l', l).
    let mut best: Option<((u32, usize, usize, usize), usize)> = None;
    for (mp_idx, layer) in kp.layers.iter().enumerate() {
        let m_prime = mp_idx + 1;
        let dm = scan_layer.abs_diff(m_prime);
        for (lp_idx, template_vec) in layer.vectors.iter().enumerate() {
            for (l_idx, query_vec) in query.iter().enumerate() {
                let d = level_distance(query_vec, template_vec)?;
                let key = (d, dm, lp_idx, l_idx);
                if best.as_ref().is_none_or(|(bk, _)| key < *bk) {
                    best = Some((key, m_prime));
                }
            }
        }
    }
    let ((d, _, lp_idx, l_idx), m_prime) = best.expect("template has at least one layer");
    Ok((
        l_idx + 1,
        lp_idx + 1,
        m_prime,
        similarity_from_distance(d),
    ))
}

/// Relative scale of the new image implied by matching query layer `m`
/// against template layer `m_prime`: `sqrt(2)^(m - m')`.
pub fn estimate_scale(m: usize, m_prime: usize) -> f64 {
    SQRT_2.powi(m as i32 - m_prime as i32)
}

/// Corrected mask location: `X_l - scale * Y_l'`.
pub fn correct_location(matched_center: Point, template_offset: Point, scale: f64) -> Point {
    debug_assert!(scale > 0.0);
    matched_center - template_offset * scale
}

/// Template layer the refinement step matches query layer 1 against:
/// `clamp(1 + m' - m, 1, M)`, so the comparison happens at the matched
/// physical scale.
pub fn refine_template_layer(scan_layer: usize, template_layer: usize, num_layers: usize) -> usize {
    (1 + template_layer as i64 - scan_layer as i64).clamp(1, num_layers as i64) as usize
}

/// Count of similarity evaluations an exhaustive stride-1 scan of the
/// smallest layer would need over the same image and scale set: every pixel,
/// at every scale, matching 19 query elements against 19 template elements.
/// This is the baseline the instrumented hierarchical search is measured
/// against.
pub fn exhaustive_scan_evaluations(width: usize, height: usize, num_scales: usize) -> u64 {
    (width as u64)
        * (height as u64)
        * (num_scales as u64)
        * (ELEMENTS_PER_LAYER as u64)
        * (ELEMENTS_PER_LAYER as u64)
}

/// Final evaluation of a candidate: the product of element-pair
/// similarities on the given template layer. `AllElements` pairs query and
/// template elements in index order; `MatchedOnly` uses only the matched
/// pair (1-based indices).
pub fn evaluate(
    query: &[FeatureVector],
    kp: &KeyPointTemplate,
    layer: usize,
    mode: EvalMode,
    matched: (usize, usize),
) -> Result<f64> {
    let template_layer = kp.layer(layer);
    match mode {
        EvalMode::AllElements => {
            let mut product = 1.0;
            for (q, t) in query.iter().zip(&template_layer.vectors) {
                product *= similarity_from_distance(level_distance(q, t)?);
            }
            Ok(product)
        }
        EvalMode::MatchedOnly => {
            let d = level_distance(
                &query[matched.0 - 1],
                &template_layer.vectors[matched.1 - 1],
            )?;
            Ok(similarity_from_distance(d))
        }
    }
}

/// Coarse scanning at one seed against one key point, computing the scan
/// layer's responses from scratch. [`find`] shares responses across seeds
/// and key points instead.
pub fn scan_coarse(
    img: &Image,
    template: &Template,
    key_point: usize,
    seed: Point,
    scan_layer: usize,
) -> Result<(CoarseMatch, SearchStats)> {
    let cfg = &template.config;
    let geometry = cfg.layer(scan_layer)?;
    let bank = GaborBank::new(geometry.sigma, BANDWIDTH_OCTAVES, cfg.orientations);
    let responses = LayerResponses::compute(img, &bank)?;
    let (query, degenerate) = extract_quantized(&responses, &geometry, seed)?;
    let kp = &template.key_points[key_point];
    let coarse = coarse_from_query(&query, degenerate, kp, &geometry, seed)?;
    let stats = SearchStats {
        similarity_evaluations: coarse_evaluations(cfg.num_layers),
        elements_extracted: ELEMENTS_PER_LAYER as u64,
        subregions_visited: 1,
    };
    Ok((coarse, stats))
}

/// Refinement at a coarse match's corrected location, computing layer-1
/// responses from scratch. [`find`] shares responses instead.
pub fn refine(
    img: &Image,
    template: &Template,
    key_point: usize,
    seed_index: usize,
    seed: Point,
    coarse: &CoarseMatch,
    eval_mode: EvalMode,
) -> Result<(MatchCandidate, SearchStats)> {
    let cfg = &template.config;
    let geometry = cfg.layer(1)?;
    let bank = GaborBank::new(geometry.sigma, BANDWIDTH_OCTAVES, cfg.orientations);
    let responses = LayerResponses::compute(img, &bank)?;
    let mut stats = SearchStats::default();
    let candidate = refine_from_responses(
        &responses,
        &geometry,
        &template.key_points[key_point],
        cfg.num_layers,
        key_point,
        seed_index,
        seed,
        coarse,
        eval_mode,
        &mut stats,
    )?;
    Ok((candidate, stats))
}

/// Full search: pre-select seeds, run coarse scan plus refinement for every
/// (key point, seed) pair, and rank candidates by evaluation score.
///
/// With a zero threshold the best candidate per key point is returned;
/// a positive threshold returns all candidates at or above it. Degenerate
/// candidates rank below non-degenerate ones regardless of score. Seeds
/// whose extraction has no coverage are skipped but still counted.
pub fn find(img: &Image, template: &Template, cfg: &SearchConfig) -> Result<FindResult> {
    template.config.validate()?;
    if template.key_points.is_empty() {
        return Err(Error::InvalidParam("template holds no key points".into()));
    }
    let num_layers = template.config.num_layers;
    let scan_layer = cfg.scan_layer.unwrap_or_else(|| (num_layers - 1).max(1));
    if scan_layer < 1 || scan_layer > num_layers {
        return Err(Error::InvalidParam(format!(
            "scan layer {scan_layer} out of range 1..={num_layers}"
        )));
    }

    let mut stats = SearchStats::default();
    let seeds = preselect_seeds(img, cfg.subregion, cfg.energy_threshold);
    if seeds.is_empty() {
        return Ok(FindResult {
            candidates: Vec::new(),
            stats,
        });
    }

    let orientations = template.config.orientations;
    let geo_scan = template.config.layer(scan_layer)?;
    let geo_fine = template.config.layer(1)?;
    let resp_scan = LayerResponses::compute(
        img,
        &GaborBank::new(geo_scan.sigma, BANDWIDTH_OCTAVES, orientations),
    )?;
    let resp_fine_owned = if scan_layer == 1 {
        None
    } else {
        Some(LayerResponses::compute(
            img,
            &GaborBank::new(geo_fine.sigma, BANDWIDTH_OCTAVES, orientations),
        )?)
    };
    let resp_fine = resp_fine_owned.as_ref().unwrap_or(&resp_scan);

    // Coarse query features per seed, shared by every key point.
    let queries: Vec<Option<(Vec<FeatureVector>, bool)>> = seeds
        .par_iter()
        .map(|&seed| match extract_quantized(&resp_scan, &geo_scan, seed) {
            Ok(q) => Ok(Some(q)),
            Err(Error::Coverage { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    stats.elements_extracted +=
        queries.iter().flatten().count() as u64 * ELEMENTS_PER_LAYER as u64;

    let n_key_points = template.key_points.len();
    let tasks: Vec<(usize, usize)> = (0..n_key_points)
        .flat_map(|k| (0..seeds.len()).map(move |s| (k, s)))
        .collect();
    let outcomes: Vec<(Option<MatchCandidate>, SearchStats)> = tasks
        .par_iter()
        .map(|&(k, s)| -> Result<(Option<MatchCandidate>, SearchStats)> {
            let mut local = SearchStats {
                subregions_visited: 1,
                ..SearchStats::default()
            };
            let Some((query, degenerate)) = &queries[s] else {
                return Ok((None, local));
            };
            let kp = &template.key_points[k];
            let coarse = coarse_from_query(query, *degenerate, kp, &geo_scan, seeds[s])?;
            local.similarity_evaluations += coarse_evaluations(num_layers);
            let candidate = refine_from_responses(
                resp_fine,
                &geo_fine,
                kp,
                num_layers,
                k,
                s,
                seeds[s],
                &coarse,
                cfg.eval_mode,
                &mut local,
            )?;
            Ok((Some(candidate), local))
        })
        .collect::<Result<_>>()?;

    let mut per_key_point: Vec<Vec<MatchCandidate>> = vec![Vec::new(); n_key_points];
    for (candidate, local) in outcomes {
        stats += local;
        if let Some(c) = candidate {
            per_key_point[c.key_point_index].push(c);
        }
    }
    let mut candidates = Vec::new();
    for list in &mut per_key_point {
        list.sort_by(|a, b| {
            a.degenerate
                .cmp(&b.degenerate)
                .then(a.eval_total_distance.cmp(&b.eval_total_distance))
                .then(a.seed_index.cmp(&b.seed_index))
        });
        if cfg.threshold > 0.0 {
            candidates.extend(list.drain(..).filter(|c| c.eval_score >= cfg.threshold));
        } else {
            candidates.extend(list.drain(..).take(1));
        }
    }

    Ok(FindResult { candidates, stats })
}

fn coarse_evaluations(num_layers: usize) -> u64 {
    (ELEMENTS_PER_LAYER * ELEMENTS_PER_LAYER * num_layers) as u64
}

fn extract_quantized(
    responses: &LayerResponses,
    geometry: &LayerGeometry,
    center: Point,
) -> Result<(Vec<FeatureVector>, bool)> {
    let raw = extract_layer_raw(responses, geometry, center)?;
    let quantized = quantize_layer(&raw);
    let degenerate = quantized.iter().all(FeatureVector::is_zero);
    Ok((quantized, degenerate))
}

fn coarse_from_query(
    query: &[FeatureVector],
    degenerate: bool,
    kp: &KeyPointTemplate,
    geo_scan: &LayerGeometry,
    seed: Point,
) -> Result<CoarseMatch> {
    let (l, l_prime, m_prime, sim) = nearest_neighbor(query, kp)?;
    let scale = estimate_scale(geo_scan.layer_index, m_prime);
    let matched_center = seed + geo_scan.element_offsets[l - 1];
    let template_offset = kp.layer(m_prime).offsets[l_prime - 1];
    let corrected_location = correct_location(matched_center, template_offset, scale);
    Ok(CoarseMatch {
        query_element: l,
        template_element: l_prime,
        template_layer: m_prime,
        scan_layer: geo_scan.layer_index,
        best_similarity: sim,
        scale,
        matched_center,
        corrected_location,
        degenerate,
    })
}

#[allow(clippy::too_many_arguments)]
fn refine_from_responses(
    resp_fine: &LayerResponses,
    geo_fine: &LayerGeometry,
    kp: &KeyPointTemplate,
    num_layers: usize,
    key_point_index: usize,
    seed_index: usize,
    seed: Point,
    coarse: &CoarseMatch,
    eval_mode: EvalMode,
    stats: &mut SearchStats,
) -> Result<MatchCandidate> {
    let refine_layer = refine_template_layer(coarse.scan_layer, coarse.template_layer, num_layers);
    let footprint = geo_fine.element_footprint_radius();
    let (w, h) = (resp_fine.width() as f64, resp_fine.height() as f64);
    let (lo_x, hi_x) = (footprint, w - 1.0 - footprint);
    let (lo_y, hi_y) = (footprint, h - 1.0 - footprint);
    let target = coarse.corrected_location;
    let clamped = Point::new(target.x.clamp(lo_x, hi_x), target.y.clamp(lo_y, hi_y));
    // A corrected location within one element footprint of the admissible
    // interior is clamped in; anything farther is reported out of bounds.
    if hi_x < lo_x || hi_y < lo_y || clamped.distance(target) > 2.0 * footprint {
        return Ok(MatchCandidate {
            key_point_index,
            seed_index,
            seed,
            coarse: coarse.clone(),
            refine_layer,
            final_location: target,
            eval_score: 0.0,
            eval_total_distance: u32::MAX,
            eval_t: eval_mode.element_count(),
            degenerate: coarse.degenerate,
            out_of_bounds: true,
        });
    }

    let (query, refine_degenerate) = extract_quantized(resp_fine, geo_fine, clamped)?;
    stats.elements_extracted += ELEMENTS_PER_LAYER as u64;
    let template_layer = kp.layer(refine_layer);

    // One pass over all 19x19 pairs feeds both the nearest-neighbor argmax
    // and the evaluation product.
    let mut distances = [[0u32; ELEMENTS_PER_LAYER]; ELEMENTS_PER_LAYER];
    for (l_idx, q) in query.iter().enumerate() {
        for (lp_idx, t) in template_layer.vectors.iter().enumerate() {
            distances[l_idx][lp_idx] = level_distance(q, t)?;
        }
    }
    stats.similarity_evaluations += (ELEMENTS_PER_LAYER * ELEMENTS_PER_LAYER) as u64;

    let mut best = (u32::MAX, 0usize, 0usize); // (distance, l', l)
    for l_idx in 0..ELEMENTS_PER_LAYER {
        for lp_idx in 0..ELEMENTS_PER_LAYER {
            let key = (distances[l_idx][lp_idx], lp_idx, l_idx);
            if key < best {
                best = key;
            }
        }
    }
    let (_, best_lp, best_l) = best;

    let matched_center = clamped + geo_fine.element_offsets[best_l];
    let final_location = correct_location(
        matched_center,
        template_layer.offsets[best_lp],
        coarse.scale,
    );
    let (eval_score, eval_total_distance) = match eval_mode {
        EvalMode::AllElements => {
            let score = (0..ELEMENTS_PER_LAYER)
                .map(|i| similarity_from_distance(distances[i][i]))
                .product();
            let total = (0..ELEMENTS_PER_LAYER).map(|i| distances[i][i]).sum();
            (score, total)
        }
        EvalMode::MatchedOnly => {
            let d = distances[best_l][best_lp];
            (similarity_from_distance(d), d)
        }
    };

    Ok(MatchCandidate {
        key_point_index,
        seed_index,
        seed,
        coarse: coarse.clone(),
        refine_layer,
        final_location,
        eval_score,
        eval_total_distance,
        eval_t: eval_mode.element_count(),
        degenerate: coarse.degenerate || refine_degenerate,
        out_of_bounds: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::textured_image;
    use crate::template::train;
    use crate::topology::{ElementAddress, StackConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_stack() -> StackConfig {
        StackConfig {
            num_layers: 4,
            base_sigma: 1.5,
            orientations: 4,
            element_spacing_factor: 0.4,
        }
    }

    fn fv(layer: usize, element: usize, levels: Vec<u8>) -> FeatureVector {
        FeatureVector::from_levels(
            ElementAddress { layer, element },
            1,
            levels,
        )
    }

    #[test]
    fn preselect_tiles_800_square_into_36_cells() {
        let img = Image::filled(800, 800, 0.5);
        let seeds = preselect_seeds(&img, 150, 0.0);
        assert_eq!(seeds.len(), 36);
        // First full cell center.
        assert_eq!(seeds[0], Point::new(74.5, 74.5));
        // Last (truncated 50-wide) cell center.
        assert_eq!(seeds[35], Point::new(774.5, 774.5));
    }

    #[test]
    fn preselect_energy_threshold() {
        let flat = Image::filled(300, 300, 0.5);
        assert_eq!(preselect_seeds(&flat, 150, 0.0).len(), 4);
        assert!(preselect_seeds(&flat, 150, 1e-6).is_empty());
        let textured = textured_image(300, 300, 9, 0.2, 0.9);
        assert_eq!(preselect_seeds(&textured, 150, 1e-6).len(), 4);
    }

    #[test]
    fn estimate_scale_powers() {
        assert!((estimate_scale(5, 6) - 1.0 / SQRT_2).abs() < 1e-15);
        assert!((estimate_scale(5, 6) - 0.7071067811865476).abs() < 1e-12);
        assert_eq!(estimate_scale(4, 4), 1.0);
        assert!((estimate_scale(6, 4) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn correct_location_arithmetic() {
        // Matched element is the mask-center element: no correction.
        let x = Point::new(137.0, 293.0);
        assert_eq!(correct_location(x, Point::ORIGIN, 0.5), x);
        assert_eq!(
            correct_location(Point::new(100.0, 100.0), Point::new(10.0, 0.0), 1.0),
            Point::new(90.0, 100.0)
        );
        // Relocation with the template element at [120,203], trained at
        // [197,259], matched query center [137,293], scale 1/sqrt(2).
        let template_offset = Point::new(120.0 - 197.0, 203.0 - 259.0);
        let cl = correct_location(x, template_offset, 1.0 / SQRT_2);
        assert!((cl.x - 191.44722215136414).abs() < 1e-9);
        assert!((cl.y - 332.59797974644664).abs() < 1e-9);
    }

    #[test]
    fn refine_layer_clamps_through_scale_relation() {
        assert_eq!(refine_template_layer(5, 5, 6), 1);
        assert_eq!(refine_template_layer(5, 6, 6), 2);
        assert_eq!(refine_template_layer(6, 4, 6), 1); // 1 + 4 - 6 clamped up
        assert_eq!(refine_template_layer(2, 6, 6), 5);
        assert_eq!(refine_template_layer(1, 6, 6), 6);
    }

    #[test]
    fn nearest_neighbor_brute_force_oracle() {
        // Random query and template vectors; an independently coded argmax
        // with the same tie-break must agree.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for round in 0..100 {
            let scan_layer = rng.gen_range(1..=4usize);
            let query: Vec<FeatureVector> = (0..ELEMENTS_PER_LAYER)
                .map(|l| {
                    fv(
                        scan_layer,
                        l + 1,
                        (0..19).map(|_| rng.gen_range(0..=16)).collect(),
                    )
                })
                .collect();
            let kp = KeyPointTemplate {
                training_location: Point::ORIGIN,
                layers: (1..=4)
                    .map(|m| crate::template::LayerFeatures {
                        vectors: (0..ELEMENTS_PER_LAYER)
                            .map(|l| {
                                fv(m, l + 1, (0..19).map(|_| rng.gen_range(0..=16)).collect())
                            })
                            .collect(),
                        offsets: vec![Point::ORIGIN; ELEMENTS_PER_LAYER],
                    })
                    .collect(),
            };
            let got = nearest_neighbor(&query, &kp).unwrap();

            let mut best: Option<(f64, usize, usize, usize)> = None;
            for m_prime in 1..=4usize {
                for lp in 1..=ELEMENTS_PER_LAYER {
                    for l in 1..=ELEMENTS_PER_LAYER {
                        let s = crate::features::similarity(
                            &query[l - 1],
                            &kp.layer(m_prime).vectors[lp - 1],
                        )
                        .unwrap();
                        let better = match &best {
                            None => true,
                            Some((bs, bm, blp, bl)) => {
                                s > *bs
                                    || (s == *bs
                                        && (scan_layer.abs_diff(m_prime), lp, l)
                                            < (scan_layer.abs_diff(*bm), *blp, *bl))
                            }
                        };
                        if better {
                            best = Some((s, m_prime, lp, l));
                        }
                    }
                }
            }
            let (bs, bm, blp, bl) = best.unwrap();
            assert_eq!(got, (bl, blp, bm, bs), "round {round}");
        }
    }

    #[test]
    fn nearest_neighbor_self_match_is_exact() {
        let img = textured_image(128, 128, 50, 0.2, 0.9);
        let cfg = StackConfig {
            num_layers: 2,
            ..test_stack()
        };
        let t = train(&img, &[Point::new(64.0, 64.0)], &cfg, "s").unwrap();
        let kp = &t.key_points[0];
        let query = kp.layer(2).vectors.clone();
        let (l, lp, mp, sim) = nearest_neighbor(&query, kp).unwrap();
        assert_eq!(sim, 1.0);
        assert_eq!(mp, 2);
        assert_eq!(l, lp);
    }

    #[test]
    fn evaluate_products() {
        let kp = KeyPointTemplate {
            training_location: Point::ORIGIN,
            layers: vec![crate::template::LayerFeatures {
                vectors: (0..ELEMENTS_PER_LAYER)
                    .map(|l| fv(1, l + 1, vec![3; 19]))
                    .collect(),
                offsets: vec![Point::ORIGIN; ELEMENTS_PER_LAYER],
            }],
        };
        let query: Vec<FeatureVector> = (0..ELEMENTS_PER_LAYER)
            .map(|l| fv(1, l + 1, vec![3; 19]))
            .collect();
        // All pairs identical.
        assert_eq!(
            evaluate(&query, &kp, 1, EvalMode::AllElements, (1, 1)).unwrap(),
            1.0
        );
        // One element off by a total level distance of 1.
        let mut one_off = query.clone();
        let mut levels = vec![3u8; 19];
        levels[0] = 4;
        one_off[7] = fv(1, 8, levels);
        let eval = evaluate(&one_off, &kp, 1, EvalMode::AllElements, (1, 1)).unwrap();
        assert!((eval - (-1.0f64).exp()).abs() < 1e-12);
        // Matched-only equals the pair similarity.
        let single = evaluate(&one_off, &kp, 1, EvalMode::MatchedOnly, (8, 8)).unwrap();
        assert_eq!(single, (-1.0f64).exp());
    }

    #[test]
    fn scan_coarse_self_match_recovers_training_point() {
        let img = textured_image(200, 200, 51, 0.2, 0.9);
        let cfg = test_stack();
        let p = Point::new(100.0, 100.0);
        let t = train(&img, &[p], &cfg, "s").unwrap();
        let (coarse, stats) = scan_coarse(&img, &t, 0, p, 3).unwrap();
        assert_eq!(coarse.template_layer, 3);
        assert_eq!(coarse.query_element, coarse.template_element);
        assert_eq!(coarse.scale, 1.0);
        assert!(coarse.corrected_location.distance(p) <= cfg.layer(3).unwrap().rf_radius);
        assert!(!coarse.degenerate);
        assert_eq!(
            stats.similarity_evaluations,
            (19 * 19 * cfg.num_layers) as u64
        );
    }

    #[test]
    fn scan_coarse_on_constant_image_is_degenerate_and_deterministic() {
        // Featureless template, featureless query: every pair ties at
        // similarity 1, and the tie-break picks the first pair of the
        // nearest layer.
        let flat = Image::filled(200, 200, 0.5);
        let cfg = test_stack();
        let t = train(&flat, &[Point::new(100.0, 100.0)], &cfg, "s").unwrap();
        let (coarse, _) = scan_coarse(&flat, &t, 0, Point::new(100.0, 100.0), 3).unwrap();
        assert!(coarse.degenerate);
        assert_eq!(coarse.best_similarity, 1.0);
        assert_eq!(coarse.query_element, 1);
        assert_eq!(coarse.template_element, 1);
        assert_eq!(coarse.template_layer, 3);
        assert_eq!(coarse.scale, 1.0);
    }

    #[test]
    fn refine_self_search_lands_within_two_pixels() {
        let img = textured_image(220, 220, 53, 0.2, 0.9);
        let cfg = test_stack();
        let p = Point::new(112.0, 106.0);
        let t = train(&img, &[p], &cfg, "s").unwrap();
        let seed = p + Point::new(18.0, -15.0);
        let (coarse, _) = scan_coarse(&img, &t, 0, seed, 3).unwrap();
        let (candidate, stats) =
            refine(&img, &t, 0, 0, seed, &coarse, EvalMode::AllElements).unwrap();
        assert!(!candidate.out_of_bounds);
        assert_eq!(candidate.refine_layer, 1 + coarse.template_layer - 3);
        let err = candidate.final_location.distance(p);
        assert!(err <= 2.0, "final location off by {err}");
        assert_eq!(stats.similarity_evaluations, 361);
    }

    #[test]
    fn refine_far_out_of_bounds_reports_zero_score() {
        let img = textured_image(200, 200, 54, 0.2, 0.9);
        let cfg = test_stack();
        let p = Point::new(100.0, 100.0);
        let t = train(&img, &[p], &cfg, "s").unwrap();
        let (mut coarse, _) = scan_coarse(&img, &t, 0, p, 3).unwrap();
        coarse.corrected_location = Point::new(-500.0, 90.0);
        let (candidate, _) = refine(&img, &t, 0, 0, p, &coarse, EvalMode::AllElements).unwrap();
        assert!(candidate.out_of_bounds);
        assert_eq!(candidate.eval_score, 0.0);
    }

    #[test]
    fn find_counts_evaluations_per_seed_and_key_point() {
        let img = textured_image(160, 160, 55, 0.2, 0.9);
        let cfg = test_stack();
        let t = train(&img, &[Point::new(80.0, 80.0)], &cfg, "s").unwrap();
        // One seed: subregion covers the whole image.
        let search = SearchConfig {
            subregion: 160,
            ..SearchConfig::default()
        };
        let result = find(&img, &t, &search).unwrap();
        let m = cfg.num_layers as u64;
        assert_eq!(result.stats.similarity_evaluations, 361 * m + 361);
        assert_eq!(result.stats.elements_extracted, 38);
        assert_eq!(result.stats.subregions_visited, 1);
        assert_eq!(result.candidates.len(), 1);
    }

    #[test]
    fn find_on_empty_seed_list_is_empty_with_zero_stats() {
        let img = textured_image(160, 160, 56, 0.2, 0.9);
        let flat = Image::filled(160, 160, 0.5);
        let cfg = test_stack();
        let t = train(&img, &[Point::new(80.0, 80.0)], &cfg, "s").unwrap();
        let search = SearchConfig {
            energy_threshold: 1e9,
            ..SearchConfig::default()
        };
        let result = find(&flat, &t, &search).unwrap();
        assert!(result.candidates.is_empty());
        assert_eq!(result.stats, SearchStats::default());
    }

    #[test]
    fn find_self_search_localizes_key_points() {
        let img = textured_image(256, 256, 57, 0.2, 0.9);
        let cfg = StackConfig {
            element_spacing_factor: 0.6,
            ..test_stack()
        };
        let points = vec![
            Point::new(90.0, 90.0),
            Point::new(150.0, 120.0),
            Point::new(110.0, 170.0),
        ];
        let t = train(&img, &points, &cfg, "s").unwrap();
        let search = SearchConfig {
            subregion: 48,
            ..SearchConfig::default()
        };
        let result = find(&img, &t, &search).unwrap();
        for (i, p) in points.iter().enumerate() {
            let best = result.best_for(i).expect("candidate per key point");
            let err = best.final_location.distance(*p);
            assert!(err <= 8.0, "key point {i} off by {err}");
        }
    }

    #[test]
    fn find_is_deterministic() {
        let img = textured_image(200, 200, 58, 0.2, 0.9);
        let cfg = test_stack();
        let t = train(
            &img,
            &[Point::new(70.0, 70.0), Point::new(130.0, 140.0)],
            &cfg,
            "s",
        )
        .unwrap();
        let search = SearchConfig {
            subregion: 80,
            ..SearchConfig::default()
        };
        let a = find(&img, &t, &search).unwrap();
        let b = find(&img, &t, &search).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn find_argmax_invariant_under_affine_intensity() {
        let img = textured_image(200, 200, 59, 0.25, 0.85);
        let remapped = Image::from_vec(
            200,
            200,
            img.data().iter().map(|&v| 0.9 * v + 0.05).collect(),
        )
        .unwrap();
        let cfg = test_stack();
        let t = train(&img, &[Point::new(100.0, 100.0)], &cfg, "s").unwrap();
        let search = SearchConfig {
            subregion: 100,
            ..SearchConfig::default()
        };
        let a = find(&img, &t, &search).unwrap();
        let b = find(&remapped, &t, &search).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn find_with_threshold_reports_both_copies_of_a_pattern() {
        // High absolute scores need exact matches, so both copies sit on
        // seed centers (subregion 61 puts seeds at 30 + 61k) and the stamp
        // covers the full extraction support of the copied pattern.
        let mut img = textured_image(320, 200, 60, 0.2, 0.9);
        let src = Point::new(91.0, 91.0);
        let dst = Point::new(213.0, 91.0);
        crate::synth::stamp_patch(&mut img, src, 60, dst);
        let cfg = test_stack();
        let t = train(&img, &[src], &cfg, "s").unwrap();
        let search = SearchConfig {
            subregion: 61,
            threshold: 0.3,
            ..SearchConfig::default()
        };
        let result = find(&img, &t, &search).unwrap();
        assert!(
            result.candidates.len() >= 2,
            "expected both pattern copies above threshold, got {}",
            result.candidates.len()
        );
        let near_src = result
            .candidates
            .iter()
            .any(|c| c.final_location.distance(src) <= 8.0);
        let near_dst = result
            .candidates
            .iter()
            .any(|c| c.final_location.distance(dst) <= 8.0);
        assert!(near_src && near_dst);
    }

    #[test]
    fn exhaustive_baseline_counts_every_pixel_scale_and_pair() {
        // Literal enumeration on a tiny case.
        let mut count = 0u64;
        for _y in 0..7 {
            for _x in 0..5 {
                for _s in 0..3 {
                    count += 19 * 19;
                }
            }
        }
        assert_eq!(exhaustive_scan_evaluations(5, 7, 3), count);
    }
}
