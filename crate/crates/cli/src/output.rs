//! Candidate CSV and overlay rendering for the `find` subcommand.

use hiermatch_core::matcher::FindResult;
use hiermatch_core::{Image, Point};

/// One row per candidate: element and layer indices are 1-based.
pub fn candidates_csv(result: &FindResult) -> String {
    let mut out = String::from(
        "key_point,seed_x,seed_y,l,l_prime,m_prime,scale,cl_x,cl_y,fl_x,fl_y,eval,degenerate\n",
    );
    for c in &result.candidates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{:.6e},{}\n",
            c.key_point_index,
            c.seed.x,
            c.seed.y,
            c.coarse.query_element,
            c.coarse.template_element,
            c.coarse.template_layer,
            c.coarse.scale,
            c.coarse.corrected_location.x,
            c.coarse.corrected_location.y,
            c.final_location.x,
            c.final_location.y,
            c.eval_score,
            u8::from(c.degenerate)
        ));
    }
    out
}

/// Copy of the query image with a white 3x3 cross drawn at every final
/// location.
pub fn render_overlay(img: &Image, locations: &[Point]) -> Image {
    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    for p in locations {
        let (cx, cy) = (p.x.round() as i64, p.y.round() as i64);
        for (dx, dy) in [(0i64, 0i64), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (x, y) = (cx + dx, cy + dy);
            if x >= 0 && y >= 0 && x < w && y < h {
                out.set(x as usize, y as usize, 1.0);
            }
        }
    }
    out
}
