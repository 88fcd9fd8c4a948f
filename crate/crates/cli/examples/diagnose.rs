// Scratch diagnostics for candidate ranking.
use hiermatch_cli::bench::default_stack;
use hiermatch_core::matcher::{find, preselect_seeds, refine, scan_coarse, EvalMode, SearchConfig};
use hiermatch_core::synth::{sample_points, textured_image};
use hiermatch_core::template::train;
use hiermatch_core::transform::{apply_transform, map_point, TransformSpec};

fn main() {
    let img = textured_image(512, 512, 11, 0.2, 0.9);
    let stack = default_stack();
    let margin = stack.layer(6).unwrap().element_footprint_radius() + 1.0;
    let points = sample_points(512, 512, margin, 30, 7);
    let template = train(&img, &points, &stack, "diag").unwrap();

    let spec = TransformSpec::Scale { factor: 1.0 };
    let (query, cm) = apply_transform(&img, &spec).unwrap();

    let search = SearchConfig {
        scan_layer: Some(4),
        subregion: 96,
        eval_mode: EvalMode::AllElements,
        threshold: 0.0,
        energy_threshold: 0.0,
    };
    let result = find(&query, &template, &search).unwrap();
    let seeds = preselect_seeds(&query, 96, 0.0);

    let mut misses = 0;
    for (i, &p) in points.iter().enumerate() {
        let truth = map_point(&cm, p);
        let best = result.best_for(i).unwrap();
        let err = best.final_location.distance(truth);
        if err <= 8.0 {
            continue;
        }
        misses += 1;
        if misses > 4 {
            continue;
        }
        println!(
            "kp {i} truth ({:.1},{:.1}) err {err:.1}  winner: seed {} dist {} oob {} degen {}",
            truth.x,
            truth.y,
            best.seed_index,
            best.eval_total_distance,
            best.out_of_bounds,
            best.degenerate
        );
        // Rebuild every seed's candidate for this key point.
        for (s, &seed) in seeds.iter().enumerate() {
            let (coarse, _) = scan_coarse(&query, &template, i, seed, 4).unwrap();
            let (cand, _) = refine(
                &query,
                &template,
                i,
                s,
                seed,
                &coarse,
                EvalMode::AllElements,
            )
            .unwrap();
            let e = cand.final_location.distance(truth);
            if e <= 12.0 || s == best.seed_index {
                println!(
                    "   seed {s} ({:.0},{:.0}) seed->truth {:.0}px: m'={} scale={:.2} cl_err {:.1} fl_err {e:.1} dist {} coarse_sim_d {:.0}",
                    seed.x,
                    seed.y,
                    seed.distance(truth),
                    coarse.template_layer,
                    coarse.scale,
                    coarse.corrected_location.distance(truth),
                    cand.eval_total_distance,
                    -coarse.best_similarity.max(1e-300).ln()
                );
            }
        }
    }
    println!("total misses: {misses}/30");
}
