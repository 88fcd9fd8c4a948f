use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hiermatch_cli::bench::{emit_report, format_table, run_benchmark, BenchConfig};
use hiermatch_cli::output::{candidates_csv, render_overlay};
use hiermatch_core::error::{Error, Result};
use hiermatch_core::gabor::{make_kernel, GaborBank, BANDWIDTH_OCTAVES};
use hiermatch_core::matcher::{find, EvalMode, SearchConfig};
use hiermatch_core::raster::{load_image, save_pgm};
use hiermatch_core::synth::{sample_points, textured_image};
use hiermatch_core::template::{load_template, save_template, train};
use hiermatch_core::topology::StackConfig;
use hiermatch_core::transform::{apply_transform, TransformSpec};
use hiermatch_core::Point;

#[derive(Parser)]
#[command(
    name = "hiermatch",
    version,
    about = "Multi-scale Gabor feature extraction and coarse-to-fine template matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StackArgs {
    /// Number of stack layers M
    #[arg(long, default_value_t = 6)]
    layers: usize,
    /// Envelope scale of layer 1 in pixels
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Number of kernel orientations
    #[arg(long, default_value_t = 4)]
    orientations: usize,
    /// Element spacing as a multiple of the element inner-ring diameter
    #[arg(long, default_value_t = 0.6)]
    spacing_factor: f64,
}

impl StackArgs {
    fn to_config(&self) -> StackConfig {
        StackConfig {
            num_layers: self.layers,
            base_sigma: self.sigma,
            orientations: self.orientations,
            element_spacing_factor: self.spacing_factor,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a template around key points of a reference image
    Train {
        /// Reference image (PGM or PNG)
        #[arg(long)]
        image: PathBuf,
        /// Explicit key points as "x1,y1;x2,y2;..."
        #[arg(long, conflicts_with = "random")]
        points: Option<String>,
        /// Sample this many random key points instead
        #[arg(long)]
        random: Option<usize>,
        /// Seed for --random sampling
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        stack: StackArgs,
        /// Free-text identifier stored in the template
        #[arg(long)]
        id: Option<String>,
        /// Output template file
        #[arg(long)]
        out: PathBuf,
    },
    /// Search a query image for a template's key points
    Find {
        /// Query image (PGM or PNG)
        #[arg(long)]
        image: PathBuf,
        /// Template file written by `train`
        #[arg(long)]
        template: PathBuf,
        /// Side of the square subregions tiling the image
        #[arg(long, default_value_t = 150)]
        subregion: usize,
        /// Layer used for coarse scanning (default M-1)
        #[arg(long)]
        scan_layer: Option<usize>,
        /// Elements in the final evaluation: 19 or 1
        #[arg(long, default_value_t = 19)]
        eval_elements: usize,
        /// Return all candidates scoring at least this (0 = best per point)
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Drop subregions with mean gradient magnitude below this
        #[arg(long, default_value_t = 0.0)]
        energy_threshold: f64,
        /// Candidate CSV output (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write a copy of the query image with crosses at found locations
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
    /// Run the transformation-robustness benchmark and emit a rate table
    Bench {
        /// Reference image; omitted = generate the synthetic corpus image
        #[arg(long)]
        image: Option<PathBuf>,
        /// Side of the generated synthetic image
        #[arg(long, default_value_t = 512)]
        synth_size: usize,
        /// Seed for the synthetic image
        #[arg(long, default_value_t = 11)]
        synth_seed: u64,
        /// Number of random key points
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Seed for point sampling and pixel noise
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Hit tolerance in pixels
        #[arg(long, default_value_t = 8.0)]
        tolerance: f64,
        #[arg(long, default_value_t = 150)]
        subregion: usize,
        /// Layer used for coarse scanning (default M-1)
        #[arg(long)]
        scan_layer: Option<usize>,
        /// Run only this evaluation mode (19 or 1); default runs both
        #[arg(long)]
        eval_elements: Option<usize>,
        /// Custom transform rows as ";"-separated specs (default: the
        /// nine benchmark rows)
        #[arg(long)]
        transforms: Option<String>,
        #[command(flatten)]
        stack: StackArgs,
        /// Report CSV path
        #[arg(long, default_value = "report.csv")]
        out: PathBuf,
    },
    /// Apply one transformation and write the image plus its coordinate map
    Transform {
        #[arg(long)]
        image: PathBuf,
        /// Spec such as "scale:0.7" or "contrast:1.2+brightness:-0.2"
        #[arg(long)]
        spec: String,
        /// Seed for the pixel-noise transform
        #[arg(long, default_value_t = 7)]
        noise_seed: u64,
        /// Transformed image output (PGM)
        #[arg(long)]
        out: PathBuf,
        /// CSV file receiving the forward map row "a,b,c,d,tx,ty"
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Emit the stack's element and receptive-field offsets as CSV
    InspectGeometry {
        #[command(flatten)]
        stack: StackArgs,
        /// Restrict output to one layer
        #[arg(long)]
        layer: Option<usize>,
        /// Output CSV (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also dump one kernel's weight grid: "layer,orientation_index"
        #[arg(long)]
        dump_kernel: Option<String>,
        /// Path for the kernel grid CSV
        #[arg(long, default_value = "kernel.csv")]
        kernel_out: PathBuf,
    },
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// HIERMATCH_THREADS caps the worker pool; 0 or unset selects automatically.
fn configure_threads() {
    if let Ok(value) = std::env::var("HIERMATCH_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            image,
            points,
            random,
            seed,
            stack,
            id,
            out,
        } => {
            let img = load_image(&image)?;
            let cfg = stack.to_config();
            let pts = match (points, random) {
                (Some(text), _) => parse_points(&text)?,
                (None, Some(n)) => {
                    let margin = cfg.layer(cfg.num_layers)?.element_footprint_radius() + 1.0;
                    sample_points(img.width(), img.height(), margin, n, seed)
                }
                (None, None) => {
                    return Err(Error::InvalidParam(
                        "pass --points or --random N".into(),
                    ))
                }
            };
            let source_id = id.unwrap_or_else(|| image.display().to_string());
            let template = train(&img, &pts, &cfg, &source_id)?;
            save_template(&template, &out)?;
            println!(
                "trained {} key points over {} layers -> {}",
                template.key_points.len(),
                cfg.num_layers,
                out.display()
            );
            Ok(())
        }
        Command::Find {
            image,
            template,
            subregion,
            scan_layer,
            eval_elements,
            threshold,
            energy_threshold,
            out,
            overlay,
        } => {
            let img = load_image(&image)?;
            let tpl = load_template(&template)?;
            let search = SearchConfig {
                scan_layer,
                subregion,
                eval_mode: parse_eval_mode(eval_elements)?,
                threshold,
                energy_threshold,
            };
            let result = find(&img, &tpl, &search)?;
            let csv = candidates_csv(&result);
            match &out {
                Some(path) => write_text(path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(path) = overlay {
                let locations: Vec<Point> = result
                    .candidates
                    .iter()
                    .map(|c| c.final_location)
                    .collect();
                save_pgm(&render_overlay(&img, &locations), path)?;
            }
            eprintln!(
                "{} candidates, {} similarity evaluations",
                result.candidates.len(),
                result.stats.similarity_evaluations
            );
            Ok(())
        }
        Command::Bench {
            image,
            synth_size,
            synth_seed,
            points,
            seed,
            tolerance,
            subregion,
            scan_layer,
            eval_elements,
            transforms,
            stack,
            out,
        } => {
            let img = match image {
                Some(path) => load_image(&path)?,
                None => textured_image(synth_size, synth_size, synth_seed, 0.2, 0.9),
            };
            let mut cfg = BenchConfig::new(seed);
            cfg.n_points = points;
            cfg.tolerance = tolerance;
            cfg.subregion = subregion;
            cfg.scan_layer = scan_layer;
            cfg.stack = stack.to_config();
            if let Some(t) = eval_elements {
                cfg.eval_modes = vec![parse_eval_mode(t)?];
            }
            if let Some(list) = transforms {
                cfg.transforms = list
                    .split(';')
                    .map(|s| TransformSpec::parse(s.trim(), seed))
                    .collect::<Result<_>>()?;
            }
            let result = run_benchmark(&img, &cfg)?;
            emit_report(&result, &out)?;
            print!("{}", format_table(&result));
            println!("report -> {}", out.display());
            Ok(())
        }
        Command::Transform {
            image,
            spec,
            noise_seed,
            out,
            map,
        } => {
            let img = load_image(&image)?;
            let parsed = TransformSpec::parse(&spec, noise_seed)?;
            let (transformed, coord_map) = apply_transform(&img, &parsed)?;
            save_pgm(&transformed, &out)?;
            if let Some(path) = map {
                write_text(&path, &format!("{}\n", coord_map.to_csv_row()))?;
            }
            println!(
                "{} -> {} ({}x{})",
                parsed,
                out.display(),
                transformed.width(),
                transformed.height()
            );
            Ok(())
        }
        Command::InspectGeometry {
            stack,
            layer,
            out,
            dump_kernel,
            kernel_out,
        } => {
            let cfg = stack.to_config();
            let layers: Vec<usize> = match layer {
                Some(m) => vec![m],
                None => (1..=cfg.num_layers).collect(),
            };
            let mut csv = String::from("layer,sigma,rf_radius,kind,index,x,y\n");
            for &m in &layers {
                let g = cfg.layer(m)?;
                for (i, p) in g.element_offsets.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{},element,{},{},{}\n",
                        m,
                        g.sigma,
                        g.rf_radius,
                        i + 1,
                        p.x,
                        p.y
                    ));
                }
                for (i, p) in g.rf_offsets.iter().enumerate() {
                    csv.push_str(&format!(
                        "{},{},{},rf,{},{},{}\n",
                        m,
                        g.sigma,
                        g.rf_radius,
                        i + 1,
                        p.x,
                        p.y
                    ));
                }
            }
            match &out {
                Some(path) => write_text(path, &csv)?,
                None => print!("{csv}"),
            }
            if let Some(which) = dump_kernel {
                let (m, orientation) = parse_kernel_ref(&which)?;
                let g = cfg.layer(m)?;
                let bank = GaborBank::new(g.sigma, BANDWIDTH_OCTAVES, cfg.orientations);
                if orientation >= bank.orientations.len() {
                    return Err(Error::InvalidParam(format!(
                        "orientation index {orientation} out of range 0..{}",
                        bank.orientations.len()
                    )));
                }
                let kernel = make_kernel(g.sigma, bank.orientations[orientation], BANDWIDTH_OCTAVES);
                write_text(&kernel_out, &kernel.to_csv())?;
                println!("kernel layer {m} orientation {orientation} -> {}", kernel_out.display());
            }
            Ok(())
        }
    }
}

fn parse_eval_mode(t: usize) -> Result<EvalMode> {
    match t {
        19 => Ok(EvalMode::AllElements),
        1 => Ok(EvalMode::MatchedOnly),
        other => Err(Error::InvalidParam(format!(
            "eval elements must be 19 or 1, got {other}"
        ))),
    }
}

fn parse_points(text: &str) -> Result<Vec<Point>> {
    text.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            let (x, y) = pair
                .split_once(',')
                .ok_or_else(|| Error::InvalidParam(format!("point `{pair}`: expected x,y")))?;
            let parse = |v: &str| -> Result<f64> {
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidParam(format!("point `{pair}`: bad number")))
            };
            Ok(Point::new(parse(x)?, parse(y)?))
        })
        .collect()
}

fn parse_kernel_ref(text: &str) -> Result<(usize, usize)> {
    let (m, o) = text
        .split_once(',')
        .ok_or_else(|| Error::InvalidParam("expected layer,orientation".into()))?;
    let m = m
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam("bad kernel layer".into()))?;
    let o = o
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParam("bad kernel orientation".into()))?;
    Ok((m, o))
}

fn write_text(path: &PathBuf, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}
