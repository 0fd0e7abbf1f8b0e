use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use derender_core::atlas::DEFAULT_CELL_RESOLUTION;
use derender_core::datagen::GenConfig;
use derender_core::export::{load_document, save_document};
use derender_core::imaging::{RasterImage, Rect};
use derender_core::refine::FreezeGroup;
use derender_core::suite::{SUITE_SEED, SUITE_SIZE};
use derender_cli::derender::{derender, DerenderRequest, Progress, WordSpec};
use derender_cli::eval::{ablation, evaluate, rows_to_csv};
use derender_cli::ops::{
    build_atlas_to, edit_value, generate_corpus, load_atlas_arg, parse_assignment, read_json,
    rebase_background, render_png, value_to_text, AtlasBuild,
};

#[derive(Parser)]
#[command(name = "derender", version, about = "Recover editable text parameters from raster images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize a font manifest into a glyph atlas.
    BuildAtlas {
        /// Font manifest; defaults to the bundled fonts.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CELL_RESOLUTION)]
        resolution: usize,
        /// Write one file per font into the `out` directory.
        #[arg(long)]
        sharded: bool,
    },
    /// Generate a synthetic corpus with ground-truth documents.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator settings; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        atlas: Option<PathBuf>,
    },
    /// Fit a document to an image. Word boxes and their texts are supplied
    /// by hand: there is no text detection or recognition.
    Derender {
        #[arg(long)]
        image: PathBuf,
        /// Word box `x,y,w,h` in pixels; repeat once per word.
        #[arg(long = "box", value_parser = parse_box, required = true)]
        boxes: Vec<Rect>,
        /// Text of each box, in the same order.
        #[arg(long = "text", required = true)]
        texts: Vec<String>,
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-word report (JSON); printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Start from the perturbed parameters of this ground-truth document
        /// instead of the image-based initialization.
        #[arg(long)]
        perturb: Option<PathBuf>,
        /// Print progress events to stderr.
        #[arg(long)]
        verbose: bool,
    },
    /// Render a document to PNG.
    Render {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        atlas: Option<PathBuf>,
    },
    /// Patch document fields by dotted path, e.g. `elements[0].text=NEW`.
    Edit {
        #[arg(long)]
        doc: PathBuf,
        #[arg(long = "set", value_parser = parse_assignment, required = true)]
        sets: Vec<(String, String)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        atlas: Option<PathBuf>,
    },
    /// Compare a predicted document with ground truth, or run the ablation study.
    Eval {
        #[arg(long, required_unless_present = "ablation")]
        truth: Option<PathBuf>,
        #[arg(long, required_unless_present = "ablation")]
        pred: Option<PathBuf>,
        /// Measure image error against this PNG instead of the truth render.
        #[arg(long)]
        image: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Refine the perturbed synthetic suite with parameter groups frozen.
        #[arg(long, conflicts_with_all = ["truth", "pred", "image"])]
        ablation: bool,
        /// Groups to freeze, one configuration each (ablation mode).
        #[arg(long = "freeze", value_parser = parse_group, default_values_t = [FreezeGroup::Color, FreezeGroup::Border].map(GroupArg))]
        freeze: Vec<GroupArg>,
        #[arg(long, default_value_t = SUITE_SEED)]
        seed: u64,
        #[arg(long, default_value_t = SUITE_SIZE)]
        count: usize,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
        iters: u64,
        #[arg(long)]
        atlas: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        atlas: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy)]
struct GroupArg(FreezeGroup);

impl std::fmt::Display for GroupArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.0.name())
    }
}

fn parse_group(s: &str) -> Result<GroupArg, String> {
    FreezeGroup::parse(s).map(GroupArg).map_err(|e| e.to_string())
}

fn parse_box(s: &str) -> Result<Rect, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("box `{s}`: {e}"))?;
    match v[..] {
        [x, y, w, h] if v.iter().all(|c| c.is_finite()) && w > 0.0 && h > 0.0 => Ok(Rect::from_xywh(x, y, w, h)),
        _ => Err(format!("box `{s}` must be x,y,w,h with positive width and height")),
    }
}

fn write_out(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildAtlas {
            manifest,
            out,
            resolution,
            sharded,
        } => {
            let atlas = build_atlas_to(&AtlasBuild { manifest, resolution, sharded }, &out)?;
            eprintln!(
                "atlas: {} fonts x {} glyphs at {}px -> {}",
                atlas.num_fonts(),
                atlas.glyphs().len(),
                atlas.cell_resolution(),
                out.display()
            );
        }
        Command::Gen {
            out,
            config,
            seed,
            count,
            atlas,
        } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_value::<GenConfig>(read_json(&p)?)
                    .with_context(|| format!("generator config {}", p.display()))?,
                None => GenConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = count {
                cfg.count = c;
            }
            let atlas = load_atlas_arg(atlas.as_deref())?;
            let n = generate_corpus(&cfg, &atlas, &out)?;
            eprintln!("wrote {n} samples to {}", out.display());
        }
        Command::Derender {
            image,
            boxes,
            texts,
            atlas,
            iters,
            seed,
            out,
            report,
            perturb,
            verbose,
        } => {
            if boxes.len() != texts.len() {
                bail!("{} --box flags but {} --text flags; give one text per box", boxes.len(), texts.len());
            }
            let image = RasterImage::load_png(&image)?;
            let perturb = perturb.map(|p| load_document(&p)).transpose()?;
            let atlas = load_atlas_arg(atlas.as_deref())?;
            let req = DerenderRequest {
                image,
                words: boxes
                    .into_iter()
                    .zip(texts)
                    .map(|(word_box, text)| WordSpec { word_box, text })
                    .collect(),
                iterations: iters as usize,
                seed,
                perturb,
            };
            let progress = |p: Progress| {
                let show = verbose || matches!(p, Progress::WordDone { .. });
                if show {
                    if let Ok(s) = serde_json::to_string(&p) {
                        eprintln!("{s}");
                    }
                }
            };
            let result = derender(&req, &atlas, &progress)?;
            save_document(&result.document, &out)?;
            let text = serde_json::to_string_pretty(&result.report)? + "\n";
            match report {
                Some(p) => write_out(&p, text.as_bytes())?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Render { doc, out, scale, atlas } => {
            let doc = load_document(&doc)?;
            let atlas = load_atlas_arg(atlas.as_deref())?;
            write_out(&out, &render_png(&doc, &atlas, scale)?)?;
        }
        Command::Edit { doc, sets, out, atlas } => {
            let base = doc.parent().unwrap_or(Path::new("")).to_path_buf();
            let atlas = load_atlas_arg(atlas.as_deref())?;
            let mut value = edit_value(read_json(&doc)?, &sets, Some(&base), &atlas)?;
            let out_dir = out.parent().unwrap_or(Path::new(""));
            if std::path::absolute(out_dir).ok() != std::path::absolute(&base).ok() {
                rebase_background(&mut value, &base);
            }
            write_out(&out, value_to_text(&value).as_bytes())?;
        }
        Command::Eval {
            truth,
            pred,
            image,
            format,
            ablation: ablation_mode,
            freeze,
            seed,
            count,
            iters,
            atlas,
            out,
        } => {
            let atlas = load_atlas_arg(atlas.as_deref())?;
            let text = if ablation_mode {
                let mut configs = vec![Vec::new()];
                configs.extend(freeze.iter().map(|g| vec![g.0]));
                let table = ablation(&atlas, seed, count, iters as usize, &configs)?;
                match format {
                    Format::Json => {
                        let ordering = table.color_below_border();
                        let mut v = serde_json::to_value(&table)?;
                        v["color_below_border"] = serde_json::json!(ordering);
                        serde_json::to_string_pretty(&v)? + "\n"
                    }
                    Format::Csv => {
                        let mut w = csv::Writer::from_writer(Vec::new());
                        for r in &table.rows {
                            w.write_record([
                                r.frozen.join("+"),
                                r.mean_initial_psnr.to_string(),
                                r.mean_psnr.to_string(),
                                r.improved_fraction.to_string(),
                                r.font_accuracy.to_string(),
                                r.fill_accuracy.to_string(),
                                r.max_wall_time_s.to_string(),
                            ])?;
                        }
                        let header = "frozen,mean_initial_psnr,mean_psnr,improved_fraction,font_accuracy,fill_accuracy,max_wall_time_s\n";
                        header.to_string() + &String::from_utf8(w.into_inner()?)?
                    }
                }
            } else {
                let truth = load_document(truth.expect("required by clap"))?;
                let pred = load_document(pred.expect("required by clap"))?;
                let target = image.map(RasterImage::load_png).transpose()?;
                let table = evaluate(&truth, &pred, target.as_ref(), &atlas)?;
                match format {
                    Format::Json => serde_json::to_string_pretty(&table)? + "\n",
                    Format::Csv => rows_to_csv(&table.rows)?,
                }
            };
            match out {
                Some(p) => write_out(&p, text.as_bytes())?,
                None => std::io::stdout().write_all(text.as_bytes())?,
            }
        }
        Command::Serve { port, host, atlas } => {
            let atlas = Arc::new(load_atlas_arg(atlas.as_deref())?);
            let addr = SocketAddr::new(host, port);
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(derender_cli::service::serve(addr, atlas))?;
        }
    }
    Ok(())
}
