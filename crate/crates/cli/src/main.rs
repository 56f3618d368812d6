mod config;
mod manifest;
mod overlay;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use candle_core::DType;
use clap::{Parser, Subcommand, ValueEnum};
use tabstruct::datagen::{read_corpus, write_corpus, SynthConfig};
use tabstruct::detector::TableDetector;
use tabstruct::geometry::BBox;
use tabstruct::nn::image_to_tensor;
use tabstruct::pipeline::{content_boxes, crop_and_resize, evaluate, from_json, to_html, to_json, PageResult, Pipeline};
use tabstruct::recognizer::{pad_input, TableRecognizer};
use tabstruct::trainer::{train_detector, train_tsr, write_trace};

use config::TrainFile;
use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "tabstruct", version, about = "Table detection and structure recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Model {
    Det,
    Tsr,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an annotated synthetic corpus.
    Synth {
        #[arg(long, env = "TABSTRUCT_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, env = "TABSTRUCT_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train the detector or the structure recognizer on a corpus.
    Train {
        #[arg(value_enum)]
        model: Model,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, env = "TABSTRUCT_CONFIG")]
        config: Option<PathBuf>,
        /// Checkpoint path; the loss trace is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long, env = "TABSTRUCT_SEED")]
        seed: Option<u64>,
    },
    /// Detect tables and recognize their structure.
    Infer {
        /// Page images; content ids stay empty for these.
        images: Vec<PathBuf>,
        /// Process a corpus instead, using its text boxes as content.
        #[arg(long, conflicts_with = "images")]
        corpus: Option<PathBuf>,
        #[arg(long, env = "TABSTRUCT_DETECTOR")]
        detector: PathBuf,
        #[arg(long, env = "TABSTRUCT_RECOGNIZER")]
        recognizer: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write one HTML file per page.
        #[arg(long)]
        html: bool,
        #[arg(long, env = "TABSTRUCT_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Score inference results against a corpus.
    Eval {
        /// Directory of page JSON files named after the corpus ids.
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a page result onto its image.
    Overlay {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// With a recognizer, separator heatmaps and the unmerged grid are drawn too.
        #[arg(long, env = "TABSTRUCT_RECOGNIZER")]
        recognizer: Option<PathBuf>,
    },
}

fn parent(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    ensure!(path.is_file(), "{what} {} does not exist", path.display());
    Ok(())
}

fn synth(config: Option<PathBuf>, out: PathBuf, count: usize, seed: u64) -> Result<()> {
    let cfg: SynthConfig = config::load(config.as_deref())?;
    cfg.validate()?;
    let mut m = RunManifest::new("synth");
    m.config_path = config;
    m.seed = Some(seed);
    m.outputs.push(out.clone());
    m.settings = serde_json::to_value(&cfg)?;
    m.write(&out)?;
    write_corpus(&out, &cfg, seed, count)?;
    log::info!("wrote {count} pages to {}", out.display());
    Ok(())
}

fn train(model: Model, corpus: PathBuf, config: Option<PathBuf>, out: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut file: TrainFile = config::load(config.as_deref())?;
    if let Some(s) = seed {
        file.train.seed = s;
    }
    file.train.validate()?;
    let items = read_corpus(&corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let trace_path = out.with_extension("trace.csv");
    let mut m = RunManifest::new(match model {
        Model::Det => "train det",
        Model::Tsr => "train tsr",
    });
    m.config_path = config;
    m.seed = Some(file.train.seed);
    m.inputs.push(corpus);
    m.outputs = vec![out.clone(), trace_path.clone()];
    m.settings = serde_json::to_value(&file)?;
    m.write(&parent(&out))?;
    let seed = file.train.seed;
    match model {
        Model::Det => {
            let net = TableDetector::new(file.detector_config(), DType::F32, seed)?;
            let trace = train_detector(&net, &items, &file.train)?;
            net.save(&out)?;
            write_trace(&trace_path, ["corner", "frcn"], &trace)?;
        }
        Model::Tsr => {
            let net = TableRecognizer::new(file.recognizer_config(), DType::F32, seed)?;
            let trace = train_tsr(&net, &items, &file.train)?;
            net.save(&out)?;
            write_trace(&trace_path, ["split", "merge"], &trace)?;
        }
    }
    log::info!("saved {}", out.display());
    Ok(())
}

fn load_pipeline(detector: &Path, recognizer: &Path) -> Result<Pipeline> {
    require_file(detector, "detector checkpoint")?;
    require_file(recognizer, "recognizer checkpoint")?;
    Ok(Pipeline {
        detector: TableDetector::load(detector, DType::F32).with_context(|| format!("loading {}", detector.display()))?,
        recognizer: TableRecognizer::load(recognizer, DType::F32)
            .with_context(|| format!("loading {}", recognizer.display()))?,
    })
}

#[allow(clippy::too_many_arguments)]
fn infer(
    images: Vec<PathBuf>,
    corpus: Option<PathBuf>,
    detector: PathBuf,
    recognizer: PathBuf,
    out: PathBuf,
    html: bool,
    workers: usize,
) -> Result<()> {
    ensure!(workers >= 1, "--workers must be at least 1");
    let pipeline = load_pipeline(&detector, &recognizer)?;
    let mut pages = Vec::new();
    let mut inputs = Vec::new();
    if let Some(dir) = &corpus {
        for item in read_corpus(dir)? {
            pages.push((item.id.clone(), item.load_image()?, content_boxes(&item.annotation)));
        }
        inputs.push(dir.clone());
    } else {
        ensure!(!images.is_empty(), "no input images given");
        for p in &images {
            let id = p.file_stem().context("image path without a file name")?.to_string_lossy().into_owned();
            let img = image::open(p).with_context(|| format!("reading {}", p.display()))?.to_rgb8();
            pages.push((id, img, Vec::new()));
        }
        inputs = images;
    }
    let mut m = RunManifest::new("infer").checkpoint(&detector)?.checkpoint(&recognizer)?;
    m.inputs = inputs;
    m.outputs = pages.iter().map(|(id, _, _)| out.join(format!("{id}.json"))).collect();
    m.settings = serde_json::json!({ "workers": workers, "html": html });
    m.write(&out)?;
    for res in pipeline.process_pages(&pages, workers)? {
        fs::write(out.join(format!("{}.json", res.image)), to_json(&res)?)?;
        if html {
            let body: String = res.tables.iter().map(|t| to_html(&t.spans(), t.grid.rows)).collect::<Vec<_>>().join("\n");
            fs::write(out.join(format!("{}.html", res.image)), format!("<html><body>\n{body}\n</body></html>\n"))?;
        }
    }
    Ok(())
}

fn eval(pred: PathBuf, gt: PathBuf, out: PathBuf) -> Result<()> {
    let items = read_corpus(&gt)?;
    let mut results = Vec::with_capacity(items.len());
    for item in &items {
        let path = pred.join(format!("{}.json", item.id));
        let text = fs::read_to_string(&path).with_context(|| format!("missing prediction {}", path.display()))?;
        let res: PageResult = from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        results.push(res);
    }
    let mut m = RunManifest::new("eval");
    m.inputs = vec![pred, gt];
    m.outputs.push(out.clone());
    m.write(&parent(&out))?;
    let docs: Vec<_> = items.into_iter().map(|i| i.annotation).collect();
    let report = evaluate(&results, &docs)?;
    fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
    println!(
        "WAvg F1 {:.4}  adjacency F1 {:.4}  TEDS-Struct {:.4}",
        report.wavg_f1, report.mean_adjacency_f1, report.mean_teds_struct
    );
    Ok(())
}

fn draw(image: PathBuf, result: PathBuf, out: PathBuf, recognizer: Option<PathBuf>) -> Result<()> {
    let mut img = image::open(&image).with_context(|| format!("reading {}", image.display()))?.to_rgb8();
    let res = from_json(&fs::read_to_string(&result)?)?;
    let mut m = RunManifest::new("overlay");
    if let Some(r) = &recognizer {
        require_file(r, "recognizer checkpoint")?;
        m = m.checkpoint(r)?;
    }
    m.inputs = vec![image, result];
    m.outputs.push(out.clone());
    m.write(&parent(&out))?;
    let rec = recognizer.map(|r| TableRecognizer::load(&r, DType::F32)).transpose()?;
    let page = img.clone();
    for table in &res.tables {
        let quad = tabstruct::geometry::Quad::from_array(table.quad)?;
        if let Some(rec) = &rec {
            let region: BBox = quad.hull();
            let (crop, t) = crop_and_resize(&page, &region, rec.config().long_side)?;
            let x = pad_input(&image_to_tensor(&crop, DType::F32)?)?;
            let (_, logits) = rec.split_forward(&x, false)?;
            let masks = logits.probabilities()?;
            let (cw, ch) = (crop.width() as f64, crop.height() as f64);
            overlay::blend_heatmap(&mut img, &masks.row, 8.0, 1.0, &t, cw, ch, true);
            overlay::blend_heatmap(&mut img, &masks.col, 1.0, 8.0, &t, cw, ch, false);
            if let Some(grid) = rec.recognize_structure(&crop)?.grid {
                for cell in &grid.cells {
                    overlay::draw_quad(&mut img, &cell.map(|p| t.inverse(p)), overlay::GRID_COLOR);
                }
            }
        }
        for cell in &table.cells {
            overlay::draw_quad(&mut img, &tabstruct::geometry::Quad::from_array(cell.quad)?, overlay::CELL_COLOR);
        }
        overlay::draw_quad(&mut img, &quad, overlay::TABLE_COLOR);
    }
    img.save(&out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, out, count, seed } => synth(config, out, count, seed),
        Command::Train { model, corpus, config, out, seed } => train(model, corpus, config, out, seed),
        Command::Infer { images, corpus, detector, recognizer, out, html, workers } => {
            infer(images, corpus, detector, recognizer, out, html, workers)
        }
        Command::Eval { pred, gt, out } => eval(pred, gt, out),
        Command::Overlay { image, result, out, recognizer } => draw(image, result, out, recognizer),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parent_of_bare_name_is_cwd() {
        assert_eq!(parent(Path::new("report.json")), PathBuf::from("."));
        assert_eq!(parent(Path::new("a/b.json")), PathBuf::from("a"));
    }

    #[test]
    fn unknown_train_key_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.toml");
        fs::write(&p, "[train]\nbase_lr = 0.1\nmomentom = 0.9\n").unwrap();
        let err = config::load::<TrainFile>(Some(&p)).unwrap_err().to_string();
        assert!(err.contains("momentom"), "{err}");
    }
}
