use std::collections::BTreeSet;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tfq::gray::GrayImage;
use tfq::nn::gradcheck::{gradcheck_suite, TOLERANCE};
use tfq::nn::{load_model, save_model, train_metric, AdamConfig, Metric, MseMetric, PairSet, SiameseMetric, TrainConfig};
use tfq::raycast::{render, RenderSettings};
use tfq::search::{run_search, Init, SearchConfig};
use tfq::tf::{seed_population, SeedConfig, TransferFunction, DEFAULT_LEVELS};
use tfq::volume::Volume;

/// Find volume transfer functions whose renders look like a target picture.
#[derive(Parser)]
#[command(name = "tfq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the pair-labeling API over an image directory.
    ServePairs {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value = "pairs.jsonl")]
        out: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Fix the session order; random when omitted.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the Siamese metric on labeled pairs.
    Train {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value = "model.bin")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
        batch_size: u64,
        #[arg(long, default_value_t = 1e-4)]
        learning_rate: f64,
        /// Also write the per-epoch mean loss as a JSON array.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Evolve a transfer function towards a target image.
    Search {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricKind::Siamese)]
        metric: MetricKind,
        /// Trained model, required by the siamese metric.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 600, value_parser = clap::value_parser!(u64).range(3..))]
        pop: u64,
        #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
        gens: u64,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        workers: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = InitKind::Seeded)]
        init: InitKind,
        #[arg(long, default_value = "tf.json")]
        out: PathBuf,
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        #[command(flatten)]
        view: View,
    },
    /// Render a volume through a transfer function to a grayscale PNG.
    Render {
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        tf: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        view: View,
    },
    /// Print the metric distance between two images.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write an initial population of window chromosomes.
    SeedPop {
        #[arg(long, default_value_t = 600, value_parser = clap::value_parser!(u64).range(1..))]
        pop: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Opacity levels of the windows.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LEVELS)]
        levels: Vec<u8>,
    },
    /// Write a synthetic cloud-like volume.
    SynthVolume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..=1024))]
        size: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Siamese,
    Mse,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Seeded,
    Random,
}

#[derive(clap::Args)]
struct View {
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..=8192))]
    width: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..=8192))]
    height: u64,
    /// Gray level behind the volume, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    background: f64,
}

impl View {
    fn settings(&self) -> Result<RenderSettings> {
        Ok(RenderSettings::new(self.width as usize, self.height as usize, self.background, 1.0)?)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::ServePairs {
            images,
            out,
            port,
            host,
            seed,
        } => {
            require_dir(&images)?;
            let cfg = tfq_studio::StudioConfig { images, out, seed };
            tfq_studio::serve_blocking(SocketAddr::new(host, port), &cfg)?;
        }
        Command::Train {
            images,
            pairs,
            epochs,
            out,
            seed,
            batch_size,
            learning_rate,
            loss_log,
        } => {
            require_dir(&images)?;
            let set = PairSet::load(&pairs)?;
            let cfg = TrainConfig {
                epochs: epochs as usize,
                batch_size: batch_size as usize,
                seed,
                adam: AdamConfig {
                    learning_rate,
                    ..AdamConfig::default()
                },
            };
            let outcome = train_metric(&images, &set, &cfg)?;
            save_model(&outcome.model, &out)?;
            if let Some(path) = loss_log {
                write_atomic(&path, serde_json::to_string(&outcome.epoch_losses)?.as_bytes())?;
            }
            log::info!("model written to {}", out.display());
        }
        Command::Search {
            volume,
            target,
            metric,
            model,
            pop,
            gens,
            workers,
            seed,
            init,
            out,
            report,
            view,
        } => {
            let metric: Box<dyn Metric> = match (metric, model) {
                (MetricKind::Mse, _) => Box::new(MseMetric),
                (MetricKind::Siamese, Some(path)) => Box::new(SiameseMetric::new(load_model(&path)?)),
                (MetricKind::Siamese, None) => bail!("--metric siamese needs --model"),
            };
            let volume = Volume::load(&volume)?.bin();
            let target = GrayImage::load(&target)?;
            let cfg = SearchConfig {
                generations: gens as usize,
                pop_size: pop as usize,
                workers: workers as usize,
                seed,
                init: match init {
                    InitKind::Seeded => Init::Seeded,
                    InitKind::Random => Init::Random,
                },
                render: view.settings()?,
                ..SearchConfig::default()
            };
            let outcome = run_search(&volume, &target, metric.as_ref(), &cfg)?;
            write_atomic(&out, outcome.transfer_function.to_json().as_bytes())?;
            write_atomic(&report, outcome.report.to_json().as_bytes())?;
            log::info!(
                "best cost {:.6} (generation {}), transfer function written to {}",
                outcome.report.best.cost,
                outcome.report.best.generation + 1,
                out.display()
            );
        }
        Command::Render { volume, tf, out, view } => {
            let volume = Volume::load(&volume)?.bin();
            let text = std::fs::read_to_string(&tf).with_context(|| tf.display().to_string())?;
            let tf = TransferFunction::from_json(&text).with_context(|| tf.display().to_string())?;
            let img = render(&volume, &tf, &view.settings()?);
            save_png_atomic(&img, &out)?;
        }
        Command::Eval { model, a, b } => {
            let model = load_model(&model)?;
            let (w, h) = model.input_side();
            let a = GrayImage::load(&a)?.resample(w, h);
            let b = GrayImage::load(&b)?.resample(w, h);
            println!("{}", model.distance(&a, &b)?);
        }
        Command::Gradcheck { seed } => {
            let results = gradcheck_suite(seed)?;
            let mut failed = 0;
            for r in &results {
                let verdict = if r.passed() { "ok" } else { "FAIL" };
                println!("{verdict:4} {:28} {:6} checked  max rel error {:.3e}", r.name, r.checked, r.max_rel_error);
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                bail!("{failed} gradient checks exceeded relative error {TOLERANCE:e}");
            }
        }
        Command::SeedPop { pop, out, seed, levels } => {
            let cfg = SeedConfig {
                levels: levels.into_iter().collect::<BTreeSet<u8>>(),
                ..SeedConfig::new(pop as usize)
            };
            let population = seed_population(&cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let genes: Vec<&[u8; 16]> = population.iter().map(|c| c.genes()).collect();
            let json = serde_json::json!({ "version": 1, "chromosomes": genes });
            write_atomic(&out, json.to_string().as_bytes())?;
        }
        Command::SynthVolume { out, size, seed } => {
            let v = tfq::synth::storm(size as usize, seed);
            write_atomic(&out, &v.to_bytes())?;
        }
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("{} is not a directory", path.display());
    }
    Ok(())
}

fn temp_beside(path: &Path, suffix: &str) -> Result<tempfile::NamedTempFile> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut builder = tempfile::Builder::new();
    builder.prefix(".tfq-").suffix(suffix);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(std::fs::Permissions::from_mode(0o644));
    }
    builder
        .tempfile_in(dir)
        .with_context(|| format!("creating a temporary file next to {}", path.display()))
}

/// Writes beside `path` and renames, so a failed run leaves no partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = temp_beside(path, ".tmp")?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| path.display().to_string())?;
    Ok(())
}

fn save_png_atomic(img: &GrayImage, path: &Path) -> Result<()> {
    let tmp = temp_beside(path, ".png")?;
    img.save(tmp.path())?;
    tmp.persist(path).with_context(|| path.display().to_string())?;
    Ok(())
}
