use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};

use rgbd_avatar::dataset::{
    build_capture_script, build_lowerface_dataset, build_paired_dataset, load_lowerface, load_paired, save_lowerface,
    save_paired, AugmentConfig, CaptureConfig,
};
use rgbd_avatar::flm::{rasterize, Resolution};
use rgbd_avatar::gan::{GanConfig, GanTrainer, GeneratorWeights};
use rgbd_avatar::mailbox::Mailbox;
use rgbd_avatar::metrics::evaluate;
use rgbd_avatar::recon::{postprocess, render_stereo, unproject, CameraModel, PostprocessConfig, DEFAULT_BASELINE_MM};
use rgbd_avatar::service::{format_latency, run_bench, spawn_service, BenchOptions, ServiceConfig, TrackerMode};
use rgbd_avatar::synth::{landmarks_at, ExpressionParams, IdentitySpec};
use rgbd_avatar::tracking::{train_lowerface_cnn, CnnConfig, LowerFaceWeights};
use rgbd_avatar::wire::{run_sender, spawn_receiver, SenderConfig, Transport};

type Result<T = ()> = std::result::Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "rgbd-avatar", version, about = "Landmark-driven RGBD face avatars")]
struct Cli {
    /// Log at debug level.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Copy)]
struct Subject {
    /// Seed of the synthetic person.
    #[arg(long, default_value_t = 7)]
    identity_seed: u64,
    /// Seed of the capture script's randomized parts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl Subject {
    fn identity(&self) -> IdentitySpec {
        IdentitySpec::from_seed(self.identity_seed)
    }

    fn capture(&self) -> CaptureConfig {
        CaptureConfig { seed: self.seed, ..CaptureConfig::default() }
    }
}

#[derive(Args, Clone, Copy)]
struct PostprocArgs {
    /// Depth erosion radius; defaults to the value stored with the weights.
    #[arg(long)]
    erode: Option<u32>,
    #[arg(long)]
    clip_near: Option<u8>,
    #[arg(long)]
    clip_far: Option<u8>,
}

impl PostprocArgs {
    fn resolve(&self, weights: &GeneratorWeights) -> Result<PostprocessConfig> {
        let d = PostprocessConfig::for_face_codes(weights.face_codes);
        let p = PostprocessConfig {
            erode_radius: self.erode.unwrap_or(d.erode_radius),
            clip_near: self.clip_near.unwrap_or(d.clip_near),
            clip_far: self.clip_far.unwrap_or(d.clip_far),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the scripted capture session into a paired landmark/RGBD dataset.
    SynthCapture {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 128)]
        resolution: u32,
        #[command(flatten)]
        subject: Subject,
    },
    /// Build the augmented lower-face camera dataset.
    BuildDataset {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[command(flatten)]
        subject: Subject,
    },
    /// Train the landmark-to-RGBD generator on the non-held-out items.
    TrainGan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
        preset: String,
        /// Override the preset's epoch count; the constant-rate phase stays half.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the lower-face landmark network.
    TrainCnn {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 15)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score generator weights on the held-out items.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        /// Score every item instead of the hold-out.
        #[arg(long)]
        all: bool,
        /// Write the full report here as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-item difference images here.
        #[arg(long)]
        diff_dir: Option<PathBuf>,
        #[command(flatten)]
        postproc: PostprocArgs,
    },
    /// Generate one frame and its stereo views from an expression.
    Infer {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Expression as JSON; omitted fields are neutral.
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long, default_value_t = 7)]
        identity_seed: u64,
        #[arg(long, default_value_t = DEFAULT_BASELINE_MM)]
        baseline: f64,
        #[command(flatten)]
        postproc: PostprocArgs,
    },
    /// Run the live service with its HTTP control surface.
    Serve {
        /// JSON configuration; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        cnn: Option<PathBuf>,
        #[arg(long)]
        tracker: Option<TrackerMode>,
        #[arg(long)]
        addr: Option<String>,
        #[arg(long)]
        wire_out: Option<String>,
        #[arg(long)]
        wire_in: Option<String>,
        #[arg(long)]
        transport: Option<Transport>,
    },
    /// Stream scripted landmarks to a receiver.
    StreamSend {
        #[arg(long)]
        to: String,
        #[arg(long, default_value_t = 30.0)]
        rate: f64,
        #[arg(long, default_value_t = 300)]
        frames: u64,
        #[arg(long, default_value = "udp")]
        transport: Transport,
        #[command(flatten)]
        subject: Subject,
    },
    /// Receive landmark frames and report the measured rates.
    StreamRecv {
        #[arg(long)]
        listen: String,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value = "udp")]
        transport: Transport,
    },
    /// Time the landmarks-to-stereo chain back to back.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        cnn: Option<PathBuf>,
        #[arg(long, default_value = "oracle")]
        tracker: TrackerMode,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn print_json(value: &impl serde::Serialize) -> Result {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn synth_capture(out: &Path, resolution: u32, subject: Subject) -> Result {
    let script = build_capture_script(&subject.capture());
    let data = build_paired_dataset(&script, &subject.identity(), Resolution::square(resolution))?;
    save_paired(&data, out)?;
    println!("{} frames at {} written to {}", data.len(), data.resolution, out.display());
    Ok(())
}

fn build_dataset(out: &Path, samples: usize, subject: Subject) -> Result {
    let script = build_capture_script(&subject.capture());
    let config = AugmentConfig { target: samples, seed: subject.seed, ..AugmentConfig::default() };
    let data = build_lowerface_dataset(&script, &subject.identity(), &config)?;
    save_lowerface(&data, out)?;
    println!(
        "{} samples ({} train, {} test) over {} landmarks written to {}",
        data.samples.len(),
        data.train.len(),
        data.test.len(),
        data.subset_indices.len(),
        out.display()
    );
    Ok(())
}

fn train_gan(data: &Path, out: &Path, preset: &str, epochs: Option<usize>, seed: u64) -> Result {
    let dataset = load_paired(data)?;
    let mut config = GanConfig::preset(preset).ok_or("unknown preset")?;
    config.seed = seed;
    config.resolution = dataset.resolution.width;
    if let Some(n) = epochs {
        config.epochs_total = n;
        config.epochs_const_lr = n / 2;
    }
    let train = dataset.subset(&dataset.training_indices());
    let mut trainer = GanTrainer::new(&train, config)?;
    let start = Instant::now();
    while !trainer.finished() {
        let e = trainer.run_epoch();
        println!(
            "epoch {:>3}  lr {:.2e}  g_adv {:.4}  l1 {:.4}  d {:.4}  {:.1}s",
            e.epoch, e.lr, e.g_adv, e.l1, e.d_loss, e.wall_s
        );
    }
    let weights = trainer.weights();
    weights.export(out)?;
    let post = PostprocessConfig::for_face_codes(weights.face_codes);
    let r = evaluate(&weights, &dataset, &dataset.holdout_indices(), post)?.report;
    println!(
        "trained in {:.0}s; hold-out of {}: ssim {:.4}, median depth error {:.2} mm",
        start.elapsed().as_secs_f64(),
        r.item_count,
        r.mean_ssim,
        r.median_depth_mm
    );
    Ok(())
}

fn train_cnn(data: &Path, out: &Path, config: CnnConfig) -> Result {
    let dataset = load_lowerface(data)?;
    let (weights, report) = train_lowerface_cnn(&dataset, &config)?;
    weights.export(out)?;
    print_json(&report)
}

fn evaluate_cmd(
    data: &Path,
    weights: &Path,
    all: bool,
    report: Option<&Path>,
    diff_dir: Option<&Path>,
    postproc: PostprocArgs,
) -> Result {
    let dataset = load_paired(data)?;
    let weights = GeneratorWeights::import(weights)?;
    let post = postproc.resolve(&weights)?;
    let indices = if all { (0..dataset.len()).collect() } else { dataset.holdout_indices() };
    let eval = evaluate(&weights, &dataset, &indices, post)?;
    let r = &eval.report;
    println!("items {}", r.item_count);
    println!("mean masked ssim {:.4}", r.mean_ssim);
    println!("median depth error {:.3} mm (mean {:.3} mm)", r.median_depth_mm, r.mean_depth_mm);
    println!("within 5 mm {:.1}%", 100.0 * r.mean_fraction_within_tolerance);
    if let Some(path) = report {
        fs::write(path, serde_json::to_vec_pretty(r)?)?;
    }
    if let Some(dir) = diff_dir {
        fs::create_dir_all(dir)?;
        for (item, img) in r.items.iter().zip(&eval.differences) {
            img.save(dir.join(format!("diff_{:04}.png", item.index)))?;
        }
    }
    Ok(())
}

fn infer(weights: &Path, out_dir: &Path, params: &str, identity_seed: u64, baseline: f64, postproc: PostprocArgs) -> Result {
    let weights = GeneratorWeights::import(weights)?;
    let post = postproc.resolve(&weights)?;
    let params: ExpressionParams = serde_json::from_str(params)?;
    let identity = IdentitySpec::from_seed(identity_seed);
    let flm = landmarks_at(&identity, &params, weights.resolution())?;
    let frame = weights.generator()?.generate(&rasterize(&flm))?;
    let cleaned = postprocess(&frame, post.erode_radius, (post.clip_near, post.clip_far));
    let capture = CameraModel::capture(weights.resolution());
    let cloud = unproject(&cleaned, &capture);
    let (l, r) = capture.stereo_pair(baseline);
    let (left, right, timing) = render_stereo(&cloud, &l, &r, 1);
    fs::create_dir_all(out_dir)?;
    cleaned.rgb_image().save(out_dir.join("rgb.png"))?;
    cleaned.depth_image().save(out_dir.join("depth.png"))?;
    left.to_image().save(out_dir.join("left.png"))?;
    right.to_image().save(out_dir.join("right.png"))?;
    cloud.write_text(&mut std::io::BufWriter::new(fs::File::create(out_dir.join("cloud.txt"))?))?;
    println!(
        "{} points; stereo views in {:.2} + {:.2} ms; written to {}",
        cloud.len(),
        timing.left_ms,
        timing.right_ms,
        out_dir.display()
    );
    Ok(())
}

fn stream_send(to: &str, rate: f64, frames: u64, transport: Transport, subject: Subject) -> Result {
    let script = build_capture_script(&subject.capture());
    let identity = subject.identity();
    let config = SenderConfig { endpoint: to.to_string(), rate_hz: rate, transport, frames: Some(frames) };
    let source = |i: u64| {
        let f = &script.frames[i as usize % script.frames.len()];
        landmarks_at(&identity, &f.params, Resolution::REFERENCE).ok()
    };
    let start = Instant::now();
    let stats = run_sender(&config, source, &AtomicBool::new(false))?;
    println!("sent {} frames in {:.2}s", stats.frames_sent, start.elapsed().as_secs_f64());
    Ok(())
}

fn stream_recv(listen: &str, seconds: f64, transport: Transport) -> Result {
    let sink = Arc::new(Mailbox::new());
    let receiver = spawn_receiver(listen, transport, sink)?;
    eprintln!("listening on {} for {seconds}s", receiver.local_addr());
    std::thread::sleep(Duration::from_secs_f64(seconds));
    let stats = receiver.stop();
    print_json(&stats)
}

fn serve(
    config: Option<&Path>,
    data: Option<PathBuf>,
    weights: Option<PathBuf>,
    cnn: Option<PathBuf>,
    tracker: Option<TrackerMode>,
    addr: Option<String>,
    wire: (Option<String>, Option<String>, Option<Transport>),
) -> Result {
    let mut cfg: ServiceConfig = match config {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => ServiceConfig::default(),
    };
    cfg.data_dir = data.unwrap_or(cfg.data_dir);
    cfg.gan_weights = weights.unwrap_or(cfg.gan_weights);
    cfg.cnn_weights = cnn.or(cfg.cnn_weights);
    cfg.tracker = tracker.unwrap_or(cfg.tracker);
    cfg.http_addr = addr.unwrap_or(cfg.http_addr);
    cfg.wire_out = wire.0.or(cfg.wire_out);
    cfg.wire_in = wire.1.or(cfg.wire_in);
    cfg.transport = wire.2.unwrap_or(cfg.transport);
    let handle = spawn_service(cfg)?;
    eprintln!("serving on http://{} (Ctrl-C to stop)", handle.local_addr());
    handle.wait()?;
    Ok(())
}

fn bench(data: &Path, weights: &Path, cnn: Option<&Path>, tracker: TrackerMode, frames: usize, seed: u64) -> Result {
    let dataset = load_paired(data)?;
    let weights = GeneratorWeights::import(weights)?;
    let cnn = cnn.map(LowerFaceWeights::import).transpose()?;
    let report = run_bench(&weights, &dataset, cnn.as_ref(), &BenchOptions { frames, mode: tracker, seed })?;
    print!("{}", format_latency(&report.latency));
    println!("{} frames in {:.2}s: {:.1} fps", report.frames, report.wall_s, report.fps);
    Ok(())
}

fn run(cli: Cli) -> Result {
    match cli.command {
        Command::SynthCapture { out, resolution, subject } => synth_capture(&out, resolution, subject),
        Command::BuildDataset { out, samples, subject } => build_dataset(&out, samples, subject),
        Command::TrainGan { data, out, preset, epochs, seed } => train_gan(&data, &out, &preset, epochs, seed),
        Command::TrainCnn { data, out, epochs, batch_size, lr, seed } => {
            let config = CnnConfig { epochs, batch_size, learning_rate: lr, seed, ..CnnConfig::default() };
            train_cnn(&data, &out, config)
        }
        Command::Evaluate { data, weights, all, report, diff_dir, postproc } => {
            evaluate_cmd(&data, &weights, all, report.as_deref(), diff_dir.as_deref(), postproc)
        }
        Command::Infer { weights, out_dir, params, identity_seed, baseline, postproc } => {
            infer(&weights, &out_dir, &params, identity_seed, baseline, postproc)
        }
        Command::Serve { config, data, weights, cnn, tracker, addr, wire_out, wire_in, transport } => {
            serve(config.as_deref(), data, weights, cnn, tracker, addr, (wire_out, wire_in, transport))
        }
        Command::StreamSend { to, rate, frames, transport, subject } => stream_send(&to, rate, frames, transport, subject),
        Command::StreamRecv { listen, seconds, transport } => stream_recv(&listen, seconds, transport),
        Command::Bench { data, weights, cnn, tracker, frames, seed } => {
            bench(&data, &weights, cnn.as_deref(), tracker, frames, seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
