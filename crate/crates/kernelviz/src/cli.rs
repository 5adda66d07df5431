//! The `kernelviz` command line.
//!
//! Exit codes: 0 on success, 2 on usage errors, 3 on runtime errors.
//! Settings are resolved as built-in defaults, then flags, then the keys of
//! any `--stage1-config` / `--stage2-config` file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kernelviz_core::flow::FlowNorm;
use kernelviz_core::net::{list_kernels, digest_hex};
use kernelviz_core::stage1::{self, Stage1Config};
use kernelviz_core::stage2::{self, Stage2Config};
use kernelviz_core::{KernelRef, NetworkAdapter, ReferenceNet};

use crate::adapters::{AdapterRegistry, AdapterSpec, SharedAdapter};
use crate::config;
use crate::container::{self, TensorContainer};
use crate::error::{Error, IoContext, Result};
use crate::pipeline::{self, run_parallel};
use crate::render;

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const OUT_ENV: &str = "KERNELVIZ_OUT";

#[derive(Debug, Parser)]
#[command(name = "kernelviz", version, about = "Visualize the preferred input of 3D convolution kernels as a static image plus motion")]
pub struct Cli {
    /// Seed for every random draw of the optimization.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output root directory.
    #[arg(long, global = true, env = OUT_ENV, default_value = "runs")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize a video that maximally activates one kernel.
    Maximize(MaximizeArgs),
    /// Split a stored video into a static image and deformation fields.
    Decompose(DecomposeArgs),
    /// Render stored factors to PNG and GIF files.
    Visualize(VisualizeArgs),
    /// maximize, decompose, visualize and save a run for each kernel.
    Pipeline(PipelineArgs),
    /// Run the domain, loss-subset and strategy ablations.
    Ablate(AblateArgs),
    /// Print every addressable kernel of an adapter.
    ListKernels(AdapterArgs),
}

#[derive(Debug, Clone, Args)]
pub struct AdapterArgs {
    /// Adapter name.
    #[arg(long, default_value = "reference")]
    pub adapter: String,
    /// Checkpoint file passed to the adapter (JSON net for `reference`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Seed for randomly initialized adapter weights.
    #[arg(long, default_value_t = 0)]
    pub net_seed: u64,
}

impl AdapterArgs {
    fn spec(&self) -> AdapterSpec {
        AdapterSpec {
            name: self.adapter.clone(),
            checkpoint: self.checkpoint.clone(),
            net_seed: self.net_seed,
        }
    }

    fn open(&self) -> Result<SharedAdapter> {
        AdapterRegistry::default().open(&self.spec())
    }
}

#[derive(Debug, Clone, Args)]
pub struct Stage1Args {
    /// Flat TOML file with stage-1 keys; overrides the flags below.
    #[arg(long)]
    pub stage1_config: Option<PathBuf>,
    /// Stage-1 optimization steps.
    #[arg(long, default_value_t = Stage1Config::default().steps)]
    pub s1_steps: usize,
    /// Stage-1 Adam learning rate.
    #[arg(long, default_value_t = Stage1Config::default().learning_rate)]
    pub s1_lr: f64,
    /// Frames of the optimized clip.
    #[arg(long, default_value_t = Stage1Config::default().frames)]
    pub frames: usize,
    /// Height of the optimized clip in pixels.
    #[arg(long, default_value_t = Stage1Config::default().height)]
    pub height: usize,
    /// Width of the optimized clip in pixels.
    #[arg(long, default_value_t = Stage1Config::default().width)]
    pub width: usize,
    /// Gain of the Fourier arm's frequency weighting.
    #[arg(long, default_value_t = Stage1Config::default().fourier_gain)]
    pub fourier_gain: f64,
    /// Snapshot interval in steps (0 disables).
    #[arg(long, default_value_t = Stage1Config::default().checkpoint_every)]
    pub checkpoint_every: usize,
}

impl Stage1Args {
    fn resolve(&self, seed: u64, channels: usize) -> Result<Stage1Config> {
        let base = Stage1Config {
            steps: self.s1_steps,
            learning_rate: self.s1_lr,
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels,
            fourier_gain: self.fourier_gain,
            checkpoint_every: self.checkpoint_every,
            seed,
            ..Stage1Config::default()
        };
        let cfg = match &self.stage1_config {
            Some(p) => config::overlay_file(&base, p)?,
            None => base,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct Stage2Args {
    /// Flat TOML file with stage-2 keys; overrides the flags below.
    #[arg(long)]
    pub stage2_config: Option<PathBuf>,
    /// Stage-2 optimization steps.
    #[arg(long, default_value_t = Stage2Config::default().steps)]
    pub s2_steps: usize,
    /// Stage-2 Adam learning rate.
    #[arg(long, default_value_t = Stage2Config::default().learning_rate)]
    pub s2_lr: f64,
    /// Weight of the reconstruction term.
    #[arg(long, default_value_t = Stage2Config::default().w_recon)]
    pub w_recon: f64,
    /// Weight of the deformation total variation.
    #[arg(long, default_value_t = Stage2Config::default().w_smooth_deform)]
    pub w_smooth_deform: f64,
    /// Weight of the static-image total variation.
    #[arg(long, default_value_t = Stage2Config::default().w_smooth_static)]
    pub w_smooth_static: f64,
    /// Weight of the first-frame similarity term.
    #[arg(long, default_value_t = Stage2Config::default().w_static)]
    pub w_static: f64,
}

impl Stage2Args {
    fn resolve(&self, seed: u64) -> Result<Stage2Config> {
        let base = Stage2Config {
            steps: self.s2_steps,
            learning_rate: self.s2_lr,
            w_recon: self.w_recon,
            w_smooth_deform: self.w_smooth_deform,
            w_smooth_static: self.w_smooth_static,
            w_static: self.w_static,
            seed,
            ..Stage2Config::default()
        };
        let cfg = match &self.stage2_config {
            Some(p) => config::overlay_file(&base, p)?,
            None => base,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormKind {
    PerFrameMax,
    Fixed,
}

#[derive(Debug, Clone, Args)]
pub struct FlowArgs {
    /// Brightness normalization of flow images.
    #[arg(long, value_enum, default_value_t = NormKind::PerFrameMax)]
    pub flow_norm: NormKind,
    /// Magnitude in px/frame shown at full brightness with `--flow-norm fixed`.
    #[arg(long, default_value_t = 1.0)]
    pub flow_vmax: f32,
}

impl FlowArgs {
    fn norm(&self) -> FlowNorm {
        match self.flow_norm {
            NormKind::PerFrameMax => FlowNorm::PerFrameMax,
            NormKind::Fixed => FlowNorm::Fixed(self.flow_vmax),
        }
    }
}

#[derive(Debug, Args)]
pub struct MaximizeArgs {
    /// Kernel as `layer/channel[:pre|:post]`.
    #[arg(long)]
    pub kernel: KernelRef,
    /// Optimize in the Fourier domain instead of pixel space.
    #[arg(long)]
    pub fourier: bool,
    /// Output directory [default: <out>/maximize-<kernel>-s<seed>].
    #[arg(long)]
    pub dest: Option<PathBuf>,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub stage1: Stage1Args,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Video tensor file to decompose.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory [default: <out>/decompose-<input stem>-s<seed>].
    #[arg(long)]
    pub dest: Option<PathBuf>,
    #[command(flatten)]
    pub stage2: Stage2Args,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Directory holding video.tensor, static.tensor and deform.tensor.
    #[arg(long)]
    pub run: PathBuf,
    /// Output directory [default: <run>/render].
    #[arg(long)]
    pub dest: Option<PathBuf>,
    #[command(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    /// Kernels as `layer/channel[:pre|:post]`; repeat for several.
    #[arg(long, required = true)]
    pub kernel: Vec<KernelRef>,
    /// Kernels processed concurrently (ignored by non-reentrant adapters).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub stage1: Stage1Args,
    #[command(flatten)]
    pub stage2: Stage2Args,
    #[command(flatten)]
    pub flow: FlowArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Kernels as `layer/channel[:pre|:post]`; repeat for several.
    #[arg(long, default_value = "layer1/0")]
    pub kernel: Vec<KernelRef>,
    /// Kernels processed concurrently (ignored by non-reentrant adapters).
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Report directory [default: <out>/ablation-s<seed>].
    #[arg(long)]
    pub dest: Option<PathBuf>,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub stage1: Stage1Args,
    #[command(flatten)]
    pub stage2: Stage2Args,
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '-' }).collect()
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(Error::AlreadyExists(path.to_path_buf()));
    }
    fs::create_dir_all(path).at(path)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializable")).at(path)
}

fn cmd_maximize(seed: u64, out: &Path, a: &MaximizeArgs) -> Result<()> {
    let adapter = a.adapter.open()?;
    let cfg = a.stage1.resolve(seed, adapter.input_spec().channels)?;
    adapter.resolve(&a.kernel)?;
    let dest = a
        .dest
        .clone()
        .unwrap_or_else(|| out.join(format!("maximize-{}-s{}", slug(&a.kernel.to_string()), cfg.seed)));
    fresh_dir(&dest)?;
    let res = if a.fourier {
        stage1::maximize_input_fourier(adapter.as_ref(), &a.kernel, &cfg)?
    } else {
        stage1::maximize_input(adapter.as_ref(), &a.kernel, &cfg)?
    };
    container::save_video(&res.video, &dest.join("video.tensor"))?;
    for t in 0..res.video.frames() {
        render::save_png(&render::video_frame(&res.video, t), &dest.join(format!("video_{t:03}.png")))?;
    }
    write_json(
        &serde_json::json!({
            "kernel": a.kernel.to_string(),
            "weights_digest": digest_hex(&adapter.weights_digest()),
            "config": cfg,
            "loss_trace": res.loss_trace,
        }),
        &dest.join("stage1.json"),
    )?;
    println!(
        "{}\tfinal_loss {:.6}",
        dest.display(),
        res.loss_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_decompose(seed: u64, out: &Path, a: &DecomposeArgs) -> Result<()> {
    let cfg = a.stage2.resolve(seed)?;
    let video = container::load_video(&a.input)?;
    let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dest = a
        .dest
        .clone()
        .unwrap_or_else(|| out.join(format!("decompose-{}-s{}", slug(&stem), cfg.seed)));
    fresh_dir(&dest)?;
    let dec = stage2::decompose(&video, &cfg)?;
    container::save_video(&video, &dest.join("video.tensor"))?;
    TensorContainer::from_static(&dec.static_factor).save(&dest.join("static.tensor"))?;
    TensorContainer::from_deform(&dec.deform).save(&dest.join("deform.tensor"))?;
    write_json(
        &serde_json::json!({ "config": cfg, "trace": dec.trace }),
        &dest.join("stage2.json"),
    )?;
    println!(
        "{}\tfinal_loss {:.6}",
        dest.display(),
        dec.trace.last().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_visualize(a: &VisualizeArgs) -> Result<()> {
    let video = container::load_video(&a.run.join("video.tensor"))?;
    let p = a.run.join("static.tensor");
    let static_factor = TensorContainer::load(&p)?.into_static(&p)?;
    let p = a.run.join("deform.tensor");
    let deform = TensorContainer::load(&p)?.into_deform(&p)?;
    let dest = a.dest.clone().unwrap_or_else(|| a.run.join("render"));
    let files = render::render_outputs(&video, &static_factor, &deform, &dest, a.flow.norm())?;
    println!("{}\t{} files", dest.display(), files.files.len());
    Ok(())
}

fn cmd_pipeline(seed: u64, out: &Path, a: &PipelineArgs) -> Result<()> {
    let adapter = a.adapter.open()?;
    let cfg1 = a.stage1.resolve(seed, adapter.input_spec().channels)?;
    let cfg2 = a.stage2.resolve(seed)?;
    for k in &a.kernel {
        adapter.resolve(k)?;
    }
    let spec = a.adapter.spec();
    let norm = a.flow.norm();
    let results = run_parallel(adapter.as_ref(), &a.kernel, a.jobs, |k| {
        pipeline::run_pipeline(adapter.as_ref(), &spec, k, &cfg1, &cfg2, norm, out)
    });
    let mut first_err = None;
    for (k, r) in a.kernel.iter().zip(results) {
        match r {
            Ok(o) => println!(
                "{}\trun_id {}\tstage1_loss {:.6}\tstage2_loss {:.6}\t{}",
                k,
                o.run_id,
                o.stage1_final,
                o.stage2_final,
                o.dir.display()
            ),
            Err(e) => {
                eprintln!("error: {k}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_ablate(seed: u64, out: &Path, a: &AblateArgs) -> Result<()> {
    let adapter = a.adapter.open()?;
    let cfg1 = a.stage1.resolve(seed, adapter.input_spec().channels)?;
    let cfg2 = a.stage2.resolve(seed)?;
    let dest = a.dest.clone().unwrap_or_else(|| out.join(format!("ablation-s{}", cfg1.seed)));
    let rows = pipeline::run_ablation(adapter.as_ref(), &a.kernel, &cfg1, &cfg2, &dest, a.jobs)?;
    print!("{}", pipeline::format_summary(&rows));
    println!("# written to {}", dest.join("summary.tsv").display());
    Ok(())
}

fn cmd_list_kernels(a: &AdapterArgs) -> Result<()> {
    let adapter = a.open()?;
    // Designations are only known for the built-in net.
    let reference: Option<ReferenceNet> = match (&*a.adapter, &a.checkpoint) {
        ("reference", None) => Some(ReferenceNet::standard(a.net_seed)?),
        ("reference", Some(p)) => Some(crate::adapters::load_reference(p)?),
        _ => None,
    };
    for k in list_kernels(adapter.as_ref() as &dyn NetworkAdapter) {
        match reference.as_ref().and_then(|n| n.designation(&k)) {
            Some(d) => println!(
                "{k}\tdirection_deg {}\tspeed {}\tfreq {}",
                d.direction_deg, d.speed_px_per_frame, d.spatial_freq
            ),
            None => println!("{k}"),
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Maximize(a) => cmd_maximize(cli.seed, &cli.out, a),
        Command::Decompose(a) => cmd_decompose(cli.seed, &cli.out, a),
        Command::Visualize(a) => cmd_visualize(a),
        Command::Pipeline(a) => cmd_pipeline(cli.seed, &cli.out, a),
        Command::Ablate(a) => cmd_ablate(cli.seed, &cli.out, a),
        Command::ListKernels(a) => cmd_list_kernels(a),
    }
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
