//! End-to-end runs and the ablation harness.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kernelviz_core::flow::FlowNorm;
use kernelviz_core::net::digest_hex;
use kernelviz_core::rng::ALGORITHM;
use kernelviz_core::stage1::{self, Stage1Config, Stage1Result};
use kernelviz_core::stage2::{self, Decomposition, LossComponents, LossWeights, Stage2Config};
use kernelviz_core::warp::warp_sequence;
use kernelviz_core::{loss, KernelRef, NetworkAdapter, VideoTensor};
use rayon::prelude::*;

use crate::adapters::AdapterSpec;
use crate::error::{Error, IoContext, Result};
use crate::render::{self, flow_frames, flow_image, save_png, static_image, tile, video_frame};
use crate::runstore::{AdapterRecord, FinalLoss, RunManifest, RunTensors, Seeds, StagedRun, TraceRecord, MAX_TRACE_POINTS};

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
/// Non-reentrant adapters always run sequentially.
pub fn run_parallel<T, R, F>(adapter: &(dyn NetworkAdapter + Sync), items: &[T], jobs: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let jobs = if adapter.is_reentrant() { jobs.max(1) } else { 1 };
    if jobs == 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub stage1_final: f64,
    pub stage2_final: f64,
}

fn adapter_record(adapter: &dyn NetworkAdapter, spec: &AdapterSpec) -> AdapterRecord {
    AdapterRecord {
        name: spec.name.clone(),
        checkpoint: spec.checkpoint.as_ref().map(|p| p.display().to_string()),
        weights_digest: digest_hex(&adapter.weights_digest()),
    }
}

fn check_frozen(adapter: &dyn NetworkAdapter, before: [u8; 32]) -> Result<()> {
    if adapter.weights_digest() != before {
        return Err(Error::Core(kernelviz_core::Error::InvalidArgument(
            "adapter weights changed during optimization".into(),
        )));
    }
    Ok(())
}

/// maximize, decompose, render and save one kernel's run under `out_root`.
pub fn run_pipeline(
    adapter: &dyn NetworkAdapter,
    spec: &AdapterSpec,
    kernel: &KernelRef,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    norm: FlowNorm,
    out_root: &Path,
) -> Result<PipelineOutcome> {
    adapter.resolve(kernel)?;
    cfg1.validate()?;
    cfg2.validate()?;
    let record = adapter_record(adapter, spec);
    let kernel_name = kernel.to_string();
    let run_id = RunManifest::derive_run_id(&record, &kernel_name, cfg1, cfg2);
    let staged = StagedRun::begin(out_root, &run_id)?;
    let before = adapter.weights_digest();

    let s1 = stage1::maximize_input(adapter, kernel, cfg1)?;
    let dec = stage2::decompose(&s1.video, cfg2)?;
    check_frozen(adapter, before)?;

    let rendered = render::render_outputs(&s1.video, &dec.static_factor, &dec.deform, staged.dir(), norm)?;
    let (total, components) = (
        dec.trace.last().expect("trace is never empty"),
        *dec.trace.components.last().expect("trace is never empty"),
    );
    let mut manifest = RunManifest {
        schema_version: crate::runstore::SCHEMA_VERSION,
        run_id: run_id.clone(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        toolkit_version: kernelviz_core::VERSION.into(),
        adapter: record,
        kernel: kernel_name,
        stage1: cfg1.clone(),
        stage2: cfg2.clone(),
        seeds: Seeds {
            stage1: cfg1.seed,
            stage2: cfg2.seed,
            rng: ALGORITHM.into(),
        },
        stage1_trace: TraceRecord::downsample(&s1.loss_trace, MAX_TRACE_POINTS),
        stage2_trace: TraceRecord::downsample(&dec.trace.total, MAX_TRACE_POINTS),
        final_loss: FinalLoss { total, components },
        tensors: Default::default(),
        artifacts: rendered.files,
        flow: Some(match norm {
            FlowNorm::PerFrameMax => RunManifest::default_flow_record(rendered.flow_max),
            FlowNorm::Fixed(_) => crate::runstore::FlowRecord {
                norm: "fixed".into(),
                ..RunManifest::default_flow_record(rendered.flow_max)
            },
        }),
    };
    let tensors = RunTensors {
        video: s1.video,
        static_factor: dec.static_factor,
        deform: dec.deform,
    };
    let dir = staged.commit(&mut manifest, &tensors)?;
    Ok(PipelineOutcome {
        run_id,
        dir,
        stage1_final: *s1.loss_trace.last().expect("at least one step"),
        stage2_final: total,
    })
}

/// Column names of the ablation summary, in file order.
pub const SUMMARY_COLUMNS: [&str; 13] = [
    "kernel",
    "group",
    "arm",
    "status",
    "activation",
    "recon",
    "smooth_deform",
    "smooth_static",
    "static_similarity",
    "total",
    "tv_deform",
    "psnr_db",
    "image",
];

/// `(group, arm)` pairs run for every kernel.
pub const ARMS: [(&str, &str); 8] = [
    ("domain", "pixel"),
    ("domain", "fourier"),
    ("loss", "recon"),
    ("loss", "recon+tv_deform"),
    ("loss", "recon+tv_deform+tv_static"),
    ("loss", "full"),
    ("strategy", "two-stage"),
    ("strategy", "single-stage"),
];

/// One line of the ablation summary. Empty cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kernel: String,
    pub group: String,
    pub arm: String,
    /// `ok` or `error: <message>`.
    pub status: String,
    pub activation: Option<f64>,
    pub recon: Option<f64>,
    pub smooth_deform: Option<f64>,
    pub smooth_static: Option<f64>,
    pub static_similarity: Option<f64>,
    pub total: Option<f64>,
    pub tv_deform: Option<f64>,
    pub psnr_db: Option<f64>,
    pub image: String,
}

impl SummaryRow {
    fn empty(kernel: &str, group: &str, arm: &str) -> Self {
        SummaryRow {
            kernel: kernel.into(),
            group: group.into(),
            arm: arm.into(),
            status: "ok".into(),
            activation: None,
            recon: None,
            smooth_deform: None,
            smooth_static: None,
            static_similarity: None,
            total: None,
            tv_deform: None,
            psnr_db: None,
            image: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn numbers(&self) -> [Option<f64>; 8] {
        [
            self.activation,
            self.recon,
            self.smooth_deform,
            self.smooth_static,
            self.static_similarity,
            self.total,
            self.tv_deform,
            self.psnr_db,
        ]
    }

    pub fn to_line(&self) -> String {
        let clean = |s: &str| s.replace(['\t', '\n', '\r'], " ");
        let mut cells = vec![clean(&self.kernel), clean(&self.group), clean(&self.arm), clean(&self.status)];
        cells.extend(self.numbers().iter().map(|v| v.map(|x| format!("{x:e}")).unwrap_or_default()));
        cells.push(clean(&self.image));
        cells.join("\t")
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != SUMMARY_COLUMNS.len() {
            return Err(format!("expected {} columns, found {}", SUMMARY_COLUMNS.len(), cells.len()));
        }
        let num = |i: usize| -> std::result::Result<Option<f64>, String> {
            if cells[i].is_empty() {
                Ok(None)
            } else {
                cells[i]
                    .parse()
                    .map(Some)
                    .map_err(|e| format!("column {}: {e}", SUMMARY_COLUMNS[i]))
            }
        };
        Ok(SummaryRow {
            kernel: cells[0].into(),
            group: cells[1].into(),
            arm: cells[2].into(),
            status: cells[3].into(),
            activation: num(4)?,
            recon: num(5)?,
            smooth_deform: num(6)?,
            smooth_static: num(7)?,
            static_similarity: num(8)?,
            total: num(9)?,
            tv_deform: num(10)?,
            psnr_db: num(11)?,
            image: cells[12].into(),
        })
    }
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = SUMMARY_COLUMNS.join("\t");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_line());
    }
    out
}

pub fn parse_summary(text: &str) -> std::result::Result<Vec<SummaryRow>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty summary")?;
    if header != SUMMARY_COLUMNS.join("\t") {
        return Err(format!("unexpected header '{header}'"));
    }
    lines.filter(|l| !l.is_empty()).map(SummaryRow::parse_line).collect()
}

/// The loss subsets run by the harness: each adds one term of `full`.
pub fn loss_subsets(full: LossWeights) -> [LossWeights; 4] {
    let recon = LossWeights {
        recon: full.recon,
        smooth_deform: 0.0,
        smooth_static: 0.0,
        static_similarity: 0.0,
    };
    let tv_d = LossWeights {
        smooth_deform: full.smooth_deform,
        ..recon
    };
    let tv_i = LossWeights {
        smooth_static: full.smooth_static,
        ..tv_d
    };
    [recon, tv_d, tv_i, full]
}

fn file_slug(kernel: &KernelRef, arm: &str) -> String {
    format!("{kernel}_{arm}")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '-' })
        .collect()
}

fn frames_tile(v: &VideoTensor) -> image::RgbImage {
    let frames: Vec<_> = (0..v.frames()).map(|t| video_frame(v, t)).collect();
    tile(&frames, v.frames())
}

fn decomposition_tile(dec: &Decomposition) -> Result<image::RgbImage> {
    let recon = dec.reconstruction()?;
    let t_len = recon.frames();
    let mut tiles = vec![static_image(&dec.static_factor)];
    tiles.extend(flow_frames(&dec.deform, FlowNorm::PerFrameMax)?.iter().map(flow_image));
    tiles.extend((0..t_len).map(|t| video_frame(&recon, t)));
    Ok(tile(&tiles, t_len))
}

fn fill_components(row: &mut SummaryRow, c: &LossComponents, total: f64) {
    row.recon = Some(c.recon);
    row.smooth_deform = Some(c.smooth_deform);
    row.smooth_static = Some(c.smooth_static);
    row.static_similarity = Some(c.static_similarity);
    row.total = Some(total);
    row.tv_deform = Some(c.smooth_deform);
}

fn stage1_row(
    adapter: &dyn NetworkAdapter,
    kernel: &KernelRef,
    arm: &str,
    res: &kernelviz_core::Result<Stage1Result>,
    dir: &Path,
) -> SummaryRow {
    let mut row = SummaryRow::empty(&kernel.to_string(), "domain", arm);
    let outcome = res.as_ref().map_err(|e| e.to_string()).and_then(|s1| {
        row.activation = Some(stage1::activation_loss(adapter, kernel, &s1.video).map_err(|e| e.to_string())?);
        let name = format!("{}.png", file_slug(kernel, arm));
        save_png(&frames_tile(&s1.video), &dir.join(&name)).map_err(|e| e.to_string())?;
        row.image = name;
        Ok(())
    });
    if let Err(e) = outcome {
        row.status = format!("error: {e}");
    }
    row
}

fn decomposition_row(
    kernel: &KernelRef,
    group: &str,
    arm: &str,
    reference: Option<&VideoTensor>,
    res: Result<Decomposition>,
    dir: &Path,
) -> SummaryRow {
    let mut row = SummaryRow::empty(&kernel.to_string(), group, arm);
    let outcome = res.and_then(|dec| {
        let c = *dec.trace.components.last().expect("trace is never empty");
        fill_components(&mut row, &c, dec.trace.last().expect("trace is never empty"));
        if c.activation != 0.0 {
            row.activation = Some(c.activation);
        }
        if let Some(v) = reference {
            let recon = warp_sequence(&dec.static_factor, &dec.deform)?;
            row.psnr_db = Some(loss::psnr(v.data(), recon.data())?);
        }
        let name = format!("{}.png", file_slug(kernel, arm));
        save_png(&decomposition_tile(&dec)?, &dir.join(&name))?;
        row.image = name;
        Ok(())
    });
    if let Err(e) = outcome {
        row.status = format!("error: {e}");
    }
    row
}

/// Runs the eight arms for one kernel. Every arm reports a row even when an
/// earlier arm failed.
pub fn ablate_kernel(
    adapter: &dyn NetworkAdapter,
    kernel: &KernelRef,
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    dir: &Path,
) -> Vec<SummaryRow> {
    let pixel = stage1::maximize_input(adapter, kernel, cfg1);
    let fourier = stage1::maximize_input_fourier(adapter, kernel, cfg1);
    let mut rows = vec![
        stage1_row(adapter, kernel, "pixel", &pixel, dir),
        stage1_row(adapter, kernel, "fourier", &fourier, dir),
    ];
    let video = pixel.as_ref().ok().map(|s| &s.video);
    let missing = || -> Result<Decomposition> {
        Err(Error::Core(kernelviz_core::Error::InvalidArgument(
            "pixel-domain stage 1 failed".into(),
        )))
    };
    let mut full = None;
    for (weights, (_, arm)) in loss_subsets(cfg2.weights()).into_iter().zip(&ARMS[2..6]) {
        let res = match video {
            Some(v) => stage2::decompose(v, &cfg2.clone().with_weights(weights)).map_err(Error::from),
            None => missing(),
        };
        if *arm == "full" {
            full = res.as_ref().ok().cloned();
        }
        rows.push(decomposition_row(kernel, "loss", arm, video, res, dir));
    }
    // The two-stage arm is the full-loss decomposition; it is deterministic,
    // so the run above is reused rather than repeated.
    let two_stage = match full {
        Some(d) => Ok(d),
        None => missing(),
    };
    rows.push(decomposition_row(kernel, "strategy", "two-stage", video, two_stage, dir));
    let single = stage2::decompose_single_stage(adapter, kernel, cfg1, cfg2).map_err(Error::from);
    rows.push(decomposition_row(kernel, "strategy", "single-stage", video, single, dir));
    rows
}

/// Runs every arm for every kernel and writes the tiles and `summary.tsv`
/// into `dir`.
pub fn run_ablation(
    adapter: &(dyn NetworkAdapter + Sync),
    kernels: &[KernelRef],
    cfg1: &Stage1Config,
    cfg2: &Stage2Config,
    dir: &Path,
    jobs: usize,
) -> Result<Vec<SummaryRow>> {
    cfg1.validate()?;
    cfg2.validate()?;
    for k in kernels {
        adapter.resolve(k)?;
    }
    fs::create_dir_all(dir).at(dir)?;
    let rows: Vec<SummaryRow> = run_parallel(adapter, kernels, jobs, |k| ablate_kernel(adapter, k, cfg1, cfg2, dir))
        .into_iter()
        .flatten()
        .collect();
    let path = dir.join("summary.tsv");
    fs::write(&path, format_summary(&rows)).at(&path)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trips() {
        let mut row = SummaryRow::empty("layer1/0", "loss", "full");
        row.recon = Some(0.125);
        row.psnr_db = Some(f64::INFINITY);
        row.image = "a.png".into();
        let mut bad = SummaryRow::empty("layer1/0", "domain", "fourier");
        bad.status = "error: tab\there".into();
        let text = format_summary(&[row.clone(), bad]);
        let back = parse_summary(&text).unwrap();
        assert_eq!(back[0], row);
        assert_eq!(back[1].status, "error: tab here");
    }

    #[test]
    fn subsets_grow_one_term_at_a_time() {
        let s = loss_subsets(LossWeights::default());
        assert_eq!(s[0], LossWeights::recon_only());
        assert_eq!(s[1].smooth_static, 0.0);
        assert!(s[1].smooth_deform > 0.0);
        assert!(s[2].smooth_static > 0.0 && s[2].static_similarity == 0.0);
        assert_eq!(s[3], LossWeights::default());
    }
}
