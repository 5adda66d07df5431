//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kernelviz::adapters::AdapterSpec;
use kernelviz::pipeline::{run_ablation, run_parallel, run_pipeline, SummaryRow};
use kernelviz::runstore::load_run;
use kernelviz_core::flow::{angle_difference_deg, deformation_diff, mean_direction, FlowNorm};
use kernelviz_core::stage1::{activation_loss, activation_loss_grad, maximize_input, Stage1Config};
use kernelviz_core::stage2::{decompose, stage2_loss, Stage2Config};
use kernelviz_core::warp::{warp, warp_backward, warp_sequence};
use kernelviz_core::{loss, DeformationSequence, KernelRef, RandomSource, ReferenceNet, StaticFactor, VideoTensor};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn random_image(h: usize, w: usize, c: usize, seed: u64) -> StaticFactor {
    let mut rng = RandomSource::new(seed);
    StaticFactor::from_fn(h, w, c, |_, _, _| rng.uniform() as f32).unwrap()
}

fn constant_field(h: usize, w: usize, dx: f32, dy: f32) -> Vec<f32> {
    (0..h * w).flat_map(|_| [dx, dy]).collect()
}

fn warp_correctness() -> Outcome {
    let start = Instant::now();
    let (h, w, c) = (9, 11, 3);
    let img = random_image(h, w, c, 1);

    let same = warp(&img, &vec![0.0; h * w * 2]).map_err(|e| e.to_string())?;
    ensure(same == img.data(), || "zero deformation is not bit-exact".into())?;

    let mut checked = 0;
    for (dx, dy) in [(1i64, 0i64), (-2, 1), (0, -3), (3, 2), (-4, -1)] {
        let out = warp(&img, &constant_field(h, w, dx as f32, dy as f32)).unwrap();
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (sx, sy) = (x + dx, y + dy);
                if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
                    continue;
                }
                for ch in 0..c {
                    let got = out[((y as usize) * w + x as usize) * c + ch];
                    let want = img.at(sy as usize, sx as usize, ch);
                    ensure(got == want, || format!("shift ({dx},{dy}) at ({y},{x},{ch}): {got} != {want}"))?;
                    checked += 1;
                }
            }
        }
    }

    // Per-frame integer shifts through the sequence warp on a ramp.
    let ramp = StaticFactor::from_fn(h, w, 1, |_, x, _| x as f32 / (w - 1) as f32).unwrap();
    let frames = 4;
    let d = DeformationSequence::from_fn(frames, h, w, |t, _, _| (t as f32, 0.0)).unwrap();
    let v = warp_sequence(&ramp, &d).unwrap();
    for t in 0..frames {
        for y in 0..h {
            for x in 0..w - t {
                ensure(v.at(t, y, x, 0) == ramp.at(y, x + t, 0), || format!("sequence frame {t} at ({y},{x})"))?;
            }
        }
    }

    let mut worst = 0.0f64;
    for (fx, fy) in [(0.5f32, 0.0f32), (0.0, 0.5), (0.5, 0.5)] {
        let out = warp(&img, &constant_field(h, w, fx, fy)).unwrap();
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                for ch in 0..c {
                    let p = |yy: usize, xx: usize| img.at(yy, xx, ch) as f64;
                    let (ax, ay) = (fx as f64, fy as f64);
                    let want = (1.0 - ay) * ((1.0 - ax) * p(y, x) + ax * p(y, x + 1))
                        + ay * ((1.0 - ax) * p(y + 1, x) + ax * p(y + 1, x + 1));
                    worst = worst.max((out[(y * w + x) * c + ch] as f64 - want).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("half-pixel error {worst:.2e}"))?;
    let ramp_half = warp(&ramp, &constant_field(h, w, 0.5, 0.0)).unwrap();
    for y in 0..h {
        for x in 0..w - 1 {
            let want = (x as f64 + 0.5) / (w - 1) as f64;
            let err = (ramp_half[y * w + x] as f64 - want).abs();
            ensure(err <= 1e-6, || format!("ramp half shift at ({y},{x}) off by {err:.2e}"))?;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("{checked} shifted samples exact, half-pixel max error {worst:.1e}, {elapsed:.2?}"))
}

fn rel_error(numeric: &[f64], analytic: &[f64]) -> f64 {
    let diff: f64 = numeric.iter().zip(analytic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Field whose sample positions stay inside the image and at least 0.2 px
/// away from the integer lattice, so small probes never cross a kink.
fn smooth_region_field(h: usize, w: usize, rng: &mut RandomSource) -> Vec<f32> {
    let mut field = Vec::with_capacity(h * w * 2);
    for y in 0..h {
        for x in 0..w {
            for (pos, len) in [(x, w), (y, h)] {
                let cell = rng.int_inclusive(0, len as i64 - 2) as f64;
                let target = cell + rng.uniform_range(0.2, 0.8);
                field.push((target - pos as f64) as f32);
            }
        }
    }
    field
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = RandomSource::new(11);
    let (h, w, c) = (5, 6, 2);
    // Interior values so finite-difference probes stay inside [0, 1].
    let img = StaticFactor::from_fn(h, w, c, |_, _, _| 0.1 + 0.8 * rng.uniform() as f32).unwrap();
    let field = smooth_region_field(h, w, &mut rng);
    let g: Vec<f32> = (0..h * w * c).map(|_| rng.uniform_range(-1.0, 1.0) as f32).collect();
    let objective = |im: &StaticFactor, f: &[f32]| -> f64 {
        warp(im, f).unwrap().iter().zip(&g).map(|(a, b)| *a as f64 * *b as f64).sum()
    };
    let (gi, gf) = warp_backward(&img, &field, &g).map_err(|e| e.to_string())?;

    let eps = 1e-2f32;
    let mut num_i = Vec::new();
    for i in 0..img.data().len() {
        let bump = |s: f32| {
            let mut d = img.data().to_vec();
            d[i] += s * eps;
            objective(&StaticFactor::new(h, w, c, d).unwrap(), &field)
        };
        num_i.push((bump(1.0) - bump(-1.0)) / (2.0 * eps as f64));
    }
    let mut num_d = Vec::new();
    for i in 0..field.len() {
        let bump = |s: f32| {
            let mut f = field.clone();
            f[i] += s * eps;
            objective(&img, &f)
        };
        num_d.push((bump(1.0) - bump(-1.0)) / (2.0 * eps as f64));
    }
    let to64 = |v: &[f32]| v.iter().map(|x| *x as f64).collect::<Vec<_>>();
    let err_i = rel_error(&num_i, &to64(&gi));
    let err_d = rel_error(&num_d, &to64(&gf));
    ensure(err_i <= 1e-3, || format!("warp d/dI relative error {err_i:.2e}"))?;
    ensure(err_d <= 1e-3, || format!("warp d/dD relative error {err_d:.2e}"))?;

    let net = ReferenceNet::standard(2).unwrap();
    let v = VideoTensor::from_fn(3, 8, 8, 3, |_, _, _, _| 0.2 + 0.6 * rng.uniform() as f32).unwrap();
    let mut worst_act = 0.0f64;
    for kernel in ["layer1/2", "layer2/7", "layer3/5"] {
        let k: KernelRef = kernel.parse().unwrap();
        let (_, grad) = activation_loss_grad(&net, &k, &v).map_err(|e| e.to_string())?;
        // Gradient direction plus noise keeps the probe well above the
        // rounding floor of a piecewise-linear network.
        let norm = grad.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt() as f32;
        let mut dir = vec![0.0f32; grad.len()];
        rng.fill_normal(&mut dir, 0.5 / (grad.len() as f32).sqrt());
        for (d, x) in dir.iter_mut().zip(&grad) {
            *d += x / norm;
        }
        let eps = 1e-3f32;
        let shifted = |s: f32| {
            let data = v.data().iter().zip(&dir).map(|(x, d)| x + s * eps * d).collect();
            activation_loss(&net, &k, &VideoTensor::new(3, 8, 8, 3, data).unwrap()).unwrap()
        };
        let numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps as f64);
        let analytic: f64 = grad.iter().zip(&dir).map(|(a, b)| *a as f64 * *b as f64).sum();
        let err = (numeric - analytic).abs() / analytic.abs().max(1e-6);
        worst_act = worst_act.max(err);
        ensure(err <= 1e-2, || format!("{kernel}: directional {numeric:.6} vs {analytic:.6}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!(
        "warp dI {err_i:.1e}, warp dD {err_d:.1e}, activation {worst_act:.1e}, {elapsed:.2?}"
    ))
}

fn tv_properties() -> Outcome {
    for (h, w, c) in [(1, 1, 1), (2, 2, 1), (4, 7, 3)] {
        let tv = loss::total_variation(&vec![0.37; h * w * c], h, w, c).map_err(|e| e.to_string())?;
        ensure(tv == 0.0, || format!("constant {h}x{w}x{c} gives {tv}"))?;
    }
    // Two horizontal differences of 1 and two vertical differences of 0.
    let fixture = loss::total_variation(&[0.0, 1.0, 0.0, 1.0], 2, 2, 1).unwrap();
    ensure((fixture - 0.5).abs() < 1e-12, || format!("2x2 fixture gives {fixture}"))?;
    let x = random_image(6, 5, 2, 3).into_data();
    let doubled: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
    let a = loss::total_variation(&x, 6, 5, 2).unwrap();
    let b = loss::total_variation(&doubled, 6, 5, 2).unwrap();
    ensure((b - 2.0 * a).abs() <= 1e-6, || format!("TV(2x) = {b}, 2 TV(x) = {}", 2.0 * a))?;
    Ok(format!("fixture {fixture}, homogeneity gap {:.1e}", (b - 2.0 * a).abs()))
}

/// Sum of random-signed Gaussian blobs rescaled into [0.05, 0.9].
fn blob_texture(h: usize, w: usize, seed: u64) -> StaticFactor {
    let mut rng = RandomSource::new(seed);
    let mut blobs = Vec::new();
    for (count, sigma) in [(8, 5.0), (20, 2.5)] {
        for _ in 0..count {
            let cy = rng.uniform_range(0.0, h as f64);
            let cx = rng.uniform_range(0.0, w as f64);
            let amp = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            blobs.push((cy, cx, sigma, amp));
        }
    }
    let raw: Vec<f64> = (0..h * w)
        .map(|p| {
            let (y, x) = ((p / w) as f64, (p % w) as f64);
            blobs
                .iter()
                .map(|(cy, cx, s, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    StaticFactor::new(h, w, 1, raw.iter().map(|v| (0.05 + 0.85 * (v - lo) / (hi - lo)) as f32).collect()).unwrap()
}

/// Content drifting toward `theta_deg` (0 = right, 90 = up) at about
/// `speed` px/frame with a smooth modulation along x.
fn drift(frames: usize, h: usize, w: usize, theta_deg: f64, speed: f64) -> DeformationSequence {
    let (c, s) = (theta_deg.to_radians().cos(), theta_deg.to_radians().sin());
    DeformationSequence::from_fn(frames, h, w, |t, _, x| {
        let m = speed * (0.8 + 0.2 * (2.0 * std::f64::consts::PI * x as f64 / w as f64).sin());
        ((-(t as f64) * m * c) as f32, ((t as f64) * m * s) as f32)
    })
    .unwrap()
}

/// Circular mean of the content motion of `est`, restricted to pixels where
/// the reference motion is at least `min_mag` px.
fn masked_direction(est: &DeformationSequence, reference: &DeformationSequence, min_mag: f64) -> Option<f64> {
    let (mut sx, mut sy) = (0.0, 0.0);
    let n = est.field_len();
    for t in 0..est.frames() - 1 {
        for p in 0..n / 2 {
            let r = |d: &DeformationSequence, k: usize| (d.data()[(t + 1) * n + 2 * p + k] - d.data()[t * n + 2 * p + k]) as f64;
            let (rx, ry) = (-r(reference, 0), -r(reference, 1));
            if rx.hypot(ry) < min_mag {
                continue;
            }
            let (ex, ey) = (-r(est, 0), -r(est, 1));
            let mag = ex.hypot(ey);
            if mag > 0.0 {
                sx += ex / mag;
                sy += -ey / mag;
            }
        }
    }
    (sx.hypot(sy) > 0.0).then(|| sy.atan2(sx).to_degrees())
}

fn synthetic_decomposition() -> Outcome {
    let (t, h, w) = (8, 32, 32);
    let theta = 30.0;
    let texture = blob_texture(h, w, 5);
    let truth = drift(t, h, w, theta, 0.8);
    let video = warp_sequence(&texture, &truth).unwrap();
    let start = Instant::now();
    let out = decompose(&video, &Stage2Config::default()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let psnr = loss::psnr(video.data(), out.reconstruction().unwrap().data()).unwrap();
    let truth_dir = masked_direction(&truth, &truth, 0.5).ok_or("no reference motion above 0.5 px")?;
    let dir = masked_direction(&out.deform, &truth, 0.5).ok_or("recovered motion cancels out")?;
    let gap = angle_difference_deg(dir, truth_dir);
    ensure(psnr >= 25.0, || format!("PSNR {psnr:.2} dB"))?;
    ensure(gap <= 20.0, || format!("direction {dir:.1} vs {truth_dir:.1}"))?;
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!("PSNR {psnr:.2} dB, direction {dir:.1} vs {truth_dir:.1}, {elapsed:.2?}"))
}

fn direction_selectivity() -> Outcome {
    let net = ReferenceNet::standard(0).unwrap();
    let cfg1 = Stage1Config {
        frames: 16,
        height: 64,
        width: 64,
        ..Stage1Config::default()
    };
    let cfg2 = Stage2Config::default();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let channels: Vec<usize> = (0..4).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let start = Instant::now();
    let results = run_parallel(&net, &channels, jobs, |&ch| -> Result<(f64, Option<f64>), String> {
        let k = KernelRef::new("layer1", ch);
        let expected = net.designation(&k).ok_or("channel is not designated")?.direction_deg;
        let run = run_pipeline(&net, &AdapterSpec::reference(0), &k, &cfg1, &cfg2, FlowNorm::PerFrameMax, root.path())
            .map_err(|e| e.to_string())?;
        let (_, tensors) = load_run(&run.dir).map_err(|e| e.to_string())?;
        let motion = deformation_diff(&tensors.deform).map_err(|e| e.to_string())?.content_motion();
        Ok((expected, mean_direction(&motion, 0.0)))
    });
    let elapsed = start.elapsed();
    let mut hits = 0;
    let mut parts = Vec::new();
    for (ch, r) in results.into_iter().enumerate() {
        match r {
            Ok((expected, Some(dir))) => {
                let hit = angle_difference_deg(dir, expected) <= 30.0;
                hits += hit as usize;
                parts.push(format!("ch{ch} {expected:.0}->{dir:.1}{}", if hit { "" } else { "(miss)" }));
            }
            Ok((expected, None)) => parts.push(format!("ch{ch} {expected:.0}->none")),
            Err(e) => parts.push(format!("ch{ch} error {e}")),
        }
    }
    let summary = format!("{hits}/4 within 30 deg [{}], {elapsed:.1?}", parts.join(", "));
    ensure(hits >= 3, || summary.clone())?;
    within(elapsed, Duration::from_secs(15 * 60))?;
    Ok(summary)
}

fn ablation_configs() -> (Stage1Config, Stage2Config) {
    (
        Stage1Config {
            frames: 8,
            height: 32,
            width: 32,
            seed: 4,
            ..Stage1Config::default()
        },
        Stage2Config {
            seed: 4,
            ..Stage2Config::default()
        },
    )
}

fn ablation_rows() -> Result<(tempfile::TempDir, Vec<SummaryRow>), String> {
    let net = ReferenceNet::standard(0).unwrap();
    let (c1, c2) = ablation_configs();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let k = KernelRef::new("layer1", 0);
    let rows = run_ablation(&net, &[k], &c1, &c2, dir.path(), 1).map_err(|e| e.to_string())?;
    Ok((dir, rows))
}

fn loss_ablation(rows: &[SummaryRow]) -> Outcome {
    let tv = |arm: &str| -> Result<f64, String> {
        let row = rows.iter().find(|r| r.arm == arm).ok_or_else(|| format!("no {arm} row"))?;
        ensure(row.is_ok(), || format!("{arm}: {}", row.status))?;
        row.tv_deform.ok_or_else(|| format!("{arm} has no TV value"))
    };
    let (recon, full) = (tv("recon")?, tv("full")?);
    ensure(full < recon, || format!("TV(D) full {full:.5} vs recon-only {recon:.5}"))?;
    Ok(format!("TV(D) full {full:.5} < recon-only {recon:.5}"))
}

fn strategy_ablation(dir: &std::path::Path, rows: &[SummaryRow]) -> Outcome {
    let psnr = |arm: &str| -> Result<f64, String> {
        let row = rows.iter().find(|r| r.arm == arm).ok_or_else(|| format!("no {arm} row"))?;
        ensure(row.is_ok(), || format!("{arm}: {}", row.status))?;
        ensure(!row.image.is_empty() && dir.join(&row.image).is_file(), || format!("{arm} was not rendered"))?;
        row.psnr_db.ok_or_else(|| format!("{arm} has no PSNR"))
    };
    let (two, single) = (psnr("two-stage")?, psnr("single-stage")?);
    let report = std::fs::read_to_string(dir.join("summary.tsv")).map_err(|e| e.to_string())?;
    ensure(report.contains("two-stage") && report.contains("single-stage"), || "summary lacks a strategy arm".into())?;
    ensure(two > single, || format!("two-stage {two:.2} dB vs single-stage {single:.2} dB"))?;
    Ok(format!("two-stage {two:.2} dB > single-stage {single:.2} dB"))
}

fn determinism_and_persistence() -> Outcome {
    let net = ReferenceNet::standard(0).unwrap();
    let k = KernelRef::new("layer1", 2);
    let c1 = Stage1Config {
        steps: 200,
        frames: 6,
        height: 20,
        width: 20,
        seed: 9,
        ..Stage1Config::default()
    };
    let c2 = Stage2Config {
        steps: 300,
        seed: 9,
        ..Stage2Config::default()
    };
    let run = || -> Result<_, String> {
        let s1 = maximize_input(&net, &k, &c1).map_err(|e| e.to_string())?;
        let dec = decompose(&s1.video, &c2).map_err(|e| e.to_string())?;
        Ok((s1, dec))
    };
    let (a1, a2) = run()?;
    let (b1, b2) = run()?;
    ensure(a1.video.data() == b1.video.data(), || "stage-1 videos differ".into())?;
    ensure(a2.static_factor == b2.static_factor && a2.deform == b2.deform, || "factors differ".into())?;

    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run_pipeline(&net, &AdapterSpec::reference(0), &k, &c1, &c2, FlowNorm::PerFrameMax, root.path())
        .map_err(|e| e.to_string())?;
    let (manifest, tensors) = load_run(&out.dir).map_err(|e| e.to_string())?;
    ensure(tensors.video == a1.video, || "loaded video differs from the in-memory run".into())?;
    ensure(tensors.static_factor == a2.static_factor, || "loaded static factor differs".into())?;
    ensure(tensors.deform == a2.deform, || "loaded deformation differs".into())?;
    let (recomputed, _) = stage2_loss(&tensors.video, &tensors.static_factor, &tensors.deform, &manifest.stage2.weights())
        .map_err(|e| e.to_string())?;
    let stored = manifest.final_loss.total;
    let rel = (recomputed - stored).abs() / stored.abs().max(f64::MIN_POSITIVE);
    ensure(rel <= 1e-5, || format!("recomputed {recomputed} vs stored {stored}"))?;
    Ok(format!("bit-exact reruns and reload, loss relative gap {rel:.1e}"))
}

fn config_defaults() -> Outcome {
    let c1 = Stage1Config::default();
    let c2 = Stage2Config::default();
    let input = [c1.height, c1.width, c1.frames, c1.channels];
    ensure(input == [128, 128, 16, 3], || format!("input {input:?}"))?;
    ensure(c1.learning_rate == 0.05 && c1.steps == 1500, || format!("stage 1 lr {} steps {}", c1.learning_rate, c1.steps))?;
    ensure(c2.learning_rate == 0.1 && c2.steps == 2000, || format!("stage 2 lr {} steps {}", c2.learning_rate, c2.steps))?;
    ensure((c1.beta1, c1.beta2, c2.beta1, c2.beta2) == (0.9, 0.999, 0.9, 0.999), || "Adam betas".into())?;
    Ok("128x128x16x3, stage 1 Adam 0.05 x 1500, stage 2 Adam 0.1 x 2000".into())
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(format!(
            "panicked: {}",
            p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()).unwrap_or("?")
        )),
    }
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: usize, name: &str, r: Outcome| match &r {
        Ok(detail) => println!("PASS {n} {name}: {detail}"),
        Err(detail) => {
            failures += 1;
            println!("FAIL {n} {name}: {detail}");
        }
    };
    report(1, "warp correctness", guarded(warp_correctness));
    report(2, "gradient checks", guarded(gradient_checks));
    report(3, "total variation properties", guarded(tv_properties));
    report(4, "synthetic decomposition", guarded(synthetic_decomposition));
    report(5, "direction selectivity", guarded(direction_selectivity));
    // Both ablation criteria read the same report.
    let ablation = guarded(ablation_rows);
    let with_rows = |f: &dyn Fn(&std::path::Path, &[SummaryRow]) -> Outcome| match &ablation {
        Ok((dir, rows)) => guarded(|| f(dir.path(), rows)),
        Err(e) => Err(format!("ablation failed: {e}")),
    };
    report(6, "loss ablation ordering", with_rows(&|_, rows| loss_ablation(rows)));
    report(7, "two-stage vs single-stage", with_rows(&strategy_ablation));
    report(8, "determinism and persistence", guarded(determinism_and_persistence));
    report(9, "config defaults", guarded(config_defaults));
    if failures == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} of 9 criteria failed");
        ExitCode::FAILURE
    }
}
