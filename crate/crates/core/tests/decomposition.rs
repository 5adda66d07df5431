use kernelviz_core::stage2::{decompose, Stage2Config};
use kernelviz_core::warp::warp_sequence;
use kernelviz_core::{loss, DeformationSequence, RandomSource, StaticFactor};

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

/// Content drifting toward `theta_deg` (0 = right, 90 = up) at `speed`
/// px/frame, modulated smoothly along x.
fn drift(frames: usize, h: usize, w: usize, theta_deg: f64, speed: f64) -> DeformationSequence {
    let (c, s) = (theta_deg.to_radians().cos(), theta_deg.to_radians().sin());
    DeformationSequence::from_fn(frames, h, w, |t, _, x| {
        let m = speed * (0.8 + 0.2 * (2.0 * std::f64::consts::PI * x as f64 / w as f64).sin());
        // Backward sampling: content moving by m needs D growing by -m.
        ((-(t as f64) * m * c) as f32, ((t as f64) * m * s) as f32)
    })
    .unwrap()
}

/// Circular mean (degrees, screen convention) of -(D_{t+1} - D_t) over the
/// pixels where the reference motion is at least `min_mag`.
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

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

#[test]
fn recovers_synthetic_drift() {
    let (t, h, w) = (8, 32, 32);
    let texture = blob_texture(h, w, 5);
    let truth = drift(t, h, w, 30.0, 0.8);
    let video = warp_sequence(&texture, &truth).unwrap();
    let start = std::time::Instant::now();
    let out = decompose(&video, &Stage2Config { seed: 1, ..Stage2Config::default() }).unwrap();
    let recon = out.reconstruction().unwrap();
    let psnr = loss::psnr(video.data(), recon.data()).unwrap();
    let truth_dir = masked_direction(&truth, &truth, 0.5).unwrap();
    let dir = masked_direction(&out.deform, &truth, 0.5).unwrap();
    eprintln!("psnr {psnr:.2} dB, direction {dir:.1} vs {truth_dir:.1}, {:?}", start.elapsed());
    assert!((truth_dir - 30.0).abs() < 1e-3);
    assert!(psnr >= 25.0);
    assert!(angle_gap(dir, truth_dir) <= 20.0);
}
