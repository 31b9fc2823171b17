//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gsimage::bitsback::{bb_decode, bb_encode_with_k, k_suffices, log2_factorial, plain_ans_len, select_k};
use gsimage::codec::{self, RecordLayout};
use gsimage::grad::{backward_render, chol_backward};
use gsimage::metrics::{ms_ssim, psnr, MS_SSIM_WEIGHTS};
use gsimage::quant::{quantize_asym, AsymQuant, QuantizedCloud, QuantizedGaussian};
use gsimage::{render, FactorizationKind, Gaussian2D, GaussianCloud, ImageBuffer, RenderConfig};
use gsimage_cli::commands::{cmd_compress, cmd_decompress, cmd_fit};
use gsimage_cli::io::{load_checkpoint, load_image, read_file};
use gsimage_cli::{RunManifest, Settings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FIXTURE: &str = "../cli/tests/data/astronaut_128.png";

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within_budget(started: Instant, limit_s: f64) -> (bool, String) {
    let s = started.elapsed().as_secs_f64();
    (s < limit_s, format!("{s:.1} s of {limit_s:.0} s"))
}

// ---------------------------------------------------------------------------
// Independent forward model used as the finite-difference oracle.

fn oracle_cov(raw: [f64; 3], kind: FactorizationKind) -> [f64; 3] {
    let diag = |v: f64| (v + 0.5).max(1e-3);
    match kind {
        FactorizationKind::Cholesky => {
            let (l1, l2, l3) = (diag(raw[0]), raw[1], diag(raw[2]));
            [l1 * l1, l1 * l2, l2 * l2 + l3 * l3]
        }
        FactorizationKind::RotationScaling => {
            let (s1, s2) = (diag(raw[1]), diag(raw[2]));
            let (sin, cos) = raw[0].sin_cos();
            // R diag(s1², s2²) Rᵀ with R = [[cos, −sin], [sin, cos]]
            let r = [[cos, -sin], [sin, cos]];
            let v = [s1 * s1, s2 * s2];
            let e = |i: usize, j: usize| r[i][0] * v[0] * r[j][0] + r[i][1] * v[1] * r[j][1];
            [e(0, 0), e(0, 1), e(1, 1)]
        }
    }
}

fn oracle_render(p: &[f64], kind: FactorizationKind, w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; 3 * w * h];
    for g in p.chunks_exact(8) {
        let cx = (g[0].tanh() + 1.0) / 2.0 * w as f64;
        let cy = (g[1].tanh() + 1.0) / 2.0 * h as f64;
        let [a, b, c] = oracle_cov([g[2], g[3], g[4]], kind);
        let det = a * c - b * b;
        let (ia, ib, ic) = (c / det, -b / det, a / det);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let sigma = 0.5 * (ia * dx * dx + 2.0 * ib * dx * dy + ic * dy * dy);
                let wgt = (-sigma).exp();
                for ch in 0..3 {
                    out[ch * w * h + y * w + x] += g[5 + ch] * wgt;
                }
            }
        }
    }
    out
}

fn oracle_l2(p: &[f64], kind: FactorizationKind, w: usize, h: usize, target: &[f64]) -> f64 {
    let img = oracle_render(p, kind, w, h);
    img.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / img.len() as f64
}

fn random_params(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(8 * n);
    for _ in 0..n {
        p.push(rng.gen_range(-1.2..1.2));
        p.push(rng.gen_range(-1.2..1.2));
        p.push(rng.gen_range(0.3..2.0));
        p.push(rng.gen_range(-1.0..1.0));
        p.push(rng.gen_range(0.3..2.0));
        for _ in 0..3 {
            p.push(rng.gen_range(-1.0..1.0));
        }
    }
    p
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let configs = 120;
    let (mut worst_rel, mut checked, mut bad) = (0.0f64, 0usize, 0usize);
    for case in 0..configs {
        let kind = if case % 2 == 0 {
            FactorizationKind::Cholesky
        } else {
            FactorizationKind::RotationScaling
        };
        let n = rng.gen_range(1..=5);
        let (w, h) = (rng.gen_range(3..=12), rng.gen_range(3..=12));
        let p = random_params(&mut rng, n);
        let target: Vec<f64> = (0..3 * w * h).map(|_| rng.gen()).collect();

        let gaussians = p.chunks_exact(8).map(Gaussian2D::from_slice).collect();
        let cloud = GaussianCloud::<f64>::new(gaussians, kind, w, h).unwrap();
        let cfg = RenderConfig::dense();
        let rendered = render(&cloud, &cfg).unwrap();
        let upstream = ImageBuffer::from_planar(
            w,
            h,
            rendered
                .as_slice()
                .iter()
                .zip(&target)
                .map(|(a, b)| 2.0 * (a - b) / (3 * w * h) as f64)
                .collect(),
        )
        .unwrap();
        let analytic = backward_render(&cloud, &upstream, &cfg).unwrap().to_flat();

        let eps = 1e-6;
        for i in 0..p.len() {
            let mut hi = p.clone();
            let mut lo = p.clone();
            hi[i] += eps;
            lo[i] -= eps;
            let fd = (oracle_l2(&hi, kind, w, h, &target) - oracle_l2(&lo, kind, w, h, &target)) / (2.0 * eps);
            let a = analytic[i];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs());
            checked += 1;
            if abs > 1e-6 && rel > 1e-3 {
                bad += 1;
            }
            if abs > 1e-6 {
                worst_rel = worst_rel.max(rel);
            }
        }
    }

    // The l2 partial: d⟨G, LLᵀ⟩/dl2 = 2·g2·l1 + 2·g3·l2.
    let mut regression_ok = true;
    for _ in 0..200 {
        let g = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
        let l = [rng.gen_range(0.1..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.1..2.0)];
        let inner = |l: [f64; 3]| {
            let s = [l[0] * l[0], l[0] * l[1], l[1] * l[1] + l[2] * l[2]];
            g[0] * s[0] + 2.0 * g[1] * s[1] + g[2] * s[2]
        };
        let eps = 1e-6;
        let fd = (inner([l[0], l[1] + eps, l[2]]) - inner([l[0], l[1] - eps, l[2]])) / (2.0 * eps);
        let closed = 2.0 * g[1] * l[0] + 2.0 * g[2] * l[1];
        let got = chol_backward(g, l)[1];
        regression_ok &= (got - closed).abs() < 1e-12 && (got - fd).abs() < 1e-6;
    }
    let (fast, time) = within_budget(started, 60.0);
    outcome(
        bad == 0 && regression_ok && fast,
        format!(
            "{configs} configs, {checked} partials, {bad} outside tolerance, worst rel err {worst_rel:.2e}, l2 regression {}, {time}",
            if regression_ok { "ok" } else { "FAILED" }
        ),
    )
}

fn random_cloud(rng: &mut ChaCha8Rng, kind: FactorizationKind) -> GaussianCloud<f64> {
    let (w, h) = (rng.gen_range(16..=64), rng.gen_range(16..=64));
    let n = rng.gen_range(20..=200);
    let mut cloud = GaussianCloud::init_random(n, kind, w, h, rng.gen()).unwrap();
    for g in cloud.gaussians_mut() {
        for c in &mut g.color_w {
            *c = rng.gen_range(-1.0..=1.0);
        }
    }
    cloud
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_trunc, mut worst_perm) = (0.0f64, 0.0f64);
    for i in 0..50 {
        let kind = if i % 2 == 0 {
            FactorizationKind::Cholesky
        } else {
            FactorizationKind::RotationScaling
        };
        let cloud = random_cloud(&mut rng, kind);
        let truncated = render(&cloud, &RenderConfig::default()).unwrap();
        let dense = render(&cloud, &RenderConfig::dense()).unwrap();
        for (a, b) in truncated.as_slice().iter().zip(dense.as_slice()) {
            worst_trunc = worst_trunc.max((a - b).abs());
        }
        let mut order: Vec<usize> = (0..cloud.len()).collect();
        for k in (1..order.len()).rev() {
            order.swap(k, rng.gen_range(0..=k));
        }
        let shuffled = render(&cloud.permuted(&order), &RenderConfig::default()).unwrap();
        for (a, b) in truncated.as_slice().iter().zip(shuffled.as_slice()) {
            worst_perm = worst_perm.max((a - b).abs());
        }
    }
    let (fast, time) = within_budget(started, 60.0);
    outcome(
        worst_trunc <= 1e-3 && worst_perm <= 1e-5 && fast,
        format!("50 clouds, truncated vs dense max {worst_trunc:.3e} (limit 1e-3), permutation max {worst_perm:.3e} (limit 1e-5), {time}"),
    )
}

// ---------------------------------------------------------------------------
// Desk-scale fitting, shared by criteria 3, 4, 5 and 9.

struct DeskRun {
    dir: PathBuf,
    settings: Settings,
    fit: RunManifest,
    checkpoint: PathBuf,
    fit_s: f64,
}

fn desk_settings() -> Settings {
    Settings {
        num_gaussians: 2000,
        steps: 10_000,
        log_every: 1000,
        seed: 0,
        ..Settings::default()
    }
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(FIXTURE)
}

fn psnr_at(m: &RunManifest, step: u64) -> Option<f64> {
    m.metrics["psnr_by_step"]
        .as_array()?
        .iter()
        .find(|r| r[0].as_u64() == Some(step))
        .and_then(|r| r[1].as_f64())
}

fn criterion_3(dir: &Path) -> (Outcome, Option<DeskRun>) {
    let started = Instant::now();
    let settings = desk_settings();
    let checkpoint = dir.join("desk_l2.gsck");
    let fit = match cmd_fit(&fixture(), &checkpoint, &settings) {
        Ok(m) => m,
        Err(e) => return (outcome(false, format!("fit failed: {e}")), None),
    };
    let fit_s = started.elapsed().as_secs_f64();
    let (p1000, pfinal) = (psnr_at(&fit, 1000).unwrap_or(f64::NAN), fit.metrics["psnr_db"].as_f64().unwrap());
    let (fast, time) = within_budget(started, 15.0 * 60.0);
    let o = outcome(
        pfinal >= 30.0 && pfinal - p1000 >= 3.0 && fast,
        format!("128x128 crop, N=2000, 10000 steps: {pfinal:.3} dB (gate 30), step-1000 {p1000:.3} dB, gain {:.3} dB (gate 3), {time}", pfinal - p1000),
    );
    (
        o,
        Some(DeskRun {
            dir: dir.to_path_buf(),
            settings,
            fit,
            checkpoint,
            fit_s,
        }),
    )
}

fn criterion_4(run: &DeskRun) -> Outcome {
    let started = Instant::now();
    let l2 = run.fit.metrics["psnr_db"].as_f64().unwrap();
    let mut pass = true;
    let mut parts = vec![format!("l2 {l2:.3}")];
    for loss in ["l1", "ssim", "l1+ssim"] {
        let s = Settings {
            loss: loss.into(),
            ..run.settings.clone()
        };
        let out = run.dir.join(format!("desk_{}.gsck", loss.replace('+', "_")));
        match cmd_fit(&fixture(), &out, &s) {
            Ok(m) => {
                let p = m.metrics["psnr_db"].as_f64().unwrap();
                pass &= l2 >= p - 0.2;
                parts.push(format!("{loss} {p:.3}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{loss} failed: {e}"));
            }
        }
    }
    let (fast, time) = within_budget(started, 4.0 * 15.0 * 60.0);
    outcome(pass && fast, format!("PSNR dB: {}, {time}", parts.join(", ")))
}

struct CompressRun {
    gsi: PathBuf,
    manifest: RunManifest,
}

fn criterion_5(run: &DeskRun) -> (Outcome, Option<CompressRun>) {
    let started = Instant::now();
    let cloud = load_checkpoint(&run.checkpoint).unwrap().cast::<f64>();

    // Quantize-dequantize error against a quantizer spanning the fitted range.
    let covs: Vec<[f64; 3]> = cloud.gaussians().iter().map(|g| g.cov_raw).collect();
    let q = AsymQuant::fit_range(&covs, 6).unwrap();
    let mut worst_ratio = 0.0f64;
    for l in &covs {
        let (_, deq) = quantize_asym(*l, &q);
        for i in 0..3 {
            worst_ratio = worst_ratio.max((deq[i] - l[i]).abs() / (q.gamma[i] / 2.0));
        }
    }

    let gsi = run.dir.join("desk.gsi");
    let manifest = match cmd_compress(&run.checkpoint, &fixture(), &gsi, &run.settings) {
        Ok(m) => m,
        Err(e) => return (outcome(false, format!("compress failed: {e}")), None),
    };
    let payload = manifest.metrics["payload_bits"].as_u64().unwrap();
    let pre = manifest.metrics["pre_qat_psnr_db"].as_f64().unwrap();
    let post = manifest.metrics["post_qat_psnr_db"].as_f64().unwrap();
    let (fast, time) = within_budget(started, 10.0 * 60.0);
    let pass = payload == 2000 * 56 && worst_ratio <= 1.0 && pre - post <= 1.0 && fast;
    (
        outcome(
            pass,
            format!(
                "payload {payload} bits (expect {}), max |deq - l| / (gamma/2) = {worst_ratio:.9}, pre-QAT {pre:.3} dB, post-QAT {post:.3} dB, drop {:.3} dB (limit 1.0), {time}",
                2000 * 56,
                pre - post
            ),
        ),
        Some(CompressRun { gsi, manifest }),
    )
}

fn random_quantized(rng: &mut ChaCha8Rng) -> QuantizedCloud {
    let bits = rng.gen_range(1..=16u8);
    let stages = rng.gen_range(1..=3usize);
    let size = rng.gen_range(2..=16usize);
    let qmax = (1u32 << bits) - 1;
    let position = |rng: &mut ChaCha8Rng| loop {
        let v = gsimage::quant::position_to_fp16(rng.gen_range(-0.999f32..0.999));
        if rng.gen_bool(0.8) {
            return v;
        }
        // Arbitrary bit patterns that still decode inside (−1, 1).
        let raw: u16 = rng.gen();
        let f = gsimage::quant::fp16_to_f32(raw);
        if f.is_finite() && f.abs() < 1.0 {
            return raw;
        }
    };
    QuantizedCloud {
        width: rng.gen_range(1..=24),
        height: rng.gen_range(1..=24),
        kind: if rng.gen() {
            FactorizationKind::Cholesky
        } else {
            FactorizationKind::RotationScaling
        },
        bits,
        gamma: [0; 3].map(|_| rng.gen_range(0.01f32..0.3)),
        beta: [0; 3].map(|_| rng.gen_range(-1.0f32..0.5)),
        codebooks: (0..stages)
            .map(|_| (0..size).map(|_| [0; 3].map(|_| rng.gen_range(-1.0f32..1.0))).collect())
            .collect(),
        kmeans_seed: rng.gen(),
        gaussians: (0..rng.gen_range(1..=40))
            .map(|_| QuantizedGaussian {
                position: [position(rng), position(rng)],
                cov_codes: [0; 3].map(|_| rng.gen_range(0..=qmax) as u16),
                color_indices: (0..stages).map(|_| rng.gen_range(0..size) as u8).collect(),
            })
            .collect(),
    }
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut mismatched, mut render_diffs, mut size_errors) = (0, 0, 0);
    for _ in 0..1000 {
        let qc = random_quantized(&mut rng);
        let enc = codec::encode(&qc).unwrap();
        let expect_bits = qc.len() as u64 * (32 + 3 * u64::from(qc.bits) + qc.stages() as u64 * u64::from(qc.index_bits()));
        size_errors += usize::from(enc.payload_bits != expect_bits);
        let back = codec::decode(&enc.to_bytes()).unwrap();
        if back != qc {
            mismatched += 1;
            continue;
        }
        let cfg = RenderConfig::default();
        let (a, b) = (qc.render::<f32>(&cfg), back.render::<f32>(&cfg));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                let same = a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits());
                render_diffs += usize::from(!same);
            }
            (Err(a), Err(b)) => render_diffs += usize::from(a != b),
            _ => render_diffs += 1,
        }
    }
    let (fast, time) = within_budget(started, 60.0);
    outcome(
        mismatched == 0 && render_diffs == 0 && size_errors == 0 && fast,
        format!("1000 random clouds: {mismatched} decode mismatches, {render_diffs} render differences, {size_errors} payload size errors, {time}"),
    )
}

fn distinct_records(n: usize, rng: &mut ChaCha8Rng) -> Vec<QuantizedGaussian> {
    let mut seen = std::collections::BTreeSet::new();
    while seen.len() < n {
        seen.insert(QuantizedGaussian {
            position: [
                gsimage::quant::position_to_fp16(rng.gen_range(-0.99f32..0.99)),
                gsimage::quant::position_to_fp16(rng.gen_range(-0.99f32..0.99)),
            ],
            cov_codes: [0; 3].map(|_| rng.gen_range(0..64)),
            color_indices: vec![rng.gen_range(0..8), rng.gen_range(0..8)],
        });
    }
    let mut v: Vec<_> = seen.into_iter().collect();
    for k in (1..v.len()).rev() {
        v.swap(k, rng.gen_range(0..=k));
    }
    v
}

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let layout = RecordLayout {
        cov_bits: 6,
        stages: 2,
        index_bits: 3,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [8usize, 64, 512, 4096] {
        let recs = distinct_records(n, &mut rng);
        let r = f64::from(layout.record_bits());
        let k = select_k(n as u64, r);
        // Predicate re-check, independent of the search.
        let holds = k as f64 * r >= log2_factorial(n as u64 - k);
        let prev_fails = k == 0 || !((k - 1) as f64 * r >= log2_factorial(n as u64 - k + 1));
        pass &= holds && prev_fails && k_suffices(n as u64, k, r);

        let bytes = match bb_encode_with_k(&recs, layout, k as usize) {
            Ok(b) => b,
            Err(e) => {
                pass = false;
                parts.push(format!("N={n}: encode failed: {e}"));
                continue;
            }
        };
        let mut got = bb_decode(&bytes, n, layout).unwrap();
        let mut want = recs.clone();
        got.sort();
        want.sort();
        let exact = got == want;

        let m = (n as u64 - k) as f64;
        let saving: f64 = (2..=(n as u64 - k)).map(|i| (i as f64).log2()).sum::<f64>() - m.log2();
        let plain = plain_ans_len(&recs, layout) as f64;
        let measured = 8.0 * bytes.len() as f64;
        let off = measured - (plain - saving);
        pass &= exact && off.abs() <= 64.0;
        parts.push(format!("N={n} K*={k} saving {saving:.1} off {off:+.1}{}", if exact { "" } else { " MULTISET MISMATCH" }));
    }
    let (fast, time) = within_budget(started, 120.0);
    outcome(pass && fast, format!("{}, {time}", parts.join("; ")))
}

// ---------------------------------------------------------------------------
// Reference metrics computed directly from their definitions.

fn oracle_psnr(x: &[f64], y: &[f64]) -> f64 {
    let mse = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a.clamp(0.0, 1.0) - b.clamp(0.0, 1.0)).powi(2))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

fn oracle_window() -> Vec<Vec<f64>> {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let total: f64 = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).sum();
    g.iter().map(|a| g.iter().map(|b| a * b / total).collect()).collect()
}

fn oracle_ssim_cs(a: &[f64], b: &[f64], w: usize, h: usize, win: &[Vec<f64>]) -> (f64, f64) {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut s_sum, mut cs_sum, mut count) = (0.0, 0.0, 0.0);
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, row) in win.iter().enumerate() {
                for (dx, &k) in row.iter().enumerate() {
                    let i = (y0 + dy) * w + x0 + dx;
                    ma += k * a[i];
                    mb += k * b[i];
                    aa += k * a[i] * a[i];
                    bb += k * b[i] * b[i];
                    ab += k * a[i] * b[i];
                }
            }
            let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
            let cs = (2.0 * cov + c2) / (va + vb + c2);
            s_sum += cs * (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            cs_sum += cs;
            count += 1.0;
        }
    }
    (s_sum / count, cs_sum / count)
}

fn oracle_ms_ssim(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    let win = oracle_window();
    let mut scales = 1;
    while scales < 5 && (w.min(h) >> scales) >= 11 {
        scales += 1;
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let mut total = 0.0;
    for c in 0..3 {
        let mut a: Vec<f64> = x[c * w * h..(c + 1) * w * h].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut b: Vec<f64> = y[c * w * h..(c + 1) * w * h].iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let (mut cw, mut ch) = (w, h);
        let mut value = 1.0;
        for s in 0..scales {
            let (ssim, cs) = oracle_ssim_cs(&a, &b, cw, ch, &win);
            let t = if s == scales - 1 { ssim } else { cs };
            value *= t.max(0.0).powf(MS_SSIM_WEIGHTS[s] / wsum);
            let pool = |v: &[f64]| -> Vec<f64> {
                let mut o = Vec::new();
                for yy in 0..ch / 2 {
                    for xx in 0..cw / 2 {
                        let i = 2 * yy * cw + 2 * xx;
                        o.push((v[i] + v[i + 1] + v[i + cw] + v[i + cw + 1]) / 4.0);
                    }
                }
                o
            };
            a = pool(&a);
            b = pool(&b);
            cw /= 2;
            ch /= 2;
        }
        total += value;
    }
    total / 3.0
}

fn criterion_8() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst_p, mut worst_m) = (0.0f64, 0.0f64);
    for i in 0..20 {
        let (w, h) = if i % 4 == 0 { (176, 180) } else { (rng.gen_range(24..=96), rng.gen_range(24..=96)) };
        let base: Vec<f64> = (0..3 * w * h).map(|j| 0.5 + 0.4 * ((j % w) as f64 * 0.2).sin() * ((j / w) as f64 * 0.13).cos()).collect();
        let amp = rng.gen_range(0.01..0.3);
        let noisy: Vec<f64> = base.iter().map(|v| v + amp * (rng.gen::<f64>() - 0.5)).collect();
        let x = ImageBuffer::from_planar(w, h, base.clone()).unwrap();
        let y = ImageBuffer::from_planar(w, h, noisy.clone()).unwrap();
        worst_p = worst_p.max((psnr(&x, &y).unwrap() - oracle_psnr(&base, &noisy)).abs());
        worst_m = worst_m.max((ms_ssim(&x, &y).unwrap() - oracle_ms_ssim(&base, &noisy, w, h)).abs());
    }
    let x = ImageBuffer::<f64>::from_fn(64, 64, |x, y, c| ((x * 7 + y * 3 + c) % 17) as f64 / 16.0);
    let identity = psnr(&x, &x).unwrap() == 100.0 && ms_ssim(&x, &x).unwrap() == 1.0;
    let (fast, time) = within_budget(started, 60.0);
    outcome(
        worst_p <= 1e-6 && worst_m <= 1e-4 && identity && fast,
        format!("20 pairs: max PSNR diff {worst_p:.2e} dB, max MS-SSIM diff {worst_m:.2e}, identity {}, {time}", if identity { "exact" } else { "WRONG" }),
    )
}

fn criterion_9(run: &DeskRun, compressed: Option<&CompressRun>) -> Outcome {
    let started = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;

    let second = run.dir.join("desk_l2_again.gsck");
    match cmd_fit(&fixture(), &second, &run.settings) {
        Ok(_) => {
            let same = read_file(&run.checkpoint).unwrap() == read_file(&second).unwrap();
            pass &= same;
            parts.push(format!("fit checkpoints {}", if same { "identical" } else { "DIFFER" }));
        }
        Err(e) => {
            pass = false;
            parts.push(format!("second fit failed: {e}"));
        }
    }

    match compressed {
        Some(c) => {
            let again = cmd_compress(&run.checkpoint, &fixture(), &c.gsi, &run.settings).unwrap();
            let same = again.reproducible_json() == c.manifest.reproducible_json();
            pass &= same;
            parts.push(format!("compress manifests {}", if same { "identical" } else { "DIFFER" }));

            let png = run.dir.join("desk_decoded.png");
            let a = cmd_decompress(&c.gsi, &png, Some(&fixture()), &run.settings).unwrap();
            let b = cmd_decompress(&c.gsi, &png, Some(&fixture()), &run.settings).unwrap();
            let same = a.reproducible_json() == b.reproducible_json();
            pass &= same;
            parts.push(format!("decompress manifests {}", if same { "identical" } else { "DIFFER" }));

            let decoded = a.metrics["psnr_db"].as_f64().unwrap();
            let post = c.manifest.metrics["post_qat_psnr_db"].as_f64().unwrap();
            pass &= (decoded - post).abs() <= 1e-6;
            parts.push(format!("decoded PSNR matches post-QAT within {:.1e} dB", (decoded - post).abs()));
        }
        None => {
            pass = false;
            parts.push("no compressed stream from criterion 5".into());
        }
    }
    let elapsed = started.elapsed().as_secs_f64() + run.fit_s;
    let fast = elapsed < 20.0 * 60.0;
    outcome(pass && fast, format!("{}, {elapsed:.1} s of 1200 s", parts.join(", ")))
}

fn report(id: usize, title: &str, o: &Outcome) -> bool {
    println!("[{}] criterion {id} {title}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    o.pass
}

fn main() {
    // `cargo test -- --list` and filtered runs only need to see the target.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let dir = tempfile::tempdir().expect("temp dir");
    let _ = load_image(&fixture()).expect("fixture image");

    let mut all = true;
    all &= report(1, "gradient correctness", &criterion_1());
    all &= report(2, "rasterizer equivalence", &criterion_2());
    let (c3, desk) = criterion_3(dir.path());
    all &= report(3, "desk-scale fitting", &c3);
    let compressed = match &desk {
        Some(run) => {
            all &= report(4, "loss ablation ordering", &criterion_4(run));
            let (c5, compressed) = criterion_5(run);
            all &= report(5, "quantization pipeline", &c5);
            compressed
        }
        None => {
            all &= report(4, "loss ablation ordering", &outcome(false, "no desk-scale fit".into()));
            all &= report(5, "quantization pipeline", &outcome(false, "no desk-scale fit".into()));
            None
        }
    };
    all &= report(6, "codec round trip", &criterion_6());
    all &= report(7, "bits-back accounting", &criterion_7());
    all &= report(8, "metrics", &criterion_8());
    match &desk {
        Some(run) => all &= report(9, "determinism", &criterion_9(run, compressed.as_ref())),
        None => all &= report(9, "determinism", &outcome(false, "no desk-scale fit".into())),
    }
    if !all {
        std::process::exit(1);
    }
}
