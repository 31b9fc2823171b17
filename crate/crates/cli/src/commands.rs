//! The five verbs. Each returns the manifest it wrote.

use std::path::{Path, PathBuf};
use std::time::Instant;

use gsimage::bitsback::{rate_saving_bound, BbPlan};
use gsimage::codec::{self, EncodedImage};
use gsimage::metrics::{bits_per_pixel, ms_ssim, psnr};
use gsimage::quant::qat_finetune;
use gsimage::train::fit;
use gsimage::{render, Image32, QuantizedCloud};
use serde_json::json;

use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::io::{load_checkpoint, load_image, read_file, save_checkpoint, save_png, write_file};
use crate::manifest::RunManifest;

/// Renders measured for the decode frame rate.
pub const FPS_RENDERS: usize = 100;

/// `<stem>.manifest.json` next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn check_frame(img: &Image32, width: usize, height: usize, path: &Path) -> CliResult<()> {
    if img.width() != width || img.height() != height {
        return Err(CliError::Image {
            path: path.to_path_buf(),
            message: format!(
                "image is {}x{}, expected {width}x{height}",
                img.width(),
                img.height()
            ),
        });
    }
    Ok(())
}

/// Fits a cloud and writes `<out>` (checkpoint), `<out>.png`, `<out>.csv`
/// and the manifest.
pub fn cmd_fit(image: &Path, out: &Path, s: &Settings) -> CliResult<RunManifest> {
    let started = Instant::now();
    let target = load_image(image)?;
    let (cloud, log) = fit(&target, &s.train_config()?)?;
    let fit_s = started.elapsed().as_secs_f64();

    let rendered = render(&cloud, &s.render_config())?;
    save_checkpoint(out, &cloud)?;
    let png = out.with_extension("png");
    save_png(&png, &rendered)?;
    let csv = out.with_extension("csv");
    write_file(&csv, log.to_csv().as_bytes())?;

    let mut m = RunManifest::new("fit", s);
    m.input(image)?;
    m.output(out)?;
    m.output(&png)?;
    m.metric("width", target.width());
    m.metric("height", target.height());
    m.metric("num_gaussians", cloud.len());
    m.metric("psnr_db", psnr(&rendered, &target)?);
    m.metric("ms_ssim", ms_ssim(&rendered, &target)?);
    m.metric(
        "psnr_by_step",
        log.records.iter().map(|r| json!([r.step, r.psnr])).collect::<Vec<_>>(),
    );
    m.timing("fit_s", fit_s);
    m.save(&manifest_path(out))?;
    Ok(m)
}

fn encode_with(qc: &QuantizedCloud, bitsback: bool) -> CliResult<EncodedImage> {
    Ok(if bitsback {
        codec::encode_bits_back(qc)?
    } else {
        codec::encode(qc)?
    })
}

/// Quantization-aware fine-tuning against the source image, then `.gsi` encoding.
pub fn cmd_compress(checkpoint: &Path, image: &Path, out: &Path, s: &Settings) -> CliResult<RunManifest> {
    let cloud = load_checkpoint(checkpoint)?;
    let target = load_image(image)?;
    check_frame(&target, cloud.width(), cloud.height(), image)?;

    let started = Instant::now();
    let qat = qat_finetune(&cloud, &target, &s.qat_config()?)?;
    let qat_s = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let enc = encode_with(&qat.quantized, s.bitsback)?;
    let encode_s = started.elapsed().as_secs_f64();
    write_file(out, &enc.to_bytes())?;

    let mut m = RunManifest::new("compress", s);
    m.input(checkpoint)?;
    m.input(image)?;
    m.output(out)?;
    let qc = &qat.quantized;
    m.metric("num_gaussians", qc.len());
    m.metric("bits_per_gaussian", qc.record_bits());
    m.metric("header_bytes", enc.header.byte_len());
    m.metric("payload_bits", enc.payload_bits);
    m.metric("total_bits", enc.total_bits);
    m.metric("bpp", enc.bpp());
    m.metric("pre_qat_psnr_db", qat.pre_psnr);
    m.metric("post_qat_psnr_db", qat.post_psnr);
    m.metric("commitment_loss", qat.commitment);
    if s.bitsback {
        let plain = codec::encode(qc)?;
        let plan = BbPlan::new(qc.len() as u64, qc.record_bits());
        m.metric("plain_total_bits", plain.total_bits);
        m.metric("bitsback_k", plan.k);
        m.metric("measured_saving_bits", plain.total_bits as f64 - enc.total_bits as f64);
        m.metric("expected_saving_bits", plan.expected_saving_bits);
    }
    m.timing("qat_s", qat_s);
    m.timing("encode_s", encode_s);
    m.save(&manifest_path(out))?;
    Ok(m)
}

/// Decodes and renders a `.gsi`, optionally scoring it against a reference.
pub fn cmd_decompress(input: &Path, out: &Path, reference: Option<&Path>, s: &Settings) -> CliResult<RunManifest> {
    let bytes = read_file(input)?;
    let started = Instant::now();
    let qc = codec::decode(&bytes)?;
    let parse_s = started.elapsed().as_secs_f64();

    let cfg = s.render_config();
    let started = Instant::now();
    let cloud = qc.to_cloud::<f32>()?;
    let rendered = render(&cloud, &cfg)?;
    let render_s = started.elapsed().as_secs_f64();
    save_png(out, &rendered)?;

    let started = Instant::now();
    for _ in 0..FPS_RENDERS {
        std::hint::black_box(render(&cloud, &cfg)?);
    }
    let fps = FPS_RENDERS as f64 / started.elapsed().as_secs_f64();

    let mut m = RunManifest::new("decompress", s);
    m.input(input)?;
    m.output(out)?;
    let (w, h) = (qc.width as usize, qc.height as usize);
    m.metric("width", w);
    m.metric("height", h);
    m.metric("num_gaussians", qc.len());
    m.metric("bits_back", codec::decode_image(&bytes)?.header.is_bits_back());
    m.metric("bpp", bits_per_pixel(8 * bytes.len() as u64, w, h));
    if let Some(r) = reference {
        let target = load_image(r)?;
        check_frame(&target, w, h, r)?;
        m.input(r)?;
        m.metric("psnr_db", psnr(&rendered, &target)?);
        m.metric("ms_ssim", ms_ssim(&rendered, &target)?);
    }
    m.timing("parse_s", parse_s);
    m.timing("render_s", render_s);
    m.timing("render_fps", fps);
    m.save(&manifest_path(out))?;
    Ok(m)
}

/// PSNR and MS-SSIM of `candidate` against `reference`; bpp when a stream is given.
pub fn cmd_eval(reference: &Path, candidate: &Path, stream: Option<&Path>, s: &Settings) -> CliResult<RunManifest> {
    let x = load_image(reference)?;
    let y = load_image(candidate)?;
    check_frame(&y, x.width(), x.height(), candidate)?;
    let mut m = RunManifest::new("eval", s);
    m.input(reference)?;
    m.input(candidate)?;
    m.metric("psnr_db", psnr(&x, &y)?);
    m.metric("ms_ssim", ms_ssim(&x, &y)?);
    if let Some(p) = stream {
        let bytes = read_file(p)?;
        codec::decode_image(&bytes)?;
        m.input(p)?;
        m.metric("bpp", bits_per_pixel(8 * bytes.len() as u64, x.width(), x.height()));
    }
    Ok(m)
}

pub const RD_CSV_HEADER: &str = "image,num_gaussians,mode,total_bits,bpp,psnr_db,ms_ssim";

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "ppm" | "pnm")
    )
}

/// Fits, fine-tunes and encodes every image in `dir` at every `N`, writing
/// one CSV row per (image, N, mode) with modes `plain`, `bitsback`, `bound`.
pub fn cmd_rd_sweep(dir: &Path, counts: &[usize], out: &Path, s: &Settings) -> CliResult<RunManifest> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();

    let mut m = RunManifest::new("rd-sweep", s);
    let mut csv = format!("{RD_CSV_HEADER}\n");
    let started = Instant::now();
    for path in &files {
        let target = match load_image(path) {
            Ok(t) => t,
            Err(e) => {
                m.warnings.push(format!("skipped {}: {e}", path.display()));
                continue;
            }
        };
        m.input(path)?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let (w, h) = (target.width(), target.height());
        for &n in counts {
            let run = Settings {
                num_gaussians: n,
                ..s.clone()
            };
            let (cloud, _) = fit(&target, &run.train_config()?)?;
            let qat = qat_finetune(&cloud, &target, &run.qat_config()?)?;
            let rendered = qat.quantized.render::<f32>(&run.render_config())?;
            let (p, ms) = (psnr(&rendered, &target)?, ms_ssim(&rendered, &target)?);
            let plain = codec::encode(&qat.quantized)?;
            let bb = codec::encode_bits_back(&qat.quantized)?;
            let bound_bits = plain.total_bits as f64 - rate_saving_bound(n as u64);
            let rows = [
                ("plain", plain.total_bits as f64),
                ("bitsback", bb.total_bits as f64),
                ("bound", bound_bits),
            ];
            for (mode, bits) in rows {
                csv.push_str(&format!(
                    "{name},{n},{mode},{bits:.3},{:.6},{p:.6},{ms:.6}\n",
                    bits / (w * h) as f64
                ));
            }
        }
    }
    write_file(out, csv.as_bytes())?;
    m.output(out)?;
    m.metric("images", files.len() - m.warnings.len());
    m.metric("rows", csv.lines().count() - 1);
    m.timing("sweep_s", started.elapsed().as_secs_f64());
    m.save(&manifest_path(out))?;
    Ok(m)
}
