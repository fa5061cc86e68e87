//! One function per subcommand. Each writes its artifacts and a
//! `*.run.toml` record with the resolved config and the model hash.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ngsc_codec::entropy::{decode_image, encode_image, Bitstream};
use ngsc_codec::metrics::{bd_rate, bpp, psnr, read_rd_csv, sweep_rd, weighted_psnr, write_gnuplot, write_rd_csv, BitAllocationMap, RdCurve};
use ngsc_codec::rdo::{smoothed, StepLog, Trainer};
use ngsc_codec::CodecModel;
use ngsc_tensor::Tensor;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{check_q_list, Config};
use crate::data::{ingest_dataset, list_images, load_image, load_mask, save_png};
use crate::error::{io_err, CliError, Result};

/// Window of the trailing mean used to report training loss.
pub const LOSS_WINDOW: usize = 20;

#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    model_hash: Option<String>,
    inputs: BTreeMap<&'a str, String>,
    results: BTreeMap<&'a str, String>,
    config: &'a Config,
}

/// `path` with `suffix` appended to the file name.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

pub fn hash_hex(hash: u64) -> String {
    format!("{hash:016x}")
}

/// Hex SHA-256 of the little-endian bytes of a tensor.
pub fn tensor_digest(x: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in x.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn write_record(
    path: &Path,
    command: &str,
    model: Option<&CodecModel>,
    inputs: BTreeMap<&str, String>,
    results: BTreeMap<&str, String>,
    config: &Config,
) -> Result<()> {
    let record = RunRecord { command, model_hash: model.map(|m| hash_hex(m.hash())), inputs, results, config };
    let text = toml::to_string(&record).map_err(|e| CliError::Config(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

fn load_model(path: &Path) -> Result<CodecModel> {
    if !path.exists() {
        return Err(CliError::Io { path: path.into(), source: std::io::ErrorKind::NotFound.into() });
    }
    Ok(CodecModel::load(path)?)
}

fn batch(x: Tensor<f32>) -> Result<Tensor<f32>> {
    let s = x.shape().to_vec();
    Ok(x.reshape(vec![1, s[0], s[1], s[2]])?)
}

pub struct TrainReport {
    pub model_path: PathBuf,
    pub history: Vec<StepLog>,
    /// Held-out centre crops, `(1, 3, crop, crop)`.
    pub val: Vec<Tensor<f32>>,
    pub val_dir: PathBuf,
    pub model: CodecModel,
}

impl TrainReport {
    /// Trailing-mean loss over the first and the last [`LOSS_WINDOW`] steps.
    pub fn smoothed_loss(&self) -> (f64, f64) {
        let totals: Vec<f64> = self.history.iter().map(|r| r.total).collect();
        let s = smoothed(&totals, LOSS_WINDOW);
        let first = s[(LOSS_WINDOW - 1).min(s.len() - 1)];
        (first, s[s.len() - 1])
    }
}

/// Runs the three training phases on `data_dir`. Writes `train_log.csv`,
/// per-phase checkpoints, `model.ngwt`, the held-out crops under `val/` and
/// `run.toml` into `out_dir`.
pub fn cmd_train(cfg: &Config, data_dir: &Path, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    let d = &cfg.data;
    let ds = ingest_dataset(data_dir, d.crop, d.min_dim, d.val_count, d.seed)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let val_dir = out_dir.join("val");
    fs::create_dir_all(&val_dir).map_err(io_err(&val_dir))?;
    for (i, x) in ds.val.iter().enumerate() {
        save_png(x, &val_dir.join(format!("{i:04}.png")))?;
    }
    log::info!("training on {} images, {} held out", ds.train.images.len(), ds.val.len());

    let mut trainer = Trainer::new(CodecModel::new(cfg.model.clone())?, cfg.training.resolve())?;
    let log_path = out_dir.join("train_log.csv");
    let mut log = csv::Writer::from_writer(File::create(&log_path).map_err(io_err(&log_path))?);
    let history = trainer.run(&ds.train, None, Some(out_dir), Some(&mut log))?;
    let model_path = out_dir.join("model.ngwt");
    trainer.save(&model_path)?;

    let report = TrainReport { model_path, history, val: ds.val, val_dir, model: trainer.model };
    let (first, last) = if report.history.is_empty() { (f64::NAN, f64::NAN) } else { report.smoothed_loss() };
    let inputs = BTreeMap::from([("data", show(data_dir))]);
    let results = BTreeMap::from([
        ("steps", report.history.len().to_string()),
        ("train_images", ds.train.images.len().to_string()),
        ("val_images", report.val.len().to_string()),
        ("skipped_images", ds.skipped.to_string()),
        ("smoothed_loss_first", format!("{first:.6}")),
        ("smoothed_loss_last", format!("{last:.6}")),
    ]);
    write_record(&out_dir.join("run.toml"), "train", Some(&report.model), inputs, results, cfg)?;
    Ok(report)
}

pub struct EncodeReport {
    pub bytes: usize,
    pub bpp: f64,
    pub x_hat: Tensor<f32>,
    pub digest: String,
}

/// Encodes `image` at QIndex `q` (optionally steered by a grayscale ROI
/// mask) into `out`.
pub fn cmd_encode(cfg: &Config, image: &Path, q: f64, roi: Option<&Path>, model: &Path, out: &Path) -> Result<EncodeReport> {
    check_q_list(&[q])?;
    let model_ = load_model(model)?;
    let x = batch(load_image(image)?)?;
    let mask = roi.map(load_mask).transpose()?;
    let enc = encode_image(&model_, &x, q, mask.as_ref())?;
    let bytes = enc.stream.to_bytes();
    fs::write(out, &bytes).map_err(io_err(out))?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let report = EncodeReport { bytes: bytes.len(), bpp: bpp(bytes.len(), h, w), digest: tensor_digest(&enc.x_hat), x_hat: enc.x_hat };
    let mut inputs = BTreeMap::from([("image", show(image)), ("model", show(model)), ("q", q.to_string())]);
    if let Some(r) = roi {
        inputs.insert("roi", show(r));
    }
    let results = BTreeMap::from([
        ("bytes", report.bytes.to_string()),
        ("bpp", format!("{:.6}", report.bpp)),
        ("x_hat_sha256", report.digest.clone()),
    ]);
    write_record(&with_suffix(out, ".run.toml"), "encode", Some(&model_), inputs, results, cfg)?;
    Ok(report)
}

pub struct DecodeReport {
    pub x_hat: Tensor<f32>,
    pub digest: String,
}

/// Decodes a stream to a PNG. Refuses streams written by another model.
pub fn cmd_decode(cfg: &Config, stream: &Path, model: &Path, out: &Path) -> Result<DecodeReport> {
    let model_ = load_model(model)?;
    let data = fs::read(stream).map_err(io_err(stream))?;
    let dec = decode_image(&model_, &Bitstream::parse(&data)?)?;
    save_png(&dec.x_hat, out)?;
    let report = DecodeReport { digest: tensor_digest(&dec.x_hat), x_hat: dec.x_hat };
    let inputs = BTreeMap::from([("stream", show(stream)), ("model", show(model))]);
    let results = BTreeMap::from([("x_hat_sha256", report.digest.clone())]);
    write_record(&with_suffix(out, ".run.toml"), "decode", Some(&model_), inputs, results, cfg)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub reference: String,
    pub reconstruction: String,
    pub psnr: f64,
    pub psnr_roi: Option<f64>,
    pub psnr_nroi: Option<f64>,
}

/// PSNR of each `(reference, reconstruction)` pair; with a mask, the
/// ROI-weighted PSNR and the per-region values.
pub fn cmd_eval(cfg: &Config, pairs: &[(PathBuf, PathBuf)], roi: Option<&Path>, out: Option<&Path>) -> Result<Vec<EvalRow>> {
    let mask = roi.map(load_mask).transpose()?;
    let mut rows = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let (x, y) = (batch(load_image(a)?)?, batch(load_image(b)?)?);
        if x.shape() != y.shape() {
            return Err(CliError::Argument(format!("{} is {:?} but {} is {:?}", a.display(), x.shape(), b.display(), y.shape())));
        }
        let (p, pr, pn) = match &mask {
            Some(r) => {
                let rp = weighted_psnr(&x, &y, r, cfg.eval.w_roi)?;
                (rp.full, Some(rp.roi), Some(rp.nroi))
            }
            None => (psnr(&x, &y)?, None, None),
        };
        rows.push(EvalRow { reference: show(a), reconstruction: show(b), psnr: p, psnr_roi: pr, psnr_nroi: pn });
    }
    if let Some(out) = out {
        let mut w = csv::Writer::from_writer(File::create(out).map_err(io_err(out))?);
        for r in &rows {
            w.serialize(r).map_err(|e| CliError::Codec(e.into()))?;
        }
        w.flush().map_err(io_err(out))?;
        let mut inputs = BTreeMap::from([("pairs", pairs.len().to_string())]);
        if let Some(r) = roi {
            inputs.insert("roi", show(r));
        }
        write_record(&with_suffix(out, ".run.toml"), "eval", None, inputs, BTreeMap::new(), cfg)?;
    }
    Ok(rows)
}

/// Encodes every image of `dir` at each QIndex and writes the averaged RD
/// points, in QIndex order, to `out` (CSV) and `<out>.dat` (gnuplot). ROI masks, when given, are read from
/// `roi_dir` under the image's file name.
pub fn cmd_sweep(cfg: &Config, model: &Path, dir: &Path, q_list: &[f64], roi_dir: Option<&Path>, out: &Path) -> Result<RdCurve> {
    check_q_list(q_list)?;
    let model_ = load_model(model)?;
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(CliError::NoUsableImages { dir: dir.into(), skipped: 0 });
    }
    let images = files.iter().map(|p| batch(load_image(p)?)).collect::<Result<Vec<_>>>()?;
    let masks = roi_dir
        .map(|rd| files.iter().map(|p| load_mask(&rd.join(p.file_name().expect("file name")))).collect::<Result<Vec<_>>>())
        .transpose()?;
    let name = dir.file_name().map_or_else(|| "sweep".into(), |n| n.to_string_lossy().into_owned());
    let curve = sweep_rd(&model_, &name, &images, q_list, masks.as_deref(), cfg.eval.w_roi)?;
    write_rd_csv(&curve, BufWriter::new(File::create(out).map_err(io_err(out))?))?;
    let dat = with_suffix(out, ".dat");
    write_gnuplot(&curve, BufWriter::new(File::create(&dat).map_err(io_err(&dat))?))?;
    let mut inputs = BTreeMap::from([
        ("model", show(model)),
        ("dir", show(dir)),
        ("images", images.len().to_string()),
        ("q_list", q_list.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(",")),
    ]);
    if let Some(r) = roi_dir {
        inputs.insert("roi", show(r));
    }
    write_record(&with_suffix(out, ".run.toml"), "sweep", Some(&model_), inputs, BTreeMap::new(), cfg)?;
    Ok(curve)
}

pub fn read_curve(path: &Path) -> Result<RdCurve> {
    let name = path.file_stem().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    read_rd_csv(name, File::open(path).map_err(io_err(path))?).map_err(|source| CliError::Csv { path: path.into(), source })
}

/// BD-rate of `test` against `anchor`, in percent.
pub fn cmd_bdrate(anchor: &Path, test: &Path) -> Result<f64> {
    Ok(bd_rate(&read_curve(anchor)?, &read_curve(test)?)?)
}

/// Two decimals with a sign on nonzero values; rounding to zero prints
/// `0.00%`.
pub fn format_percent(v: f64) -> String {
    let s = format!("{v:+.2}%");
    if s == "+0.00%" || s == "-0.00%" {
        "0.00%".into()
    } else {
        s
    }
}

/// Writes the bit-allocation map of the costliest latent channel as
/// `<out>.pgm` (upsampled to image resolution) and `<out>.csv`.
pub fn cmd_bitmap(cfg: &Config, image: &Path, q: f64, model: &Path, out: &Path) -> Result<BitAllocationMap> {
    check_q_list(&[q])?;
    let model_ = load_model(model)?;
    let x = batch(load_image(image)?)?;
    let enc = encode_image(&model_, &x, q, None)?;
    let map = BitAllocationMap::from_bits(enc.y_bits, &enc.y_shape)?;
    let (pgm, csv_path) = (with_suffix(out, ".pgm"), with_suffix(out, ".csv"));
    map.write_pgm(ngsc_codec::net::LATENT_STRIDE, BufWriter::new(File::create(&pgm).map_err(io_err(&pgm))?))?;
    map.write_csv(BufWriter::new(File::create(&csv_path).map_err(io_err(&csv_path))?))?;
    let inputs = BTreeMap::from([("image", show(image)), ("model", show(model)), ("q", q.to_string())]);
    let results = BTreeMap::from([("channel", map.channel.to_string()), ("bits", format!("{:.3}", map.total_bits()))]);
    write_record(&with_suffix(out, ".run.toml"), "bitmap", Some(&model_), inputs, results, cfg)?;
    Ok(map)
}
