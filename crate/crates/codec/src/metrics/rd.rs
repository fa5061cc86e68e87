use std::io::{Read, Write};

use ngsc_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::psnr::{bpp, psnr, weighted_psnr};
use crate::entropy::{decode_image, encode_image};
use crate::error::{extent, CodecError, Result};
use crate::net::CodecModel;

/// One operating point; column order of the RD CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub q: Option<f64>,
    pub bpp: f64,
    pub psnr: f64,
    pub psnr_roi: Option<f64>,
    pub psnr_nroi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RdCurve {
    pub name: String,
    /// Sorted by rate.
    pub points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(name: impl Into<String>, mut points: Vec<RdPoint>) -> Result<Self> {
        let name = name.into();
        if points.iter().any(|p| !p.bpp.is_finite() || !p.psnr.is_finite()) {
            return Err(CodecError::BdRate(format!("curve `{name}` has non-finite points")));
        }
        points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        if points.windows(2).any(|w| w[1].psnr < w[0].psnr) {
            log::warn!("curve `{name}`: PSNR decreases along increasing rate");
        }
        Ok(Self { name, points })
    }
}

/// Encodes and decodes every image at every QIndex and averages PSNR and
/// bpp per QIndex. With `roi` masks (one per image, `(1, 1, H, W)`) the
/// masks also steer the encoder and the region PSNRs are reported.
/// Work is spread over threads; results do not depend on the thread count.
pub fn sweep_rd(
    model: &CodecModel,
    name: &str,
    images: &[Tensor<f32>],
    q_list: &[f64],
    roi: Option<&[Tensor<f32>]>,
    w_roi: f64,
) -> Result<RdCurve> {
    if images.is_empty() || q_list.is_empty() {
        return Err(extent("sweep", "need at least one image and one QIndex"));
    }
    if let Some(masks) = roi {
        if masks.len() != images.len() {
            return Err(extent("sweep", format!("{} masks for {} images", masks.len(), images.len())));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..q_list.len()).flat_map(|qi| (0..images.len()).map(move |ii| (qi, ii))).collect();
    let run = |(qi, ii): (usize, usize)| -> Result<(f64, f64, Option<(f64, f64)>)> {
        let x = &images[ii];
        let mask = roi.map(|m| &m[ii]);
        let enc = encode_image(model, x, q_list[qi], mask)?;
        let bytes = enc.stream.to_bytes();
        let dec = decode_image(model, &enc.stream)?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let regions = match mask {
            Some(m) => {
                let r = weighted_psnr(x, &dec.x_hat, m, w_roi)?;
                Some((r.roi, r.nroi))
            }
            None => None,
        };
        Ok((bpp(bytes.len(), h, w), psnr(x, &dec.x_hat)?, regions))
    };
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let mut results: Vec<Option<Result<(f64, f64, Option<(f64, f64)>)>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let jobs = &jobs;
                scope.spawn(move || jobs.iter().enumerate().skip(t).step_by(threads).map(|(k, &j)| (k, run(j))).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for (k, r) in h.join().expect("sweep worker panicked") {
                results[k] = Some(r);
            }
        }
    });
    let results = results.into_iter().map(|r| r.expect("every job ran")).collect::<Result<Vec<_>>>()?;
    let n = images.len() as f64;
    let points = q_list
        .iter()
        .enumerate()
        .map(|(qi, &q)| {
            let rows = &results[qi * images.len()..(qi + 1) * images.len()];
            let mean = |f: &dyn Fn(&(f64, f64, Option<(f64, f64)>)) -> f64| rows.iter().map(f).sum::<f64>() / n;
            RdPoint {
                q: Some(q),
                bpp: mean(&|r| r.0),
                psnr: mean(&|r| r.1),
                psnr_roi: roi.map(|_| mean(&|r| r.2.map_or(0.0, |v| v.0))),
                psnr_nroi: roi.map(|_| mean(&|r| r.2.map_or(0.0, |v| v.1))),
            }
        })
        .collect();
    // Keep QIndex order; the caller decides whether to sort by rate.
    Ok(RdCurve { name: name.into(), points })
}

pub fn write_rd_csv(curve: &RdCurve, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in &curve.points {
        w.serialize(p)?;
    }
    if curve.points.is_empty() {
        w.write_record(["q", "bpp", "psnr", "psnr_roi", "psnr_nroi"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rd_csv(name: impl Into<String>, input: impl Read) -> Result<RdCurve> {
    let mut r = csv::Reader::from_reader(input);
    let points = r.deserialize().collect::<std::result::Result<Vec<RdPoint>, _>>()?;
    RdCurve::new(name, points)
}

/// Whitespace-separated columns with a `#` header; missing values as `NaN`.
pub fn write_gnuplot(curve: &RdCurve, mut out: impl Write) -> Result<()> {
    writeln!(out, "# {}", curve.name)?;
    writeln!(out, "# q bpp psnr psnr_roi psnr_nroi")?;
    let opt = |v: Option<f64>| v.map_or("NaN".to_string(), |v| format!("{v:.6}"));
    for p in &curve.points {
        writeln!(out, "{} {:.6} {:.6} {} {}", opt(p.q), p.bpp, p.psnr, opt(p.psnr_roi), opt(p.psnr_nroi))?;
    }
    Ok(())
}
