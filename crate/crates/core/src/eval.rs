//! Dataset evaluation per mask bin and inference timing.

use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::Inpainter;
use crate::masks::{gen_freeform, MaskBin};
use crate::metrics::{mae, psnr, ssim, to_unit_range};
use crate::nets::{composite, Stage};
use crate::tensor::Tensor;
use crate::train::derive_seed;

/// Serialises non-finite PSNR values as the strings `"inf"` / `"-inf"` / `"nan"`.
mod psnr_value {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad PSNR value {other:?}"))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemMetrics {
    pub index: usize,
    pub bin: MaskBin,
    pub hole_ratio: f64,
    pub mae: f64,
    #[serde(with = "psnr_value")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinMetrics {
    pub bin: MaskBin,
    pub count: usize,
    pub mae: f64,
    #[serde(with = "psnr_value")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bins: Vec<BinMetrics>,
    pub items: Vec<ItemMetrics>,
}

impl MetricsReport {
    /// Per-bin means of the item rows, in the order bins first appear.
    pub fn from_items(items: Vec<ItemMetrics>) -> Self {
        let mut order: Vec<MaskBin> = Vec::new();
        for it in &items {
            if !order.contains(&it.bin) {
                order.push(it.bin);
            }
        }
        let bins = order
            .into_iter()
            .map(|bin| {
                let rows: Vec<&ItemMetrics> = items.iter().filter(|i| i.bin == bin).collect();
                let n = rows.len() as f64;
                BinMetrics {
                    bin,
                    count: rows.len(),
                    mae: rows.iter().map(|r| r.mae).sum::<f64>() / n,
                    psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
                    ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
                }
            })
            .collect();
        Self { bins, items }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// One row per bin: `bin,count,mae,psnr,ssim`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count,mae,psnr,ssim\n");
        for b in &self.bins {
            let psnr = if b.psnr.is_infinite() { "inf".to_string() } else { b.psnr.to_string() };
            out.push_str(&format!("{},{},{},{},{}\n", b.bin.label(), b.count, b.mae, psnr, b.ssim));
        }
        out
    }
}

/// Scores one prediction against its ground truth, both in [−1, 1].
pub fn score_item(output: &Tensor, target: &Tensor) -> Result<(f64, f64, f64)> {
    let (o, t) = (to_unit_range(output), to_unit_range(target));
    Ok((mae(&o, &t)?, psnr(&o, &t)?, ssim(&o, &t)?))
}

/// Evaluates every image under one seeded free-form mask per bin. The
/// 256-stage output is composited with the known pixels before scoring.
pub fn evaluate(model: &Inpainter, data: &dyn Dataset, bins: &[MaskBin], seed: u64) -> Result<MetricsReport> {
    if bins.is_empty() {
        return Err(Error::Config("no mask bins selected".into()));
    }
    let mut items = Vec::new();
    for index in 0..data.len() {
        let target = data.get(index)?;
        for &bin in bins {
            let mask = gen_freeform(256, 256, bin, derive_seed(&[seed, index as u64, bin as u64]))?;
            let m = mask.to_tensor();
            let corrupted = target.mul_broadcast_channels(&m)?;
            let pyramid = model.run_pyramid(&corrupted, &m)?;
            let out = composite(pyramid.get(Stage::S256).expect("full pyramid"), &corrupted, &m)?;
            let (mae, psnr, ssim) = score_item(&out, &target)?;
            items.push(ItemMetrics {
                index,
                bin,
                hole_ratio: mask.hole_ratio(),
                mae,
                psnr,
                ssim,
            });
        }
    }
    Ok(MetricsReport::from_items(items))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iters: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples_ms: Vec<f64>,
}

impl BenchReport {
    pub fn from_samples(samples_ms: Vec<f64>) -> Result<Self> {
        if samples_ms.is_empty() {
            return Err(Error::invalid("no timing samples"));
        }
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Ok(Self {
            iters: n,
            mean_ms: samples_ms.iter().sum::<f64>() / n as f64,
            p95_ms: sorted[rank - 1],
            min_ms: sorted[0],
            max_ms: sorted[n - 1],
            samples_ms,
        })
    }
}

/// Times `iters` full 256 pyramid passes after `warmup` untimed ones.
pub fn bench(model: &Inpainter, iters: usize, warmup: usize) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::invalid("iters must be >= 1"));
    }
    let image = Tensor::from_fn([1, 3, 256, 256], |_, c, y, x| ((c * 31 + y * 7 + x * 3) % 200) as f32 / 100.0 - 1.0);
    let mask = crate::masks::rect_mask(256, 256, 64, 64, 128, 128).to_tensor();
    let corrupted = image.mul_broadcast_channels(&mask)?;
    for _ in 0..warmup {
        model.run_pyramid(&corrupted, &mask)?;
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t = Instant::now();
        std::hint::black_box(model.run_pyramid(&corrupted, &mask)?);
        samples.push(t.elapsed().as_secs_f64() * 1e3);
    }
    BenchReport::from_samples(samples)
}
