//! Command-line front end for texgan.

pub mod service;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use texgan_core::data::{ingest, Dataset, Split};
use texgan_core::imageio::{read_mask, read_rgb, write_mask, write_png};
use texgan_core::lbp::{lbp_exact, lbp_surrogate, to_gray, LbpConfig};
use texgan_core::masks::{gen_block, gen_freeform, gen_outpaint};
use texgan_core::train::derive_seed;
use texgan_core::{eval, Checkpoint, InpaintOptions, Inpainter, MaskBin, SyntheticTextures, TrainConfig, Trainer};

/// Environment variable consulted when `--ckpt` is omitted.
pub const CKPT_ENV: &str = "TEXGAN_CKPT";

#[derive(Debug, Parser)]
#[command(name = "texgan", version, about = "Texture-aware progressive GAN inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a freshly initialised checkpoint.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stages listed in the config.
    Train {
        /// TOML or JSON overriding the default training config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Image directory (uses `<dir>/train` when present).
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on this many procedural texture images instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// CSV loss log.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        save_every: u64,
    },
    /// Inpaint one image.
    Infer {
        #[arg(long, env = CKPT_ENV)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// 255 = known, 0 = hole. Optional for blind models.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write out_32.png … out_256.png into this directory.
        #[arg(long)]
        pyramid: Option<PathBuf>,
        /// Return the raw generator output without pasting known pixels back.
        #[arg(long)]
        no_composite: bool,
    },
    /// Score a dataset per mask bin.
    Eval {
        #[arg(long, env = CKPT_ENV)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `all` or a comma list such as `10-20,40-50`.
        #[arg(long, default_value = "all")]
        bins: String,
        /// `.json` or `.csv`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time full 256 inference passes.
    Bench {
        #[arg(long, env = CKPT_ENV)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
    },
    /// Generate a mask PNG.
    Maskgen {
        #[arg(long, value_enum, default_value_t = MaskKind::Freeform)]
        kind: MaskKind,
        #[arg(long, default_value = "20-30")]
        bin: String,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write this many masks into the `--out` directory instead of one file.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the LBP map of an image as an 8-bit PNG.
    Lbp {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1)]
        dilation: usize,
        #[arg(long, value_enum, default_value_t = LbpMode::Exact)]
        mode: LbpMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP inference service.
    Serve {
        #[arg(long, env = CKPT_ENV)]
        ckpt: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MaskKind {
    Freeform,
    Block,
    Outpaint,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LbpMode {
    Exact,
    Surrogate,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(TrainConfig::default()),
    }
}

fn load_model(path: &Path) -> anyhow::Result<Inpainter> {
    Inpainter::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn parse_bins(text: &str) -> anyhow::Result<Vec<MaskBin>> {
    if text.trim() == "all" {
        return Ok(MaskBin::RANGED.to_vec());
    }
    let bins = text
        .split(',')
        .map(|s| s.trim().parse::<MaskBin>())
        .collect::<Result<Vec<_>, _>>()?;
    if bins.is_empty() || bins.contains(&MaskBin::Other) {
        bail!("bins must be `all` or ranged bins such as 10-20");
    }
    Ok(bins)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Init { config, out } => {
            let ck = Checkpoint::new(load_config(config.as_deref())?)?;
            ck.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Train {
            config,
            data,
            synthetic,
            out,
            resume,
            log,
            save_every,
        } => {
            let cfg = load_config(config.as_deref())?;
            let dataset: Box<dyn Dataset> = match (data, synthetic) {
                (Some(dir), _) => Box::new(ingest(&dir, Split::Train)?),
                (None, Some(n)) => Box::new(SyntheticTextures::new(n, cfg.seed)),
                (None, None) => bail!("pass --data DIR or --synthetic N"),
            };
            let trainer = match resume {
                Some(p) => Trainer::resume(Checkpoint::load(&p)?, &cfg, dataset.as_ref())?,
                None => Trainer::new(cfg, dataset.as_ref())?,
            };
            let mut trainer = trainer.with_checkpoint_path(&out, save_every);
            if let Some(path) = log {
                trainer = trainer.with_log(&path)?;
            }
            trainer.train_all()?;
            trainer.checkpoint().save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Infer {
            ckpt,
            image,
            mask,
            out,
            pyramid,
            no_composite,
        } => {
            let model = load_model(&ckpt)?;
            let img = read_rgb(&image)?;
            let mask = mask.map(|p| read_mask(&p)).transpose()?;
            if let Some(m) = &mask {
                if (m.width() as u32, m.height() as u32) != img.dimensions() {
                    bail!(
                        "size mismatch: image is {}x{} but mask is {}x{}",
                        img.width(),
                        img.height(),
                        m.width(),
                        m.height()
                    );
                }
            }
            let opts = InpaintOptions {
                composite: !no_composite,
                return_pyramid: pyramid.is_some(),
            };
            let res = model.inpaint(&img, mask.as_ref(), opts)?;
            write_png(&image::DynamicImage::ImageRgb8(res.result), &out)?;
            if let Some(dir) = pyramid {
                std::fs::create_dir_all(&dir)?;
                for (stage, p) in res.pyramid {
                    let path = dir.join(format!("out_{}.png", stage.resolution()));
                    write_png(&image::DynamicImage::ImageRgb8(p), &path)?;
                }
            }
            println!("hole_ratio={:.4} bin={}", res.hole_ratio, res.bin);
        }
        Command::Eval {
            ckpt,
            data,
            bins,
            out,
            seed,
        } => {
            let model = load_model(&ckpt)?;
            let dataset = ingest(&data, Split::Test)?;
            if dataset.is_empty() {
                bail!("no images found under {}", data.display());
            }
            let report = eval::evaluate(&model, &dataset, &parse_bins(&bins)?, seed)?;
            let text = match out.extension().and_then(|e| e.to_str()) {
                Some("csv") => report.to_csv(),
                _ => report.to_json()?,
            };
            std::fs::write(&out, text)?;
            for b in &report.bins {
                println!("{:>6} n={:<4} mae={:.4} psnr={:.2} ssim={:.4}", b.bin.label(), b.count, b.mae, b.psnr, b.ssim);
            }
        }
        Command::Bench { ckpt, iters, warmup } => {
            let model = load_model(&ckpt)?;
            let eff = model.efficiency()?;
            let r = eval::bench(&model, iters, warmup)?;
            println!("| model | GFLOPs | GMACs | params | mean ms | p95 ms |");
            println!(
                "| texgan | {:.2} | {:.2} | {:.2}M | {:.1} | {:.1} |",
                eff.gflops(),
                eff.gmacs(),
                eff.params_millions(),
                r.mean_ms,
                r.p95_ms
            );
        }
        Command::Maskgen {
            kind,
            bin,
            size,
            seed,
            n,
            out,
        } => {
            let bin: MaskBin = bin.parse()?;
            let make = |seed: u64| match kind {
                MaskKind::Freeform => gen_freeform(size, size, bin, seed),
                MaskKind::Block => gen_block(size, size, seed),
                MaskKind::Outpaint => gen_outpaint(size, size),
            };
            match n {
                None => {
                    let mask = make(seed)?;
                    write_mask(&mask, &out)?;
                    println!("hole_ratio={:.4} bin={}", mask.hole_ratio(), mask.bin());
                }
                Some(n) => {
                    std::fs::create_dir_all(&out)?;
                    for i in 0..n {
                        let mask = make(derive_seed(&[seed, i as u64]))?;
                        write_mask(&mask, &out.join(format!("mask_{i:04}.png")))?;
                    }
                    println!("wrote {n} masks to {}", out.display());
                }
            }
        }
        Command::Lbp {
            input,
            dilation,
            mode,
            out,
        } => {
            let img = read_rgb(&input)?;
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut planar = vec![0.0f64; 3 * w * h];
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    planar[(c * h + y as usize) * w + x as usize] = p[c] as f64;
                }
            }
            let gray = to_gray(3, h, w, &planar)?;
            let cfg = LbpConfig::with_dilation(dilation);
            let (codes, scale) = match mode {
                LbpMode::Exact => (lbp_exact(&gray, &cfg)?, 1.0),
                LbpMode::Surrogate => (lbp_surrogate(&gray, &cfg)?, 255.0),
            };
            let map = image::GrayImage::from_fn(codes.width as u32, codes.height as u32, |x, y| {
                let v = codes.get(y as usize, x as usize) * scale;
                image::Luma([v.round().clamp(0.0, 255.0) as u8])
            });
            write_png(&image::DynamicImage::ImageLuma8(map), &out)?;
        }
        Command::Serve { ckpt, host, port } => {
            let state = Arc::new(service::AppState::new(load_model(&ckpt)?)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, &host, port))?;
        }
    }
    Ok(())
}
