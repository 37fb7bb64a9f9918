//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p texgan-core --test acceptance`; extra arguments
//! select criteria by substring, e.g. `-- efficiency shapes`.
//! `TEXGAN_ABLATION_SCALE` (default 1.0) scales the ablation step counts.
//! Failures are reported without failing the run unless
//! `TEXGAN_ACCEPTANCE_STRICT` is set.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texgan_core::data::{Dataset, SyntheticTextures};
use texgan_core::edges::{edge_metrics, CannyConfig, EdgeReport};
use texgan_core::lbp::{lbp_exact, lbp_surrogate, lbp_surrogate_backward, GrayImage, LbpConfig};
use texgan_core::losses::texture_loss_with_grad;
use texgan_core::masks::{classify, gen_block, gen_freeform, gen_outpaint, rect_mask, Mask, MaskBin};
use texgan_core::metrics::{mae, psnr, psnr_in_holes, ssim, to_unit_range};
use texgan_core::nets::{
    count_efficiency, forward_pyramid, BlockInput, InitScheme, Discriminator, Generator, GeneratorSpec, NetworkSpec, Stage,
};
use texgan_core::train::{derive_seed, Checkpoint, TrainConfig, Trainer};
use texgan_core::Tensor;

// Tolerances and budgets.
const TARGET_PARAMS: f64 = 3.0e6;
const TARGET_GCOST: f64 = 9.5;
const EFFICIENCY_TOL: f64 = 0.15;
const EFFICIENCY_MAX_TIME: Duration = Duration::from_secs(1);
const LBP_IMAGES: usize = 1000;
const LBP_MAX_TIME: Duration = Duration::from_secs(10);
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_MIN_FRACTION: f64 = 0.99;
const FREEZE_STEPS: u64 = 50;
const CONVERGENCE_IMAGES: usize = 500;
const CONVERGENCE_MAX_STEPS: u64 = 1000;
const CONVERGENCE_DROP: f64 = 0.5;
const CONVERGENCE_WINDOW: usize = 10;
const ABLATION_SEEDS: [u64; 3] = [11, 22, 33];
const METRIC_ORACLE_TOL: f64 = 1e-12;
const MASK_SEEDS: u64 = 200;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol * target
}

fn efficiency() -> Outcome {
    let start = Instant::now();
    let specs: Vec<GeneratorSpec> = Stage::ALL.iter().map(|&s| GeneratorSpec::standard(s, false)).collect();
    let r = count_efficiency(&specs, 256).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let params = r.total_params as f64;
    let gmacs = r.gmacs();
    let detail = format!(
        "params {:.3}M (target 3.0M ±15%), {:.3} GMAC = {:.3} GFLOP at 2 FLOP/MAC (target 9.5 ±15% on the multiply-accumulate count), {:?}",
        params / 1e6,
        gmacs,
        r.gflops(),
        elapsed
    );
    check(within(params, TARGET_PARAMS, EFFICIENCY_TOL), format!("params out of range: {detail}"))?;
    check(within(gmacs, TARGET_GCOST, EFFICIENCY_TOL), format!("cost out of range: {detail}"))?;
    check(elapsed < EFFICIENCY_MAX_TIME, format!("too slow: {detail}"))?;
    Ok(detail)
}

fn lbp_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = LbpConfig::default();
    let mut pixels = 0usize;
    for i in 0..LBP_IMAGES {
        let img = GrayImage::from_fn(16, 16, |_, _| if rng.random::<bool>() { 1.0f32 } else { 0.0 });
        let exact = lbp_exact(&img, &cfg).map_err(|e| e.to_string())?;
        let sur = lbp_surrogate(&img, &cfg).map_err(|e| e.to_string())?;
        for (k, (&e, &s)) in exact.pixels.iter().zip(&sur.pixels).enumerate() {
            if 255.0 * s != e {
                return Err(format!("image {i} pixel {k}: 255*surrogate = {} but exact = {e}", 255.0 * s));
            }
        }
        pixels += exact.pixels.len();
    }
    let elapsed = start.elapsed();
    check(elapsed < LBP_MAX_TIME, format!("took {elapsed:?}"))?;
    Ok(format!("{LBP_IMAGES} images, {pixels} interior pixels identical, {elapsed:?}"))
}

/// Relative error with both-zero treated as exact agreement.
fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences on `f`, nudging any coordinate whose step straddles a
/// kink (left and right slopes disagree) until it lies on a smooth piece.
fn fd_check(x: &mut [f64], analytic: impl Fn(&[f64]) -> Vec<f64>, f: impl Fn(&[f64]) -> f64, eps: f64, rng: &mut ChaCha8Rng) -> (usize, usize) {
    let mut good = 0;
    for i in 0..x.len() {
        for _ in 0..20 {
            let x0 = x[i];
            let f0 = f(x);
            x[i] = x0 + eps;
            let fp = f(x);
            x[i] = x0 - eps;
            let fm = f(x);
            x[i] = x0;
            let (right, left) = ((fp - f0) / eps, (f0 - fm) / eps);
            if rel_err(right, left) < 1e-6 {
                break;
            }
            x[i] = x0 + rng.random_range(-0.05..0.05);
        }
    }
    let grad = analytic(x);
    for i in 0..x.len() {
        let x0 = x[i];
        x[i] = x0 + eps;
        let fp = f(x);
        x[i] = x0 - eps;
        let fm = f(x);
        x[i] = x0;
        if rel_err(grad[i], (fp - fm) / (2.0 * eps)) < GRAD_REL_TOL {
            good += 1;
        }
    }
    (good, x.len())
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cfg = LbpConfig::default();
    let (mut sur_good, mut sur_total) = (0, 0);
    let (mut tex_good, mut tex_total) = (0, 0);
    for _ in 0..5 {
        // surrogate: L = Σ r ⊙ LBP_s(x) on an 8x8 gray image in [0, 255]
        let r: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut x: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..255.0)).collect();
        let to_img = |x: &[f64]| GrayImage::new(8, 8, x.to_vec()).unwrap();
        let f = |x: &[f64]| -> f64 {
            let s = lbp_surrogate(&to_img(x), &cfg).unwrap();
            s.pixels.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let up = GrayImage::new(6, 6, r.clone()).unwrap();
        let g = |x: &[f64]| lbp_surrogate_backward(&to_img(x), &cfg, &up).unwrap().pixels;
        let (a, b) = fd_check(&mut x, g, f, 1e-4, &mut rng);
        sur_good += a;
        sur_total += b;

        // texture loss on a [1, 3, 8, 8] output in [-1, 1]
        let shape = [1, 3, 8, 8];
        let target: Vec<f64> = (0..192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut out: Vec<f64> = (0..192).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |o: &[f64]| texture_loss_with_grad(shape, o, &target, &cfg).unwrap().0;
        let g = |o: &[f64]| texture_loss_with_grad(shape, o, &target, &cfg).unwrap().1;
        let (a, b) = fd_check(&mut out, g, f, 1e-6, &mut rng);
        tex_good += a;
        tex_total += b;
    }
    let sur_frac = sur_good as f64 / sur_total as f64;
    let tex_frac = tex_good as f64 / tex_total as f64;
    let detail = format!(
        "surrogate {sur_good}/{sur_total} ({:.2}%), texture loss {tex_good}/{tex_total} ({:.2}%) within rel err {GRAD_REL_TOL:e}",
        100.0 * sur_frac,
        100.0 * tex_frac
    );
    check(sur_frac >= GRAD_MIN_FRACTION && tex_frac >= GRAD_MIN_FRACTION, detail.clone())?;
    Ok(detail)
}

fn shapes() -> Outcome {
    let net = NetworkSpec::standard(false);
    net.validate().map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for &stage in &Stage::ALL {
        let n = stage.resolution();
        let spec = net.generator(stage).unwrap();
        let trace = spec.trace_shapes().map_err(|e| e.to_string())?;
        let last = *trace.last().unwrap().last().unwrap();
        check(last == (3, n), format!("G{n} ends at {last:?}"))?;
        let first_in = spec.blocks[0].layers[0].in_ch;
        check(first_in == 4, format!("G{n} first branch takes {first_in} channels"))?;
        // branch outputs meet at n/4
        for (b, block) in spec.blocks.iter().enumerate() {
            if block.input != BlockInput::Fusion && spec.blocks.len() > 1 {
                let end = *trace[b].last().unwrap();
                check(end.1 == n / 4, format!("G{n} block {b} ends at {end:?}"))?;
            }
        }
        let d = Discriminator::standard(stage, 1).map_err(|e| e.to_string())?;
        let score = d.score(&Tensor::zeros([2, 3, n, n])).map_err(|e| e.to_string())?;
        check(score.shape() == [2, 1, n / 8 - 1, n / 8 - 1], format!("D{n} score {:?}", score.shape()))?;
        notes.push(format!("D{n}->{}", n / 8 - 1));
    }
    let g64 = net.generator(Stage::S64).unwrap().trace_shapes().unwrap();
    check(*g64[0].last().unwrap() == (48, 16) && *g64[1].last().unwrap() == (48, 16), "G64 branch shapes")?;
    check(net.generator(Stage::S64).unwrap().blocks[2].layers[0].in_ch == 96, "G64 fusion width")?;
    let g256 = net.generator(Stage::S256).unwrap();
    let t256 = g256.trace_shapes().unwrap();
    for b in 0..4 {
        check(*t256[b].last().unwrap() == (56, 64), format!("G256 branch {b} ends at {:?}", t256[b].last()))?;
    }
    check(g256.blocks[4].layers[0].in_ch == 224, "G256 fusion width")?;

    // live pyramid on a batch of two
    let gens: Vec<Generator> = Stage::ALL.iter().map(|&s| Generator::standard(s, false, 3).unwrap()).collect();
    let refs: Vec<Option<&Generator>> = gens.iter().map(Some).collect();
    let img = Tensor::from_fn([2, 3, 256, 256], |b, c, y, x| ((b + c + y + x) % 17) as f32 / 8.5 - 1.0);
    let ones = Tensor::full([2, 1, 256, 256], 1.0);
    let out = forward_pyramid(&img, &ones, Stage::S256, &refs).map_err(|e| e.to_string())?;
    for &s in &Stage::ALL {
        let o = out.get(s).ok_or("missing stage output")?;
        let r = s.resolution();
        check(o.shape() == [2, 3, r, r], format!("O{r} shape {:?}", o.shape()))?;
        check(o.data().iter().all(|v| (-1.0..=1.0).contains(v)), format!("O{r} leaves [-1, 1]"))?;
    }
    let partial = forward_pyramid(&img, &ones, Stage::S128, &refs).unwrap();
    check(partial.get(Stage::S256).is_none() && partial.get(Stage::S128).is_some(), "stage-128 pyramid")?;
    let base = forward_pyramid(&img, &ones, Stage::S32, &refs).unwrap();
    check(base.get(Stage::S64).is_none(), "stage-32 pyramid")?;
    Ok(format!("4 generators, 4 discriminators ({}), pyramid 32..256 on batch 2", notes.join(" ")))
}

fn snapshot(ck: &Checkpoint, stage: Stage) -> Vec<Vec<u32>> {
    let i = stage.index();
    let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<u32>>();
    let mut out: Vec<Vec<u32>> = Vec::new();
    out.extend(ck.generators[i].params().into_iter().map(|t| bits(t.data())));
    out.extend(ck.discriminators[i].params().into_iter().map(|t| bits(t.data())));
    out.extend(ck.discriminators[i].sn_u.iter().map(|u| bits(u)));
    for opt in [&ck.opt_g[i], &ck.opt_d[i]] {
        out.extend(opt.m.iter().map(|m| bits(m)));
        out.extend(opt.v.iter().map(|v| bits(v)));
    }
    out
}

fn freezing() -> Outcome {
    let data = SyntheticTextures::new(8, 5);
    let mut notes = Vec::new();
    for &stage in &[Stage::S64, Stage::S128, Stage::S256] {
        let mut cfg = TrainConfig {
            batch_size: 1,
            seed: 3,
            ..TrainConfig::default()
        };
        for &s in &Stage::ALL {
            cfg = cfg.with_steps(s, if s == stage { FREEZE_STEPS } else { 0 });
        }
        let mut t = Trainer::new(cfg, &data).map_err(|e| e.to_string())?;
        for &lower in stage.lower() {
            t.train_stage(lower).map_err(|e| e.to_string())?;
        }
        let before: Vec<_> = Stage::ALL.iter().map(|&s| snapshot(t.checkpoint(), s)).collect();
        t.train_stage(stage).map_err(|e| e.to_string())?;
        let after: Vec<_> = Stage::ALL.iter().map(|&s| snapshot(t.checkpoint(), s)).collect();
        for &s in &Stage::ALL {
            let same = before[s.index()] == after[s.index()];
            if s == stage {
                check(!same, format!("stage {s} did not change while training"))?;
            } else {
                check(same, format!("stage {s} changed while training stage {stage}"))?;
            }
        }
        notes.push(format!("{stage}"));
    }
    Ok(format!(
        "{FREEZE_STEPS} steps at each of {}: every other stage's weights, spectral vectors and Adam moments bit-identical",
        notes.join("/")
    ))
}

/// Steps until the running-mean l_rec halves, or the best ratio reached.
fn steps_to_halve(init: InitScheme) -> Result<Result<(u64, f64, f64), f64>, String> {
    let data = SyntheticTextures::new(CONVERGENCE_IMAGES, 42);
    let cfg = TrainConfig {
        stage_order: vec![32],
        seed: 42,
        init,
        ..TrainConfig::default()
    }
    .with_steps(Stage::S32, CONVERGENCE_MAX_STEPS);
    let mut t = Trainer::new(cfg, &data).map_err(|e| e.to_string())?;
    let mut recs = Vec::new();
    let mut best = f64::INFINITY;
    let w = CONVERGENCE_WINDOW;
    for step in 1..=CONVERGENCE_MAX_STEPS {
        let l = t.step(Stage::S32).map_err(|e| e.to_string())?;
        recs.push(l.l_rec as f64);
        if recs.len() >= 2 * w {
            let first = recs[..w].iter().sum::<f64>() / w as f64;
            let recent = recs[recs.len() - w..].iter().sum::<f64>() / w as f64;
            best = best.min(recent / first);
            if recent <= (1.0 - CONVERGENCE_DROP) * first {
                return Ok(Ok((step, first, recent)));
            }
        }
    }
    Ok(Err(best))
}

fn convergence() -> Outcome {
    match steps_to_halve(InitScheme::Normal)? {
        Ok((step, first, recent)) => Ok(format!(
            "running-mean l_rec {first:.4} -> {recent:.4} ({:.0}% drop) after {step} steps",
            100.0 * (1.0 - recent / first)
        )),
        Err(best) => {
            // diagnostic only: the same run with fan-in scaled generator init
            let he = match steps_to_halve(InitScheme::He)? {
                Ok((step, ..)) => format!("with He init it halves after {step} steps"),
                Err(b) => format!("with He init the best is {:.0}%", 100.0 * b),
            };
            Err(format!(
                "default N(0, 0.02) init: best running mean {:.0}% of the initial value after {CONVERGENCE_MAX_STEPS} steps; {he}",
                100.0 * best
            ))
        }
    }
}

struct AblationBudget {
    steps: [u64; 4],
    batch: [usize; 4],
    train_items: usize,
    test_items: usize,
}

fn ablation_budget() -> AblationBudget {
    let scale: f64 = std::env::var("TEXGAN_ABLATION_SCALE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1.0);
    let s = |n: f64| ((n * scale).round() as u64).max(1);
    AblationBudget {
        steps: [s(300.0), s(150.0), s(80.0), s(60.0)],
        batch: [8, 4, 2, 1],
        train_items: 64,
        test_items: 12,
    }
}

/// Mean hole PSNR at 256 over a fixed held-out set and fixed masks.
fn hole_psnr(ck: &Checkpoint, test: &dyn Dataset) -> Result<f64, String> {
    let model = texgan_core::Inpainter::from_checkpoint(ck);
    let mut total = 0.0;
    for i in 0..test.len() {
        let img = test.get(i).map_err(|e| e.to_string())?;
        let bin = MaskBin::RANGED[i % 4];
        let mask = gen_freeform(256, 256, bin, derive_seed(&[99, i as u64])).map_err(|e| e.to_string())?;
        let m = mask.to_tensor();
        let corrupted = img.mul_broadcast_channels(&m).map_err(|e| e.to_string())?;
        let out = model.run_pyramid(&corrupted, &m).map_err(|e| e.to_string())?;
        let o = out.get(Stage::S256).unwrap();
        total += psnr_in_holes(&to_unit_range(o), &to_unit_range(&img), &mask).map_err(|e| e.to_string())?;
    }
    Ok(total / test.len() as f64)
}

fn ablation() -> Outcome {
    let budget = ablation_budget();
    let train = SyntheticTextures::new(budget.train_items, 1000);
    let test = SyntheticTextures::new(budget.test_items, 2000);
    let mut with = Vec::new();
    let mut without = Vec::new();
    for &seed in &ABLATION_SEEDS {
        let mut cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        for &s in &Stage::ALL {
            cfg = cfg.with_steps(s, budget.steps[s.index()]);
        }
        // lower stages never evaluate the texture term, so both arms share them
        let mut base_cfg = cfg.clone();
        base_cfg.stage_order = vec![32, 64, 128];
        let mut ck = Checkpoint::new(base_cfg.clone()).map_err(|e| e.to_string())?;
        for &s in &[Stage::S32, Stage::S64, Stage::S128] {
            let mut c = base_cfg.clone();
            c.batch_size = budget.batch[s.index()];
            ck = ck.fork(c.clone()).map_err(|e| e.to_string())?;
            let mut t = Trainer::resume(ck, &c, &train).map_err(|e| e.to_string())?;
            t.train_stage(s).map_err(|e| e.to_string())?;
            ck = t.into_checkpoint();
        }
        for (texture, sink) in [(true, &mut with), (false, &mut without)] {
            let mut c = cfg.clone();
            c.batch_size = budget.batch[3];
            if !texture {
                c.weights.texture = 0.0;
            }
            let mut t = Trainer::resume(ck.clone().fork(c.clone()).map_err(|e| e.to_string())?, &c, &train)
                .map_err(|e| e.to_string())?;
            t.train_stage(Stage::S256).map_err(|e| e.to_string())?;
            sink.push(hole_psnr(t.checkpoint(), &test)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&with), mean(&without));
    let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.3}")).collect::<Vec<_>>().join("/");
    let detail = format!(
        "hole PSNR with LBP loss {a:.3} dB [{}] vs without {b:.3} dB [{}] (steps {:?})",
        fmt(&with),
        fmt(&without),
        budget.steps
    );
    check(a >= b, detail.clone())?;
    Ok(detail)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = Tensor::from_fn([1, 3, 32, 32], |_, _, _, _| rng.random::<f32>());
    check(mae(&img, &img).unwrap() == 0.0, "mae(I, I) != 0")?;
    check(psnr(&img, &img).unwrap() == f64::INFINITY, "psnr(I, I) != inf")?;
    let s = ssim(&img, &img).unwrap();
    check((s - 1.0).abs() < 1e-12, format!("ssim(I, I) = {s}"))?;
    let shifted = img.map(|v| v * 0.8 + 0.1);
    let base = img.map(|v| v * 0.8);
    let p = psnr(&shifted, &base).unwrap();
    check((p - 20.0).abs() < 1e-4, format!("offset 0.1 gives {p} dB"))?;

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = Tensor::from_fn([1, 1, 8, 8], |_, _, _, _| rng.random::<f32>());
        let b = Tensor::from_fn([1, 1, 8, 8], |_, _, _, _| rng.random::<f32>());
        let mut acc = 0.0f64;
        for y in 0..8 {
            for x in 0..8 {
                acc += (a.at(0, 0, y, x) as f64 - b.at(0, 0, y, x) as f64).abs();
            }
        }
        worst = worst.max((mae(&a, &b).unwrap() - acc / 64.0).abs());
    }
    check(worst <= METRIC_ORACLE_TOL, format!("MAE oracle gap {worst:e}"))?;

    // vertical step at column 16; Canny marks column 16 on rows 1..=30.
    // Hole: rows 8..24, cols 8..24 (256 pixels, 16 rows crossed by the edge).
    let step = |col: usize| Tensor::from_fn([1, 3, 32, 32], move |_, _, _, x| if x >= col { 1.0 } else { 0.0 });
    let hole = rect_mask(32, 32, 8, 8, 16, 16);
    let canny = CannyConfig::default();
    let same = edge_metrics(&step(16), &step(16), &hole, &canny).unwrap();
    check(same == EdgeReport::from_counts(16, 0, 240, 0), format!("identical: {same:?}"))?;
    // shifted copy: prediction on column 17, label on column 16, no overlap
    let shift = edge_metrics(&step(17), &step(16), &hole, &canny).unwrap();
    let want = EdgeReport::from_counts(0, 16, 224, 16);
    check(shift == want, format!("shifted: {shift:?}"))?;
    check(shift.accuracy == 224.0 / 256.0 && shift.recall == 0.0 && shift.f1 == 0.0, "shifted scores")?;
    // hole covering only the left half of the edge rows
    let partial = rect_mask(32, 32, 0, 10, 32, 7);
    let p = edge_metrics(&step(17), &step(16), &partial, &canny).unwrap();
    check(p == EdgeReport::from_counts(0, 30, 32 * 7 - 60, 30), format!("partial: {p:?}"))?;
    Ok(format!(
        "identity exact, offset PSNR {p:.6} dB, MAE oracle gap {worst:.1e}, three confusion matrices exact",
        p = 20.0
    ))
}

fn mask_suite() -> Outcome {
    let cases = [
        (0.05, MaskBin::Other),
        (0.1, MaskBin::R10To20),
        (0.1999, MaskBin::R10To20),
        (0.2, MaskBin::R20To30),
        (0.3, MaskBin::R30To40),
        (0.4, MaskBin::R40To50),
        (0.5, MaskBin::R40To50),
        (0.5001, MaskBin::Other),
    ];
    for (ratio, want) in cases {
        let holes = (ratio * 10_000.0f64).round() as usize;
        let data: Vec<f32> = (0..10_000).map(|i| if i < holes { 0.0 } else { 1.0 }).collect();
        let m = Mask::new(100, 100, data).unwrap();
        check(classify(&m) == want, format!("ratio {ratio} classified as {:?}", classify(&m)))?;
    }
    let out = gen_outpaint(256, 256).unwrap();
    check(out.hole_ratio() == 0.5, format!("outpaint ratio {}", out.hole_ratio()))?;
    check(gen_outpaint(256, 256).unwrap() == out, "outpaint not deterministic")?;
    for &bin in &MaskBin::RANGED {
        for seed in 0..MASK_SEEDS {
            let a = gen_freeform(256, 256, bin, seed).unwrap();
            check(classify(&a) == bin, format!("free-form {bin} seed {seed} landed in {}", classify(&a)))?;
            if seed < 10 {
                check(gen_freeform(256, 256, bin, seed).unwrap() == a, "free-form not deterministic")?;
            }
        }
    }
    for seed in 0..MASK_SEEDS {
        check(gen_block(256, 256, seed).unwrap() == gen_block(256, 256, seed).unwrap(), "block not deterministic")?;
    }
    Ok(format!(
        "bin edges, outpaint ratio 0.5, {} free-form masks in their bins, all generators repeatable",
        4 * MASK_SEEDS
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("efficiency", efficiency),
        ("lbp_equivalence", lbp_equivalence),
        ("gradient_checks", gradient_checks),
        ("shapes", shapes),
        ("freezing", freezing),
        ("convergence", convergence),
        ("lbp_ablation", ablation),
        ("metric_oracles", metric_oracles),
        ("mask_suite", mask_suite),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed) = (0, 0);
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => {
                passed += 1;
                println!("PASS {name} ({secs:.1}s): {detail}");
            }
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 && std::env::var_os("TEXGAN_ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        std::process::exit(1);
    }
}
