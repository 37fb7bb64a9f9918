use texgan_core::data::SyntheticTextures;
use texgan_core::masks::rect_mask;
use texgan_core::nets::Stage;
use texgan_core::{Checkpoint, InpaintOptions, Inpainter, TrainConfig, Trainer};

fn config() -> TrainConfig {
    TrainConfig {
        stage_order: vec![32, 64],
        batch_size: 2,
        seed: 9,
        hflip: true,
        ..TrainConfig::default()
    }
    .with_steps(Stage::S32, 4)
    .with_steps(Stage::S64, 3)
}

#[test]
fn interrupted_run_resumes_bit_exactly() {
    let data = SyntheticTextures::new(6, 1);
    let cfg = config();
    let mut straight = Trainer::new(cfg.clone(), &data).unwrap();
    assert!(straight.train_all().unwrap());
    let want = straight.into_checkpoint().to_bytes().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let mut first = Trainer::new(cfg.clone(), &data).unwrap();
    first.set_step_budget(Some(5));
    assert!(!first.train_all().unwrap());
    first.checkpoint().save(&path).unwrap();
    drop(first);

    let mut second = Trainer::resume(Checkpoint::load(&path).unwrap(), &cfg, &data).unwrap();
    assert!(second.train_all().unwrap());
    assert_eq!(second.into_checkpoint().to_bytes().unwrap(), want);
}

#[test]
fn trained_checkpoint_serves_inference() {
    let data = SyntheticTextures::new(4, 2);
    let mut t = Trainer::new(config(), &data).unwrap();
    t.train_all().unwrap();
    let model = Inpainter::from_checkpoint(t.checkpoint());
    let img = image::RgbImage::from_fn(80, 60, |x, y| image::Rgb([x as u8 * 3, y as u8 * 4, 90]));
    let mask = rect_mask(60, 80, 10, 20, 15, 30);
    let opts = InpaintOptions {
        composite: true,
        return_pyramid: true,
    };
    let out = model.inpaint(&img, Some(&mask), opts).unwrap();
    assert_eq!(out.result.dimensions(), (80, 60));
    assert_eq!(out.pyramid.len(), 4);
    for y in 0..60 {
        for x in 0..80 {
            if mask.is_known(y, x) {
                assert_eq!(out.result.get_pixel(x as u32, y as u32), img.get_pixel(x as u32, y as u32));
            }
        }
    }
}
