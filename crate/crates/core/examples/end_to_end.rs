//! synth → train → extract → eval on head phantoms.
//!
//! cargo run --release --example end_to_end -- [work_dir] [epochs] [size] [crf_iters]

use std::path::PathBuf;

use evcseg::evnet::EvNetConfig;
use evcseg::pipeline::{eval, extract, synth, train, PipelineConfig, Settings};

fn main() -> evcseg::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = tempfile::tempdir().expect("temp dir");
    let work = args.first().map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(15);
    let size = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let crf_iters = args.get(3).and_then(|s| s.parse().ok());

    let mut settings = Settings::default();
    settings.evnet = EvNetConfig::toy();
    settings.train.epochs = epochs;
    settings.aug.seed = 1;
    if let Some(n) = crf_iters {
        settings.crf.iterations = n;
    }

    let t = std::time::Instant::now();
    synth(16, size, 1, &work.join("train"))?;
    let test = synth(4, size, 2, &work.join("test"))?;
    let ckpt = work.join("model.evc");
    let trained = train(&work.join("train"), &ckpt, None, &settings)?;
    for e in &trained.report.epochs {
        println!("epoch {:2}: train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss.unwrap_or(f64::NAN));
    }
    println!("trained in {:.1?}", t.elapsed());

    let pred_dir = work.join("pred");
    std::fs::create_dir_all(&pred_dir).expect("pred dir");
    for img in &test.images {
        let mut cfg = PipelineConfig::new(img, pred_dir.join(img.file_name().unwrap()), &ckpt);
        cfg.crf = settings.crf.clone();
        let out = extract(&cfg)?;
        println!("{}: {} voxels", img.display(), out.sidecar.foreground_voxels);
    }
    let report = eval(&pred_dir, &work.join("test/masks"), &work.join("report"))?.report;
    println!(
        "dice {:.4} ± {:.4}, jaccard {:.4}, balanced AHD {:.3} mm ({:.1?} total)",
        report.dice.mean,
        report.dice.std,
        report.jaccard.mean,
        report.balanced_ahd.mean,
        t.elapsed()
    );
    Ok(())
}
