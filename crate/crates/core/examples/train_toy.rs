//! Train a two-level network on the synthetic sphere task and compare it with
//! the same network without raw-input branches.
//!
//! cargo run --release --example train_toy -- [epochs] [lr] [momentum] [batch]

use evcseg::augment::AugmentConfig;
use evcseg::evnet::EvNetConfig;
use evcseg::pipeline::{evaluate_samples, sphere_dataset, train_on_samples, Sample, TrainParams};

fn main() -> evcseg::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let tp = TrainParams {
        epochs: arg(0, 30.0) as usize,
        lr: arg(1, 0.1),
        momentum: arg(2, 0.9),
        batch_size: arg(3, 2.0) as usize,
        ..TrainParams::default()
    };

    let data: Vec<Sample> = sphere_dataset(40, 32, 7)?
        .into_iter()
        .map(|(img, m)| Sample::from_grid(&img, m))
        .collect::<evcseg::Result<_>>()?;
    let (train, held_out) = data.split_at(32);
    let aug = AugmentConfig { seed: 1, ..AugmentConfig::default() };

    for (name, cfg) in [("ev-net", EvNetConfig::toy()), ("v-net", EvNetConfig::toy().plain())] {
        let start = std::time::Instant::now();
        let report = train_on_samples(train, held_out, &cfg, &tp, &aug)?;
        for e in &report.epochs {
            println!(
                "{name} epoch {:2}  train {:.4}  held-out loss {:.4}  dice {:.4}",
                e.epoch,
                e.train_loss,
                e.val_loss.unwrap_or(f64::NAN),
                e.val_dice.unwrap_or(f64::NAN)
            );
        }
        let (loss, dice) = evaluate_samples(&report.params, &cfg, held_out)?;
        println!("{name}: final held-out soft-dice loss {loss:.4}, dice {dice:.4} ({:.1?})", start.elapsed());
    }
    Ok(())
}
