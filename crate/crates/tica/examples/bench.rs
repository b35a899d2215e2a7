//! Scratch pipeline timing: gen -> train -> eval -> adapt -> eval.

use std::time::Instant;

use tica::adapt::{adapt, train_supervised, AdaptConfig, TrainConfig};
use tica::config::RunConfig;
use tica::data::generate_synthetic;
use tica::metrics::evaluate;
use tica::model::SegModel;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let train_epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let adapt_lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let cfg = RunConfig::default();
    let mut synth = cfg.synth.clone();
    synth.seed = seed;

    let t0 = Instant::now();
    let (train, test) = generate_synthetic::<f32>(&synth).unwrap();
    println!("gen: {:.1}s ({} train / {} test)", t0.elapsed().as_secs_f64(), train.len(), test.len());

    let mut model = SegModel::<f32>::new(cfg.model.clone(), seed).unwrap();
    println!("params: {}", model.param_count());

    let t0 = Instant::now();
    let tc = TrainConfig { epochs: train_epochs, seed, ..cfg.train.clone() };
    let report = train_supervised(&mut model, &train, &tc).unwrap();
    println!(
        "train: {:.1}s  losses: first {:.1} mid {:.1} last {:.1}",
        t0.elapsed().as_secs_f64(),
        report.epoch_losses.first().unwrap(),
        report.epoch_losses[report.epoch_losses.len() / 2],
        report.epoch_losses.last().unwrap()
    );

    let t0 = Instant::now();
    let mut m_eval = model.clone();
    let train_ber = evaluate(&mut m_eval, &train[..50.min(train.len())], 0.5).unwrap();
    let before = evaluate(&mut m_eval, &test, 0.5).unwrap();
    println!(
        "eval: {:.1}s  train BER {:.3}  test(before) BER {:.3} (shadow {:.3} nonshadow {:.3})",
        t0.elapsed().as_secs_f64(),
        train_ber.ber * 100.0,
        before.ber * 100.0,
        before.ber_shadow * 100.0,
        before.ber_nonshadow * 100.0
    );

    let images: Vec<_> = test.iter().map(|s| s.image.clone()).collect();
    let t0 = Instant::now();
    let ac = AdaptConfig { seed, lr: adapt_lr, ..cfg.adapt.clone() };
    let rep = adapt(&mut model, &images, &ac).unwrap();
    println!(
        "adapt: {:.1}s  tica loss first {:.4} last {:.4}",
        t0.elapsed().as_secs_f64(),
        rep.trace.first().map(|r| r.loss).unwrap_or(f64::NAN),
        rep.trace.last().map(|r| r.loss).unwrap_or(f64::NAN)
    );

    let after = evaluate(&mut model, &test, 0.5).unwrap();
    println!(
        "test(after) BER {:.3} (shadow {:.3} nonshadow {:.3})  relative reduction {:.1}%",
        after.ber * 100.0,
        after.ber_shadow * 100.0,
        after.ber_nonshadow * 100.0,
        (before.ber - after.ber) / before.ber * 100.0
    );
}
