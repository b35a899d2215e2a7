//! Per-phase timing at benchmark shapes.
use std::time::Instant;
use ndarray::{Array3, Array4};
use tica::config::RunConfig;
use tica::model::{Mode, SegModel};

fn main() {
    let cfg = RunConfig::default();
    let mut model = SegModel::<f32>::new(cfg.model.clone(), 0).unwrap();
    let b = 8;
    let x = Array4::from_shape_fn((b, 1, 128, 128), |(n, _, r, c)| {
        ((n * 31 + r * 7 + c) % 97) as f32 / 97.0
    });
    let g = Array3::from_elem((b, 128, 128), 0.01f32);

    // warmup
    let (_, cache) = model.forward(&x, Mode::Train).unwrap();
    model.zero_grad();
    model.backward(cache, &g).unwrap();

    let reps = 10;
    let mut fwd = 0.0;
    let mut bwd = 0.0;
    for _ in 0..reps {
        let t0 = Instant::now();
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        fwd += t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        model.zero_grad();
        model.backward(cache, &g).unwrap();
        bwd += t0.elapsed().as_secs_f64();
    }
    let fwd = fwd / reps as f64;
    let bwd = bwd / reps as f64;

    println!("batch {b}: fwd {:.1}ms bwd {:.1}ms  per-image {:.1}ms", fwd * 1e3, bwd * 1e3, (fwd + bwd) * 1e3 / b as f64);

    // encoder-only timing
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = model.encode(&x, Mode::Train).unwrap();
    }
    println!("encode {:.1}ms", t0.elapsed().as_secs_f64() / reps as f64 * 1e3);
}
