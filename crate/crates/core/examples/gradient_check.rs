//! Backprop against central differences, then a checkpoint round trip.

use ndarray::Array2;
use patrol_marl::nn::{gradient_check, load_checkpoint, save_checkpoint, train_batch, Adam, Checkpoint, Mlp};
use patrol_marl::rng::SimRng;
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut r = SimRng::new(3).generator();
    let mut net = Mlp::new(&[18, 64, 64, 5], &mut r)?;
    let x = Array2::from_shape_fn((8, 18), |_| r.random_range(0.0..1.0));
    let y = Array2::from_shape_fn((8, 5), |_| r.random_range(-10.0..0.0));
    println!("max relative error {:.2e}", gradient_check(&net, x.view(), y.view(), None, 1e-4));

    let mut opt = Adam::new(&net, 1e-3);
    for epoch in 0..5 {
        let loss = train_batch(&mut net, &mut opt, x.view(), y.view(), None)?;
        println!("step {epoch}: loss {loss:.4}");
    }
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("net.ckpt");
    let ck = Checkpoint { net, opt: Some(opt) };
    save_checkpoint(&ck, &path)?;
    println!("reloaded checkpoint identical: {}", load_checkpoint(&path)? == ck);
    Ok(())
}
