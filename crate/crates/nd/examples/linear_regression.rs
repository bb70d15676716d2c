//! Least squares by gradient descent on the tape, with Adam.

use rand::{Rng, SeedableRng};
use timegci_nd::{Adam, AdamConfig, Tape, Tensor};

fn main() -> timegci_nd::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let n = 200;
    let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 0.5 + 0.05 * rng.gen_range(-1.0..1.0)).collect();
    let x = Tensor::from_vec(vec![n, 1], xs)?;
    let y = Tensor::from_vec(vec![n, 1], ys)?;

    let mut params = vec![Tensor::zeros(&[1, 1]), Tensor::zeros(&[1])];
    let mut adam = Adam::new(AdamConfig::with_lr(0.05));
    for step in 0..500 {
        let mut tape = Tape::new();
        let w = tape.param(params[0].clone());
        let b = tape.param(params[1].clone());
        let xv = tape.constant(x.clone());
        let yv = tape.constant(y.clone());
        let pred = tape.matmul(xv, w)?;
        let pred = tape.add_row(pred, b)?;
        let err = tape.sub(pred, yv)?;
        let sq = tape.square(err);
        let loss = tape.mean(sq);
        let grads = tape.backward(loss)?;
        if step % 100 == 0 {
            println!("step {step:>3} loss {:.5}", tape.value(loss).item());
        }
        adam.step(params.iter_mut().collect(), &[grads.wrt(w), grads.wrt(b)])?;
    }
    println!("w = {:.3}, b = {:.3}", params[0].data()[0], params[1].data()[0]);
    Ok(())
}
