//! Fits y = 3x − 1 with the tape directly: bind, forward, backward, Adam step.
//!
//! cargo run --example autodiff_regression

use maeforge::params::ParamTree;
use maeforge::training::AdamState;
use maeforge::{Rng, Tape, Tensor};

fn main() -> maeforge::Result<()> {
    let mut rng = Rng::new(1);
    let xs = Tensor::<f64>::rand_uniform(&[32, 1], -1.0, 1.0, &mut rng);
    let ys = xs.map(|x| 3.0 * x - 1.0);

    let mut params = vec![Tensor::<f64>::zeros(&[1, 1]), Tensor::zeros(&[1])];
    let mut opt = AdamState::default();
    for step in 0..=300 {
        let mut tape = Tape::new();
        let w = tape.param("0", &params[0]);
        let b = tape.param("1", &params[1]);
        let x = tape.constant(&xs);
        let y = tape.constant(&ys);
        let pred = tape.matmul(x, w)?;
        let pred = tape.add_row_bias(pred, b)?;
        let err = tape.sub(pred, y)?;
        let sq = tape.mul(err, err)?;
        let loss = tape.mean(sq);
        if step % 100 == 0 {
            println!("step {step:3}  mse {:.6}", tape.scalar(loss));
        }
        tape.backward(loss)?;
        params.accumulate_grads("", &tape.param_grads())?;
        opt.step(&mut params, 0.05)?;
    }
    println!("w = {:.4}, b = {:.4}", params[0].data()[0], params[1].data()[0]);
    Ok(())
}
