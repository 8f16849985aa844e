//! Builds a small expression on the tape, runs backward, and compares one
//! gradient entry with a central difference.
//!
//! cargo run --example tensor_autodiff

use posterfuse::tape::Tape;
use posterfuse::tensor::Tensor;

fn loss(x: &Tensor, w: &Tensor) -> posterfuse::Result<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w.clone());
    let y = tape.matmul(xv, wv)?;
    let s = tape.softmax_rows(y);
    let l = tape.mean_all(s);
    let sq = tape.mul(s, s)?;
    let l2 = tape.mean_all(sq);
    let total = tape.add(l, l2)?;
    Ok(tape.value(total).data()[0])
}

fn main() -> posterfuse::Result<()> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75])?;
    let w = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let y = tape.matmul(xv, wv)?;
    let s = tape.softmax_rows(y);
    let l = tape.mean_all(s);
    let sq = tape.mul(s, s)?;
    let l2 = tape.mean_all(sq);
    let total = tape.add(l, l2)?;
    println!("softmax rows:\n{:?}", tape.value(s).data());
    println!("loss {:.12}", tape.value(total).data()[0]);

    // The tape is consumed by backward.
    let grads = tape.backward(total)?;
    let g = grads.get(wv).expect("parameter gradient");
    println!("dL/dW shape {:?}", g.shape());

    let h = 1e-6;
    let (mut up, mut down) = (w.clone(), w.clone());
    up.data_mut()[5] += h;
    down.data_mut()[5] -= h;
    let numeric = (loss(&x, &up)? - loss(&x, &down)?) / (2.0 * h);
    println!("dL/dW[1,1]: analytic {:.10e}  numeric {:.10e}", g.data()[5], numeric);
    Ok(())
}
