//! Compare backprop gradients against central differences on a small model.

use ard_lora::model::task_loss;
use ard_lora::verify::{gradient_fixture, relative_error};

fn main() -> ard_lora::Result<()> {
    let (state, x, y) = gradient_fixture(11, 2, 2, 12, 3)?;
    let grads = state.backward(&x, &y)?;
    println!("loss {:.6}", grads.loss);

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, g) in grads.heads.iter().enumerate() {
        let (mut p, mut m) = (state.clone(), state.clone());
        let a = state.adapters[i].alpha();
        p.adapters[i].set_alpha(a + h);
        m.adapters[i].set_alpha(a - h);
        let num = (task_loss(&p.forward(&x)?, &y)? - task_loss(&m.forward(&x)?, &y)?) / (2.0 * h);
        let err = relative_error(g.grad_alpha, num);
        worst = worst.max(err);
        println!("head {i}: dL/dalpha analytic {:+.6e} numeric {:+.6e} rel {:.1e}", g.grad_alpha, num, err);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
