//! Build a small convolutional network on the tape, check its gradients
//! against central differences, then take AdamW steps on a regression toy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use umbra::autodiff::gradcheck::{grad_check, rand_tensor};
use umbra::autodiff::{adamw_step, AdamState, AdamW, Graph, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ins = vec![
        rand_tensor(&mut rng, &[2, 1, 6, 6]),
        rand_tensor(&mut rng, &[4, 1, 3, 3]),
        rand_tensor(&mut rng, &[4]),
        rand_tensor(&mut rng, &[4]),
        rand_tensor(&mut rng, &[1, 4, 3, 3]),
    ];
    let err = grad_check(&ins, &|g, v| {
        let h = g.conv2d(v[0], v[1], None, 2, 1).unwrap();
        let h = g.group_norm(h, v[2], v[3], 2).unwrap();
        let h = g.silu(h);
        let h = g.upsample2x(h).unwrap();
        g.conv2d(h, v[4], None, 1, 1).unwrap()
    });
    println!("conv/norm/silu/upsample gradient relative error: {err:.2e}");

    // Fit y = 3x − 1 with a 1×1 linear layer.
    let xs: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
    let mut params = vec![
        Tensor::new(&[1, 1], vec![0.0]),
        Tensor::new(&[1], vec![0.0]),
    ];
    let mut state = AdamState::new(&params);
    let hp = AdamW {
        lr: 0.05,
        weight_decay: 0.0,
        ..AdamW::default()
    };
    for step in 0..=400 {
        let mut g = Graph::new();
        let w = g.param(params[0].clone());
        let b = g.param(params[1].clone());
        let x = g.input(Tensor::new(&[16, 1], xs.clone()));
        let y = g.input(Tensor::new(&[16, 1], ys.clone()));
        let pred = g.linear(x, w, Some(b))?;
        let loss = g.mse(pred, y)?;
        g.backward(loss)?;
        let grads = vec![g.grad(w).unwrap().to_vec(), g.grad(b).unwrap().to_vec()];
        if step % 100 == 0 {
            println!(
                "step {step:>3}: loss {:.6}, w {:.4}, b {:.4}",
                g.value(loss)[0],
                params[0].data[0],
                params[1].data[0]
            );
        }
        adamw_step(&mut params, &grads, &mut state, &hp);
    }
    Ok(())
}
