//! Central-difference gradient checking in double precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, Var};

pub const FD_STEP: f64 = 1e-4;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// Builds `sum(f(inputs) ⊙ R)` for a fixed random `R`.
fn weighted_loss(g: &mut Graph<f64>, out: Var) -> Var {
    let shape = g.shape(out).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let r = g.input(rand_tensor(&mut rng, &shape));
    let p = g.mul(out, r).unwrap();
    g.sum(p)
}

/// Largest per-input relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`
/// against central differences with step 1e-4.
pub fn grad_check(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let l = weighted_loss(&mut g, out);
        (g, vars, l)
    };
    let (mut g, vars, l) = eval(inputs);
    g.backward(l).unwrap();
    let eps = FD_STEP;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut num = vec![0.0; inputs[k].len()];
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data[i] += eps;
            let mut minus = inputs.to_vec();
            minus[k].data[i] -= eps;
            let (gp, _, lp) = eval(&plus);
            let (gm, _, lm) = eval(&minus);
            num[i] = (gp.value(lp)[0] - gm.value(lm)[0]) / (2.0 * eps);
        }
        let diff = analytic
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}
