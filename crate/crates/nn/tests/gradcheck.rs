use std::rc::Rc;

use dummynet_nn::layers::instance_norm;
use dummynet_nn::{Array, ResamplePlan, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_array(shape: &[usize], rng: &mut ChaCha8Rng) -> Array<f64> {
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// A network touching most recorded ops; returns a scalar.
fn net<'t>(x: Var<'t, f64>, w: Var<'t, f64>, w2: Var<'t, f64>, m: Var<'t, f64>) -> Var<'t, f64> {
    let h = x.conv2d(w, 2, 1); // [1,3,4,4]
    let h = instance_norm(h, 1e-5).leaky_relu(0.2);
    let up = h.resample(&ResamplePlan::bilinear((4, 4), (8, 8)));
    let cat = Var::concat(&[up, x.narrow(1, 0, 1)], 1); // [1,4,8,8]
    let pooled = cat.max_pool2().conv2d(w2, 1, 0); // [1,2,4,4]
    let flat = pooled.reshape(&[2, 16]);
    let proj = flat.matmul(m).sigmoid(); // [2,3]
    let sp = proj.softplus().add(proj.exp().ln()).div(proj.add_scalar(1.5));
    sp.sum().add(h.tanh().abs().mean().scale(0.3))
}

fn fd_grad(f: &dyn Fn(&Array<f64>) -> f64, x: &Array<f64>, eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p.data_mut()[i] += eps;
            let mut m = x.clone();
            m.data_mut()[i] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    num / den.max(1e-12)
}

#[test]
fn first_order_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x0 = rand_array(&[1, 2, 8, 8], &mut rng);
    let w0 = rand_array(&[3, 2, 3, 3], &mut rng);
    let w20 = rand_array(&[2, 4, 1, 1], &mut rng);
    let m0 = rand_array(&[16, 3], &mut rng);

    let tape = Tape::new();
    let (x, w, w2, m) = (tape.var(x0.clone()), tape.var(w0.clone()), tape.var(w20.clone()), tape.var(m0.clone()));
    let out = net(x, w, w2, m);
    let grads = tape.grad(out, &[x, w, w2, m], false);

    let eval = |x: &Array<f64>, w: &Array<f64>, w2: &Array<f64>, m: &Array<f64>| {
        let t = Tape::new();
        net(t.constant(x.clone()), t.constant(w.clone()), t.constant(w2.clone()), t.constant(m.clone())).item()
    };
    let checks: Vec<(Vec<f64>, Vec<f64>)> = vec![
        (grads[0].unwrap().value().data().to_vec(), fd_grad(&|a| eval(a, &w0, &w20, &m0), &x0, 1e-5)),
        (grads[1].unwrap().value().data().to_vec(), fd_grad(&|a| eval(&x0, a, &w20, &m0), &w0, 1e-5)),
        (grads[2].unwrap().value().data().to_vec(), fd_grad(&|a| eval(&x0, &w0, a, &m0), &w20, 1e-5)),
        (grads[3].unwrap().value().data().to_vec(), fd_grad(&|a| eval(&x0, &w0, &w20, a), &m0, 1e-5)),
    ];
    for (k, (an, fd)) in checks.iter().enumerate() {
        let e = rel_err(an, fd);
        assert!(e < 1e-5, "input {k}: relative error {e}");
    }
}

/// Critic-like function with leaky ReLU and instance norm, as in a patch critic.
fn critic<'t>(x: Var<'t, f64>, w1: Var<'t, f64>, w2: Var<'t, f64>) -> Var<'t, f64> {
    let h = x.conv2d(w1, 2, 1).leaky_relu(0.2);
    let h = instance_norm(h, 1e-5).conv2d(w2, 2, 1);
    h.tanh().sum()
}

fn penalty_value(x: &Array<f64>, w1: &Array<f64>, w2: &Array<f64>) -> f64 {
    let t = Tape::new();
    let xv = t.var(x.clone());
    let out = critic(xv, t.constant(w1.clone()), t.constant(w2.clone()));
    let g = t.grad(out, &[xv], false)[0].unwrap();
    let norm = g.value().data().iter().map(|v| v * v).sum::<f64>().sqrt();
    (norm - 1.0).powi(2)
}

#[test]
fn gradient_of_gradient_penalty_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x0 = rand_array(&[1, 3, 8, 8], &mut rng);
    let w10 = rand_array(&[4, 3, 3, 3], &mut rng);
    let w20 = rand_array(&[2, 4, 3, 3], &mut rng);

    let tape = Tape::new();
    let x = tape.var(x0.clone());
    let (w1, w2) = (tape.var(w10.clone()), tape.var(w20.clone()));
    let out = critic(x, w1, w2);
    let gx = tape.grad(out, &[x], true)[0].unwrap();
    let pen = gx.square().sum().sqrt().add_scalar(-1.0).square().sum();
    assert!((pen.item() - penalty_value(&x0, &w10, &w20)).abs() < 1e-12);
    let g = tape.grad(pen, &[w1, w2, x], false);

    let fd1 = fd_grad(&|a| penalty_value(&x0, a, &w20), &w10, 1e-5);
    let fd2 = fd_grad(&|a| penalty_value(&x0, &w10, a), &w20, 1e-5);
    let fdx = fd_grad(&|a| penalty_value(a, &w10, &w20), &x0, 1e-5);
    assert!(rel_err(g[0].unwrap().value().data(), &fd1) < 1e-5);
    assert!(rel_err(g[1].unwrap().value().data(), &fd2) < 1e-5);
    assert!(rel_err(g[2].unwrap().value().data(), &fdx) < 1e-5);
}

#[test]
fn unrelated_inputs_get_no_gradient_and_constants_record_nothing() {
    let tape = Tape::<f32>::new();
    let a = tape.var(Array::ones(&[2]));
    let b = tape.var(Array::ones(&[2]));
    let c = tape.constant(Array::ones(&[2]));
    let y = a.mul(c).sum();
    let g = tape.grad(y, &[a, b], false);
    assert!(g[0].is_some());
    assert!(g[1].is_none());
    let z = c.exp().mul(c);
    assert!(!z.requires_grad());
    let before = tape.len();
    let _ = tape.no_grad(|| a.square());
    assert_eq!(tape.len(), before + 1);
    let gather = a.gather(Rc::new(vec![1, 1, 0]), &[3]).sum();
    assert_eq!(tape.grad(gather, &[a], false)[0].unwrap().value().data(), &[1.0, 2.0]);
}
