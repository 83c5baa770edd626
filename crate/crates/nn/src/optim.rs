use crate::{Array, ParamStore, Scalar};

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array<T>>,
    v: Vec<Array<T>>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros = || store.iter().map(|p| Array::zeros(p.value.shape())).collect();
        Self { lr, beta1, beta2, eps: 1e-8, m: zeros(), v: zeros(), step: 0 }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Array<T>]) {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match optimizer state");
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let step_size = T::lit(self.lr * c2.sqrt() / c1);
        let eps = T::lit(self.eps * c2.sqrt());
        let (b1, b2) = (T::lit(b1), T::lit(b2));
        for (((param, g), m), v) in store.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}

/// Stochastic gradient descent with optional momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buf: Vec<Array<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self { lr, momentum, weight_decay, buf: store.iter().map(|p| Array::zeros(p.value.shape())).collect() }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Array<T>]) {
        assert_eq!(grads.len(), self.buf.len(), "gradient count does not match optimizer state");
        let (lr, mom, wd) = (T::lit(self.lr), T::lit(self.momentum), T::lit(self.weight_decay));
        for ((param, g), buf) in store.iter_mut().zip(grads).zip(&mut self.buf) {
            for ((p, &g), b) in param.value.data_mut().iter_mut().zip(g.data()).zip(buf.data_mut()) {
                let d = g + wd * *p;
                *b = mom * *b + d;
                *p -= lr * *b;
            }
        }
    }
}

/// Scales all gradients down so their joint L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Array<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let f = v.as_f64();
            f * f
        })
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
