use rand::Rng;

use crate::{Array, Scalar, Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Array<T>,
}

/// Flat, ordered collection of named parameter arrays owned by a model.
///
/// Models keep plain arrays here and bind them onto a fresh [`Tape`] for each
/// forward pass, so trained models are `Send + Sync` and can be shared between
/// inference workers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        self.params.push(Param { name: name.into(), value });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on `tape`, as gradient leaves when `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        Bound { vars: self.params.iter().map(|p| tape.leaf(p.value.clone(), trainable)).collect() }
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<(), String> {
        if other.params.len() != self.params.len() {
            return Err(format!("expected {} parameters, found {}", self.params.len(), other.params.len()));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(format!(
                    "parameter mismatch: {} {:?} vs {} {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                ));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }
}

/// Parameters of one store bound to a tape.
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// Gradient arrays of `loss` for every bound parameter (zeros where unused).
    pub fn grads(&self, loss: Var<'t, T>) -> Vec<Array<T>> {
        let tape = loss.tape();
        let gs = tape.grad(loss, &self.vars, false);
        gs.into_iter()
            .zip(&self.vars)
            .map(|(g, v)| match g {
                Some(g) => (*g.value()).clone(),
                None => Array::zeros(&v.shape()),
            })
            .collect()
    }
}

/// Uniform `U(-bound, bound)` fill with `bound = gain * sqrt(3 / fan_in)`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Array<T> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    Array::new(shape, (0..n).map(|_| T::lit(rng.random_range(-bound..=bound))).collect())
}

/// He gain for (leaky) ReLU networks.
pub fn relu_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[out_channels, in_channels, kernel, kernel], fan_in, gain, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Array::zeros(&[1, out_channels, 1, 1])));
        Self { weight, bias, stride, pad, in_channels, out_channels, kernel }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        let y = x.conv2d(p.get(self.weight), self.stride, self.pad);
        match self.bias {
            Some(b) => y.add(p.get(b)),
            None => y,
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
            + if self.bias.is_some() { self.out_channels } else { 0 }
    }
}

/// Fully connected layer `y = x W + b` on `[batch, in]` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_init(&[in_features, out_features], in_features, gain, rng),
        );
        let bias = store.add(format!("{name}.bias"), Array::zeros(&[1, out_features]));
        Self { weight, bias, in_features, out_features }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Var<'t, T> {
        x.matmul(p.get(self.weight)).add(p.get(self.bias))
    }

    pub fn num_scalars(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Parameter-free instance normalisation over the spatial axes of NCHW input.
pub fn instance_norm<'t, T: Scalar>(x: Var<'t, T>, eps: f64) -> Var<'t, T> {
    let mu = x.mean_hw();
    let centered = x.sub(mu);
    let var = centered.square().mean_hw();
    centered.mul(var.add_scalar(T::lit(eps)).powf(T::lit(-0.5)))
}

/// Numerically stable per-element binary cross-entropy from logits, averaged.
pub fn bce_with_logits<'t, T: Scalar>(logits: Var<'t, T>, targets: Var<'t, T>) -> Var<'t, T> {
    logits.softplus().sub(logits.mul(targets)).mean()
}

/// Per-element binary cross-entropy of probabilities, clamped away from 0 and 1, averaged.
pub fn bce<'t, T: Scalar>(probs: Var<'t, T>, targets: Var<'t, T>) -> Var<'t, T> {
    let eps = 1e-7;
    let tape = probs.tape();
    // Clamp through a constant mask so the gradient matches the clamped value.
    let clamped = probs.with_value(|a| a.map(|v| v.max(T::lit(eps)).min(T::lit(1.0 - eps))));
    let shift = tape.constant(clamped.zip_map(&probs.value(), |c, p| c - p));
    let p = probs.add(shift);
    let pos = targets.mul(p.ln());
    let neg = targets.rsub_scalar(T::one()).mul(p.rsub_scalar(T::one()).ln());
    pos.add(neg).neg().mean()
}
