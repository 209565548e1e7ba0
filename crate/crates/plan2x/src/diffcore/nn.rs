use rand::Rng;

use crate::diffcore::tape::{Tape, Var};
use crate::diffcore::tensor::Tensor;

/// Affine layer: x @ w + b, with w: [in, out], b: [1, out].
#[derive(Clone)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: Tensor::xavier(in_dim, out_dim, rng).with_grad(),
            b: Tensor::zeros(1, out_dim).with_grad(),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        x.matmul(tape.leaf(&self.w)).add_row(tape.leaf(&self.b))
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![&self.w, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        vec![
            (format!("{prefix}.w"), &self.w),
            (format!("{prefix}.b"), &self.b),
        ]
    }
}

/// Perceptron with ELU hidden activations and a linear output layer.
#[derive(Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` runs input -> hidden... -> output, e.g. `[4, 32, 32]`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, mut x: Var<'t>) -> Var<'t> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x);
            if i < last {
                x = x.elu();
            }
        }
        x
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.shape()[1]
    }

    /// Zeroes the output layer so the net emits its bias. Used by tests
    /// and by heads that should start near zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.len() - 1;
        for v in self.layers[last].w.data_mut() {
            *v = 0.0;
        }
        for v in self.layers[last].b.data_mut() {
            *v = 0.0;
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.named_params(&format!("{prefix}.{i}")))
            .collect()
    }
}

/// Gated recurrent cell: h' = (1-z) ⊙ h + z ⊙ tanh(W_n [x, r ⊙ h]).
#[derive(Clone)]
pub struct GruCell {
    update: Linear,
    reset: Linear,
    cand: Linear,
    hidden: usize,
}

impl GruCell {
    pub fn new(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        GruCell {
            update: Linear::new(in_dim + hidden, hidden, rng),
            reset: Linear::new(in_dim + hidden, hidden, rng),
            cand: Linear::new(in_dim + hidden, hidden, rng),
            hidden,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, h: Var<'t>) -> Var<'t> {
        let xh = x.concat_cols(h);
        let z = self.update.forward(tape, xh).sigmoid();
        let r = self.reset.forward(tape, xh).sigmoid();
        let xrh = x.concat_cols(r.mul(h));
        let n = self.cand.forward(tape, xrh).tanh();
        let keep = z.neg().add_scalar(1.0).mul(h);
        keep + z.mul(n)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.update.params();
        v.extend(self.reset.params());
        v.extend(self.cand.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.update.params_mut();
        v.extend(self.reset.params_mut());
        v.extend(self.cand.params_mut());
        v
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut v = self.update.named_params(&format!("{prefix}.update"));
        v.extend(self.reset.named_params(&format!("{prefix}.reset")));
        v.extend(self.cand.named_params(&format!("{prefix}.cand")));
        v
    }
}

/// Flattens parameter values into one vector, in `params()` order.
pub fn flatten_values(params: &[&Tensor]) -> Vec<f64> {
    params.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Writes a flat vector back into parameters, in `params_mut()` order.
pub fn unflatten_values(params: &mut [&mut Tensor], flat: &[f64]) {
    let mut at = 0;
    for t in params.iter_mut() {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
    }
    assert_eq!(at, flat.len(), "flat vector length mismatch");
}
