//! Named parameter groups and the two layer types built on them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Var};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Mat,
}

/// An ordered, independently updatable set of tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub params: Vec<Param>,
}

impl ParamGroup {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Mat) -> usize {
        self.params.push(Param { name: name.into(), value });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, idx: usize) -> &Mat {
        &self.params[idx].value
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Mat {
        &mut self.params[idx].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Mat> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn zeros_like(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Mat::zeros(p.value.rows, p.value.cols)).collect()
    }

    /// All scalars in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.value.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_scalars());
        let mut offset = 0;
        for p in &mut self.params {
            let n = p.value.len();
            p.value.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Places the group on a graph. Untracked groups become constants.
    pub fn bind(&self, g: &mut Graph, track: bool) -> Bound {
        let vars =
            self.params.iter().map(|p| if track { g.param(p.value.clone()) } else { g.constant(p.value.clone()) }).collect();
        Bound { vars }
    }
}

/// Graph handles of one bound [`ParamGroup`], index-aligned with it.
#[derive(Clone, Debug)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    /// Gradients of the group's tensors, zeros where no path exists.
    pub fn grads(&self, group: &ParamGroup, grads: &Gradients) -> Vec<Mat> {
        self.vars.iter().zip(&group.params).map(|(&v, p)| grads.get_or_zeros(v, p.value.shape())).collect()
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Mat {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Mat::from_vec(rows, cols, data)
}

/// Affine map `x W + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Uniform fan-in initialization scaled by `gain`.
    pub fn new(group: &mut ParamGroup, name: &str, input: usize, output: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let bound = gain / (input.max(1) as f64).sqrt();
        let weight = group.push(format!("{name}.weight"), uniform(rng, input, output, bound));
        let bias = group.push(format!("{name}.bias"), Mat::zeros(1, output));
        Self { weight, bias, input, output }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = g.matmul(x, p.get(self.weight));
        g.add_row(y, p.get(self.bias))
    }
}

/// Gated recurrent unit with input-side and hidden-side projections
/// packed as `[reset | update | candidate]`.
#[derive(Clone, Copy, Debug)]
pub struct Gru {
    pub w_input: usize,
    pub w_hidden: usize,
    pub b_input: usize,
    pub b_hidden: usize,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(group: &mut ParamGroup, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_input = group.push(format!("{name}.w_input"), uniform(rng, input, 3 * hidden, bound));
        let w_hidden = group.push(format!("{name}.w_hidden"), uniform(rng, hidden, 3 * hidden, bound));
        let b_input = group.push(format!("{name}.b_input"), Mat::zeros(1, 3 * hidden));
        let b_hidden = group.push(format!("{name}.b_hidden"), Mat::zeros(1, 3 * hidden));
        Self { w_input, w_hidden, b_input, b_hidden, input, hidden }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, h: Var) -> Var {
        let hd = self.hidden;
        let xi = g.matmul(x, p.get(self.w_input));
        let xi = g.add_row(xi, p.get(self.b_input));
        let hh = g.matmul(h, p.get(self.w_hidden));
        let hh = g.add_row(hh, p.get(self.b_hidden));

        let xr = g.slice_cols(xi, 0, hd);
        let hr = g.slice_cols(hh, 0, hd);
        let reset = g.add(xr, hr);
        let reset = g.sigmoid(reset);

        let xu = g.slice_cols(xi, hd, hd);
        let hu = g.slice_cols(hh, hd, hd);
        let update = g.add(xu, hu);
        let update = g.sigmoid(update);

        let xn = g.slice_cols(xi, 2 * hd, hd);
        let hn = g.slice_cols(hh, 2 * hd, hd);
        let gated = g.mul(reset, hn);
        let cand = g.add(xn, gated);
        let cand = g.tanh(cand);

        // h' = cand + update ⊙ (h - cand)
        let diff = g.sub(h, cand);
        let kept = g.mul(update, diff);
        g.add(cand, kept)
    }
}
