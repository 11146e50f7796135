use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// Shape of the actor-critic network: a tanh trunk feeding two categorical
/// heads and a scalar value head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub k_rt: usize,
    pub k_bw: usize,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    offset: usize,
    n_in: usize,
    n_out: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    fn bias(&self) -> usize {
        self.offset + self.n_out * self.n_in
    }

    fn apply(&self, data: &[f64], x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let w = &data[self.offset..self.offset + self.n_out * self.n_in];
        let b = &data[self.bias()..self.bias() + self.n_out];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    fn backward(&self, data: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
        let b = self.bias();
        for o in 0..self.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            let row = self.offset + o * self.n_in;
            for i in 0..self.n_in {
                grad[row + i] += g * x[i];
                dx[i] += g * data[row + i];
            }
            grad[b + o] += g;
        }
    }
}

impl Layout {
    pub fn new(input: usize, hidden: &[usize], k_rt: usize, k_bw: usize) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            k_rt,
            k_bw,
        }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.input == 0 || self.k_rt == 0 || self.k_bw == 0 || self.hidden.is_empty() || self.hidden.contains(&0)
        {
            return Err(RlError::InvalidHyper(format!("degenerate layout {self:?}")));
        }
        Ok(())
    }

    // trunk layers, then head_rt, head_bw, value
    fn layers(&self) -> Vec<Dense> {
        let mut dims = Vec::new();
        let mut n_in = self.input;
        for &h in &self.hidden {
            dims.push((n_in, h));
            n_in = h;
        }
        dims.push((n_in, self.k_rt));
        dims.push((n_in, self.k_bw));
        dims.push((n_in, 1));
        let mut offset = 0;
        dims.into_iter()
            .map(|(n_in, n_out)| {
                let d = Dense { offset, n_in, n_out };
                offset += d.len();
                d
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(Dense::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits_rt: Vec<f64>,
    pub logits_bw: Vec<f64>,
    pub value: f64,
}

/// All network weights stored in one flat vector; the layout fixes the order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: Layout,
    data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: Layout) -> Result<Self, RlError> {
        layout.validate()?;
        let n = layout.num_params();
        Ok(Self {
            layout,
            data: vec![0.0; n],
        })
    }

    /// Glorot-uniform trunk and value head, near-zero policy heads, zero biases.
    pub fn init<R: Rng>(layout: Layout, rng: &mut R) -> Result<Self, RlError> {
        let mut p = Self::zeros(layout)?;
        let layers = p.layout.layers();
        let n_trunk = p.layout.hidden.len();
        for (i, d) in layers.iter().enumerate() {
            let limit = (6.0 / (d.n_in + d.n_out) as f64).sqrt();
            let scale = if i == n_trunk || i == n_trunk + 1 { 0.01 } else { 1.0 };
            for w in &mut p.data[d.offset..d.bias()] {
                *w = scale * rng.random_range(-limit..limit);
            }
        }
        Ok(p)
    }

    pub fn from_vec(layout: Layout, data: Vec<f64>) -> Result<Self, RlError> {
        layout.validate()?;
        if data.len() != layout.num_params() {
            return Err(RlError::DimensionMismatch {
                expected: layout.num_params(),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("parameters"));
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Ranges of each layer's weights in storage order, named for diagnostics.
    pub fn layer_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let layers = self.layout.layers();
        let n_trunk = self.layout.hidden.len();
        layers
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let name = match i {
                    i if i < n_trunk => format!("trunk{i}"),
                    i if i == n_trunk => "head_rt".to_string(),
                    i if i == n_trunk + 1 => "head_bw".to_string(),
                    _ => "value".to_string(),
                };
                (name, d.offset..d.offset + d.len())
            })
            .collect()
    }

    /// Sum of absolute value-head weights plus bias magnitude: a bound on
    /// |V| since trunk outputs lie in [-1, 1].
    pub fn value_bound(&self) -> f64 {
        let v = *self.layout.layers().last().expect("value layer");
        self.data[v.offset..v.offset + v.len()].iter().map(|w| w.abs()).sum()
    }

    pub fn forward(&self, state: &[f64]) -> Result<Forward, RlError> {
        Ok(self.forward_cached(state)?.0)
    }

    /// Forward pass that also returns the trunk activations, input first.
    pub(crate) fn forward_cached(&self, state: &[f64]) -> Result<(Forward, Vec<Vec<f64>>), RlError> {
        if state.len() != self.layout.input {
            return Err(RlError::DimensionMismatch {
                expected: self.layout.input,
                got: state.len(),
            });
        }
        let layers = self.layout.layers();
        let n_trunk = self.layout.hidden.len();
        let mut acts = Vec::with_capacity(n_trunk + 1);
        acts.push(state.to_vec());
        for d in &layers[..n_trunk] {
            let mut z = Vec::with_capacity(d.n_out);
            d.apply(&self.data, acts.last().expect("input"), &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            acts.push(z);
        }
        let h = acts.last().expect("trunk output");
        let mut logits_rt = Vec::new();
        let mut logits_bw = Vec::new();
        let mut value = Vec::new();
        layers[n_trunk].apply(&self.data, h, &mut logits_rt);
        layers[n_trunk + 1].apply(&self.data, h, &mut logits_bw);
        layers[n_trunk + 2].apply(&self.data, h, &mut value);
        Ok((
            Forward {
                logits_rt,
                logits_bw,
                value: value[0],
            },
            acts,
        ))
    }

    /// Reverse pass for one sample given gradients at the three outputs.
    pub(crate) fn backward_into(&self, acts: &[Vec<f64>], d_rt: &[f64], d_bw: &[f64], d_value: f64, grad: &mut [f64]) {
        let layers = self.layout.layers();
        let n_trunk = self.layout.hidden.len();
        let h = &acts[n_trunk];
        let mut dh = vec![0.0; h.len()];
        // empty head gradients mean "value only"
        if !d_rt.is_empty() {
            layers[n_trunk].backward(&self.data, h, d_rt, grad, &mut dh);
        }
        if !d_bw.is_empty() {
            layers[n_trunk + 1].backward(&self.data, h, d_bw, grad, &mut dh);
        }
        layers[n_trunk + 2].backward(&self.data, h, &[d_value], grad, &mut dh);
        for l in (0..n_trunk).rev() {
            let out = &acts[l + 1];
            let dz: Vec<f64> = dh.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)).collect();
            let mut dx = vec![0.0; acts[l].len()];
            layers[l].backward(&self.data, &acts[l], &dz, grad, &mut dx);
            dh = dx;
        }
    }
}
