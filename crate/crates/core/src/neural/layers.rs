use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use serde::{Deserialize, Serialize};

use super::params::{Init, ParamBuilder, ParameterSet};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative given pre-activation `z` and output `y`.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

/// Affine layer `y = x W^T + b` with `W` stored `(n_out, n_in)` row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(builder: &mut ParamBuilder, name: &str, n_in: usize, n_out: usize, init: Init) -> Self {
        let w = builder.add(format!("{name}.weight"), &[n_out, n_in], init);
        let b = builder.add(format!("{name}.bias"), &[n_out], Init::Zeros);
        Self { w, b, n_in, n_out }
    }

    /// Glorot-uniform bound for this fan-in/fan-out.
    pub fn xavier(n_in: usize, n_out: usize) -> Init {
        Init::Uniform((6.0 / (n_in + n_out) as f64).sqrt())
    }

    pub fn weight<'a>(&self, p: &'a [f64]) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((self.n_out, self.n_in), &p[self.w..self.w + self.n_out * self.n_in])
            .expect("weight layout")
    }

    pub fn bias<'a>(&self, p: &'a [f64]) -> ArrayView1<'a, f64> {
        ArrayView1::from(&p[self.b..self.b + self.n_out])
    }

    pub fn forward(&self, p: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight(p).t());
        y += &self.bias(p);
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, p: &[f64], x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut [f64]) -> Array2<f64> {
        {
            let gw = &mut grad[self.w..self.w + self.n_out * self.n_in];
            let mut gw = ArrayViewMut2::from_shape((self.n_out, self.n_in), gw).expect("weight layout");
            general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut gw);
        }
        let db = dy.sum_axis(Axis(0));
        for (g, d) in grad[self.b..self.b + self.n_out].iter_mut().zip(db.iter()) {
            *g += d;
        }
        dy.dot(&self.weight(p))
    }

    /// Single-vector forward without ndarray overhead.
    pub fn forward_vec(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &p[self.w..self.w + self.n_out * self.n_in];
        for (o, out_o) in out.iter_mut().enumerate().take(self.n_out) {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *out_o = p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Single-vector backward; accumulates into `grad` and `dx`.
    pub fn backward_vec(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
        let w = &p[self.w..self.w + self.n_out * self.n_in];
        for o in 0..self.n_out {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            grad[self.b + o] += d;
            let gw = &mut grad[self.w + o * self.n_in..self.w + (o + 1) * self.n_in];
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += d * xi;
            }
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            for (dxi, wi) in dx.iter_mut().zip(row) {
                *dxi += d * wi;
            }
        }
    }
}

/// Layer widths and activations of a dense network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[input, hidden..., output]`.
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    /// Uniform bound for the final layer weights; Glorot when absent.
    #[serde(default)]
    pub final_init: Option<f64>,
}

impl NetworkSpec {
    pub fn new(dims: &[usize], hidden: Activation, output: Activation) -> Self {
        Self {
            dims: dims.to_vec(),
            hidden,
            output,
            final_init: None,
        }
    }

    pub fn with_final_init(mut self, bound: f64) -> Self {
        self.final_init = Some(bound);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub acts: Vec<Activation>,
}

/// Activations kept from a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    version: u64,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    pub fn new(builder: &mut ParamBuilder, prefix: &str, spec: &NetworkSpec) -> Result<Self> {
        if spec.dims.len() < 2 || spec.dims.contains(&0) {
            return Err(crate::error::invalid(format!("bad network dims {:?}", spec.dims)));
        }
        let n = spec.dims.len() - 1;
        let mut layers = Vec::with_capacity(n);
        let mut acts = Vec::with_capacity(n);
        for (i, w) in spec.dims.windows(2).enumerate() {
            let last = i + 1 == n;
            let init = match (last, spec.final_init) {
                (true, Some(b)) if b == 0.0 => Init::Zeros,
                (true, Some(b)) => Init::Uniform(b),
                _ => Linear::xavier(w[0], w[1]),
            };
            layers.push(Linear::new(builder, &format!("{prefix}.{i}"), w[0], w[1], init));
            acts.push(if last { spec.output } else { spec.hidden });
        }
        Ok(Self { layers, acts })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("layers").n_out
    }

    pub fn forward(&self, params: &ParameterSet, x: ArrayView2<f64>) -> Result<(Array2<f64>, MlpCache)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let p = params.values();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let z = layer.forward(p, h.view());
            let y = z.mapv(|v| act.apply(v));
            inputs.push(h);
            pre.push(z);
            h = y;
        }
        let cache = MlpCache {
            version: params.version(),
            inputs,
            pre,
            output: h.clone(),
        };
        Ok((h, cache))
    }

    /// Exact reverse pass. Accumulates into `grad` and returns `dL/dx`.
    pub fn backward(&self, params: &ParameterSet, cache: &MlpCache, dy: ArrayView2<f64>, grad: &mut [f64]) -> Result<Array2<f64>> {
        if cache.version != params.version() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: params.version(),
            });
        }
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if dy.dim() != cache.output.dim() {
            return Err(Error::DimensionMismatch {
                expected: cache.output.len(),
                got: dy.len(),
            });
        }
        let p = params.values();
        let n = self.layers.len();
        let mut upstream = dy.to_owned();
        for i in (0..n).rev() {
            let act = self.acts[i];
            let z = &cache.pre[i];
            let y = if i + 1 < n { &cache.inputs[i + 1] } else { &cache.output };
            let mut dz = upstream;
            ndarray::Zip::from(&mut dz).and(z).and(y).for_each(|d, &zv, &yv| {
                *d *= act.derivative(zv, yv);
            });
            upstream = self.layers[i].backward(p, cache.inputs[i].view(), dz.view(), grad);
        }
        Ok(upstream)
    }

    /// Forward pass together with the directional derivative of the output
    /// with respect to the parameters along `direction`.
    pub fn jvp(&self, params: &ParameterSet, x: ArrayView2<f64>, direction: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
        if direction.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: direction.len(),
            });
        }
        let p = params.values();
        let mut h = x.to_owned();
        let mut dh = Array2::<f64>::zeros(x.raw_dim());
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let z = layer.forward(p, h.view());
            let mut dz = dh.dot(&layer.weight(p).t());
            dz += &h.dot(&layer.weight(direction).t());
            dz += &layer.bias(direction);
            let y = z.mapv(|v| act.apply(v));
            ndarray::Zip::from(&mut dz).and(&z).and(&y).for_each(|d, &zv, &yv| {
                *d *= act.derivative(zv, yv);
            });
            h = y;
            dh = dz;
        }
        Ok((h, dh))
    }

    /// Forward pass together with the derivative of the output along an
    /// input tangent `dx` (parameters held fixed).
    pub fn jvp_input(&self, params: &ParameterSet, x: ArrayView2<f64>, dx: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if x.ncols() != self.input_dim() || dx.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let p = params.values();
        let mut h = x.to_owned();
        let mut dh = dx.to_owned();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let z = layer.forward(p, h.view());
            let mut dz = dh.dot(&layer.weight(p).t());
            let y = z.mapv(|v| act.apply(v));
            ndarray::Zip::from(&mut dz).and(&z).and(&y).for_each(|d, &zv, &yv| {
                *d *= act.derivative(zv, yv);
            });
            h = y;
            dh = dz;
        }
        Ok((h, dh))
    }

    /// Convenience forward for a single input row.
    pub fn forward_one(&self, params: &ParameterSet, x: &[f64]) -> Result<Array1<f64>> {
        let xv = ArrayView2::from_shape((1, x.len()), x).map_err(|_| Error::DimensionMismatch {
            expected: self.input_dim(),
            got: x.len(),
        })?;
        let (y, _) = self.forward(params, xv)?;
        Ok(y.row(0).to_owned())
    }
}
