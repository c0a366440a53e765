use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::neural::{Activation, EmbedCache, Mlp, MlpCache, NetworkSpec, ParamBuilder, ParameterSet, QuantileEmbedding};

/// Implicit quantile critic: a state-action trunk multiplied elementwise by
/// the cosine embedding of each fraction, then a small head to one value.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileCritic {
    pub trunk: Mlp,
    pub embed: QuantileEmbedding,
    pub head: Mlp,
}

#[derive(Clone, Debug)]
pub struct CriticCache {
    trunk: MlpCache,
    features: Array2<f64>,
    embed: EmbedCache,
    embedded: Array2<f64>,
    head: MlpCache,
    batch: usize,
    n_tau: usize,
}

impl QuantileCritic {
    pub fn new(builder: &mut ParamBuilder, input_dim: usize, hidden: usize, n_cos: usize) -> Result<Self> {
        let trunk = Mlp::new(
            builder,
            "critic.trunk",
            &NetworkSpec::new(&[input_dim, hidden, hidden], Activation::Relu, Activation::Relu),
        )?;
        let embed = QuantileEmbedding::new(builder, "critic.embed", n_cos, hidden)?;
        let head = Mlp::new(
            builder,
            "critic.head",
            &NetworkSpec::new(&[hidden, hidden, 1], Activation::Relu, Activation::Identity),
        )?;
        Ok(Self { trunk, embed, head })
    }

    /// Quantile values, `B x K`, for state-action rows `x` at fractions `taus`.
    pub fn forward(&self, params: &ParameterSet, x: ArrayView2<f64>, taus: &[f64]) -> Result<(Array2<f64>, CriticCache)> {
        let (features, trunk) = self.trunk.forward(params, x)?;
        let (embedded, embed) = self.embed.forward(params, taus)?;
        let (b, k, d) = (features.nrows(), embedded.nrows(), features.ncols());
        let mut mixed = Array2::zeros((b * k, d));
        for (r, mut row) in mixed.axis_iter_mut(Axis(0)).enumerate() {
            let f = features.row(r / k);
            let e = embedded.row(r % k);
            ndarray::Zip::from(&mut row).and(&f).and(&e).for_each(|m, &a, &c| *m = a * c);
        }
        let (out, head) = self.head.forward(params, mixed.view())?;
        let z = out.into_shape_with_order((b, k)).map_err(|_| Error::DimensionMismatch { expected: b * k, got: 0 })?;
        Ok((
            z,
            CriticCache {
                trunk,
                features,
                embed,
                embedded,
                head,
                batch: b,
                n_tau: k,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `dz` (`B x K`) and
    /// returns the gradient with respect to the input rows.
    pub fn backward(&self, params: &ParameterSet, cache: &CriticCache, dz: &Array2<f64>, grad: &mut [f64]) -> Result<Array2<f64>> {
        let (b, k) = (cache.batch, cache.n_tau);
        if dz.dim() != (b, k) {
            return Err(Error::DimensionMismatch {
                expected: b * k,
                got: dz.len(),
            });
        }
        let dout = dz.to_shape((b * k, 1)).expect("contiguous").to_owned();
        let dmixed = self.head.backward(params, &cache.head, dout.view(), grad)?;
        let d = cache.features.ncols();
        let mut dfeat = Array2::<f64>::zeros((b, d));
        let mut demb = Array2::<f64>::zeros((k, d));
        for (r, row) in dmixed.axis_iter(Axis(0)).enumerate() {
            let (i, j) = (r / k, r % k);
            for c in 0..d {
                let g = row[c];
                dfeat[[i, c]] += g * cache.embedded[[j, c]];
                demb[[j, c]] += g * cache.features[[i, c]];
            }
        }
        self.embed.backward(params, &cache.embed, &demb, grad)?;
        self.trunk.backward(params, &cache.trunk, dfeat.view(), grad)
    }
}

/// State-action value network for the scalar (non-distributional) critic.
pub fn scalar_critic(builder: &mut ParamBuilder, input_dim: usize, hidden: usize) -> Result<Mlp> {
    Mlp::new(
        builder,
        "critic.q",
        &NetworkSpec::new(&[input_dim, hidden, hidden, 1], Activation::Relu, Activation::Identity),
    )
}

/// Deterministic policy network with a sigmoid output in `[0, 1]`.
pub fn actor_network(builder: &mut ParamBuilder, obs_dim: usize, hidden: usize) -> Result<Mlp> {
    Mlp::new(
        builder,
        "actor",
        &NetworkSpec::new(&[obs_dim, hidden, hidden, 1], Activation::Relu, Activation::Sigmoid),
    )
}
