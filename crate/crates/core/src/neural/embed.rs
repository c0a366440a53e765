use std::f64::consts::PI;

use ndarray::Array2;

use super::layers::Linear;
use super::params::{ParamBuilder, ParameterSet};
use crate::error::{invalid, Error, Result};

/// Cosine embedding of quantile fractions followed by a ReLU projection.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileEmbedding {
    pub n_cos: usize,
    pub linear: Linear,
}

#[derive(Clone, Debug)]
pub struct EmbedCache {
    version: u64,
    cos: Array2<f64>,
    pre: Array2<f64>,
}

/// `cos(pi * i * tau)` for `i = 0..n_cos`, one row per fraction.
pub fn cosine_features(taus: &[f64], n_cos: usize) -> Result<Array2<f64>> {
    if let Some(t) = taus.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(invalid(format!("quantile fraction {t} outside [0, 1]")));
    }
    Ok(Array2::from_shape_fn((taus.len(), n_cos), |(r, i)| (PI * i as f64 * taus[r]).cos()))
}

impl QuantileEmbedding {
    pub fn new(builder: &mut ParamBuilder, prefix: &str, n_cos: usize, dim: usize) -> Result<Self> {
        if n_cos == 0 {
            return Err(invalid("n_cos must be >= 1"));
        }
        let linear = Linear::new(builder, prefix, n_cos, dim, Linear::xavier(n_cos, dim));
        Ok(Self { n_cos, linear })
    }

    pub fn dim(&self) -> usize {
        self.linear.n_out
    }

    pub fn forward(&self, params: &ParameterSet, taus: &[f64]) -> Result<(Array2<f64>, EmbedCache)> {
        let cos = cosine_features(taus, self.n_cos)?;
        let pre = self.linear.forward(params.values(), cos.view());
        let out = pre.mapv(|v| v.max(0.0));
        Ok((
            out,
            EmbedCache {
                version: params.version(),
                cos,
                pre,
            },
        ))
    }

    pub fn backward(&self, params: &ParameterSet, cache: &EmbedCache, dy: &Array2<f64>, grad: &mut [f64]) -> Result<()> {
        if cache.version != params.version() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: params.version(),
            });
        }
        let mut dz = dy.clone();
        ndarray::Zip::from(&mut dz).and(&cache.pre).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0;
            }
        });
        self.linear.backward(params.values(), cache.cos.view(), dz.view(), grad);
        Ok(())
    }
}
