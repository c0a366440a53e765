use super::layers::Linear;
use super::params::{Init, ParamBuilder, ParameterSet};
use crate::error::{Error, Result};

/// Single-head dot-product attention from an ego node over a variable set of
/// event nodes, followed by an output projection. With no event nodes a
/// learned null context is projected instead.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionAggregator {
    pub d_att: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub null: usize,
}

#[derive(Clone, Debug)]
pub struct AttentionCache {
    version: u64,
    ego: Vec<f64>,
    nodes: Vec<Vec<f64>>,
    q: Vec<f64>,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pooled: Vec<f64>,
}

impl AttentionAggregator {
    pub fn new(builder: &mut ParamBuilder, prefix: &str, d_ego: usize, d_node: usize, d_att: usize) -> Self {
        let query = Linear::new(builder, &format!("{prefix}.query"), d_ego, d_att, Linear::xavier(d_ego, d_att));
        let key = Linear::new(builder, &format!("{prefix}.key"), d_node, d_att, Linear::xavier(d_node, d_att));
        let value = Linear::new(builder, &format!("{prefix}.value"), d_node, d_att, Linear::xavier(d_node, d_att));
        let out = Linear::new(builder, &format!("{prefix}.out"), d_att, d_att, Linear::xavier(d_att, d_att));
        let null = builder.add(format!("{prefix}.null"), &[d_att], Init::Uniform(0.1));
        Self {
            d_att,
            query,
            key,
            value,
            out,
            null,
        }
    }

    pub fn forward<N: AsRef<[f64]>>(&self, params: &ParameterSet, ego: &[f64], nodes: &[N]) -> Result<(Vec<f64>, AttentionCache)> {
        if ego.len() != self.query.n_in {
            return Err(Error::DimensionMismatch {
                expected: self.query.n_in,
                got: ego.len(),
            });
        }
        if let Some(n) = nodes.iter().find(|n| n.as_ref().len() != self.key.n_in) {
            return Err(Error::DimensionMismatch {
                expected: self.key.n_in,
                got: n.as_ref().len(),
            });
        }
        let p = params.values();
        let d = self.d_att;
        let scale = 1.0 / (d as f64).sqrt();
        let mut q = vec![0.0; d];
        self.query.forward_vec(p, ego, &mut q);
        let mut keys = Vec::with_capacity(nodes.len());
        let mut values = Vec::with_capacity(nodes.len());
        let mut scores = Vec::with_capacity(nodes.len());
        for n in nodes {
            let mut k = vec![0.0; d];
            let mut v = vec![0.0; d];
            self.key.forward_vec(p, n.as_ref(), &mut k);
            self.value.forward_vec(p, n.as_ref(), &mut v);
            scores.push(scale * q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>());
            keys.push(k);
            values.push(v);
        }
        let weights = softmax(&scores);
        let pooled = if nodes.is_empty() {
            p[self.null..self.null + d].to_vec()
        } else {
            let mut acc = vec![0.0; d];
            for (w, v) in weights.iter().zip(&values) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += w * x;
                }
            }
            acc
        };
        let mut out = vec![0.0; d];
        self.out.forward_vec(p, &pooled, &mut out);
        Ok((
            out,
            AttentionCache {
                version: params.version(),
                ego: ego.to_vec(),
                nodes: nodes.iter().map(|n| n.as_ref().to_vec()).collect(),
                q,
                keys,
                values,
                weights,
                pooled,
            },
        ))
    }

    pub fn backward(&self, params: &ParameterSet, cache: &AttentionCache, dout: &[f64], grad: &mut [f64]) -> Result<()> {
        if cache.version != params.version() {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: params.version(),
            });
        }
        let p = params.values();
        let d = self.d_att;
        let scale = 1.0 / (d as f64).sqrt();
        let mut dpooled = vec![0.0; d];
        self.out.backward_vec(p, &cache.pooled, dout, grad, &mut dpooled);
        if cache.nodes.is_empty() {
            for (g, x) in grad[self.null..self.null + d].iter_mut().zip(&dpooled) {
                *g += x;
            }
            return Ok(());
        }
        let dalpha: Vec<f64> = cache
            .values
            .iter()
            .map(|v| v.iter().zip(&dpooled).map(|(a, b)| a * b).sum())
            .collect();
        let mean: f64 = cache.weights.iter().zip(&dalpha).map(|(a, b)| a * b).sum();
        let mut dq = vec![0.0; d];
        let mut scratch = vec![0.0; self.key.n_in];
        for j in 0..cache.nodes.len() {
            let a = cache.weights[j];
            let ds = a * (dalpha[j] - mean);
            let dv: Vec<f64> = dpooled.iter().map(|x| a * x).collect();
            self.value.backward_vec(p, &cache.nodes[j], &dv, grad, &mut scratch);
            let dk: Vec<f64> = cache.q.iter().map(|x| ds * scale * x).collect();
            self.key.backward_vec(p, &cache.nodes[j], &dk, grad, &mut scratch);
            for (g, k) in dq.iter_mut().zip(&cache.keys[j]) {
                *g += ds * scale * k;
            }
        }
        let mut dego = vec![0.0; self.query.n_in];
        self.query.backward_vec(p, &cache.ego, &dq, grad, &mut dego);
        Ok(())
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
