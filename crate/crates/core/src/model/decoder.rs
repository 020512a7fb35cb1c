use crate::lora::lora_merge;
use crate::tensor::{sigmoid, Matrix};

use super::{Model, ModelError, Projection, ProjectionId};

const RMS_EPS: f64 = 1e-6;

/// Incremental inference with a key/value cache. Adapters are merged into
/// the base weights once up front.
pub struct Decoder<'m> {
    model: &'m Model,
    layers: Vec<Vec<Matrix>>,
    lm_head: Matrix,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    logits: Vec<f64>,
}

fn merged(model: &Model, id: ProjectionId) -> Result<Matrix, ModelError> {
    let w = model.base.get(id).weight();
    match model.adapters.get(id) {
        Some(ad) => Ok(lora_merge(w, ad)?),
        None => Ok(w.clone()),
    }
}

fn matvec(w: &Matrix, x: &[f64]) -> Vec<f64> {
    let k = w.cols();
    w.data()
        .chunks_exact(k)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn rms_norm(x: &[f64]) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let s = 1.0 / (ms + RMS_EPS).sqrt();
    x.iter().map(|v| v * s).collect()
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m Model) -> Result<Self, ModelError> {
        let n = model.config.n_layers;
        let layers = (0..n)
            .map(|l| {
                Projection::PER_LAYER
                    .iter()
                    .map(|&p| merged(model, ProjectionId::layer(l, p)))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            model,
            layers,
            lm_head: merged(model, ProjectionId::head())?,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            logits: Vec::new(),
        })
    }

    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.keys.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Logits after the most recent step that asked for them.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Feeds one token. Panics if the position budget is exhausted or the
    /// token is out of range; callers validate both.
    pub fn step(&mut self, token: usize, want_logits: bool) {
        let cfg = &self.model.config;
        let pos = self.len();
        let (d, dh) = (cfg.d_model, cfg.head_dim());
        let tok = &self.model.base.tok_emb;
        let pe = &self.model.base.pos_emb;
        let mut x: Vec<f64> = (0..d).map(|r| tok.get(r, token) + pe.get(r, pos)).collect();
        let inv_sqrt = 1.0 / (dh as f64).sqrt();

        for (l, w) in self.layers.iter().enumerate() {
            let h = rms_norm(&x);
            let q = matvec(&w[0], &h);
            self.keys[l].push(matvec(&w[1], &h));
            self.values[l].push(matvec(&w[2], &h));
            let (keys, values) = (&self.keys[l], &self.values[l]);
            let mut att = vec![0.0; d];
            for hd in 0..cfg.n_heads {
                let span = hd * dh..(hd + 1) * dh;
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|k| {
                        q[span.clone()]
                            .iter()
                            .zip(&k[span.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * inv_sqrt
                    })
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = exps.iter().sum();
                for (e, v) in exps.iter().zip(values) {
                    let p = e / z;
                    for r in span.clone() {
                        att[r] += p * v[r];
                    }
                }
            }
            for (xi, oi) in x.iter_mut().zip(matvec(&w[3], &att)) {
                *xi += oi;
            }
            let h = rms_norm(&x);
            let g = matvec(&w[4], &h);
            let u = matvec(&w[5], &h);
            let a: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g * sigmoid(*g) * u).collect();
            for (xi, di) in x.iter_mut().zip(matvec(&w[6], &a)) {
                *xi += di;
            }
        }
        if want_logits {
            self.logits = matvec(&self.lm_head, &rms_norm(&x));
        }
    }
}
