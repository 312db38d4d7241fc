//! Bilinear scorer: `s_ui = U_u . V_i + b_u + b_i` with the latent matrices
//! themselves trainable. This is the shallow counterpart of the tower
//! model: same ranking loss, same criteria and sampler wiring, no hidden
//! layers.

use ndarray::{Array1, Array2};

use crate::criteria::PartialRelation;
use crate::error::{Error, Result};
use crate::mf::{EmbeddingTable, InteractionFrequencies};
use crate::model::{Gradients, RankingModel};
use crate::{binio, neg_log_sigmoid, sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub user_bias: Array1<f64>,
    pub item_bias: Array1<f64>,
}

impl LinearModel {
    /// Initialize from pretrained embeddings; popularity biases start at
    /// the normalized interaction frequencies, matching the tower.
    pub fn from_embeddings(emb: &EmbeddingTable, freqs: &InteractionFrequencies) -> Self {
        LinearModel {
            u: emb.u.clone(),
            v: emb.v.clone(),
            user_bias: Array1::from_vec(freqs.user.clone()),
            item_bias: Array1::from_vec(freqs.item.clone()),
        }
    }

    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    pub(crate) fn write_tensors<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_matrix(w, &self.u)?;
        binio::write_matrix(w, &self.v)?;
        binio::write_vector(w, &self.user_bias)?;
        binio::write_vector(w, &self.item_bias)
    }

    pub(crate) fn read_tensors<R: std::io::Read>(
        r: &mut R,
        d: usize,
        n: usize,
        m: usize,
    ) -> Result<LinearModel> {
        let u = binio::read_matrix(r)?;
        let v = binio::read_matrix(r)?;
        let user_bias = binio::read_vector(r)?;
        let item_bias = binio::read_vector(r)?;
        if u.dim() != (n, d) || v.dim() != (m, d) || user_bias.len() != n || item_bias.len() != m {
            return Err(Error::Incompatible("checkpoint: linear tensor shape".into()));
        }
        Ok(LinearModel {
            u,
            v,
            user_bias,
            item_bias,
        })
    }
}

impl RankingModel for LinearModel {
    fn logit(&self, user: u32, item: u32) -> f64 {
        self.u.row(user as usize).dot(&self.v.row(item as usize))
            + self.user_bias[user as usize]
            + self.item_bias[item as usize]
    }

    fn loss_and_gradients(&self, batch: &[PartialRelation], lambda: f64) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if lambda < 0.0 {
            return Err(Error::Validation("lambda must be >= 0".into()));
        }
        let mut gu = Array2::<f64>::zeros(self.u.dim());
        let mut gv = Array2::<f64>::zeros(self.v.dim());
        let mut gbu = Array1::<f64>::zeros(self.user_bias.len());
        let mut gbi = Array1::<f64>::zeros(self.item_bias.len());
        let mut loss = 0.0;
        for rel in batch {
            let (u, i, j) = (rel.user as usize, rel.higher as usize, rel.lower as usize);
            let uu = self.u.row(u);
            let z = uu.dot(&self.v.row(i)) - uu.dot(&self.v.row(j)) + self.item_bias[i]
                - self.item_bias[j];
            if !z.is_finite() {
                return Err(Error::NonFinite(format!(
                    "logit difference for (u={u}, i={i}, j={j})"
                )));
            }
            loss += neg_log_sigmoid(z);
            let g = sigmoid(z) - 1.0;
            {
                let diff = &self.v.row(i) - &self.v.row(j);
                gu.row_mut(u).scaled_add(g, &diff);
            }
            gv.row_mut(i).scaled_add(g, &uu);
            gv.row_mut(j).scaled_add(-g, &uu);
            gbi[i] += g;
            gbi[j] -= g;
            // b_u cancels in the score difference
        }
        let sq = self.u.mapv(|x| x * x).sum()
            + self.v.mapv(|x| x * x).sum()
            + self.user_bias.mapv(|x| x * x).sum()
            + self.item_bias.mapv(|x| x * x).sum();
        loss += lambda * sq;
        if lambda > 0.0 {
            let decay = 2.0 * lambda;
            gu.scaled_add(decay, &self.u);
            gv.scaled_add(decay, &self.v);
            gbu.scaled_add(decay, &self.user_bias);
            gbi.scaled_add(decay, &self.item_bias);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("linear model loss".into()));
        }
        Ok((
            loss,
            Gradients {
                tensors: vec![
                    gu.iter().copied().collect(),
                    gv.iter().copied().collect(),
                    gbu.to_vec(),
                    gbi.to_vec(),
                ],
            },
        ))
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.u.as_slice_mut().expect("contiguous"),
            self.v.as_slice_mut().expect("contiguous"),
            self.user_bias.as_slice_mut().expect("contiguous"),
            self.item_bias.as_slice_mut().expect("contiguous"),
        ]
    }

    fn param_layout(&self) -> Vec<(String, usize)> {
        vec![
            ("u".into(), self.u.len()),
            ("v".into(), self.v.len()),
            ("user_bias".into(), self.user_bias.len()),
            ("item_bias".into(), self.item_bias.len()),
        ]
    }
}
