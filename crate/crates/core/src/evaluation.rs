//! Held-out evaluation of the CNN and the classical estimators.
//!
//! Trials reuse the dataset's channel law with realization indices past the
//! training range, so test channels are never seen during training. Every
//! method at one (SNR, M̄) point sees the same noisy observations.

use rayon::prelude::*;

use crate::acquisition::{
    acquire, pilot_matrix, realization_channel, realization_link, sigma, unbuild_label, upsilon_to_input, DatasetMeta,
    Scaling,
};
use crate::baselines::{
    ls_estimate_sigma, mmse_estimate_sigma, relative_error, sample_covariance, vectorize, EstimateReport, Method,
};
use crate::channel::{CMatrix, CVector};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::{substream, tag};

/// Trained model as used at prediction time.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub network: &'a Network,
    pub theta: &'a [f64],
    pub scaling: Scaling,
}

impl Model<'_> {
    /// Channel estimate `Σ̂` from a stacked observation.
    pub fn estimate(&self, upsilon: &CMatrix, m: usize, l: usize) -> Result<CMatrix> {
        // Same f32 rounding the stored training inputs went through.
        let mut x: Vec<f64> = upsilon_to_input(upsilon).into_iter().map(|v| v as f32 as f64).collect();
        self.scaling.scale_input(&mut x);
        let mut out = self.network.forward(self.theta, &x, None)?;
        out.iter_mut().for_each(|v| *v *= self.scaling.label);
        let (h_bs, g) = unbuild_label(&out, m, l)?;
        Ok(sigma(&h_bs, &g))
    }
}

/// First realization index used for covariance estimation; far above any
/// training or test index.
pub const COVARIANCE_REALIZATION_BASE: usize = 1 << 40;

/// Sample covariance of `vec(Σ)` per user over `draws` channels generated
/// with the dataset's channel law.
pub fn channel_covariances(meta: &DatasetMeta, draws: usize) -> Result<Vec<CMatrix>> {
    if draws == 0 {
        return Err(Error::invalid("covariance needs at least one draw"));
    }
    let k_users = meta.geometry.k;
    let per_draw: Vec<Vec<CVector>> = (0..draws)
        .into_par_iter()
        .map(|i| {
            let n = COVARIANCE_REALIZATION_BASE + i;
            let link = realization_link(meta, n)?;
            (0..k_users)
                .map(|k| {
                    let ch = realization_channel(meta, &link, k, n)?;
                    Ok(vectorize(&sigma(&ch.h_bs, &ch.g)))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    (0..k_users)
        .map(|k| {
            let vs: Vec<CVector> = per_draw.iter().map(|d| d[k].clone()).collect();
            sample_covariance(&vs)
        })
        .collect()
}

pub struct Evaluator<'a> {
    pub meta: &'a DatasetMeta,
    /// Per-user `vec(Σ)` covariances; `None` skips the LMMSE rows.
    pub covariances: Option<Vec<CMatrix>>,
    pub model: Option<Model<'a>>,
    /// Report truth as the CNN prediction (method `oracle`).
    pub oracle: bool,
    pub trials: usize,
    pub seed: u64,
}

impl Evaluator<'_> {
    /// Reports at one test point: CNN (or oracle) when applicable, LS, LMMSE.
    pub fn evaluate(&self, snr_db: f64, m_bar: usize) -> Result<Vec<EstimateReport>> {
        if self.trials == 0 {
            return Err(Error::invalid("at least one trial is required"));
        }
        let g = &self.meta.geometry;
        let pilots = pilot_matrix(g.m, m_bar)?;
        let cnn = self
            .model
            .filter(|md| md.network.spec.input_cols == m_bar && !self.oracle);
        if let Some(cov) = &self.covariances {
            if cov.len() != g.k {
                return Err(Error::invalid("one covariance per user is required"));
            }
        }
        let per_trial: Vec<Vec<[f64; 3]>> = (0..self.trials)
            .into_par_iter()
            .map(|j| {
                let n = self.meta.realizations + j;
                let link = realization_link(self.meta, n)?;
                (0..g.k)
                    .map(|k| {
                        let ch = realization_channel(self.meta, &link, k, n)?;
                        let truth = sigma(&ch.h_bs, &ch.g);
                        let mut rng = substream(
                            self.seed,
                            &[tag::EVAL, snr_db.to_bits(), m_bar as u64, j as u64, k as u64],
                        );
                        let obs = acquire(&ch, &pilots, &self.meta.switch, snr_db, &mut rng)?;
                        let learned = match cnn {
                            Some(md) => relative_error(&truth, &md.estimate(&obs.upsilon, g.m, g.l)?)?,
                            None => 0.0,
                        };
                        let ls = relative_error(&truth, &ls_estimate_sigma(&obs, &pilots, &self.meta.switch)?)?;
                        let mm = match &self.covariances {
                            Some(cov) => relative_error(
                                &truth,
                                &mmse_estimate_sigma(&obs, &pilots, &self.meta.switch, &cov[k])?,
                            )?,
                            None => f64::NAN,
                        };
                        Ok([learned, ls, mm])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let column = |c: usize| -> Vec<Vec<f64>> {
            per_trial
                .iter()
                .map(|t| t.iter().map(|e| e[c]).collect())
                .collect()
        };
        let mut reports = Vec::new();
        if self.oracle {
            reports.push(EstimateReport::from_errors(Method::Oracle, &column(0))?);
        } else if cnn.is_some() {
            reports.push(EstimateReport::from_errors(Method::Cnn, &column(0))?);
        }
        reports.push(EstimateReport::from_errors(Method::Ls, &column(1))?);
        if self.covariances.is_some() {
            reports.push(EstimateReport::from_errors(Method::Lmmse, &column(2))?);
        }
        Ok(reports)
    }
}
