//! Classical estimators, NMSE and transmission-overhead accounting.
//!
//! Received rows follow `y = h^H S̄ + n`, so `conj(y) = S̄^H h + conj(n)`;
//! every estimator below solves that conjugated form.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::acquisition::{IrsSwitchModel, Observation};
use crate::channel::{CMatrix, CVector};
use crate::error::{Error, Result};

const PINV_EPS: f64 = 1e-12;

fn check_pilots(y: &CVector, pilots: &CMatrix) -> Result<()> {
    if y.len() != pilots.ncols() {
        return Err(Error::invalid(format!(
            "observation has {} entries but pilots have {} columns",
            y.len(),
            pilots.ncols()
        )));
    }
    Ok(())
}

fn pinv(a: &CMatrix) -> Result<CMatrix> {
    a.clone()
        .pseudo_inverse(PINV_EPS)
        .map_err(|e| Error::NumericFailure(format!("pseudo-inverse failed: {e}")))
}

/// Minimum-norm least-squares channel from one received row.
pub fn ls_estimate(y: &CVector, pilots: &CMatrix) -> Result<CVector> {
    check_pilots(y, pilots)?;
    Ok(pinv(&pilots.adjoint())? * y.conjugate())
}

/// Hermitian check relative to the largest entry.
fn check_hermitian(r: &CMatrix) -> Result<()> {
    if !r.is_square() {
        return Err(Error::invalid("covariance must be square"));
    }
    let scale = r.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let skew = (r - r.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if skew > 1e-9 * scale {
        return Err(Error::invalid(format!("covariance is not Hermitian (skew {skew:e})")));
    }
    Ok(())
}

/// Linear MMSE estimate of `x` from `z = A x + n` with prior covariance `r`
/// and independent noise of variance `noise_var[i]` on row `i`:
/// `x̂ = R A^H (A R A^H + diag(σ²))^{-1} z`.
pub fn lmmse(z: &CVector, a: &CMatrix, r: &CMatrix, noise_var: &[f64]) -> Result<CVector> {
    check_hermitian(r)?;
    if a.ncols() != r.nrows() || a.nrows() != z.len() || noise_var.len() != z.len() {
        return Err(Error::invalid("LMMSE dimensions disagree"));
    }
    if noise_var.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::invalid("noise variance must be non-negative"));
    }
    if noise_var.iter().all(|v| v.is_infinite()) {
        return Ok(CVector::zeros(r.nrows()));
    }
    let ra = r * a.adjoint();
    let mut c = a * &ra;
    for (i, v) in noise_var.iter().enumerate() {
        c[(i, i)] += Complex64::new(v.min(f64::MAX.sqrt()), 0.0);
    }
    let w = match c.clone().cholesky() {
        Some(ch) => ch.solve(z),
        None => pinv(&c)? * z,
    };
    Ok(ra * w)
}

/// Linear MMSE channel from one received row, given channel covariance `r`.
pub fn mmse_estimate(y: &CVector, pilots: &CMatrix, r: &CMatrix, noise_var: f64) -> Result<CVector> {
    check_pilots(y, pilots)?;
    if r.nrows() != pilots.nrows() {
        return Err(Error::invalid("covariance size must match the pilot rows"));
    }
    lmmse(&y.conjugate(), &pilots.adjoint(), r, &vec![noise_var; y.len()])
}

/// Second-moment matrix `(1/N) Σ v v^H` of zero-mean samples.
pub fn sample_covariance(samples: &[CVector]) -> Result<CMatrix> {
    let first = samples.first().ok_or_else(|| Error::invalid("no samples for the covariance"))?;
    let n = first.len();
    let mut r = CMatrix::zeros(n, n);
    for v in samples {
        if v.len() != n {
            return Err(Error::invalid("covariance samples have unequal lengths"));
        }
        r.ger(Complex64::new(1.0, 0.0), v, &v.conjugate(), Complex64::new(1.0, 0.0));
    }
    Ok(r / Complex64::new(samples.len() as f64, 0.0))
}

/// Column-major `vec(Σ)`.
pub fn vectorize(sigma: &CMatrix) -> CVector {
    CVector::from_column_slice(sigma.as_slice())
}

/// Mixing matrix `Ψ` with `[h_eff_0 … h_eff_L] = Σ Ψ`: column 0 is the
/// all-off frame, column `e + 1` has element `e` on.
pub fn frame_mixing(l: usize, switch: &IrsSwitchModel) -> DMatrix<f64> {
    let mut psi = DMatrix::from_element(l + 1, l + 1, switch.epsilon_off);
    psi.row_mut(0).fill(1.0);
    for e in 0..l {
        psi[(e + 1, e + 1)] = 1.0 - switch.epsilon_on;
    }
    psi
}

fn frame_rows(obs: &Observation, pilots: &CMatrix) -> Result<Vec<CVector>> {
    (0..obs.upsilon.nrows())
        .map(|f| {
            let y = obs.upsilon.row(f).transpose();
            check_pilots(&y, pilots)?;
            Ok(y)
        })
        .collect()
}

/// LS estimate of `Σ = [h_BS | G]`: each frame's effective channel by LS,
/// then the switch mixing is undone (for ideal switches this subtracts the
/// direct estimate from every cascaded frame).
pub fn ls_estimate_sigma(obs: &Observation, pilots: &CMatrix, switch: &IrsSwitchModel) -> Result<CMatrix> {
    let rows = frame_rows(obs, pilots)?;
    let l = rows.len() - 1;
    let back = pinv(&pilots.adjoint())?;
    let mut u = CMatrix::zeros(pilots.nrows(), l + 1);
    for (f, y) in rows.iter().enumerate() {
        u.set_column(f, &(&back * y.conjugate()));
    }
    let psi_inv = frame_mixing(l, switch)
        .try_inverse()
        .ok_or_else(|| Error::NumericFailure("switch mixing is singular".into()))?;
    Ok(u * psi_inv.map(|v| Complex64::new(v, 0.0)))
}

/// Stacked observation operator mapping `vec(Σ)` to the conjugated rows.
pub fn sigma_operator(pilots: &CMatrix, l: usize, switch: &IrsSwitchModel) -> CMatrix {
    let psi = frame_mixing(l, switch);
    let (m, m_bar) = pilots.shape();
    let sh = pilots.adjoint();
    let mut a = CMatrix::zeros((l + 1) * m_bar, (l + 1) * m);
    for f in 0..=l {
        for c in 0..=l {
            let w = psi[(c, f)];
            if w != 0.0 {
                a.view_mut((f * m_bar, c * m), (m_bar, m))
                    .copy_from(&(&sh * Complex64::new(w, 0.0)));
            }
        }
    }
    a
}

/// Joint LMMSE estimate of `Σ` given the covariance of `vec(Σ)`.
pub fn mmse_estimate_sigma(
    obs: &Observation,
    pilots: &CMatrix,
    switch: &IrsSwitchModel,
    r_sigma: &CMatrix,
) -> Result<CMatrix> {
    let rows = frame_rows(obs, pilots)?;
    let l = rows.len() - 1;
    let m = pilots.nrows();
    let m_bar = pilots.ncols();
    let z = CVector::from_iterator(rows.len() * m_bar, rows.iter().flat_map(|y| y.iter().map(|v| v.conj())));
    let noise: Vec<f64> = obs.noise_var.iter().flat_map(|&v| std::iter::repeat_n(v, m_bar)).collect();
    if noise.len() != z.len() {
        return Err(Error::invalid("one noise variance per frame is required"));
    }
    let x = lmmse(&z, &sigma_operator(pilots, l, switch), r_sigma, &noise)?;
    Ok(CMatrix::from_column_slice(m, l + 1, x.as_slice()))
}

/// `‖Σ − Σ̂‖²_F / ‖Σ‖²_F`.
pub fn relative_error(truth: &CMatrix, estimate: &CMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::invalid("truth and estimate shapes differ"));
    }
    let energy = truth.norm_squared();
    if energy == 0.0 {
        return Err(Error::UndefinedMetric("truth has zero norm".into()));
    }
    Ok((truth - estimate).norm_squared() / energy)
}

/// Mean relative error over all trial/user pairs.
pub fn nmse(truth: &[CMatrix], estimates: &[CMatrix]) -> Result<f64> {
    if truth.len() != estimates.len() {
        return Err(Error::invalid("truth and estimate counts differ"));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("no trials".into()));
    }
    let mut sum = 0.0;
    for (t, e) in truth.iter().zip(estimates) {
        sum += relative_error(t, e)?;
    }
    Ok(sum / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cnn,
    Ls,
    Lmmse,
    Oracle,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cnn => "cnn",
            Method::Ls => "ls",
            Method::Lmmse => "lmmse",
            Method::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub nmse: f64,
    pub per_user: Vec<f64>,
    pub trials: usize,
}

impl EstimateReport {
    /// `errors[trial][user]` relative errors.
    pub fn from_errors(method: Method, errors: &[Vec<f64>]) -> Result<Self> {
        let users = errors.first().map_or(0, Vec::len);
        if users == 0 || errors.iter().any(|t| t.len() != users) {
            return Err(Error::UndefinedMetric("empty or ragged error table".into()));
        }
        let mut per_user = vec![0.0; users];
        for t in errors {
            for (p, e) in per_user.iter_mut().zip(t) {
                *p += e;
            }
        }
        let trials = errors.len();
        per_user.iter_mut().for_each(|p| *p /= trials as f64);
        Ok(EstimateReport {
            method,
            nmse: per_user.iter().sum::<f64>() / users as f64,
            per_user,
            trials,
        })
    }
}

fn checked(parts: &[u64]) -> Result<u64> {
    parts
        .iter()
        .try_fold(1u64, |acc, &p| acc.checked_mul(p))
        .ok_or_else(|| Error::invalid("overhead overflows 64 bits"))
}

/// Symbols sent to the server when users upload their datasets:
/// `(3 M̄ (L+1) + 2 M (L+1)) · D`.
pub fn overhead_cl(m_bar: u64, m: u64, l: u64, samples: u64) -> Result<u64> {
    let frames = l + 1;
    let per = checked(&[3, m_bar, frames])?
        .checked_add(checked(&[2, m, frames])?)
        .ok_or_else(|| Error::invalid("overhead overflows 64 bits"))?;
    checked(&[per, samples])
}

/// Symbols exchanged by federated training: `2 P T K`.
pub fn overhead_fl(parameters: u64, rounds: u64, users: u64) -> Result<u64> {
    if rounds == 0 {
        return Err(Error::invalid("rounds must be at least 1"));
    }
    checked(&[2, parameters, rounds, users])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    pub t_cl: u64,
    pub t_fl: u64,
    pub parameters: u64,
    pub ratio: f64,
}

impl OverheadReport {
    pub fn new(t_cl: u64, t_fl: u64, parameters: u64) -> Self {
        OverheadReport {
            t_cl,
            t_fl,
            parameters,
            ratio: t_cl as f64 / t_fl as f64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::{acquire, pilot_matrix};
    use crate::channel::{ChannelRealization, SystemGeometry};
    use crate::rng::{complex_normal, substream};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn observe(h: &CVector, s: &CMatrix) -> CVector {
        s.tr_mul(&h.conjugate())
    }

    fn random_vec(n: usize, seed: u64) -> CVector {
        let mut rng = substream(seed, &[]);
        CVector::from_fn(n, |_, _| complex_normal(&mut rng, 1.0))
    }

    #[test]
    fn ls_identity_pilots() {
        let h = random_vec(6, 1);
        let s = pilot_matrix(6, 6).unwrap();
        let est = ls_estimate(&observe(&h, &s), &s).unwrap();
        assert!((est - &h).norm() < 1e-14);

        let s = pilot_matrix(6, 3).unwrap();
        let est = ls_estimate(&observe(&h, &s), &s).unwrap();
        for i in 0..3 {
            assert!((est[i] - h[i]).norm() < 1e-14);
        }
        for i in 3..6 {
            assert_eq!(est[i], c(0.0, 0.0));
        }
    }

    #[test]
    fn ls_random_pilots() {
        let mut rng = substream(2, &[]);
        let s = CMatrix::from_fn(8, 8, |_, _| complex_normal(&mut rng, 1.0));
        let h = random_vec(8, 3);
        let est = ls_estimate(&observe(&h, &s), &s).unwrap();
        // Oracle: direct solve of S^H h = conj(y).
        let direct = s.adjoint().lu().solve(&observe(&h, &s).conjugate()).unwrap();
        assert!((&est - &h).norm() / h.norm() < 1e-10);
        assert!((est - direct).norm() / h.norm() < 1e-10);
    }

    #[test]
    fn mmse_limits() {
        let h = random_vec(5, 4);
        let s = pilot_matrix(5, 5).unwrap();
        let y = observe(&h, &s);
        let r = CMatrix::identity(5, 5);
        let ls = ls_estimate(&y, &s).unwrap();
        let mm = mmse_estimate(&y, &s, &r, 1e-12).unwrap();
        assert!((ls - mm).norm() < 1e-8);
        let far = mmse_estimate(&y, &s, &r, 1e12).unwrap();
        assert!(far.norm() < 1e-10);
        assert_eq!(mmse_estimate(&y, &s, &r, f64::INFINITY).unwrap().norm(), 0.0);

        let mut bad = r.clone();
        bad[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(mmse_estimate(&y, &s, &bad, 0.1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn mmse_beats_ls_on_generated_channels() {
        let geometry = SystemGeometry::new(8, 2, 1);
        let mut rng = substream(5, &[]);
        let link = crate::channel::generate_bs_irs_channel(&geometry, &mut rng).unwrap();
        let draw = |rng: &mut _| ChannelRealization::draw(&geometry, 0, &link, rng).unwrap().h_bs;
        let train: Vec<CVector> = (0..10_000).map(|_| draw(&mut rng)).collect();
        let r = sample_covariance(&train).unwrap();
        let s = pilot_matrix(8, 8).unwrap();
        let (mut ls_sum, mut mm_sum) = (0.0, 0.0);
        for _ in 0..1000 {
            let h = draw(&mut rng);
            let meas = crate::acquisition::receive_direct(&h, &s, 20.0, &mut rng).unwrap();
            let ls = ls_estimate(&meas.y, &s).unwrap();
            let mm = mmse_estimate(&meas.y, &s, &r, meas.noise_var).unwrap();
            ls_sum += (ls - &h).norm_squared() / h.norm_squared();
            mm_sum += (mm - &h).norm_squared() / h.norm_squared();
        }
        assert!(mm_sum <= ls_sum, "{mm_sum} > {ls_sum}");
    }

    #[test]
    fn sigma_estimators_noiseless() {
        let geometry = SystemGeometry::new(4, 3, 1);
        let mut rng = substream(6, &[]);
        let link = crate::channel::generate_bs_irs_channel(&geometry, &mut rng).unwrap();
        let ch = ChannelRealization::draw(&geometry, 0, &link, &mut rng).unwrap();
        let truth = crate::acquisition::sigma(&ch.h_bs, &ch.g);
        let s = pilot_matrix(4, 4).unwrap();
        for switch in [IrsSwitchModel::IDEAL, IrsSwitchModel { epsilon_on: 0.1, epsilon_off: 0.05 }] {
            let obs = acquire(&ch, &s, &switch, f64::INFINITY, &mut rng).unwrap();
            let est = ls_estimate_sigma(&obs, &s, &switch).unwrap();
            assert!(relative_error(&truth, &est).unwrap() < 1e-20);

            // Operator consistency: A vec(Σ) reproduces the conjugated rows.
            let a = sigma_operator(&s, 3, &switch);
            let z = a * vectorize(&truth);
            for f in 0..4 {
                for j in 0..4 {
                    assert!((z[f * 4 + j] - obs.upsilon[(f, j)].conj()).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nmse_examples() {
        let t = vec![CMatrix::from_element(2, 2, c(1.0, -1.0)), CMatrix::identity(2, 3)];
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        let zero: Vec<CMatrix> = t.iter().map(|m| m * c(0.0, 0.0)).collect();
        assert_eq!(nmse(&t, &zero).unwrap(), 1.0);
        let twice: Vec<CMatrix> = t.iter().map(|m| m * c(2.0, 0.0)).collect();
        assert_eq!(nmse(&t, &twice).unwrap(), 1.0);
        assert!(matches!(nmse(&zero, &t), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn report_mean() {
        let rep = EstimateReport::from_errors(Method::Ls, &[vec![0.1, 0.3], vec![0.3, 0.5]]).unwrap();
        assert_eq!(rep.trials, 2);
        assert!((rep.nmse - 0.3).abs() < 1e-15);
        assert_eq!(rep.per_user.len(), 2);
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(overhead_cl(32, 64, 64, 768_000).unwrap(), 11_182_080_000);
        assert_eq!(overhead_cl(32, 64, 64, 0).unwrap(), 0);
        assert_eq!(overhead_cl(1, 1, 0, 1).unwrap(), 5);
        assert_eq!(overhead_fl(600_192, 100, 8).unwrap(), 960_307_200);
        assert_eq!(overhead_fl(1, 1, 1).unwrap(), 2);
        assert!(overhead_fl(1, 0, 1).is_err());
        let rep = OverheadReport::new(11_182_080_000, 960_307_200, 600_192);
        assert!((rep.ratio - 11.644).abs() < 1e-3);
        assert!(overhead_fl(u64::MAX, 2, 1).is_err());
    }
}
