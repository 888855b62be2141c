//! Two-stage pilot acquisition and training-pair construction.
//!
//! Stage one switches every IRS element off and observes the direct channel;
//! stage two switches one element on per frame. Measurements are
//! `y = (h_BS + G ψ)^H S̄ + n`, a `1 × M̄` row.
//!
//! Noise variance is set per measurement from the realized signal power:
//! `σ² = P / 10^(snr/10)` with `P` the mean `|signal|²` over the `M̄` entries.
//! A measurement whose signal is identically zero uses `P = 1`. An SNR of
//! `+inf` means noiseless.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{generate_bs_irs_channel, CMatrix, CVector, ChannelRealization, SystemGeometry};
use crate::error::{Error, Result};
use crate::header::{join, split, Header};
use crate::rng::{complex_normal, substream, tag};

pub const DATASET_MAGIC: &str = "irsfl-dataset";
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotConfig {
    pub m: usize,
    pub m_bar: usize,
    pub snr_db: f64,
}

impl PilotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_bar == 0 || self.m_bar > self.m {
            return Err(Error::invalid(format!(
                "pilot count {} must lie in 1..={}",
                self.m_bar, self.m
            )));
        }
        check_snr(self.snr_db)
    }
}

/// Imperfect on/off switching: an "on" element reflects with amplitude
/// `1 - epsilon_on`, an "off" element leaks `epsilon_off`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IrsSwitchModel {
    pub epsilon_on: f64,
    pub epsilon_off: f64,
}

impl IrsSwitchModel {
    pub const IDEAL: IrsSwitchModel = IrsSwitchModel {
        epsilon_on: 0.0,
        epsilon_off: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon_on", self.epsilon_on), ("epsilon_off", self.epsilon_off)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Reflect beamformer with every element off.
    pub fn all_off(&self, l: usize) -> CVector {
        CVector::from_element(l, Complex64::new(self.epsilon_off, 0.0))
    }

    /// Reflect beamformer of frame `on`: that element on, the rest off.
    pub fn one_on(&self, l: usize, on: usize) -> CVector {
        let mut psi = self.all_off(l);
        psi[on] = Complex64::new(1.0 - self.epsilon_on, 0.0);
        psi
    }
}

/// A received `1 × M̄` pilot row and the noise variance that was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub y: CVector,
    pub noise_var: f64,
}

fn check_snr(snr_db: f64) -> Result<()> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("SNR {snr_db} dB is not usable")));
    }
    Ok(())
}

/// Noise variance giving `snr_db` relative to the mean power of `signal`.
pub fn noise_variance(signal: &[Complex64], snr_db: f64) -> Result<f64> {
    check_snr(snr_db)?;
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    let mut power = signal.iter().map(|s| s.norm_sqr()).sum::<f64>() / signal.len().max(1) as f64;
    if power == 0.0 {
        power = 1.0;
    }
    Ok(power / 10f64.powf(snr_db / 10.0))
}

/// First `m_bar` columns of the `m × m` identity.
pub fn pilot_matrix(m: usize, m_bar: usize) -> Result<CMatrix> {
    if m_bar == 0 || m_bar > m {
        return Err(Error::invalid(format!("pilot count {m_bar} must lie in 1..={m}")));
    }
    Ok(CMatrix::identity(m, m_bar))
}

/// `(h_eff^H S̄)^T`, i.e. entry `j` is `Σ_m conj(h_m) S̄[m, j]`.
fn project(h_eff: &CVector, pilots: &CMatrix) -> Result<CVector> {
    if h_eff.len() != pilots.nrows() {
        return Err(Error::invalid(format!(
            "channel has {} entries but pilots have {} rows",
            h_eff.len(),
            pilots.nrows()
        )));
    }
    Ok(pilots.tr_mul(&h_eff.conjugate()))
}

fn receive<R: Rng + ?Sized>(h_eff: &CVector, pilots: &CMatrix, snr_db: f64, rng: &mut R) -> Result<Measurement> {
    let mut y = project(h_eff, pilots)?;
    let noise_var = noise_variance(y.as_slice(), snr_db)?;
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_normal(rng, noise_var);
        }
    }
    Ok(Measurement { y, noise_var })
}

/// Direct stage with every element off and ideal switching: `h_BS^H S̄ + n`.
pub fn receive_direct<R: Rng + ?Sized>(
    h_bs: &CVector,
    pilots: &CMatrix,
    snr_db: f64,
    rng: &mut R,
) -> Result<Measurement> {
    receive(h_bs, pilots, snr_db, rng)
}

/// Direct stage including the leakage `epsilon_off` of the nominally-off
/// elements: `(h_BS + G ψ_off)^H S̄ + n`. Identical to [`receive_direct`]
/// when `epsilon_off == 0`.
pub fn receive_direct_leaky<R: Rng + ?Sized>(
    h_bs: &CVector,
    g: &CMatrix,
    pilots: &CMatrix,
    switch: &IrsSwitchModel,
    snr_db: f64,
    rng: &mut R,
) -> Result<Measurement> {
    if switch.epsilon_off == 0.0 {
        return receive_direct(h_bs, pilots, snr_db, rng);
    }
    check_dims(h_bs, g)?;
    let h_eff = h_bs + g * switch.all_off(g.ncols());
    receive(&h_eff, pilots, snr_db, rng)
}

/// Cascaded-stage frame `element`: `(h_BS + G ψ^(l))^H S̄ + n`.
pub fn receive_cascaded_frame<R: Rng + ?Sized>(
    h_bs: &CVector,
    g: &CMatrix,
    element: usize,
    pilots: &CMatrix,
    switch: &IrsSwitchModel,
    snr_db: f64,
    rng: &mut R,
) -> Result<Measurement> {
    check_dims(h_bs, g)?;
    if element >= g.ncols() {
        return Err(Error::invalid(format!(
            "IRS element {element} out of range for L = {}",
            g.ncols()
        )));
    }
    let h_eff = h_bs + g * switch.one_on(g.ncols(), element);
    receive(&h_eff, pilots, snr_db, rng)
}

fn check_dims(h_bs: &CVector, g: &CMatrix) -> Result<()> {
    if h_bs.len() != g.nrows() {
        return Err(Error::invalid(format!(
            "direct channel has {} entries but cascaded channel has {} rows",
            h_bs.len(),
            g.nrows()
        )));
    }
    Ok(())
}

/// Stacked observation `Υ = [y_D; Y_C]`, `(L+1) × M̄`, with per-row noise
/// variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub upsilon: CMatrix,
    pub noise_var: Vec<f64>,
}

impl Observation {
    pub fn direct(&self) -> CVector {
        self.upsilon.row(0).transpose()
    }

    pub fn frame(&self, element: usize) -> CVector {
        self.upsilon.row(element + 1).transpose()
    }
}

/// Runs both acquisition stages for one user.
pub fn acquire<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    pilots: &CMatrix,
    switch: &IrsSwitchModel,
    snr_db: f64,
    rng: &mut R,
) -> Result<Observation> {
    let l = channel.g.ncols();
    let mut upsilon = CMatrix::zeros(l + 1, pilots.ncols());
    let mut noise_var = Vec::with_capacity(l + 1);
    let d = receive_direct_leaky(&channel.h_bs, &channel.g, pilots, switch, snr_db, rng)?;
    upsilon.set_row(0, &d.y.transpose());
    noise_var.push(d.noise_var);
    for e in 0..l {
        let f = receive_cascaded_frame(&channel.h_bs, &channel.g, e, pilots, switch, snr_db, rng)?;
        upsilon.set_row(e + 1, &f.y.transpose());
        noise_var.push(f.noise_var);
    }
    Ok(Observation { upsilon, noise_var })
}

/// Phase in `(-π, π]`, zero for a zero entry.
pub fn phase(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Network input: slabs Re, Im, phase of `Υ`, each row-major `(L+1) × M̄`,
/// concatenated slab after slab.
pub fn build_input(y_d: &CVector, y_c: &CMatrix) -> Result<Vec<f64>> {
    if y_c.ncols() != y_d.len() {
        return Err(Error::invalid(format!(
            "direct row has {} pilots but cascaded rows have {}",
            y_d.len(),
            y_c.ncols()
        )));
    }
    let mut upsilon = CMatrix::zeros(y_c.nrows() + 1, y_d.len());
    upsilon.set_row(0, &y_d.transpose());
    upsilon.rows_mut(1, y_c.nrows()).copy_from(y_c);
    Ok(upsilon_to_input(&upsilon))
}

pub fn upsilon_to_input(upsilon: &CMatrix) -> Vec<f64> {
    let (rows, cols) = upsilon.shape();
    let plane = rows * cols;
    let mut out = vec![0.0; 3 * plane];
    for r in 0..rows {
        for c in 0..cols {
            let z = upsilon[(r, c)];
            let i = r * cols + c;
            out[i] = z.re;
            out[plane + i] = z.im;
            out[2 * plane + i] = phase(z);
        }
    }
    out
}

/// Label `[vec(Re Σ); vec(Im Σ)]` with `Σ = [h_BS | G]`, `vec` column-major.
pub fn build_label(h_bs: &CVector, g: &CMatrix) -> Result<Vec<f64>> {
    check_dims(h_bs, g)?;
    let n = h_bs.len() * (g.ncols() + 1);
    let mut out = Vec::with_capacity(2 * n);
    let entries = h_bs.iter().chain(g.iter());
    out.extend(entries.clone().map(|z| z.re));
    out.extend(entries.map(|z| z.im));
    Ok(out)
}

/// Inverse of [`build_label`].
pub fn unbuild_label(label: &[f64], m: usize, l: usize) -> Result<(CVector, CMatrix)> {
    let n = m * (l + 1);
    if label.len() != 2 * n {
        return Err(Error::invalid(format!(
            "label has {} entries, expected {}",
            label.len(),
            2 * n
        )));
    }
    let z = |i: usize| Complex64::new(label[i], label[n + i]);
    let h_bs = CVector::from_fn(m, |i, _| z(i));
    let g = CMatrix::from_fn(m, l, |r, c| z(m + c * m + r));
    Ok((h_bs, g))
}

/// `Σ = [h_BS | G]` as an `M × (L+1)` matrix.
pub fn sigma(h_bs: &CVector, g: &CMatrix) -> CMatrix {
    let mut s = CMatrix::zeros(h_bs.len(), g.ncols() + 1);
    s.set_column(0, h_bs);
    s.columns_mut(1, g.ncols()).copy_from(g);
    s
}

/// Fixed scalar standardization applied between the physical quantities and
/// the network. Values are the expected RMS of one real component, derived
/// from the channel model, so every party can compute them without data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub input: f64,
    pub label: f64,
}

impl Scaling {
    pub const IDENTITY: Scaling = Scaling { input: 1.0, label: 1.0 };

    pub fn from_geometry(geometry: &SystemGeometry) -> Self {
        let m = geometry.m as f64;
        let l = geometry.l as f64;
        // E|h_BS,m|² = M, E|G_ml|² = M L².
        let label = m * (l * l - l + 1.0) / 2.0;
        let input = (m + l * (m + m * l * l)) / (l + 1.0) / 2.0;
        Scaling {
            input: input.sqrt(),
            label: label.sqrt(),
        }
    }

    /// Scales the Re/Im slabs of a network input in place; the phase slab is
    /// left untouched.
    pub fn scale_input(&self, input: &mut [f64]) {
        let plane = input.len() / 3;
        for v in &mut input[..2 * plane] {
            *v /= self.input;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: Vec<f32>,
    pub label: Vec<f32>,
    pub user: usize,
    pub snr_db: f64,
}

impl TrainingSample {
    pub fn input_f64(&self) -> Vec<f64> {
        self.input.iter().map(|&v| v as f64).collect()
    }

    pub fn label_f64(&self) -> Vec<f64> {
        self.label.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub geometry: SystemGeometry,
    pub link: LinkMode,
    pub m_bar: usize,
    pub switch: IrsSwitchModel,
    pub snr_levels: Vec<f64>,
    /// Channel realizations per user.
    pub realizations: usize,
    /// Noisy copies per realization and SNR level.
    pub noisy_copies: usize,
    pub seed: u64,
}

impl DatasetMeta {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.switch.validate()?;
        PilotConfig {
            m: self.geometry.m,
            m_bar: self.m_bar,
            snr_db: 0.0,
        }
        .validate()?;
        if self.snr_levels.is_empty() {
            return Err(Error::invalid("at least one SNR level is required"));
        }
        for &s in &self.snr_levels {
            check_snr(s)?;
        }
        if self.realizations == 0 || self.noisy_copies == 0 {
            return Err(Error::invalid("realizations and noisy copies must be at least 1"));
        }
        Ok(())
    }

    pub fn samples_per_user(&self) -> u64 {
        self.snr_levels.len() as u64 * self.realizations as u64 * self.noisy_copies as u64
    }

    /// `|D| = |SNR levels| · K · N · G`.
    pub fn cardinality(&self) -> u64 {
        self.samples_per_user() * self.geometry.k as u64
    }

    pub fn input_len(&self) -> usize {
        3 * (self.geometry.l + 1) * self.m_bar
    }

    pub fn label_len(&self) -> usize {
        2 * self.geometry.m * (self.geometry.l + 1)
    }

    pub fn payload_bytes(&self) -> u64 {
        self.cardinality() * (self.input_len() + self.label_len()) as u64 * 4
    }

    pub fn to_header(&self) -> Header {
        let g = &self.geometry;
        let mut h = Header::new();
        h.push("format_version", DATASET_FORMAT_VERSION);
        h.push("M", g.m);
        h.push("L", g.l);
        h.push("K", g.k);
        h.push("paths_bs_irs", g.paths_bs_irs);
        h.push("paths_bs_user", g.paths_bs_user);
        h.push("paths_irs_user", g.paths_irs_user);
        h.push("angle_min", g.angle_min);
        h.push("angle_max", g.angle_max);
        h.push("bs_irs_link", self.link);
        h.push("m_bar", self.m_bar);
        h.push("epsilon_on", self.switch.epsilon_on);
        h.push("epsilon_off", self.switch.epsilon_off);
        h.push("snr_levels_db", join(&self.snr_levels));
        h.push("realizations", self.realizations);
        h.push("noisy_copies", self.noisy_copies);
        h.push("seed", self.seed);
        h.push("samples", self.cardinality());
        h.push("samples_per_user", self.samples_per_user());
        h.push("input_shape", format!("{}x{}x3", g.l + 1, self.m_bar));
        h.push("input_len", self.input_len());
        h.push("label_len", self.label_len());
        h.push("sample_order", "user,realization,snr,copy");
        h.push("payload", "f32le per sample: input (slab,row,col) then label");
        h
    }

    pub fn from_header(h: &Header) -> Result<Self> {
        let version: u32 = h.parse("format_version")?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::config("format_version", format!("unsupported version {version}")));
        }
        let geometry = SystemGeometry {
            m: h.parse("M")?,
            l: h.parse("L")?,
            k: h.parse("K")?,
            paths_bs_irs: h.parse("paths_bs_irs")?,
            paths_bs_user: h.parse("paths_bs_user")?,
            paths_irs_user: h.parse("paths_irs_user")?,
            angle_min: h.parse("angle_min")?,
            angle_max: h.parse("angle_max")?,
        };
        let meta = DatasetMeta {
            geometry,
            link: h.parse("bs_irs_link")?,
            m_bar: h.parse("m_bar")?,
            switch: IrsSwitchModel {
                epsilon_on: h.parse("epsilon_on")?,
                epsilon_off: h.parse("epsilon_off")?,
            },
            snr_levels: split("snr_levels_db", h.require("snr_levels_db")?)?,
            realizations: h.parse("realizations")?,
            noisy_copies: h.parse("noisy_copies")?,
            seed: h.parse("seed")?,
        };
        meta.validate()?;
        Ok(meta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    /// `users[k]` is the local dataset of user `k`.
    pub users: Vec<Vec<TrainingSample>>,
}

/// Fraction of each user's samples (taken from the end) held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.2;

impl Dataset {
    pub fn len(&self) -> usize {
        self.users.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Training and validation parts of user `k`'s local set.
    pub fn split(&self, user: usize) -> (&[TrainingSample], &[TrainingSample]) {
        let d = &self.users[user];
        let n_val = (d.len() as f64 * VALIDATION_FRACTION).floor() as usize;
        d.split_at(d.len() - n_val)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.meta.to_header().write_block(DATASET_MAGIC, w)?;
        for s in self.users.iter().flatten() {
            for v in s.input.iter().chain(&s.label) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let header = Header::read_block(DATASET_MAGIC, &mut r, path)?;
        let meta = DatasetMeta::from_header(&header).map_err(|e| Error::format(path, e.to_string()))?;
        let declared: u64 = header.parse("samples").map_err(|e| Error::format(path, e.to_string()))?;
        if declared != meta.cardinality() {
            return Err(Error::format(path, "sample count disagrees with counting rule"));
        }
        let (ni, nl) = (meta.input_len(), meta.label_len());
        let mut buf = vec![0u8; 4 * (ni + nl)];
        let per_user = meta.samples_per_user() as usize;
        let per_realization = meta.noisy_copies * meta.snr_levels.len();
        let mut users = Vec::with_capacity(meta.geometry.k);
        for k in 0..meta.geometry.k {
            let mut local = Vec::with_capacity(per_user);
            for i in 0..per_user {
                r.read_exact(&mut buf)
                    .map_err(|e| Error::format(path, format!("truncated payload: {e}")))?;
                let mut vals = buf
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
                let input: Vec<f32> = vals.by_ref().take(ni).collect();
                let label: Vec<f32> = vals.collect();
                let snr_idx = (i % per_realization) / meta.noisy_copies;
                local.push(TrainingSample {
                    input,
                    label,
                    user: k,
                    snr_db: meta.snr_levels[snr_idx],
                });
            }
            users.push(local);
        }
        if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(path, "trailing bytes after payload"));
        }
        Ok(Dataset { meta, users })
    }
}

/// Whether the BS–IRS channel is one fixed matrix for the whole dataset
/// (static BS and IRS) or redrawn with every realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMode {
    #[default]
    Fixed,
    Redrawn,
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkMode::Fixed => "fixed",
            LinkMode::Redrawn => "redrawn",
        })
    }
}

impl FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(LinkMode::Fixed),
            "redrawn" => Ok(LinkMode::Redrawn),
            _ => Err(Error::config("bs_irs_link", format!("expected fixed or redrawn, got {s:?}"))),
        }
    }
}

/// BS–IRS channel seen by all users in realization `n`.
pub fn realization_link(meta: &DatasetMeta, n: usize) -> Result<CMatrix> {
    let mut rng = match meta.link {
        LinkMode::Fixed => substream(meta.seed, &[tag::BS_IRS]),
        LinkMode::Redrawn => substream(meta.seed, &[tag::BS_IRS, n as u64]),
    };
    generate_bs_irs_channel(&meta.geometry, &mut rng)
}

/// Ground-truth channel of user `k` in realization `n`.
pub fn realization_channel(meta: &DatasetMeta, link: &CMatrix, k: usize, n: usize) -> Result<ChannelRealization> {
    let mut rng = substream(meta.seed, &[tag::USER_CHANNEL, k as u64, n as u64]);
    ChannelRealization::draw(&meta.geometry, k, link, &mut rng)
}

/// Generates the per-user datasets. Output is independent of the number of
/// worker threads.
pub fn generate_dataset(meta: &DatasetMeta, max_bytes: u64) -> Result<Dataset> {
    meta.validate()?;
    let bytes = meta.payload_bytes();
    if bytes > max_bytes {
        return Err(Error::DatasetTooLarge {
            samples: meta.cardinality(),
            bytes,
            limit: max_bytes,
        });
    }
    let pilots = pilot_matrix(meta.geometry.m, meta.m_bar)?;
    let links = (0..meta.realizations)
        .into_par_iter()
        .map(|n| realization_link(meta, n))
        .collect::<Result<Vec<_>>>()?;

    let k_users = meta.geometry.k;
    let jobs: Vec<(usize, usize)> = (0..k_users)
        .flat_map(|k| (0..meta.realizations).map(move |n| (k, n)))
        .collect();
    let chunks = jobs
        .par_iter()
        .map(|&(k, n)| {
            let channel = realization_channel(meta, &links[n], k, n)?;
            let label: Vec<f32> = build_label(&channel.h_bs, &channel.g)?
                .into_iter()
                .map(|v| v as f32)
                .collect();
            let mut out = Vec::with_capacity(meta.snr_levels.len() * meta.noisy_copies);
            for (si, &snr) in meta.snr_levels.iter().enumerate() {
                for rep in 0..meta.noisy_copies {
                    let mut rng = substream(
                        meta.seed,
                        &[tag::MEASUREMENT, k as u64, n as u64, si as u64, rep as u64],
                    );
                    let obs = acquire(&channel, &pilots, &meta.switch, snr, &mut rng)?;
                    out.push(TrainingSample {
                        input: upsilon_to_input(&obs.upsilon).into_iter().map(|v| v as f32).collect(),
                        label: label.clone(),
                        user: k,
                        snr_db: snr,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut users = vec![Vec::new(); k_users];
    for ((k, _), samples) in jobs.into_iter().zip(chunks) {
        users[k].extend(samples);
    }
    Ok(Dataset {
        meta: meta.clone(),
        users,
    })
}
