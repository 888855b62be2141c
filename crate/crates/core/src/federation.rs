//! Centralized and federated training.
//!
//! Federated training is FedSGD: every round the server broadcasts θ (through
//! a noisy downlink) together with the round's dropout seed, each user
//! returns one local gradient (through a noisy uplink), and the server
//! applies the unweighted mean of the received gradients with momentum SGD.
//!
//! Normalization statistics are recomputed for every update from the
//! samples that update uses (the mini-batch, or the users' round batches
//! averaged at the server) and held constant when differentiating, so a
//! batch gradient stays the exact mean of its per-sample gradients. After
//! the last update they are recomputed over all training data for inference.
//!
//! Link noise follows `SNR_θ = 20 log10(‖v‖² / σ²)` for the transmitted
//! vector `v`, i.e. `σ² = ‖v‖² / 10^(SNR_θ / 20)` per coordinate.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::acquisition::{Dataset, Scaling};
use crate::error::{Error, Result};
use crate::nn::{draw_dropout_mask, sgd_step, BatchResult, DropoutMask, Network, Sample};
use crate::rng::{derive_seed, standard_normal, substream, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Centralized,
    Federated,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::Centralized => "centralized",
            TrainMode::Federated => "federated",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "centralized" | "cl" => Ok(TrainMode::Centralized),
            "federated" | "fl" => Ok(TrainMode::Federated),
            other => Err(format!("unknown mode `{other}` (centralized|federated)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Federated rounds, or centralized epochs.
    pub rounds: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Centralized mini-batch size.
    pub batch_size: usize,
    /// Per-user batch per federated round; `None` uses the full local set.
    pub local_batch: Option<usize>,
    /// Link SNR in dB; `+inf` disables link noise.
    pub gradient_snr_db: f64,
    /// Apply link noise to the model broadcast as well as the gradient uplink.
    pub downlink_noise: bool,
    pub dropout: bool,
    pub seed: u64,
    /// Record wall-clock time per round (makes logs non-reproducible).
    pub log_wall_time: bool,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            rounds: 100,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 128,
            local_batch: None,
            gradient_snr_db: f64::INFINITY,
            downlink_noise: true,
            dropout: true,
            seed: 0,
            log_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.local_batch == Some(0) {
            return Err(Error::invalid("batch sizes must be at least 1"));
        }
        if self.gradient_snr_db.is_nan() || self.gradient_snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("gradient SNR must be a number or +inf"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub mode: TrainMode,
    pub loss: f64,
    /// Validation RMSE in physical channel units; NaN without a validation set.
    pub val_rmse: f64,
    /// Per-user gradient norms (federated) or per-batch norms (centralized).
    pub grad_norms: Vec<f64>,
    /// Empirical uplink SNR over the round, `+inf` on noiseless links.
    pub realized_snr_db: f64,
    pub mask_seed: Option<u64>,
    pub wall_ms: u64,
}

impl RoundRecord {
    pub fn grad_norm_mean(&self) -> f64 {
        self.grad_norms.iter().sum::<f64>() / self.grad_norms.len().max(1) as f64
    }
}

pub const ROUND_LOG_COLUMNS: &str = "round,mode,loss,val_rmse,grad_norm_mean,snr_theta_db,wall_ms";

pub fn write_round_log<W: Write>(w: &mut W, records: &[RoundRecord], configured_snr_db: f64) -> std::io::Result<()> {
    writeln!(w, "{ROUND_LOG_COLUMNS}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{},{}",
            r.round,
            r.mode,
            r.loss,
            r.val_rmse,
            r.grad_norm_mean(),
            configured_snr_db,
            r.wall_ms
        )?;
    }
    Ok(())
}

/// Standardized samples of every user with their train/validation split.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub users: Vec<Vec<Sample>>,
    pub train: Vec<Vec<usize>>,
    pub val: Vec<Vec<usize>>,
    pub scaling: Scaling,
}

impl PreparedData {
    pub fn from_dataset(dataset: &Dataset, scaling: Scaling) -> Self {
        let mut users = Vec::with_capacity(dataset.users.len());
        let mut train = Vec::new();
        let mut val = Vec::new();
        for k in 0..dataset.users.len() {
            let (tr, va) = dataset.split(k);
            let samples: Vec<Sample> = tr
                .iter()
                .chain(va)
                .map(|s| {
                    let mut input = s.input_f64();
                    scaling.scale_input(&mut input);
                    Sample {
                        input,
                        label: s.label.iter().map(|&v| v as f64 / scaling.label).collect(),
                    }
                })
                .collect();
            train.push((0..tr.len()).collect());
            val.push((tr.len()..tr.len() + va.len()).collect());
            users.push(samples);
        }
        PreparedData {
            users,
            train,
            val,
            scaling,
        }
    }

    /// One user per entry, every sample used for training.
    pub fn from_samples(users: Vec<Vec<Sample>>) -> Self {
        let train = users.iter().map(|u| (0..u.len()).collect()).collect();
        let val = users.iter().map(|_| Vec::new()).collect();
        PreparedData {
            users,
            train,
            val,
            scaling: Scaling::IDENTITY,
        }
    }

    fn pooled_train(&self) -> Vec<Sample> {
        self.users
            .iter()
            .zip(&self.train)
            .flat_map(|(u, idx)| idx.iter().map(move |&i| u[i].clone()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub records: Vec<RoundRecord>,
}

/// Mean gradient of user `k`'s loss over `batch` at the received model.
pub fn local_gradient(
    network: &Network,
    theta_received: &[f64],
    local: &[Sample],
    batch: &[usize],
    mask: Option<&DropoutMask>,
) -> Result<BatchResult> {
    network.batch_gradient(theta_received, local, batch, mask)
}

/// Per-coordinate noise variance for a transmitted vector of squared norm
/// `norm_sq` at link SNR `snr_db`.
pub fn link_noise_variance(norm_sq: f64, snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid(format!("link SNR {snr_db} dB is not usable")));
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    if norm_sq == 0.0 {
        return Err(Error::DegenerateSignal(
            "cannot set a finite SNR for a zero vector".into(),
        ));
    }
    Ok(norm_sq / 10f64.powf(snr_db / 20.0))
}

fn add_link_noise<R: Rng + ?Sized>(v: &[f64], snr_db: f64, rng: &mut R) -> Result<Vec<f64>> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::NumericFailure(format!("transmitted coordinate {i} is not finite")));
    }
    let var = link_noise_variance(v.iter().map(|x| x * x).sum(), snr_db)?;
    if var == 0.0 {
        return Ok(v.to_vec());
    }
    let sd = var.sqrt();
    Ok(v.iter().map(|x| x + sd * standard_normal(rng)).collect())
}

/// Gradient as received by the server.
pub fn noisy_uplink<R: Rng + ?Sized>(g: &[f64], snr_db: f64, rng: &mut R) -> Result<Vec<f64>> {
    add_link_noise(g, snr_db, rng)
}

/// Model as received by one user.
pub fn noisy_downlink<R: Rng + ?Sized>(theta: &[f64], snr_db: f64, rng: &mut R) -> Result<Vec<f64>> {
    add_link_noise(theta, snr_db, rng)
}

/// Unweighted mean over users, summed in user order.
pub fn aggregate(gradients: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::invalid("no gradients to aggregate"))?;
    let mut sum = vec![0.0; first.len()];
    for (k, g) in gradients.iter().enumerate() {
        if g.len() != sum.len() {
            return Err(Error::invalid(format!(
                "gradient of user {k} has {} entries, expected {}",
                g.len(),
                sum.len()
            )));
        }
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    let k = gradients.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(sum)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// RMSE of the clean model on every user's validation samples, in physical
/// units.
pub fn validation_rmse(network: &Network, theta: &[f64], data: &PreparedData) -> Result<f64> {
    let inputs: Vec<(&[f64], &[f64])> = data
        .users
        .iter()
        .zip(&data.val)
        .flat_map(|(u, idx)| idx.iter().map(move |&i| (u[i].input.as_slice(), u[i].label.as_slice())))
        .collect();
    if inputs.is_empty() {
        return Ok(f64::NAN);
    }
    let xs: Vec<&[f64]> = inputs.iter().map(|(x, _)| *x).collect();
    let preds = network.predict_many(theta, &xs)?;
    let mut se = 0.0;
    let mut n = 0usize;
    for (p, (_, y)) in preds.iter().zip(&inputs) {
        se += p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        n += p.len();
    }
    Ok((se / n as f64).sqrt() * data.scaling.label)
}

fn check_loss(loss: f64, round: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NumericFailure(format!("training diverged in round {round}")));
    }
    Ok(())
}

/// Final inference statistics: every user's training set at the final θ.
fn calibrate_final(network: &mut Network, theta: &[f64], data: &PreparedData, pooled: Option<&[Sample]>) -> Result<()> {
    match pooled {
        Some(all) => {
            let idx: Vec<usize> = (0..all.len()).collect();
            network.calibrate(&[(theta, all, &idx)])
        }
        None => {
            let groups: Vec<(&[f64], &[Sample], &[usize])> = data
                .users
                .iter()
                .zip(&data.train)
                .map(|(u, idx)| (theta, u.as_slice(), idx.as_slice()))
                .collect();
            network.calibrate(&groups)
        }
    }
}

pub fn run_federated(network: Network, data: &PreparedData, config: &TrainConfig) -> Result<TrainOutcome> {
    run_federated_observed(network, data, config, |_, _| {})
}

/// [`run_federated`] calling `observe(record, θ)` after every round.
pub fn run_federated_observed(
    mut network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    mut observe: impl FnMut(&RoundRecord, &[f64]),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode != TrainMode::Federated {
        return Err(Error::invalid("run_federated needs mode = federated"));
    }
    if data.train.iter().any(Vec::is_empty) {
        return Err(Error::invalid("every user needs at least one training sample"));
    }
    let mut theta = network.init_params(config.seed);
    let mut velocity = vec![0.0; theta.len()];
    let snr = config.gradient_snr_db;
    let mut records = Vec::with_capacity(config.rounds);

    for t in 1..=config.rounds {
        let start = Instant::now();
        let mask_seed = derive_seed(config.seed, &[tag::MASK, t as u64]);
        let mask = config.dropout.then(|| draw_dropout_mask(&network.spec, mask_seed));
        let mut received_models = Vec::with_capacity(data.users.len());
        let mut batches = Vec::with_capacity(data.users.len());
        for (k, train_idx) in data.train.iter().enumerate() {
            let key = [t as u64, k as u64];
            received_models.push(if config.downlink_noise {
                noisy_downlink(&theta, snr, &mut substream(config.seed, &[tag::DOWNLINK, key[0], key[1]]))?
            } else {
                theta.clone()
            });
            batches.push(match config.local_batch {
                Some(b) if b < train_idx.len() => {
                    let mut rng = substream(config.seed, &[tag::LOCAL_BATCH, key[0], key[1]]);
                    train_idx.choose_multiple(&mut rng, b).copied().collect()
                }
                _ => train_idx.clone(),
            });
        }
        // Users report normalization moments of their round batch; the
        // server announces the averaged statistics with the round mask.
        let groups: Vec<(&[f64], &[Sample], &[usize])> = received_models
            .iter()
            .zip(&data.users)
            .zip(&batches)
            .map(|((th, u), b)| (th.as_slice(), u.as_slice(), b.as_slice()))
            .collect();
        network.calibrate(&groups)?;

        let mut received = Vec::with_capacity(data.users.len());
        let mut losses = Vec::with_capacity(data.users.len());
        let mut norms = Vec::with_capacity(data.users.len());
        let (mut sig, mut noise) = (0.0, 0.0);
        for (k, local) in data.users.iter().enumerate() {
            let local_result = local_gradient(&network, &received_models[k], local, &batches[k], mask.as_ref())?;
            check_loss(local_result.loss, t)?;
            let g_norm = norm(&local_result.grad);
            let g_rx = noisy_uplink(
                &local_result.grad,
                snr,
                &mut substream(config.seed, &[tag::UPLINK, t as u64, k as u64]),
            )?;
            sig += g_norm * g_norm;
            noise += g_rx
                .iter()
                .zip(&local_result.grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / g_rx.len() as f64;
            losses.push(local_result.loss);
            norms.push(g_norm);
            received.push(g_rx);
        }
        let update = aggregate(&received)?;
        sgd_step(&mut theta, &mut velocity, &update, config.learning_rate, config.momentum)
            .map_err(|e| Error::NumericFailure(format!("round {t}: {e}")))?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let realized_snr_db = if noise == 0.0 {
            f64::INFINITY
        } else {
            20.0 * (sig / noise).log10()
        };
        let record = RoundRecord {
            round: t,
            mode: TrainMode::Federated,
            loss,
            val_rmse: validation_rmse(&network, &theta, data)?,
            grad_norms: norms,
            realized_snr_db,
            mask_seed: mask.as_ref().map(|m| m.seed),
            wall_ms: if config.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        observe(&record, &theta);
        records.push(record);
    }
    calibrate_final(&mut network, &theta, data, None)?;
    if let Some(last) = records.last_mut() {
        last.val_rmse = validation_rmse(&network, &theta, data)?;
    }
    Ok(TrainOutcome {
        network,
        theta,
        velocity,
        records,
    })
}

pub fn run_centralized(network: Network, data: &PreparedData, config: &TrainConfig) -> Result<TrainOutcome> {
    run_centralized_observed(network, data, config, |_, _| {})
}

/// [`run_centralized`] calling `observe(record, θ)` after every epoch.
pub fn run_centralized_observed(
    mut network: Network,
    data: &PreparedData,
    config: &TrainConfig,
    mut observe: impl FnMut(&RoundRecord, &[f64]),
) -> Result<TrainOutcome> {
    config.validate()?;
    if config.mode != TrainMode::Centralized {
        return Err(Error::invalid("run_centralized needs mode = centralized"));
    }
    let pooled = data.pooled_train();
    if pooled.is_empty() {
        return Err(Error::invalid("no training samples"));
    }
    let mut theta = network.init_params(config.seed);
    let mut velocity = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let mut records = Vec::with_capacity(config.rounds);

    for epoch in 1..=config.rounds {
        let start = Instant::now();
        order.sort_unstable();
        order.shuffle(&mut substream(config.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut norms = Vec::new();
        let mut last_mask = None;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let mask = config.dropout.then(|| {
                draw_dropout_mask(
                    &network.spec,
                    derive_seed(config.seed, &[tag::MASK, epoch as u64, step as u64]),
                )
            });
            network.calibrate(&[(&theta, &pooled, batch)])?;
            let res = network.batch_gradient(&theta, &pooled, batch, mask.as_ref())?;
            check_loss(res.loss, epoch)?;
            loss_sum += res.loss * batch.len() as f64;
            norms.push(norm(&res.grad));
            sgd_step(&mut theta, &mut velocity, &res.grad, config.learning_rate, config.momentum)
                .map_err(|e| Error::NumericFailure(format!("epoch {epoch}: {e}")))?;
            last_mask = mask.map(|m| m.seed);
        }
        let record = RoundRecord {
            round: epoch,
            mode: TrainMode::Centralized,
            loss: loss_sum / pooled.len() as f64,
            val_rmse: validation_rmse(&network, &theta, data)?,
            grad_norms: norms,
            realized_snr_db: f64::INFINITY,
            mask_seed: last_mask,
            wall_ms: if config.log_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        observe(&record, &theta);
        records.push(record);
    }
    calibrate_final(&mut network, &theta, data, Some(&pooled))?;
    if let Some(last) = records.last_mut() {
        last.val_rmse = validation_rmse(&network, &theta, data)?;
    }
    Ok(TrainOutcome {
        network,
        theta,
        velocity,
        records,
    })
}

pub fn train(network: Network, data: &PreparedData, config: &TrainConfig) -> Result<TrainOutcome> {
    match config.mode {
        TrainMode::Centralized => run_centralized(network, data, config),
        TrainMode::Federated => run_federated(network, data, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkSpec;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            input_rows: 2,
            input_cols: 3,
            input_channels: 3,
            conv_layers: 2,
            filters: 3,
            kernel: (3, 3),
            fc_units: 6,
            keep_prob: 0.5,
            output_dim: 4,
        }
    }

    fn synthetic(users: usize, per_user: usize, seed: u64) -> PreparedData {
        let spec = tiny_spec();
        let mut rng = substream(seed, &[]);
        let data = (0..users)
            .map(|_| {
                (0..per_user)
                    .map(|_| {
                        let input: Vec<f64> = (0..spec.input_len()).map(|_| standard_normal(&mut rng)).collect();
                        let label = vec![input[0] + input[1], input[2] - input[3], 0.5 * input[4], input[5]];
                        Sample { input, label }
                    })
                    .collect()
            })
            .collect();
        PreparedData::from_samples(data)
    }

    #[test]
    fn local_gradient_examples() {
        let net = Network::new(tiny_spec()).unwrap();
        let theta = net.init_params(1);
        let data = synthetic(1, 8, 3);
        let local = &data.users[0];
        let one = local_gradient(&net, &theta, local, &[2], None).unwrap();
        let (_, direct) = net.backward(&theta, &local[2].input, &local[2].label, None).unwrap();
        assert_eq!(one.grad, direct);

        let full = local_gradient(&net, &theta, local, &(0..8).collect::<Vec<_>>(), None).unwrap();
        let a = local_gradient(&net, &theta, local, &[0, 1, 2, 3], None).unwrap();
        let b = local_gradient(&net, &theta, local, &[4, 5, 6, 7], None).unwrap();
        for i in 0..full.grad.len() {
            let m = 0.5 * (a.grad[i] + b.grad[i]);
            assert!((m - full.grad[i]).abs() <= 1e-12 * (1.0 + full.grad[i].abs()));
        }

        let dup = local_gradient(&net, &theta, local, &[3, 3], None).unwrap();
        let single = local_gradient(&net, &theta, local, &[3], None).unwrap();
        for (x, y) in dup.grad.iter().zip(&single.grad) {
            assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()));
        }
        assert!(local_gradient(&net, &theta, local, &[], None).is_err());
    }

    #[test]
    fn link_noise_examples() {
        let g = vec![3.0, 4.0];
        let mut rng = substream(0, &[]);
        assert_eq!(noisy_uplink(&g, f64::INFINITY, &mut rng).unwrap(), g);
        assert_eq!(link_noise_variance(100.0, 40.0).unwrap(), 1.0);
        assert!(matches!(
            noisy_uplink(&[0.0, 0.0], 10.0, &mut rng),
            Err(Error::DegenerateSignal(_))
        ));
        assert!(noisy_uplink(&g, f64::NAN, &mut rng).is_err());

        let a = noisy_downlink(&g, 10.0, &mut substream(5, &[1])).unwrap();
        let b = noisy_downlink(&g, 10.0, &mut substream(5, &[1])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, g);
    }

    #[test]
    fn link_noise_variance_monte_carlo() {
        // ‖g‖² = 1 at 0 dB → σ² = 1.
        let g = vec![0.6, 0.8];
        let mut rng = substream(1, &[]);
        let draws = 10_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let r = noisy_uplink(&g, 0.0, &mut rng).unwrap();
            acc += (r[0] - g[0]).powi(2) + (r[1] - g[1]).powi(2);
        }
        let var = acc / (2.0 * draws as f64);
        assert!((var - 1.0).abs() < 0.05, "{var}");

        let theta = vec![1.0; 16];
        let expected = link_noise_variance(16.0, 20.0).unwrap();
        let mut acc = 0.0;
        for _ in 0..draws {
            let r = noisy_downlink(&theta, 20.0, &mut rng).unwrap();
            acc += r.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / 16.0;
        }
        let var = acc / draws as f64;
        assert!((var / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn uplink_noise_independent_across_users() {
        let g = vec![1.0];
        let draws = 10_000;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for t in 0..draws {
            let a = noisy_uplink(&g, 0.0, &mut substream(3, &[tag::UPLINK, t, 0])).unwrap()[0] - 1.0;
            let b = noisy_uplink(&g, 0.0, &mut substream(3, &[tag::UPLINK, t, 1])).unwrap()[0] - 1.0;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        let corr = sab / (saa * sbb).sqrt();
        assert!(corr.abs() < 0.05, "{corr}");
    }

    #[test]
    fn aggregate_examples() {
        let g = vec![1.0, -2.0, 3.5];
        assert_eq!(aggregate(&[g.clone()]).unwrap(), g);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        assert_eq!(aggregate(&[g.clone(), neg]).unwrap(), vec![0.0; 3]);
        let h = vec![0.5, 0.5, 0.5];
        let i = vec![-1.0, 4.0, 2.0];
        let mean = aggregate(&[g.clone(), h.clone(), i.clone()]).unwrap();
        for c in 0..3 {
            assert!((mean[c] - (g[c] + h[c] + i[c]) / 3.0).abs() < 1e-15);
        }
        assert!(aggregate(&[g, vec![1.0]]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    fn fl_config(seed: u64) -> TrainConfig {
        TrainConfig {
            rounds: 5,
            learning_rate: 0.01,
            momentum: 0.0,
            dropout: false,
            seed,
            ..TrainConfig::new(TrainMode::Federated)
        }
    }

    #[test]
    fn federated_k1_matches_centralized_gd() {
        let data = synthetic(1, 12, 4);
        let net = Network::new(tiny_spec()).unwrap();
        let fl = run_federated(net.clone(), &data, &fl_config(2)).unwrap();
        let cl_cfg = TrainConfig {
            mode: TrainMode::Centralized,
            batch_size: 64,
            ..fl_config(2)
        };
        let cl = run_centralized(net, &data, &cl_cfg).unwrap();
        for (a, b) in fl.theta.iter().zip(&cl.theta) {
            assert!((a - b).abs() <= 1e-10);
        }
        for (a, b) in fl.records.iter().zip(&cl.records) {
            assert!((a.loss - b.loss).abs() <= 1e-10 * (1.0 + b.loss));
        }
    }

    #[test]
    fn rounds_and_masks() {
        let data = synthetic(2, 6, 5);
        let net = Network::new(tiny_spec()).unwrap();
        let bad = TrainConfig { rounds: 0, ..fl_config(1) };
        assert!(run_federated(net.clone(), &data, &bad).is_err());

        let one = TrainConfig { rounds: 1, ..fl_config(1) };
        let out = run_federated(net.clone(), &data, &one).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].grad_norms.len(), 2);

        let with_mask = |seed| TrainConfig {
            dropout: true,
            ..fl_config(seed)
        };
        let a = run_federated(net.clone(), &data, &with_mask(1)).unwrap();
        let b = run_federated(net.clone(), &data, &with_mask(2)).unwrap();
        assert_ne!(a.records[0].mask_seed, b.records[0].mask_seed);
        let again = run_federated(net, &data, &with_mask(1)).unwrap();
        assert_eq!(a.theta, again.theta);
    }

    #[test]
    fn aggregation_linearity_over_equal_users() {
        let data = synthetic(3, 5, 6);
        let net = Network::new(tiny_spec()).unwrap();
        let theta = net.init_params(3);
        let per_user: Vec<Vec<f64>> = data
            .users
            .iter()
            .map(|u| local_gradient(&net, &theta, u, &(0..5).collect::<Vec<_>>(), None).unwrap().grad)
            .collect();
        let agg = aggregate(&per_user).unwrap();
        let pooled = data.pooled_train();
        let full = net.batch_gradient(&theta, &pooled, &(0..15).collect::<Vec<_>>(), None).unwrap();
        let scale = full.grad.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in agg.iter().zip(&full.grad) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn centralized_zero_learning_rate_is_frozen() {
        let data = synthetic(2, 7, 8);
        let net = Network::new(tiny_spec()).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Centralized,
            rounds: 3,
            learning_rate: 0.0,
            batch_size: 4,
            ..TrainConfig::new(TrainMode::Centralized)
        };
        let out = run_centralized(net.clone(), &data, &cfg).unwrap();
        assert_eq!(out.theta, net.init_params(cfg.seed));
        assert!(run_centralized(net, &data, &fl_config(0)).is_err());
    }

    #[test]
    fn federated_is_thread_count_independent() {
        let data = synthetic(2, 10, 9);
        let net = Network::new(tiny_spec()).unwrap();
        let cfg = TrainConfig {
            gradient_snr_db: 120.0,
            dropout: true,
            momentum: 0.9,
            ..fl_config(4)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_federated(net.clone(), &data, &cfg).unwrap().theta)
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn round_log_format() {
        let rec = RoundRecord {
            round: 1,
            mode: TrainMode::Federated,
            loss: 2.0,
            val_rmse: f64::NAN,
            grad_norms: vec![1.0, 3.0],
            realized_snr_db: f64::INFINITY,
            mask_seed: None,
            wall_ms: 0,
        };
        let mut buf = Vec::new();
        write_round_log(&mut buf, &[rec], f64::INFINITY).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{ROUND_LOG_COLUMNS}\n1,federated,2e0,NaN,2e0,inf,0\n"));
    }
}
