//! Subcommand implementations behind the `irsfl` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::acquisition::{generate_dataset, Dataset, DatasetMeta, Scaling};
use crate::baselines::{overhead_cl, overhead_fl, EstimateReport, OverheadReport};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::evaluation::{channel_covariances, Evaluator, Model};
use crate::federation::{train, write_round_log, PreparedData, RoundRecord};
use crate::nn::{Checkpoint, Network};

pub const RESULTS_COLUMNS: &str = "method,snr_db,m_bar,nmse,trials,seed";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    ensure_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Fails on the first dataset field that disagrees with the config.
pub fn check_compatible(cfg: &ExperimentConfig, meta: &DatasetMeta) -> Result<()> {
    let want = cfg.dataset_meta().to_header();
    let have = meta.to_header();
    for key in [
        "M",
        "L",
        "K",
        "paths_bs_irs",
        "paths_bs_user",
        "paths_irs_user",
        "angle_min",
        "angle_max",
        "bs_irs_link",
        "m_bar",
        "epsilon_on",
        "epsilon_off",
        "snr_levels_db",
        "realizations",
        "noisy_copies",
    ] {
        let (c, d) = (want.get(key).unwrap_or(""), have.get(key).unwrap_or(""));
        if c != d {
            return Err(Error::ConfigDatasetConflict {
                key: key.to_string(),
                config: c.to_string(),
                dataset: d.to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub samples: usize,
    pub per_user: Vec<usize>,
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<GenerateSummary> {
    cfg.validate()?;
    let ds = generate_dataset(&cfg.dataset_meta(), cfg.max_dataset_bytes)?;
    ensure_parent(&cfg.dataset)?;
    ds.write(&cfg.dataset)?;
    Ok(GenerateSummary {
        samples: ds.len(),
        per_user: ds.users.iter().map(Vec::len).collect(),
    })
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = Dataset::read(&cfg.dataset)?;
    check_compatible(cfg, &ds.meta)?;
    Ok(ds)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let scaling = Scaling::from_geometry(&ds.meta.geometry);
    let data = PreparedData::from_dataset(&ds, scaling);
    let tc = cfg.train_config();
    let outcome = train(Network::new(cfg.network_spec())?, &data, &tc)?;
    let ckpt = Checkpoint {
        network: outcome.network,
        theta: outcome.theta,
        velocity: outcome.velocity,
        scaling,
        m: ds.meta.geometry.m,
        l: ds.meta.geometry.l,
        lineage: vec![
            ("mode".into(), tc.mode.to_string()),
            ("rounds".into(), tc.rounds.to_string()),
            ("seed".into(), tc.seed.to_string()),
            ("dataset_seed".into(), ds.meta.seed.to_string()),
            ("dataset_samples".into(), ds.len().to_string()),
            ("gradient_snr_db".into(), tc.gradient_snr_db.to_string()),
        ],
    };
    ensure_parent(&cfg.checkpoint)?;
    ckpt.write(&cfg.checkpoint)?;
    write_file(&cfg.train_log, |w| {
        w.write_all(cfg.echo().as_bytes())?;
        write_round_log(w, &outcome.records, tc.gradient_snr_db)
    })?;
    Ok(outcome.records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub snr_db: f64,
    pub m_bar: usize,
    pub report: EstimateReport,
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, oracle: bool) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let ds = load_dataset(cfg)?;
    let ckpt = Checkpoint::read(&cfg.checkpoint)?;
    for (key, c, k) in [
        ("M", cfg.geometry.m, ckpt.m),
        ("L", cfg.geometry.l, ckpt.l),
        ("m_bar", cfg.m_bar, ckpt.network.spec.input_cols),
    ] {
        if c != k {
            return Err(Error::ConfigDatasetConflict {
                key: key.into(),
                config: c.to_string(),
                dataset: format!("{k} (checkpoint)"),
            });
        }
    }
    let evaluator = Evaluator {
        meta: &ds.meta,
        covariances: Some(channel_covariances(&ds.meta, cfg.covariance_draws)?),
        model: Some(Model {
            network: &ckpt.network,
            theta: &ckpt.theta,
            scaling: ckpt.scaling,
        }),
        oracle,
        trials: cfg.trials,
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    for &m_bar in &cfg.eval_m_bar {
        for &snr_db in &cfg.eval_snr_db {
            for report in evaluator.evaluate(snr_db, m_bar)? {
                rows.push(ResultRow { snr_db, m_bar, report });
            }
        }
    }
    write_file(&cfg.results, |w| {
        w.write_all(cfg.echo().as_bytes())?;
        writeln!(w, "{RESULTS_COLUMNS}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{:e},{},{}",
                r.report.method, r.snr_db, r.m_bar, r.report.nmse, r.report.trials, cfg.seed
            )?;
        }
        Ok(())
    })?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadSummary {
    pub report: OverheadReport,
    pub storage_count: usize,
    pub samples: u64,
}

pub fn cmd_overhead(cfg: &ExperimentConfig) -> Result<OverheadSummary> {
    cfg.validate()?;
    let spec = cfg.network_spec();
    let p = spec.parameter_count();
    let samples = cfg.dataset_meta().cardinality();
    let g = &cfg.geometry;
    let t_cl = overhead_cl(cfg.m_bar as u64, g.m as u64, g.l as u64, samples)?;
    let t_fl = overhead_fl(p, cfg.train.rounds as u64, g.k as u64)?;
    let summary = OverheadSummary {
        report: OverheadReport::new(t_cl, t_fl, p),
        storage_count: spec.storage_count(),
        samples,
    };
    write_file(&cfg.overhead, |w| {
        w.write_all(cfg.echo().as_bytes())?;
        writeln!(w, "parameters,storage_count,samples,t_cl,t_fl,ratio")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p, summary.storage_count, samples, t_cl, t_fl, summary.report.ratio
        )
    })?;
    Ok(summary)
}
