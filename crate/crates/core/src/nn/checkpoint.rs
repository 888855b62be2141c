//! Model checkpoint container.
//!
//! Layout: magic line, `key = value` header, blank line, then little-endian
//! `f32` payload: θ (`storage_count` values), velocity (same length),
//! normalization means (`conv_layers × filters`), normalization inverse
//! standard deviations (same shape).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Network, NetworkSpec};
use crate::acquisition::Scaling;
use crate::error::{Error, Result};
use crate::header::Header;

pub const CHECKPOINT_MAGIC: &str = "irsfl-checkpoint";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub scaling: Scaling,
    /// BS antennas and IRS elements of the data the model was trained on.
    pub m: usize,
    pub l: usize,
    /// Free-form provenance (seeds, mode, rounds).
    pub lineage: Vec<(String, String)>,
}

impl Checkpoint {
    fn header(&self) -> Header {
        let s = &self.network.spec;
        let mut h = Header::new();
        h.push("format_version", FORMAT_VERSION);
        h.push("M", self.m);
        h.push("L", self.l);
        h.push("input_rows", s.input_rows);
        h.push("input_cols", s.input_cols);
        h.push("input_channels", s.input_channels);
        h.push("conv_layers", s.conv_layers);
        h.push("filters", s.filters);
        h.push("kernel_rows", s.kernel.0);
        h.push("kernel_cols", s.kernel.1);
        h.push("fc_units", s.fc_units);
        h.push("keep_prob", s.keep_prob);
        h.push("output_dim", s.output_dim);
        h.push("storage_count", self.theta.len());
        h.push("parameter_count", s.parameter_count());
        h.push("input_scale", self.scaling.input);
        h.push("label_scale", self.scaling.label);
        for (k, v) in &self.lineage {
            h.push(&format!("lineage.{k}"), v);
        }
        h
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.header().write_block(CHECKPOINT_MAGIC, w)?;
        let norm = &self.network.norm;
        let values = self
            .theta
            .iter()
            .chain(&self.velocity)
            .chain(norm.mean.iter().flatten())
            .chain(norm.inv_std.iter().flatten());
        for v in values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let h = Header::read_block(CHECKPOINT_MAGIC, &mut r, path)?;
        let bad = |e: Error| Error::format(path, e.to_string());
        let version: u32 = h.parse("format_version").map_err(bad)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let spec = NetworkSpec {
            input_rows: h.parse("input_rows").map_err(bad)?,
            input_cols: h.parse("input_cols").map_err(bad)?,
            input_channels: h.parse("input_channels").map_err(bad)?,
            conv_layers: h.parse("conv_layers").map_err(bad)?,
            filters: h.parse("filters").map_err(bad)?,
            kernel: (h.parse("kernel_rows").map_err(bad)?, h.parse("kernel_cols").map_err(bad)?),
            fc_units: h.parse("fc_units").map_err(bad)?,
            keep_prob: h.parse("keep_prob").map_err(bad)?,
            output_dim: h.parse("output_dim").map_err(bad)?,
        };
        let mut network = Network::new(spec).map_err(bad)?;
        let p = network.storage_count();
        if h.parse::<usize>("storage_count").map_err(bad)? != p {
            return Err(Error::format(path, "storage_count does not match network spec"));
        }
        let n_norm = network.spec.conv_layers * network.spec.filters;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 4 * (2 * p + 2 * n_norm) {
            return Err(Error::format(path, format!("payload has {} bytes", bytes.len())));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let (theta, rest) = vals.split_at(p);
        let (velocity, rest) = rest.split_at(p);
        let (mean, inv_std) = rest.split_at(n_norm);
        let f = network.spec.filters;
        for layer in 0..network.spec.conv_layers {
            network.norm.mean[layer].copy_from_slice(&mean[layer * f..(layer + 1) * f]);
            network.norm.inv_std[layer].copy_from_slice(&inv_std[layer * f..(layer + 1) * f]);
        }
        let lineage = h
            .entries()
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("lineage.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Checkpoint {
            network,
            theta: theta.to_vec(),
            velocity: velocity.to_vec(),
            scaling: Scaling {
                input: h.parse("input_scale").map_err(bad)?,
                label: h.parse("label_scale").map_err(bad)?,
            },
            m: h.parse("M").map_err(bad)?,
            l: h.parse("L").map_err(bad)?,
            lineage,
        })
    }
}
