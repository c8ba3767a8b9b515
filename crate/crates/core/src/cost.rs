//! MAC and parameter accounting over [`ArchGraph`]s.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::backbone::{describe_hgd, ArchGraph, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::hgd::HgdConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountingConvention {
    /// Reported FLOPs per multiply-accumulate (1 or 2).
    pub flops_per_mac: u64,
    /// Count BN, ReLU, softmax and residual additions at one op per element.
    pub include_bn_relu: bool,
    /// Count pooling window reads and the four bilinear taps per output.
    pub include_pool_resize: bool,
    /// Count conv/fc bias vectors as parameters.
    pub include_bias: bool,
}

impl Default for CountingConvention {
    fn default() -> Self {
        CountingConvention {
            flops_per_mac: 1,
            include_bn_relu: false,
            include_pool_resize: false,
            include_bias: true,
        }
    }
}

impl CountingConvention {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.flops_per_mac, 1 | 2) {
            return Err(Error::Config(format!(
                "flops_per_mac must be 1 or 2, got {}",
                self.flops_per_mac
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub layer: usize,
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub per_layer: Vec<LayerCost>,
    pub total_macs: u64,
    pub total_params: u64,
    pub convention: CountingConvention,
}

impl CostReport {
    pub fn total_flops(&self) -> u64 {
        self.total_macs * self.convention.flops_per_mac
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops() as f64 / 1e9
    }

    pub fn mparams(&self) -> f64 {
        self.total_params as f64 / 1e6
    }
}

fn u(v: usize) -> u64 {
    v as u64
}

fn layer_cost(l: &LayerSpec, conv: &CountingConvention) -> (u64, u64) {
    let (kh, kw) = (u(l.kernel.0), u(l.kernel.1));
    let groups = u(l.groups.max(1));
    let bias = if l.bias && conv.include_bias { u(l.c_out) } else { 0 };
    let elems = l.out_elems();
    match l.kind {
        LayerKind::Conv => (
            u(l.c_in) * u(l.c_out) * kh * kw * u(l.out_h) * u(l.out_w) / groups,
            u(l.c_in) * u(l.c_out) * kh * kw / groups + bias,
        ),
        // Each input pixel scatters a kh x kw x c_out patch.
        LayerKind::Deconv => (
            u(l.c_in) * u(l.c_out) * kh * kw * u(l.in_h) * u(l.in_w) / groups,
            u(l.c_in) * u(l.c_out) * kh * kw / groups + bias,
        ),
        LayerKind::Fc => (u(l.c_in) * u(l.c_out), u(l.c_in) * u(l.c_out) + bias),
        LayerKind::Matmul => (u(l.c_in) * elems, 0),
        LayerKind::Bn => (if conv.include_bn_relu { elems } else { 0 }, 2 * u(l.c_out)),
        LayerKind::Relu | LayerKind::Softmax | LayerKind::Add => (if conv.include_bn_relu { elems } else { 0 }, 0),
        LayerKind::Pool => (if conv.include_pool_resize { elems * kh * kw } else { 0 }, 0),
        LayerKind::Bilinear => (if conv.include_pool_resize { 4 * elems } else { 0 }, 0),
        LayerKind::Input | LayerKind::Concat => (0, 0),
    }
}

/// Counts MACs and learnable parameters per layer. BN running statistics are
/// not parameters.
pub fn count(graph: &ArchGraph, conv: &CountingConvention) -> Result<CostReport> {
    conv.validate()?;
    graph.validate()?;
    let per_layer: Vec<LayerCost> = graph
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let (macs, params) = layer_cost(l, conv);
            LayerCost {
                layer: i,
                name: l.name.clone(),
                macs,
                params,
            }
        })
        .collect();
    Ok(CostReport {
        total_macs: per_layer.iter().map(|l| l.macs).sum(),
        total_params: per_layer.iter().map(|l| l.params).sum(),
        per_layer,
        convention: *conv,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub macs: u64,
    pub gflops: f64,
}

/// Cost of `encoder + hgd(n)` for each `n`, under `conv`.
pub fn sweep_codewords(
    ns: &[usize],
    input: (usize, usize),
    base: &HgdConfig,
    encoder: &ArchGraph,
    conv: &CountingConvention,
) -> Result<Vec<SweepRow>> {
    if ns.is_empty() {
        return Err(Error::Validation("codeword list is empty".into()));
    }
    let enc = count(encoder, conv)?;
    ns.iter()
        .map(|&n| {
            let cfg = HgdConfig {
                n_codewords: n,
                ..base.clone()
            };
            let dec = count(&describe_hgd(&cfg, input)?, conv)?;
            let macs = enc.total_macs + dec.total_macs;
            Ok(SweepRow {
                n,
                macs,
                gflops: (macs * conv.flops_per_mac) as f64 / 1e9,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub name: String,
    pub gflops: f64,
    pub mparams: f64,
    pub flops_ratio: f64,
    pub params_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub baseline: String,
    pub entries: Vec<RankedEntry>,
}

impl Ranking {
    pub fn get(&self, name: &str) -> Option<&RankedEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

impl fmt::Display for Ranking {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.entries.iter().map(|e| e.name.len()).max().unwrap_or(4).max(5);
        writeln!(
            f,
            "{:<width$}  {:>10}  {:>10}  {:>9}  {:>9}",
            "model", "GFLOPs", "Mparams", "xFLOPs", "xparams"
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "{:<width$}  {:>10.2}  {:>10.2}  {:>9.3}  {:>9.3}",
                e.name, e.gflops, e.mparams, e.flops_ratio, e.params_ratio
            )?;
        }
        write!(f, "(ratios relative to {})", self.baseline)
    }
}

/// Sorts reports by FLOPs and expresses each relative to `baseline`.
pub fn compare(reports: &[(String, CostReport)], baseline: &str) -> Result<Ranking> {
    let Some((_, first)) = reports.first() else {
        return Err(Error::Validation("no reports to compare".into()));
    };
    if let Some((name, _)) = reports.iter().find(|(_, r)| r.convention != first.convention) {
        return Err(Error::Validation(format!(
            "report '{name}' uses a different counting convention"
        )));
    }
    let base = reports
        .iter()
        .find(|(n, _)| n == baseline)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Validation(format!("baseline '{baseline}' not among reports")))?;
    let mut entries: Vec<RankedEntry> = reports
        .iter()
        .map(|(name, r)| RankedEntry {
            name: name.clone(),
            gflops: r.gflops(),
            mparams: r.mparams(),
            flops_ratio: r.total_macs as f64 / base.total_macs as f64,
            params_ratio: r.total_params as f64 / base.total_params as f64,
        })
        .collect();
    entries.sort_by(|a, b| a.gflops.total_cmp(&b.gflops));
    Ok(Ranking {
        baseline: baseline.to_string(),
        entries,
    })
}

/// Aligned per-layer table.
pub fn render_report(r: &CostReport, graph: &ArchGraph) -> String {
    let width = r.per_layer.iter().map(|l| l.name.len()).max().unwrap_or(5).max(5);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:<9}  {:>16}  {:>12}", "layer", "kind", "MACs", "params");
    for (l, spec) in r.per_layer.iter().zip(&graph.layers) {
        if l.macs == 0 && l.params == 0 {
            continue;
        }
        let kind = format!("{:?}", spec.kind).to_lowercase();
        let _ = writeln!(s, "{:<width$}  {:<9}  {:>16}  {:>12}", l.name, kind, l.macs, l.params);
    }
    let _ = write!(
        s,
        "total: {} MACs ({:.3} GFLOPs at {} FLOP/MAC), {} params ({:.3} M)",
        r.total_macs,
        r.gflops(),
        r.convention.flops_per_mac,
        r.total_params,
        r.mparams()
    );
    s
}
