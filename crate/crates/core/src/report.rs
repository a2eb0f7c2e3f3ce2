//! Memory, access-energy and protection-cost arithmetic, plus a
//! parameter-count proxy for attack complexity.

use serde::Serialize;

use crate::compress::CompressedArtifact;
use crate::error::{ensure, Result};
use crate::svr::svr_param_count;

pub const DDR3_PJ_PER_BIT: f64 = 70.0;
pub const SRAM_PJ_PER_BIT: f64 = 0.16;
/// ECC storage overhead per protected bit.
pub const DEFAULT_ECC_OVERHEAD: f64 = 0.18;

/// Access energy per bit, in picojoules, for each memory class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyModel {
    pub ddr3_pj_per_bit: f64,
    pub sram_pj_per_bit: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            ddr3_pj_per_bit: DDR3_PJ_PER_BIT,
            sram_pj_per_bit: SRAM_PJ_PER_BIT,
        }
    }
}

impl EnergyModel {
    pub fn new(ddr3_pj_per_bit: f64, sram_pj_per_bit: f64) -> Result<EnergyModel> {
        ensure!(
            ddr3_pj_per_bit > 0.0 && sram_pj_per_bit > 0.0,
            "energy per bit must be positive"
        );
        Ok(EnergyModel {
            ddr3_pj_per_bit,
            sram_pj_per_bit,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub params: u64,
    pub bits: u32,
    pub memory_bytes: f64,
    pub memory: String,
    pub energy_ddr3_j: f64,
    pub energy_sram_j: f64,
    /// ECC cost units at [`DEFAULT_ECC_OVERHEAD`], after compression.
    pub ecc_units: f64,
    pub compression_fraction: f64,
}

/// `params * bits / 8` bytes and `params * bits * pJ/bit` joules.
pub fn estimate_memory_energy(params: u64, bits: u32, model: &EnergyModel) -> Result<CostReport> {
    ensure!(
        params >= 1 && bits >= 1,
        "params and bits must be at least 1"
    );
    let total_bits = params as f64 * bits as f64;
    let memory_bytes = total_bits / 8.0;
    Ok(CostReport {
        params,
        bits,
        memory_bytes,
        memory: format_bytes(memory_bytes),
        energy_ddr3_j: total_bits * model.ddr3_pj_per_bit * 1e-12,
        energy_sram_j: total_bits * model.sram_pj_per_bit * 1e-12,
        ecc_units: params as f64 * DEFAULT_ECC_OVERHEAD,
        compression_fraction: 0.0,
    })
}

impl CostReport {
    /// Same model with `fraction` of its weights compressed away.
    pub fn compressed(&self, fraction: f64) -> Result<CostReport> {
        let (_, ecc) = ecc_cost(self.params, DEFAULT_ECC_OVERHEAD, fraction)?;
        let keep = 1.0 - fraction;
        let memory_bytes = self.memory_bytes * keep;
        Ok(CostReport {
            memory_bytes,
            memory: format_bytes(memory_bytes),
            energy_ddr3_j: self.energy_ddr3_j * keep,
            energy_sram_j: self.energy_sram_j * keep,
            ecc_units: ecc,
            compression_fraction: fraction,
            ..self.clone()
        })
    }
}

/// `(n * rate, n * rate * (1 - fraction))`.
pub fn ecc_cost(
    n_weights: u64,
    overhead_rate: f64,
    compression_fraction: f64,
) -> Result<(f64, f64)> {
    ensure!(overhead_rate > 0.0, "overhead rate must be positive");
    ensure!(
        (0.0..1.0).contains(&compression_fraction),
        "compression fraction must lie in [0, 1)"
    );
    let original = n_weights as f64 * overhead_rate;
    Ok((original, original * (1.0 - compression_fraction)))
}

/// Decimal units: whole numbers print bare, others with two decimals.
pub fn format_bytes(bytes: f64) -> String {
    const UNITS: [(&str, f64); 5] = [
        ("TB", 1e12),
        ("GB", 1e9),
        ("MB", 1e6),
        ("kB", 1e3),
        ("B", 1.0),
    ];
    let (unit, scale) = UNITS
        .iter()
        .copied()
        .find(|&(_, s)| bytes >= s)
        .unwrap_or(("B", 1.0));
    let v = bytes / scale;
    if (v - v.round()).abs() < 1e-9 {
        format!("{} {unit}", v.round())
    } else {
        format!("{v:.2} {unit}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerComplexity {
    pub layer: usize,
    /// Stored PCA parameters (means and components).
    pub c_pca: usize,
    /// Total SVR parameters; at least 1 so SVR-free layers still count.
    pub c_svr: usize,
}

/// A proxy, not a measured attack cost: per compressed layer the product of
/// stored PCA and SVR parameter counts, multiplied across layers and
/// reported as a natural log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexityProxy {
    pub log_value: f64,
    pub layers: Vec<LayerComplexity>,
}

pub fn attack_complexity_proxy(artifact: &CompressedArtifact) -> Option<ComplexityProxy> {
    use crate::compress::LayerStore;
    let layers: Vec<LayerComplexity> = artifact
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.store.is_compressed())
        .map(|(i, l)| {
            let mut c_pca = l.store.basis().map_or(0, |b| b.param_count());
            if let LayerStore::CrossPredicted {
                incoming: Some(b), ..
            } = &l.store
            {
                c_pca += b.param_count();
            }
            let c_svr = l
                .store
                .svrs()
                .iter()
                .map(svr_param_count)
                .sum::<usize>()
                .max(1);
            LayerComplexity {
                layer: i,
                c_pca,
                c_svr,
            }
        })
        .collect();
    if layers.is_empty() {
        return None;
    }
    let log_value = layers
        .iter()
        .map(|l| (l.c_pca as f64).ln() + (l.c_svr as f64).ln())
        .sum();
    Some(ComplexityProxy { log_value, layers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{compress_fcn, FcnOptions};
    use crate::model::Model;

    #[test]
    fn unit_arithmetic() {
        let r = estimate_memory_energy(1_000_000_000, 1, &EnergyModel::default()).unwrap();
        assert!((r.energy_ddr3_j - 0.07).abs() < 1e-15);
        assert_eq!(r.memory, "125 MB");
        assert!(estimate_memory_energy(0, 32, &EnergyModel::default()).is_err());
        assert!(EnergyModel::new(0.0, 1.0).is_err());
    }

    #[test]
    fn sizes() {
        assert_eq!(format_bytes(440e6), "440 MB");
        assert_eq!(format_bytes(1.36e9), "1.36 GB");
        assert_eq!(format_bytes(52e9), "52 GB");
        assert_eq!(format_bytes(12.0), "12 B");
        assert_eq!(format_bytes(1500.0), "1.50 kB");
    }

    #[test]
    fn ecc() {
        let (o, c) = ecc_cost(1000, 0.18, 0.0).unwrap();
        assert_eq!(o, c);
        assert!(ecc_cost(1000, 0.18, 1.0).is_err());
        assert!(ecc_cost(1000, 0.0, 0.5).is_err());
        let r = estimate_memory_energy(1000, 32, &EnergyModel::default()).unwrap();
        let half = r.compressed(0.5).unwrap();
        assert!((half.energy_ddr3_j - r.energy_ddr3_j / 2.0).abs() < 1e-18);
        assert!((half.ecc_units - 90.0).abs() < 1e-9);
    }

    #[test]
    fn proxy_sums_log_products() {
        let m = Model::mlp(&[12, 10, 8, 4], 5).unwrap();
        let opts = FcnOptions {
            raw_fallback: false,
            ..Default::default()
        };
        let (art, _) = compress_fcn(&m, &opts).unwrap();
        let p = attack_complexity_proxy(&art).unwrap();
        assert_eq!(p.layers.len(), 3);
        let expect: f64 = p
            .layers
            .iter()
            .map(|l| ((l.c_pca * l.c_svr) as f64).ln())
            .sum();
        assert!((p.log_value - expect).abs() < 1e-9);
        // fewer compressed layers, smaller proxy
        let (short, _) = compress_fcn(
            &m,
            &FcnOptions {
                keep_last_raw: true,
                ..opts
            },
        )
        .unwrap();
        assert!(attack_complexity_proxy(&short).unwrap().log_value < p.log_value);
    }
}
