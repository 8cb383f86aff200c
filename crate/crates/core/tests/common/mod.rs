#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::OnceLock;

use squid_dephasing::device::DeviceParams;
use squid_dephasing::spectrum::{calibrate_critical_current, load_or_build_table, BasisTable, FluxGrid, TableSpec};

pub const TARGET_GHZ: f64 = 0.28;

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("tables")
}

/// L = 240 pH, C = 100 fF, I_c tuned to a 0.28 GHz doublet.
pub fn calibrated() -> DeviceParams {
    static PARAMS: OnceLock<DeviceParams> = OnceLock::new();
    *PARAMS.get_or_init(|| {
        let seed = DeviceParams::from_practical(240.0, 100.0, 1.6, 0.5);
        let ic = calibrate_critical_current(&seed, &FluxGrid::default(), 2.0 * PI * TARGET_GHZ).unwrap();
        seed.with_critical_current(ic)
    })
}

/// Calibrated table covering ±6·16 µΦ₀ with ten levels, cached on disk.
pub fn default_table() -> &'static BasisTable {
    static TABLE: OnceLock<BasisTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let spec = TableSpec::for_flux_sigma(16.0, 10);
        load_or_build_table(Some(&cache_dir()), &calibrated(), &FluxGrid::default(), &spec).unwrap()
    })
}

pub fn splitting(table: &BasisTable) -> f64 {
    let e = &table.entry(table.center()).energies;
    e[1] - e[0]
}
