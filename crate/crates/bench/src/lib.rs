//! Benchmark fixtures shared by the criterion benches.

use annet_core::{BlockAffinity, PlantedInstance, PlantedParams};

/// Two-group planted instance with mean degree 8 and the given `c_in - c_out`.
pub fn planted(n: usize, diff: f64, seed: u64) -> PlantedInstance {
    PlantedInstance::generate(PlantedParams {
        n,
        k: 2,
        c_in: 8.0 + diff / 2.0,
        c_out: 8.0 - diff / 2.0,
        match_rate: 0.7,
        seed,
    })
    .expect("valid planted parameters")
}

/// Assortative affinity at the scale of the instance's edge density.
pub fn affinity(inst: &PlantedInstance, k: usize) -> BlockAffinity {
    let m = inst.graph.edge_count() as f64;
    BlockAffinity::assortative(k, 1.0 / (2.0 * m), 3.0)
}
