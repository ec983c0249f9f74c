use rayon::prelude::*;

use super::{run, Combo, ConfigError, SimConfig};
use crate::metrics::RunReport;

/// One (combo, load) cell of a sweep.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub combo: Combo,
    pub load: f64,
    pub result: Result<RunReport, ConfigError>,
}

/// Runs every (combo, load) pair on copies of `base` whose sources are
/// rescaled to the requested offered load. Cells run in parallel; the output
/// is ordered combo-major, load-minor, as given. A failing cell does not stop
/// the others.
pub fn sweep(base: &SimConfig, loads: &[f64], combos: &[Combo]) -> Vec<SweepCell> {
    let cells: Vec<(Combo, f64)> = combos
        .iter()
        .flat_map(|&c| loads.iter().map(move |&l| (c, l)))
        .collect();
    cells
        .into_par_iter()
        .map(|(combo, load)| {
            let result = cell_config(base, combo, load).and_then(|cfg| run(&cfg));
            SweepCell { combo, load, result }
        })
        .collect()
}

fn cell_config(base: &SimConfig, combo: Combo, load: f64) -> Result<SimConfig, ConfigError> {
    let mut cfg = base.clone();
    cfg.policy = base.policy.with_kind(combo.policy);
    cfg.scheduler = combo.scheduler;
    cfg.scale_to_load(load)?;
    Ok(cfg)
}
