//! Robust positively invariant tube cross-section for the platooning model.

use homotube::polytope::{default_template, invariance_margin, invariant_set, InvariantSetOptions};
use homotube::sim::platooning::{build_relative_model, DesignConfig, PlatooningConfig};

fn main() -> anyhow::Result<()> {
    let cfg = PlatooningConfig::default();
    let design = DesignConfig::default();
    let (plant, _, _) = build_relative_model(&cfg, &design)?;
    for depth in [2, 4, 8] {
        let template = default_template(cfg.w.normals(), plant.phi(), depth);
        let s = invariant_set(plant.phi(), &cfg.w, &template, &InvariantSetOptions::default())?;
        let ratio = invariance_margin(&s, plant.phi(), &cfg.w)?;
        println!("depth {depth}: {} facets, area {:.5}, max of (e_max + w_max) / b = {ratio:.12}", s.num_facets(), s.area_2d()?);
    }
    Ok(())
}
