//! Initial feasible regions of the three controllers on a grid.
//!
//! ```text
//! cargo run --release --example feasible_region -- /tmp/region.csv
//! ```

use homotube::experiment::{cmd_region, ExperimentConfig};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::default();
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let dir = tempfile::tempdir()?;
    let (report, grids) = cmd_region(&cfg, dir.path())?;
    for g in &grids {
        println!("{:<20} {:>5} feasible points", g.source, g.count());
    }
    println!("conventional outside rigid: {}", report.conventional_not_rigid);
    println!("rigid outside homothetic:   {}", report.rigid_not_homothetic);
    println!("homothetic gain over conventional: {}", report.homothetic_extra);
    if let Some(p) = out {
        std::fs::copy(dir.path().join("region.csv"), &p)?;
        println!("grid written to {}", p.display());
    }
    Ok(())
}
