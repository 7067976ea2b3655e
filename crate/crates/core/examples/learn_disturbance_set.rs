//! Fitting a learned disturbance set to offline samples, then growing it online.

use homotube::learner::{Learner, LearnerOptions, Parameterisation};
use homotube::sim::{platooning, streams};

fn main() -> anyhow::Result<()> {
    let sc = platooning::default_scenario()?;
    let (mut offline, mut online) = streams(7);
    let i0 = homotube::learner::InformationSet::from_samples(sc.truth.sample_many(30, &mut offline)?);
    for p in [Parameterisation::Heterogeneous, Parameterisation::Uniform] {
        let opts = LearnerOptions { parameterisation: p, ..LearnerOptions::default() };
        let mut learner = Learner::fit(&sc.w, i0.clone(), opts)?;
        let ls = learner.current();
        println!("{p:?}: rho {:.4}, theta {:.4?}", ls.rho(), ls.theta().as_slice());
        println!("  area {:.3e} (W {:.3e}, true support {:.3e})", ls.realise().area_2d()?, sc.w.area_2d()?, sc.truth.support().area_2d()?);
        for _ in 0..500 {
            learner.observe(sc.truth.sample(&mut online)?)?;
        }
        println!("  after 500 online samples: offsets {:.4?}", learner.current().offsets().as_slice());
        println!("  true offsets              {:.4?}", sc.truth.support().offsets().as_slice());
    }
    Ok(())
}
