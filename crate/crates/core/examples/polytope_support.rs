//! H-polytopes: support function, containment, vertices and area.

use homotube::linalg::from_rows;
use homotube::polytope::HPolytope;
use nalgebra::DVector;

fn main() -> anyhow::Result<()> {
    let hexagon = homotube::sim::platooning::default_w();
    let (lo, hi) = hexagon.bounding_box()?;
    println!("W: {} facets, box [{:.3}, {:.3}] x [{:.3}, {:.3}]", hexagon.num_facets(), lo[0], hi[0], lo[1], hi[1]);
    let dirs = from_rows(&[&[1.0, 0.0], &[1.0, 1.0], &[0.0, -1.0]]);
    println!("support in (1,0), (1,1), (0,-1): {:?}", hexagon.support(&dirs)?.values().as_slice());
    println!("area {:.6}, Chebyshev radius {:.6}", hexagon.area_2d()?, hexagon.chebyshev_radius()?);

    let inner = HPolytope::from_bounds(&[-0.01, -0.05], &[0.01, 0.05])?;
    println!("box inside W: {}", hexagon.contains(&inner)?);
    let shifted = inner.translate(&DVector::from_vec(vec![0.025, 0.0]))?;
    println!("shifted box inside W: {}", hexagon.contains(&shifted)?);
    for v in hexagon.vertices_2d()? {
        println!("  vertex ({:+.4}, {:+.4})", v[0], v[1]);
    }
    Ok(())
}
