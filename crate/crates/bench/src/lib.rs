//! Shared inputs for the benchmarks.

use sllg_core::{make_initial, Grid, InitialData, NoiseModel, RandomSmoothParams, VectorField3};

pub struct Fixture {
    pub grid: Grid,
    pub u: VectorField3,
    pub noise: NoiseModel,
}

/// Default-amplitude smooth data and the default noise on an `n × n` grid.
pub fn fixture(n: usize) -> Fixture {
    let grid = Grid::new(n).expect("power-of-two grid");
    let u = make_initial(&InitialData::RandomSmooth(RandomSmoothParams::default()), &grid).expect("smooth data");
    let noise = NoiseModel::build(&grid, 0.05, 3.0, 8).expect("noise model");
    Fixture { grid, u, noise }
}
