//! Shared fixtures for the benchmarks.

use sosest::{
    beamform_frames, simulate_phantom, BeamformConfig, FrameSelection, ImageGrid, ProbeGeometry,
    RfChannelData, RfImage, SimConfig,
};

/// Seeded 1540 m/s phantom recorded with `selection`.
pub fn phantom(selection: FrameSelection) -> RfChannelData {
    let config = SimConfig {
        seed: 7,
        ..SimConfig::default()
    };
    simulate_phantom(&config, &ProbeGeometry::linear_128(), selection)
        .expect("default config simulates")
        .1
}

/// Every frame of `rf` beamformed at 1540 m/s on an `n_x` x `n_z` standard grid.
pub fn frames(rf: &RfChannelData, n_x: usize, n_z: usize) -> Vec<RfImage> {
    let config = BeamformConfig::new(ImageGrid::standard_with(n_x, n_z));
    let tx: Vec<usize> = (0..rf.n_tx()).collect();
    beamform_frames(rf, &tx, 1540.0, &config).expect("valid grid")
}
