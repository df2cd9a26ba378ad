//! One ranking across every layer: a layer with uniformly weak columns can
//! lose all of them while a strong layer keeps everything.

use losparse::pruner::{apply_prune, neuron_refs, select_retained};
use losparse::rng::{gaussian_matrix, seeded};
use losparse::FactorizedLayer;

fn main() -> losparse::Result<()> {
    let mut rng = seeded(3);
    let mut layers = vec![
        FactorizedLayer::init_from_pretrained(&gaussian_matrix(&mut rng, 8, 4), 1)?,
        FactorizedLayer::init_from_pretrained(&gaussian_matrix(&mut rng, 8, 4), 1)?,
    ];
    let scores = vec![vec![0.9, 0.8, 0.7, 0.6], vec![0.1, 0.2, 0.05, 0.15]];
    let retained = select_retained(&neuron_refs(&scores), 0.5)?;
    apply_prune(&mut layers, &retained)?;
    for (i, l) in layers.iter().enumerate() {
        println!("layer {i}: live columns {:?}", l.live_columns());
    }
    Ok(())
}
