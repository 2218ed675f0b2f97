// probe: tiny pretrain dynamics at various lr/epochs
use sslbd::data::synth_dataset;
use sslbd::nn::BackboneKind;
use sslbd::ssl::{pretrain_encoder, PretrainConfig};

fn main() {
    let ds = synth_dataset(4, 16, 31).unwrap();
    let images = ds.images();
    for lr in [1e-3, 5e-4, 3e-4] {
        for epochs in [5usize, 10] {
            let cfg = PretrainConfig { epochs, batch_size: 8, seed: 11, learning_rate: lr, ..Default::default() };
            let (_, trace) = pretrain_encoder(&images, BackboneKind::SmallCnn, &cfg).unwrap();
            println!("lr {lr:.0e} epochs {epochs}: first {:.4} min {:.4} last {:.4}", trace[0],
                trace.iter().cloned().fold(f64::INFINITY, f64::min), trace.last().unwrap());
        }
    }
}
