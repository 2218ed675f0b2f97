use sslbd::codec::*;
use sslbd::data::synth_dataset;

fn main() {
    let ds = synth_dataset(2, 3, 3).unwrap();
    let codec = WatermarkCodec::init(16, 0.25, 1).unwrap();
    let msg = WatermarkMessage::random(16, 2).unwrap();
    let images = ds.images();
    let batch = build_backdoored_set(&codec, &images, &msg).unwrap();
    let single: Vec<_> = images.iter().map(|img| embed(&codec, img, &msg).unwrap().0).collect();
    let mut max_diff = 0.0f32;
    for (a, b) in batch.iter().zip(&single) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            max_diff = max_diff.max((x - y).abs());
        }
    }
    println!("max batched-vs-single diff: {max_diff:e}");

    // tiny training run diagnostics
    let ds = synth_dataset(4, 24, 77).unwrap();
    let images = ds.images();
    let msg = WatermarkMessage::random(16, 4).unwrap();
    let cfg = CodecTrainConfig { epochs: 12, decay_epochs: vec![8, 10], seed: 5, ..Default::default() };
    let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
    for t in &trace {
        println!("ep {:2} res {:.4} perc {:.4} msg {:.4} fool {:.4} critic {:.4} lr {:.2e}",
            t.epoch, t.residual, t.perceptual, t.message, t.critic_fool, t.critic, t.learning_rate);
    }
    println!("held-out marked acc {:.3} clean acc {:.3}", codec.meta.bit_accuracy, codec.meta.clean_bit_accuracy);
}
// (re-run via main)
