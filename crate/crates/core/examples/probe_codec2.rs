use sslbd::codec::*;
use sslbd::data::synth_dataset;

fn main() {
    // spec-example conditions: 200 images, L=16, 25 epochs
    let ds = synth_dataset(8, 50, 123).unwrap();
    let images = ds.images();
    let msg = WatermarkMessage::random(16, 4).unwrap();
    let cfg = CodecTrainConfig { seed: 5, ..Default::default() };
    let t0 = std::time::Instant::now();
    let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
    println!("trained in {:.1}s", t0.elapsed().as_secs_f32());
    for t in trace.iter().step_by(4) {
        println!("ep {:2} res {:.4} msg {:.4}", t.epoch, t.residual, t.message);
    }
    println!("marked acc {:.3} clean acc {:.3}", codec.meta.bit_accuracy, codec.meta.clean_bit_accuracy);

    // residual magnitudes for imperceptibility criterion
    let marked = embed_batch(&codec, &images[..50], &msg).unwrap();
    let mut mean_abs = 0.0f64; let mut max_abs = 0.0f32; let mut n = 0usize;
    for (_, r) in &marked {
        for &v in r.as_slice() { mean_abs += v.abs() as f64; max_abs = max_abs.max(v.abs()); n += 1; }
    }
    println!("mean |residual| {:.4} max {:.4}", mean_abs / n as f64, max_abs);
}
