use sslbd::codec::*;
use sslbd::data::synth_dataset;

fn main() {
    let ds = synth_dataset(4, 50, 123).unwrap();
    let images = ds.images();
    let msg = WatermarkMessage::random(16, 4).unwrap();
    for (lr, warm) in [(1e-4, 10), (1e-3, 10)] {
        let cfg = CodecTrainConfig { adam_lr: lr, warmup_epochs: warm, seed: 5, ..Default::default() };
        let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
        print!("lr {lr:.0e} warm {warm}:");
        for t in trace.iter().step_by(5) { print!(" e{}:msg{:.3}/res{:.4}", t.epoch, t.message, t.residual); }
        let marked = embed_batch(&codec, &images[..50], &msg).unwrap();
        let (mut mean_abs, mut max_abs, mut n) = (0.0f64, 0.0f32, 0usize);
        for (_, r) in &marked { for &v in r.as_slice() { mean_abs += v.abs() as f64; max_abs = max_abs.max(v.abs()); n += 1; } }
        println!("\n  marked {:.3} clean {:.3} mean|r| {:.4} max {:.3}",
            codec.meta.bit_accuracy, codec.meta.clean_bit_accuracy, mean_abs / n as f64, max_abs);
    }
}
