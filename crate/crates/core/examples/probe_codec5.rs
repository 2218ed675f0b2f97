use sslbd::codec::*;
use sslbd::data::synth_dataset;

fn main() {
    let ds = synth_dataset(4, 50, 123).unwrap();
    let images = ds.images();
    let msg = WatermarkMessage::random(16, 4).unwrap();
    for epochs in [25usize, 35] {
        let decay = if epochs == 25 { vec![15, 20] } else { vec![25, 30] };
        let cfg = CodecTrainConfig { adam_lr: 1e-3, warmup_epochs: 10, epochs, decay_epochs: decay, seed: 5, ..Default::default() };
        let t0 = std::time::Instant::now();
        let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
        print!("epochs {epochs} ({:.0}s):", t0.elapsed().as_secs_f32());
        for t in trace.iter().step_by(6) { print!(" e{}:msg{:.3}/res{:.3}", t.epoch, t.message, t.residual); }
        let marked = embed_batch(&codec, &images[..50], &msg).unwrap();
        let (mut mean_abs, mut max_abs, mut n) = (0.0f64, 0.0f32, 0usize);
        for (_, r) in &marked { for &v in r.as_slice() { mean_abs += v.abs() as f64; max_abs = max_abs.max(v.abs()); n += 1; } }
        println!("\n  marked {:.3} clean {:.3} mean|r| {:.4} max {:.3}",
            codec.meta.bit_accuracy, codec.meta.clean_bit_accuracy, mean_abs / n as f64, max_abs);
    }
}
