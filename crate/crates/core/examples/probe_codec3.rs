use sslbd::codec::*;
use sslbd::data::synth_dataset;

fn main() {
    let ds = synth_dataset(4, 50, 123).unwrap();
    let images = ds.images();
    let msg = WatermarkMessage::random(16, 4).unwrap();
    for lr in [3e-4, 1e-3, 3e-3] {
        let cfg = CodecTrainConfig { adam_lr: lr, seed: 5, ..Default::default() };
        let (codec, trace) = train_codec(&images, &msg, &cfg).unwrap();
        let last = trace.last().unwrap();
        println!("lr {lr:.0e}: msg loss {:.4} marked {:.3} clean {:.3}",
            last.message, codec.meta.bit_accuracy, codec.meta.clean_bit_accuracy);
    }
}
