//! Programmatic test models with random weights and valid quantization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{DotParams, Geometry, InputImage, ModelBuilder, Padding, Sq8Model};
use crate::quant::QuantParams;

fn random_quant(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> QuantParams {
    let scale = (rng.gen_range(lo.ln()..hi.ln())).exp();
    QuantParams::new(scale, rng.gen()).expect("positive scale")
}

/// Parameters of one dot-product layer with `window` terms per output.
/// The output scale is picked so the accumulator's spread lands near the
/// middle of the byte range, which keeps activations from saturating.
fn random_dot(rng: &mut ChaCha8Rng, input: QuantParams, window: u32, outputs: u32, n_weights: usize, relu: bool) -> DotParams {
    // weights are uniform bytes, so a zero-point near the middle keeps the
    // accumulator centred
    let weight_quant = QuantParams::new(random_quant(rng, 0.002, 0.05).scale, rng.gen_range(118..=138)).expect("positive scale");
    let spread = (window as f64).sqrt() * 74.0 * 74.0;
    let m = rng.gen_range(20.0..60.0) / spread;
    let output_scale = input.scale * weight_quant.scale / m;
    let output_quant = QuantParams::new(output_scale, rng.gen_range(64..=192)).expect("positive scale");
    let bias_bound = (spread as i32).max(1);
    let lo = if relu { output_quant.zero_point } else { 0 };
    DotParams {
        weights: (0..n_weights).map(|_| rng.gen()).collect(),
        weight_quant,
        bias: (0..outputs).map(|_| rng.gen_range(-bias_bound..=bias_bound)).collect(),
        output_quant,
        clamp: (lo, 255),
    }
}

/// 2-conv + maxpool + FC classifier on an 8x8x3 input:
/// conv 3x3 VALID (ReLU) -> conv 3x3 SAME -> maxpool 2x2 -> FC(10) -> argmax.
pub fn random_model(seed: u64) -> Sq8Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_q = random_quant(&mut rng, 0.005, 0.05);
    let mut b = ModelBuilder::new([8, 8, 3], in_q);
    let c1 = 6;
    let p1 = random_dot(&mut rng, in_q, 27, c1, (c1 * 27) as usize, true);
    let q1 = p1.output_quant;
    b.conv2d(c1, Geometry::new((3, 3), (1, 1), Padding::Valid), p1)
        .expect("conv1");
    let c2 = 8;
    let p2 = random_dot(&mut rng, q1, 9 * c1, c2, (c2 * 9 * c1) as usize, false);
    let q2 = p2.output_quant;
    b.conv2d(c2, Geometry::new((3, 3), (1, 1), Padding::Same), p2)
        .expect("conv2");
    b.max_pool(Geometry::new((2, 2), (2, 2), Padding::Valid))
        .expect("pool");
    let n_in = 3 * 3 * c2;
    let p3 = random_dot(&mut rng, q2, n_in, 10, (10 * n_in) as usize, false);
    b.fully_connected(10, p3).expect("fc");
    b.build().expect("fixture model is valid")
}

/// A random image matching the model's input shape.
pub fn random_input(model: &Sq8Model, seed: u64) -> InputImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..model.input_len()).map(|_| rng.gen()).collect();
    InputImage::new(model.header.input_shape.to_vec(), data).expect("shape matches")
}

/// A model exercising every layer kind: depthwise and pointwise convolution
/// with SAME padding and stride 2, average pooling, reshape.
pub fn random_mixed_model(seed: u64) -> Sq8Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_q = random_quant(&mut rng, 0.005, 0.05);
    let mut b = ModelBuilder::new([7, 7, 4], in_q);
    let mut g = Geometry::new((3, 3), (2, 2), Padding::Same);
    g.depth_multiplier = 2;
    let p = random_dot(&mut rng, in_q, 9, 8, 9 * 8, true);
    let q = p.output_quant;
    b.depthwise_conv2d(g, p).expect("depthwise");
    let p = random_dot(&mut rng, q, 8, 5, 5 * 8, true);
    let q = p.output_quant;
    b.conv2d(5, Geometry::new((1, 1), (1, 1), Padding::Valid), p)
        .expect("pointwise");
    b.avg_pool(Geometry::new((3, 3), (2, 2), Padding::Same))
        .expect("avg pool");
    b.max_pool(Geometry::new((2, 2), (1, 1), Padding::Valid))
        .expect("max pool");
    b.reshape([1, 1, 5]).expect("reshape");
    // pooling and reshape keep the pointwise layer's quantization
    let p = random_dot(&mut rng, q, 5, 4, 4 * 5, false);
    b.fully_connected(4, p).expect("fc");
    b.build().expect("mixed model is valid")
}
