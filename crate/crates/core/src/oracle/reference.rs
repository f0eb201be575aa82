//! Integer-only cleartext inference with the same semantics as the secure
//! exact-mode engine: i64 accumulators, fixed-point rescale with ties rounded
//! up, zero-point add, clamp.

use sha2::{Digest, Sha256};

use super::stage;
use crate::error::{Error, Result};
use crate::model::{InputImage, LayerKind, LayerSpec, Reader, Sq8Model, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Inference {
    pub label: usize,
    /// Output of every layer before ARGMAX_OUTPUT, in layer order.
    pub activations: Vec<Vec<u8>>,
}

pub fn reference_infer(model: &Sq8Model, input: &InputImage) -> Result<Inference> {
    model.validate()?;
    if !model.has_data() {
        return Err(Error::config("reference inference needs the plaintext model"));
    }
    input.check_model(model)?;
    let mut buffers: Vec<Option<Vec<u8>>> = vec![None; model.tensors.len()];
    buffers[model.header.input_tensor as usize] = Some(input.data.clone());
    let mut activations = Vec::new();
    for l in &model.layers {
        let x = buffers[l.input as usize].as_ref().expect("validated topology");
        let src = model.tensor(l.input)?;
        if l.kind == LayerKind::ArgmaxOutput {
            return Ok(Inference {
                label: stage::argmax(x),
                activations,
            });
        }
        let y = eval_layer(model, l, src, x)?;
        activations.push(y.clone());
        buffers[l.output as usize] = Some(y);
    }
    Err(Error::Topology("model has no ARGMAX_OUTPUT".into()))
}

fn dims(t: &Tensor) -> (i64, i64, i64) {
    (t.shape[0] as i64, t.shape[1] as i64, t.shape[2] as i64)
}

fn eval_layer(model: &Sq8Model, l: &LayerSpec, src: &Tensor, x: &[u8]) -> Result<Vec<u8>> {
    let dst = model.tensor(l.output)?;
    let (ih, iw, ic) = dims(src);
    let (oh, ow, oc) = dims(dst);
    let g = &l.geometry;
    let (_, _, pt, pl) = if l.kind.is_spatial() {
        g.output(ih as u32, iw as u32)?
    } else {
        (0, 0, 0, 0)
    };
    let (pt, pl) = (pt as i64, pl as i64);
    let (kh, kw) = (g.filter.0 as i64, g.filter.1 as i64);
    let (sh, sw) = (g.stride.0 as i64, g.stride.1 as i64);
    let at = |y: i64, xx: i64, c: i64| x[((y * iw + xx) * ic + c) as usize];
    // valid input cells under output cell (oy, ox)
    let cells = |oy: i64, ox: i64| {
        let mut v = Vec::new();
        for ky in 0..kh {
            for kx in 0..kw {
                let (y, xx) = (oy * sh + ky - pt, ox * sw + kx - pl);
                if (0..ih).contains(&y) && (0..iw).contains(&xx) {
                    v.push((ky, kx, y, xx));
                }
            }
        }
        v
    };

    let mut out = Vec::with_capacity((oh * ow * oc) as usize);
    match l.kind {
        LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::FullyConnected => {
            let wt = model.tensor(l.weights.unwrap())?;
            let w = wt.u8_data().expect("plaintext weights");
            let bias = model.tensor(l.bias.unwrap())?.i32_data().expect("plaintext bias");
            let z1 = src.quant.zero_point as i64;
            let z2 = wt.quant.zero_point as i64;
            let mult = l.multiplier.expect("validated");
            let z3 = dst.quant.zero_point;
            let finish = |s: i64| stage::output_stage(s, mult.m_prime, mult.shift, z3, l.clamp.0, l.clamp.1);
            match l.kind {
                LayerKind::FullyConnected => {
                    let n = (ih * iw * ic) as usize;
                    for o in 0..oc as usize {
                        let row = &w[o * n..(o + 1) * n];
                        let s: i64 = x
                            .iter()
                            .zip(row)
                            .map(|(&a, &b)| (a as i64 - z1) * (b as i64 - z2))
                            .sum();
                        out.push(finish(s + bias[o] as i64));
                    }
                }
                LayerKind::Conv2d => {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let cs = cells(oy, ox);
                            for o in 0..oc {
                                let mut s = bias[o as usize] as i64;
                                for &(ky, kx, y, xx) in &cs {
                                    for c in 0..ic {
                                        let wv = w[(((o * kh + ky) * kw + kx) * ic + c) as usize] as i64;
                                        s += (at(y, xx, c) as i64 - z1) * (wv - z2);
                                    }
                                }
                                out.push(finish(s));
                            }
                        }
                    }
                }
                _ => {
                    let mult_d = g.depth_multiplier as i64;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let cs = cells(oy, ox);
                            for o in 0..oc {
                                let c = o / mult_d;
                                let mut s = bias[o as usize] as i64;
                                for &(ky, kx, y, xx) in &cs {
                                    let wv = w[((ky * kw + kx) * oc + o) as usize] as i64;
                                    s += (at(y, xx, c) as i64 - z1) * (wv - z2);
                                }
                                out.push(finish(s));
                            }
                        }
                    }
                }
            }
        }
        LayerKind::MaxPool2d | LayerKind::AveragePool2d => {
            for oy in 0..oh {
                for ox in 0..ow {
                    let cs = cells(oy, ox);
                    for c in 0..oc {
                        let win: Vec<u8> = cs.iter().map(|&(_, _, y, xx)| at(y, xx, c)).collect();
                        out.push(if l.kind == LayerKind::MaxPool2d {
                            stage::max_pool(&win)
                        } else {
                            stage::avg_pool(&win, win.len() as u32)
                        });
                    }
                }
            }
        }
        LayerKind::Reshape => out.extend_from_slice(x),
        LayerKind::ArgmaxOutput => unreachable!(),
    }
    Ok(out)
}

// ---- golden activation dumps ----

pub const GOLDEN_MAGIC: [u8; 4] = *b"SQ8G";

/// Binary dump: magic "SQ8G", u32 label, u32 layer count, then per layer a
/// u32 length and the raw activation bytes.
pub fn golden_bytes(inf: &Inference) -> Vec<u8> {
    let mut w = GOLDEN_MAGIC.to_vec();
    w.extend_from_slice(&(inf.label as u32).to_le_bytes());
    w.extend_from_slice(&(inf.activations.len() as u32).to_le_bytes());
    for a in &inf.activations {
        w.extend_from_slice(&(a.len() as u32).to_le_bytes());
        w.extend_from_slice(a);
    }
    w
}

pub fn parse_golden(bytes: &[u8]) -> Result<Inference> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != GOLDEN_MAGIC {
        return Err(Error::Format("bad magic, not a golden dump".into()));
    }
    let label = r.u32()? as usize;
    let n = r.u32()?;
    let mut activations = Vec::new();
    for _ in 0..n {
        let len = r.u32()? as usize;
        activations.push(r.take(len)?.to_vec());
    }
    if !r.is_done() {
        return Err(Error::Format("trailing bytes after golden dump".into()));
    }
    Ok(Inference { label, activations })
}

/// Content-addressed file name for a dump.
pub fn golden_file_name(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    format!("golden-{}.sq8g", hex::encode(&digest[..8]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixture;
    use crate::model::{DotParams, ModelBuilder, TensorData};
    use crate::quant::QuantParams;

    #[test]
    fn activations_are_bytes_and_deterministic() {
        let m = fixture::random_model(1);
        let img = fixture::random_input(&m, 2);
        let a = reference_infer(&m, &img).unwrap();
        let b = reference_infer(&m, &img).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.activations.len(), 4);
        assert_eq!(a.activations[0].len(), 6 * 6 * 6);
        assert_eq!(a.activations[3].len(), 10);
        assert!(a.label < 10);
    }

    #[test]
    fn activations_are_not_degenerate() {
        // the fixture's scales should leave most outputs off the clamp rails
        let m = fixture::random_model(3);
        let img = fixture::random_input(&m, 4);
        let inf = reference_infer(&m, &img).unwrap();
        for a in &inf.activations {
            let distinct: std::collections::BTreeSet<u8> = a.iter().copied().collect();
            assert!(distinct.len() > a.len().min(8) / 2, "{a:?}");
        }
    }

    #[test]
    fn constant_input_identity_model() {
        // one weight of value z2 + 1 per output: s = x - z1 + bias
        let in_q = QuantParams::new(0.5, 10).unwrap();
        let w_q = QuantParams::new(0.25, 3).unwrap();
        let out_q = QuantParams::new(0.5, 20).unwrap();
        let m = ModelBuilder::new([1, 1, 2], in_q)
            .fully_connected(
                2,
                DotParams {
                    weights: vec![4, 3, 3, 4],
                    weight_quant: w_q,
                    bias: vec![8, -8],
                    output_quant: out_q,
                    clamp: (0, 255),
                },
            )
            .unwrap()
            .build()
            .unwrap();
        // multiplier = 0.5 * 0.25 / 0.5 = 0.25; output = 20 + round((x - 10 + b) / 4)
        let img = InputImage::new(vec![1, 1, 2], vec![50, 50]).unwrap();
        let inf = reference_infer(&m, &img).unwrap();
        assert_eq!(inf.activations[0], vec![20 + 12, 20 + 8]);
        assert_eq!(inf.label, 0);
    }

    #[test]
    fn label_follows_output_permutation() {
        let m = fixture::random_model(5);
        let img = fixture::random_input(&m, 6);
        let base = reference_infer(&m, &img).unwrap();
        let scores = base.activations.last().unwrap().clone();
        let mut sorted = scores.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != scores.len() {
            return; // ties make the permuted label ambiguous
        }
        // reverse the rows of the final layer
        let mut p = m.clone();
        let fc = p.layers[p.layers.len() - 2].clone();
        let n_in = p.tensors[fc.weights.unwrap() as usize].shape[1] as usize;
        if let TensorData::U8(w) = &mut p.tensors[fc.weights.unwrap() as usize].data {
            let rows: Vec<Vec<u8>> = w.chunks(n_in).rev().map(|r| r.to_vec()).collect();
            *w = rows.concat();
        }
        if let TensorData::I32(b) = &mut p.tensors[fc.bias.unwrap() as usize].data {
            b.reverse();
        }
        let permuted = reference_infer(&p, &img).unwrap();
        assert_eq!(permuted.label, scores.len() - 1 - base.label);
    }

    #[test]
    fn golden_round_trip() {
        let m = fixture::random_mixed_model(7);
        let img = fixture::random_input(&m, 8);
        let inf = reference_infer(&m, &img).unwrap();
        let bytes = golden_bytes(&inf);
        assert_eq!(parse_golden(&bytes).unwrap(), inf);
        let name = golden_file_name(&bytes);
        assert!(name.starts_with("golden-") && name.ends_with(".sq8g"));
    }
}
