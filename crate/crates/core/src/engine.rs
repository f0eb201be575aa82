//! Secure inference: lowers a model into batched primitives with static
//! index maps, then runs them layer by layer over a party session.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::arith::{self, RepShare};
use crate::binary;
use crate::error::{Error, Result};
use crate::model::{InputImage, LayerKind, Sq8Model};
use crate::quant::{self, QuantizedTensorShare};
use crate::ring::Ring;
use crate::session::{run_parties, PartySession, SessionSeeds};
use crate::shared::{deal, SharedModel};
use crate::transport::{Network, PartyId};
use crate::trunc::{self, TruncKind};

/// Input cells under each output position: (spatial cell y * W + x, kernel
/// offset ky * kw + kx). Padded cells are absent, which matches padding with
/// the input zero-point since (z - z) contributes nothing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Im2Col {
    pub positions: Vec<Vec<(u32, u32)>>,
}

impl Im2Col {
    pub fn build(in_shape: [u32; 3], model_geometry: &crate::model::Geometry) -> Result<Self> {
        let [ih, iw, _] = in_shape;
        let (oh, ow, pt, pl) = model_geometry.output(ih, iw)?;
        let (kh, kw) = model_geometry.filter;
        let (sh, sw) = model_geometry.stride;
        let mut positions = Vec::with_capacity((oh * ow) as usize);
        for oy in 0..oh as i64 {
            for ox in 0..ow as i64 {
                let mut cells = Vec::with_capacity((kh * kw) as usize);
                for ky in 0..kh as i64 {
                    for kx in 0..kw as i64 {
                        let y = oy * sh as i64 + ky - pt as i64;
                        let x = ox * sw as i64 + kx - pl as i64;
                        if (0..ih as i64).contains(&y) && (0..iw as i64).contains(&x) {
                            cells.push(((y * iw as i64 + x) as u32, (ky * kw as i64 + kx) as u32));
                        }
                    }
                }
                positions.push(cells);
            }
        }
        Ok(Im2Col { positions })
    }
}

#[derive(Clone, Debug)]
pub struct LayerPlan {
    pub index: usize,
    pub kind: LayerKind,
    pub input: u32,
    pub output: u32,
    pub in_shape: [u32; 3],
    pub out_shape: [u32; 3],
    /// Terms per dot product (0 for layers without weights).
    pub window: u32,
    pub im2col: Option<Im2Col>,
    pub trunc_batches: u32,
    pub estimated_rounds: u64,
}

impl LayerPlan {
    pub fn outputs(&self) -> usize {
        self.out_shape.iter().map(|&d| d as usize).product()
    }
}

#[derive(Clone, Debug)]
pub struct ExecutionPlan {
    pub ring: Ring,
    pub kind: TruncKind,
    pub input_shape: [u32; 3],
    pub input_tensor: u32,
    pub shift_bound: u32,
    pub layers: Vec<LayerPlan>,
    /// Rounds of sharing the input.
    pub input_rounds: u64,
}

impl ExecutionPlan {
    pub fn truncation_batches(&self) -> u32 {
        self.layers.iter().map(|l| l.trunc_batches).sum()
    }

    pub fn estimated_rounds(&self) -> u64 {
        self.input_rounds + self.layers.iter().map(|l| l.estimated_rounds).sum::<u64>()
    }
}

fn tournament_levels(width: usize) -> u64 {
    width.next_power_of_two().trailing_zeros() as u64
}

/// Static lowering: every shape, index map and round estimate is fixed here,
/// before any communication.
pub fn plan(skeleton: &Sq8Model, ring: Ring, kind: TruncKind) -> Result<ExecutionPlan> {
    let shapes = skeleton.validate()?;
    skeleton.check_ring(ring)?;
    let k = ring.bits();
    let compare_level = binary::msb_rounds(k) + binary::B2A_ROUNDS_WORST + 1;
    let mut layers = Vec::with_capacity(skeleton.layers.len());
    for (i, (l, s)) in skeleton.layers.iter().zip(shapes).enumerate() {
        let im2col = match l.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::MaxPool2d | LayerKind::AveragePool2d => {
                Some(Im2Col::build(s.input, &l.geometry)?)
            }
            _ => None,
        };
        let (trunc_batches, estimated_rounds) = match l.kind {
            LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::FullyConnected => {
                // dot, m' multiply, shift-power multiply, truncation, clamp
                (1, 3 + trunc::trunc_rounds(kind, k) + binary::clamp_rounds(k))
            }
            LayerKind::AveragePool2d => (1, trunc::trunc_rounds(kind, k)),
            LayerKind::MaxPool2d => {
                let widest = im2col.as_ref().unwrap().positions.iter().map(Vec::len).max().unwrap_or(1);
                (0, tournament_levels(widest) * compare_level)
            }
            LayerKind::Reshape => (0, 0),
            LayerKind::ArgmaxOutput => {
                let n = s.input.iter().map(|&d| d as usize).product();
                (0, tournament_levels(n) * compare_level + 1)
            }
        };
        layers.push(LayerPlan {
            index: i,
            kind: l.kind,
            input: l.input,
            output: l.output,
            in_shape: s.input,
            out_shape: s.output,
            window: s.window,
            im2col,
            trunc_batches,
            estimated_rounds,
        });
    }
    Ok(ExecutionPlan {
        ring,
        kind,
        input_shape: skeleton.header.input_shape,
        input_tensor: skeleton.header.input_tensor,
        shift_bound: skeleton.header.shift_bound,
        layers,
        input_rounds: 1,
    })
}

/// Shares an image owned by `owner` (the client); the others pass `None`.
pub fn share_input(
    sess: &mut PartySession,
    owner: PartyId,
    image: Option<&InputImage>,
    model: &SharedModel,
) -> Result<QuantizedTensorShare> {
    let skel = &model.skeleton;
    let n = skel.input_len();
    let values: Option<Vec<u128>> = match (sess.id() == owner, image) {
        (true, Some(img)) => {
            img.check_model(skel)?;
            Some(img.data.iter().map(|&v| v as u128).collect())
        }
        (true, None) => return Err(Error::config("the input owner must supply an image")),
        (false, _) => None,
    };
    let data = arith::input_share_raw(sess, owner, values.as_deref(), n)?;
    QuantizedTensorShare::new(
        skel.header.input_shape.iter().map(|&d| d as usize).collect(),
        data,
        model.zero_points[skel.header.input_tensor as usize],
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: LayerKind,
    pub outputs: usize,
    pub window: u32,
    pub bytes_sent: u64,
    pub frames: u64,
    pub rounds: u64,
    pub estimated_rounds: u64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub party: u8,
    pub label: usize,
    pub mode: TruncKind,
    pub ring_bits: u32,
    pub layers: Vec<LayerReport>,
    pub total_bytes_sent: u64,
    pub total_rounds: u64,
    pub estimated_rounds: u64,
    pub wall_ms: f64,
    /// Opened activations per layer; only in traced runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub activations: Option<Vec<Vec<u8>>>,
}

fn with_layer(layer: usize, kind: LayerKind, e: Error) -> Error {
    match e {
        Error::Transport { peer, message } => Error::Transport {
            peer,
            message: format!("layer {layer} ({kind}): {message}"),
        },
        other => other,
    }
}

/// Runs the plan on an already shared input and returns the opened label.
pub fn infer(sess: &mut PartySession, model: &SharedModel, plan: &ExecutionPlan, input: &QuantizedTensorShare) -> Result<usize> {
    Ok(run(sess, model, plan, input, false)?.label)
}

/// `infer` plus per-layer communication and timing.
pub fn infer_with_stats(
    sess: &mut PartySession,
    model: &SharedModel,
    plan: &ExecutionPlan,
    input: &QuantizedTensorShare,
) -> Result<InferenceReport> {
    run(sess, model, plan, input, false)
}

/// Debug run that also opens every layer's activations. Reveals them to all
/// parties; for verification against the reference only.
pub fn infer_traced(
    sess: &mut PartySession,
    model: &SharedModel,
    plan: &ExecutionPlan,
    input: &QuantizedTensorShare,
) -> Result<InferenceReport> {
    run(sess, model, plan, input, true)
}

fn run(
    sess: &mut PartySession,
    model: &SharedModel,
    plan: &ExecutionPlan,
    input: &QuantizedTensorShare,
    trace: bool,
) -> Result<InferenceReport> {
    if sess.ring() != plan.ring || model.ring != plan.ring {
        return Err(Error::config("session, model and plan use different rings"));
    }
    let want: Vec<usize> = plan.input_shape.iter().map(|&d| d as usize).collect();
    if input.shape != want || input.data.len() != want.iter().product::<usize>() {
        return Err(Error::shape(format!("input shape {:?}, plan expects {want:?}", input.shape)));
    }
    let start = Instant::now();
    let mut buffers: Vec<Option<Vec<RepShare>>> = vec![None; model.skeleton.tensors.len()];
    buffers[plan.input_tensor as usize] = Some(input.data.clone());
    let mut reports = Vec::with_capacity(plan.layers.len());
    let mut opened = trace.then(Vec::new);
    let mut label = None;
    let stats_start = sess.stats();

    for lp in &plan.layers {
        let t0 = Instant::now();
        let before = sess.stats();
        let x = buffers[lp.input as usize].take().expect("planned topology");
        let result = if lp.kind == LayerKind::ArgmaxOutput {
            quant::secure_argmax(sess, &x).map(|idx| {
                label = Some(idx);
                Vec::new()
            })
        } else {
            run_layer(sess, model, plan, lp, &x)
        };
        let y = result.map_err(|e| with_layer(lp.index, lp.kind, e))?;
        let d = sess.stats().since(&before);
        reports.push(LayerReport {
            index: lp.index,
            kind: lp.kind,
            outputs: lp.outputs(),
            window: lp.window,
            bytes_sent: d.bytes_sent(),
            frames: d.frames(),
            rounds: d.rounds,
            estimated_rounds: lp.estimated_rounds,
            wall_ms: duration_ms(t0.elapsed()),
        });
        if lp.kind != LayerKind::ArgmaxOutput {
            if let Some(acts) = opened.as_mut() {
                let vals = arith::open(sess, &y).map_err(|e| with_layer(lp.index, lp.kind, e))?;
                acts.push(vals.into_iter().map(|v| v as u8).collect());
            }
            buffers[lp.output as usize] = Some(y);
        }
        buffers[lp.input as usize] = Some(x);
    }
    let stats_total = sess.stats().since(&stats_start);
    let label = label.ok_or_else(|| Error::Topology("plan has no ARGMAX_OUTPUT".into()))?;
    Ok(InferenceReport {
        party: sess.id().id(),
        label,
        mode: plan.kind,
        ring_bits: plan.ring.bits(),
        layers: reports,
        total_bytes_sent: stats_total.bytes_sent(),
        total_rounds: stats_total.rounds,
        estimated_rounds: plan.layers.iter().map(|l| l.estimated_rounds).sum(),
        wall_ms: duration_ms(start.elapsed()),
        activations: opened,
    })
}

fn duration_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn run_layer(sess: &mut PartySession, model: &SharedModel, plan: &ExecutionPlan, lp: &LayerPlan, x: &[RepShare]) -> Result<Vec<RepShare>> {
    let ring = sess.ring();
    let spec = &model.skeleton.layers[lp.index];
    let [_, _, ic] = lp.in_shape;
    let ic = ic as usize;
    let [_, _, oc] = lp.out_shape;
    let oc = oc as usize;
    match lp.kind {
        LayerKind::Conv2d | LayerKind::DepthwiseConv2d | LayerKind::FullyConnected => {
            let w_id = spec.weights.expect("validated") as usize;
            let b_id = spec.bias.expect("validated") as usize;
            let z1 = model.zero_points[lp.input as usize];
            let z2 = model.zero_points[w_id];
            let z3 = model.zero_points[lp.output as usize];
            let xc: Vec<RepShare> = x.iter().map(|v| v.sub(ring, z1)).collect();
            let wc: Vec<RepShare> = model.values[w_id].iter().map(|v| v.sub(ring, z2)).collect();
            let bias = &model.values[b_id];
            let mut terms = Vec::with_capacity(lp.outputs());
            match lp.kind {
                LayerKind::FullyConnected => {
                    let n = xc.len();
                    for (o, b) in bias.iter().enumerate() {
                        let row = &wc[o * n..(o + 1) * n];
                        terms.push(ring.add(b.a, arith::dot_terms(ring, &xc, row)));
                    }
                }
                LayerKind::Conv2d => {
                    let (kh, kw) = spec.geometry.filter;
                    let per_out = (kh * kw) as usize * ic;
                    for cells in &lp.im2col.as_ref().unwrap().positions {
                        for (o, b) in bias.iter().enumerate() {
                            let mut t = b.a;
                            for &(cell, koff) in cells {
                                let xs = &xc[cell as usize * ic..(cell as usize + 1) * ic];
                                let wo = o * per_out + koff as usize * ic;
                                t = ring.add(t, arith::dot_terms(ring, xs, &wc[wo..wo + ic]));
                            }
                            terms.push(t);
                        }
                    }
                }
                _ => {
                    let mult = spec.geometry.depth_multiplier as usize;
                    for cells in &lp.im2col.as_ref().unwrap().positions {
                        for (o, b) in bias.iter().enumerate() {
                            let c = o / mult;
                            let mut t = b.a;
                            for &(cell, koff) in cells {
                                let xv = xc[cell as usize * ic + c];
                                t = ring.add(t, xv.cross_term(ring, wc[koff as usize * oc + o]));
                            }
                            terms.push(t);
                        }
                    }
                }
            }
            let s = arith::reshare(sess, terms)?;
            let mult = model.multipliers[lp.index].expect("validated");
            quant::quantized_output_stage(sess, &s, &mult, z3, plan.shift_bound, spec.clamp.0, spec.clamp.1, plan.kind)
        }
        LayerKind::MaxPool2d | LayerKind::AveragePool2d => {
            let positions = &lp.im2col.as_ref().unwrap().positions;
            let mut windows = Vec::with_capacity(positions.len() * oc);
            for cells in positions {
                for c in 0..oc {
                    windows.push(cells.iter().map(|&(cell, _)| x[cell as usize * ic + c]).collect::<Vec<_>>());
                }
            }
            if lp.kind == LayerKind::MaxPool2d {
                quant::max_pool(sess, &windows)
            } else {
                let divisors: Vec<u32> = windows.iter().map(|w| w.len() as u32).collect();
                quant::avg_pool_with(sess, &windows, &divisors, plan.kind)
            }
        }
        LayerKind::Reshape => Ok(x.to_vec()),
        LayerKind::ArgmaxOutput => unreachable!("handled by the caller"),
    }
}

/// One party's side of a whole inference: plan, share the input from P1
/// (the only party passing `image`), infer.
pub fn run_party(
    sess: &mut PartySession,
    shares: &SharedModel,
    image: Option<&InputImage>,
    kind: TruncKind,
    trace: bool,
) -> Result<InferenceReport> {
    let p = plan(&shares.skeleton, shares.ring, kind)?;
    let img = if sess.id() == PartyId::P1 { image } else { None };
    let input = share_input(sess, PartyId::P1, img, shares)?;
    run(sess, shares, &p, &input, trace)
}

/// Runs the full pipeline for all three parties in this process: deal the
/// model from `seed`, then `run_party` each. Returns each party's report.
pub fn run_local_inference(
    model: &Sq8Model,
    image: &InputImage,
    ring: Ring,
    kind: TruncKind,
    seed: u64,
    trace: bool,
    nets: [Network; 3],
) -> Result<[InferenceReport; 3]> {
    let shares = deal(model, ring, &mut ChaCha20Rng::seed_from_u64(seed))?;
    run_parties(ring, nets, &SessionSeeds::from_master(seed), |sess| {
        run_party(sess, &shares[sess.id().index()], Some(image), kind, trace)
    })
}
