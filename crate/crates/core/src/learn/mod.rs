//! Minimal learning stack: a reverse-mode tape over dense tensors, dense
//! per-cell networks, the segmentation losses, and Adam.

mod adam;
pub mod check;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use tape::{FuseEntry, NodeId, RegionFusePlan, Tape, Tensor};

use alloc::vec::Vec;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum LearnError {
    #[error("non-finite gradient in parameter slot {slot}")]
    NonFiniteGradient { slot: usize },
    #[error("training loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint layer dimensions do not chain")]
    BadLayerChain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Softplus,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
            Activation::Softplus => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Activation> {
        Some(match tag {
            0 => Activation::Linear,
            1 => Activation::Relu,
            2 => Activation::Sigmoid,
            3 => Activation::Softplus,
            _ => return None,
        })
    }
}

/// One dense layer: weight `[in, out]`, bias `[out]`, then activation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape[1]
    }
}

/// Fully-connected net applied row-wise; the HD-map heads are all instances
/// of this with per-cell feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
}

impl DenseNet {
    /// Xavier-uniform initialization with zero biases.
    pub fn xavier<R: Rng>(dims: &[usize], activations: &[Activation], rng: &mut R) -> DenseNet {
        assert!(dims.len() >= 2);
        assert_eq!(activations.len(), dims.len() - 1);
        let mut layers = Vec::new();
        for (i, &act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let limit = crate::math::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            layers.push(Layer {
                weight: Tensor::from_vec(&[fan_in, fan_out], data),
                bias: Tensor::zeros(&[fan_out]),
                activation: act,
            });
        }
        DenseNet { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<DenseNet, LearnError> {
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(LearnError::BadLayerChain);
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Parameter buffers in a fixed order (weight, bias per layer), for the
    /// optimizer.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data.as_mut_slice(), l.bias.data.as_mut_slice()])
            .collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.numel(), l.bias.numel()])
            .collect()
    }

    /// Registers the parameters on a tape for one training step.
    pub fn bind(&self, tape: &mut Tape) -> BoundNet {
        let mut bound = BoundNet { params: Vec::new(), activations: Vec::new() };
        for layer in &self.layers {
            let w = tape.leaf(layer.weight.clone());
            let b = tape.leaf(layer.bias.clone());
            bound.params.push((w, b));
            bound.activations.push(layer.activation);
        }
        bound
    }

    /// Plain row-wise forward without a tape, for frozen inference.
    pub fn infer(&self, input: &Tensor) -> Tensor {
        let (mut n, mut cur) = (input.shape[0], input.clone());
        if input.shape.len() == 1 {
            n = 1;
            cur = Tensor::from_vec(&[1, input.numel()], input.data.clone());
        }
        for layer in &self.layers {
            let (k, m) = (layer.in_dim(), layer.out_dim());
            assert_eq!(cur.shape[1], k, "layer input width");
            let mut out = alloc::vec![0.0; n * m];
            for i in 0..n {
                for kk in 0..k {
                    let av = cur.data[i * k + kk];
                    if av == 0.0 {
                        continue;
                    }
                    let wrow = &layer.weight.data[kk * m..(kk + 1) * m];
                    let orow = &mut out[i * m..(i + 1) * m];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o += av * wv;
                    }
                }
                for j in 0..m {
                    let v = out[i * m + j] + layer.bias.data[j];
                    out[i * m + j] = match layer.activation {
                        Activation::Linear => v,
                        Activation::Relu => v.max(0.0),
                        Activation::Sigmoid => crate::math::sigmoid(v),
                        Activation::Softplus => crate::math::softplus(v),
                    };
                }
            }
            cur = Tensor::from_vec(&[n, m], out);
        }
        cur
    }
}

/// Tape-registered parameters of a [`DenseNet`] for one step.
pub struct BoundNet {
    pub params: Vec<(NodeId, NodeId)>,
    activations: Vec<Activation>,
}

impl BoundNet {
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> NodeId {
        let mut x = input;
        for (&(w, b), &act) in self.params.iter().zip(&self.activations) {
            let mm = tape.matmul(x, w);
            let lin = tape.add_row(mm, b);
            x = match act {
                Activation::Linear => lin,
                Activation::Relu => tape.relu(lin),
                Activation::Sigmoid => tape.sigmoid(lin),
                Activation::Softplus => tape.softplus(lin),
            };
        }
        x
    }

    /// Gradients in the same order as [`DenseNet::param_slices_mut`].
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.params
            .iter()
            .flat_map(|&(w, b)| [tape.grad_tensor(w), tape.grad_tensor(b)])
            .collect()
    }
}

/// Applies one Adam step to a net from tape gradients.
pub fn apply_step(
    net: &mut DenseNet,
    adam: &mut AdamState,
    grads: &[Tensor],
) -> Result<(), LearnError> {
    let mut params = net.param_slices_mut();
    let grad_slices: Vec<&[f64]> = grads.iter().map(|g| g.data.as_slice()).collect();
    adam.step(&mut params, &grad_slices)
}

#[cfg(test)]
mod tests {
    use super::check::{central_diff_grad, fill_pseudo, max_rel_err, DEFAULT_STEP};
    use super::*;
    use rand::SeedableRng;

    const OP_TOL: f64 = 1e-6;

    fn tensor_filled(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
        let mut t = Tensor::zeros(shape);
        fill_pseudo(seed, lo, hi, &mut t.data);
        t
    }

    /// Checks tape gradients of `build` w.r.t. its first input against
    /// central differences.
    fn check_op<F>(inputs: &[Tensor], build: F, tol: f64)
    where
        F: Fn(&mut Tape, &[NodeId]) -> NodeId,
    {
        for which in 0..inputs.len() {
            let mut tape = Tape::new();
            let ids: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
            let loss = build(&mut tape, &ids);
            tape.backward(loss);
            let analytic = tape.grad(ids[which]).to_vec();

            let numeric = central_diff_grad(
                |x: &[f64]| {
                    let mut tape = Tape::new();
                    let ids: Vec<NodeId> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, t)| {
                            if i == which {
                                tape.leaf(Tensor::from_vec(&t.shape, x.to_vec()))
                            } else {
                                tape.leaf(t.clone())
                            }
                        })
                        .collect();
                    let loss = build(&mut tape, &ids);
                    tape.data(loss).data[0]
                },
                &inputs[which].data,
                DEFAULT_STEP,
            );
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < tol, "input {which}: rel err {err}");
        }
    }

    /// Random linear functional so constant-sum outputs still exercise the
    /// backward pass.
    fn pick(tape: &mut Tape, x: NodeId, seed: u64) -> NodeId {
        let shape = tape.data(x).shape.clone();
        let r = tensor_filled(&shape, seed, -1.0, 1.0);
        let r = tape.leaf(r);
        let prod = tape.mul(x, r);
        tape.mean(prod)
    }

    #[test]
    fn grad_matmul() {
        let a = tensor_filled(&[3, 4], 1, -1.0, 1.0);
        let b = tensor_filled(&[4, 2], 2, -1.0, 1.0);
        check_op(&[a, b], |t, ids| {
            let y = t.matmul(ids[0], ids[1]);
            pick(t, y, 77)
        }, OP_TOL);
    }

    #[test]
    fn grad_add_sub_mul() {
        let a = tensor_filled(&[2, 5], 3, -1.0, 1.0);
        let b = tensor_filled(&[2, 5], 4, -1.0, 1.0);
        check_op(&[a.clone(), b.clone()], |t, ids| {
            let y = t.add(ids[0], ids[1]);
            pick(t, y, 78)
        }, OP_TOL);
        check_op(&[a.clone(), b.clone()], |t, ids| {
            let y = t.sub(ids[0], ids[1]);
            pick(t, y, 79)
        }, OP_TOL);
        check_op(&[a, b], |t, ids| {
            let y = t.mul(ids[0], ids[1]);
            pick(t, y, 80)
        }, OP_TOL);
    }

    #[test]
    fn grad_add_row_and_concat() {
        let a = tensor_filled(&[3, 4], 5, -1.0, 1.0);
        let bias = tensor_filled(&[4], 6, -0.5, 0.5);
        check_op(&[a, bias], |t, ids| {
            let y = t.add_row(ids[0], ids[1]);
            pick(t, y, 81)
        }, OP_TOL);

        let a = tensor_filled(&[2, 3], 7, -1.0, 1.0);
        let b = tensor_filled(&[2, 2], 8, -1.0, 1.0);
        check_op(&[a, b], |t, ids| {
            let y = t.concat(ids[0], ids[1]);
            pick(t, y, 82)
        }, OP_TOL);
    }

    #[test]
    fn grad_elementwise_activations() {
        // Keep relu inputs away from the kink.
        let pos = tensor_filled(&[2, 4], 9, 0.2, 1.2);
        let neg = tensor_filled(&[2, 4], 10, -1.2, -0.2);
        let mixed = Tensor::from_vec(
            &[2, 4],
            pos.data.iter().take(4).chain(neg.data.iter().take(4)).cloned().collect(),
        );
        check_op(&[mixed], |t, ids| {
            let y = t.relu(ids[0]);
            pick(t, y, 83)
        }, OP_TOL);

        let x = tensor_filled(&[2, 4], 11, -2.0, 2.0);
        check_op(&[x.clone()], |t, ids| {
            let y = t.sigmoid(ids[0]);
            pick(t, y, 84)
        }, OP_TOL);
        check_op(&[x], |t, ids| {
            let y = t.softplus(ids[0]);
            pick(t, y, 85)
        }, OP_TOL);

        let positive = tensor_filled(&[2, 4], 12, 0.3, 2.0);
        check_op(&[positive], |t, ids| {
            let y = t.log(ids[0]);
            pick(t, y, 86)
        }, OP_TOL);
    }

    #[test]
    fn grad_softmax_mean_weighted_sum() {
        let x = tensor_filled(&[3, 4], 13, -1.5, 1.5);
        check_op(&[x.clone()], |t, ids| {
            let y = t.softmax(ids[0]);
            pick(t, y, 87)
        }, OP_TOL);
        check_op(&[x.clone()], |t, ids| t.mean(ids[0]), OP_TOL);

        let a = tensor_filled(&[2, 3], 14, -1.0, 1.0);
        let b = tensor_filled(&[2, 3], 15, -1.0, 1.0);
        check_op(&[a, b], |t, ids| {
            let y = t.weighted_sum(&[(ids[0], 1.0), (ids[1], 0.1)]);
            pick(t, y, 88)
        }, OP_TOL);
    }

    #[test]
    fn grad_classification_losses() {
        let logits = tensor_filled(&[5, 4], 16, -1.5, 1.5);
        let targets = [0usize, 3, 1, 2, 2];
        check_op(&[logits.clone()], |t, ids| t.cross_entropy(ids[0], &targets), OP_TOL);
        check_op(&[logits.clone()], |t, ids| t.focal_loss(ids[0], &targets, 1.0, 2.0), OP_TOL);
        check_op(&[logits], |t, ids| t.focal_loss(ids[0], &targets, 0.25, 1.5), OP_TOL);
    }

    #[test]
    fn grad_kl_div_through_softmax() {
        let mut p = tensor_filled(&[1, 4], 17, 0.1, 1.0);
        let sum: f64 = p.data.iter().sum();
        p.data.iter_mut().for_each(|v| *v /= sum);
        let logits = tensor_filled(&[1, 4], 18, -1.0, 1.0);
        check_op(&[logits], |t, ids| {
            let q = t.softmax(ids[0]);
            t.kl_div(&p, q)
        }, OP_TOL);
    }

    #[test]
    fn grad_nll_probs_and_region_fuse() {
        let logits = tensor_filled(&[4, 4], 19, -1.0, 1.0);
        let targets = [1usize, 0, 3, 2];
        check_op(&[logits], |t, ids| {
            let probs = t.softmax(ids[0]);
            t.nll_probs(probs, &targets)
        }, OP_TOL);

        // Two frames, three fused cells, bilinear-style fractional weights.
        let raw0 = tensor_filled(&[5], 20, -1.0, 1.0);
        let raw1 = tensor_filled(&[4], 21, -1.0, 1.0);
        let plan = RegionFusePlan {
            entries: alloc::vec![
                FuseEntry { frame: 0, cell: 0, weight: 0.7, probs: [0.6, 0.2, 0.1, 0.1] },
                FuseEntry { frame: 1, cell: 1, weight: 0.3, probs: [0.1, 0.7, 0.1, 0.1] },
                FuseEntry { frame: 0, cell: 2, weight: 1.0, probs: [0.25, 0.25, 0.25, 0.25] },
                FuseEntry { frame: 0, cell: 3, weight: 0.5, probs: [0.05, 0.05, 0.8, 0.1] },
                FuseEntry { frame: 1, cell: 0, weight: 0.5, probs: [0.3, 0.3, 0.2, 0.2] },
                FuseEntry { frame: 1, cell: 3, weight: 0.25, probs: [0.4, 0.1, 0.4, 0.1] },
            ],
            offsets: alloc::vec![0, 2, 4, 6],
        };
        let targets = [0usize, 2, 1];
        check_op(&[raw0, raw1], move |t, ids| {
            let c0 = t.sigmoid(ids[0]);
            let c1 = t.sigmoid(ids[1]);
            let fused = t.region_fuse(&[c0, c1], plan.clone());
            t.nll_probs(fused, &targets)
        }, OP_TOL);
    }

    #[test]
    fn infer_matches_tape_forward() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let net = DenseNet::xavier(
            &[6, 8, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        let x = tensor_filled(&[7, 6], 22, -1.0, 1.0);
        let plain = net.infer(&x);
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape);
        let xid = tape.leaf(x);
        let y = bound.forward(&mut tape, xid);
        for (a, b) in plain.data.iter().zip(&tape.data(y).data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_net_separates_toy_set() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut net = DenseNet::xavier(
            &[2, 8, 2],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        );
        // Linearly separable by the sign of the first coordinate with a
        // margin of 0.5.
        let mut xs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..40 {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            let x = side * (0.5 + (i as f64) * 0.03);
            let y = ((i * 7) % 11) as f64 / 11.0 - 0.5;
            xs.extend_from_slice(&[x, y]);
            targets.push(if side > 0.0 { 1usize } else { 0 });
        }
        let input = Tensor::from_vec(&[40, 2], xs);
        let mut adam = AdamState::new(&net.param_lens(), AdamConfig::with_lr(1e-2));
        for _ in 0..200 {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let xid = tape.leaf(input.clone());
            let logits = bound.forward(&mut tape, xid);
            let loss = tape.cross_entropy(logits, &targets);
            tape.backward(loss);
            let grads = bound.grads(&tape);
            apply_step(&mut net, &mut adam, &grads).unwrap();
        }
        let out = net.infer(&input);
        let mut correct = 0;
        for (r, &t) in targets.iter().enumerate() {
            let row = &out.data[r * 2..(r + 1) * 2];
            let pred = if row[1] > row[0] { 1 } else { 0 };
            if pred == t {
                correct += 1;
            }
        }
        assert_eq!(correct, 40, "toy set must be fully separated");
    }

    #[test]
    fn bad_layer_chain_is_rejected() {
        let l1 = Layer {
            weight: Tensor::zeros(&[3, 4]),
            bias: Tensor::zeros(&[4]),
            activation: Activation::Relu,
        };
        let l2 = Layer {
            weight: Tensor::zeros(&[5, 2]),
            bias: Tensor::zeros(&[2]),
            activation: Activation::Linear,
        };
        assert_eq!(DenseNet::from_layers(alloc::vec![l1, l2]), Err(LearnError::BadLayerChain));
    }
}
