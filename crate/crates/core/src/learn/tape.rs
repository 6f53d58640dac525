//! Reverse-mode differentiation over small dense computations.
//!
//! A [`Tape`] is an arena of nodes; every operation computes its forward
//! value immediately and records which nodes it read. [`Tape::backward`]
//! walks the arena once in reverse creation order (which is a reverse
//! topological order by construction) and accumulates exact analytic
//! gradients into the parents.
//!
//! Shapes must match exactly; there is no broadcasting beyond the dedicated
//! row-bias op. Shape violations are contract bugs and panic.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::NUM_CLASSES;

/// Dense row-major array of f64 with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows × columns of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// One bilinear-sampling contribution of a frame's confidence map to a fused
/// world cell: `weight` is the bilinear weight of the (packed) local cell
/// and `probs` the frame's class distribution there.
#[derive(Clone, Debug)]
pub struct FuseEntry {
    pub frame: usize,
    pub cell: usize,
    pub weight: f64,
    pub probs: [f64; NUM_CLASSES],
}

/// Sampling plan for differentiable region-centric fusion: per fused cell,
/// the slice `entries[offsets[k]..offsets[k+1]]` lists every contribution.
/// Every fused cell must keep at least one entry with positive weight.
#[derive(Clone, Debug, Default)]
pub struct RegionFusePlan {
    pub entries: Vec<FuseEntry>,
    pub offsets: Vec<usize>,
}

impl RegionFusePlan {
    pub fn n_cells(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }
}

enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softplus(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    Mean(NodeId),
    WeightedSum(Vec<(NodeId, f64)>),
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    FocalLoss { logits: NodeId, targets: Vec<usize>, alpha: f64, gamma: f64 },
    KlDiv { p: Tensor, q: NodeId },
    NllProbs { probs: NodeId, targets: Vec<usize> },
    RegionFuse { confs: Vec<NodeId>, plan: Box<RegionFusePlan> },
}

struct Node {
    data: Tensor,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let (n, k) = logits.dims2();
    let mut out = logits.clone();
    for r in 0..n {
        let row = &mut out.data[r * k..(r + 1) * k];
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = math::exp(*v - mx);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Tape {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, data: Tensor, op: Op) -> NodeId {
        let grad = vec![0.0; data.numel()];
        self.nodes.push(Node { data, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    pub fn data(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].data
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        Tensor::from_vec(&node.data.shape, node.grad.clone())
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (n, ka) = self.data(a).dims2();
        let (kb, m) = self.data(b).dims2();
        assert_eq!(ka, kb, "matmul inner dims {ka} vs {kb}");
        let mut out = vec![0.0; n * m];
        let da = &self.nodes[a.0].data.data;
        let db = &self.nodes[b.0].data.data;
        for i in 0..n {
            for k in 0..ka {
                let av = da[i * ka + k];
                if av == 0.0 {
                    continue;
                }
                let brow = &db[k * m..(k + 1) * m];
                let orow = &mut out[i * m..(i + 1) * m];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
        self.push(Tensor::from_vec(&[n, m], out), Op::Matmul(a, b))
    }

    fn elementwise2(&mut self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64, op: Op) -> NodeId {
        assert_eq!(
            self.data(a).shape,
            self.data(b).shape,
            "elementwise shape mismatch"
        );
        let data: Vec<f64> = self.nodes[a.0]
            .data
            .data
            .iter()
            .zip(&self.nodes[b.0].data.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.data(a).shape.clone();
        self.push(Tensor::from_vec(&shape, data), op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise2(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise2(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.elementwise2(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `[n, m] + [m]`, the bias pattern of a dense layer.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (n, m) = self.data(a).dims2();
        assert_eq!(self.data(bias).shape, &[m], "bias shape mismatch");
        let mut data = self.nodes[a.0].data.data.clone();
        let db = &self.nodes[bias.0].data.data;
        for i in 0..n {
            for j in 0..m {
                data[i * m + j] += db[j];
            }
        }
        self.push(Tensor::from_vec(&[n, m], data), Op::AddRow(a, bias))
    }

    /// Concatenates two 2-D tensors along the last axis.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (na, ma) = self.data(a).dims2();
        let (nb, mb) = self.data(b).dims2();
        assert_eq!(na, nb, "concat row mismatch");
        let mut data = Vec::with_capacity(na * (ma + mb));
        for i in 0..na {
            data.extend_from_slice(&self.nodes[a.0].data.data[i * ma..(i + 1) * ma]);
            data.extend_from_slice(&self.nodes[b.0].data.data[i * mb..(i + 1) * mb]);
        }
        self.push(Tensor::from_vec(&[na, ma + mb], data), Op::Concat(a, b))
    }

    fn elementwise1(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.nodes[a.0].data.data.iter().map(|&x| f(x)).collect();
        let shape = self.data(a).shape.clone();
        self.push(Tensor::from_vec(&shape, data), op)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.elementwise1(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.elementwise1(a, math::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.elementwise1(a, math::softplus, Op::Softplus(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.elementwise1(a, math::ln, Op::Log(a))
    }

    /// Softmax over the last axis of a 2-D tensor.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let out = softmax_rows(self.data(a));
        self.push(out, Op::Softmax(a))
    }

    /// Mean of all entries, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.data(a).numel() as f64;
        let s: f64 = self.nodes[a.0].data.data.iter().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(a))
    }

    /// Elementwise `Σ wᵢ xᵢ` over same-shape nodes with constant weights.
    pub fn weighted_sum(&mut self, terms: &[(NodeId, f64)]) -> NodeId {
        assert!(!terms.is_empty());
        let shape = self.data(terms[0].0).shape.clone();
        for &(id, _) in terms {
            assert_eq!(self.data(id).shape, shape, "weighted_sum shape mismatch");
        }
        let mut data = vec![0.0; shape.iter().product()];
        for &(id, w) in terms {
            for (o, &x) in data.iter_mut().zip(&self.nodes[id.0].data.data) {
                *o += w * x;
            }
        }
        self.push(Tensor::from_vec(&shape, data), Op::WeightedSum(terms.to_vec()))
    }

    /// Mean over rows of `−ln p_target`, `p` from softmax of the logits.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let (n, k) = self.data(logits).dims2();
        assert_eq!(targets.len(), n, "one target per row");
        assert!(targets.iter().all(|&t| t < k), "target class in range");
        let p = softmax_rows(self.data(logits));
        let loss = (0..n)
            .map(|r| -math::ln(p.data[r * k + targets[r]]))
            .sum::<f64>()
            / n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec() },
        )
    }

    /// Mean over rows of `−α (1−p_t)^γ ln p_t`: cross-entropy dynamically
    /// scaled down on rows the model already gets right.
    pub fn focal_loss(&mut self, logits: NodeId, targets: &[usize], alpha: f64, gamma: f64) -> NodeId {
        let (n, k) = self.data(logits).dims2();
        assert_eq!(targets.len(), n, "one target per row");
        assert!(targets.iter().all(|&t| t < k), "target class in range");
        let p = softmax_rows(self.data(logits));
        let mut loss = 0.0;
        for r in 0..n {
            let pt = p.data[r * k + targets[r]];
            loss += -alpha * math::powf(1.0 - pt, gamma) * math::ln(pt);
        }
        self.push(
            Tensor::scalar(loss / n as f64),
            Op::FocalLoss { logits, targets: targets.to_vec(), alpha, gamma },
        )
    }

    /// `KL(p ‖ q) = Σ p (ln p − ln q)` with `0 ln 0 := 0`. `p` is a constant
    /// target distribution; gradients flow into `q` only.
    pub fn kl_div(&mut self, p: &Tensor, q: NodeId) -> NodeId {
        assert_eq!(p.shape, self.data(q).shape, "kl_div shape mismatch");
        let mut kl = 0.0;
        for (&pi, &qi) in p.data.iter().zip(&self.nodes[q.0].data.data) {
            if pi > 0.0 {
                kl += pi * (math::ln(pi) - math::ln(qi));
            }
        }
        self.push(Tensor::scalar(kl), Op::KlDiv { p: p.clone(), q })
    }

    /// Mean over rows of `−ln probs[row, target]` for probabilities that are
    /// already normalized (e.g. fused distributions).
    pub fn nll_probs(&mut self, probs: NodeId, targets: &[usize]) -> NodeId {
        let (n, k) = self.data(probs).dims2();
        assert_eq!(targets.len(), n, "one target per row");
        let loss = (0..n)
            .map(|r| -math::ln(self.nodes[probs.0].data.data[r * k + targets[r]]))
            .sum::<f64>()
            / n as f64;
        self.push(
            Tensor::scalar(loss),
            Op::NllProbs { probs, targets: targets.to_vec() },
        )
    }

    /// Differentiable region-centric fusion: per fused cell, the weighted
    /// average of per-frame class distributions with weights
    /// `bilinear_weight × confidence`. `confs[i]` is frame `i`'s packed
    /// confidence vector; output is `[plan.n_cells(), NUM_CLASSES]`.
    pub fn region_fuse(&mut self, confs: &[NodeId], plan: RegionFusePlan) -> NodeId {
        let m = plan.n_cells();
        let mut out = vec![0.0; m * NUM_CLASSES];
        for cell in 0..m {
            let mut num = [0.0; NUM_CLASSES];
            let mut den = 0.0;
            for e in &plan.entries[plan.offsets[cell]..plan.offsets[cell + 1]] {
                let c = self.nodes[confs[e.frame].0].data.data[e.cell];
                let w = e.weight * c;
                den += w;
                for k in 0..NUM_CLASSES {
                    num[k] += w * e.probs[k];
                }
            }
            assert!(den > 0.0, "fused cell {cell} has no positive-weight entry");
            for k in 0..NUM_CLASSES {
                out[cell * NUM_CLASSES + k] = num[k] / den;
            }
        }
        self.push(
            Tensor::from_vec(&[m, NUM_CLASSES], out),
            Op::RegionFuse { confs: confs.to_vec(), plan: Box::new(plan) },
        )
    }

    /// Seeds the root gradient with 1 and accumulates into every parent.
    /// The root must be scalar.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(self.data(root).numel(), 1, "backward root must be scalar");
        for g in self.nodes[root.0].grad.iter_mut() {
            *g = 1.0;
        }
        for i in (0..=root.0).rev() {
            // Detach this node's gradient so parents can be borrowed mutably.
            let grad = core::mem::take(&mut self.nodes[i].grad);
            self.propagate(i, &grad);
            self.nodes[i].grad = grad;
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // Op is moved out and restored so the borrow checker allows mutating
        // parent nodes while reading op metadata.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (n, k) = self.data(*a).dims2();
                let (_, m) = self.data(*b).dims2();
                let da = self.nodes[a.0].data.data.clone();
                let db = self.nodes[b.0].data.data.clone();
                {
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..n {
                        for c in 0..k {
                            let mut acc = 0.0;
                            for j in 0..m {
                                acc += g[r * m + j] * db[c * m + j];
                            }
                            ga[r * k + c] += acc;
                        }
                    }
                }
                let gb = &mut self.nodes[b.0].grad;
                for c in 0..k {
                    for j in 0..m {
                        let mut acc = 0.0;
                        for r in 0..n {
                            acc += da[r * k + c] * g[r * m + j];
                        }
                        gb[c * m + j] += acc;
                    }
                }
            }
            Op::Add(a, b) => {
                for (ga, &gi) in self.nodes[a.0].grad.iter_mut().zip(g) {
                    *ga += gi;
                }
                for (gb, &gi) in self.nodes[b.0].grad.iter_mut().zip(g) {
                    *gb += gi;
                }
            }
            Op::Sub(a, b) => {
                for (ga, &gi) in self.nodes[a.0].grad.iter_mut().zip(g) {
                    *ga += gi;
                }
                for (gb, &gi) in self.nodes[b.0].grad.iter_mut().zip(g) {
                    *gb -= gi;
                }
            }
            Op::Mul(a, b) => {
                let da = self.nodes[a.0].data.data.clone();
                let db = self.nodes[b.0].data.data.clone();
                for ((ga, &bv), &gi) in self.nodes[a.0].grad.iter_mut().zip(&db).zip(g) {
                    *ga += bv * gi;
                }
                for ((gb, &av), &gi) in self.nodes[b.0].grad.iter_mut().zip(&da).zip(g) {
                    *gb += av * gi;
                }
            }
            Op::AddRow(a, bias) => {
                let (n, m) = self.data(*a).dims2();
                for (ga, &gi) in self.nodes[a.0].grad.iter_mut().zip(g) {
                    *ga += gi;
                }
                let gb = &mut self.nodes[bias.0].grad;
                for r in 0..n {
                    for j in 0..m {
                        gb[j] += g[r * m + j];
                    }
                }
            }
            Op::Concat(a, b) => {
                let (n, ma) = self.data(*a).dims2();
                let (_, mb) = self.data(*b).dims2();
                let w = ma + mb;
                {
                    let ga = &mut self.nodes[a.0].grad;
                    for r in 0..n {
                        for j in 0..ma {
                            ga[r * ma + j] += g[r * w + j];
                        }
                    }
                }
                let gb = &mut self.nodes[b.0].grad;
                for r in 0..n {
                    for j in 0..mb {
                        gb[r * mb + j] += g[r * w + ma + j];
                    }
                }
            }
            Op::Relu(a) => {
                let da = self.nodes[a.0].data.data.clone();
                for ((ga, &x), &gi) in self.nodes[a.0].grad.iter_mut().zip(&da).zip(g) {
                    if x > 0.0 {
                        *ga += gi;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].data.data.clone();
                for ((ga, &yi), &gi) in self.nodes[a.0].grad.iter_mut().zip(&y).zip(g) {
                    *ga += yi * (1.0 - yi) * gi;
                }
            }
            Op::Softplus(a) => {
                let da = self.nodes[a.0].data.data.clone();
                for ((ga, &x), &gi) in self.nodes[a.0].grad.iter_mut().zip(&da).zip(g) {
                    *ga += math::sigmoid(x) * gi;
                }
            }
            Op::Log(a) => {
                let da = self.nodes[a.0].data.data.clone();
                for ((ga, &x), &gi) in self.nodes[a.0].grad.iter_mut().zip(&da).zip(g) {
                    *ga += gi / x;
                }
            }
            Op::Softmax(a) => {
                let y = self.nodes[i].data.data.clone();
                let (n, k) = self.data(*a).dims2();
                let ga = &mut self.nodes[a.0].grad;
                for r in 0..n {
                    let yr = &y[r * k..(r + 1) * k];
                    let gr = &g[r * k..(r + 1) * k];
                    let dot: f64 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                    for j in 0..k {
                        ga[r * k + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::Mean(a) => {
                let n = self.data(*a).numel() as f64;
                let gi = g[0] / n;
                for ga in self.nodes[a.0].grad.iter_mut() {
                    *ga += gi;
                }
            }
            Op::WeightedSum(terms) => {
                for &(id, w) in terms {
                    for (ga, &gi) in self.nodes[id.0].grad.iter_mut().zip(g) {
                        *ga += w * gi;
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let p = softmax_rows(self.data(*logits));
                let (n, k) = self.data(*logits).dims2();
                let scale = g[0] / n as f64;
                let gl = &mut self.nodes[logits.0].grad;
                for r in 0..n {
                    for j in 0..k {
                        let delta = if j == targets[r] { 1.0 } else { 0.0 };
                        gl[r * k + j] += scale * (p.data[r * k + j] - delta);
                    }
                }
            }
            Op::FocalLoss { logits, targets, alpha, gamma } => {
                // Row loss L(u) = −α (1−u)^γ ln u with u = p_target;
                // dL/du = α [ γ (1−u)^{γ−1} ln u − (1−u)^γ / u ],
                // du/dz_j = u (δ_tj − p_j).
                let p = softmax_rows(self.data(*logits));
                let (n, k) = self.data(*logits).dims2();
                let scale = g[0] / n as f64;
                let gl = &mut self.nodes[logits.0].grad;
                for r in 0..n {
                    let u = p.data[r * k + targets[r]];
                    let mut dl_du = -alpha * math::powf(1.0 - u, *gamma) / u;
                    if *gamma != 0.0 {
                        dl_du += alpha * gamma * math::powf(1.0 - u, gamma - 1.0) * math::ln(u);
                    }
                    for j in 0..k {
                        let delta = if j == targets[r] { 1.0 } else { 0.0 };
                        gl[r * k + j] += scale * dl_du * u * (delta - p.data[r * k + j]);
                    }
                }
            }
            Op::KlDiv { p, q } => {
                let dq = self.nodes[q.0].data.data.clone();
                for ((gq, &pi), &qi) in self.nodes[q.0].grad.iter_mut().zip(&p.data).zip(&dq) {
                    if pi > 0.0 {
                        *gq += g[0] * (-pi / qi);
                    }
                }
            }
            Op::NllProbs { probs, targets } => {
                let (n, k) = self.data(*probs).dims2();
                let dp = self.nodes[probs.0].data.data.clone();
                let scale = g[0] / n as f64;
                let gp = &mut self.nodes[probs.0].grad;
                for (r, &t) in targets.iter().enumerate() {
                    gp[r * k + t] += scale * (-1.0 / dp[r * k + t]);
                }
            }
            Op::RegionFuse { confs, plan } => {
                let fused = self.nodes[i].data.data.clone();
                let conf_data: Vec<Vec<f64>> = confs
                    .iter()
                    .map(|id| self.nodes[id.0].data.data.clone())
                    .collect();
                for cell in 0..plan.n_cells() {
                    let range = plan.offsets[cell]..plan.offsets[cell + 1];
                    let mut den = 0.0;
                    for e in &plan.entries[range.clone()] {
                        den += e.weight * conf_data[e.frame][e.cell];
                    }
                    let p_cell = &fused[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES];
                    let g_cell = &g[cell * NUM_CLASSES..(cell + 1) * NUM_CLASSES];
                    for e in &plan.entries[range] {
                        // ∂P_c/∂conf = w (s_c − P_c) / den.
                        let mut acc = 0.0;
                        for k in 0..NUM_CLASSES {
                            acc += g_cell[k] * (e.probs[k] - p_cell[k]);
                        }
                        self.nodes[confs[e.frame].0].grad[e.cell] += e.weight * acc / den;
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}
