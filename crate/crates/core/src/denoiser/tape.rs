//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! Every operation appends a node holding its value and whatever it needs to
//! propagate gradients; [`Tape::backward`] walks the list in reverse.

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node on the tape.
pub type Var = usize;

const LN_EPS: f64 = 1e-5;

enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    PairProduct { q: Var, k: Var, n: usize, scale: f64 },
    HeadSum { x: Var, heads: usize },
    AttnSoftmax { x: Var, n: usize },
    AttnApply { attn: Var, v: Var, n: usize },
    Pna { x: Var, argmax: Vec<usize>, argmin: Vec<usize>, std: Vec<f64> },
    Symmetrize { x: Var, n: usize },
    CrossEntropy { logits: Var, targets: Vec<usize>, weights: Vec<f64>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// `out += a · b` for row-major `a` (`r × k`) and `b` (`k × c`).
///
/// Register-tiled in 4 × 8 output blocks; every output accumulates over `k` in
/// index order, so results do not depend on the tiling.
fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], r: usize, k: usize, c: usize) {
    const TR: usize = 4;
    const TC: usize = 8;
    let (r_main, c_main) = (r - r % TR, c - c % TC);
    for i0 in (0..r_main).step_by(TR) {
        for j0 in (0..c_main).step_by(TC) {
            let mut acc = [[0.0f64; TC]; TR];
            for (di, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&out[(i0 + di) * c + j0..(i0 + di) * c + j0 + TC]);
            }
            for p in 0..k {
                let bp: &[f64; TC] = b[p * c + j0..p * c + j0 + TC].try_into().unwrap();
                for (di, row) in acc.iter_mut().enumerate() {
                    let x = a[(i0 + di) * k + p];
                    for (o, &y) in row.iter_mut().zip(bp) {
                        *o += x * y;
                    }
                }
            }
            for (di, row) in acc.iter().enumerate() {
                out[(i0 + di) * c + j0..(i0 + di) * c + j0 + TC].copy_from_slice(row);
            }
        }
        for i in i0..i0 + TR {
            for j in c_main..c {
                let mut o = out[i * c + j];
                for p in 0..k {
                    o += a[i * k + p] * b[p * c + j];
                }
                out[i * c + j] = o;
            }
        }
    }
    for i in r_main..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let x = a[i * k + p];
            for (o, &y) in out_row.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *o += x * y;
            }
        }
    }
}

fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j];
        }
    }
    out
}

fn matmul_into(a: &Tensor, b: &Tensor, out: &mut [f64]) {
    gemm_acc(&a.data, &b.data, out, a.rows, a.cols, b.cols);
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, &b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v].value
    }

    /// Sign of every ReLU input on the tape, in recording order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                out.extend(self.nodes[a].value.data.iter().map(|&x| x > 0.0));
            }
        }
        out
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf bound to parameter slot `index`; its gradient is reported under that slot.
    pub fn param(&mut self, index: usize, t: &Tensor) -> Var {
        self.push(t.clone(), Op::Param(index))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.cols, tb.rows, "matmul shapes");
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        matmul_into(ta, tb, &mut out.data);
        self.push(out, Op::MatMul(a, b))
    }

    /// Adds a `1 × c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ta, tr) = (self.value(a), self.value(row));
        assert_eq!((tr.rows, tr.cols), (1, ta.cols), "add_row shapes");
        let mut out = ta.clone();
        for chunk in out.data.chunks_mut(ta.cols) {
            add_into(chunk, &tr.data);
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "add shapes");
        let mut out = ta.clone();
        add_into(&mut out.data, &tb.data);
        self.push(out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!((ta.rows, ta.cols), (tb.rows, tb.cols), "mul shapes");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Mul(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data.iter().map(|&x| x.max(0.0)).collect();
        let out = Tensor::from_vec(ta.rows, ta.cols, data);
        self.push(out, Op::Relu(a))
    }

    /// Row-wise layer normalization with `1 × c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let tx = self.value(x);
        let (g, b) = (&self.value(gain).data, &self.value(bias).data);
        let c = tx.cols;
        let mut xhat = vec![0.0; tx.len()];
        let mut rstd = vec![0.0; tx.rows];
        let mut out = Tensor::zeros(tx.rows, c);
        for r in 0..tx.rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[r * c + j] = h;
                out.data[r * c + j] = h * g[j] + b[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// `out[i·n + j, c] = scale · q[i, c] · k[j, c]`.
    pub fn pair_product(&mut self, q: Var, k: Var, n: usize, scale: f64) -> Var {
        let (tq, tk) = (self.value(q), self.value(k));
        let c = tq.cols;
        let mut out = Tensor::zeros(n * n, c);
        for i in 0..n {
            let qi = tq.row(i);
            for j in 0..n {
                let kj = tk.row(j);
                let o = &mut out.data[(i * n + j) * c..(i * n + j + 1) * c];
                for ch in 0..c {
                    o[ch] = scale * qi[ch] * kj[ch];
                }
            }
        }
        self.push(out, Op::PairProduct { q, k, n, scale })
    }

    /// Sums contiguous channel groups: `rows × (heads·w)` → `rows × heads`.
    pub fn head_sum(&mut self, x: Var, heads: usize) -> Var {
        let tx = self.value(x);
        let w = tx.cols / heads;
        let mut out = Tensor::zeros(tx.rows, heads);
        for r in 0..tx.rows {
            let row = tx.row(r);
            for h in 0..heads {
                out.data[r * heads + h] = row[h * w..(h + 1) * w].iter().sum();
            }
        }
        self.push(out, Op::HeadSum { x, heads })
    }

    /// Softmax over `j` of an `n² × heads` score tensor indexed `[i·n + j, h]`.
    pub fn attn_softmax(&mut self, x: Var, n: usize) -> Var {
        let tx = self.value(x);
        let h = tx.cols;
        let mut out = Tensor::zeros(tx.rows, h);
        for i in 0..n {
            for head in 0..h {
                let at = |j: usize| (i * n + j) * h + head;
                let m = (0..n).map(|j| tx.data[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for j in 0..n {
                    let e = (tx.data[at(j)] - m).exp();
                    out.data[at(j)] = e;
                    z += e;
                }
                for j in 0..n {
                    out.data[at(j)] /= z;
                }
            }
        }
        self.push(out, Op::AttnSoftmax { x, n })
    }

    /// `out[i, c] = Σ_j attn[i·n + j, head(c)] · v[j, c]`.
    pub fn attn_apply(&mut self, attn: Var, v: Var, n: usize) -> Var {
        let (ta, tv) = (self.value(attn), self.value(v));
        let heads = ta.cols;
        let c = tv.cols;
        let w = c / heads;
        let mut out = Tensor::zeros(n, c);
        for i in 0..n {
            let o = &mut out.data[i * c..(i + 1) * c];
            for j in 0..n {
                let vj = tv.row(j);
                let a = ta.row(i * n + j);
                for ch in 0..c {
                    o[ch] += a[ch / w] * vj[ch];
                }
            }
        }
        self.push(out, Op::AttnApply { attn, v, n })
    }

    /// Column-wise `[max, min, mean, std]` pooling to a `1 × 4c` row.
    pub fn pna_pool(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows, tx.cols);
        let mut out = Tensor::zeros(1, 4 * c);
        let mut argmax = vec![0; c];
        let mut argmin = vec![0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let col = |row: usize| tx.data[row * c + ch];
            for row in 1..r {
                if col(row) > col(argmax[ch]) {
                    argmax[ch] = row;
                }
                if col(row) < col(argmin[ch]) {
                    argmin[ch] = row;
                }
            }
            let mean = (0..r).map(col).sum::<f64>() / r as f64;
            let var = (0..r).map(|row| (col(row) - mean).powi(2)).sum::<f64>() / r as f64;
            std[ch] = var.sqrt();
            out.data[ch] = col(argmax[ch]);
            out.data[c + ch] = col(argmin[ch]);
            out.data[2 * c + ch] = mean;
            out.data[3 * c + ch] = std[ch];
        }
        self.push(out, Op::Pna { x, argmax, argmin, std })
    }

    /// `(E + Eᵀ) / 2` over the first two indices of an `n² × c` tensor.
    pub fn symmetrize(&mut self, x: Var, n: usize) -> Var {
        let tx = self.value(x);
        let c = tx.cols;
        let mut out = Tensor::zeros(n * n, c);
        for i in 0..n {
            for j in 0..n {
                for ch in 0..c {
                    out.data[(i * n + j) * c + ch] =
                        0.5 * (tx.data[(i * n + j) * c + ch] + tx.data[(j * n + i) * c + ch]);
                }
            }
        }
        self.push(out, Op::Symmetrize { x, n })
    }

    /// `Σ_r weights[r] · (−log softmax(logits[r])[targets[r]])` as a `1 × 1` tensor.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Var {
        let tl = self.value(logits);
        let c = tl.cols;
        assert_eq!(targets.len(), tl.rows, "one target per row");
        assert_eq!(weights.len(), tl.rows, "one weight per row");
        let mut probs = vec![0.0; tl.len()];
        let mut total = 0.0;
        for r in 0..tl.rows {
            let row = tl.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
            for j in 0..c {
                probs[r * c + j] = (row[j] - m).exp() / z;
            }
            if weights[r] != 0.0 {
                total += weights[r] * (z.ln() + m - row[targets[r]]);
            }
        }
        self.push(Tensor::from_vec(1, 1, vec![total]), Op::CrossEntropy { logits, targets, weights, probs })
    }

    /// Gradients of scalar node `root` with respect to parameter slots `0..n_params`.
    pub fn backward(&self, root: Var, n_params: usize, shapes: &[(usize, usize)]) -> Vec<Tensor> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![1.0; self.nodes[root].value.len()]);
        let mut out: Vec<Tensor> = shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect();
        assert_eq!(out.len(), n_params);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let len_of = |v: Var| self.nodes[v].value.len();
            match &node.op {
                Op::Input => {}
                Op::Param(p) => add_into(&mut out[*p].data, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (r, k, c) = (ta.rows, ta.cols, tb.cols);
                    let bt = transpose(&tb.data, k, c);
                    gemm_acc(&g, &bt, acc(&mut grads, *a, r * k), r, c, k);
                    let at = transpose(&ta.data, r, k);
                    gemm_acc(&at, &g, acc(&mut grads, *b, k * c), k, r, c);
                }
                Op::AddRow(a, row) => {
                    let c = self.value(*row).cols;
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let gr = acc(&mut grads, *row, c);
                    for chunk in g.chunks(c) {
                        add_into(gr, chunk);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * tb.data[i];
                    }
                    let gb = acc(&mut grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * ta.data[i];
                    }
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let ga = acc(&mut grads, *a, g.len());
                    for i in 0..g.len() {
                        if ta.data[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let c = self.value(*gain).cols;
                    let gvals = self.value(*gain).data.clone();
                    let rows = g.len() / c;
                    {
                        let gg = acc(&mut grads, *gain, c);
                        for r in 0..rows {
                            for j in 0..c {
                                gg[j] += g[r * c + j] * xhat[r * c + j];
                            }
                        }
                    }
                    {
                        let gb = acc(&mut grads, *bias, c);
                        for chunk in g.chunks(c) {
                            add_into(gb, chunk);
                        }
                    }
                    let gx = acc(&mut grads, *x, rows * c);
                    for r in 0..rows {
                        let mut dh = vec![0.0; c];
                        for j in 0..c {
                            dh[j] = g[r * c + j] * gvals[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h =
                            (0..c).map(|j| dh[j] * xhat[r * c + j]).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[r * c + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * c + j] * mean_dh_h);
                        }
                    }
                }
                Op::PairProduct { q, k, n, scale } => {
                    let (tq, tk) = (self.value(*q), self.value(*k));
                    let (n, c) = (*n, tq.cols);
                    let mut gq = vec![0.0; n * c];
                    let mut gk = vec![0.0; n * c];
                    for i in 0..n {
                        for j in 0..n {
                            let gij = &g[(i * n + j) * c..(i * n + j + 1) * c];
                            for ch in 0..c {
                                gq[i * c + ch] += scale * gij[ch] * tk.data[j * c + ch];
                                gk[j * c + ch] += scale * gij[ch] * tq.data[i * c + ch];
                            }
                        }
                    }
                    add_into(acc(&mut grads, *q, n * c), &gq);
                    add_into(acc(&mut grads, *k, n * c), &gk);
                }
                Op::HeadSum { x, heads } => {
                    let cols = self.value(*x).cols;
                    let w = cols / heads;
                    let gx = acc(&mut grads, *x, len_of(*x));
                    for r in 0..g.len() / heads {
                        for ch in 0..cols {
                            gx[r * cols + ch] += g[r * heads + ch / w];
                        }
                    }
                }
                Op::AttnSoftmax { x, n } => {
                    let p = &node.value;
                    let (n, h) = (*n, p.cols);
                    let gx = acc(&mut grads, *x, p.len());
                    for i in 0..n {
                        for head in 0..h {
                            let at = |j: usize| (i * n + j) * h + head;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * p.data[at(j)]).sum();
                            for j in 0..n {
                                gx[at(j)] += p.data[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
                Op::AttnApply { attn, v, n } => {
                    let (ta, tv) = (self.value(*attn), self.value(*v));
                    let (n, heads, c) = (*n, ta.cols, tv.cols);
                    let w = c / heads;
                    let mut gattn = vec![0.0; ta.len()];
                    let mut gv = vec![0.0; tv.len()];
                    for i in 0..n {
                        let gi = &g[i * c..(i + 1) * c];
                        for j in 0..n {
                            let a = ta.row(i * n + j);
                            let vj = tv.row(j);
                            for ch in 0..c {
                                gattn[(i * n + j) * heads + ch / w] += gi[ch] * vj[ch];
                                gv[j * c + ch] += a[ch / w] * gi[ch];
                            }
                        }
                    }
                    add_into(acc(&mut grads, *attn, gattn.len()), &gattn);
                    add_into(acc(&mut grads, *v, gv.len()), &gv);
                }
                Op::Pna { x, argmax, argmin, std } => {
                    let tx = self.value(*x);
                    let (r, c) = (tx.rows, tx.cols);
                    let means: Vec<f64> =
                        (0..c).map(|ch| (0..r).map(|row| tx.data[row * c + ch]).sum::<f64>() / r as f64).collect();
                    let gx = acc(&mut grads, *x, r * c);
                    for ch in 0..c {
                        gx[argmax[ch] * c + ch] += g[ch];
                        gx[argmin[ch] * c + ch] += g[c + ch];
                        for row in 0..r {
                            gx[row * c + ch] += g[2 * c + ch] / r as f64;
                        }
                        // d std / dx is zero where the column is constant
                        if std[ch] > 0.0 {
                            for row in 0..r {
                                gx[row * c + ch] +=
                                    g[3 * c + ch] * (tx.data[row * c + ch] - means[ch]) / (r as f64 * std[ch]);
                            }
                        }
                    }
                }
                Op::Symmetrize { x, n } => {
                    let n = *n;
                    let c = g.len() / (n * n);
                    let gx = acc(&mut grads, *x, g.len());
                    for i in 0..n {
                        for j in 0..n {
                            for ch in 0..c {
                                let s = 0.5 * g[(i * n + j) * c + ch];
                                gx[(i * n + j) * c + ch] += s;
                                gx[(j * n + i) * c + ch] += s;
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let c = self.value(*logits).cols;
                    let gl = acc(&mut grads, *logits, probs.len());
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        for j in 0..c {
                            let d = probs[r * c + j] - if j == t { 1.0 } else { 0.0 };
                            gl[r * c + j] += g[0] * w * d;
                        }
                    }
                }
            }
        }
        out
    }
}
