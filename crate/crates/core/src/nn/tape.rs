//! Reverse-mode differentiation over dense matrices.
//!
//! Gradients are themselves recorded on the tape, so they can be
//! differentiated again (gradients of gradients).

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `m×n` plus a broadcast `1×n` row.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    /// `k`-th derivative of `z·sigmoid(z)`, elementwise, `k ≤ 3`.
    Silu(Var, u8),
    Transpose(Var),
    /// `m×n → 1×n`.
    SumRows(Var),
    /// `1×n → m×n`.
    BroadcastRows(Var),
    /// `m×n → m×1`.
    SumCols(Var),
    /// `m×1 → m×n`.
    BroadcastCols(Var),
    /// `m×n → 1×1`.
    SumAll(Var),
    /// `1×1 → m×n`.
    BroadcastScalar(Var),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => [Some(a), Some(b)],
            Scale(a, _) | AddScalar(a) | Sigmoid(a) | Silu(a, _) | Transpose(a) | SumRows(a) | BroadcastRows(a) | SumCols(a)
            | BroadcastCols(a) | SumAll(a) | BroadcastScalar(a) => [Some(a), None],
        }
    }
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// An append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(a.dim(), (1, 1), "not a scalar node");
        a[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().flatten().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product of equal-shape operands.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "mul shape mismatch");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1×n row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|z| 1.0 / (1.0 + (-z).exp()));
        self.push(v, Op::Sigmoid(a))
    }

    /// `a·sigmoid(a)`.
    pub fn silu(&mut self, a: Var) -> Var {
        self.silu_derivative(a, 0)
    }

    fn silu_derivative(&mut self, a: Var, k: u8) -> Var {
        let v = self.value(a).mapv(|z| silu_d(z, k));
        self.push(v, Op::Silu(a, k))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a))
    }

    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let v = self.value(a).broadcast((rows, self.value(a).ncols())).expect("1×n row").to_owned();
        self.push(v, Op::BroadcastRows(a))
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::SumCols(a))
    }

    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Var {
        let v = self.value(a).broadcast((self.value(a).nrows(), cols)).expect("m×1 column").to_owned();
        self.push(v, Op::BroadcastCols(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    pub fn broadcast_scalar(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let v = Array2::from_elem(shape, self.scalar(a));
        self.push(v, Op::BroadcastScalar(a))
    }

    fn accumulate(&mut self, adj: &mut [Option<Var>], target: Var, g: Var) {
        adj[target.0] = Some(match adj[target.0] {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    /// Gradients of the scalar `y` with respect to each of `wrt`, recorded
    /// on the tape so they can be differentiated again.
    pub fn grad(&mut self, y: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.value(y).dim(), (1, 1), "grad needs a scalar output");
        let n = y.0 + 1;
        // nodes through which some requested input influences y
        let mut leads = vec![false; n];
        for w in wrt {
            if w.0 < n {
                leads[w.0] = true;
            }
        }
        for i in 0..n {
            if !leads[i] && self.nodes[i].requires_grad {
                leads[i] = self.nodes[i].op.inputs().iter().flatten().any(|v| leads[v.0]);
            }
        }
        let mut adj: Vec<Option<Var>> = vec![None; n];
        if leads[y.0] {
            adj[y.0] = Some(self.constant(Array2::ones((1, 1))));
        }
        for i in (0..n).rev() {
            let Some(g) = adj[i] else { continue };
            if !leads[i] {
                continue;
            }
            let me = Var(i);
            let op = self.nodes[i].op;
            let want = |v: Var| leads[v.0];
            use Op::*;
            match op {
                Leaf => {}
                MatMul(a, b) => {
                    if want(a) {
                        let bt = self.transpose(b);
                        let ga = self.matmul(g, bt);
                        self.accumulate(&mut adj, a, ga);
                    }
                    if want(b) {
                        let at = self.transpose(a);
                        let gb = self.matmul(at, g);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                Add(a, b) => {
                    if want(a) {
                        self.accumulate(&mut adj, a, g);
                    }
                    if want(b) {
                        self.accumulate(&mut adj, b, g);
                    }
                }
                Sub(a, b) => {
                    if want(a) {
                        self.accumulate(&mut adj, a, g);
                    }
                    if want(b) {
                        let gb = self.scale(g, -1.0);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                Mul(a, b) => {
                    if want(a) {
                        let ga = self.mul(g, b);
                        self.accumulate(&mut adj, a, ga);
                    }
                    if want(b) {
                        let gb = self.mul(g, a);
                        self.accumulate(&mut adj, b, gb);
                    }
                }
                AddRow(a, r) => {
                    if want(a) {
                        self.accumulate(&mut adj, a, g);
                    }
                    if want(r) {
                        let gr = self.sum_rows(g);
                        self.accumulate(&mut adj, r, gr);
                    }
                }
                Scale(a, k) => {
                    let ga = self.scale(g, k);
                    self.accumulate(&mut adj, a, ga);
                }
                AddScalar(a) => self.accumulate(&mut adj, a, g),
                Sigmoid(a) => {
                    // σ' = σ(1 − σ), written in terms of this node so it stays differentiable
                    let neg = self.scale(me, -1.0);
                    let one_minus = self.add_scalar(neg, 1.0);
                    let d = self.mul(me, one_minus);
                    let ga = self.mul(g, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Silu(a, k) => {
                    assert!(k < 3, "silu derivatives are only available to third order");
                    let d = self.silu_derivative(a, k + 1);
                    let ga = self.mul(g, d);
                    self.accumulate(&mut adj, a, ga);
                }
                Transpose(a) => {
                    let ga = self.transpose(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumRows(a) => {
                    let rows = self.value(a).nrows();
                    let ga = self.broadcast_rows(g, rows);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastRows(a) => {
                    let ga = self.sum_rows(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumCols(a) => {
                    let cols = self.value(a).ncols();
                    let ga = self.broadcast_cols(g, cols);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastCols(a) => {
                    let ga = self.sum_cols(g);
                    self.accumulate(&mut adj, a, ga);
                }
                SumAll(a) => {
                    let shape = self.value(a).dim();
                    let ga = self.broadcast_scalar(g, shape);
                    self.accumulate(&mut adj, a, ga);
                }
                BroadcastScalar(a) => {
                    let ga = self.sum_all(g);
                    self.accumulate(&mut adj, a, ga);
                }
            }
        }
        wrt.iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.value(*w).dim();
                    self.constant(Array2::zeros(shape))
                }
            })
            .collect()
    }
}

/// `k`-th derivative of `z·σ(z)`.
fn silu_d(z: f64, k: u8) -> f64 {
    let s = 1.0 / (1.0 + (-z).exp());
    let q = s * (1.0 - s);
    match k {
        0 => z * s,
        1 => s + z * q,
        2 => q * (2.0 + z * (1.0 - 2.0 * s)),
        3 => q * (3.0 * (1.0 - 2.0 * s) + z * ((1.0 - 2.0 * s).powi(2) - 2.0 * q)),
        _ => unreachable!("silu derivative order {k}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.dim());
        for idx in 0..x.len() {
            let (i, j) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[i, j]] += h;
            xm[[i, j]] -= h;
            g[[i, j]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    /// `Σ silu(x·W + b)²` built on a fresh tape.
    fn model(t: &mut Tape, x: Var, w: Var, b: Var) -> Var {
        let h = t.matmul(x, w);
        let h = t.add_row(h, b);
        let s = t.silu(h);
        let sq = t.mul(s, s);
        t.sum_all(sq)
    }

    #[test]
    fn first_order_matches_finite_differences() {
        let x0 = array![[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]];
        let w0 = array![[0.5, -0.2, 0.1], [0.3, 0.8, -0.6]];
        let b0 = array![[0.05, -0.1, 0.2]];
        let mut t = Tape::new();
        let x = t.variable(x0.clone());
        let w = t.variable(w0.clone());
        let b = t.constant(b0.clone());
        let y = model(&mut t, x, w, b);
        let g = t.grad(y, &[x, w]);
        let eval = |xv: &Array2<f64>, wv: &Array2<f64>| {
            let mut t = Tape::new();
            let x = t.constant(xv.clone());
            let w = t.constant(wv.clone());
            let b = t.constant(b0.clone());
            let y = model(&mut t, x, w, b);
            t.scalar(y)
        };
        let fx = fd_grad(|xv| eval(xv, &w0), &x0);
        let fw = fd_grad(|wv| eval(&x0, wv), &w0);
        assert!((t.value(g[0]) - &fx).iter().all(|d| d.abs() < 1e-7));
        assert!((t.value(g[1]) - &fw).iter().all(|d| d.abs() < 1e-7));
    }

    /// d/dW of ‖∂y/∂x‖², the pattern used by energy-parameterized training.
    #[test]
    fn gradient_of_gradient_matches_finite_differences() {
        let x0 = array![[0.3, -0.7], [1.1, 0.2]];
        let w0 = array![[0.5, -0.2, 0.1], [0.3, 0.8, -0.6]];
        let b0 = array![[0.05, -0.1, 0.2]];
        let build = |t: &mut Tape, wv: Var| {
            let x = t.variable(x0.clone());
            let b = t.constant(b0.clone());
            let y = model(t, x, wv, b);
            let gx = t.grad(y, &[x])[0];
            let sq = t.mul(gx, gx);
            t.sum_all(sq)
        };
        let mut t = Tape::new();
        let w = t.variable(w0.clone());
        let l = build(&mut t, w);
        let gw = t.grad(l, &[w])[0];
        let fw = fd_grad(
            |wv| {
                let mut t = Tape::new();
                let w = t.variable(wv.clone());
                let l = build(&mut t, w);
                t.scalar(l)
            },
            &w0,
        );
        let diff = t.value(gw) - &fw;
        assert!(diff.iter().all(|d| d.abs() < 1e-6), "{diff:?}");
    }

    #[test]
    fn silu_derivatives_match_finite_differences() {
        for &z in &[-6.0, -1.3, 0.0, 0.4, 2.5, 9.0] {
            for k in 0..3u8 {
                let h = 1e-5;
                let fd = (silu_d(z + h, k) - silu_d(z - h, k)) / (2.0 * h);
                assert!((fd - silu_d(z, k + 1)).abs() < 1e-8, "order {k} at {z}");
            }
        }
    }

    #[test]
    fn reductions_and_broadcasts() {
        let a0 = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let mut t = Tape::new();
        let a = t.variable(a0.clone());
        let r = t.sum_rows(a);
        let c = t.sum_cols(a);
        let rb = t.broadcast_rows(r, 3);
        let cb = t.broadcast_cols(c, 2);
        let p = t.mul(rb, cb);
        let tr = t.transpose(p);
        let s = t.sum_all(tr);
        let k = t.broadcast_scalar(s, (3, 2));
        let z = t.mul(k, a);
        let y = t.sum_all(z);
        let g = t.grad(y, &[a])[0];
        let f = |v: &Array2<f64>| {
            let r = v.sum_axis(Axis(0));
            let c = v.sum_axis(Axis(1));
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..2 {
                    s += r[j] * c[i];
                }
            }
            s * v.sum()
        };
        let fd = fd_grad(f, &a0);
        assert!((t.value(g) - &fd).iter().all(|d| d.abs() < 1e-5));
    }

    #[test]
    fn unrelated_inputs_get_zero_gradient() {
        let mut t = Tape::new();
        let a = t.variable(array![[1.0, 2.0]]);
        let b = t.variable(array![[3.0]]);
        let y = t.sum_all(a);
        let g = t.grad(y, &[a, b]);
        assert_eq!(t.value(g[0]), &array![[1.0, 1.0]]);
        assert_eq!(t.value(g[1]), &array![[0.0]]);
        let gb = t.grad(y, &[b])[0];
        assert!(!t.requires_grad(gb));
    }
}
