//! Recording graph and reverse-mode gradients.
//!
//! Operations append to a tape as they execute; the backward pass walks the
//! tape in reverse, so gradient accumulation order is fixed and runs are
//! reproducible bit-for-bit at a given seed and precision. Gradient
//! checkpointing records a whole segment as one opaque tape entry: the
//! forward pass keeps only the segment's boundary values and the backward
//! pass re-executes the segment in a scratch graph.
//!
//! Shape errors in op constructors are programmer errors and panic; the
//! fallible surface (`grad`, `checkpoint_segment`) returns [`Result`].

#![allow(clippy::needless_range_loop)] // index loops mirror the math

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::real::Real;

use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};

/// A segment body for [`Graph::checkpoint_segment`].
///
/// Must be pure: outputs may depend only on the nodes handed in (any random
/// draw has to be passed as an explicit input). The closure is re-run during
/// the backward pass and its outputs are compared bit-for-bit against the
/// recorded forward values.
pub type Segment<R> = Rc<dyn Fn(&Graph<R>, &[Node<R>]) -> Vec<Node<R>>>;

enum Op<R: Real> {
    Add { a: usize, b: usize, out: usize },
    Sub { a: usize, b: usize, out: usize },
    Mul { a: usize, b: usize, out: usize },
    MatMul { a: usize, b: usize, out: usize },
    Transpose { a: usize, out: usize },
    AddScalar { a: usize, out: usize },
    MulScalar { a: usize, c: R, out: usize },
    PowI { a: usize, n: i32, out: usize },
    Exp { a: usize, out: usize },
    Sqrt { a: usize, out: usize },
    Sin { a: usize, out: usize },
    Cos { a: usize, out: usize },
    Silu { a: usize, out: usize },
    Sum { a: usize, out: usize },
    Mean { a: usize, out: usize },
    ConcatCols { a: usize, b: usize, out: usize },
    AddRow { a: usize, row: usize, out: usize },
    AddCol { a: usize, col: usize, out: usize },
    Checkpoint { inputs: Vec<usize>, outputs: Vec<usize>, segment: Segment<R> },
}

struct GraphInner<R: Real> {
    values: Vec<Tensor<R>>,
    is_leaf: Vec<bool>,
    ops: Vec<Op<R>>,
}

/// A tape-recording computation graph.
#[derive(Clone)]
pub struct Graph<R: Real> {
    inner: Rc<RefCell<GraphInner<R>>>,
}

/// Handle to a tensor recorded on a [`Graph`]. Cheap to clone.
#[derive(Clone)]
pub struct Node<R: Real> {
    graph: Graph<R>,
    id: usize,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                values: Vec::new(),
                is_leaf: Vec::new(),
                ops: Vec::new(),
            })),
        }
    }

    fn push(&self, value: Tensor<R>, leaf: bool) -> Node<R> {
        let mut inner = self.inner.borrow_mut();
        let id = inner.values.len();
        inner.values.push(value);
        inner.is_leaf.push(leaf);
        Node { graph: self.clone(), id }
    }

    /// Registers a trainable leaf.
    pub fn leaf(&self, value: Tensor<R>) -> Node<R> {
        self.push(value, true)
    }

    /// Registers a constant input; gradients still flow through it, it is
    /// just not marked as a parameter.
    pub fn constant(&self, value: Tensor<R>) -> Node<R> {
        self.push(value, false)
    }

    fn same_graph(&self, other: &Graph<R>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().values.len()
    }

    /// Whether the node was registered as a trainable leaf.
    pub fn is_leaf(&self, node: &Node<R>) -> bool {
        assert!(self.same_graph(&node.graph), "node from a different graph");
        self.inner.borrow().is_leaf[node.id]
    }

    /// Gradients of a scalar output with respect to the given nodes.
    ///
    /// Nodes not reachable from the output get zero gradients of their own
    /// shape. Fails if the output is not a single element, or if a
    /// checkpointed segment turns out to be nondeterministic on recompute.
    pub fn grad(&self, output: &Node<R>, wrt: &[Node<R>]) -> Result<Vec<Tensor<R>>> {
        assert!(self.same_graph(&output.graph), "output node from a different graph");
        let inner = self.inner.borrow();
        let out_shape = inner.values[output.id].shape().to_vec();
        let numel: usize = out_shape.iter().product();
        if numel != 1 {
            return Err(Error::contract(format!(
                "grad requires a scalar output, got shape {out_shape:?}"
            )));
        }
        let seed = Tensor::filled(out_shape, R::one());
        let grads = backward_seeded(&inner, &[(output.id, seed)])?;
        Ok(wrt
            .iter()
            .map(|node| {
                assert!(self.same_graph(&node.graph), "wrt node from a different graph");
                grads[node.id].clone()
            })
            .collect())
    }

    /// Runs `segment` on the current values of `inputs`, keeping only the
    /// boundary tensors on this graph. The backward pass re-executes the
    /// segment instead of reading stored intermediates; gradients are
    /// identical to recording the segment inline.
    pub fn checkpoint_segment(
        &self,
        inputs: &[Node<R>],
        segment: Segment<R>,
    ) -> Result<Vec<Node<R>>> {
        for n in inputs {
            assert!(self.same_graph(&n.graph), "checkpoint input from a different graph");
        }
        let input_values: Vec<Tensor<R>> = {
            let inner = self.inner.borrow();
            inputs.iter().map(|n| inner.values[n.id].clone()).collect()
        };

        let out_values = run_segment(&segment, &input_values)?;

        let out_nodes: Vec<Node<R>> = out_values.into_iter().map(|v| self.push(v, false)).collect();
        let op = Op::Checkpoint {
            inputs: inputs.iter().map(|n| n.id).collect(),
            outputs: out_nodes.iter().map(|n| n.id).collect(),
            segment,
        };
        self.inner.borrow_mut().ops.push(op);
        Ok(out_nodes)
    }
}

/// Evaluates a segment in a scratch graph and returns the output values.
fn run_segment<R: Real>(
    segment: &Segment<R>,
    input_values: &[Tensor<R>],
) -> Result<Vec<Tensor<R>>> {
    let scratch = Graph::new();
    let scratch_inputs: Vec<Node<R>> =
        input_values.iter().map(|v| scratch.leaf(v.clone())).collect();
    let outs = segment(&scratch, &scratch_inputs);
    let inner = scratch.inner.borrow();
    Ok(outs
        .iter()
        .map(|n| {
            assert!(
                Rc::ptr_eq(&n.graph.inner, &scratch.inner),
                "segment returned a node from a foreign graph"
            );
            inner.values[n.id].clone()
        })
        .collect())
}

impl<R: Real> Node<R> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<R> {
        self.graph.inner.borrow().values[self.id].clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.inner.borrow().values[self.id].shape().to_vec()
    }

    fn unary(
        &self,
        f: impl FnOnce(&Tensor<R>) -> Tensor<R>,
        op: impl FnOnce(usize, usize) -> Op<R>,
    ) -> Node<R> {
        let out_value = {
            let inner = self.graph.inner.borrow();
            f(&inner.values[self.id])
        };
        let out = self.graph.push(out_value, false);
        self.graph.inner.borrow_mut().ops.push(op(self.id, out.id));
        out
    }

    fn binary(
        &self,
        rhs: &Node<R>,
        f: impl FnOnce(&Tensor<R>, &Tensor<R>) -> Tensor<R>,
        op: impl FnOnce(usize, usize, usize) -> Op<R>,
    ) -> Node<R> {
        assert!(self.graph.same_graph(&rhs.graph), "nodes from different graphs");
        let out_value = {
            let inner = self.graph.inner.borrow();
            f(&inner.values[self.id], &inner.values[rhs.id])
        };
        let out = self.graph.push(out_value, false);
        self.graph.inner.borrow_mut().ops.push(op(self.id, rhs.id, out.id));
        out
    }

    pub fn add(&self, rhs: &Node<R>) -> Node<R> {
        self.binary(rhs, |a, b| ewise(a, b, |x, y| x + y), |a, b, out| Op::Add { a, b, out })
    }

    pub fn sub(&self, rhs: &Node<R>) -> Node<R> {
        self.binary(rhs, |a, b| ewise(a, b, |x, y| x - y), |a, b, out| Op::Sub { a, b, out })
    }

    pub fn mul(&self, rhs: &Node<R>) -> Node<R> {
        self.binary(rhs, |a, b| ewise(a, b, |x, y| x * y), |a, b, out| Op::Mul { a, b, out })
    }

    pub fn matmul(&self, rhs: &Node<R>) -> Node<R> {
        self.binary(
            rhs,
            |a, b| {
                let (m, ka) = a.rows_cols().expect("matmul lhs must be rank 2");
                let (kb, n) = b.rows_cols().expect("matmul rhs must be rank 2");
                assert_eq!(ka, kb, "matmul inner dimensions differ: {ka} vs {kb}");
                let mut out = Tensor::zeros(vec![m, n]);
                matmul_acc(a.data(), b.data(), m, ka, n, out.data_mut());
                out
            },
            |a, b, out| Op::MatMul { a, b, out },
        )
    }

    pub fn transpose(&self) -> Node<R> {
        self.unary(
            |a| {
                let (r, c) = a.rows_cols().expect("transpose needs rank 2");
                let mut out = Tensor::zeros(vec![c, r]);
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[j * r + i] = a.data()[i * c + j];
                    }
                }
                out
            },
            |a, out| Op::Transpose { a, out },
        )
    }

    pub fn add_scalar(&self, c: R) -> Node<R> {
        // Record the shifted values; the backward rule is the identity so the
        // constant itself need not be stored.
        self.unary(|a| map(a, |x| x + c), |a, out| Op::AddScalar { a, out })
    }

    pub fn mul_scalar(&self, c: R) -> Node<R> {
        self.unary(|a| map(a, |x| x * c), |a, out| Op::MulScalar { a, c, out })
    }

    pub fn powi(&self, n: i32) -> Node<R> {
        self.unary(|a| map(a, |x| x.powi(n)), |a, out| Op::PowI { a, n, out })
    }

    pub fn exp(&self) -> Node<R> {
        self.unary(|a| map(a, |x| x.exp()), |a, out| Op::Exp { a, out })
    }

    pub fn sqrt(&self) -> Node<R> {
        self.unary(|a| map(a, |x| x.sqrt()), |a, out| Op::Sqrt { a, out })
    }

    pub fn sin(&self) -> Node<R> {
        self.unary(|a| map(a, |x| x.sin()), |a, out| Op::Sin { a, out })
    }

    pub fn cos(&self) -> Node<R> {
        self.unary(|a| map(a, |x| x.cos()), |a, out| Op::Cos { a, out })
    }

    /// Sigmoid-weighted linear unit, x * sigma(x).
    pub fn silu(&self) -> Node<R> {
        self.unary(|a| map(a, |x| x * sigmoid(x)), |a, out| Op::Silu { a, out })
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&self) -> Node<R> {
        self.unary(
            |a| Tensor::scalar(a.data().iter().copied().fold(R::zero(), |s, v| s + v)),
            |a, out| Op::Sum { a, out },
        )
    }

    /// Mean of all elements, as a rank-0 tensor.
    pub fn mean(&self) -> Node<R> {
        self.unary(
            |a| {
                let n = R::from_f64(a.numel() as f64);
                Tensor::scalar(a.data().iter().copied().fold(R::zero(), |s, v| s + v) / n)
            },
            |a, out| Op::Mean { a, out },
        )
    }

    /// Concatenates two matrices with equal row counts along columns.
    pub fn concat_cols(&self, rhs: &Node<R>) -> Node<R> {
        self.binary(
            rhs,
            |a, b| {
                let (ra, ca) = a.rows_cols().expect("concat lhs rank 2");
                let (rb, cb) = b.rows_cols().expect("concat rhs rank 2");
                assert_eq!(ra, rb, "concat_cols row counts differ");
                let mut data = Vec::with_capacity(ra * (ca + cb));
                for i in 0..ra {
                    data.extend_from_slice(a.row(i));
                    data.extend_from_slice(b.row(i));
                }
                Tensor::from_vec(vec![ra, ca + cb], data).unwrap()
            },
            |a, b, out| Op::ConcatCols { a, b, out },
        )
    }

    /// `[n,m] + [1,m]`, the row broadcast used for bias terms.
    pub fn add_row(&self, row: &Node<R>) -> Node<R> {
        self.binary(
            row,
            |a, r| {
                let (n, m) = a.rows_cols().expect("add_row lhs rank 2");
                let (rr, rm) = r.rows_cols().expect("add_row rhs rank 2");
                assert!(rr == 1 && rm == m, "add_row rhs must be [1,{m}], got [{rr},{rm}]");
                let mut out = a.clone();
                for i in 0..n {
                    for j in 0..m {
                        let v = out.data()[i * m + j] + r.data()[j];
                        out.data_mut()[i * m + j] = v;
                    }
                }
                out
            },
            |a, b, out| Op::AddRow { a, row: b, out },
        )
    }

    /// `[n,m] + [n,1]`, the column broadcast used for pairwise distances.
    pub fn add_col(&self, col: &Node<R>) -> Node<R> {
        self.binary(
            col,
            |a, c| {
                let (n, m) = a.rows_cols().expect("add_col lhs rank 2");
                let (cr, cc) = c.rows_cols().expect("add_col rhs rank 2");
                assert!(cr == n && cc == 1, "add_col rhs must be [{n},1], got [{cr},{cc}]");
                let mut out = a.clone();
                for i in 0..n {
                    for j in 0..m {
                        let v = out.data()[i * m + j] + c.data()[i];
                        out.data_mut()[i * m + j] = v;
                    }
                }
                out
            },
            |a, b, out| Op::AddCol { a, col: b, out },
        )
    }
}

fn ewise<R: Real>(a: &Tensor<R>, b: &Tensor<R>, f: impl Fn(R, R) -> R) -> Tensor<R> {
    assert_eq!(a.shape(), b.shape(), "elementwise op on mismatched shapes");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).unwrap()
}

fn map<R: Real>(a: &Tensor<R>, f: impl Fn(R) -> R) -> Tensor<R> {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_vec(a.shape().to_vec(), data).unwrap()
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

fn acc<R: Real>(dst: &mut Tensor<R>, src: &Tensor<R>) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d = *d + *s;
    }
}

fn acc_mapped<R: Real>(dst: &mut Tensor<R>, g: &Tensor<R>, f: impl Fn(usize, R) -> R) {
    for (i, d) in dst.data_mut().iter_mut().enumerate() {
        *d = *d + f(i, g.data()[i]);
    }
}

/// Reverse pass over the tape with explicit output cotangents.
///
/// Returns one gradient tensor per node; untouched nodes keep zeros.
fn backward_seeded<R: Real>(
    inner: &GraphInner<R>,
    seeds: &[(usize, Tensor<R>)],
) -> Result<Vec<Tensor<R>>> {
    let mut grads: Vec<Tensor<R>> =
        inner.values.iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect();
    for (id, seed) in seeds {
        acc(&mut grads[*id], seed);
    }

    for op in inner.ops.iter().rev() {
        match op {
            Op::Add { a, b, out } => {
                let g = grads[*out].clone();
                acc(&mut grads[*a], &g);
                acc(&mut grads[*b], &g);
            }
            Op::Sub { a, b, out } => {
                let g = grads[*out].clone();
                acc(&mut grads[*a], &g);
                acc_mapped(&mut grads[*b], &g, |_, gv| -gv);
            }
            Op::Mul { a, b, out } => {
                let g = grads[*out].clone();
                let (av, bv) = (&inner.values[*a], &inner.values[*b]);
                acc_mapped(&mut grads[*a], &g, |i, gv| gv * bv.data()[i]);
                acc_mapped(&mut grads[*b], &g, |i, gv| gv * av.data()[i]);
            }
            Op::MatMul { a, b, out } => {
                let g = grads[*out].clone();
                let (m, k) = inner.values[*a].rows_cols().unwrap();
                let (_, n) = inner.values[*b].rows_cols().unwrap();
                // dA += g . B^T, dB += A^T . g
                matmul_nt_acc(g.data(), inner.values[*b].data(), m, n, k, grads[*a].data_mut());
                matmul_tn_acc(inner.values[*a].data(), g.data(), m, k, n, grads[*b].data_mut());
            }
            Op::Transpose { a, out } => {
                let g = grads[*out].clone();
                let (r, c) = inner.values[*a].rows_cols().unwrap();
                let da = grads[*a].data_mut();
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = da[i * c + j] + g.data()[j * r + i];
                    }
                }
            }
            Op::AddScalar { a, out } => {
                let g = grads[*out].clone();
                acc(&mut grads[*a], &g);
            }
            Op::MulScalar { a, c, out } => {
                let g = grads[*out].clone();
                acc_mapped(&mut grads[*a], &g, |_, gv| gv * *c);
            }
            Op::PowI { a, n, out } => {
                let g = grads[*out].clone();
                let av = &inner.values[*a];
                let nf = R::from_f64(*n as f64);
                acc_mapped(&mut grads[*a], &g, |i, gv| gv * nf * av.data()[i].powi(n - 1));
            }
            Op::Exp { a, out } => {
                let g = grads[*out].clone();
                let ov = &inner.values[*out];
                acc_mapped(&mut grads[*a], &g, |i, gv| gv * ov.data()[i]);
            }
            Op::Sqrt { a, out } => {
                let g = grads[*out].clone();
                let ov = &inner.values[*out];
                let two = R::from_f64(2.0);
                acc_mapped(&mut grads[*a], &g, |i, gv| gv / (two * ov.data()[i]));
            }
            Op::Sin { a, out } => {
                let g = grads[*out].clone();
                let av = &inner.values[*a];
                acc_mapped(&mut grads[*a], &g, |i, gv| gv * av.data()[i].cos());
            }
            Op::Cos { a, out } => {
                let g = grads[*out].clone();
                let av = &inner.values[*a];
                acc_mapped(&mut grads[*a], &g, |i, gv| -(gv * av.data()[i].sin()));
            }
            Op::Silu { a, out } => {
                let g = grads[*out].clone();
                let av = &inner.values[*a];
                acc_mapped(&mut grads[*a], &g, |i, gv| {
                    let x = av.data()[i];
                    let s = sigmoid(x);
                    gv * s * (R::one() + x * (R::one() - s))
                });
            }
            Op::Sum { a, out } => {
                let g = grads[*out].item().unwrap();
                for d in grads[*a].data_mut() {
                    *d = *d + g;
                }
            }
            Op::Mean { a, out } => {
                let g = grads[*out].item().unwrap();
                let n = R::from_f64(inner.values[*a].numel() as f64);
                for d in grads[*a].data_mut() {
                    *d = *d + g / n;
                }
            }
            Op::ConcatCols { a, b, out } => {
                let g = grads[*out].clone();
                let (ra, ca) = inner.values[*a].rows_cols().unwrap();
                let (_, cb) = inner.values[*b].rows_cols().unwrap();
                let cols = ca + cb;
                for i in 0..ra {
                    let grow = &g.data()[i * cols..(i + 1) * cols];
                    let da = &mut grads[*a].data_mut()[i * ca..(i + 1) * ca];
                    for j in 0..ca {
                        da[j] = da[j] + grow[j];
                    }
                }
                for i in 0..ra {
                    let grow = &g.data()[i * cols..(i + 1) * cols];
                    let db = &mut grads[*b].data_mut()[i * cb..(i + 1) * cb];
                    for j in 0..cb {
                        db[j] = db[j] + grow[ca + j];
                    }
                }
            }
            Op::AddRow { a, row, out } => {
                let g = grads[*out].clone();
                let (n, m) = inner.values[*a].rows_cols().unwrap();
                acc(&mut grads[*a], &g);
                let dr = grads[*row].data_mut();
                for i in 0..n {
                    for j in 0..m {
                        dr[j] = dr[j] + g.data()[i * m + j];
                    }
                }
            }
            Op::AddCol { a, col, out } => {
                let g = grads[*out].clone();
                let (n, m) = inner.values[*a].rows_cols().unwrap();
                acc(&mut grads[*a], &g);
                let dc = grads[*col].data_mut();
                for i in 0..n {
                    for j in 0..m {
                        dc[i] = dc[i] + g.data()[i * m + j];
                    }
                }
            }
            Op::Checkpoint { inputs, outputs, segment } => {
                let input_values: Vec<Tensor<R>> =
                    inputs.iter().map(|id| inner.values[*id].clone()).collect();
                let scratch = Graph::new();
                let scratch_inputs: Vec<Node<R>> =
                    input_values.iter().map(|v| scratch.leaf(v.clone())).collect();
                let outs = segment(&scratch, &scratch_inputs);
                assert_eq!(outs.len(), outputs.len(), "segment output arity changed on recompute");

                let sub_inner = scratch.inner.borrow();
                let mut seeds = Vec::with_capacity(outs.len());
                for (sub_out, main_out) in outs.iter().zip(outputs) {
                    let recomputed = &sub_inner.values[sub_out.id];
                    if recomputed != &inner.values[*main_out] {
                        return Err(Error::Nondeterminism(format!(
                            "output {} of a {}-input segment",
                            sub_out.id,
                            inputs.len()
                        )));
                    }
                    seeds.push((sub_out.id, grads[*main_out].clone()));
                }
                let sub_grads = backward_seeded(&sub_inner, &seeds)?;
                for (scratch_in, main_in) in scratch_inputs.iter().zip(inputs) {
                    acc(&mut grads[*main_in], &sub_grads[scratch_in.id]);
                }
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_leaf(g: &Graph<f64>, v: f64) -> Node<f64> {
        g.leaf(Tensor::scalar(v))
    }

    #[test]
    fn square_gradient() {
        // f(x) = x^2 at x=3 -> df/dx = 6
        let g = Graph::new();
        let x = scalar_leaf(&g, 3.0);
        let y = x.mul(&x);
        assert_eq!(y.value().item().unwrap(), 9.0);
        let grads = g.grad(&y, &[x]).unwrap();
        assert_eq!(grads[0].item().unwrap(), 6.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = x.sum();
        let grads = g.grad(&y, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(Tensor::<f64>::zeros(vec![2, 2]));
        let y = x.add(&x);
        assert!(matches!(g.grad(&y, &[x]), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let g = Graph::new();
        let x = scalar_leaf(&g, 2.0);
        let unused = g.leaf(Tensor::<f64>::zeros(vec![3, 2]));
        let y = x.mul(&x);
        assert!(g.is_leaf(&unused) && !g.is_leaf(&y));
        let grads = g.grad(&y, &[unused]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(grads[0].shape(), &[3, 2]);
    }

    #[test]
    fn grad_is_linear_in_the_output() {
        // grad(a*f + b*g) == a*grad(f) + b*grad(g) on the shared leaf.
        let (a, b) = (2.5, -1.25);
        let build = |coeff_f: f64, coeff_g: f64| {
            let g = Graph::new();
            let x = scalar_leaf(&g, 0.7);
            let f = x.mul(&x); // x^2
            let h = x.sin(); // sin x
            let out = f.mul_scalar(coeff_f).add(&h.mul_scalar(coeff_g));
            g.grad(&out, &[x]).unwrap()[0].item().unwrap()
        };
        let combined = build(a, b);
        let separate = a * build(1.0, 0.0) + b * build(0.0, 1.0);
        assert!((combined - separate).abs() < 1e-12);
    }

    #[test]
    fn matmul_gradient_known_case() {
        // f = sum(A.B); dA = ones . B^T, dB = A^T . ones
        let g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.leaf(Tensor::from_vec(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let y = a.matmul(&b).sum();
        let grads = g.grad(&y, &[a, b]).unwrap();
        assert_eq!(grads[0].data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(grads[1].data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn checkpoint_identity_segment() {
        let g = Graph::new();
        let x = g.leaf(Tensor::from_vec(vec![1, 2], vec![1.5, -2.0]).unwrap());
        let outs = g
            .checkpoint_segment(
                std::slice::from_ref(&x),
                Rc::new(|_, ins: &[Node<f64>]| vec![ins[0].clone()]),
            )
            .unwrap();
        assert_eq!(outs[0].value().data(), x.value().data());
        let y = outs[0].sum();
        let grads = g.grad(&y, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[1.0, 1.0]);
    }

    #[test]
    fn checkpoint_square_segment() {
        // segment f(x) = x^2 at 3 -> value 9, gradient 6
        let g = Graph::new();
        let x = scalar_leaf(&g, 3.0);
        let outs = g
            .checkpoint_segment(
                std::slice::from_ref(&x),
                Rc::new(|_, ins: &[Node<f64>]| vec![ins[0].mul(&ins[0])]),
            )
            .unwrap();
        assert_eq!(outs[0].value().item().unwrap(), 9.0);
        let grads = g.grad(&outs[0], &[x]).unwrap();
        assert_eq!(grads[0].item().unwrap(), 6.0);
    }

    #[test]
    fn nondeterministic_segment_is_detected() {
        use std::cell::Cell;
        let calls = Rc::new(Cell::new(0.0f64));
        let g = Graph::new();
        let x = scalar_leaf(&g, 1.0);
        let calls2 = calls.clone();
        let outs = g
            .checkpoint_segment(
                std::slice::from_ref(&x),
                Rc::new(move |_, ins: &[Node<f64>]| {
                    calls2.set(calls2.get() + 1.0);
                    vec![ins[0].add_scalar(calls2.get())]
                }),
            )
            .unwrap();
        let err = g.grad(&outs[0], &[x]).unwrap_err();
        assert!(matches!(err, Error::Nondeterminism(_)));
    }

    #[test]
    fn silu_backward_matches_closed_form() {
        // d/dx [x*sigma(x)] = sigma(x)(1 + x(1 - sigma(x)))
        let x0 = 0.8;
        let g = Graph::new();
        let x = scalar_leaf(&g, x0);
        let y = x.silu();
        let got = g.grad(&y, &[x]).unwrap()[0].item().unwrap();
        let s = 1.0 / (1.0 + (-x0).exp());
        let want = s * (1.0 + x0 * (1.0 - s));
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn broadcast_ops_backward() {
        // y = sum(A + row + col): dRow[j] = n, dCol[i] = m
        let g = Graph::new();
        let a = g.leaf(Tensor::<f64>::zeros(vec![3, 2]));
        let row = g.leaf(Tensor::<f64>::zeros(vec![1, 2]));
        let col = g.leaf(Tensor::<f64>::zeros(vec![3, 1]));
        let y = a.add_row(&row).add_col(&col).sum();
        let grads = g.grad(&y, &[a, row, col]).unwrap();
        assert!(grads[0].data().iter().all(|&v| v == 1.0));
        assert_eq!(grads[1].data(), &[3.0, 3.0]);
        assert_eq!(grads[2].data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_split_backward() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = g.leaf(Tensor::from_vec(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
        let y = a.concat_cols(&b).mul_scalar(2.0).sum();
        let grads = g.grad(&y, &[a, b]).unwrap();
        assert_eq!(grads[0].data(), &[2.0, 2.0]);
        assert_eq!(grads[1].data(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
