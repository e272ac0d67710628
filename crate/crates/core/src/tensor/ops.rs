//! Forward kernels and their backward closures.
//!
//! Every constructor validates shapes up front and returns `Err` rather than
//! broadcasting. Backward closures accumulate (`+=`) so shared operands
//! collect contributions from every use site.

use std::rc::Rc;

use rand::Rng;

use super::{Buffer, Tape, TensorId};
use crate::error::{Error, Result};

const LN_EPS: f32 = 1e-5;

#[inline]
fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl Tape {
    fn want_2d(&self, op: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(Error::BadShape {
                op,
                expected: "rank-2 tensor",
                shape: s.to_vec(),
            })
        }
    }

    fn want_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            })
        }
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.want_2d("matmul", a)?;
        let (kb, n) = self.want_2d("matmul", b)?;
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_raw(&self.bufs[a].data, &self.bufs[b].data, m, k, n, &mut out);
        Ok(self.push(
            Buffer::new(out, vec![m, n]),
            vec![a, b],
            Box::new(move |bufs, g, grads| {
                let bd = bufs[b].data.clone();
                let ad = bufs[a].data.clone();
                // dA[i,p] = sum_j g[i,j] * B[p,j]
                let da = grads.accum(a, m * k);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bd[p * n..(p + 1) * n];
                        let mut s = 0.0;
                        for j in 0..n {
                            s += grow[j] * brow[j];
                        }
                        da[i * k + p] += s;
                    }
                }
                // dB[p,j] = sum_i A[i,p] * g[i,j]
                let db = grads.accum(b, k * n);
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    let arow = &ad[i * k..(i + 1) * k];
                    for (p, &av) in arow.iter().enumerate() {
                        if av == 0.0 {
                            continue;
                        }
                        let dbrow = &mut db[p * n..(p + 1) * n];
                        for j in 0..n {
                            dbrow[j] += av * grow[j];
                        }
                    }
                }
            }),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, x: TensorId) -> Result<TensorId> {
        let (r, c) = self.want_2d("transpose", x)?;
        let xd = &self.bufs[x].data;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        Ok(self.push(
            Buffer::new(out, vec![c, r]),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, r * c);
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] += g[j * r + i];
                    }
                }
            }),
        ))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_same_shape("add", a, b)?;
        let data: Vec<f32> = self.bufs[a]
            .data
            .iter()
            .zip(&self.bufs[b].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.bufs[a].shape.clone();
        let n = data.len();
        Ok(self.push(
            Buffer::new(data, shape),
            vec![a, b],
            Box::new(move |_, g, grads| {
                let da = grads.accum(a, n);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = grads.accum(b, n);
                for (d, gv) in db.iter_mut().zip(g) {
                    *d += gv;
                }
            }),
        ))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_same_shape("sub", a, b)?;
        let data: Vec<f32> = self.bufs[a]
            .data
            .iter()
            .zip(&self.bufs[b].data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.bufs[a].shape.clone();
        let n = data.len();
        Ok(self.push(
            Buffer::new(data, shape),
            vec![a, b],
            Box::new(move |_, g, grads| {
                let da = grads.accum(a, n);
                for (d, gv) in da.iter_mut().zip(g) {
                    *d += gv;
                }
                let db = grads.accum(b, n);
                for (d, gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_same_shape("mul", a, b)?;
        let data: Vec<f32> = self.bufs[a]
            .data
            .iter()
            .zip(&self.bufs[b].data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.bufs[a].shape.clone();
        let n = data.len();
        Ok(self.push(
            Buffer::new(data, shape),
            vec![a, b],
            Box::new(move |bufs, g, grads| {
                let bd = bufs[b].data.clone();
                let ad = bufs[a].data.clone();
                let da = grads.accum(a, n);
                for i in 0..n {
                    da[i] += g[i] * bd[i];
                }
                let db = grads.accum(b, n);
                for i in 0..n {
                    db[i] += g[i] * ad[i];
                }
            }),
        ))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: TensorId, c: f32) -> TensorId {
        let data: Vec<f32> = self.bufs[x].data.iter().map(|v| v * c).collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n);
                for i in 0..n {
                    dx[i] += c * g[i];
                }
            }),
        )
    }

    /// Row broadcast: `[n,d] + [d]`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (n, d) = self.want_2d("add_bias", x)?;
        if self.shape(bias) != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bd = self.bufs[bias].data.clone();
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i % d])
            .collect();
        Ok(self.push(
            Buffer::new(data, vec![n, d]),
            vec![x, bias],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n * d);
                for (dv, gv) in dx.iter_mut().zip(g) {
                    *dv += gv;
                }
                let db = grads.accum(bias, d);
                for i in 0..n {
                    for j in 0..d {
                        db[j] += g[i * d + j];
                    }
                }
            }),
        ))
    }

    /// Concatenate along the last axis. All parts must share rank and every
    /// other dimension.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        assert!(!parts.is_empty(), "concat_cols needs at least one part");
        let rank = self.shape(parts[0]).len();
        let (rows, _) = self.bufs[parts[0]].rows_cols();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let (r, c) = self.bufs[p].rows_cols();
            if s.len() != rank || r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pd = &self.bufs[p].data;
            for i in 0..rows {
                data[i * total + off..i * total + off + w].copy_from_slice(&pd[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let shape = if rank == 1 {
            vec![total]
        } else {
            vec![rows, total]
        };
        let parts_owned = parts.to_vec();
        Ok(self.push(
            Buffer::new(data, shape),
            parts_owned.clone(),
            Box::new(move |_, g, grads| {
                let mut off = 0;
                for (&p, &w) in parts_owned.iter().zip(&widths) {
                    let dp = grads.accum(p, rows * w);
                    for i in 0..rows {
                        for j in 0..w {
                            dp[i * w + j] += g[i * total + off + j];
                        }
                    }
                    off += w;
                }
            }),
        ))
    }

    /// Columns `[start, start+len)` of a matrix (1-D treated as one row).
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let rank = self.shape(x).len();
        let (rows, cols) = self.bufs[x].rows_cols();
        if start + len > cols {
            return Err(Error::BadShape {
                op: "slice_cols",
                expected: "slice within column range",
                shape: self.shape(x).to_vec(),
            });
        }
        let xd = &self.bufs[x].data;
        let mut data = vec![0.0; rows * len];
        for i in 0..rows {
            data[i * len..(i + 1) * len]
                .copy_from_slice(&xd[i * cols + start..i * cols + start + len]);
        }
        let shape = if rank == 1 {
            vec![len]
        } else {
            vec![rows, len]
        };
        Ok(self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, rows * cols);
                for i in 0..rows {
                    for j in 0..len {
                        dx[i * cols + start + j] += g[i * len + j];
                    }
                }
            }),
        ))
    }

    /// Row lookup: `table[ids[t], :]` stacked into `[len(ids), d]`.
    pub fn embedding(&mut self, table: TensorId, ids: &[u32]) -> Result<TensorId> {
        let (v, d) = self.want_2d("embedding", table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= v) {
            return Err(Error::TargetOutOfRange { id: bad, vocab: v });
        }
        let td = &self.bufs[table].data;
        let n = ids.len();
        let mut data = vec![0.0; n * d];
        for (t, &id) in ids.iter().enumerate() {
            data[t * d..(t + 1) * d].copy_from_slice(&td[id as usize * d..(id as usize + 1) * d]);
        }
        let ids_owned: Rc<Vec<u32>> = Rc::new(ids.to_vec());
        Ok(self.push(
            Buffer::new(data, vec![n, d]),
            vec![table],
            Box::new(move |_, g, grads| {
                let dt = grads.accum(table, v * d);
                for (t, &id) in ids_owned.iter().enumerate() {
                    let row = &mut dt[id as usize * d..(id as usize + 1) * d];
                    for j in 0..d {
                        row[j] += g[t * d + j];
                    }
                }
            }),
        ))
    }

    /// Per-row layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId) -> Result<TensorId> {
        let (n, d) = self.want_2d("layer_norm", x)?;
        for p in [gamma, beta] {
            if self.shape(p) != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: vec![d],
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xd = &self.bufs[x].data;
        let gd = &self.bufs[gamma].data;
        let bd = &self.bufs[beta].data;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &xd[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            for j in 0..d {
                out[i * d + j] = (row[j] - mean) * inv_std * gd[j] + bd[j];
            }
        }
        Ok(self.push(
            Buffer::new(out, vec![n, d]),
            vec![x, gamma, beta],
            Box::new(move |bufs, g, grads| {
                let xd = bufs[x].data.clone();
                let gd = bufs[gamma].data.clone();
                let df = d as f32;
                {
                    let dx = grads.accum(x, n * d);
                    for i in 0..n {
                        let row = &xd[i * d..(i + 1) * d];
                        let grow = &g[i * d..(i + 1) * d];
                        let mean = row.iter().sum::<f32>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / df;
                        let inv_std = 1.0 / (var + LN_EPS).sqrt();
                        let xhat: Vec<f32> = row.iter().map(|v| (v - mean) * inv_std).collect();
                        let dxhat: Vec<f32> =
                            grow.iter().zip(&gd).map(|(gv, gm)| gv * gm).collect();
                        let sum_dxhat: f32 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f32 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        for j in 0..d {
                            dx[i * d + j] += inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                }
                {
                    let dgamma = grads.accum(gamma, d);
                    for i in 0..n {
                        let row = &xd[i * d..(i + 1) * d];
                        let grow = &g[i * d..(i + 1) * d];
                        let mean = row.iter().sum::<f32>() / df;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / df;
                        let inv_std = 1.0 / (var + LN_EPS).sqrt();
                        for j in 0..d {
                            dgamma[j] += grow[j] * (row[j] - mean) * inv_std;
                        }
                    }
                }
                {
                    let dbeta = grads.accum(beta, d);
                    for i in 0..n {
                        for j in 0..d {
                            dbeta[j] += g[i * d + j];
                        }
                    }
                }
            }),
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        const C: f32 = 0.797_884_6; // sqrt(2/pi)
        const A: f32 = 0.044715;
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh()))
            .collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |bufs, g, grads| {
                let xd = bufs[x].data.clone();
                let dx = grads.accum(x, n);
                for i in 0..n {
                    let v = xd[i];
                    let t = (C * (v + A * v * v * v)).tanh();
                    let sech2 = 1.0 - t * t;
                    let d_inner = C * (1.0 + 3.0 * A * v * v);
                    dx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * d_inner);
                }
            }),
        )
    }

    pub fn leaky_relu(&mut self, x: TensorId, slope: f32) -> TensorId {
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |bufs, g, grads| {
                let xd = bufs[x].data.clone();
                let dx = grads.accum(x, n);
                for i in 0..n {
                    dx[i] += g[i] * if xd[i] > 0.0 { 1.0 } else { slope };
                }
            }),
        )
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
            .collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |bufs, g, grads| {
                let xd = bufs[x].data.clone();
                let dx = grads.accum(x, n);
                for i in 0..n {
                    dx[i] += g[i] * if xd[i] > 0.0 { 1.0 } else { xd[i].exp() };
                }
            }),
        )
    }

    /// Mean over the sequence (row) axis: `[n,d] -> [d]`.
    pub fn mean_rows(&mut self, x: TensorId) -> Result<TensorId> {
        let (n, d) = self.want_2d("mean_rows", x)?;
        let xd = &self.bufs[x].data;
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += xd[i * d + j];
            }
        }
        let inv = 1.0 / n as f32;
        for v in out.iter_mut() {
            *v *= inv;
        }
        Ok(self.push(
            Buffer::new(out, vec![d]),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n * d);
                for i in 0..n {
                    for j in 0..d {
                        dx[i * d + j] += g[j] * inv;
                    }
                }
            }),
        ))
    }

    /// Inverted dropout; identity (no tape node) when `p == 0`. Train-only:
    /// inference paths simply pass `p = 0`.
    pub fn dropout<R: Rng>(&mut self, x: TensorId, p: f32, rng: &mut R) -> TensorId {
        if p <= 0.0 {
            return x;
        }
        assert!(p < 1.0, "dropout probability must be < 1");
        let keep = 1.0 - p;
        let mask: Rc<Vec<f32>> = Rc::new(
            (0..self.bufs[x].numel())
                .map(|_| {
                    if rng.gen::<f32>() < p {
                        0.0
                    } else {
                        1.0 / keep
                    }
                })
                .collect(),
        );
        self.dropout_with_mask(x, mask)
    }

    /// Dropout with an explicit mask (already scaled); used by tests to make
    /// the sampled mask observable.
    pub fn dropout_with_mask(&mut self, x: TensorId, mask: Rc<Vec<f32>>) -> TensorId {
        assert_eq!(mask.len(), self.bufs[x].numel());
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .zip(mask.iter())
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n);
                for i in 0..n {
                    dx[i] += g[i] * mask[i];
                }
            }),
        )
    }

    /// Numerically stable softmax over the last axis (each row sums to 1).
    /// Rejects non-finite inputs, naming the offending flat index.
    pub fn softmax_rows(&mut self, x: TensorId) -> Result<TensorId> {
        if let Some(bad) = self.bufs[x].data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "softmax",
                index: bad,
            });
        }
        let (n, d) = self.bufs[x].rows_cols();
        let xd = &self.bufs[x].data;
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = &xd[i * d..(i + 1) * d];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for j in 0..d {
                let e = (row[j] - max).exp();
                out[i * d + j] = e;
                sum += e;
            }
            for j in 0..d {
                out[i * d + j] /= sum;
            }
        }
        let shape = self.bufs[x].shape.clone();
        let out_id = self.next_id();
        Ok(self.push(
            Buffer::new(out, shape),
            vec![x],
            Box::new(move |bufs, g, grads| {
                let y = bufs[out_id].data.clone();
                let dx = grads.accum(x, n * d);
                for i in 0..n {
                    let yrow = &y[i * d..(i + 1) * d];
                    let grow = &g[i * d..(i + 1) * d];
                    let dot: f32 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        dx[i * d + j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }),
        ))
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, x: TensorId) -> TensorId {
        let data: Vec<f32> = self.bufs[x]
            .data
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect();
        let shape = self.bufs[x].shape.clone();
        let n = data.len();
        self.push(
            Buffer::new(data, shape),
            vec![x],
            Box::new(move |bufs, g, grads| {
                let xd = bufs[x].data.clone();
                let dx = grads.accum(x, n);
                for i in 0..n {
                    dx[i] += g[i] / (1.0 + (-xd[i]).exp());
                }
            }),
        )
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: f32 = self.bufs[x].data.iter().sum();
        let n = self.bufs[x].numel();
        self.push(
            Buffer::scalar(s),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n);
                for v in dx.iter_mut() {
                    *v += g[0];
                }
            }),
        )
    }

    /// Cosine similarity of two vectors, as a `[1]` scalar in [-1, 1].
    /// A zero-norm operand is an error, never a silent 0.
    pub fn cosine_similarity(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.want_same_shape("cosine_similarity", a, b)?;
        let ad = &self.bufs[a].data;
        let bd = &self.bufs[b].data;
        let na = ad.iter().map(|v| v * v).sum::<f32>().sqrt();
        let nb = bd.iter().map(|v| v * v).sum::<f32>().sqrt();
        if na == 0.0 {
            return Err(Error::ZeroNorm { side: "left" });
        }
        if nb == 0.0 {
            return Err(Error::ZeroNorm { side: "right" });
        }
        let dot: f32 = ad.iter().zip(bd).map(|(x, y)| x * y).sum();
        let cos = dot / (na * nb);
        let n = ad.len();
        Ok(self.push(
            Buffer::scalar(cos),
            vec![a, b],
            Box::new(move |bufs, g, grads| {
                let ad = bufs[a].data.clone();
                let bd = bufs[b].data.clone();
                let g0 = g[0];
                {
                    let da = grads.accum(a, n);
                    for i in 0..n {
                        da[i] += g0 * (bd[i] / (na * nb) - cos * ad[i] / (na * na));
                    }
                }
                {
                    let db = grads.accum(b, n);
                    for i in 0..n {
                        db[i] += g0 * (ad[i] / (na * nb) - cos * bd[i] / (nb * nb));
                    }
                }
            }),
        ))
    }

    /// Mean negative log-likelihood over non-pad positions.
    /// `logits: [L, V]`, `targets: [L]`.
    pub fn cross_entropy_nll(
        &mut self,
        logits: TensorId,
        targets: &[u32],
        pad_id: u32,
    ) -> Result<TensorId> {
        let (l, v) = self.want_2d("cross_entropy_nll", logits)?;
        if targets.len() != l {
            return Err(Error::BadShape {
                op: "cross_entropy_nll",
                expected: "one target per logits row",
                shape: vec![targets.len()],
            });
        }
        for &t in targets {
            if t != pad_id && t as usize >= v {
                return Err(Error::TargetOutOfRange { id: t, vocab: v });
            }
        }
        let active: Vec<usize> = (0..l).filter(|&i| targets[i] != pad_id).collect();
        if active.is_empty() {
            return Err(Error::AllPadded);
        }
        let ld = &self.bufs[logits].data;
        let count = active.len() as f32;
        let mut total = 0.0f32;
        for &i in &active {
            let row = &ld[i * v..(i + 1) * v];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = row.iter().map(|x| (x - max).exp()).sum::<f32>().ln() + max;
            total += lse - row[targets[i] as usize];
        }
        let targets_owned: Rc<Vec<u32>> = Rc::new(targets.to_vec());
        let active_owned: Rc<Vec<usize>> = Rc::new(active);
        Ok(self.push(
            Buffer::scalar(total / count),
            vec![logits],
            Box::new(move |bufs, g, grads| {
                let ld = bufs[logits].data.clone();
                let g0 = g[0] / count;
                let dl = grads.accum(logits, l * v);
                for &i in active_owned.iter() {
                    let row = &ld[i * v..(i + 1) * v];
                    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    let sum: f32 = row.iter().map(|x| (x - max).exp()).sum();
                    let tgt = targets_owned[i] as usize;
                    for j in 0..v {
                        let p = (row[j] - max).exp() / sum;
                        let onehot = if j == tgt { 1.0 } else { 0.0 };
                        dl[i * v + j] += g0 * (p - onehot);
                    }
                }
            }),
        ))
    }

    /// Replace the given rows of `[n,d]` by a constant fill value. Gradients
    /// pass through kept rows only; replaced rows are a constant substitution.
    pub fn mask_rows(&mut self, x: TensorId, masked: Rc<Vec<bool>>, fill: f32) -> Result<TensorId> {
        let (n, d) = self.want_2d("mask_rows", x)?;
        if masked.len() != n {
            return Err(Error::BadShape {
                op: "mask_rows",
                expected: "one flag per row",
                shape: vec![masked.len()],
            });
        }
        let xd = &self.bufs[x].data;
        let mut data = xd.clone();
        for (i, &m) in masked.iter().enumerate() {
            if m {
                for j in 0..d {
                    data[i * d + j] = fill;
                }
            }
        }
        Ok(self.push(
            Buffer::new(data, vec![n, d]),
            vec![x],
            Box::new(move |_, g, grads| {
                let dx = grads.accum(x, n * d);
                for (i, &m) in masked.iter().enumerate() {
                    if !m {
                        for j in 0..d {
                            dx[i * d + j] += g[i * d + j];
                        }
                    }
                }
            }),
        ))
    }

    // ── Edge-indexed ops for the graph encoder ───────────────────────

    /// Per-edge score assembly: `out[e] = dst_scores[edges[e].1] +
    /// src_scores[edges[e].0]` for vectors of per-node scores.
    pub fn edge_gather_sum(
        &mut self,
        dst_scores: TensorId,
        src_scores: TensorId,
        edges: Rc<Vec<(u32, u32)>>,
    ) -> Result<TensorId> {
        self.want_same_shape("edge_gather_sum", dst_scores, src_scores)?;
        let n = self.bufs[dst_scores].numel();
        for (i, &(s, t)) in edges.iter().enumerate() {
            if s as usize >= n || t as usize >= n {
                return Err(Error::AnnotationOutOfRange {
                    kind: "edge",
                    index: i,
                    detail: format!("endpoint ({s},{t}) outside {n} nodes"),
                });
            }
        }
        let dd = &self.bufs[dst_scores].data;
        let sd = &self.bufs[src_scores].data;
        let data: Vec<f32> = edges
            .iter()
            .map(|&(s, t)| dd[t as usize] + sd[s as usize])
            .collect();
        let e = data.len();
        let edges_b = edges.clone();
        Ok(self.push(
            Buffer::new(data, vec![e]),
            vec![dst_scores, src_scores],
            Box::new(move |_, g, grads| {
                {
                    let ddst = grads.accum(dst_scores, n);
                    for (i, &(_, t)) in edges_b.iter().enumerate() {
                        ddst[t as usize] += g[i];
                    }
                }
                {
                    let dsrc = grads.accum(src_scores, n);
                    for (i, &(s, _)) in edges_b.iter().enumerate() {
                        dsrc[s as usize] += g[i];
                    }
                }
            }),
        ))
    }

    /// Softmax within each contiguous segment `[start, end)` of a flat score
    /// vector. Segments must tile `[0, len)`.
    pub fn segment_softmax(
        &mut self,
        scores: TensorId,
        segments: Rc<Vec<(usize, usize)>>,
    ) -> Result<TensorId> {
        let n = self.bufs[scores].numel();
        let mut cursor = 0;
        for &(s, e) in segments.iter() {
            assert!(s == cursor && e >= s, "segments must tile the score vector");
            cursor = e;
        }
        assert_eq!(cursor, n, "segments must cover every score");
        let xd = &self.bufs[scores].data;
        let mut out = vec![0.0; n];
        for &(s, e) in segments.iter() {
            if s == e {
                continue;
            }
            let max = xd[s..e].iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for i in s..e {
                out[i] = (xd[i] - max).exp();
                sum += out[i];
            }
            for i in s..e {
                out[i] /= sum;
            }
        }
        let out_id = self.next_id();
        let segs = segments.clone();
        Ok(self.push(
            Buffer::new(out, vec![n]),
            vec![scores],
            Box::new(move |bufs, g, grads| {
                let y = bufs[out_id].data.clone();
                let dx = grads.accum(scores, n);
                for &(s, e) in segs.iter() {
                    let dot: f32 = (s..e).map(|i| y[i] * g[i]).sum();
                    for i in s..e {
                        dx[i] += y[i] * (g[i] - dot);
                    }
                }
            }),
        ))
    }

    /// Attention-weighted neighborhood sum: for each edge `(src, dst)` with
    /// weight `alpha[e]`, accumulate `alpha[e] * values[src]` into row `dst`.
    pub fn edge_weighted_sum(
        &mut self,
        alpha: TensorId,
        values: TensorId,
        edges: Rc<Vec<(u32, u32)>>,
        n_nodes: usize,
    ) -> Result<TensorId> {
        let (nv, d) = self.want_2d("edge_weighted_sum", values)?;
        let e = self.bufs[alpha].numel();
        if e != edges.len() {
            return Err(Error::BadShape {
                op: "edge_weighted_sum",
                expected: "one weight per edge",
                shape: self.shape(alpha).to_vec(),
            });
        }
        for (i, &(s, t)) in edges.iter().enumerate() {
            if s as usize >= nv || t as usize >= n_nodes {
                return Err(Error::AnnotationOutOfRange {
                    kind: "edge",
                    index: i,
                    detail: format!("endpoint ({s},{t}) outside node range"),
                });
            }
        }
        let ad = &self.bufs[alpha].data;
        let vd = &self.bufs[values].data;
        let mut out = vec![0.0; n_nodes * d];
        for (i, &(s, t)) in edges.iter().enumerate() {
            let vrow = &vd[s as usize * d..(s as usize + 1) * d];
            let orow = &mut out[t as usize * d..(t as usize + 1) * d];
            for j in 0..d {
                orow[j] += ad[i] * vrow[j];
            }
        }
        let edges_b = edges.clone();
        Ok(self.push(
            Buffer::new(out, vec![n_nodes, d]),
            vec![alpha, values],
            Box::new(move |bufs, g, grads| {
                let ad = bufs[alpha].data.clone();
                let vd = bufs[values].data.clone();
                {
                    let dalpha = grads.accum(alpha, e);
                    for (i, &(s, t)) in edges_b.iter().enumerate() {
                        let vrow = &vd[s as usize * d..(s as usize + 1) * d];
                        let grow = &g[t as usize * d..(t as usize + 1) * d];
                        let mut acc = 0.0;
                        for j in 0..d {
                            acc += vrow[j] * grow[j];
                        }
                        dalpha[i] += acc;
                    }
                }
                {
                    let dvals = grads.accum(values, nv * d);
                    for (i, &(s, t)) in edges_b.iter().enumerate() {
                        let grow = &g[t as usize * d..(t as usize + 1) * d];
                        let drow = &mut dvals[s as usize * d..(s as usize + 1) * d];
                        for j in 0..d {
                            drow[j] += ad[i] * grow[j];
                        }
                    }
                }
            }),
        ))
    }
}
