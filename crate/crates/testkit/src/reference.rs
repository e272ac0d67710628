//! Plain f64 forward implementations of every differentiable primitive,
//! written directly from the math with no shared code with the engine.

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = s;
        }
    }
    out
}

pub fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn scale(x: &[f64], c: f64) -> Vec<f64> {
    x.iter().map(|v| v * c).collect()
}

pub fn add_bias(x: &[f64], bias: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            out[i * d + j] = x[i * d + j] + bias[j];
        }
    }
    out
}

pub fn concat_cols(parts: &[(&[f64], usize)], rows: usize) -> Vec<f64> {
    let total: usize = parts.iter().map(|(_, w)| w).sum();
    let mut out = vec![0.0; rows * total];
    let mut off = 0;
    for &(p, w) in parts {
        for i in 0..rows {
            out[i * total + off..i * total + off + w].copy_from_slice(&p[i * w..(i + 1) * w]);
        }
        off += w;
    }
    out
}

pub fn slice_cols(x: &[f64], rows: usize, cols: usize, start: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * len];
    for i in 0..rows {
        out[i * len..(i + 1) * len].copy_from_slice(&x[i * cols + start..i * cols + start + len]);
    }
    out
}

pub fn embedding(table: &[f64], d: usize, ids: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; ids.len() * d];
    for (t, &id) in ids.iter().enumerate() {
        out[t * d..(t + 1) * d].copy_from_slice(&table[id as usize * d..(id as usize + 1) * d]);
    }
    out
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], n: usize, d: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

/// Layer-norm epsilon used by the engine.
pub const LN_EPS: f64 = 1e-5;

pub fn gelu(x: &[f64]) -> Vec<f64> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    x.iter()
        .map(|&v| 0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh()))
        .collect()
}

pub fn leaky_relu(x: &[f64], slope: f64) -> Vec<f64> {
    x.iter()
        .map(|&v| if v > 0.0 { v } else { slope * v })
        .collect()
}

pub fn elu(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| if v > 0.0 { v } else { v.exp() - 1.0 })
        .collect()
}

pub fn mean_rows(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            out[j] += x[i * d + j] / n as f64;
        }
    }
    out
}

pub fn softmax_rows(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..d {
            out[i * d + j] = (row[j] - max).exp();
            sum += out[i * d + j];
        }
        for j in 0..d {
            out[i * d + j] /= sum;
        }
    }
    out
}

pub fn softplus(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

pub fn cross_entropy_nll(logits: &[f64], l: usize, v: usize, targets: &[u32], pad: u32) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..l {
        if targets[i] == pad {
            continue;
        }
        let row = &logits[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[targets[i] as usize];
        count += 1;
    }
    total / count as f64
}

pub fn mask_rows(x: &[f64], n: usize, d: usize, masked: &[bool], fill: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..n {
        if masked[i] {
            for j in 0..d {
                out[i * d + j] = fill;
            }
        }
    }
    out
}

pub fn edge_gather_sum(dst_scores: &[f64], src_scores: &[f64], edges: &[(u32, u32)]) -> Vec<f64> {
    edges
        .iter()
        .map(|&(s, t)| dst_scores[t as usize] + src_scores[s as usize])
        .collect()
}

pub fn segment_softmax(x: &[f64], segments: &[(usize, usize)]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for &(s, e) in segments {
        if s == e {
            continue;
        }
        let max = x[s..e].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in s..e {
            out[i] = (x[i] - max).exp();
            sum += out[i];
        }
        for i in s..e {
            out[i] /= sum;
        }
    }
    out
}

pub fn edge_weighted_sum(
    alpha: &[f64],
    values: &[f64],
    d: usize,
    edges: &[(u32, u32)],
    n_nodes: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n_nodes * d];
    for (i, &(s, t)) in edges.iter().enumerate() {
        for j in 0..d {
            out[t as usize * d + j] += alpha[i] * values[s as usize * d + j];
        }
    }
    out
}

/// Two-term contrastive loss on cosine similarities.
pub fn contrastive_loss(b: &[f64], bp: &[f64], bn: &[f64], tau: f64) -> f64 {
    let sp = cosine(b, bp);
    let sn = cosine(b, bn);
    let z = (sn - sp) / tau;
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
