//! Criterion 1: every differentiable primitive plus the composed losses,
//! checked against central finite differences of the f64 reference forward,
//! five seeds each, max relative error < 1e-4.

use std::rc::Rc;

use radsum_core::tensor::{Tape, TensorId};
use radsum_testkit::{
    fd_gradient, max_rel_err, reference as r64, seeded_vec, seeded_vec_away_from_zero, to_f32,
    FD_STEP, REL_ERR_FLOOR,
};

const SEEDS: u64 = 5;
const TOL: f64 = 1e-4;

/// Check one op: build the f32 loss from leaves, then compare each leaf's
/// analytic gradient against finite differences of the f64 reference.
fn check(
    name: &str,
    seed: u64,
    inputs: &[(Vec<f64>, Vec<usize>)],
    build: impl Fn(&mut Tape, &[TensorId]) -> TensorId,
    reference: impl Fn(&[&[f64]]) -> f64,
) {
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|(v, s)| tape.leaf(to_f32(v), s.clone(), true))
        .collect();
    let loss = build(&mut tape, &ids);
    assert_eq!(tape.value(loss).numel(), 1, "{name}: loss must be scalar");
    tape.backward(loss).unwrap();

    let base: Vec<&[f64]> = inputs.iter().map(|(v, _)| v.as_slice()).collect();
    for (i, id) in ids.iter().enumerate() {
        let analytic = tape.grad(*id).unwrap_or_else(|| {
            panic!("{name} seed {seed}: input {i} received no gradient")
        });
        let numeric = fd_gradient(
            |probe| {
                let mut args = base.clone();
                args[i] = probe;
                reference(&args)
            },
            &inputs[i].0,
            FD_STEP,
        );
        let err = max_rel_err(analytic, &numeric, REL_ERR_FLOOR);
        assert!(
            err < TOL,
            "{name} seed {seed} input {i}: max rel err {err:.3e}"
        );
    }
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn run_full_suite() {
    for seed in 0..SEEDS {
        elementwise_ops(seed);
        matmul_and_shape_ops(seed);
        embedding_and_norm(seed);
        activations(seed);
        pooling_and_dropout(seed);
        softmax_family(seed);
        similarity_and_nll(seed);
        masking(seed);
        graph_edge_ops(seed);
        composed_losses(seed);
    }
}

fn elementwise_ops(seed: u64) {
    let n = 12;
    let a = seeded_vec(seed * 100 + 1, n, -2.0, 2.0);
    let b = seeded_vec(seed * 100 + 2, n, -2.0, 2.0);
    let probe = seeded_vec(seed * 100 + 3, n, -1.0, 1.0);

    for (name, f32_op, ref_op) in [
        (
            "add",
            Box::new(|t: &mut Tape, x: TensorId, y: TensorId| t.add(x, y).unwrap())
                as Box<dyn Fn(&mut Tape, TensorId, TensorId) -> TensorId>,
            Box::new(r64::add) as Box<dyn Fn(&[f64], &[f64]) -> Vec<f64>>,
        ),
        (
            "sub",
            Box::new(|t: &mut Tape, x, y| t.sub(x, y).unwrap()),
            Box::new(r64::sub),
        ),
        (
            "mul",
            Box::new(|t: &mut Tape, x, y| t.mul(x, y).unwrap()),
            Box::new(r64::mul),
        ),
    ] {
        let probe_ref = probe.clone();
        check(
            name,
            seed,
            &[(a.clone(), vec![n]), (b.clone(), vec![n])],
            |tape, ids| {
                let out = f32_op(tape, ids[0], ids[1]);
                let w = tape.leaf(to_f32(&probe), vec![n], false);
                let prod = tape.mul(out, w).unwrap();
                tape.sum_all(prod)
            },
            |args| dot64(&ref_op(args[0], args[1]), &probe_ref),
        );
    }

    let c = 1.37f32;
    check(
        "scale",
        seed,
        &[(a.clone(), vec![n])],
        |tape, ids| {
            let out = tape.scale(ids[0], c);
            let w = tape.leaf(to_f32(&probe), vec![n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::scale(args[0], c as f64), &probe),
    );

    check(
        "sum_all",
        seed,
        &[(a.clone(), vec![n])],
        |tape, ids| tape.sum_all(ids[0]),
        |args| args[0].iter().sum(),
    );
}

fn matmul_and_shape_ops(seed: u64) {
    let (m, k, n) = (3, 4, 2);
    let a = seeded_vec(seed * 200 + 1, m * k, -1.5, 1.5);
    let b = seeded_vec(seed * 200 + 2, k * n, -1.5, 1.5);
    let probe = seeded_vec(seed * 200 + 3, m * n, -1.0, 1.0);
    check(
        "matmul",
        seed,
        &[(a.clone(), vec![m, k]), (b.clone(), vec![k, n])],
        |tape, ids| {
            let out = tape.matmul(ids[0], ids[1]).unwrap();
            let w = tape.leaf(to_f32(&probe), vec![m, n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::matmul(args[0], args[1], m, k, n), &probe),
    );

    let probe_t = seeded_vec(seed * 200 + 4, m * k, -1.0, 1.0);
    check(
        "transpose",
        seed,
        &[(a.clone(), vec![m, k])],
        |tape, ids| {
            let out = tape.transpose(ids[0]).unwrap();
            let w = tape.leaf(to_f32(&probe_t), vec![k, m], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::transpose(args[0], m, k), &probe_t),
    );

    let rows = 3;
    let bias = seeded_vec(seed * 200 + 5, k, -0.5, 0.5);
    let probe_b = seeded_vec(seed * 200 + 6, rows * k, -1.0, 1.0);
    check(
        "add_bias",
        seed,
        &[(a.clone(), vec![rows, k]), (bias.clone(), vec![k])],
        |tape, ids| {
            let out = tape.add_bias(ids[0], ids[1]).unwrap();
            let w = tape.leaf(to_f32(&probe_b), vec![rows, k], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::add_bias(args[0], args[1], rows, k), &probe_b),
    );

    let left = seeded_vec(seed * 200 + 7, rows * 2, -1.0, 1.0);
    let right = seeded_vec(seed * 200 + 8, rows * 3, -1.0, 1.0);
    let probe_c = seeded_vec(seed * 200 + 9, rows * 5, -1.0, 1.0);
    check(
        "concat_cols",
        seed,
        &[(left.clone(), vec![rows, 2]), (right.clone(), vec![rows, 3])],
        |tape, ids| {
            let out = tape.concat_cols(&[ids[0], ids[1]]).unwrap();
            let w = tape.leaf(to_f32(&probe_c), vec![rows, 5], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| {
            let cat = r64::concat_cols(&[(args[0], 2), (args[1], 3)], rows);
            dot64(&cat, &probe_c)
        },
    );

    let wide = seeded_vec(seed * 200 + 10, rows * 6, -1.0, 1.0);
    let probe_s = seeded_vec(seed * 200 + 11, rows * 3, -1.0, 1.0);
    check(
        "slice_cols",
        seed,
        &[(wide.clone(), vec![rows, 6])],
        |tape, ids| {
            let out = tape.slice_cols(ids[0], 2, 3).unwrap();
            let w = tape.leaf(to_f32(&probe_s), vec![rows, 3], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::slice_cols(args[0], rows, 6, 2, 3), &probe_s),
    );
}

fn embedding_and_norm(seed: u64) {
    let (v, d) = (6, 4);
    let table = seeded_vec(seed * 300 + 1, v * d, -1.0, 1.0);
    let ids: Vec<u32> = vec![2, 0, 5, 2];
    let probe = seeded_vec(seed * 300 + 2, ids.len() * d, -1.0, 1.0);
    let ids_ref = ids.clone();
    check(
        "embedding",
        seed,
        &[(table.clone(), vec![v, d])],
        |tape, leaf_ids| {
            let out = tape.embedding(leaf_ids[0], &ids).unwrap();
            let w = tape.leaf(to_f32(&probe), vec![ids.len(), d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::embedding(args[0], d, &ids_ref), &probe),
    );

    let (n, dd) = (3, 5);
    let x = seeded_vec(seed * 300 + 3, n * dd, -1.5, 1.5);
    let gamma = seeded_vec(seed * 300 + 4, dd, 0.5, 1.5);
    let beta = seeded_vec(seed * 300 + 5, dd, -0.3, 0.3);
    let probe_ln = seeded_vec(seed * 300 + 6, n * dd, -1.0, 1.0);
    check(
        "layer_norm",
        seed,
        &[
            (x.clone(), vec![n, dd]),
            (gamma.clone(), vec![dd]),
            (beta.clone(), vec![dd]),
        ],
        |tape, ids| {
            let out = tape.layer_norm(ids[0], ids[1], ids[2]).unwrap();
            let w = tape.leaf(to_f32(&probe_ln), vec![n, dd], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| {
            let out = r64::layer_norm(args[0], args[1], args[2], n, dd, r64::LN_EPS);
            dot64(&out, &probe_ln)
        },
    );
}

fn activations(seed: u64) {
    let n = 10;
    let smooth = seeded_vec(seed * 400 + 1, n, -2.0, 2.0);
    let kinked = seeded_vec_away_from_zero(seed * 400 + 2, n, 2.0, 0.05);
    let probe = seeded_vec(seed * 400 + 3, n, -1.0, 1.0);

    check(
        "gelu",
        seed,
        &[(smooth.clone(), vec![n])],
        |tape, ids| {
            let out = tape.gelu(ids[0]);
            let w = tape.leaf(to_f32(&probe), vec![n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::gelu(args[0]), &probe),
    );

    check(
        "leaky_relu",
        seed,
        &[(kinked.clone(), vec![n])],
        |tape, ids| {
            let out = tape.leaky_relu(ids[0], 0.2);
            let w = tape.leaf(to_f32(&probe), vec![n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::leaky_relu(args[0], 0.2), &probe),
    );

    check(
        "elu",
        seed,
        &[(kinked.clone(), vec![n])],
        |tape, ids| {
            let out = tape.elu(ids[0]);
            let w = tape.leaf(to_f32(&probe), vec![n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::elu(args[0]), &probe),
    );

    check(
        "softplus",
        seed,
        &[(smooth.clone(), vec![n])],
        |tape, ids| {
            let out = tape.softplus(ids[0]);
            let w = tape.leaf(to_f32(&probe), vec![n], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::softplus(args[0]), &probe),
    );
}

fn pooling_and_dropout(seed: u64) {
    let (n, d) = (4, 6);
    let x = seeded_vec(seed * 500 + 1, n * d, -2.0, 2.0);
    let probe = seeded_vec(seed * 500 + 2, d, -1.0, 1.0);
    check(
        "mean_rows",
        seed,
        &[(x.clone(), vec![n, d])],
        |tape, ids| {
            let out = tape.mean_rows(ids[0]).unwrap();
            let w = tape.leaf(to_f32(&probe), vec![d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::mean_rows(args[0], n, d), &probe),
    );

    // dropout with a fixed, observable mask (train-only path)
    let keep = 1.0 / (1.0 - 0.4);
    let mask: Vec<f32> = (0..n * d)
        .map(|i| if (i * 7 + seed as usize) % 5 < 2 { 0.0 } else { keep as f32 })
        .collect();
    let mask64: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
    let probe_d = seeded_vec(seed * 500 + 3, n * d, -1.0, 1.0);
    let mask_rc = Rc::new(mask);
    check(
        "dropout",
        seed,
        &[(x.clone(), vec![n, d])],
        |tape, ids| {
            let out = tape.dropout_with_mask(ids[0], mask_rc.clone());
            let w = tape.leaf(to_f32(&probe_d), vec![n, d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::mul(args[0], &mask64), &probe_d),
    );
}

fn softmax_family(seed: u64) {
    let (n, d) = (3, 5);
    let x = seeded_vec(seed * 600 + 1, n * d, -2.0, 2.0);
    let probe = seeded_vec(seed * 600 + 2, n * d, -1.0, 1.0);
    check(
        "softmax",
        seed,
        &[(x.clone(), vec![n, d])],
        |tape, ids| {
            let out = tape.softmax_rows(ids[0]).unwrap();
            let w = tape.leaf(to_f32(&probe), vec![n, d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::softmax_rows(args[0], n, d), &probe),
    );

    let e = 9;
    let scores = seeded_vec(seed * 600 + 3, e, -2.0, 2.0);
    let segments = vec![(0usize, 3usize), (3, 4), (4, 9)];
    let probe_seg = seeded_vec(seed * 600 + 4, e, -1.0, 1.0);
    let segments_ref = segments.clone();
    let segments_rc = Rc::new(segments);
    check(
        "segment_softmax",
        seed,
        &[(scores.clone(), vec![e])],
        |tape, ids| {
            let out = tape.segment_softmax(ids[0], segments_rc.clone()).unwrap();
            let w = tape.leaf(to_f32(&probe_seg), vec![e], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::segment_softmax(args[0], &segments_ref), &probe_seg),
    );
}

fn similarity_and_nll(seed: u64) {
    let d = 7;
    let a = seeded_vec_away_from_zero(seed * 700 + 1, d, 2.0, 0.1);
    let b = seeded_vec_away_from_zero(seed * 700 + 2, d, 2.0, 0.1);
    check(
        "cosine_similarity",
        seed,
        &[(a.clone(), vec![d]), (b.clone(), vec![d])],
        |tape, ids| tape.cosine_similarity(ids[0], ids[1]).unwrap(),
        |args| r64::cosine(args[0], args[1]),
    );

    let (l, v) = (4, 9);
    let logits = seeded_vec(seed * 700 + 3, l * v, -2.0, 2.0);
    let targets: Vec<u32> = (0..l as u32).map(|i| (i * 2 + seed as u32) % v as u32).collect();
    let targets_ref = targets.clone();
    check(
        "cross_entropy_nll",
        seed,
        &[(logits.clone(), vec![l, v])],
        |tape, ids| tape.cross_entropy_nll(ids[0], &targets, u32::MAX).unwrap(),
        |args| r64::cross_entropy_nll(args[0], l, v, &targets_ref, u32::MAX),
    );
}

fn masking(seed: u64) {
    let (n, d) = (5, 4);
    let x = seeded_vec(seed * 800 + 1, n * d, -2.0, 2.0);
    let masked: Vec<bool> = (0..n).map(|i| (i + seed as usize) % 2 == 0).collect();
    let masked64 = masked.clone();
    let probe = seeded_vec(seed * 800 + 2, n * d, -1.0, 1.0);
    let masked_rc = Rc::new(masked);
    check(
        "mask_rows",
        seed,
        &[(x.clone(), vec![n, d])],
        |tape, ids| {
            let out = tape.mask_rows(ids[0], masked_rc.clone(), 1e-6).unwrap();
            let w = tape.leaf(to_f32(&probe), vec![n, d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::mask_rows(args[0], n, d, &masked64, 1e-6), &probe),
    );
}

fn graph_edge_ops(seed: u64) {
    let n = 5;
    let edges: Vec<(u32, u32)> = vec![(0, 1), (2, 1), (1, 3), (4, 3), (3, 3)];
    let e = edges.len();

    let dst_scores = seeded_vec(seed * 900 + 1, n, -1.5, 1.5);
    let src_scores = seeded_vec(seed * 900 + 2, n, -1.5, 1.5);
    let probe = seeded_vec(seed * 900 + 3, e, -1.0, 1.0);
    let edges_ref = edges.clone();
    let edges_rc = Rc::new(edges.clone());
    check(
        "edge_gather_sum",
        seed,
        &[(dst_scores.clone(), vec![n]), (src_scores.clone(), vec![n])],
        |tape, ids| {
            let out = tape
                .edge_gather_sum(ids[0], ids[1], edges_rc.clone())
                .unwrap();
            let w = tape.leaf(to_f32(&probe), vec![e], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| dot64(&r64::edge_gather_sum(args[0], args[1], &edges_ref), &probe),
    );

    let d = 3;
    let alpha = seeded_vec(seed * 900 + 4, e, 0.05, 1.0);
    let values = seeded_vec(seed * 900 + 5, n * d, -1.5, 1.5);
    let probe_w = seeded_vec(seed * 900 + 6, n * d, -1.0, 1.0);
    let edges_ref2 = edges.clone();
    let edges_rc2 = Rc::new(edges);
    check(
        "edge_weighted_sum",
        seed,
        &[(alpha.clone(), vec![e]), (values.clone(), vec![n, d])],
        |tape, ids| {
            let out = tape
                .edge_weighted_sum(ids[0], ids[1], edges_rc2.clone(), n)
                .unwrap();
            let w = tape.leaf(to_f32(&probe_w), vec![n, d], false);
            let prod = tape.mul(out, w).unwrap();
            tape.sum_all(prod)
        },
        |args| {
            dot64(
                &r64::edge_weighted_sum(args[0], args[1], d, &edges_ref2, n),
                &probe_w,
            )
        },
    );
}

fn composed_losses(seed: u64) {
    // l_ge as a composition: logits = x @ w + bias, then mean NLL
    let (l, d, v) = (3, 6, 8);
    let x = seeded_vec(seed * 1100 + 1, l * d, -1.0, 1.0);
    let w = seeded_vec(seed * 1100 + 2, d * v, -0.8, 0.8);
    let bias = seeded_vec(seed * 1100 + 3, v, -0.2, 0.2);
    let targets: Vec<u32> = (0..l as u32).map(|i| (i * 3 + seed as u32) % v as u32).collect();

    let targets_ge = targets.clone();
    check(
        "l_ge composed",
        seed,
        &[
            (x.clone(), vec![l, d]),
            (w.clone(), vec![d, v]),
            (bias.clone(), vec![v]),
        ],
        |tape, ids| {
            let mm = tape.matmul(ids[0], ids[1]).unwrap();
            let logits = tape.add_bias(mm, ids[2]).unwrap();
            tape.cross_entropy_nll(logits, &targets, u32::MAX).unwrap()
        },
        |args| {
            let logits = r64::add_bias(&r64::matmul(args[0], args[1], l, d, v), args[2], l, v);
            r64::cross_entropy_nll(&logits, l, v, &targets_ge, u32::MAX)
        },
    );

    // l_con over its three pooled vectors, two temperatures
    let dim = 6;
    let b = seeded_vec_away_from_zero(seed * 1100 + 4, dim, 1.5, 0.1);
    let bp = seeded_vec_away_from_zero(seed * 1100 + 5, dim, 1.5, 0.1);
    let bn = seeded_vec_away_from_zero(seed * 1100 + 6, dim, 1.5, 0.1);
    for tau in [1.0f32, 0.7] {
        check(
            "l_con composed",
            seed,
            &[
                (b.clone(), vec![dim]),
                (bp.clone(), vec![dim]),
                (bn.clone(), vec![dim]),
            ],
            |tape, ids| {
                let sp = tape.cosine_similarity(ids[0], ids[1]).unwrap();
                let sn = tape.cosine_similarity(ids[0], ids[2]).unwrap();
                let diff = tape.sub(sn, sp).unwrap();
                let scaled = tape.scale(diff, 1.0 / tau);
                tape.softplus(scaled)
            },
            |args| r64::contrastive_loss(args[0], args[1], args[2], tau as f64),
        );
    }

    // joint L = l_ge + lambda * l_con over all six inputs
    let lambda = 0.5f32;
    let targets_joint = targets.clone();
    check(
        "L joint composed",
        seed,
        &[
            (x.clone(), vec![l, d]),
            (w.clone(), vec![d, v]),
            (bias.clone(), vec![v]),
            (b.clone(), vec![dim]),
            (bp.clone(), vec![dim]),
            (bn.clone(), vec![dim]),
        ],
        |tape, ids| {
            let mm = tape.matmul(ids[0], ids[1]).unwrap();
            let logits = tape.add_bias(mm, ids[2]).unwrap();
            let l_ge = tape.cross_entropy_nll(logits, &targets, u32::MAX).unwrap();
            let sp = tape.cosine_similarity(ids[3], ids[4]).unwrap();
            let sn = tape.cosine_similarity(ids[3], ids[5]).unwrap();
            let diff = tape.sub(sn, sp).unwrap();
            let l_con = tape.softplus(diff);
            let scaled = tape.scale(l_con, lambda);
            tape.add(l_ge, scaled).unwrap()
        },
        |args| {
            let logits = r64::add_bias(&r64::matmul(args[0], args[1], l, d, v), args[2], l, v);
            let l_ge = r64::cross_entropy_nll(&logits, l, v, &targets_joint, u32::MAX);
            let l_con = r64::contrastive_loss(args[3], args[4], args[5], 1.0);
            l_ge + lambda as f64 * l_con
        },
    );
}
