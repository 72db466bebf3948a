use std::sync::Arc;

use netsight_core::model::{
    adjacency_mask, feed_forward, gat_attention, gat_layer, node_normalize, pool_super_node, spatial_stack,
    GatHead, SpatialBlockParams, SpatialParams,
};
use netsight_core::numeric::{grad_check, grad_check_all, seeded_rng, Mask, Rng};
use netsight_core::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::Rng as _;

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn path_mask(n: usize) -> Arc<Mask> {
    let keep: Vec<bool> = (0..n * n)
        .map(|i| {
            let (a, b) = (i / n, i % n);
            a.abs_diff(b) <= 1
        })
        .collect();
    adjacency_mask(n, &keep).unwrap()
}

struct Head {
    w: Tensor,
    a_src: Tensor,
    a_dst: Tensor,
}

fn random_heads(rng: &mut Rng, m: usize, f: usize) -> Vec<Head> {
    (0..m)
        .map(|_| Head {
            w: random(rng, &[f, f]),
            a_src: random(rng, &[f, 1]),
            a_dst: random(rng, &[f, 1]),
        })
        .collect()
}

fn bind_heads(tape: &mut Tape, heads: &[Head]) -> Vec<GatHead<Var>> {
    heads
        .iter()
        .map(|h| GatHead {
            w: tape.constant(h.w.clone()),
            a_src: tape.constant(h.a_src.clone()),
            a_dst: tape.constant(h.a_dst.clone()),
        })
        .collect()
}

/// Straight-line evaluation of the attention score, neighborhood softmax,
/// weighted aggregation, head average and rectifier.
fn gat_oracle(x: &Tensor, heads: &[Head], keep: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    let s = x.shape();
    let (t, n, f) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; t * n * f];
    for head in heads {
        for ti in 0..t {
            let z: Vec<Vec<f64>> = (0..n)
                .map(|j| {
                    (0..f)
                        .map(|c| (0..f).map(|r| x.at(&[ti, j, r]) * head.w.at(&[r, c])).sum())
                        .collect()
                })
                .collect();
            for j in 0..n {
                let score = |k: usize| {
                    let e: f64 = (0..f)
                        .map(|c| head.a_src.at(&[c, 0]) * z[j][c] + head.a_dst.at(&[c, 0]) * z[k][c])
                        .sum();
                    if e > 0.0 {
                        e
                    } else {
                        0.2 * e
                    }
                };
                let nbrs: Vec<usize> = (0..n).filter(|&k| keep(j, k)).collect();
                let exps: Vec<f64> = nbrs.iter().map(|&k| score(k).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (&k, e) in nbrs.iter().zip(&exps) {
                    for c in 0..f {
                        out[(ti * n + j) * f + c] += e / total * z[k][c] / heads.len() as f64;
                    }
                }
            }
        }
    }
    out.into_iter().map(|v| v.max(0.0)).collect()
}

#[test]
fn feed_forward_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 0.5, 0.0]).unwrap());
    let w = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let y = feed_forward(&mut tape, x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 0.5, 0.0]);

    let x = tape.constant(Tensor::from_rows(&[vec![-1.0]]).unwrap());
    let w = tape.constant(Tensor::from_rows(&[vec![1.0]]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = feed_forward(&mut tape, x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0]);
}

#[test]
fn feed_forward_gradient() {
    let mut rng = seeded_rng(1);
    let x = random(&mut rng, &[4, 2]);
    let w = random(&mut rng, &[2, 3]);
    let b = random(&mut rng, &[3]);
    let err = grad_check_all(
        |tape, v| {
            let y = feed_forward(tape, v[0], v[1], v[2])?;
            let y = tape.mul(y, y)?;
            tape.sum(y)
        },
        &[x, w, b],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn gat_singleton_attends_to_itself() {
    let mut rng = seeded_rng(2);
    let x = random(&mut rng, &[3, 1, 4]);
    let heads = random_heads(&mut rng, 2, 4);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let hv = bind_heads(&mut tape, &heads);
    let mask = adjacency_mask(1, &[true]).unwrap();
    let (out, alphas) = gat_attention(&mut tape, xv, &hv, &mask).unwrap();
    for a in alphas {
        assert!(tape.value(a).data().iter().all(|&v| v == 1.0));
    }
    for t in 0..3 {
        for c in 0..4 {
            let avg: f64 = heads
                .iter()
                .map(|h| (0..4).map(|r| x.at(&[t, 0, r]) * h.w.at(&[r, c])).sum::<f64>())
                .sum::<f64>()
                / 2.0;
            assert!((tape.value(out).at(&[t, 0, c]) - avg.max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn gat_symmetric_nodes_agree() {
    let mut rng = seeded_rng(3);
    let row = random(&mut rng, &[1, 1, 3]);
    let x = Tensor::new(&[1, 2, 3], [row.data(), row.data()].concat()).unwrap();
    let heads = random_heads(&mut rng, 3, 3);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let hv = bind_heads(&mut tape, &heads);
    let mask = adjacency_mask(2, &[true; 4]).unwrap();
    let out = gat_layer(&mut tape, xv, &hv, &mask).unwrap();
    let v = tape.value(out).data();
    assert_eq!(v[..3], v[3..]);
}

#[test]
fn gat_matches_straight_line_oracle_on_path_graph() {
    let mut rng = seeded_rng(4);
    for m in [1, 3] {
        let x = random(&mut rng, &[2, 3, 2]);
        let heads = random_heads(&mut rng, m, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let hv = bind_heads(&mut tape, &heads);
        let out = gat_layer(&mut tape, xv, &hv, &path_mask(3)).unwrap();
        let want = gat_oracle(&x, &heads, |a, b| a.abs_diff(b) <= 1);
        for (a, b) in tape.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn gat_gradient() {
    let mut rng = seeded_rng(5);
    let x = random(&mut rng, &[2, 3, 2]);
    let heads = random_heads(&mut rng, 2, 2);
    let mut inputs = vec![x];
    for h in &heads {
        inputs.extend([h.w.clone(), h.a_src.clone(), h.a_dst.clone()]);
    }
    let mask = path_mask(3);
    let err = grad_check_all(
        |tape, v| {
            let hv: Vec<GatHead<Var>> = v[1..]
                .chunks(3)
                .map(|c| GatHead {
                    w: c[0],
                    a_src: c[1],
                    a_dst: c[2],
                })
                .collect();
            let y = gat_layer(tape, v[0], &hv, &mask)?;
            let y = tape.mul(y, y)?;
            tape.sum(y)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gat_is_permutation_equivariant() {
    let mut rng = seeded_rng(6);
    let n = 5;
    let x = random(&mut rng, &[3, n, 4]);
    let heads = random_heads(&mut rng, 2, 4);
    let keep: Vec<bool> = (0..n * n).map(|i| i / n == i % n || rng.random_bool(0.5)).collect();
    let perm = [3usize, 0, 4, 1, 2];

    let run = |x: &Tensor, keep: &[bool]| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let hv = bind_heads(&mut tape, &heads);
        let out = gat_layer(&mut tape, xv, &hv, &adjacency_mask(n, keep).unwrap()).unwrap();
        tape.value(out).clone()
    };
    let base = run(&x, &keep);
    let mut px = x.clone();
    let mut pkeep = keep.clone();
    for t in 0..3 {
        for j in 0..n {
            for c in 0..4 {
                px.set(&[t, j, c], x.at(&[t, perm[j], c]));
            }
        }
    }
    for a in 0..n {
        for b in 0..n {
            pkeep[a * n + b] = keep[perm[a] * n + perm[b]];
        }
    }
    let permuted = run(&px, &pkeep);
    for t in 0..3 {
        for j in 0..n {
            for c in 0..4 {
                assert!((permuted.at(&[t, j, c]) - base.at(&[t, perm[j], c])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gat_rejects_isolated_node() {
    let mut tape = Tape::new();
    let mut rng = seeded_rng(7);
    let xv = tape.constant(random(&mut rng, &[1, 2, 2]));
    let heads = random_heads(&mut rng, 1, 2);
    let hv = bind_heads(&mut tape, &heads);
    let mask = adjacency_mask(2, &[true, false, false, false]).unwrap();
    assert!(gat_layer(&mut tape, xv, &hv, &mask).is_err());
}

proptest! {
    #[test]
    fn attention_respects_neighborhoods(seed in 0u64..1000, n in 1usize..7) {
        let mut rng = seeded_rng(seed);
        let keep: Vec<bool> = (0..n * n).map(|i| i / n == i % n || rng.random_bool(0.4)).collect();
        let x = random(&mut rng, &[2, n, 3]);
        let heads = random_heads(&mut rng, 3, 3);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let hv = bind_heads(&mut tape, &heads);
        let (_, alphas) = gat_attention(&mut tape, xv, &hv, &adjacency_mask(n, &keep).unwrap()).unwrap();
        for a in alphas {
            let a = tape.value(a);
            for t in 0..2 {
                for j in 0..n {
                    let mut sum = 0.0;
                    for k in 0..n {
                        let v = a.at(&[t, j, k]);
                        if !keep[j * n + k] {
                            prop_assert_eq!(v, 0.0);
                        }
                        sum += v;
                    }
                    prop_assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn node_normalize_standardizes(seed in 0u64..1000) {
        let mut rng = seeded_rng(seed);
        let (t, n, f) = (4, 3, 5);
        let x = random(&mut rng, &[t, n, f]).map(|v| v * 3.0 + 2.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let g = tape.constant(Tensor::full(&[n], 1.0));
        let b = tape.constant(Tensor::zeros(&[n]));
        let y = node_normalize(&mut tape, xv, g, b).unwrap();
        let y = tape.value(y);
        for j in 0..n {
            let vals: Vec<f64> = (0..t).flat_map(|ti| (0..f).map(move |c| (ti, c))).map(|(ti, c)| y.at(&[ti, j, c])).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn node_normalize_hand_example_and_constant_node() {
    let mut tape = Tape::new();
    // tau = 2, one node, two features: values 1, 3, 5, 7
    let x = tape.constant(Tensor::new(&[2, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap());
    let g = tape.constant(Tensor::vector(vec![1.0]));
    let b = tape.constant(Tensor::vector(vec![0.0]));
    let y = node_normalize(&mut tape, x, g, b).unwrap();
    let s5 = 5f64.sqrt();
    for (got, want) in tape.value(y).data().iter().zip([-3.0 / s5, -1.0 / s5, 1.0 / s5, 3.0 / s5]) {
        assert!((got - want).abs() < 1e-12);
    }

    let x = tape.constant(Tensor::full(&[3, 2, 2], 4.0));
    let g = tape.constant(Tensor::vector(vec![2.0, 3.0]));
    let b = tape.constant(Tensor::vector(vec![0.5, -1.0]));
    let y = node_normalize(&mut tape, x, g, b).unwrap();
    let y = tape.value(y);
    assert!((0..3).all(|t| (0..2).all(|c| y.at(&[t, 0, c]) == 0.5 && y.at(&[t, 1, c]) == -1.0)));
}

#[test]
fn node_normalize_gradient() {
    let mut rng = seeded_rng(8);
    let inputs = [random(&mut rng, &[4, 3, 2]), random(&mut rng, &[3]), random(&mut rng, &[3])];
    let err = grad_check_all(
        |tape, v| {
            let y = node_normalize(tape, v[0], v[1], v[2])?;
            let w = tape.constant(Tensor::new(&[4, 3, 2], (0..24).map(|i| (i as f64 * 0.7).sin()).collect())?);
            let y = tape.mul(y, w)?;
            tape.sum(y)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn pooling_examples_and_gradient() {
    let mut rng = seeded_rng(9);
    let x = random(&mut rng, &[2, 4, 3]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let uniform = tape.constant(Tensor::full(&[4, 1], 0.25));
    let s = pool_super_node(&mut tape, xv, uniform).unwrap();
    assert_eq!(tape.shape(s), &[2, 1, 3]);
    for t in 0..2 {
        for c in 0..3 {
            let mean = (0..4).map(|j| x.at(&[t, j, c])).sum::<f64>() / 4.0;
            assert!((tape.value(s).at(&[t, 0, c]) - mean).abs() < 1e-12);
        }
    }
    let onehot = tape.constant(Tensor::new(&[4, 1], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
    let s = pool_super_node(&mut tape, xv, onehot).unwrap();
    for t in 0..2 {
        for c in 0..3 {
            assert_eq!(tape.value(s).at(&[t, 0, c]), x.at(&[t, 2, c]));
        }
    }
    let bad = tape.constant(Tensor::zeros(&[3, 1]));
    assert!(pool_super_node(&mut tape, xv, bad).is_err());

    let w = random(&mut rng, &[4, 1]);
    let err = grad_check(
        |tape, wp| {
            let xv = tape.constant(x.clone());
            let s = pool_super_node(tape, xv, wp)?;
            let s = tape.mul(s, s)?;
            tape.sum(s)
        },
        &w,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

struct Block {
    w_ff: Tensor,
    b_ff: Tensor,
    heads: Vec<Head>,
    scale: Tensor,
    shift: Tensor,
}

fn random_block(rng: &mut Rng, input: usize, width: usize, n: usize, heads: usize) -> Block {
    Block {
        w_ff: random(rng, &[input, width]),
        b_ff: random(rng, &[width]),
        heads: random_heads(rng, heads, width),
        scale: random(rng, &[n]).map(|v| 1.0 + 0.3 * v),
        shift: random(rng, &[n]),
    }
}

fn flatten(blocks: &[Block], w_pool: &Tensor) -> Vec<Tensor> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend([b.w_ff.clone(), b.b_ff.clone()]);
        for h in &b.heads {
            out.extend([h.w.clone(), h.a_src.clone(), h.a_dst.clone()]);
        }
        out.extend([b.scale.clone(), b.shift.clone()]);
    }
    out.push(w_pool.clone());
    out
}

fn unflatten(v: &[Var], blocks: usize, heads: usize) -> SpatialParams<Var> {
    let per = 4 + 3 * heads;
    SpatialParams {
        blocks: (0..blocks)
            .map(|b| {
                let s = &v[b * per..(b + 1) * per];
                SpatialBlockParams {
                    w_ff: s[0],
                    b_ff: s[1],
                    heads: s[2..2 + 3 * heads]
                        .chunks(3)
                        .map(|c| GatHead {
                            w: c[0],
                            a_src: c[1],
                            a_dst: c[2],
                        })
                        .collect(),
                    norm_scale: s[per - 2],
                    norm_shift: s[per - 1],
                }
            })
            .collect(),
        w_pool: v[blocks * per],
    }
}

fn run_stack(x: &Tensor, params: &[Tensor], blocks: usize, heads: usize, mask: &Arc<Mask>) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = spatial_stack(&mut tape, xv, &unflatten(&vars, blocks, heads), mask, true).unwrap();
    (tape.value(out.local).clone(), tape.value(out.super_node).clone())
}

#[test]
fn single_block_stack_is_the_block_pipeline() {
    let mut rng = seeded_rng(10);
    let (t, n, d, h) = (3, 4, 2, 6);
    let x = random(&mut rng, &[t, n, d]);
    let block = random_block(&mut rng, d, h, n, 2);
    let w_pool = random(&mut rng, &[n, 1]);
    let mask = path_mask(n);
    let (local, sup) = run_stack(&x, &flatten(std::slice::from_ref(&block), &w_pool), 1, 2, &mask);
    assert_eq!(local.shape(), &[t, n, h]);
    assert_eq!(sup.shape(), &[t, 1, h]);

    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let w = tape.constant(block.w_ff.clone());
    let b = tape.constant(block.b_ff.clone());
    let ff = feed_forward(&mut tape, xv, w, b).unwrap();
    let hv = bind_heads(&mut tape, &block.heads);
    let g = gat_layer(&mut tape, ff, &hv, &mask).unwrap();
    let r = tape.add(g, ff).unwrap();
    let sc = tape.constant(block.scale.clone());
    let sh = tape.constant(block.shift.clone());
    let y = node_normalize(&mut tape, r, sc, sh).unwrap();
    let wp = tape.constant(w_pool);
    let s = pool_super_node(&mut tape, y, wp).unwrap();
    assert_eq!(tape.value(y), &local);
    assert_eq!(tape.value(s), &sup);
}

#[test]
fn zeroed_second_block_passes_first_block_through_the_skip() {
    let mut rng = seeded_rng(11);
    let (t, n, d, h) = (4, 3, 2, 4);
    let x = random(&mut rng, &[t, n, d]);
    let first = random_block(&mut rng, d, h, n, 2);
    let w_pool = random(&mut rng, &[n, 1]);
    let mask = path_mask(n);
    let (one, _) = run_stack(&x, &flatten(std::slice::from_ref(&first), &w_pool), 1, 2, &mask);

    let mut second = random_block(&mut rng, h, h, n, 2);
    second.w_ff = Tensor::zeros(&[h, h]);
    second.b_ff = Tensor::zeros(&[h]);
    second.shift = Tensor::zeros(&[n]);
    let (two, _) = run_stack(&x, &flatten(&[first, second], &w_pool), 2, 2, &mask);
    assert_eq!(one, two);
}

#[test]
fn stacked_blocks_gradient_wrt_every_parameter() {
    // Seed chosen so no rectifier sits within eps of its kink.
    let mut rng = seeded_rng(13);
    let (t, n, d, h, heads) = (4, 3, 2, 3, 2);
    let x = random(&mut rng, &[t, n, d]);
    let blocks = [random_block(&mut rng, d, h, n, heads), random_block(&mut rng, h, h, n, heads)];
    let params = flatten(&blocks, &random(&mut rng, &[n, 1]));
    let mask = path_mask(n);
    let probe = random(&mut rng, &[t, n, h]);
    let err = grad_check_all(
        |tape, v| {
            let xv = tape.constant(x.clone());
            let out = spatial_stack(tape, xv, &unflatten(v, 2, heads), &mask, true)?;
            let p = tape.constant(probe.clone());
            let a = tape.mul(out.local, p)?;
            let a = tape.sum(a)?;
            let s = tape.mul(out.super_node, out.super_node)?;
            let s = tape.sum(s)?;
            tape.add(a, s)
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

