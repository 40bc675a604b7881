//! Forward pass against a straight-line recomputation with plain nested
//! vectors, plus structural properties of the network.

use acss_gcn::graphs::{Graph, GraphKind, GraphSet};
use acss_gcn::model::{
    forward, fuse, AttnBlock, ForwardOptions, FusionMode, LayerDims, ModelParams, ParamTree, Variant,
};
use acss_gcn::ndmath::{Matrix, Rng, Tape};
use acss_gcn::preprocess::NodeFeatures;

type M = Vec<Vec<f64>>;

fn to_m(m: &Matrix) -> M {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mm(a: &M, b: &M) -> M {
    let (n, k, p) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; p]; n];
    for i in 0..n {
        for j in 0..p {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn relu(a: &M) -> M {
    a.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

fn add(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn had(a: &M, b: &M) -> M {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).collect()).collect()
}

fn affine(x: &M, w: &M, b: &M) -> M {
    mm(x, w).iter().map(|r| r.iter().zip(&b[0]).map(|(v, c)| v + c).collect()).collect()
}

fn softmax_rows(a: &M) -> M {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

fn transpose(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn softmax_cols(a: &M) -> M {
    transpose(&softmax_rows(&transpose(a)))
}

fn refine(a: &M, w: &M, beta: f64) -> M {
    let wa = mm(w, a);
    let n = a.len();
    let ao: M = (0..n).map(|i| (0..n).map(|j| a[i][j] + beta * wa[i][j]).collect()).collect();
    (0..n).map(|i| (0..n).map(|j| (0.5 * (ao[i][j] + ao[j][i])).max(0.0)).collect()).collect()
}

fn laplacian(a: &M) -> M {
    let n = a.len();
    let d: Vec<f64> = (0..n).map(|i| a[i].iter().sum::<f64>() + 1.0).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (a[i][j] + if i == j { 1.0 } else { 0.0 }) / (d[i] * d[j]).sqrt())
                .collect()
        })
        .collect()
}

fn random_sym(rng: &mut Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.uniform() < 0.7 {
                let w = rng.uniform();
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    a
}

struct Instance {
    features: NodeFeatures,
    graphs: GraphSet,
    dims: LayerDims,
    params: ModelParams,
}

fn instance(n: usize, s: usize, f1: usize, f2: usize, seed: u64, variant: Variant) -> Instance {
    let mut rng = Rng::new(seed);
    let features = NodeFeatures {
        x: rng.uniform_matrix(n, s, -1.0, 1.0),
    };
    let graphs = GraphSet {
        spatial: (0..s)
            .map(|band| Graph {
                kind: GraphKind::Spatial { band },
                adjacency: random_sym(&mut rng, n),
            })
            .collect(),
        spectral: (0..n)
            .map(|node| Graph {
                kind: GraphKind::Spectral { node },
                adjacency: random_sym(&mut rng, s),
            })
            .collect(),
    };
    let dims = LayerDims {
        bands: s,
        f1,
        f2,
        attn_conv: f1,
        attn_fc1: 3,
        attn_fc2: f2,
        classes: 3,
    };
    let mut params = ModelParams::init(&dims, variant, n, seed, 0.2).unwrap();
    // Nonzero biases so the affine layers are fully exercised.
    for b in [
        &mut params.sagb.fc1_b,
        &mut params.sagb.fc2_b,
        &mut params.segb.fc1_b,
        &mut params.segb.fc2_b,
        &mut params.head_b,
    ] {
        *b = rng.uniform_matrix(1, b.cols(), -0.5, 0.5);
    }
    Instance {
        features,
        graphs,
        dims,
        params,
    }
}

struct Naive {
    h_sa1: M,
    h_sa: M,
    h_se1: M,
    h_se: M,
    h1: M,
    h2: M,
    probs: M,
}

fn naive_forward(inst: &Instance, beta: f64, mode: FusionMode) -> Naive {
    let p = &inst.params;
    let x = to_m(&inst.features.x);
    let (n, s) = (x.len(), x[0].len());
    let f1b = inst.dims.f1 / s;
    let lsa: Vec<M> = inst
        .graphs
        .spatial
        .iter()
        .zip(&p.wp_spatial)
        .map(|(g, w)| laplacian(&refine(&to_m(&g.adjacency), &to_m(w), beta)))
        .collect();
    let lse: Vec<M> = inst
        .graphs
        .spectral
        .iter()
        .map(|g| laplacian(&refine(&to_m(&g.adjacency), &to_m(&p.wp_spectral), beta)))
        .collect();

    let mut h_sa1 = vec![Vec::new(); n];
    let mut h_sa = vec![Vec::new(); n];
    for i in 0..s {
        let z: M = (0..n).map(|j| vec![x[j][i]]).collect();
        let a = relu(&mm(&mm(&lsa[i], &z), &to_m(&p.sa_w0[i])));
        let b = relu(&mm(&mm(&lsa[i], &a), &to_m(&p.sa_w1[i])));
        for j in 0..n {
            h_sa1[j].extend(&a[j]);
            h_sa[j].extend(&b[j]);
        }
    }
    let mut h_se1 = Vec::new();
    let mut h_se = Vec::new();
    for j in 0..n {
        let z: M = (0..s).map(|b| vec![x[j][b]]).collect();
        let g1 = relu(&mm(&mm(&lse[j], &z), &to_m(&p.se_w0)));
        let g2 = relu(&mm(&mm(&lse[j], &g1), &to_m(&p.se_w1)));
        h_se1.push(g1.concat());
        h_se.push(g2.concat());
    }

    let block = |b: &AttnBlock<Matrix>, conv: &M, softmax: fn(&M) -> M| -> M {
        let fc1 = affine(conv, &to_m(&b.fc1_w), &to_m(&b.fc1_b));
        softmax(&affine(&fc1, &to_m(&b.fc2_w), &to_m(&b.fc2_b)))
    };
    let mut conv_sa = vec![Vec::new(); n];
    for i in 0..s {
        let blk: M = h_se1.iter().map(|r| r[i * f1b..(i + 1) * f1b].to_vec()).collect();
        let c = relu(&mm(&mm(&lsa[i], &blk), &to_m(&p.sagb.conv)));
        for j in 0..n {
            conv_sa[j].extend(&c[j]);
        }
    }
    let h1 = had(&h_sa, &block(&p.sagb, &conv_sa, softmax_cols));
    let mut conv_se = Vec::new();
    for j in 0..n {
        let r: M = (0..s).map(|b| h_sa1[j][b * f1b..(b + 1) * f1b].to_vec()).collect();
        conv_se.push(relu(&mm(&mm(&lse[j], &r), &to_m(&p.segb.conv))).concat());
    }
    let h2 = had(&h_se, &block(&p.segb, &conv_se, softmax_rows));
    let a = add(&h1, &h_sa);
    let b = add(&h2, &h_se);
    let fused = match mode {
        FusionMode::Add => add(&a, &b),
        FusionMode::Concat => a.iter().zip(&b).map(|(x, y)| [x.clone(), y.clone()].concat()).collect(),
    };
    let probs = softmax_rows(&affine(&fused, &to_m(&p.head_w), &to_m(&p.head_b)));
    Naive {
        h_sa1,
        h_sa,
        h_se1,
        h_se,
        h1,
        h2,
        probs,
    }
}

fn max_diff(a: &Matrix, b: &M) -> f64 {
    assert_eq!(a.shape(), (b.len(), b[0].len()));
    (0..a.rows())
        .flat_map(|r| (0..a.cols()).map(move |c| (r, c)))
        .map(|(r, c)| (a.get(r, c) - b[r][c]).abs())
        .fold(0.0, f64::max)
}

fn run(inst: &Instance, variant: Variant, beta: f64) -> (Tape, acss_gcn::model::ForwardVars) {
    let mut tape = Tape::new();
    let vars: ParamTree<_> = inst.params.try_map(|m| tape.constant(m.clone())).unwrap();
    let opts = ForwardOptions::eval(variant, beta, true);
    let out = forward(&mut tape, &inst.features, &inst.graphs, &vars, &inst.dims, &opts, &mut Rng::new(0)).unwrap();
    (tape, out)
}

#[test]
fn full_forward_matches_straight_line_oracle() {
    for (mode, seed) in [(FusionMode::Add, 1), (FusionMode::Concat, 2), (FusionMode::Add, 3)] {
        let variant = Variant::Full(mode);
        let inst = instance(3, 2, 4, 2, seed, variant);
        let (tape, out) = run(&inst, variant, 0.3);
        let naive = naive_forward(&inst, 0.3, mode);
        let checks = [
            (out.h_sa1.unwrap(), &naive.h_sa1),
            (out.h_sa.unwrap(), &naive.h_sa),
            (out.h_se1.unwrap(), &naive.h_se1),
            (out.h_se.unwrap(), &naive.h_se),
            (out.h1.unwrap(), &naive.h1),
            (out.h2.unwrap(), &naive.h2),
            (out.probs, &naive.probs),
        ];
        for (i, (v, expected)) in checks.into_iter().enumerate() {
            let d = max_diff(tape.value(v), expected);
            assert!(d < 1e-12, "check {i} (seed {seed}): {d:e}");
        }
    }
}

#[test]
fn spectral_branch_two_nodes_three_bands() {
    let variant = Variant::SpectralOnly;
    let inst = instance(2, 3, 6, 3, 4, variant);
    let (tape, out) = run(&inst, variant, 0.3);
    let naive = naive_forward(&inst, 0.3, FusionMode::Add);
    assert!(max_diff(tape.value(out.h_se1.unwrap()), &naive.h_se1) < 1e-12);
    assert!(max_diff(tape.value(out.h_se.unwrap()), &naive.h_se) < 1e-12);
    assert_eq!(tape.value(out.fused).cols(), 3);
}

#[test]
fn forward_is_pure() {
    let variant = Variant::Full(FusionMode::Add);
    let inst = instance(5, 2, 4, 2, 9, variant);
    let (t1, o1) = run(&inst, variant, 0.1);
    let (t2, o2) = run(&inst, variant, 0.1);
    assert_eq!(t1.value(o1.probs), t2.value(o2.probs));
}

#[test]
fn fusion_widths_with_default_layer_sizes() {
    for (mode, width) in [(FusionMode::Add, 20), (FusionMode::Concat, 40)] {
        let variant = Variant::Full(mode);
        let inst = instance(4, 20, 40, 20, 5, variant);
        let inst = Instance {
            dims: LayerDims {
                attn_conv: 40,
                attn_fc1: 25,
                attn_fc2: 20,
                ..inst.dims
            },
            params: ModelParams::init(
                &LayerDims {
                    attn_conv: 40,
                    attn_fc1: 25,
                    attn_fc2: 20,
                    ..inst.dims
                },
                variant,
                4,
                5,
                0.01,
            )
            .unwrap(),
            ..inst
        };
        let (tape, out) = run(&inst, variant, 0.005);
        assert_eq!(tape.value(out.h_sa.unwrap()).shape(), (4, 20));
        assert_eq!(tape.value(out.fused).cols(), width);
        assert_eq!(tape.value(out.probs).shape(), (4, 3));
    }
}

#[test]
fn attention_free_variant_is_fusion_with_zero_attention() {
    let full = Variant::Full(FusionMode::Add);
    let inst = instance(4, 2, 4, 2, 6, full);
    let (mut tape, out) = run(&inst, full, 0.2);
    let (h_sa, h_se) = (out.h_sa.unwrap(), out.h_se.unwrap());
    let (n, f2) = tape.value(h_sa).shape();
    let zero = tape.constant(Matrix::zeros(n, f2)).unwrap();
    let fused_add = fuse(&mut tape, zero, h_sa, zero, h_se, FusionMode::Add).unwrap();
    let fused_cat = fuse(&mut tape, zero, h_sa, zero, h_se, FusionMode::Concat).unwrap();
    let sum = tape.value(h_sa).add(tape.value(h_se)).unwrap();
    assert!(tape.value(fused_add).max_abs_diff(&sum) <= 1e-12);
    let cat = Matrix::concat_cols(&[tape.value(h_sa), tape.value(h_se)]).unwrap();
    assert!(tape.value(fused_cat).max_abs_diff(&cat) <= 1e-12);

    let (tape2, plain) = run(&inst, Variant::NoAttention, 0.2);
    assert!(tape2.value(plain.fused).max_abs_diff(tape.value(fused_add)) <= 1e-12);
}

#[test]
fn single_branch_variants_feed_the_head_directly() {
    for variant in [Variant::SpatialOnly, Variant::SpectralOnly] {
        let inst = instance(4, 2, 4, 2, 8, variant);
        assert_eq!(inst.params.head_w.rows(), 2);
        let (tape, out) = run(&inst, variant, 0.2);
        assert!(out.h1.is_none() && out.h2.is_none());
        assert_eq!(tape.value(out.fused).cols(), 2);
    }
}

/// Reorders the row blocks of `m` (block `i` has `block` rows).
fn permute_row_blocks(m: &Matrix, perm: &[usize], block: usize) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| {
        let (b, off) = (r / block, r % block);
        m.get(perm[b] * block + off, c)
    })
}

fn permute_col_blocks(m: &Matrix, perm: &[usize], block: usize) -> Matrix {
    permute_row_blocks(&m.transpose(), perm, block).transpose()
}

fn permute_sym(m: &Matrix, perm: &[usize]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(perm[r], perm[c]))
}

#[test]
fn logits_invariant_under_joint_band_permutation() {
    let variant = Variant::Full(FusionMode::Add);
    let (n, s, f1, f2) = (5, 3, 6, 3);
    let inst = instance(n, s, f1, f2, 12, variant);
    let perm = [2, 0, 1];
    let (f2b, cb) = (f2 / s, inst.dims.conv_block());
    let p = &inst.params;
    let pick = |v: &Vec<Matrix>| perm.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
    let permuted = Instance {
        features: NodeFeatures {
            x: permute_col_blocks(&inst.features.x, &perm, 1),
        },
        graphs: GraphSet {
            spatial: perm.iter().map(|&i| inst.graphs.spatial[i].clone()).collect(),
            spectral: inst
                .graphs
                .spectral
                .iter()
                .map(|g| Graph {
                    kind: g.kind,
                    adjacency: permute_sym(&g.adjacency, &perm),
                })
                .collect(),
        },
        dims: inst.dims,
        params: ParamTree {
            sa_w0: pick(&p.sa_w0),
            sa_w1: pick(&p.sa_w1),
            se_w0: p.se_w0.clone(),
            se_w1: p.se_w1.clone(),
            sagb: AttnBlock {
                conv: p.sagb.conv.clone(),
                fc1_w: permute_row_blocks(&p.sagb.fc1_w, &perm, cb),
                fc1_b: p.sagb.fc1_b.clone(),
                fc2_w: permute_col_blocks(&p.sagb.fc2_w, &perm, f2b),
                fc2_b: permute_col_blocks(&p.sagb.fc2_b, &perm, f2b),
            },
            segb: AttnBlock {
                conv: p.segb.conv.clone(),
                fc1_w: permute_row_blocks(&p.segb.fc1_w, &perm, cb),
                fc1_b: p.segb.fc1_b.clone(),
                fc2_w: permute_col_blocks(&p.segb.fc2_w, &perm, f2b),
                fc2_b: permute_col_blocks(&p.segb.fc2_b, &perm, f2b),
            },
            head_w: permute_row_blocks(&p.head_w, &perm, f2b),
            head_b: p.head_b.clone(),
            wp_spatial: pick(&p.wp_spatial),
            wp_spectral: permute_sym(&p.wp_spectral, &perm),
        },
    };
    let (t1, o1) = run(&inst, variant, 0.3);
    let (t2, o2) = run(&permuted, variant, 0.3);
    let d = t1.value(o1.logits).max_abs_diff(t2.value(o2.logits));
    assert!(d < 1e-12, "{d:e}");
    let blocks = permute_col_blocks(t1.value(o1.h_sa1.unwrap()), &perm, f1 / s);
    assert!(blocks.max_abs_diff(t2.value(o2.h_sa1.unwrap())) < 1e-12);
}
