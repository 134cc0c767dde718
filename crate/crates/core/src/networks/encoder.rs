//! Dynamic-graph edge convolution encoder.

use crate::autodiff::{Tensor, Var};
use crate::networks::{NetCtx, NetworkError};
use crate::scalar::{cast, Scalar};

/// Indices of the `k` nearest rows of each row (Euclidean, self excluded,
/// ties by lowest index). Rows are feature vectors; the graph is
/// recomputed per layer, so it follows the feature space ("dynamic").
pub fn knn_graph<S: Scalar>(features: &Tensor<S>, k: usize) -> Result<Vec<Vec<usize>>, NetworkError> {
    let (n, d) = features.dims2()?;
    if k >= n {
        return Err(NetworkError::KTooLarge { k, n });
    }
    let row = |i: usize| &features.data[i * d..(i + 1) * d];
    let mut graph = Vec::with_capacity(n);
    let mut dists: Vec<(S, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        let ri = row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let rj = row(j);
            let mut acc = S::zero();
            for (a, b) in ri.iter().zip(rj.iter()) {
                let diff = *a - *b;
                acc += diff * diff;
            }
            dists.push((acc, j));
        }
        dists.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });
        graph.push(dists[..k].iter().map(|&(_, j)| j).collect());
    }
    Ok(graph)
}

/// One edge-convolution layer: per edge `(i, j)` an MLP on
/// `[x_i, x_j - x_i]` (linear, per-point normalization, leaky relu),
/// max-aggregated over each point's neighbors. Graph indices are
/// non-differentiable constants.
pub fn edge_conv<S: Scalar>(
    ctx: &NetCtx<S>,
    features: Var,
    graph: &[Vec<usize>],
    layer_prefix: &str,
    slope: f64,
) -> Result<Var, NetworkError> {
    let t = ctx.tape;
    let shape = t.shape(features);
    let n = shape[0];
    if graph.len() != n {
        return Err(NetworkError::InvalidConfig(format!(
            "graph has {} rows for {} points",
            graph.len(),
            n
        )));
    }
    let k = graph.first().map_or(0, |g| g.len());
    let mut center_idx = Vec::with_capacity(n * k);
    let mut neighbor_idx = Vec::with_capacity(n * k);
    for (i, nbrs) in graph.iter().enumerate() {
        for &j in nbrs {
            center_idx.push(i);
            neighbor_idx.push(j);
        }
    }
    let center = t.gather_rows(features, &center_idx)?;
    let neighbor = t.gather_rows(features, &neighbor_idx)?;
    let offset = t.sub(neighbor, center)?;
    let edge = t.concat_lastdim(center, offset)?;
    let h = t.matmul(edge, ctx.p(&format!("{layer_prefix}.weight")))?;
    let h = ctx.norm_affine(h, layer_prefix)?;
    let h = t.leaky_relu(h, cast::<S>(slope))?;
    let width = *t.shape(h).last().unwrap();
    let grouped = t.reshape(h, &[n, k, width])?;
    let channel_major = t.transpose_last2(grouped)?;
    Ok(t.reduce_max_lastdim(channel_major)?)
}

/// Full encoder: stacked edge convolutions with per-layer dynamic graphs,
/// all layer outputs concatenated and fused to `embed_dim`. Both clouds of
/// a pair run through the same parameters.
pub fn encode<S: Scalar>(ctx: &NetCtx<S>, coords: Var) -> Result<Var, NetworkError> {
    let cfg = &ctx.params.config.encoder;
    let n = ctx.tape.shape(coords)[0];
    if cfg.knn_k >= n {
        return Err(NetworkError::KTooLarge { k: cfg.knn_k, n });
    }
    let mut x = coords;
    let mut outputs = Vec::with_capacity(cfg.layer_widths.len());
    for i in 0..cfg.layer_widths.len() {
        let graph = knn_graph(&ctx.tape.value(x), cfg.knn_k)?;
        x = edge_conv(ctx, x, &graph, &format!("encoder.layer{i}"), cfg.leaky_slope)?;
        outputs.push(x);
    }
    let mut fused = outputs[0];
    for &o in &outputs[1..] {
        fused = ctx.tape.concat_lastdim(fused, o)?;
    }
    let h = ctx.tape.matmul(fused, ctx.p("encoder.fuse.weight"))?;
    let h = ctx.norm_affine(h, "encoder.fuse")?;
    Ok(ctx.tape.leaky_relu(h, cast::<S>(cfg.leaky_slope))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::networks::{tiny_config, ModelParams};
    use crate::rng::SplitRng;

    fn rand_coords(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SplitRng::new(seed);
        Tensor::new(
            vec![n, 3],
            (0..n * 3).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn knn_collinear_example() {
        let f = Tensor::new(vec![3, 1], vec![0.0, 1.0, 3.0]).unwrap();
        let g = knn_graph(&f, 1).unwrap();
        assert_eq!(g, vec![vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn knn_full_degree_lists_all_others() {
        let f = rand_coords(6, 1);
        let g = knn_graph(&f, 5).unwrap();
        for (i, nbrs) in g.iter().enumerate() {
            let mut sorted = nbrs.clone();
            sorted.sort_unstable();
            let expect: Vec<usize> = (0..6).filter(|&j| j != i).collect();
            assert_eq!(sorted, expect);
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        for seed in 0..100 {
            let f = rand_coords(20, seed);
            let k = 4;
            let got = knn_graph(&f, k).unwrap();
            for i in 0..20 {
                let mut d: Vec<(f64, usize)> = (0..20)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let mut acc = 0.0;
                        for c in 0..3 {
                            let diff = f.data[i * 3 + c] - f.data[j * 3 + c];
                            acc += diff * diff;
                        }
                        (acc, j)
                    })
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let expect: Vec<usize> = d[..k].iter().map(|&(_, j)| j).collect();
                assert_eq!(got[i], expect, "seed {seed} row {i}");
            }
        }
    }

    #[test]
    fn knn_rejects_oversized_k() {
        let f = rand_coords(4, 2);
        assert!(matches!(
            knn_graph(&f, 4),
            Err(NetworkError::KTooLarge { .. })
        ));
    }

    #[test]
    fn edge_conv_output_shape() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(3)).unwrap();
        let tape = Tape::new();
        let ctx = NetCtx::new(&tape, &params);
        let coords = tape.constant(rand_coords(10, 4));
        let graph = knn_graph(&tape.value(coords), 4).unwrap();
        let out = edge_conv(&ctx, coords, &graph, "encoder.layer0", 0.2).unwrap();
        assert_eq!(tape.shape(out), vec![10, 6]);
    }

    #[test]
    fn edge_conv_hand_computed_neighbor_offset() {
        // k = 1 with the linear layer forced to pick out the offset block
        // and normalization bypassed (gamma scaled to undo it is not
        // possible in general, so this fixture checks the *linear* stage
        // by reading the pre-normalization product directly).
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(5)).unwrap();
        // weight [2*3, 6] selects [x_j - x_i] into the first 3 channels.
        let mut w = vec![0.0; 6 * 6];
        for c in 0..3 {
            w[(3 + c) * 6 + c] = 1.0;
        }
        params
            .tensors
            .insert("encoder.layer0.weight".into(), Tensor::new(vec![6, 6], w).unwrap());
        let tape = Tape::new();
        let ctx = NetCtx::new(&tape, &params);
        let coords = tape.constant(Tensor::new(vec![3, 3], vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap());
        let graph = vec![vec![1], vec![0], vec![1]];

        // Rebuild just the linear stage of edge_conv for the oracle.
        let center = tape.gather_rows(coords, &[0, 1, 2]).unwrap();
        let neighbor = tape.gather_rows(coords, &[1, 0, 1]).unwrap();
        let offset = tape.sub(neighbor, center).unwrap();
        let edge = tape.concat_lastdim(center, offset).unwrap();
        let h = tape
            .matmul(edge, ctx.p("encoder.layer0.weight"))
            .unwrap();
        let hv = tape.value(h);
        // Row 0: neighbor 1 offset (1,0,0); row 1: offset (-1,0,0); row 2: (-2,0,0).
        assert_eq!(hv.at2(0, 0), 1.0);
        assert_eq!(hv.at2(1, 0), -1.0);
        assert_eq!(hv.at2(2, 0), -2.0);
        let _ = graph;
    }

    #[test]
    fn encode_shapes_and_permutation_equivariance() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(6)).unwrap();
        let coords = rand_coords(12, 7);

        let tape = Tape::new();
        let ctx = NetCtx::new(&tape, &params);
        let c = tape.constant(coords.clone());
        let emb = encode(&ctx, c).unwrap();
        assert_eq!(tape.shape(emb), vec![12, 8]);
        let base = tape.value(emb);

        // Permute the points; rows of the embedding must permute alike.
        let perm: Vec<usize> = vec![5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6];
        let mut permuted = vec![0.0; 12 * 3];
        for (new_row, &old_row) in perm.iter().enumerate() {
            permuted[new_row * 3..new_row * 3 + 3]
                .copy_from_slice(&coords.data[old_row * 3..old_row * 3 + 3]);
        }
        let tape2 = Tape::new();
        let ctx2 = NetCtx::new(&tape2, &params);
        let c2 = tape2.constant(Tensor::new(vec![12, 3], permuted).unwrap());
        let emb2 = tape2.value(encode(&ctx2, c2).unwrap());
        for (new_row, &old_row) in perm.iter().enumerate() {
            for ch in 0..8 {
                assert_eq!(
                    emb2.at2(new_row, ch),
                    base.at2(old_row, ch),
                    "row {new_row} ch {ch}"
                );
            }
        }
    }

    #[test]
    fn siamese_encoding_is_bit_identical() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, &mut SplitRng::new(8)).unwrap();
        let coords = rand_coords(10, 9);
        let tape = Tape::new();
        let ctx = NetCtx::new(&tape, &params);
        let a = tape.constant(coords.clone());
        let b = tape.constant(coords);
        let ea = tape.value(encode(&ctx, a).unwrap());
        let eb = tape.value(encode(&ctx, b).unwrap());
        assert_eq!(ea.data, eb.data);
    }
}
