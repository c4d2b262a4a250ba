use std::collections::BTreeSet;

use detour::encoders::{
    compression_ratio, context_token_count, encoder_ratio, hier_out_len, mean_pool_encode, mean_pool_ranges, render_tokens, truncation_encode,
    Encoder, EncoderConfig, EncoderKind, HierBlock, MeanPoolConfig, OpticalConfig, Tier,
};
use detour::numerics::{Graph, Tensor};
use detour::params::{ParamGroup, ParamStore};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pool(rows: &[Vec<f64>], w: usize, s: usize) -> Tensor<f64> {
    let mut g = Graph::new();
    let e = g.leaf(Tensor::from_rows(rows).unwrap());
    let sep = g.leaf(Tensor::from_rows(&[vec![-9.0; rows[0].len()]]).unwrap());
    let z = mean_pool_encode(&mut g, e, MeanPoolConfig { w, s }, sep).unwrap();
    g.value(z).clone()
}

/// Window starts simulated one stride at a time.
fn mean_pool_windows_oracle(n: usize, w: usize, s: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut end_covered = 0;
    while start + w <= n {
        out.push((start, start + w));
        end_covered = start + w;
        start += s;
    }
    if end_covered < n {
        out.push((end_covered, n));
    }
    out
}

fn halve_oracle(mut n: usize, levels: usize) -> usize {
    for _ in 0..levels {
        n = n / 2 + n % 2;
    }
    n
}

#[test]
fn pooled_pairs_then_separator() {
    let z = pool(&[vec![1.0], vec![3.0], vec![5.0], vec![7.0]], 2, 2);
    assert_eq!(z.data(), &[2.0, 6.0, -9.0]);
}

#[test]
fn reference_token_counts() {
    let n = 1000;
    let cases = [
        (EncoderConfig::mean_pool(10, 10), 0, 102),
        (EncoderConfig::mean_pool(16, 8), 0, 126),
        (EncoderConfig::mean_pool(5, 5), 100, 302),
        (EncoderConfig::hierarchical(1), 0, 502),
        (EncoderConfig::hierarchical(3), 0, 127),
        (EncoderConfig::hierarchical(4), 0, 65),
        (EncoderConfig::Truncation { n_keep: 601 }, 0, 602),
        (EncoderConfig::Truncation { n_keep: 1001 }, 0, 1001),
    ];
    for (cfg, k, want) in cases {
        assert_eq!(context_token_count(&cfg, n, k), want, "{cfg:?}");
    }
    assert_eq!(mean_pool_ranges(1000, 16, 8).len(), 124);
    assert_eq!(EncoderConfig::hierarchical(1).z_len(2), 2);
    assert_eq!(format!("{:.1}", compression_ratio(1000, 102)), "9.8");
    assert_eq!(encoder_ratio(&EncoderConfig::mean_pool(10, 10), 1000), Some(10.0));
    assert_eq!(encoder_ratio(&EncoderConfig::Truncation { n_keep: 10 }, 1000), None);
}

#[test]
fn zero_levels_are_rejected() {
    assert!(EncoderConfig::hierarchical(0).validate(16, 64).is_err());
    assert!(EncoderConfig::mean_pool(2, 3).validate(16, 64).is_err());
    assert!(EncoderConfig::mean_pool(2, 0).validate(16, 64).is_err());
}

#[test]
fn z_len_matches_simulation_up_to_2048() {
    for n in 1..=2048 {
        for levels in 1..=7 {
            assert_eq!(hier_out_len(n, levels), halve_oracle(n, levels));
            assert_eq!(EncoderConfig::hierarchical(levels).z_len(n), halve_oracle(n, levels) + 1);
        }
        for (w, s) in [(2, 2), (4, 4), (5, 5), (10, 10), (16, 8), (8, 3), (3, 1)] {
            let sim = mean_pool_windows_oracle(n, w, s);
            assert_eq!(mean_pool_ranges(n, w, s), sim, "n={n} w={w} s={s}");
            let closed = if n >= w { (n - w) / s + 1 } else { 0 };
            let remainder = usize::from(sim.last().is_some_and(|r| r.1 - r.0 != w) || n < w);
            assert_eq!(EncoderConfig::mean_pool(w, s).z_len(n), closed + remainder + 1);
        }
    }
}

proptest! {
    #[test]
    fn mean_pool_equals_window_average(n in 1usize..=64, w in 1usize..=8, s_frac in 0.0f64..1.0, seed in any::<u64>()) {
        let s = 1 + ((w - 1) as f64 * s_frac) as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let z = pool(&rows, w, s);
        let ranges = mean_pool_windows_oracle(n, w, s);
        prop_assert_eq!(z.rows(), ranges.len() + 1);
        for (i, (a, b)) in ranges.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for row in &rows[*a..*b] {
                    acc += row[c];
                }
                let want = acc / (b - a) as f64;
                prop_assert!((z.row(i)[c] - want).abs() <= 1e-15 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn permuting_inside_a_window_keeps_its_mean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random_range(-4.0..4.0)]).collect();
        let mut swapped = rows.clone();
        swapped[4..8].reverse();
        let (a, b) = (pool(&rows, 4, 4), pool(&swapped, 4, 4));
        prop_assert!((a.row(1)[0] - b.row(1)[0]).abs() < 1e-12);
        prop_assert_eq!(a.row(0), b.row(0));
        prop_assert_eq!(a.row(2), b.row(2));
    }
}

#[test]
fn hier_block_halves_with_ceil() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let block = HierBlock::new("b", 4, 8, 1, &mut store, &mut rng);
    for (len, want) in [(7, 4), (1000, 500)] {
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &BTreeSet::new());
        let x = g.leaf(Tensor::full(&[len, 4], 0.3));
        let y = block.forward(&mut g, &bound, x).unwrap();
        assert_eq!(g.shape(y), &[want, 8]);
    }
    let mut g = Graph::new();
    let bound = store.bind(&mut g, &BTreeSet::new());
    let bad = g.leaf(Tensor::zeros(&[6, 5]));
    assert!(block.forward(&mut g, &bound, bad).is_err());
}

#[test]
fn hier_block_zero_in_zero_out() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let block = HierBlock::new("b", 8, 16, 8, &mut store, &mut rng);
    let mut g = Graph::new();
    let bound = store.bind(&mut g, &BTreeSet::new());
    let x = g.leaf(Tensor::zeros(&[9, 8]));
    let y = block.forward(&mut g, &bound, x).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn rendering_is_deterministic_and_blank_when_empty() {
    let cfg = OpticalConfig::new(Tier::Small);
    let tokens: Vec<u32> = (3..131).collect();
    assert_eq!(render_tokens(&tokens, &cfg).unwrap(), render_tokens(&tokens, &cfg).unwrap());
    let blank = render_tokens(&[], &cfg).unwrap();
    assert!(blank.pixels.iter().all(|&p| p == 0));
    assert_eq!(blank.to_pgm()[..3], *b"P5\n");
    let err = render_tokens(&vec![5; 129], &cfg).unwrap_err();
    assert_eq!(err.capacity, 128);
    assert!(err.to_string().contains("128-token canvas"));
}

#[test]
fn distinct_ids_draw_distinct_cells() {
    let cfg = OpticalConfig::new(Tier::Tiny);
    let cell = |id: u32| {
        let bmp = render_tokens(&[id], &cfg).unwrap();
        let mut px = Vec::new();
        for y in 0..cfg.glyph {
            for x in 0..cfg.glyph {
                px.push(bmp.get(x, y));
            }
        }
        px
    };
    let cells: Vec<Vec<u8>> = (1..4096).map(cell).collect();
    let unique: BTreeSet<&Vec<u8>> = cells.iter().collect();
    assert_eq!(unique.len(), cells.len());
}

fn encoder_graph(cfg: &EncoderConfig, seed: u64) -> (ParamStore<f64>, Encoder, Tensor<f64>) {
    let (d, vocab) = (16, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let enc = Encoder::new(cfg, d, vocab, &mut store, &mut rng).unwrap();
    let table = Tensor::new(vec![vocab, d], (0..vocab * d).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
    (store, enc, table)
}

#[test]
fn optical_z_len_ignores_content() {
    let cfg = EncoderConfig::Optical(OpticalConfig::new(Tier::Tiny));
    let (store, enc, table) = encoder_graph(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let len = rng.random_range(0..=128);
        let ctx: Vec<u32> = (0..len).map(|_| rng.random_range(3..64)).collect();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &BTreeSet::new());
        let t = g.leaf(table.clone());
        let z = enc.encode(&mut g, &bound, &ctx, t).unwrap();
        assert_eq!(z.z_len, 19);
        assert!(g.value(z.vectors.unwrap()).is_finite());
    }
}

#[test]
fn every_encoder_parameter_gets_gradient() {
    for cfg in [
        EncoderConfig::mean_pool(4, 4),
        EncoderConfig::hierarchical(2),
        EncoderConfig::Optical(OpticalConfig::new(Tier::Tiny)),
    ] {
        let (store, enc, table) = encoder_graph(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ctx: Vec<u32> = (0..32).map(|_| rng.random_range(3..64)).collect();
        let mut g = Graph::new();
        let bound = store.bind(&mut g, &BTreeSet::new());
        let t = g.param(table.clone());
        let z = enc.encode(&mut g, &bound, &ctx, t).unwrap().vectors.unwrap();
        let target = g.leaf(Tensor::new(g.shape(z).to_vec(), (0..g.value(z).len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        let weighted = g.mul(z, target).unwrap();
        let loss = g.sum(weighted).unwrap();
        let mut grads = g.backward(loss).unwrap();
        let per_param = bound.gradients(&store, &mut grads);
        for ((_, p), grad) in store.iter().zip(&per_param) {
            assert_eq!(p.group, ParamGroup::Encoder);
            assert!(grad.sum_sq() > 0.0, "{} got no gradient for {:?}", p.name, cfg.kind());
        }
        assert!(store.find("encoder.separator").is_some());
    }
}

#[test]
fn truncation_keeps_the_tail() {
    let tokens: Vec<u32> = (0..1000).collect();
    let (ctx, tail) = truncation_encode(&tokens, 601);
    assert_eq!((ctx.z_len, ctx.kind, ctx.vectors.is_none()), (0, EncoderKind::Truncation, true));
    assert_eq!(tail, tokens[399..]);
    assert!(truncation_encode(&tokens, 0).1.is_empty());
    assert_eq!(truncation_encode(&tokens, 1000).1, tokens);
    assert!(truncation_encode(&[], 5).1.is_empty());
}
