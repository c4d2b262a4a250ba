//! Acceptance criteria, one line each. Runs without the libtest harness so
//! the lines reach the terminal under plain `cargo test`.
//!
//! Criterion 6 needs the desk sweep (`detour sweep --config
//! configs/desk_sweep.toml`, several CPU hours). It reads the stored sweep
//! rows and reports NOT RUN when they are absent; its directional outcome is
//! reported but does not fail the target.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use detour::corpus::{copy_task, TaskKind, BOS};
use detour::decoder::{rope_apply, Decoder, DecoderSpec, FfnKind};
use detour::encoders::{compression_ratio, context_token_count, format_ratio, hier_out_len, mean_pool_encode, EncoderConfig, EncoderKind, MeanPoolConfig};
use detour::evaluation::{expected_gain, hybrid_efficiency, perplexity, perplexity_without_context, ResultRow};
use detour::experiment::ExperimentConfig;
use detour::model::{gradcheck_instance, Model};
use detour::numerics::suite::{op_gradient_suite, OP_TOLERANCE};
use detour::numerics::{Graph, Tensor};
use detour::params::ParamStore;
use detour::training::{metrics_csv, train_reconstruction, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONTEXT: usize = 1000;
const FULL_PPL: f64 = 4.80;
const DELETION_PPL: f64 = 6.04;
/// One-decimal or two-decimal reference cells are checked within this.
const CELL_TOL: f64 = 0.05;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------------------
// 1. token accounting

/// (encoder, text tail, reference tokens, reference comp.) for every
/// mean-pool, hierarchical and truncation row of the reconstruction and LM
/// tables.
fn accounting_rows() -> Vec<(EncoderConfig, usize, usize, &'static str)> {
    let mp = EncoderConfig::mean_pool;
    let h = EncoderConfig::hierarchical;
    let tr = |n_keep| EncoderConfig::Truncation { n_keep };
    vec![
        // reconstruction table
        (mp(2, 2), 0, 502, "2.0"),
        (mp(4, 4), 0, 252, "4.0"),
        (mp(5, 5), 0, 202, "5.0"),
        (mp(10, 10), 0, 102, "9.8"),
        (mp(20, 20), 0, 52, "19.2"),
        (mp(100, 100), 0, 12, "83.3"),
        (mp(4, 2), 0, 501, "2.0"),
        (mp(8, 4), 0, 251, "4.0"),
        (mp(16, 8), 0, 126, "7.9"),
        (mp(20, 10), 0, 101, "9.9"),
        (mp(40, 20), 0, 51, "19.6"),
        (h(1), 0, 502, "2.0"),
        (h(2), 0, 252, "4.0"),
        (h(3), 0, 127, "7.9"),
        (h(4), 0, 65, "15.4"),
        (h(5), 0, 34, "29.4"),
        (h(6), 0, 18, "55.6"),
        (h(7), 0, 10, "100.0"),
        // LM table
        (mp(2, 2), 100, 602, "1.7"),
        (mp(4, 4), 100, 352, "2.8"),
        (mp(5, 5), 100, 302, "3.3"),
        (mp(10, 10), 100, 202, "5.0"),
        (mp(20, 20), 100, 152, "6.6"),
        (h(1), 100, 602, "1.7"),
        (h(2), 100, 352, "2.8"),
        (h(3), 100, 227, "4.4"),
        (h(4), 100, 165, "6.1"),
        (tr(1001), 0, 1001, "1.0"),
        (tr(601), 0, 602, "1.7"),
        (tr(525), 0, 526, "1.9"),
        (tr(425), 0, 426, "2.3"),
        (tr(277), 0, 278, "3.6"),
        (tr(115), 0, 116, "8.6"),
        (tr(77), 0, 78, "12.8"),
    ]
}

fn criterion_1() -> Outcome {
    let rows = accounting_rows();
    let mut bad = Vec::new();
    for (cfg, k, tokens, comp) in &rows {
        let got = context_token_count(cfg, CONTEXT, *k);
        let ratio = format_ratio(compression_ratio(CONTEXT, got));
        if got != *tokens || ratio != format!("{comp}×") {
            bad.push(format!("{} k={k}: {got} {ratio} (want {tokens} {comp}×)", cfg.describe(CONTEXT)));
        }
    }
    outcome(bad.is_empty(), if bad.is_empty() { format!("{} rows exact", rows.len()) } else { bad.join("; ") })
}

// ---------------------------------------------------------------------------
// 2. metric arithmetic

/// (PPL, reference ΔPPL) of every LM-table row; Δ is against the full
/// context row.
const LM_DELTAS: &[(f64, f64)] = &[
    (5.05, 0.25), (5.13, 0.33), (5.27, 0.47), (5.35, 0.55), (4.96, 0.16), (5.02, 0.22), (5.07, 0.27), (5.13, 0.34),
    (5.03, 0.23), (5.08, 0.29), (5.18, 0.38), (5.26, 0.46), (4.94, 0.15), (5.01, 0.21), (5.03, 0.24), (5.11, 0.31),
    (5.04, 0.24), (5.06, 0.27), (5.21, 0.41), (5.29, 0.49),
    (4.95, 0.16), (5.02, 0.23), (5.07, 0.27), (5.19, 0.39), (5.28, 0.48), (4.94, 0.14), (4.96, 0.16), (4.99, 0.19), (5.06, 0.26), (5.10, 0.31),
    (4.87, 0.07), (4.96, 0.16), (5.05, 0.25), (5.14, 0.34), (4.85, 0.05), (4.91, 0.11), (4.97, 0.17), (5.03, 0.23),
    (4.80, 0.00), (4.90, 0.10), (4.92, 0.13), (4.97, 0.17), (5.02, 0.22), (5.13, 0.33), (5.18, 0.38),
];

/// (hybrid PPL, reference gain over deletion-100) of the hybrid-value table.
const HYBRID_GAINS: &[(f64, f64)] = &[
    (4.96, 1.09), (5.02, 1.02), (5.07, 0.97), (5.13, 0.91), (4.94, 1.10), (5.01, 1.03), (5.03, 1.01), (5.11, 0.93),
    (4.94, 1.11), (4.99, 1.05), (5.06, 0.98), (5.10, 0.94), (4.85, 1.19), (4.91, 1.13), (4.97, 1.07), (5.03, 1.02),
];

/// (pure PPL, hybrid PPL, reference Δ, reference efficiency) of the
/// pure-vs-hybrid table.
const EFFICIENCY: &[(f64, f64, f64, f64)] = &[
    (5.05, 4.96, 0.10, 0.7), (5.13, 5.02, 0.11, 0.8), (5.27, 5.07, 0.20, 1.4), (5.35, 5.13, 0.22, 1.6),
    (5.03, 4.94, 0.09, 0.6), (5.06, 5.01, 0.06, 0.4), (5.18, 5.03, 0.15, 1.1), (5.26, 5.11, 0.15, 1.1),
    (4.95, 4.94, 0.02, 0.1), (5.07, 4.99, 0.08, 0.6), (5.19, 5.06, 0.13, 0.9), (5.28, 5.10, 0.18, 1.3),
    (4.87, 4.85, 0.02, 0.1), (4.96, 4.91, 0.05, 0.4), (5.05, 4.97, 0.08, 0.6), (5.14, 5.03, 0.11, 0.8),
];

fn ppl_row(ppl: f64) -> ResultRow {
    ResultRow {
        id: String::new(),
        encoder: EncoderKind::Truncation,
        enc_init: "-".into(),
        dec_init: "-".into(),
        config: String::new(),
        ctx_tokens: 0,
        compression: 1.0,
        params: 0,
        ppl,
        delta_ppl: None,
    }
}

/// Efficiencies consistent with inputs printed to two decimals: every
/// PPL may sit anywhere within ±0.005 of its printed value.
fn efficiency_interval(pure: f64, hybrid: f64) -> (f64, f64) {
    let r = 0.005;
    let gain_lo = expected_gain(FULL_PPL + r, DELETION_PPL - r, CONTEXT, 100).unwrap();
    let gain_hi = expected_gain(FULL_PPL - r, DELETION_PPL + r, CONTEXT, 100).unwrap();
    let d_lo = pure - hybrid - 2.0 * r;
    let d_hi = pure - hybrid + 2.0 * r;
    let lo = [d_lo / gain_lo, d_lo / gain_hi].into_iter().fold(f64::INFINITY, f64::min);
    let hi = [d_hi / gain_lo, d_hi / gain_hi].into_iter().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    let full = ppl_row(FULL_PPL);
    for &(ppl, want) in LM_DELTAS {
        let got = detour::evaluation::delta_ppl(&ppl_row(ppl), &full);
        if (got - want).abs() > CELL_TOL {
            bad.push(format!("LM Δ {ppl}: {got:.3} vs {want}"));
        }
    }
    let deletion = ppl_row(DELETION_PPL);
    for &(ppl, want) in HYBRID_GAINS {
        let got = detour::evaluation::delta_ppl(&deletion, &ppl_row(ppl));
        if (got - want).abs() > CELL_TOL {
            bad.push(format!("hybrid Δ {ppl}: {got:.3} vs {want}"));
        }
    }
    let gain = expected_gain(FULL_PPL, DELETION_PPL, CONTEXT, 100).unwrap();
    if (gain - 0.14).abs() > CELL_TOL / 10.0 {
        bad.push(format!("expected gain {gain:.4} vs 0.14"));
    }
    let mut worst_point = 0.0f64;
    for &(pure, hybrid, d, eff) in EFFICIENCY {
        let got_d = detour::evaluation::delta_ppl(&ppl_row(pure), &ppl_row(hybrid));
        if (got_d - d).abs() > CELL_TOL {
            bad.push(format!("Δ {pure}->{hybrid}: {got_d:.3} vs {d}"));
        }
        let point = hybrid_efficiency(pure, hybrid, gain).unwrap();
        worst_point = worst_point.max((point - eff).abs());
        let (lo, hi) = efficiency_interval(pure, hybrid);
        let dist = if eff < lo { lo - eff } else if eff > hi { eff - hi } else { 0.0 };
        if dist > CELL_TOL {
            bad.push(format!("eff {pure}->{hybrid}: [{lo:.3}, {hi:.3}] vs {eff}"));
        }
    }
    let cells = LM_DELTAS.len() + HYBRID_GAINS.len() + 2 * EFFICIENCY.len() + 1;
    if bad.is_empty() {
        outcome(true, format!("{cells} cells within ±{CELL_TOL}; expected gain {gain:.4}; worst point-estimate eff gap {worst_point:.3}"))
    } else {
        outcome(false, bad.join("; "))
    }
}

// ---------------------------------------------------------------------------
// 3. gradient suite

fn criterion_3() -> Outcome {
    let seeds: Vec<u64> = (0..5).collect();
    let ops = match op_gradient_suite(&seeds, OP_TOLERANCE) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("op suite error: {e}")),
    };
    let worst_op = ops.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<String> = ops.iter().filter(|(_, r)| !r.pass).map(|(s, r)| format!("{}@{s} {:.2e}", r.op_name, r.max_rel_err)).collect();
    let mut worst_model = 0.0f64;
    let mut model_failed = Vec::new();
    for enc in [EncoderConfig::mean_pool(2, 2), EncoderConfig::hierarchical(1)] {
        for &seed in &seeds {
            let r = gradcheck_instance(&enc, seed).and_then(|(m, input)| m.gradient_check(enc.kind().as_str(), &input, 1e-3));
            match r {
                Ok(r) => {
                    worst_model = worst_model.max(r.max_rel_err);
                    if !r.pass {
                        model_failed.push(format!("{}@{seed} {:.2e}", r.op_name, r.max_rel_err));
                    }
                }
                Err(e) => model_failed.push(format!("{}@{seed}: {e}", enc.kind())),
            }
        }
    }
    let pass = failed.is_empty() && model_failed.is_empty();
    let mut detail = format!("{} op checks, worst {worst_op:.2e} (tol {OP_TOLERANCE:e}); 10 model checks, worst {worst_model:.2e} (tol 1e-3)", ops.len());
    if !pass {
        detail = format!("{detail}; failed: {}", failed.into_iter().chain(model_failed).collect::<Vec<_>>().join(", "));
    }
    outcome(pass, detail)
}

// ---------------------------------------------------------------------------
// 4. oracle equivalence

fn windows_by_stepping(n: usize, w: usize, s: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut start, mut covered) = (0, 0);
    while start + w <= n {
        out.push((start, start + w));
        covered = start + w;
        start += s;
    }
    if covered < n {
        out.push((covered, n));
    }
    out
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = 3;
    let mut configs = 0;
    for n in 1..=64 {
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        for w in 1..=8 {
            for s in 1..=w {
                configs += 1;
                let mut g = Graph::new();
                let e = g.leaf(Tensor::from_rows(&rows).unwrap());
                let sep = g.leaf(Tensor::zeros(&[1, c]));
                let z = mean_pool_encode(&mut g, e, MeanPoolConfig { w, s }, sep).unwrap();
                let got = g.value(z);
                let windows = windows_by_stepping(n, w, s);
                if got.rows() != windows.len() + 1 {
                    return outcome(false, format!("n={n} w={w} s={s}: {} rows, oracle {}", got.rows() - 1, windows.len()));
                }
                for (i, &(a, b)) in windows.iter().enumerate() {
                    for j in 0..c {
                        let mut acc = 0.0;
                        for row in &rows[a..b] {
                            acc += row[j];
                        }
                        let want = acc / (b - a) as f64;
                        if got.row(i)[j].to_bits() != want.to_bits() {
                            return outcome(false, format!("n={n} w={w} s={s} window {i}: {} vs {want}", got.row(i)[j]));
                        }
                    }
                }
            }
        }
    }
    for n in 1..=2048usize {
        for levels in 1..=7 {
            let mut len = n;
            for _ in 0..levels {
                len = len / 2 + len % 2;
            }
            if hier_out_len(n, levels) != len || EncoderConfig::hierarchical(levels).z_len(n) != len + 1 {
                return outcome(false, format!("hierarchical n={n} L={levels}: {} vs {len}", hier_out_len(n, levels)));
            }
        }
    }
    outcome(true, format!("mean pool bitwise on {configs} (n, w, s) configs; hierarchical lengths for n<=2048, L<=7"))
}

// ---------------------------------------------------------------------------
// 5 and 7. copy task

const COPY_VOCAB: usize = 64;
const COPY_LEN: usize = 32;
const COPY_EXAMPLES: usize = 512;
const COPY_STEPS: usize = 2000;

struct CopyRun {
    ppl: f64,
    no_context_ppl: f64,
    metrics: String,
    seconds: f64,
}

fn copy_run(enc: &EncoderConfig) -> CopyRun {
    let d = 64;
    let spec = DecoderSpec { layers: 2, d, heads: 2, head_dim: d / 2, ffn_dim: 4 * d, rope_base: 10000.0, vocab: COPY_VOCAB, ffn: FfnKind::SiluGated };
    let data = copy_task(COPY_VOCAB, COPY_LEN, COPY_EXAMPLES, 7).unwrap();
    let mut model = Model::<f32>::new(&spec, enc, 1).unwrap();
    let cfg = TrainConfig { lr_peak: 3e-3, steps: Some(COPY_STEPS), weight_decay: 0.0, ..TrainConfig::default() };
    let t = Instant::now();
    let out = train_reconstruction(&mut model, &data, &cfg, "copy-task", |_| {}).unwrap();
    let ppl = perplexity(&model, &data, TaskKind::Recon, "train").unwrap().ppl;
    let no_context_ppl = perplexity_without_context(&model, &data, TaskKind::Recon).unwrap();
    CopyRun { ppl, no_context_ppl, metrics: metrics_csv(&out.metrics), seconds: t.elapsed().as_secs_f64() }
}

fn criterion_5(runs: &[(EncoderConfig, f64, &CopyRun)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (enc, threshold, r) in runs {
        let factor = r.no_context_ppl / r.ppl;
        let ok = r.ppl < *threshold && factor >= 5.0;
        pass &= ok;
        parts.push(format!(
            "{} {}: ppl {:.4} (< {threshold}), no-context {:.1} ({factor:.0}x), {:.0}s",
            enc.kind(),
            enc.describe(COPY_LEN),
            r.ppl,
            r.no_context_ppl,
            r.seconds
        ));
    }
    outcome(pass, parts.join("; "))
}

// ---------------------------------------------------------------------------
// 6. desk ordering

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn criterion_6() -> Option<Outcome> {
    let root = workspace_root();
    let mut cfg = ExperimentConfig::load(&root.join("configs/desk_sweep.toml")).ok()?;
    cfg.output_dir = root.join(&cfg.output_dir);
    let path = cfg.run_dir().join("rows_lm.json");
    let rows: Vec<ResultRow> = serde_json::from_str(&std::fs::read_to_string(&path).ok()?).ok()?;
    let find = |k: EncoderKind| rows.iter().find(|r| r.encoder == k);
    let (Some(h), Some(mp), Some(tr)) = (find(EncoderKind::Hierarchical), find(EncoderKind::MeanPool), find(EncoderKind::Truncation)) else {
        return Some(outcome(false, format!("{} lacks a hierarchical, mean-pool or truncation row", path.display())));
    };
    let a = h.ppl < mp.ppl;
    let gap = (h.ppl - tr.ppl) / tr.ppl;
    let b = h.ppl < tr.ppl || gap < 0.05;
    let optical = find(EncoderKind::Optical).map_or(String::new(), |o| format!(", optical {:.2} @{}", o.ppl, o.ctx_tokens));
    Some(outcome(
        a && b,
        format!(
            "(a) {} (b) {}: hierarchical {:.2} @{} tokens, mean pool {:.2} @{}, truncation {:.2} @{} (gap {:+.1}%){optical}",
            if a { "pass" } else { "FAIL" },
            if b { "pass" } else { "FAIL" },
            h.ppl,
            h.ctx_tokens,
            mp.ppl,
            mp.ctx_tokens,
            tr.ppl,
            tr.ctx_tokens,
            gap * 100.0
        ),
    ))
}

// ---------------------------------------------------------------------------
// 8. causality and RoPE

fn logits_f32(dec: &Decoder, store: &ParamStore<f32>, prefix: Option<&Tensor<f32>>, tokens: &[u32]) -> Tensor<f32> {
    let mut g = Graph::new();
    let b = store.bind(&mut g, &BTreeSet::new());
    let p = prefix.map(|t| g.leaf(t.clone()));
    let out = dec.forward(&mut g, &b, p, tokens).unwrap();
    g.value(out).clone()
}

fn rope_score(q: &Tensor<f64>, k: &Tensor<f64>, pq: usize, pk: usize) -> f64 {
    let mut g = Graph::<f64>::new();
    let qv = g.leaf(q.clone());
    let kv = g.leaf(k.clone());
    let (rq, _) = rope_apply(&mut g, qv, qv, 1, &[pq], 10000.0).unwrap();
    let (_, rk) = rope_apply(&mut g, kv, kv, 1, &[pk], 10000.0).unwrap();
    g.value(rq).data().iter().zip(g.value(rk).data()).map(|(a, b)| a * b).sum()
}

fn criterion_8() -> Outcome {
    let vocab = 40;
    let spec = DecoderSpec { layers: 2, d: 16, heads: 2, head_dim: 8, ffn_dim: 32, rope_base: 10000.0, vocab, ffn: FfnKind::SiluGated };
    let mut worst_causal = 0.0f32;
    for seed in 0..50u64 {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dec = Decoder::new(&spec, &mut store, &mut rng).unwrap();
        let len = rng.random_range(2..16);
        let cut = rng.random_range(1..len);
        let mut a: Vec<u32> = (0..len).map(|_| rng.random_range(3..vocab as u32)).collect();
        a[0] = BOS;
        let mut b = a.clone();
        for t in &mut b[cut..] {
            *t = rng.random_range(3..vocab as u32);
        }
        let p = rng.random_range(0..4);
        let prefix = (p > 0).then(|| Tensor::new(vec![p, 16], (0..p * 16).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap());
        let la = logits_f32(&dec, &store, prefix.as_ref(), &a);
        let lb = logits_f32(&dec, &store, prefix.as_ref(), &b);
        let rows = cut * vocab;
        let diff = la.data()[..rows].iter().zip(&lb.data()[..rows]).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
        worst_causal = worst_causal.max(diff);
    }
    let mut worst_rope = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let q = Tensor::new(vec![1, 16], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let k = Tensor::new(vec![1, 16], (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (p1, p2, shift) = (rng.random_range(0..300), rng.random_range(0..300), rng.random_range(0..700));
        worst_rope = worst_rope.max((rope_score(&q, &k, p1, p2) - rope_score(&q, &k, p1 + shift, p2 + shift)).abs());
    }
    let pass = worst_causal < 1e-5 && worst_rope < 1e-5;
    outcome(pass, format!("causality max |Δ| {worst_causal:.1e} over 50 cases (tol 1e-5); RoPE relative max |Δ| {worst_rope:.1e} over 200 cases (tol 1e-5)"))
}

// ---------------------------------------------------------------------------

fn report(n: usize, name: &str, o: &Outcome, started: Instant) -> bool {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} [{verdict}] {name}: {} ({:.1}s)", o.detail, started.elapsed().as_secs_f64());
    o.pass
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters: this target has no sub-tests.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    let t = Instant::now();
    ok &= report(1, "token accounting", &criterion_1(), t);
    let t = Instant::now();
    ok &= report(2, "metric arithmetic", &criterion_2(), t);
    let t = Instant::now();
    ok &= report(3, "gradient suite", &criterion_3(), t);
    let t = Instant::now();
    ok &= report(4, "oracle equivalence", &criterion_4(), t);
    let t = Instant::now();
    ok &= report(8, "causality and RoPE", &criterion_8(), t);

    let t = Instant::now();
    let encoders = [(EncoderConfig::hierarchical(1), 1.1), (EncoderConfig::mean_pool(2, 2), 1.5)];
    let first: Vec<CopyRun> = encoders.iter().map(|(e, _)| copy_run(e)).collect();
    let runs: Vec<_> = encoders.iter().zip(&first).map(|((e, th), r)| (e.clone(), *th, r)).collect();
    ok &= report(5, "copy-task reconstruction", &criterion_5(&runs), t);

    let t = Instant::now();
    let second: Vec<CopyRun> = encoders.iter().map(|(e, _)| copy_run(e)).collect();
    let same = first.iter().zip(&second).all(|(a, b)| a.metrics == b.metrics);
    let lines: usize = first.iter().map(|r| r.metrics.lines().count()).sum();
    ok &= report(7, "determinism", &outcome(same, format!("second run of both copy tasks: {lines} metrics lines, byte-identical = {same}")), t);

    let t = Instant::now();
    match criterion_6() {
        Some(o) => {
            // directional result at desk scale: reported, not enforced
            report(6, "desk-scale ordering", &o, t);
        }
        None => println!("criterion 6 [NOT RUN] desk-scale ordering: no sweep rows; run `detour sweep --config configs/desk_sweep.toml`"),
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
