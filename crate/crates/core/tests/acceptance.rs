//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vlqual_core::fusion::{confusion, hybrid_combine, score_deltas, ScoreTable};
use vlqual_core::kb::{KnowledgeBase, ModelConfig};
use vlqual_core::model::{
    normalize_vector, Embedding, ExpertLabel, FusionConfig, HybridScore, Prediction,
    SigmaConvention, SimilarityDelta, Space, Strategy,
};
use vlqual_core::retrieval::precision_at_k;
use vlqual_core::similarity::{cosine, fuse_references, image_delta, text_delta};
use vlqual_core::table::{fixture_deltas, read_table_file, TableRow};
use vlqual_core::tree::{
    evaluate_tree_with, FinalVerdict, NodeError, NodeScorer, TreeConfig, Verdict, DEFAULT_ORDER,
};

type Outcome = Result<String, String>;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Reproduction {
    rows: Vec<TableRow>,
    table: ScoreTable,
}

fn reproduce(file: &str, criterion: &str, convention: SigmaConvention) -> Result<Reproduction, String> {
    let rows = read_table_file(&fixture(file)).map_err(|e| e.to_string())?;
    let deltas = fixture_deltas(&rows, criterion).map_err(|e| e.to_string())?;
    let config = FusionConfig { sigma_convention: convention, ..Default::default() };
    let table = score_deltas(criterion, &deltas, &config, None).map_err(|e| e.to_string())?;
    Ok(Reproduction { rows, table })
}

fn sample_id(row: &TableRow) -> String {
    vlqual_core::table::sample_id_from_image(&row.image)
}

/// Per-entry z and combined tolerances, adjacent ordering and sign checks.
fn check_reproduction(r: &Reproduction) -> Result<(f64, f64), String> {
    let mut max_z = 0.0f64;
    let mut max_c = 0.0f64;
    for row in &r.rows {
        let id = sample_id(row);
        let got = r.table.row(&id).ok_or_else(|| format!("{id} missing from output"))?;
        let (zf, zc, c) = match (row.delta_flava_z, row.delta_clip_z, row.delta_combined) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(format!("{id}: fixture lacks published columns")),
        };
        let ez = (got.z_image - zf).abs().max((got.z_text - zc).abs());
        let ec = (got.combined - c).abs();
        ensure(ez <= 0.05, || format!("{id}: z error {ez:.4} > 0.05"))?;
        ensure(ec <= 0.08, || format!("{id}: combined error {ec:.4} > 0.08"))?;
        if c.abs() > 0.1 {
            ensure((got.combined > 0.0) == (c > 0.0), || format!("{id}: sign differs from {c}"))?;
        }
        max_z = max_z.max(ez);
        max_c = max_c.max(ec);
    }
    let position: BTreeMap<String, usize> = r
        .table
        .rows
        .iter()
        .enumerate()
        .map(|(i, h)| (h.sample_id.clone(), i))
        .collect();
    for pair in r.rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.delta_combined.unwrap() - b.delta_combined.unwrap() > 0.05 {
            ensure(position[&sample_id(a)] < position[&sample_id(b)], || {
                format!("{} should rank above {}", a.image, b.image)
            })?;
        }
    }
    Ok((max_z, max_c))
}

fn combined_of(t: &ScoreTable, id: &str) -> Result<f64, String> {
    t.row(id).map(|r| r.combined).ok_or_else(|| format!("{id} missing"))
}

fn c1() -> Outcome {
    let start = Instant::now();
    let r = reproduce("fig26_distribution.csv", "EA6", SigmaConvention::Population)?;
    let (z, c) = check_reproduction(&r)?;
    let elapsed = start.elapsed();
    let s35 = combined_of(&r.table, "Sample 35")?;
    let s11 = combined_of(&r.table, "Sample 11")?;
    ensure((s35 - 2.3481).abs() <= 0.08, || format!("Sample 35 combined {s35:.4}"))?;
    ensure((s11 + 4.7075).abs() <= 0.08, || format!("Sample 11 combined {s11:.4}"))?;
    ensure(elapsed.as_secs_f64() < 1.0, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "max |z err| {z:.4}, max |combined err| {c:.4}, Sample 35 {s35:.4}, Sample 11 {s11:.4}, {elapsed:?}"
    ))
}

fn c2() -> Outcome {
    let r27 = reproduce("fig27_dilution.csv", "EA1", SigmaConvention::Population)?;
    let (z27, c27) = check_reproduction(&r27)?;
    let r28 = reproduce("fig28_reinforcement.csv", "EA3", SigmaConvention::Population)?;
    let (z28, c28) = check_reproduction(&r28)?;
    let s40 = combined_of(&r27.table, "Sample 40")?;
    let s32 = combined_of(&r28.table, "Sample 32")?;
    ensure((s40 - 2.8555).abs() <= 0.08, || format!("Sample 40 combined {s40:.4}"))?;
    ensure((s32 + 8.8967).abs() <= 0.08, || format!("Sample 32 combined {s32:.4}"))?;
    Ok(format!(
        "dilution z {z27:.4} / combined {c27:.4}; reinforcement z {z28:.4} / combined {c28:.4}; Sample 40 {s40:.4}, Sample 32 {s32:.4}"
    ))
}

fn c3() -> Outcome {
    let c = hybrid_combine(0.1276, 0.9595, &FusionConfig::default()).map_err(|e| e.to_string())?;
    ensure((c.combined - 1.0870).abs() <= 0.0002, || format!("combined {}", c.combined))?;
    ensure(c.label == Prediction::Positive, || "Sample 2 should be positive".into())?;
    let r = reproduce("fig26_distribution.csv", "EA6", SigmaConvention::Population)?;
    let row = r.table.row("Sample 2").ok_or("Sample 2 missing")?;
    Ok(format!(
        "published z pair sums to {:.4}; recomputed from deltas: z_text {:.4}, z_image {:.4}, combined {:.4}",
        c.combined, row.z_text, row.z_image, row.combined
    ))
}

fn mean_abs_z_error(r: &Reproduction) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for row in &r.rows {
        let got = r.table.row(&sample_id(row)).unwrap();
        total += (got.z_image - row.delta_flava_z.unwrap()).abs();
        total += (got.z_text - row.delta_clip_z.unwrap()).abs();
        n += 2;
    }
    total / n as f64
}

fn c4() -> Outcome {
    let chosen = FusionConfig::default().sigma_convention;
    let alternative = match chosen {
        SigmaConvention::Population => SigmaConvention::Sample,
        SigmaConvention::Sample => SigmaConvention::Population,
    };
    let mut lines = Vec::new();
    for (file, cid) in [
        ("fig26_distribution.csv", "EA6"),
        ("fig27_dilution.csv", "EA1"),
        ("fig28_reinforcement.csv", "EA3"),
    ] {
        let a = mean_abs_z_error(&reproduce(file, cid, chosen)?);
        let b = mean_abs_z_error(&reproduce(file, cid, alternative)?);
        ensure(a <= b, || format!("{file}: chosen {a:.6} > alternative {b:.6}"))?;
        lines.push(format!("{cid} {a:.6} vs {b:.6}"));
    }
    Ok(format!("{chosen:?} vs {alternative:?} mean |z err|: {}", lines.join("; ")))
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            return v;
        }
    }
}

fn random_set(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let n = rng.random_range(1..=5);
    (0..n).map(|_| random_vec(rng, dim)).collect()
}

/// Literal transcriptions used as the independent oracle.
mod oracle {
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += a[i] * b[i];
        }
        s
    }

    pub fn cos(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    pub fn mean(set: &[Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; set[0].len()];
        for v in set {
            for i in 0..m.len() {
                m[i] += v[i] / set.len() as f64;
            }
        }
        m
    }

    pub fn delta(q: &[f64], pos: &[Vec<f64>], neg: &[Vec<f64>]) -> f64 {
        cos(q, &mean(pos)) - cos(q, &mean(neg))
    }

    pub fn z(values: &[f64]) -> Vec<f64> {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
        values.iter().map(|v| if sd == 0.0 { 0.0 } else { (v - mu) / sd }).collect()
    }
}

fn embeddings(set: &[Vec<f64>], model: &str, space: Space) -> Vec<Embedding> {
    set.iter()
        .enumerate()
        .map(|(i, v)| Embedding::new(format!("r{i}"), model, space, v.clone()))
        .collect()
}

fn c5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let dim = rng.random_range(1..=8);
        let n = rng.random_range(2..=6);
        let (pt, nt) = (random_set(&mut rng, dim), random_set(&mut rng, dim));
        let (pi, ni) = (random_set(&mut rng, dim), random_set(&mut rng, dim));
        let mut deltas = Vec::new();
        let mut expect_t = Vec::new();
        let mut expect_i = Vec::new();
        for s in 0..n {
            let q = random_vec(&mut rng, dim);
            let qt = Embedding::new(format!("s{s}"), "clip", Space::Vision, q.clone());
            let qi = Embedding::new(format!("s{s}"), "flava", Space::Vision, q.clone());
            let dt = text_delta(&qt, &embeddings(&pt, "clip", Space::Text), &embeddings(&nt, "clip", Space::Text))
                .map_err(|e| format!("case {case}: {e}"))?;
            let di = image_delta(&qi, &embeddings(&pi, "flava", Space::Vision), &embeddings(&ni, "flava", Space::Vision))
                .map_err(|e| format!("case {case}: {e}"))?;
            let (ot, oi) = (oracle::delta(&q, &pt, &nt), oracle::delta(&q, &pi, &ni));
            worst = worst.max((dt - ot).abs()).max((di - oi).abs());
            expect_t.push(ot);
            expect_i.push(oi);
            deltas.push(SimilarityDelta {
                sample_id: format!("s{s}"),
                criterion_id: "EA1".into(),
                delta_text: dt,
                delta_image: di,
            });
        }
        let table = score_deltas("EA1", &deltas, &FusionConfig::default(), None).map_err(|e| e.to_string())?;
        let (zt, zi) = (oracle::z(&expect_t), oracle::z(&expect_i));
        for s in 0..n {
            let row = table.row(&format!("s{s}")).unwrap();
            worst = worst
                .max((row.z_text - zt[s]).abs())
                .max((row.z_image - zi[s]).abs())
                .max((row.combined - (zt[s] + zi[s])).abs());
        }
        ensure(worst <= 1e-12, || format!("case {case}: deviation {worst:e}"))?;
    }
    Ok(format!("1000 cases, max deviation {worst:.2e}"))
}

fn c6() -> Outcome {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = Vec::new();
    for trial in 0..10_000 {
        let dim = rng.random_range(1..=16);
        let a = random_vec(&mut rng, dim);
        let b = random_vec(&mut rng, dim);
        let k = rng.random_range(0.01..100.0);
        let ab = cosine(&a, &b).unwrap();
        let ba = cosine(&b, &a).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let na = normalize_vector(&a).unwrap();
        let nna = normalize_vector(&na).unwrap();
        let set = random_set(&mut rng, dim);
        let mut shuffled = set.clone();
        shuffled.reverse();
        shuffled.rotate_left(rng.random_range(0..set.len()));
        let m1 = fuse_references(&set).unwrap();
        let m2 = fuse_references(&shuffled).unwrap();
        let checks = [
            ("symmetry", (ab - ba).abs() <= TOL),
            ("scale", (cosine(&scaled, &b).unwrap() - ab).abs() <= TOL),
            ("bounds", (-1.0 - TOL..=1.0 + TOL).contains(&ab)),
            ("self", (cosine(&a, &a).unwrap() - 1.0).abs() <= TOL),
            ("idempotent", na.iter().zip(&nna).all(|(x, y)| (x - y).abs() <= TOL)),
            ("permutation", m1.iter().zip(&m2).all(|(x, y)| (x - y).abs() <= TOL)),
        ];
        for (name, ok) in checks {
            if !ok {
                failures.push(format!("trial {trial}: {name}"));
            }
        }
    }
    ensure(failures.is_empty(), || format!("{} failures, first {}", failures.len(), failures[0]))?;
    Ok("10000 trials, 0 failures".into())
}

fn c7() -> Outcome {
    for strategy in [Strategy::ZscoreSum, Strategy::Weighted, Strategy::Vote] {
        for tau in [0.0, 0.75, -1.25] {
            let cfg = FusionConfig { strategy, threshold: tau, ..Default::default() };
            // split signs so vote falls back to the threshold rule
            let (zt, zi) = (tau + 2.0, -2.0);
            let c = hybrid_combine(zt, zi, &cfg).map_err(|e| e.to_string())?;
            ensure(c.combined == tau, || format!("{strategy:?}: combined {} != {tau}", c.combined))?;
            ensure(c.label == Prediction::Positive, || format!("{strategy:?}: Δ == τ = {tau} not positive"))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..5000 {
        let strategy = [Strategy::ZscoreSum, Strategy::Weighted, Strategy::Vote][trial % 3];
        let zt = rng.random_range(-4.0..4.0);
        let zi = rng.random_range(-4.0..4.0);
        let t1: f64 = rng.random_range(-5.0..5.0);
        let t2: f64 = rng.random_range(-5.0..5.0);
        let (lo, hi) = (t1.min(t2), t1.max(t2));
        let weights = (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0));
        let at = |tau| hybrid_combine(zt, zi, &FusionConfig { strategy, threshold: tau, weights, ..Default::default() }).unwrap();
        if at(hi).label.is_positive() {
            ensure(at(lo).label.is_positive(), || {
                format!("{strategy:?}: positive at τ={hi} but not at τ={lo} for ({zt}, {zi})")
            })?;
        }
    }
    Ok("Δ == τ is positive for all strategies; label monotone in τ over 5000 trials".into())
}

fn c8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 1..=20usize {
        for m in 0..=k {
            // m accepts scattered among k labeled results, with na and
            // unlabeled entries interleaved
            let mut flags: Vec<bool> = (0..k).map(|i| i < m).collect();
            for i in (1..flags.len()).rev() {
                flags.swap(i, rng.random_range(0..=i));
            }
            let mut labels = BTreeMap::new();
            let mut ranked = Vec::new();
            for (i, f) in flags.iter().enumerate() {
                let id = format!("s{i:02}");
                labels.insert(id.clone(), if *f { ExpertLabel::Accept } else { ExpertLabel::Reject });
                ranked.push((id, 1.0 - i as f64 / 100.0));
                if i % 3 == 0 {
                    let na = format!("na{i:02}");
                    labels.insert(na.clone(), ExpertLabel::Na);
                    ranked.push((na, 0.0));
                    ranked.push((format!("u{i:02}"), 0.0));
                }
            }
            let p = precision_at_k(&ranked, &labels, k).map_err(|e| e.to_string())?;
            let exact = (100.0 * m as f64 / k as f64 * 100.0).round() / 100.0;
            ensure(p.hits == m && p.k == k && p.percent == exact, || {
                format!("k={k} m={m}: got {p:?}")
            })?;
        }
    }
    let mut seen = Vec::new();
    for (m, want) in [(4, 26.67), (7, 46.67), (8, 53.33)] {
        let ranked: Vec<(String, f64)> = (0..15).map(|i| (format!("s{i}"), -(i as f64))).collect();
        let labels: BTreeMap<String, ExpertLabel> = (0..15)
            .map(|i| (format!("s{i}"), if i < m { ExpertLabel::Accept } else { ExpertLabel::Reject }))
            .collect();
        let p = precision_at_k(&ranked, &labels, 15).map_err(|e| e.to_string())?;
        ensure(p.percent == want, || format!("{m}/15 gave {}", p.percent))?;
        seen.push(format!("{m}/15={:.2}%", p.percent));
    }
    Ok(format!("all m/k for k ≤ 20 exact; {}", seen.join(", ")))
}

fn c9() -> Outcome {
    let mut kb = KnowledgeBase::new();
    let n = kb.load_labels(&fixture("table_a1_labels.csv")).map_err(|e| e.to_string())?;
    let nc = kb.load_criteria(&fixture("table1_criteria.json")).map_err(|e| e.to_string())?;
    ensure(n == 40 && kb.samples().count() == 40, || format!("{n} label rows"))?;
    ensure(nc == 6 && kb.criteria().count() == 6, || format!("{nc} criteria"))?;
    for s in kb.samples() {
        ensure(s.labels.len() == 6, || format!("{} has {} labels", s.sample_id, s.labels.len()))?;
    }
    let s32 = kb.sample("Sample 32").ok_or("Sample 32 missing")?;
    let na: Vec<&str> = s32
        .labels
        .iter()
        .filter(|(_, l)| **l == ExpertLabel::Na)
        .map(|(c, _)| c.as_str())
        .collect();
    ensure(na.len() == 5, || format!("Sample 32 na columns {na:?}"))?;
    ensure(s32.label("EA3") == Some(ExpertLabel::Reject), || "Sample 32 EA3 should be reject".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    kb.save_dir(dir.path()).map_err(|e| e.to_string())?;
    let first = std::fs::read(dir.path().join("knowledge.json")).map_err(|e| e.to_string())?;
    let back = KnowledgeBase::load_dir(dir.path()).map_err(|e| e.to_string())?;
    ensure(back == kb, || "reloaded knowledge base differs".into())?;
    let dir2 = tempfile::tempdir().map_err(|e| e.to_string())?;
    back.save_dir(dir2.path()).map_err(|e| e.to_string())?;
    let second = std::fs::read(dir2.path().join("knowledge.json")).map_err(|e| e.to_string())?;
    ensure(first == second, || "re-serialized knowledge file is not byte-identical".into())?;
    Ok(format!("40 samples, 6 criteria, Sample 32 na in {na:?}, {} bytes round-trip identical", first.len()))
}

/// Synthetic scorer driven by a 6-bit pass pattern over the default order.
struct Pattern(u32);

impl NodeScorer for Pattern {
    fn score(&self, s: &str, c: &str, _: &ModelConfig, f: &FusionConfig) -> Result<HybridScore, NodeError> {
        let bit = DEFAULT_ORDER.iter().position(|x| *x == c).expect("known criterion");
        let pass = self.0 & (1 << bit) != 0;
        let z = if pass { 0.5 } else { -0.5 };
        Ok(HybridScore {
            sample_id: s.into(),
            criterion_id: c.into(),
            delta_text: 0.0,
            delta_image: 0.0,
            z_text: z,
            z_image: z,
            combined: 2.0 * z,
            strategy: f.strategy,
            threshold: f.threshold,
            label: Prediction::from_bool(2.0 * z >= f.threshold),
            batch_id: "synthetic".into(),
        })
    }
}

fn c10() -> Outcome {
    let configs = [
        TreeConfig::default(),
        TreeConfig { stop_at_first_failure: true, ..Default::default() },
        TreeConfig { gate_criteria: BTreeSet::new(), ..Default::default() },
    ];
    for (ci, cfg) in configs.iter().enumerate() {
        for pattern in 0u32..64 {
            let scorer = Pattern(pattern);
            let t = evaluate_tree_with(&scorer, "s", cfg).map_err(|e| e.to_string())?;
            let replay = evaluate_tree_with(&scorer, "s", cfg).map_err(|e| e.to_string())?;
            ensure(t == replay, || format!("config {ci} pattern {pattern:06b}: replay differs"))?;
            let passes: Vec<bool> = DEFAULT_ORDER.iter().enumerate().map(|(i, _)| pattern & (1 << i) != 0).collect();
            let first_fail = passes.iter().position(|p| !p);
            let gate_fail = !passes[0] && cfg.gate_criteria.contains("EA3");
            let expected_len = match first_fail {
                Some(i) if gate_fail || cfg.stop_at_first_failure => i + 1,
                _ => 6,
            };
            let all_pass = first_fail.is_none();
            let ctx = || format!("config {ci} pattern {pattern:06b}");
            ensure(t.steps.len() == expected_len, || format!("{}: {} steps", ctx(), t.steps.len()))?;
            ensure((t.final_verdict == FinalVerdict::Accept) == all_pass, || format!("{}: wrong verdict", ctx()))?;
            ensure(t.short_circuited == (expected_len < 6), || format!("{}: short-circuit flag", ctx()))?;
            ensure(!t.short_circuited || t.final_verdict == FinalVerdict::Reject, || format!("{}: short-circuit accepted", ctx()))?;
            for (step, pass) in t.steps.iter().zip(&passes) {
                ensure((step.verdict == Verdict::Pass) == *pass, || format!("{}: step {}", ctx(), step.criterion_id))?;
            }
        }
    }
    Ok("64 patterns × 3 configurations: gate short-circuit, all-pass accept, replay identical".into())
}

fn ids(list: &[u32]) -> BTreeSet<String> {
    list.iter().map(|n| format!("Sample {n}")).collect()
}

fn c11() -> Outcome {
    let mut kb = KnowledgeBase::new();
    kb.load_labels(&fixture("table_a1_labels.csv")).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    // frozen from an independent count of the two published tables
    let frozen = [
        ("fig26_distribution.csv", "EA6", (8, 12, 3, 16), &[40, 31, 21, 33, 24, 37, 2, 28, 20, 8, 4, 13][..], &[17, 25, 15][..]),
        ("fig27_dilution.csv", "EA1", (21, 3, 4, 11), &[37, 36, 33][..], &[19, 15, 9, 13][..]),
        ("fig28_reinforcement.csv", "EA3", (28, 0, 9, 3), &[][..], &[23, 22, 33, 34, 21, 11, 37, 30, 16][..]),
    ];
    for (file, cid, counts, fps, fns) in frozen {
        let r = reproduce(file, cid, SigmaConvention::Population)?;
        let labels = kb.labels_for(cid);
        let m = confusion(&r.table, &labels).map_err(|e| e.to_string())?;
        let again = confusion(&r.table, &labels).map_err(|e| e.to_string())?;
        ensure(m == again, || format!("{cid}: not deterministic"))?;
        let got = (m.tp, m.fp, m.fn_, m.tn);
        ensure(got == counts, || format!("{cid}: counts {got:?}, expected {counts:?}"))?;
        let fp: BTreeSet<String> = m.false_positives.iter().cloned().collect();
        let fn_: BTreeSet<String> = m.false_negatives.iter().cloned().collect();
        ensure(fp == ids(fps) && fn_ == ids(fns), || format!("{cid}: FP {fp:?} FN {fn_:?}"))?;
        summary.push(format!("{cid} tp={} fp={} fn={} tn={}", m.tp, m.fp, m.fn_, m.tn));
    }
    Ok(summary.join("; "))
}

type Check = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("1 distribution table reproduction", c1),
        ("2 dilution and reinforcement reproduction", c2),
        ("3 Sample 2 worked example", c3),
        ("4 sigma convention fit", c4),
        ("5 oracle equivalence", c5),
        ("6 cosine/fusion properties", c6),
        ("7 threshold rule", c7),
        ("8 precision@k granularity", c8),
        ("9 expert label ingest and round trip", c9),
        ("10 detection tree", c10),
        ("11 confusion matrix", c11),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("{} of {} acceptance criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
