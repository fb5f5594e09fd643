//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 9-12 need the real biographies corpus and pretrained vectors:
//! set SNOB_BIOS_CORPUS and SNOB_EMBEDDINGS (and SNOB_LEXICON for 10).
//! They take hours and are skipped otherwise.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snob_core::audit::{load_audit_data, run_audit_with_data, write_outputs, AuditBundle, AuditConfig, AuditData};
use snob_core::corpus::{stratified_split, SplitPart};
use snob_core::linear::{loss_and_gradient, TrainingSet};
use snob_core::metrics::{gap_rms, spearman};
use snob_core::norm::{balance_weights, chi2_critical, ContingencyTable, TaskRelevanceMap};
use snob_core::synth::{generate_planted_corpus, oracle_spearman, planted_embeddings, planted_lexicon, PlantedSpec};
use snob_core::text::{build_vocabulary, DenseVector, SparseVector};
use snob_core::{Biography, Corpus, FeatureSpace, FeatureVector, InterventionKind, LinearModel, PronounGroup, Repr};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn planted(kappa: f64, seed: u64) -> AuditData {
    let spec = PlantedSpec {
        kappa,
        seed,
        ..PlantedSpec::default()
    };
    AuditData {
        corpus: generate_planted_corpus(&spec).expect("valid spec"),
        embeddings: planted_embeddings(&spec).expect("valid spec"),
        lexicon: Some(planted_lexicon(&spec).expect("valid spec")),
        nonbinary: None,
        external: Vec::new(),
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut tied, mut total, mut worst, mut undefined_mismatch) = (0usize, 0usize, 0.0f64, 0usize);
    for _ in 0..10_000 {
        let n = rng.random_range(3..=60);
        let levels = rng.random_range(2..=n.max(3));
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0..levels) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        for v in [&xs, &ys] {
            tied += v.iter().filter(|a| v.iter().filter(|b| b == a).count() > 1).count();
            total += v.len();
        }
        match (spearman(&xs, &ys), oracle_spearman(&xs, &ys)) {
            (Ok(p), Ok(o)) => worst = worst.max((p.rho - o).abs()),
            (Err(_), Err(_)) => {}
            _ => undefined_mismatch += 1,
        }
    }
    let tie_share = tied as f64 / total as f64;
    check(
        worst <= 1e-12 && tie_share >= 0.3 && undefined_mismatch == 0,
        format!(
            "10^4 cases, {:.0}% tied values, max |diff| {worst:.1e}",
            100.0 * tie_share
        ),
        format!("max |diff| {worst:.1e}, tie share {tie_share:.2}, {undefined_mismatch} definedness mismatches"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let dim = rng.random_range(1..=12);
        let n = rng.random_range(2..=40);
        let sparse = case % 2 == 0;
        let space = FeatureSpace {
            repr: if sparse { Repr::Bow } else { Repr::We },
            id: "gradcheck".into(),
            dim,
        };
        let rows: Vec<FeatureVector> = (0..n)
            .map(|_| {
                if sparse {
                    let mut pairs = Vec::new();
                    for j in 0..dim {
                        if rng.random_bool(0.4) {
                            pairs.push((j, rng.random_range(1..4) as f64));
                        }
                    }
                    FeatureVector::Sparse(SparseVector::from_pairs(pairs))
                } else {
                    FeatureVector::Dense(DenseVector((0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()))
                }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let data = TrainingSet::new(space.clone(), rows.iter().collect(), labels, Some(weights)).unwrap();
        let reg = rng.random_range(0.0..2.0);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-1.0..1.0);
        let model = LinearModel::new(w.clone(), b, space.repr, space.id.clone());
        let (_, grad) = loss_and_gradient(&model, &data, reg).unwrap();
        let h = 1e-6;
        let loss_at = |theta: &[f64]| {
            let m = LinearModel::new(theta[..dim].to_vec(), theta[dim], space.repr, space.id.clone());
            loss_and_gradient(&m, &data, reg).unwrap().0
        };
        let mut theta = w.clone();
        theta.push(b);
        let mut num = Vec::with_capacity(dim + 1);
        for j in 0..=dim {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            num.push((loss_at(&up) - loss_at(&down)) / (2.0 * h));
        }
        let diff: f64 = grad.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = grad
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    check(
        worst < 1e-5,
        format!("50 instances, max relative error {worst:.1e}"),
        format!("max relative error {worst:.1e}"),
    )
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for config in 0..100 {
        let k = rng.random_range(1..=5);
        let balanced = config % 10 == 0;
        let mut bios = Vec::new();
        for c in 0..k {
            let she = rng.random_range(1..60);
            let he = if balanced { she } else { rng.random_range(1..60) };
            let nb = rng.random_range(0..3);
            let groups = std::iter::repeat_n(PronounGroup::She, she)
                .chain(std::iter::repeat_n(PronounGroup::He, he))
                .chain(std::iter::repeat_n(PronounGroup::Nb, nb));
            for (i, g) in groups.enumerate() {
                bios.push(Biography {
                    id: format!("c{c}-{i}"),
                    occupation: format!("occ{c}"),
                    pronoun_group: g,
                    tokens: vec!["w".into()],
                    name: None,
                });
            }
        }
        let corpus = Corpus::new(bios).unwrap();
        let w = balance_weights(&corpus);
        for occ in corpus.occupations() {
            let sum = |g| {
                corpus
                    .biographies()
                    .iter()
                    .zip(&w)
                    .filter(|(b, _)| &b.occupation == occ && b.pronoun_group == g)
                    .map(|(_, w)| w)
                    .sum::<f64>()
            };
            worst = worst.max((sum(PronounGroup::She) - sum(PronounGroup::He)).abs());
        }
        if balanced {
            let binary_ones = corpus
                .biographies()
                .iter()
                .zip(&w)
                .all(|(b, &w)| !b.pronoun_group.is_binary() || w == 1.0);
            if !binary_ones {
                return Err(format!("config {config}: balanced counts gave weights other than 1"));
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("100 configurations, max group-sum difference {worst:.1e}"),
        format!("max group-sum difference {worst:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    // separated styles and a weaker occupation signal, so unmitigated TPRs
    // differ by group
    let spec = PlantedSpec {
        occupation_rate: 0.05,
        style_beta: (4.0, 1.0),
        seed: 4,
        ..PlantedSpec::default()
    };
    let data = AuditData {
        corpus: generate_planted_corpus(&spec).map_err(|e| e.to_string())?,
        embeddings: planted_embeddings(&spec).map_err(|e| e.to_string())?,
        lexicon: None,
        nonbinary: None,
        external: Vec::new(),
    };
    let mut msgs = Vec::new();
    for randomized in [false, true] {
        let cfg = AuditConfig {
            interventions: vec![InterventionKind::None, InterventionKind::Po],
            calibration: SplitPart::Test,
            randomized_thresholds: randomized,
            ..AuditConfig::default()
        };
        let b = run_audit_with_data(&cfg, &data).map_err(|e| e.to_string())?.bundle;
        for repr in ["BOW", "WE"] {
            let none = b.report(repr, InterventionKind::None).ok_or("missing NONE report")?;
            let po = b.report(repr, InterventionKind::Po).ok_or("missing PO report")?;
            let mut rank_diff = 0.0f64;
            for (a, c) in none.occupations.iter().zip(&po.occupations) {
                match (a.r, c.r) {
                    (Some(x), Some(y)) => rank_diff = rank_diff.max((x.rho - y.rho).abs()),
                    _ => return Err(format!("{repr}: r_c undefined for {}", a.occupation)),
                }
            }
            let g0 = none.gap_rms.ok_or("NONE gap undefined")?;
            let g1 = po.gap_rms.ok_or("PO gap undefined")?;
            let limit = if randomized { 1e-9 } else { 0.01 };
            let kind = if randomized { "randomized" } else { "deterministic" };
            if rank_diff > 1e-12 || g0 <= 0.05 || g1 > limit {
                return Err(format!(
                    "{repr} {kind}: max r_c diff {rank_diff:.1e}, Gap^RMS {g0:.4} -> {g1:.2e}"
                ));
            }
            msgs.push(format!("{repr} {kind} Gap^RMS {g0:.3} -> {g1:.1e}"));
        }
    }
    Ok(format!("r_c unchanged under PO; {}", msgs.join(", ")))
}

fn criterion_5() -> Outcome {
    let cfg = AuditConfig {
        reprs: vec![Repr::Bow],
        interventions: vec![InterventionKind::None],
        ..AuditConfig::default()
    };
    let rho_for = |kappa: f64, seed: u64| -> Result<(f64, f64), String> {
        let data = planted(kappa, seed);
        let cfg = AuditConfig { seed, ..cfg.clone() };
        let b = run_audit_with_data(&cfg, &data).map_err(|e| e.to_string())?.bundle;
        let r = b
            .report("BOW", InterventionKind::None)
            .and_then(|r| r.rho)
            .ok_or("rho undefined")?;
        Ok((r.rho, r.p_value))
    };
    let mut planted_hits = 0;
    let mut null_hits = 0;
    let mut planted_rhos = Vec::new();
    let mut null_ps = Vec::new();
    for seed in 0..10 {
        let (rho, p) = rho_for(0.8, seed)?;
        planted_hits += usize::from(rho > 0.5 && p < 0.05);
        planted_rhos.push(format!("{rho:.2}"));
        let (_, p0) = rho_for(0.0, seed)?;
        null_hits += usize::from(p0 > 0.05);
        null_ps.push(format!("{p0:.2}"));
    }
    check(
        planted_hits >= 9 && null_hits >= 8,
        format!("kappa=0.8 detected {planted_hits}/10, kappa=0 not rejected {null_hits}/10"),
        format!(
            "kappa=0.8 detected {planted_hits}/10 (rho {}), kappa=0 not rejected {null_hits}/10 (p {})",
            planted_rhos.join(" "),
            null_ps.join(" ")
        ),
    )
}

fn criterion_6() -> Outcome {
    // (a, b, c, d, reference statistic computed with exact rational arithmetic)
    let reference: [(u64, u64, u64, u64, f64); 3] = [
        (12, 5, 7, 9, 1.4559963788146837),
        (30, 10, 10, 30, 18.05),
        (3, 97, 40, 860, 0.17280530512286726),
    ];
    let mut tables: Vec<(u64, u64, u64, u64)> = reference.iter().map(|r| (r.0, r.1, r.2, r.3)).collect();
    tables.extend([
        (1, 1, 1, 1),
        (10, 0, 0, 10),
        (5, 5, 5, 6),
        (100, 200, 300, 400),
        (1, 1000, 2, 5000),
        (50, 3, 4, 60),
        (7, 13, 29, 3),
        (500, 20, 480, 25),
        (2, 8, 8, 2),
        (0, 10, 5, 5),
        (9, 1, 1, 9),
        (25, 25, 30, 20),
        (1, 2, 3, 4),
        (123, 456, 789, 1011),
        (4, 40, 400, 4000),
        (60, 40, 40, 60),
        (3, 1, 1, 3),
    ]);
    let closed = |a: f64, b: f64, c: f64, d: f64| {
        let n = a + b + c + d;
        let dev = ((a * d - b * c).abs() - n / 2.0).max(0.0);
        n * dev * dev / ((a + b) * (c + d) * (a + c) * (b + d))
    };
    let mut worst = 0.0f64;
    for &(a, b, c, d) in &tables {
        let s = ContingencyTable::new(a, b, c, d)
            .yates_statistic()
            .ok_or("degenerate fixed table")?;
        let e = closed(a as f64, b as f64, c as f64, d as f64);
        worst = worst.max((s - e).abs() / e.max(1.0));
    }
    for &(a, b, c, d, r) in &reference {
        let s = ContingencyTable::new(a, b, c, d).yates_statistic().unwrap();
        worst = worst.max((s - r).abs() / r.max(1.0));
    }
    let levels = [0.8, 0.9, 0.95, 0.99, 0.999];
    if !levels.windows(2).all(|w| chi2_critical(w[0]) < chi2_critical(w[1])) {
        return Err("critical values not increasing in level".into());
    }
    for &(a, b, c, d) in &tables {
        let t = ContingencyTable::new(a, b, c, d);
        let sig: Vec<bool> = levels.iter().map(|&l| t.is_significant(l)).collect();
        if sig.windows(2).any(|w| !w[0] && w[1]) {
            return Err(format!("({a},{b},{c},{d}) significance not monotone in level"));
        }
    }
    let data = planted(0.8, 6);
    let split = stratified_split(&data.corpus, Default::default(), 6).map_err(|e| e.to_string())?;
    let cfg = AuditConfig::default();
    let train = split.scrubbed(&cfg.indicator_set()).train;
    let vocab = build_vocabulary(&train, 5, &cfg.indicator_set()).map_err(|e| e.to_string())?;
    let maps: Vec<TaskRelevanceMap> = levels
        .iter()
        .map(|&l| TaskRelevanceMap::compute(&train, &vocab, l))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let empty = BTreeSet::new();
    for occ in train.occupations() {
        for w in maps.windows(2) {
            let loose = w[0].relevant_words(occ).unwrap_or(&empty);
            let strict = w[1].relevant_words(occ).unwrap_or(&empty);
            if !strict.is_subset(loose) {
                return Err(format!("{occ}: relevant set at higher level is not a subset"));
            }
        }
    }
    check(
        worst <= 1e-10,
        format!(
            "{} tables, max relative error {worst:.1e}; relevance nested over levels",
            tables.len()
        ),
        format!("max relative error {worst:.1e}"),
    )
}

fn criterion_7() -> Outcome {
    let a = gap_rms(&[0.3, 0.4]).map_err(|e| e.to_string())?;
    let z = gap_rms(&[0.0, 0.0, 0.0]).map_err(|e| e.to_string())?;
    check(
        (a - 0.3535533906).abs() < 1e-9 && z == 0.0,
        format!("{{0.3, 0.4}} -> {a:.10}, zeros -> {z}"),
        format!("{{0.3, 0.4}} -> {a}, zeros -> {z}"),
    )
}

fn criterion_8() -> Outcome {
    let spec = PlantedSpec {
        occupations: snob_core::synth::evenly_spaced_occupations(4, 0.15, 0.85, 500),
        nonbinary_per_occupation: 10,
        seed: 8,
        ..PlantedSpec::default()
    };
    let data = AuditData {
        corpus: generate_planted_corpus(&spec).map_err(|e| e.to_string())?,
        embeddings: planted_embeddings(&spec).map_err(|e| e.to_string())?,
        lexicon: Some(planted_lexicon(&spec).map_err(|e| e.to_string())?),
        nonbinary: None,
        external: Vec::new(),
    };
    let cfg = AuditConfig {
        robustness: true,
        randomized_thresholds: true,
        export_scores: true,
        ..AuditConfig::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut contents = Vec::new();
    for d in &dirs {
        let run = run_audit_with_data(&cfg, &data).map_err(|e| e.to_string())?;
        let files = write_outputs(&run, d.path()).map_err(|e| e.to_string())?;
        let mut all = Vec::new();
        for f in files {
            all.push((
                f.strip_prefix(d.path()).unwrap().to_path_buf(),
                std::fs::read(&f).unwrap(),
            ));
        }
        all.sort();
        contents.push(all);
    }
    check(
        contents[0] == contents[1],
        format!("{} output files byte-identical across runs", contents[0].len()),
        "outputs differ between identical runs".into(),
    )
}

fn full_dataset() -> Option<(AuditConfig, AuditData)> {
    let corpus = std::env::var_os("SNOB_BIOS_CORPUS")?;
    let embeddings = std::env::var_os("SNOB_EMBEDDINGS")?;
    let cfg = AuditConfig {
        corpus: Some(PathBuf::from(corpus)),
        embeddings: Some(PathBuf::from(embeddings)),
        lexicon: std::env::var_os("SNOB_LEXICON").map(PathBuf::from),
        interventions: vec![
            InterventionKind::None,
            InterventionKind::Pr,
            InterventionKind::Po,
            InterventionKind::De,
        ],
        robustness: true,
        ..AuditConfig::default()
    };
    let data = load_audit_data(&cfg).expect("full dataset loads");
    Some((cfg, data))
}

fn full_criteria(bundle: &AuditBundle) -> Vec<(u32, Outcome)> {
    let mut out = Vec::new();
    let acc = bundle.norm.accuracy;
    out.push((
        9,
        check(
            (acc - 0.68).abs() <= 0.03,
            format!("G accuracy {acc:.3}"),
            format!("G accuracy {acc:.3}"),
        ),
    ));
    out.push((
        10,
        match &bundle.norm.lexicon {
            Some(l) => {
                let r = l.correlation.rho;
                check(
                    (r - 0.68).abs() <= 0.08,
                    format!("lexicon r {r:.3}"),
                    format!("lexicon r {r:.3}"),
                )
            }
            None => Err("no lexicon correlation (set SNOB_LEXICON)".into()),
        },
    ));
    let table1 = [
        ("BOW", InterventionKind::Pr, 0.79),
        ("BOW", InterventionKind::Po, 0.80),
        ("BOW", InterventionKind::De, 0.78),
        ("WE", InterventionKind::Pr, 0.77),
        ("WE", InterventionKind::Po, 0.85),
        ("WE", InterventionKind::De, 0.82),
    ];
    let mut problems = Vec::new();
    let mut seen = Vec::new();
    for (repr, kind, expected) in table1 {
        let Some(r) = bundle.report(repr, kind) else {
            problems.push(format!("{repr} {kind} missing"));
            continue;
        };
        let Some(c) = r.rho else {
            problems.push(format!("{repr} {kind} rho undefined"));
            continue;
        };
        seen.push(format!("{repr} {kind} {:.2}", c.rho));
        if !(c.rho > 0.0 && c.p_value < 0.01) || (c.rho - expected).abs() > 0.08 {
            problems.push(format!("{repr} {kind} rho {:.2} p {:.1e}", c.rho, c.p_value));
        }
        if kind == InterventionKind::Po && r.gap_rms.is_none_or(|g| g > 0.01) {
            problems.push(format!("{repr} PO Gap^RMS {:?}", r.gap_rms));
        }
    }
    for repr in ["BOW", "WE"] {
        let rho = |k| {
            bundle
                .report(repr, k)
                .and_then(|r| r.rho)
                .map_or(f64::NEG_INFINITY, |c| c.rho)
        };
        if rho(InterventionKind::Po) < rho(InterventionKind::Pr)
            || rho(InterventionKind::Po) < rho(InterventionKind::De)
        {
            problems.push(format!("{repr}: PO does not have the largest rho"));
        }
    }
    out.push((
        11,
        if problems.is_empty() {
            Ok(seen.join(", "))
        } else {
            Err(problems.join("; "))
        },
    ));
    out.push((
        12,
        match &bundle.relevance {
            Some(rel) => {
                let mut problems = Vec::new();
                if (rel.mean_irrelevant_fraction - 0.40).abs() > 0.10 {
                    problems.push(format!("irrelevant fraction {:.3}", rel.mean_irrelevant_fraction));
                }
                if (rel.mean_accuracy - 0.61).abs() > 0.04 {
                    problems.push(format!("G^c-irrev accuracy {:.3}", rel.mean_accuracy));
                }
                for repr in ["BOW", "WE"] {
                    let get = |k| {
                        let r = bundle.report(repr, k)?;
                        Some((r.rho?.rho, r.rho_irrev?.rho))
                    };
                    let kinds = [InterventionKind::Pr, InterventionKind::Po, InterventionKind::De];
                    for k in kinds {
                        match get(k) {
                            Some((r, ri)) if ri.abs() >= r.abs() => {
                                problems.push(format!("{repr} {k}: |rho_irrev| {ri:.2} not below |rho| {r:.2}"))
                            }
                            Some(_) => {}
                            None => problems.push(format!("{repr} {k}: rho or rho_irrev undefined")),
                        }
                    }
                    if let (Some((_, po)), Some((_, de))) = (get(InterventionKind::Po), get(InterventionKind::De)) {
                        if po <= de {
                            problems.push(format!("{repr} rho_irrev PO {po:.2} <= DE {de:.2}"));
                        }
                    }
                }
                if problems.is_empty() {
                    Ok(format!(
                        "{:.1}% irrelevant, accuracy {:.3}",
                        100.0 * rel.mean_irrelevant_fraction,
                        rel.mean_accuracy
                    ))
                } else {
                    Err(problems.join("; "))
                }
            }
            None => Err("no relevance summary".into()),
        },
    ));
    out
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
    ];
    let only: Option<Vec<u32>> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    let report = |n: u32, o: &Outcome, secs: f64| match o {
        Ok(m) => println!("criterion {n}: PASS ({m}) [{secs:.1}s]"),
        Err(m) => println!("criterion {n}: FAIL ({m}) [{secs:.1}s]"),
    };
    for (n, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.is_empty() && !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        failed += usize::from(o.is_err());
        report(n, &o, t.elapsed().as_secs_f64());
    }
    match full_dataset() {
        Some((cfg, data)) => {
            let t = Instant::now();
            match run_audit_with_data(&cfg, &data) {
                Ok(run) => {
                    for (n, o) in full_criteria(&run.bundle) {
                        failed += usize::from(o.is_err());
                        report(n, &o, t.elapsed().as_secs_f64());
                    }
                }
                Err(e) => {
                    failed += 4;
                    println!("criteria 9-12: FAIL (audit failed: {e})");
                }
            }
        }
        None => {
            for n in 9..=12 {
                println!("criterion {n}: SKIP (full dataset; set SNOB_BIOS_CORPUS and SNOB_EMBEDDINGS)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
