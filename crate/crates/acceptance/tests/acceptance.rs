//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tiws::data::{load_csv, make_toy, sample_labeled_fraction, LabeledDataset, ToyKind};
use tiws::experiment::{run_sweep, DataSource, SweepConfig};
use tiws::forest::{build_tree, fit_forest, ForestParams, IForest, ITree, MaxDepth, Node, Prefix};
use tiws::metrics::average_precision;
use tiws::selection::{strategy_curves, tiws_fit, OrderingStrategy};
use tiws::store::{deserialize, serialize, serialized_size};
use tiws_acceptance::{brute_force_ap, median, recursive_path_length, report, Verdict};

const TOYS: [ToyKind; 3] = [
    ToyKind::CentralCluster,
    ToyKind::DoubleCluster,
    ToyKind::SquareToroid,
];

fn breastw() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/breastw.csv")
}

fn full_ap(forest: &IForest, ds: &LabeledDataset) -> f64 {
    let scores = forest.score_rows(ds.features(), Prefix::All).unwrap();
    average_precision(&scores, ds.labels().unwrap()).unwrap().0
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=50);
        let levels = rng.random_range(1..=n + 1);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / 7.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[rng.random_range(0..n)] = true;
        let ap = average_precision(&scores, &labels).unwrap().0;
        worst = worst.max((ap - brute_force_ap(&scores, &labels)).abs());
    }
    Verdict::new(
        worst <= 1e-12,
        format!("1000 instances, max |diff| = {worst:.1e}"),
    )
}

fn tree_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut mismatches, mut checked) = (0, 0);
    for _ in 0..100 {
        let n = rng.random_range(1..=64);
        let d = rng.random_range(1..=4);
        // Coarse grid so duplicates and constant features occur.
        let data = Array2::from_shape_fn((n, d), |_| rng.random_range(-4..4) as f64 * 0.5);
        let depth = if rng.random_bool(0.5) {
            MaxDepth::Auto
        } else {
            MaxDepth::Limit(rng.random_range(1..=10))
        };
        let tree = build_tree(data.view(), depth, &mut rng).unwrap();
        for row in data.rows() {
            let x = row.to_vec();
            checked += 1;
            if tree.path_length(&x).unwrap() != recursive_path_length(tree.nodes(), 0, &x) {
                mismatches += 1;
            }
        }
    }
    Verdict::new(
        mismatches == 0,
        format!("100 trees, {checked} points, {mismatches} mismatches"),
    )
}

fn terminal_equality() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut curves_checked = 0;
    for kind in TOYS {
        for seed in 0..10 {
            let ds = make_toy(kind, 970, 30, seed).unwrap();
            let forest =
                fit_forest(ds.features(), &ForestParams::default().with_seed(seed)).unwrap();
            let full = full_ap(&forest, &ds);
            let strategies = [
                OrderingStrategy::Best,
                OrderingStrategy::Worst,
                OrderingStrategy::Random { seed },
            ];
            let (_, curves) = strategy_curves(&forest, &ds, &strategies).unwrap();
            for c in curves {
                worst = worst.max((c.last().unwrap().0 - full).abs());
                curves_checked += 1;
            }
        }
    }
    Verdict::new(
        worst <= 1e-12,
        format!("{curves_checked} curves, max |diff| = {worst:.1e}"),
    )
}

fn toroid_gap() -> (Verdict, String) {
    let (mut full, mut best_tree, mut best_prefix) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..10 {
        let ds = make_toy(ToyKind::SquareToroid, 970, 30, seed).unwrap();
        let forest = fit_forest(ds.features(), &ForestParams::default().with_seed(seed)).unwrap();
        let (per_tree, curves) = strategy_curves(&forest, &ds, &[OrderingStrategy::Best]).unwrap();
        full.push(full_ap(&forest, &ds));
        best_tree.push(
            per_tree
                .iter()
                .map(|a| a.0)
                .fold(f64::NEG_INFINITY, f64::max),
        );
        best_prefix.push(
            curves[0]
                .iter()
                .map(|a| a.0)
                .fold(f64::NEG_INFINITY, f64::max),
        );
    }
    let (f, b, p) = (median(full), median(best_tree), median(best_prefix));
    (
        Verdict::new(
            f < 0.35 && b > 0.55,
            format!("median full AP {f:.3} (< 0.35), median best single tree AP {b:.3} (> 0.55)"),
        ),
        format!("median best prefix forest AP {p:.3}"),
    )
}

fn selection_dominance() -> Verdict {
    let (mut runs, mut violations) = (0, 0);
    let mut sources: Vec<LabeledDataset> = TOYS
        .iter()
        .map(|&k| make_toy(k, 970, 30, 0).unwrap())
        .collect();
    sources.push(load_csv(breastw()).unwrap());
    for ds in &sources {
        for seed in 0..10 {
            for fraction in [0.05, 0.1, 0.2, 0.4] {
                let Ok(labeled) = sample_labeled_fraction(ds, fraction, seed) else {
                    continue;
                };
                let params = ForestParams::default().with_seed(seed);
                let (_, sel) = tiws_fit(ds.features(), &labeled, &params).unwrap();
                runs += 1;
                if sel.selected_ap().0 < sel.full_forest_ap().0 {
                    violations += 1;
                }
            }
        }
    }
    Verdict::new(
        violations == 0 && runs > 0,
        format!("{runs} runs, {violations} violations"),
    )
}

fn breastw_sweep() -> Verdict {
    let mut config = SweepConfig::new(vec![DataSource::Csv(breastw())]);
    config.fractions = vec![0.2];
    config.repetitions = 10;
    config.params = ForestParams::default().with_seed(0);
    let outcome = run_sweep(&config).unwrap();
    if !outcome.failures.is_empty() || outcome.records.len() != 10 {
        return Verdict::new(false, format!("{} failed cells", outcome.failures.len()));
    }
    let r = &outcome.records;
    let base = median(r.iter().map(|x| x.baseline_test_ap).collect());
    let tiws = median(r.iter().map(|x| x.tiws_test_ap).collect());
    let size = median(r.iter().map(|x| x.selected_trees as f64).collect());
    Verdict::new(
        tiws >= base - 0.02 && size <= 40.0,
        format!(
            "median test AP baseline {base:.4}, selected {tiws:.4}; median selected trees {size}"
        ),
    )
}

fn byte_layout() -> Verdict {
    let leaf = |size| ITree::from_nodes(vec![Node::Leaf { size }]).unwrap();
    let mut problems = Vec::new();

    let one = serialize(&IForest::from_trees(vec![leaf(1)], 2, None).unwrap()).unwrap();
    let mut expected = b"TIWS".to_vec();
    expected.push(1);
    expected.extend(2u32.to_le_bytes());
    expected.extend(1u32.to_le_bytes());
    expected.extend(1u32.to_le_bytes());
    expected.push(0);
    expected.extend(1u32.to_le_bytes());
    if one != expected || one.len() != 22 {
        problems.push(format!("single-leaf forest is {} bytes", one.len()));
    }
    for k in [1, 2, 7, 100] {
        let f = IForest::from_trees((0..k).map(|_| leaf(3)).collect(), 3, None).unwrap();
        if serialize(&f).unwrap().len() != 13 + 9 * k {
            problems.push(format!("{k} leaf trees"));
        }
    }
    let split = ITree::from_nodes(vec![
        Node::Split {
            feature: 1,
            threshold: 0.5,
            left: 1,
            right: 2,
        },
        Node::Leaf { size: 2 },
        Node::Leaf { size: 1 },
    ])
    .unwrap();
    let blob = serialize(&IForest::from_trees(vec![split], 3, None).unwrap()).unwrap();
    let mut node = vec![1u8];
    node.extend(1u16.to_le_bytes());
    node.extend(0.5f32.to_le_bytes());
    node.extend(1u32.to_le_bytes());
    node.extend(2u32.to_le_bytes());
    if blob.len() != 13 + 4 + 15 + 10 || blob[17..32] != node[..] {
        problems.push("split record layout".into());
    }

    let mut worst: f64 = 0.0;
    for kind in TOYS {
        for seed in 0..10 {
            let ds = make_toy(kind, 970, 30, seed).unwrap();
            let forest =
                fit_forest(ds.features(), &ForestParams::default().with_seed(seed)).unwrap();
            let (per_tree, _) = strategy_curves(&forest, &ds, &[]).unwrap();
            let order = tiws::selection::order_trees(OrderingStrategy::Best, &per_tree).order;
            let reduced = forest.subset(&order[..20]).unwrap();
            worst = worst.max(serialized_size(&reduced) as f64 / serialized_size(&forest) as f64);
        }
    }
    if worst > 0.25 {
        problems.push(format!("20-of-100 ratio {worst:.3}"));
    }
    Verdict::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("layouts exact; worst 20-of-100 size ratio {worst:.3} (<= 0.25)")
        } else {
            problems.join(", ")
        },
    )
}

fn tiws_binary() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    let dir = exe.parent().and_then(Path::parent).unwrap();
    dir.join(format!("tiws{}", std::env::consts::EXE_SUFFIX))
}

fn sweep_determinism() -> Verdict {
    let bin = tiws_binary();
    if !bin.exists() {
        return Verdict::new(false, format!("binary not built at {}", bin.display()));
    }
    let tmp = tempfile::tempdir().unwrap();
    let breastw = breastw();
    let run = |name: &str, threads: Option<&str>| {
        let out = tmp.path().join(name);
        let mut cmd = Command::new(&bin);
        if let Some(t) = threads {
            cmd.args(["--threads", t]);
        }
        let status = cmd
            .arg("sweep")
            .arg("--data")
            .arg(&breastw)
            .args([
                "--data",
                "toy:double-cluster",
                "--data",
                "toy:square-toroid",
            ])
            .args([
                "--fractions",
                "0.1,0.2",
                "--repetitions",
                "3",
                "--seed",
                "7",
                "--out",
            ])
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
        std::fs::read(out.join("sweep.csv")).unwrap()
    };
    let runs = [
        run("a", None),
        run("b", None),
        run("c", Some("1")),
        run("d", Some("4")),
    ];
    let identical = runs.iter().all(|r| *r == runs[0]);
    let rows = runs[0].iter().filter(|&&b| b == b'\n').count();
    Verdict::new(
        identical && rows == 19,
        format!(
            "4 runs (default, default, 1 thread, 4 threads), {rows} lines, identical: {identical}"
        ),
    )
}

fn fuzz() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let blobs: Vec<Vec<u8>> = TOYS
        .iter()
        .map(|&k| {
            let ds = make_toy(k, 100, 5, 1).unwrap();
            serialize(&fit_forest(ds.features(), &ForestParams::default().with_trees(4)).unwrap())
                .unwrap()
        })
        .collect();
    let prev = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let (mut panics, mut errors, mut valid) = (0, 0, 0);
    for _ in 0..10_000 {
        let mut b = blobs[rng.random_range(0..blobs.len())].clone();
        for _ in 0..rng.random_range(1..4) {
            if b.is_empty() {
                b.push(rng.random());
                continue;
            }
            match rng.random_range(0..5) {
                0 => {
                    let i = rng.random_range(0..b.len());
                    b[i] ^= 1 << rng.random_range(0..8);
                }
                1 => {
                    let i = rng.random_range(0..b.len());
                    b[i] = rng.random();
                }
                2 => b.truncate(rng.random_range(0..b.len())),
                3 => {
                    let i = rng.random_range(0..=b.len());
                    b.insert(i, rng.random());
                }
                _ => {
                    // Overwrite a 4-byte window, often hitting a count or index.
                    if b.len() >= 4 {
                        let i = rng.random_range(0..=b.len() - 4);
                        let v: u32 = if rng.random_bool(0.5) {
                            u32::MAX
                        } else {
                            rng.random_range(0..300)
                        };
                        b[i..i + 4].copy_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let outcome = std::panic::catch_unwind(|| match deserialize(&b) {
            Ok(f) => {
                let _ = f.score(&[0.0, 0.0], Prefix::All);
                true
            }
            Err(_) => false,
        });
        match outcome {
            Ok(true) => valid += 1,
            Ok(false) => errors += 1,
            Err(_) => panics += 1,
        }
    }
    std::panic::set_hook(prev);
    Verdict::new(
        panics == 0,
        format!("10000 mutants: {errors} typed errors, {valid} valid forests, {panics} panics"),
    )
}

fn main() {
    let mut all = true;
    all &= report(
        1,
        "AP matches brute-force oracle",
        Some(Duration::from_secs(5)),
        metrics_oracle,
    );
    all &= report(2, "path length matches recursive oracle", None, tree_oracle);
    all &= report(
        3,
        "prefix curves end at the full-forest AP",
        None,
        terminal_equality,
    );
    let mut extra = String::new();
    all &= report(
        4,
        "square-toroid gap",
        Some(Duration::from_secs(30)),
        || {
            let (v, info) = toroid_gap();
            extra = info;
            v
        },
    );
    println!("INFO [4] {extra}");
    all &= report(
        5,
        "selection dominance on labels",
        None,
        selection_dominance,
    );
    all &= report(
        6,
        "breastw improvement at 20% labels",
        Some(Duration::from_secs(60)),
        breastw_sweep,
    );
    all &= report(7, "byte layout and reduced size", None, byte_layout);
    all &= report(8, "sweep output determinism", None, sweep_determinism);
    all &= report(9, "format fuzz", None, fuzz);
    if !all {
        std::process::exit(1);
    }
}
