//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use codistill_core::data::{gen_synthetic, partition, zero_skew_split, SkewSpec, SyntheticSpec};
use codistill_core::experiment::{run_and_emit, run_experiment, ExperimentPlan, ResultsTable};
use codistill_core::federation::{
    average_models, run_strategy, select_teacher, ClientState, ExchangeChannel, FederationConfig, Strategy,
    TrainHyper,
};
use codistill_core::metrics::std_across_skews;
use codistill_core::nn::gradcheck::run_suite;
use codistill_core::nn::{init_model, ArchDescriptor, ModelState};
use codistill_core::rng::{self, Purpose};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_CONFIGS: usize = 5;
const GRAD_EPS: f64 = 1e-6;
const GRAD_MAX_SECONDS: f64 = 60.0;

const PART_PER_CLASS: usize = 600;
const PART_CLIENTS: usize = 4;
const PART_SKEWS: [u32; 4] = [0, 20, 40, 60];
const PART_MINORITY: [usize; 4] = [150, 120, 90, 60];
const PART_MAJORITY: usize = 150;
const PART_SEEDS: u64 = 100;

const TEACHER_CLIENTS: usize = 4;
const TEACHER_DRAWS: usize = 30_000;
const TEACHER_MIN_P: f64 = 0.001;

const TREND_SKEWS: [u32; 4] = [0, 20, 40, 60];
const TREND_SEEDS: [u64; 3] = [0, 1, 2];
const TREND_CLIENTS: usize = 4;
const TREND_BUDGET: usize = 200;
const TREND_ROUNDS: usize = 50;
const TREND_SKEW: u32 = 60;
const TREND_MIN_GAP: f64 = 0.30;
const TREND_MAX_SECONDS: f64 = 600.0;

const LENET_PARAMS: u64 = 61_026;

const SD_ROW: [f64; 4] = [0.881, 0.959, 0.834, 0.817];
const SD_EXPECTED: f64 = 0.06;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn tiny_arch() -> ArchDescriptor {
    ArchDescriptor {
        input_side: 12,
        kernel: 2,
        conv_widths: [3, 4, 6],
        fc_width: 8,
        classes: 2,
    }
}

fn tiny_clients(skew: u32, seed: u64) -> Vec<ClientState> {
    let n_per_class = 8;
    let data = gen_synthetic(&SyntheticSpec {
        classes: 2,
        per_class: 4 * n_per_class,
        side: 12,
        separation: 0.6,
        noise: 0.1,
        seed,
    })
    .unwrap();
    let spec = SkewSpec {
        skew,
        n_per_class,
        clients: 4,
        seed,
    };
    let model = init_model(tiny_arch(), seed).unwrap();
    partition(&data, &spec)
        .unwrap()
        .into_iter()
        .map(|s| ClientState::new(s, model.clone()))
        .collect()
}

fn tiny_cfg(lambda: f64) -> FederationConfig {
    FederationConfig {
        lambda,
        k: 4,
        hyper: TrainHyper {
            batch_size: 4,
            ..TrainHyper::default()
        },
        ..FederationConfig::default()
    }
}

fn run(strategy: Strategy, skew: u32, seed: u64, rounds: usize, cfg: &FederationConfig) -> Vec<ClientState> {
    let mut clients = tiny_clients(skew, seed);
    let mut channel = ExchangeChannel::new();
    run_strategy(strategy, &mut clients, rounds, cfg, seed, &mut channel).unwrap();
    clients
}

fn gradient_soundness() -> Verdict {
    let start = Instant::now();
    let outcomes = match run_suite(GRAD_CONFIGS, 0, GRAD_EPS) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("gradient oracle failed: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let worst = outcomes.iter().map(|o| o.max_rel_err).fold(0.0, f64::max);
    verdict(
        outcomes.len() == GRAD_CONFIGS && worst < GRAD_REL_TOL && secs < GRAD_MAX_SECONDS,
        format!(
            "{} configs, max rel err {worst:.2e} (< {GRAD_REL_TOL:.0e}), {secs:.1}s (< {GRAD_MAX_SECONDS}s)",
            outcomes.len()
        ),
    )
}

fn partition_exactness() -> Verdict {
    let data = gen_synthetic(&SyntheticSpec {
        classes: 2,
        per_class: PART_PER_CLASS,
        side: 12,
        separation: 0.5,
        noise: 0.1,
        seed: 0,
    })
    .unwrap();
    let n = PART_PER_CLASS / PART_CLIENTS;
    for seed in 0..PART_SEEDS {
        let split = zero_skew_split(&data, PART_CLIENTS, n, seed).unwrap();
        let mut previous: Option<Vec<BTreeSet<usize>>> = None;
        for (&skew, &expected_minority) in PART_SKEWS.iter().zip(&PART_MINORITY) {
            let shards = split.apply(&data, skew).unwrap();
            let mut seen = BTreeSet::new();
            let mut minority_sets = Vec::new();
            for s in &shards {
                let majority = 1 - s.minority;
                if s.class_counts[s.minority] != expected_minority || s.class_counts[majority] != PART_MAJORITY {
                    return verdict(
                        false,
                        format!("seed {seed} s={skew} client {}: counts {:?}", s.client_id, s.class_counts),
                    );
                }
                for &i in &s.source_indices {
                    if !seen.insert(i) {
                        return verdict(false, format!("seed {seed} s={skew}: image {i} in two shards"));
                    }
                }
                minority_sets.push(
                    s.source_indices
                        .iter()
                        .copied()
                        .filter(|&i| data.labels()[i] == s.minority)
                        .collect::<BTreeSet<_>>(),
                );
            }
            if let Some(prev) = &previous {
                if prev.iter().zip(&minority_sets).any(|(p, m)| !m.is_subset(p)) {
                    return verdict(false, format!("seed {seed} s={skew}: elimination not nested"));
                }
            }
            previous = Some(minority_sets);
        }
    }
    verdict(
        true,
        format!("minority {PART_MINORITY:?}, majority {PART_MAJORITY}, disjoint and nested over {PART_SEEDS} seeds"),
    )
}

fn lambda_zero_degeneracy() -> Verdict {
    let cfg = tiny_cfg(0.0);
    let mut details = Vec::new();
    let mut pass = true;
    for (skew, seed) in [(0, 3), (40, 4)] {
        let local = run(Strategy::LocalOnly, skew, seed, 3, &cfg);
        for strategy in [Strategy::CoDistill, Strategy::FedDistill, Strategy::FedProto] {
            let other = run(strategy, skew, seed, 3, &cfg);
            let same = local.iter().zip(&other).all(|(a, b)| a.model.bit_eq(&b.model));
            pass &= same;
            if !same {
                details.push(format!("{} differs at s={skew}", strategy.name()));
            }
        }
    }
    if pass {
        details.push("codistill, feddistill, fedproto bit-identical to local-only".into());
    }
    verdict(pass, details.join("; "))
}

fn fedavg_consensus() -> Verdict {
    let cfg = tiny_cfg(1.0);
    for rounds in 1..=4 {
        let clients = run(Strategy::FedAvg, 40, 5, rounds, &cfg);
        if clients.iter().any(|c| !c.model.bit_eq(&clients[0].model)) {
            return verdict(false, format!("clients disagree after round {rounds}"));
        }
    }
    let model = init_model(tiny_arch(), 9).unwrap();
    let copies: Vec<&ModelState> = vec![&model; 4];
    let avg = average_models(&copies).unwrap();
    let identity = avg.bit_eq(&model);
    verdict(
        identity,
        format!("identical after each of 4 rounds; averaging identical models is identity: {identity}"),
    )
}

fn teacher_uniformity() -> Verdict {
    let ids: Vec<usize> = (0..TEACHER_CLIENTS).collect();
    let dist = ChiSquared::new((TEACHER_CLIENTS - 2) as f64).unwrap();
    let mut worst_p = 1.0f64;
    for &student in &ids {
        let mut rng = rng::stream(0, Purpose::Teacher, &[student as u64]);
        let mut counts = vec![0usize; TEACHER_CLIENTS];
        for _ in 0..TEACHER_DRAWS {
            counts[select_teacher(student, &ids, &mut rng).unwrap()] += 1;
        }
        if counts[student] != 0 {
            return verdict(false, format!("student {student} drew itself"));
        }
        let expected = TEACHER_DRAWS as f64 / (TEACHER_CLIENTS - 1) as f64;
        let stat: f64 = counts
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != student)
            .map(|(_, &n)| (n as f64 - expected).powi(2) / expected)
            .sum();
        worst_p = worst_p.min(1.0 - dist.cdf(stat));
    }
    verdict(
        worst_p > TEACHER_MIN_P,
        format!("{TEACHER_DRAWS} draws per student, min p = {worst_p:.4} (> {TEACHER_MIN_P})"),
    )
}

struct Trend {
    table: ResultsTable,
    seconds: f64,
}

fn trend_grid() -> &'static Result<Trend, String> {
    static GRID: OnceLock<Result<Trend, String>> = OnceLock::new();
    GRID.get_or_init(|| {
        let plan = ExperimentPlan {
            strategies: vec![Strategy::CoDistill, Strategy::FedAvg],
            skews: TREND_SKEWS.to_vec(),
            seeds: TREND_SEEDS.to_vec(),
            clients: vec![TREND_CLIENTS],
            images_per_class: vec![TREND_BUDGET],
            rounds: TREND_ROUNDS,
            ..ExperimentPlan::default()
        };
        let start = Instant::now();
        let outcome = run_experiment(&plan, |_, _| {}).map_err(|e| e.to_string())?;
        Ok(Trend {
            table: outcome.table,
            seconds: start.elapsed().as_secs_f64(),
        })
    })
}

/// Mean minority accuracy over seeds (each seed's value averaged over clients).
fn mean_at(table: &ResultsTable, strategy: Strategy, skew: u32) -> Result<f64, String> {
    let rows: Vec<_> = table
        .rows
        .iter()
        .filter(|r| r.key.strategy == strategy && r.key.skew == skew)
        .collect();
    let mut values = Vec::new();
    for r in &rows {
        match r.mean_accuracy {
            Some(v) => values.push(v),
            None => return Err(format!("{} s={skew} seed {} {}", strategy.name(), r.key.seed, r.status)),
        }
    }
    if values.len() != TREND_SEEDS.len() {
        return Err(format!("{} s={skew}: {} of {} seeds", strategy.name(), values.len(), TREND_SEEDS.len()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn trend_reproduction() -> Verdict {
    let grid = match trend_grid() {
        Ok(g) => g,
        Err(e) => return verdict(false, format!("benchmark failed: {e}")),
    };
    let (cd, fa) = match (
        mean_at(&grid.table, Strategy::CoDistill, TREND_SKEW),
        mean_at(&grid.table, Strategy::FedAvg, TREND_SKEW),
    ) {
        (Ok(c), Ok(f)) => (c, f),
        (Err(e), _) | (_, Err(e)) => return verdict(false, format!("missing result: {e}")),
    };
    let gap = cd - fa;
    verdict(
        gap >= TREND_MIN_GAP && grid.seconds < TREND_MAX_SECONDS,
        format!(
            "s={TREND_SKEW}: codistill {:.1}% vs fedavg {:.1}%, gap {:+.1}pp (>= {:.0}pp), grid {:.0}s (< {TREND_MAX_SECONDS}s)",
            cd * 100.0,
            fa * 100.0,
            gap * 100.0,
            TREND_MIN_GAP * 100.0,
            grid.seconds
        ),
    )
}

fn robustness_trend() -> Verdict {
    let grid = match trend_grid() {
        Ok(g) => g,
        Err(e) => return verdict(false, format!("benchmark failed: {e}")),
    };
    let sd_of = |strategy: Strategy, seed: u64| -> Result<f64, String> {
        let per_skew = TREND_SKEWS
            .iter()
            .map(|&s| {
                grid.table
                    .rows
                    .iter()
                    .find(|r| r.key.strategy == strategy && r.key.skew == s && r.key.seed == seed)
                    .ok_or_else(|| format!("{} s={s} missing", strategy.name()))
                    .and_then(|r| r.mean_accuracy.ok_or_else(|| format!("{} s={s} {}", strategy.name(), r.status)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        std_across_skews(&per_skew).map_err(|e| e.to_string())
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in TREND_SEEDS {
        match (sd_of(Strategy::CoDistill, seed), sd_of(Strategy::FedAvg, seed)) {
            (Ok(c), Ok(f)) => {
                pass &= c < f;
                parts.push(format!("seed {seed}: {c:.3} vs {f:.3}"));
            }
            (Err(e), _) | (_, Err(e)) => {
                pass = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    verdict(pass, format!("sd codistill vs fedavg, {}", parts.join(", ")))
}

fn communication_bound() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let plan = ExperimentPlan {
        strategies: vec![Strategy::CoDistill, Strategy::FedAvg],
        images_per_class: vec![40],
        rounds: 1,
        output: dir.path().join("bytes.csv"),
        ..ExperimentPlan::default()
    };
    let params = plan.model.param_count().unwrap() as u64;
    let width = plan.federation.representation.width(&init_model(plan.model, 0).unwrap()) as u64;
    let outcome = match run_experiment(&plan, |_, _| {}) {
        Ok(o) => o,
        Err(e) => return verdict(false, e.to_string()),
    };
    let bytes = |s: Strategy| {
        outcome
            .table
            .rows
            .iter()
            .find(|r| r.key.strategy == s)
            .and_then(|r| r.bytes_per_client_round)
    };
    let (Some(cd), Some(fa)) = (bytes(Strategy::CoDistill), bytes(Strategy::FedAvg)) else {
        return verdict(false, "missing byte counts");
    };
    let expected = (width * 8) as f64;
    verdict(
        params == LENET_PARAMS && cd == expected && cd < (params * 8) as f64 && fa == (params * 8) as f64,
        format!("codistill {cd} B/client-round (= {width}×8), fedavg {fa} B (= {params}×8)"),
    )
}

fn sd_convention() -> Verdict {
    let sd = std_across_skews(&SD_ROW).unwrap();
    let rounded = (sd * 100.0).round() / 100.0;
    verdict(
        rounded == SD_EXPECTED,
        format!("population sd {sd:.5} rounds to {rounded:.2} (expected {SD_EXPECTED:.2})"),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let plan_for = |name: &str| ExperimentPlan {
        strategies: vec![Strategy::CoDistill, Strategy::FedAvg, Strategy::FedProto],
        skews: vec![0, 40],
        seeds: vec![0, 1],
        images_per_class: vec![16],
        rounds: 2,
        side: 12,
        model: tiny_arch(),
        federation: tiny_cfg(1.0),
        output: dir.path().join(name),
        ..ExperimentPlan::default()
    };
    let read = |name: &str| -> Result<Vec<u8>, String> {
        let (_, path) = run_and_emit(&plan_for(name), |_, _| {}).map_err(|e| e.to_string())?;
        std::fs::read(path).map_err(|e| e.to_string())
    };
    match (read("a.csv"), read("b.csv")) {
        (Ok(a), Ok(b)) => verdict(a == b && !a.is_empty(), format!("two runs, {} bytes, identical: {}", a.len(), a == b)),
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("1 gradient soundness", gradient_soundness),
        ("2 partition exactness", partition_exactness),
        ("3 lambda=0 degeneracy", lambda_zero_degeneracy),
        ("4 fedavg consensus", fedavg_consensus),
        ("5 teacher uniformity", teacher_uniformity),
        ("6 trend reproduction", trend_reproduction),
        ("7 robustness trend", robustness_trend),
        ("8 communication bound", communication_bound),
        ("9 sd convention", sd_convention),
        ("10 end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let v = check();
        println!("{} criterion {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
