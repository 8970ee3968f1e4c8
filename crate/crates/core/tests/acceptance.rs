//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line
//! and then asserts the same condition.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sigrank_core::codec::{dequantize, inspect_stream, pack_stream, quantize, unpack_stream, ControlParameter};
use sigrank_core::ida::{oracle_plan, PlanDecision, SystemState};
use sigrank_core::link::{required_bandwidth_mhz, CodeRate, LinkParams, QosTier, UserRequest};
use sigrank_core::rda::{rda_encode, ExperienceRecord, ExperienceTable, FeatureSource};
use sigrank_core::sim::{
    export_csv, run_scenario, run_scenario_full, run_with_profile, Outcome, Policy, Profile, ScenarioConfig,
    SourceSpec,
};
use sigrank_core::svid::{approximation_error, reconstruct, svd_baseline, svid_decompose};
use sigrank_core::Matrix64;

const POPULATION: usize = 1000;
const POPULATION_SEED: u64 = 0xacce_0001;
const RANK_ONE_TOL: f64 = 1e-9;
const HIGHER_RANKS: [usize; 3] = [2, 4, 8];
const HIGHER_RANK_SHARE: f64 = 0.95;
const BANDWIDTH_REL_TOL: f64 = 1e-9;
const CODEC_TRIALS: u64 = 100;
const RATE_SAMPLES: u64 = 100;
const RATE_SLACK: f64 = 0.01;
const ORACLE_TABLES: usize = 50;
const ORACLE_MAX_ENTRIES: usize = 200;
const BUDGET_SEEDS: u64 = 10;
const BUDGET_EPS: f64 = 1e-9;
const ORDERING_SEEDS: u64 = 10;
const ALL_POLICIES: [Policy; 4] = [Policy::Oracle, Policy::Rule, Policy::Prompt, Policy::Llm];

fn report(n: u32, pass: bool, detail: impl std::fmt::Display) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix64 {
    let data = (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix64::new(m, n, data).unwrap()
}

fn tiered() -> ScenarioConfig {
    ScenarioConfig::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/tiered.conf")).unwrap()
}

/// Frobenius errors of SVID and SVD at ranks 1, 2, 4, 8 over the seeded
/// population; `None` where the rank exceeds the matrix.
struct RankErrors {
    n: usize,
    norm: f64,
    svid: [Option<f64>; 4],
    svd: [Option<f64>; 4],
}

fn population() -> &'static (Vec<RankErrors>, Duration) {
    static CELL: OnceLock<(Vec<RankErrors>, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(POPULATION_SEED);
        let rows = (0..POPULATION)
            .map(|_| {
                let n = rng.random_range(4..=64);
                let z = gaussian_matrix(&mut rng, n, n);
                let svid_full = svid_decompose(&z, n).unwrap();
                let svd_full = svd_baseline(&z, n).unwrap();
                let mut out = RankErrors {
                    n,
                    norm: z.frobenius_norm(),
                    svid: [None; 4],
                    svd: [None; 4],
                };
                for (k, r) in [1, 2, 4, 8].into_iter().enumerate() {
                    if r > n {
                        continue;
                    }
                    let a = reconstruct(&svid_full.truncate(r).unwrap()).unwrap();
                    let b = svd_full.truncate(r).unwrap().product();
                    out.svid[k] = Some(approximation_error(&z, &a).unwrap().frobenius);
                    out.svd[k] = Some(approximation_error(&z, &b).unwrap().frobenius);
                }
                out
            })
            .collect();
        (rows, start.elapsed())
    })
}

#[test]
fn criterion_01_rank_one_svid_never_worse_than_svd() {
    let (rows, elapsed) = population();
    let wins = rows
        .iter()
        .filter(|e| e.svid[0].unwrap() <= e.svd[0].unwrap() + RANK_ONE_TOL * e.norm)
        .count();
    let pass = wins == rows.len() && elapsed.as_secs_f64() < 60.0;
    report(
        1,
        pass,
        format!("rank-1 SVID <= SVD in {wins}/{} matrices (4..64 square), {:.1}s", rows.len(), elapsed.as_secs_f64()),
    );
    assert!(pass);
}

#[test]
fn criterion_02_higher_rank_svid_mostly_not_worse() {
    let (rows, _) = population();
    let mut detail = Vec::new();
    let mut pass = true;
    for (k, r) in HIGHER_RANKS.into_iter().enumerate() {
        let slot = k + 1;
        let mut total = 0;
        let mut ok = 0;
        for (i, e) in rows.iter().enumerate() {
            let (Some(a), Some(b)) = (e.svid[slot], e.svd[slot]) else { continue };
            total += 1;
            if a <= b + RANK_ONE_TOL * e.norm {
                ok += 1;
            } else {
                println!("  rank {r} violation: matrix {i} ({0}x{0}) svid {a:.6} > svd {b:.6}", e.n);
            }
        }
        let share = ok as f64 / total as f64;
        pass &= share >= HIGHER_RANK_SHARE;
        detail.push(format!("r={r}: {ok}/{total} ({:.1}%)", 100.0 * share));
    }
    report(2, pass, format!("SVID <= SVD share {} (need >= 95%)", detail.join(", ")));
    assert!(pass);
}

/// Bandwidth recomputed from the closed form with independent arithmetic.
fn bandwidth_reference(bits: f64, rate: f64, delay_s: f64, snr_db: f64) -> f64 {
    let coded_bits_per_second = bits / rate / delay_s;
    let snr_linear = 10f64.powf(snr_db / 10.0);
    coded_bits_per_second / (snr_linear.ln_1p() / std::f64::consts::LN_2) / 1e6
}

#[test]
fn criterion_03_bandwidth_examples() {
    let cases = [
        (0.0, CodeRate::new(1, 2).unwrap(), 0.5e-3, 20.0, "0"),
        (1000.0, CodeRate::new(1, 2).unwrap(), 0.5e-3, 30.0, "0.401315"),
        (2400.0, CodeRate::new(3, 4).unwrap(), 0.1e-3, 5.0, "15.5538"),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (bits, rate, delay, snr, digits) in cases {
        let link = LinkParams {
            snr_db: snr,
            code_rate: rate,
            delay_budget_s: delay,
        };
        let got = required_bandwidth_mhz(bits, &link).unwrap();
        let want = bandwidth_reference(bits, rate.value(), delay, snr);
        let rel = if want == 0.0 { got.abs() } else { ((got - want) / want).abs() };
        let ok = rel <= BANDWIDTH_REL_TOL && format!("{got:.9}").starts_with(digits);
        pass &= ok;
        detail.push(format!("{got:.9} MHz (rel {rel:.1e})"));
    }
    report(3, pass, detail.join(", "));
    assert!(pass);
}

#[test]
fn criterion_04_codec_round_trips() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0004);
    let mut failures = 0;
    for _ in 0..CODEC_TRIALS {
        let (m, n) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let z = gaussian_matrix(&mut rng, m, n);
        let r = rng.random_range(1..=m.min(n));
        let q = rng.random_range(1..=16u8);
        let f = svid_decompose(&z, r).unwrap();
        let s = pack_stream(&f, q).unwrap();
        let contents = inspect_stream::<f64>(&s).unwrap();
        let back = unpack_stream::<f64>(&s).unwrap();
        let originals = [
            f.low_rank.u.as_slice().to_vec(),
            f.low_rank.singular_values.clone(),
            f.low_rank.v.as_slice().to_vec(),
        ];
        let decoded = [
            back.low_rank.u.as_slice().to_vec(),
            back.low_rank.singular_values.clone(),
            back.low_rank.v.as_slice().to_vec(),
        ];
        let mut ok = contents.sign == f.sign && back.sign == f.sign;
        for ((block, orig), dec) in contents.blocks.iter().zip(&originals).zip(&decoded) {
            ok &= block.symbols == quantize(orig, q).unwrap().symbols;
            ok &= dequantize(block) == *dec;
            ok &= orig.iter().zip(dec).all(|(a, b)| (a - b).abs() <= block.step / 2.0 + 1e-12);
        }
        failures += usize::from(!ok);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures == 0 && secs < 30.0;
    report(4, pass, format!("{}/{CODEC_TRIALS} round trips exact, {secs:.2}s", CODEC_TRIALS as usize - failures));
    assert!(pass);
}

#[test]
fn criterion_05_rate_grows_with_rank_and_qbits() {
    let src = FeatureSource::<f64>::gaussian(0xacce_0005, 64, 64, 1.0).unwrap();
    let ranks = [1usize, 2, 4, 8, 16, 32, 64];
    let qbits = [1u8, 2, 4, 8, 12, 16];
    let mut sums = vec![vec![0.0; qbits.len()]; ranks.len()];
    for index in 0..RATE_SAMPLES {
        let full = svid_decompose(&src.draw(index), 64).unwrap();
        for (i, &r) in ranks.iter().enumerate() {
            let f = full.truncate(r).unwrap();
            for (j, &q) in qbits.iter().enumerate() {
                let s = pack_stream(&f, q).unwrap();
                if index == 0 && (r, q) == (8, 4) {
                    assert_eq!(s, rda_encode(0, &src, ControlParameter::new(r, q).unwrap()).unwrap());
                }
                sums[i][j] += s.total_bits() as f64;
            }
        }
    }
    let mean = |i: usize, j: usize| sums[i][j] / RATE_SAMPLES as f64;
    let mut violations = Vec::new();
    for i in 0..ranks.len() {
        for j in 0..qbits.len() {
            if j + 1 < qbits.len() && mean(i, j + 1) < (1.0 - RATE_SLACK) * mean(i, j) {
                violations.push(format!("r={} q {}->{}", ranks[i], qbits[j], qbits[j + 1]));
            }
            if i + 1 < ranks.len() && mean(i + 1, j) < (1.0 - RATE_SLACK) * mean(i, j) {
                violations.push(format!("q={} r {}->{}", qbits[j], ranks[i], ranks[i + 1]));
            }
        }
    }
    let pass = violations.is_empty();
    report(
        5,
        pass,
        format!(
            "mean bits from {:.0} (r=1,q=1) to {:.0} (r=64,q=16), violations {violations:?}",
            mean(0, 0),
            mean(ranks.len() - 1, qbits.len() - 1)
        ),
    );
    assert!(pass);
}

/// Lists every feasible (entry, rate) pair, keeps those at the minimum
/// bandwidth and orders them by (q, r, descending rate).
fn exhaustive_plan(req: &UserRequest, table: &ExperienceTable) -> Option<(ControlParameter, CodeRate, f64)> {
    let mut all: Vec<(ControlParameter, CodeRate, f64)> = Vec::new();
    for rec in table.records() {
        if rec.accuracy < req.tier.min_accuracy() {
            continue;
        }
        for (p, d) in CodeRate::ALLOWED {
            let rate = CodeRate::new(p, d).unwrap();
            all.push((rec.theta, rate, required_bandwidth_mhz(rec.mean_bits, &req.link(rate)).unwrap()));
        }
    }
    let min = all.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let mut best: Vec<_> = all.into_iter().filter(|c| c.2 == min).collect();
    best.sort_by(|a, b| {
        (a.0.qbits(), a.0.rank())
            .cmp(&(b.0.qbits(), b.0.rank()))
            .then(b.1.value().total_cmp(&a.1.value()))
    });
    best.into_iter().next()
}

#[test]
fn criterion_06_oracle_matches_exhaustive_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0006);
    let state = SystemState::new(100.0).unwrap();
    let (mut checks, mut mismatches) = (0, 0);
    for _ in 0..ORACLE_TABLES {
        let len = rng.random_range(1..=ORACLE_MAX_ENTRIES);
        let mut thetas = BTreeMap::new();
        while thetas.len() < len {
            let theta = ControlParameter::new(rng.random_range(1..=64), rng.random_range(1..=16)).unwrap();
            // coarse bit values make equal-bandwidth ties common
            thetas.insert(theta, (rng.random_range(1..=20) as f64 * 500.0, rng.random_range(0.5..1.0)));
        }
        let records = thetas
            .into_iter()
            .map(|(theta, (bits, accuracy))| ExperienceRecord {
                theta,
                mean_bits: bits,
                mean_nmse: 0.0,
                accuracy,
                sample_count: 1,
            })
            .collect();
        let table = ExperienceTable::new(records).unwrap();
        for id in 0..20 {
            let req = UserRequest {
                user_id: id,
                snr_db: rng.random_range(5.0..=30.0),
                delay_budget_s: rng.random_range(0.05..=0.5) * 1e-3,
                tier: QosTier::ALL[rng.random_range(0..3)],
            };
            let got = match oracle_plan(&req, &table, &state).unwrap() {
                PlanDecision::Propose(p) => Some((p.theta, p.code_rate, p.predicted_mhz)),
                PlanDecision::Infeasible => None,
            };
            checks += 1;
            mismatches += usize::from(got != exhaustive_plan(&req, &table));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 10.0;
    report(6, pass, format!("{}/{checks} oracle decisions identical, {secs:.2}s", checks - mismatches));
    assert!(pass);
}

#[test]
fn criterion_07_budget_never_exceeded() {
    let base = ScenarioConfig::default();
    let mut events = 0usize;
    let mut worst = 0.0f64;
    let mut pass = true;
    for seed in 1..=BUDGET_SEEDS {
        let cfg = ScenarioConfig { seed, ..base.clone() };
        let profile = Profile::build(&cfg).unwrap();
        for policy in ALL_POLICIES {
            let run = run_with_profile(&cfg, policy, &profile).unwrap();
            // rebuild the ledger from admissions and reclaimed slack
            let mut ledger = 0.0;
            for ev in &run.report.events {
                ledger += ev.allocated_mhz;
                ledger -= run
                    .adjustments
                    .iter()
                    .filter(|(k, _)| *k == ev.event_index)
                    .map(|(_, a)| a.freed_mhz())
                    .sum::<f64>();
                let reported = ev.cum_fraction * cfg.total_bandwidth_mhz;
                pass &= ledger <= cfg.total_bandwidth_mhz + BUDGET_EPS;
                pass &= reported <= cfg.total_bandwidth_mhz + BUDGET_EPS;
                pass &= (ledger - reported).abs() <= 1e-6;
                worst = worst.max(ledger);
                events += 1;
            }
        }
    }
    report(
        7,
        pass,
        format!("{events} events over 4 policies x {BUDGET_SEEDS} seeds, peak {worst:.6} of 100 MHz"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_saturation_triggers_reallocation() {
    let mut cfg = tiered();
    cfg.total_bandwidth_mhz = 20.0;
    cfg.queue_length = 120;
    cfg.llm.stub_overshoot = 1;
    let run = run_scenario_full(&cfg, Policy::Llm).unwrap();
    let first = run
        .report
        .events
        .iter()
        .find(|e| e.outcome == Outcome::Admitted && e.realloc_rounds >= 1);
    let tiers: BTreeMap<u64, QosTier> = cfg.queue().unwrap().into_iter().map(|r| (r.user_id, r.tier)).collect();
    let mut retuned = 0;
    let mut qos_ok = true;
    for (_, adj) in &run.adjustments {
        retuned += 1;
        let tier = tiers[&adj.user_id];
        let acc = run.experience.get(adj.new_theta).map_or(0.0, |r| r.accuracy);
        qos_ok &= acc >= tier.min_accuracy();
        qos_ok &= adj.new_mhz < adj.old_mhz;
    }
    for u in run.state.users() {
        qos_ok &= run.experience.get(u.theta).map_or(0.0, |r| r.accuracy) >= u.tier.min_accuracy();
    }
    let pass = first.is_some() && qos_ok;
    let at = first.map_or("none".to_string(), |e| format!("attempt {}", e.event_index + 1));
    report(
        8,
        pass,
        format!("reallocation admitted at {at}, {retuned} retunes, all connected users QoS-feasible: {qos_ok}"),
    );
    assert!(pass);
}

#[test]
fn criterion_09_verified_oracle_admits_at_least_unverified_prompt() {
    let base = tiered();
    let mut faulty = base.clone();
    faulty.llm.stub_bits_factor = 1.25;
    faulty.llm.stub_overshoot = 1;
    let mut holds = 0;
    let mut counts = Vec::new();
    for seed in 1..=ORDERING_SEEDS {
        let cfg = ScenarioConfig { seed, ..base.clone() };
        let profile = Profile::build(&cfg).unwrap();
        let oracle = run_with_profile(&cfg, Policy::Oracle, &profile).unwrap().report.admitted_count;
        let prompt = run_with_profile(&ScenarioConfig { seed, ..faulty.clone() }, Policy::Prompt, &profile)
            .unwrap()
            .report
            .admitted_count;
        holds += usize::from(oracle >= prompt);
        counts.push(format!("{oracle}/{prompt}"));
    }
    let pass = holds == ORDERING_SEEDS as usize;
    report(
        9,
        pass,
        format!("two-stage >= no-verify in {holds}/{ORDERING_SEEDS} seeds (oracle/prompt: {})", counts.join(" ")),
    );
    assert!(pass);
}

#[test]
fn criterion_10_allocation_decreases_with_delay_budget() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feature.txt");
    FeatureSource::<f64>::gaussian(0xacce_0010, 16, 16, 1.0)
        .unwrap()
        .draw(0)
        .write_file(&path)
        .unwrap();
    let cfg = ScenarioConfig {
        source: SourceSpec::File(path),
        rank_grid: vec![1, 2, 4, 8, 16],
        qbits_grid: vec![2, 4, 8],
        snr_range_db: (18.0, 18.0),
        tier_weights: [0.0, 1.0, 0.0],
        queue_length: 60,
        total_bandwidth_mhz: 1e5,
        ..tiered()
    };
    let delays: BTreeMap<u64, f64> = cfg.queue().unwrap().into_iter().map(|r| (r.user_id, r.delay_budget_s)).collect();
    let report_ = run_scenario(&cfg, Policy::Oracle).unwrap();
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for ev in report_.events.iter().filter(|e| e.outcome == Outcome::Admitted) {
        let key = format!("{:?}/{:?}/{:?}", ev.r, ev.q, ev.code_rate);
        groups.entry(key).or_default().push((delays[&ev.user_id], ev.allocated_mhz));
    }
    let mut pairs = 0;
    let mut pass = report_.admitted_count == cfg.queue_length;
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in g.windows(2) {
            if w[1].0 > w[0].0 {
                pairs += 1;
                pass &= w[1].1 < w[0].1;
            }
        }
    }
    pass &= pairs > 0;
    report(
        10,
        pass,
        format!(
            "{} admitted in {} (theta, rate) groups, {pairs} delay-ordered pairs strictly decreasing",
            report_.admitted_count,
            groups.len()
        ),
    );
    assert!(pass);
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_11_runs_are_byte_identical() {
    let cfg = tiered();
    let root = tempfile::tempdir().unwrap();
    let mut identical = 0;
    for policy in ALL_POLICIES {
        let a = root.path().join(format!("{policy}_a"));
        let b = root.path().join(format!("{policy}_b"));
        export_csv(&run_scenario(&cfg, policy).unwrap(), &a).unwrap();
        export_csv(&run_scenario(&cfg, policy).unwrap(), &b).unwrap();
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        identical += usize::from(!sa.is_empty() && sa == sb);
    }
    let pass = identical == ALL_POLICIES.len();
    report(11, pass, format!("{identical}/{} policies export byte-identical CSVs", ALL_POLICIES.len()));
    assert!(pass);
}
