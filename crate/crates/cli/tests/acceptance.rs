//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::HashMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use fairicl_core::backend::{Backend, BackendError, Capability, MockModel, MockParams};
use fairicl_core::evaluation::evaluate_demonstrations;
use fairicl_core::fcg::{
    build_pool, compute_evol_score, pick_top, roulette_select, run_fcg, run_fcg_with_pool, CellFill, EvolScoreTable,
    FcgConfig,
};
use fairicl_core::metrics::{equalized_odds, evaluate, PredictionBatch, EPSILON};
use fairicl_core::pipeline::{cmd_strategy_sweep, Experiment, PipelineError};
use fairicl_core::prompt::{parse_answer, render, ParsedAnswer, PromptTemplate, RenderedPrompt};
use fairicl_core::strategies::{perturb, select_random, Axis, PerturbationSpec, StrategySpec};
use fairicl_core::synth::{adult_csv, credit_csv};
use fairicl_core::tabular::{
    compute_ratios, extract_balanced, read_dataset, split_dataset, DatasetSchema, SampleRecord, SplitRatio, Subgroup,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Data {
    adult: Vec<SampleRecord>,
    adult_train: Vec<SampleRecord>,
    adult_dev: Vec<SampleRecord>,
    credit_train: Vec<SampleRecord>,
}

fn load(text: &str, schema: &DatasetSchema) -> Vec<SampleRecord> {
    read_dataset(text.as_bytes(), schema).unwrap().0
}

impl Data {
    fn build() -> Data {
        let adult = load(&adult_csv(12000, 1), &DatasetSchema::adult());
        let split = split_dataset(&adult, 42, SplitRatio::default()).unwrap();
        let adult_dev = extract_balanced(&split.dev, 60, 42).unwrap();
        let credit = load(&credit_csv(12000, 1), &DatasetSchema::credit());
        let credit_train = split_dataset(&credit, 42, SplitRatio::default()).unwrap().train;
        Data {
            adult,
            adult_train: split.train,
            adult_dev,
            credit_train,
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Batch whose per-group rates are exactly `k / 128`.
fn batch_from_rates(tpr_m: f64, tpr_f: f64, fpr_m: f64, fpr_f: f64) -> PredictionBatch {
    let (mut ids, mut pred, mut truth, mut z) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut id = 0;
    for (group, y, rate) in [(1u8, 1u8, tpr_m), (0, 1, tpr_f), (1, 0, fpr_m), (0, 0, fpr_f)] {
        let positives = (rate * 128.0).round() as usize;
        assert!(close(positives as f64 / 128.0, rate, 5e-5), "{rate} is not k/128");
        for i in 0..128 {
            ids.push(id);
            id += 1;
            pred.push(Some(u8::from(i < positives)));
            truth.push(y);
            z.push(group);
        }
    }
    PredictionBatch::new(ids, pred, truth, z).unwrap()
}

fn c1_table_metrics(_: &Data) -> Result<String, String> {
    let tpr_m = [
        0.7422, 0.7344, 0.5859, 0.6563, 0.6094, 0.4688, 0.7422, 0.7422, 0.7969, 0.6563, 0.6641, 0.6406,
    ];
    let tpr_f = [
        0.6172, 0.5547, 0.3594, 0.3984, 0.3281, 0.2422, 0.6172, 0.5703, 0.6094, 0.3984, 0.4141, 0.4297,
    ];
    let fpr_m = [
        0.2656, 0.2500, 0.1406, 0.1719, 0.1484, 0.0938, 0.2656, 0.2734, 0.3125, 0.1719, 0.1719, 0.1797,
    ];
    let fpr_f = [
        0.1016, 0.0859, 0.0078, 0.0234, 0.0234, 0.0, 0.1016, 0.0703, 0.0469, 0.0234, 0.0391, 0.0547,
    ];
    let r_eo = [
        0.3824, 0.3438, 0.0556, 0.1364, 0.1579, 0.0, 0.3824, 0.2571, 0.1500, 0.1364, 0.2273, 0.3043,
    ];
    let d_eo = [
        0.1641, 0.1797, 0.226, 0.2578, 0.2813, 0.2266, 0.1641, 0.2031, 0.2656, 0.2578, 0.2500, 0.2109,
    ];
    let mut worst = 0.0f64;
    for i in 0..12 {
        let eo =
            equalized_odds(&batch_from_rates(tpr_m[i], tpr_f[i], fpr_m[i], fpr_f[i])).map_err(|e| e.to_string())?;
        let err = (eo.r_eo - r_eo[i]).abs().max((eo.delta_eo - d_eo[i]).abs());
        if err > 1e-3 {
            return Err(format!(
                "column {}: got R_eo {:.4}, Δ_eo {:.4}; expected {}, {}",
                i + 1,
                eo.r_eo,
                eo.delta_eo,
                r_eo[i],
                d_eo[i]
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("12 columns, max deviation {worst:.2e}"))
}

/// Straight row-by-row counting; `None` when a required group or cell is empty.
fn oracle(pred: &[Option<u8>], truth: &[u8], z: &[u8]) -> Option<[f64; 8]> {
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0f64, 0.0, 0.0, 0.0);
    let mut n_z = [0.0f64; 2];
    let mut pos_z = [0.0f64; 2];
    let mut cell = [[0.0f64; 2]; 2];
    let mut cell_pos = [[0.0f64; 2]; 2];
    for i in 0..pred.len() {
        let Some(p) = pred[i] else { continue };
        let (y, g) = (truth[i] as usize, z[i] as usize);
        match (y, p) {
            (1, 1) => tp += 1.0,
            (0, 1) => fp += 1.0,
            (0, 0) => tn += 1.0,
            _ => fn_ += 1.0,
        }
        n_z[g] += 1.0;
        cell[g][y] += 1.0;
        if p == 1 {
            pos_z[g] += 1.0;
            cell_pos[g][y] += 1.0;
        }
    }
    if cell.iter().flatten().any(|&c| c == 0.0) {
        return None;
    }
    let n: f64 = tp + fp + tn + fn_;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if tp > 0.0 {
        2.0 * tp / (2.0 * tp + fp + fn_)
    } else {
        0.0
    };
    let dp = [pos_z[0] / n_z[0], pos_z[1] / n_z[1]];
    let tpr = [cell_pos[0][1] / cell[0][1], cell_pos[1][1] / cell[1][1]];
    let fpr = [cell_pos[0][0] / cell[0][0], cell_pos[1][0] / cell[1][0]];
    Some([
        (tp + tn) / n,
        precision,
        recall,
        f,
        dp[0].min(dp[1]) / (dp[0].max(dp[1]) + EPSILON),
        (tpr[0] / (tpr[1] + EPSILON)).min(fpr[0] / (fpr[1] + EPSILON)),
        (dp[0] - dp[1]).abs(),
        (tpr[0] - tpr[1]).abs().max((fpr[0] - fpr[1]).abs()),
    ])
}

fn c2_metric_oracle(_: &Data) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut defined = 0;
    for b in 0..1000 {
        let n = rng.gen_range(1..=64);
        let abstain = rng.gen_range(0.0..0.2);
        let pred: Vec<Option<u8>> = (0..n)
            .map(|_| (!rng.gen_bool(abstain)).then(|| rng.gen_range(0..2)))
            .collect();
        let truth: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let z: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let batch = PredictionBatch::new((0..n as u64).collect(), pred.clone(), truth.clone(), z.clone())
            .map_err(|e| e.to_string())?;
        match (evaluate(&batch), oracle(&pred, &truth, &z)) {
            (Ok(r), Some(o)) => {
                defined += 1;
                let got = [
                    r.accuracy,
                    r.precision,
                    r.recall,
                    r.f_score,
                    r.r_dp,
                    r.r_eo,
                    r.delta_dp,
                    r.delta_eo,
                ];
                for (k, (g, w)) in got.iter().zip(o).enumerate() {
                    if !close(*g, w, 1e-12) {
                        return Err(format!("batch {b} metric {k}: {g} vs oracle {w}"));
                    }
                }
            }
            (Err(_), None) => {}
            (r, o) => {
                return Err(format!(
                    "batch {b}: definedness differs ({:?} vs {:?})",
                    r.is_ok(),
                    o.is_some()
                ))
            }
        }
    }
    Ok(format!("1000 batches, {defined} fully defined, all within 1e-12"))
}

fn c3_ratios(data: &Data) -> Result<String, String> {
    let train = &data.adult_train;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..500 {
        let k = rng.gen_range(1..=16);
        let a = rng.gen_range(0..=k);
        let b = rng.gen_range(0..=k);
        let spec = StrategySpec {
            r_z: a as f64 / k as f64,
            r_y: b as f64 / k as f64,
            k,
            seed: rng.gen(),
        };
        let set = select_random(&spec, train).map_err(|e| format!("spec {i} {spec:?}: {e}"))?;
        let r = compute_ratios(set.records()).map_err(|e| e.to_string())?;
        if set.len() != k || r.r_z != spec.r_z || r.r_y != spec.r_y {
            return Err(format!("spec {i} {spec:?}: got {r:?} with {} records", set.len()));
        }
    }
    for i in 0..500 {
        let k = rng.gen_range(1..=16);
        let spec = StrategySpec {
            r_z: rng.gen_range(0..=k) as f64 / k as f64,
            r_y: rng.gen_range(0..=k) as f64 / k as f64,
            k,
            seed: rng.gen(),
        };
        let base = select_random(&spec, train).map_err(|e| e.to_string())?;
        let axis = if rng.gen_bool(0.5) {
            Axis::Label
        } else {
            Axis::Sensitive
        };
        let (source, other) = match axis {
            Axis::Label => (base.r_y(), base.r_z()),
            Axis::Sensitive => (base.r_z(), base.r_y()),
        };
        let target_count = rng.gen_range(0..=k);
        let target = target_count as f64 / k as f64;
        let p = PerturbationSpec {
            axis,
            source,
            target,
            seed: rng.gen(),
        };
        let out = perturb(&base, &p).map_err(|e| format!("perturbation {i} {p:?}: {e}"))?;
        let (got, got_other) = match axis {
            Axis::Label => (out.r_y(), out.r_z()),
            Axis::Sensitive => (out.r_z(), out.r_y()),
        };
        let flips = base
            .records()
            .iter()
            .zip(out.records())
            .filter(|(a, b)| match axis {
                Axis::Label => a.y != b.y,
                Axis::Sensitive => a.z != b.z,
            })
            .count();
        let expected = (source * k as f64).round() as i64 - target_count as i64;
        if got != target || got_other != other || flips as i64 != expected.abs() || base.ids() != out.ids() {
            return Err(format!(
                "perturbation {i} {p:?}: r' {got}, {flips} flips, expected {}",
                expected.abs()
            ));
        }
    }
    Ok("500 specs and 500 perturbations exact".into())
}

fn c4_fcg_bookkeeping(data: &Data) -> Result<String, String> {
    let schema = DatasetSchema::adult();
    let template = PromptTemplate::builtin("adult", &schema).map_err(|e| e.to_string())?;
    let mock = MockModel::fit(&data.adult_train, &template, MockParams::default()).map_err(|e| e.to_string())?;
    let config = FcgConfig::default();
    let run = || run_fcg(&data.adult_train, &data.adult_dev, &mock, &template, &config, 4).map_err(|e| e.to_string());
    let first = run()?;
    let mut checked = 0;
    let mut untouched = 0;
    for table in &first.tables {
        for entry in table.entries() {
            let logged: Vec<f64> = first
                .log
                .iter()
                .filter(|r| r.subgroup == table.subgroup && r.selected.contains(&entry.id))
                .filter_map(|r| r.score)
                .collect();
            if logged.is_empty() {
                if entry.score != config.p {
                    return Err(format!(
                        "candidate {} never selected but scores {}",
                        entry.id, entry.score
                    ));
                }
                untouched += 1;
            } else {
                let mean = logged.iter().sum::<f64>() / logged.len() as f64;
                if !close(entry.score, mean, 1e-12) || entry.history != logged {
                    return Err(format!(
                        "candidate {}: score {} vs logged mean {mean}",
                        entry.id, entry.score
                    ));
                }
            }
            checked += 1;
        }
    }
    if first.log.len() != 4 * config.iters {
        return Err(format!("{} iteration records", first.log.len()));
    }
    let second = run()?;
    let a = serde_json::to_string(&first.tables).unwrap() + &serde_json::to_string(&first.log).unwrap();
    let b = serde_json::to_string(&second.tables).unwrap() + &serde_json::to_string(&second.log).unwrap();
    if first != second || a != b {
        return Err("rerun differs".into());
    }
    Ok(format!(
        "{checked} candidates checked ({untouched} never selected), rerun identical"
    ))
}

/// Answers correctly whenever the golden record is among the demonstrations,
/// otherwise replays a fixed imperfect zero-shot answer per query.
struct GoldenBackend {
    golden: u64,
    truth: HashMap<u64, u8>,
    options: [String; 2],
}

impl Backend for GoldenBackend {
    fn describe(&self) -> Capability {
        Capability {
            model: "golden".into(),
            max_prompt_chars: usize::MAX,
        }
    }

    fn complete(&self, prompt: &RenderedPrompt) -> Result<String, BackendError> {
        let q = prompt.payload.query.id;
        let label = if prompt.payload.demonstrations.iter().any(|d| d.id == self.golden) {
            self.truth[&q]
        } else {
            u8::from(q.wrapping_mul(2654435761) % 7 < 3)
        };
        Ok(self.options[label as usize].clone())
    }
}

fn c5_golden(data: &Data) -> Result<String, String> {
    let schema = DatasetSchema::adult();
    let template = PromptTemplate::builtin("adult", &schema).map_err(|e| e.to_string())?;
    let mut train = Vec::new();
    for g in Subgroup::ALL {
        train.extend(data.adult_train.iter().filter(|r| r.subgroup() == g).take(20).cloned());
    }
    let dev = &data.adult_dev;
    let truth: HashMap<u64, u8> = dev.iter().map(|r| (r.id, r.y)).collect();
    let options = [template.option(0).to_string(), template.option(1).to_string()];
    let backend = |golden| GoldenBackend {
        golden,
        truth: truth.clone(),
        options: options.clone(),
    };

    let mut hits = 0;
    for run in 0..100u64 {
        let config = FcgConfig {
            seed: run,
            ..FcgConfig::default()
        };
        let pool = build_pool(&train, &config).map_err(|e| e.to_string())?;
        let g = if run % 2 == 0 { Subgroup::G3 } else { Subgroup::G4 };
        let cell = pool.get(g).unwrap();
        let golden = cell.ids[(run as usize / 2) % cell.len()];
        let outcome =
            run_fcg_with_pool(pool, &train, dev, &backend(golden), &template, &config, 4).map_err(|e| e.to_string())?;
        let table = outcome.tables.iter().find(|t| t.subgroup == g).unwrap();
        if table.ranked_ids().iter().take(4).any(|&id| id == golden) {
            hits += 1;
        }
    }

    // effectiveness at the default seed
    let config = FcgConfig::default();
    let pool = build_pool(&train, &config).map_err(|e| e.to_string())?;
    let golden = pool.get(Subgroup::G3).unwrap().ids[0];
    let b = backend(golden);
    let outcome = run_fcg_with_pool(pool, &train, dev, &b, &template, &config, 4).map_err(|e| e.to_string())?;
    let score = |set: &[SampleRecord]| -> Result<f64, String> {
        let eval = evaluate_demonstrations(&b, &template, set, dev, 4).map_err(|e| e.to_string())?;
        let report = evaluate(&eval.batch).map_err(|e| e.to_string())?;
        compute_evol_score(&outcome.baseline, &report, &config).map_err(|e| e.to_string())
    };
    let top = pick_top(
        &outcome.tables,
        &train,
        &StrategySpec::s2(8, 42),
        [CellFill::Top; 4],
        "top",
    )
    .map_err(|e| e.to_string())?;
    let top_score = score(top.records())?;
    let mut random_total = 0.0;
    for seed in 0..200 {
        let set = select_random(&StrategySpec::s2(8, 1000 + seed), &train).map_err(|e| e.to_string())?;
        random_total += score(set.records())?;
    }
    let random_mean = random_total / 200.0;

    let summary =
        format!("golden in top 4 in {hits}/100 runs; pick_top {top_score:.4} vs random mean {random_mean:.4}");
    if hits >= 95 && top_score > random_mean {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn c6_pool(data: &Data) -> Result<String, String> {
    let config = FcgConfig::default();
    let pool = build_pool(&data.adult_train, &config).map_err(|e| e.to_string())?;
    for cell in &pool.cells {
        for (j, &size) in cell.cluster_sizes.iter().enumerate() {
            if size > 0 && !cell.clusters.contains(&j) {
                return Err(format!("{:?}: cluster {j} has no representative", cell.subgroup));
            }
        }
    }
    if pool.total() > 160 {
        return Err(format!("{} candidates", pool.total()));
    }
    let again = build_pool(&data.adult_train, &config).map_err(|e| e.to_string())?;
    if again != pool {
        return Err("second clustering differs".into());
    }
    let sizes: Vec<usize> = pool.cells.iter().map(|c| c.len()).collect();
    Ok(format!(
        "{} candidates {sizes:?}, every cluster represented, deterministic",
        pool.total()
    ))
}

fn c7_roulette(_: &Data) -> Result<String, String> {
    let ids: Vec<u64> = (0..40).collect();
    let mut table = EvolScoreTable::new(Subgroup::G1, &ids, 0.05);
    table.record(&[0], 0.9);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hits = 0;
    for _ in 0..100_000 {
        if roulette_select(&table, 1, &mut rng).map_err(|e| e.to_string())?[0] == 0 {
            hits += 1;
        }
    }
    let freq = hits as f64 / 100_000.0;
    let expected = 0.9 / (0.9 + 39.0 * 0.05);
    let summary = format!("frequency {freq:.4}, expected {expected:.4}");
    if close(freq, 0.3158, 0.01) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn adult_with_options(positive: &str, negative: &str) -> DatasetSchema {
    let mut schema = DatasetSchema::adult();
    schema.label.positive_text = positive.into();
    schema.label.negative_text = negative.into();
    schema
}

fn c8_round_trip(data: &Data) -> Result<String, String> {
    let mut total = 0;
    for (name, schema, records) in [
        ("adult", DatasetSchema::adult(), &data.adult_train),
        ("adult", adult_with_options(">50K", "<=50K"), &data.adult_train),
        (
            "adult",
            adult_with_options("more than 50K", "not more than 50K"),
            &data.adult_train,
        ),
        ("credit", DatasetSchema::credit(), &data.credit_train),
    ] {
        let template = PromptTemplate::builtin(name, &schema).map_err(|e| e.to_string())?;
        let query = &records[0];
        for r in records.iter() {
            let prompt = render(&template, std::slice::from_ref(r), query).map_err(|e| e.to_string())?;
            let line = prompt
                .part(&prompt.demonstrations)
                .trim_end()
                .lines()
                .last()
                .unwrap_or("");
            match parse_answer(line, &template) {
                ParsedAnswer::Label(y) if y == r.y => {}
                other => return Err(format!("{name} record {}: {line:?} parsed as {other:?}", r.id)),
            }
        }
        total += records.len();
    }
    Ok(format!("{total} answer lines recovered over four option sets"))
}

fn sweep_bytes(bin: &str, dir: &Path, out: &str) -> Result<Vec<u8>, String> {
    let status = Command::new(bin)
        .args(["sweep", "--config", "exp.toml", "--backend", "mock", "--out", out])
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    fs::read(dir.join(out).join("sweep/summary.jsonl")).map_err(|e| e.to_string())
}

fn c9_end_to_end(_: &Data) -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    fs::write(dir.path().join("adult.csv"), adult_csv(12000, 1)).map_err(|e| e.to_string())?;
    fs::write(
        dir.path().join("exp.toml"),
        "[data]\npath = \"adult.csv\"\nschema = \"adult\"\n",
    )
    .map_err(|e| e.to_string())?;
    let bin = env!("CARGO_BIN_EXE_fairicl");
    let a = sweep_bytes(bin, dir.path(), "first")?;
    let b = sweep_bytes(bin, dir.path(), "second")?;
    if a != b {
        return Err("summary.jsonl differs between runs".into());
    }
    let lines = a.iter().filter(|&&c| c == b'\n').count();

    let mut exp = Experiment::from_path(&dir.path().join("exp.toml")).map_err(|e| e.to_string())?;
    exp.out_dir = dir.path().join("leaky");
    let leaked = exp.test[0].clone();
    exp.split.train.push(leaked.clone());
    match cmd_strategy_sweep(&exp, false) {
        Err(PipelineError::Contamination(ids)) if ids == vec![leaked.id] => {}
        other => return Err(format!("overlap not rejected: {:?}", other.map(|_| ()))),
    }
    if exp.out_dir.exists() {
        return Err("contaminated run wrote output".into());
    }
    Ok(format!(
        "{lines} summary lines identical across runs; overlap of id {} rejected",
        leaked.id
    ))
}

type Check = fn(&Data) -> Result<String, String>;

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 9] = [
        ("1 table metrics", Duration::from_secs(1), c1_table_metrics),
        ("2 metric oracle", Duration::from_secs(5), c2_metric_oracle),
        ("3 ratio postconditions", Duration::from_secs(5), c3_ratios),
        ("4 fcg bookkeeping", Duration::from_secs(120), c4_fcg_bookkeeping),
        ("5 fcg golden candidate", Duration::from_secs(600), c5_golden),
        ("6 candidate pool bound", Duration::from_secs(30), c6_pool),
        ("7 roulette calibration", Duration::from_secs(5), c7_roulette),
        ("8 prompt round trip", Duration::from_secs(10), c8_round_trip),
        ("9 end-to-end determinism", Duration::from_secs(120), c9_end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let start = Instant::now();
    let data = Data::build();
    println!(
        "data: {} adult rows, prepared in {:.2?}",
        data.adult.len(),
        start.elapsed()
    );

    let mut failed = 0;
    for (name, limit, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| check(&data))).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > limit => Err(format!("{msg}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("PASS criterion {name}: {msg} ({elapsed:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL criterion {name}: {msg} ({elapsed:.2?})");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
