use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{read_jsonl, render_tables, write_jsonl, Experiment, Failure, PipelineError, RunResult, SummaryLine};
use crate::backend::{Backend, CachedBackend};
use crate::evaluation::render_all;
use crate::fcg::{build_pool, pick_top, run_fcg, CellFill, FcgTables};
use crate::strategies::{
    build_dataf_datam, perturb, select_random, Axis, DemonstrationSet, PerturbationSpec, StrategySpec,
};
use crate::tabular::{partition_subgroups, SampleRecord};

struct Planned {
    condition: String,
    seed: Option<u64>,
    demos: Result<Option<DemonstrationSet>, String>,
}

impl Planned {
    fn zero_shot() -> Self {
        Planned {
            condition: "zero-shot".into(),
            seed: None,
            demos: Ok(None),
        }
    }

    fn with<E: ToString>(condition: String, seed: Option<u64>, demos: Result<DemonstrationSet, E>) -> Self {
        Planned {
            condition,
            seed,
            demos: demos.map(Some).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Serialize)]
struct PromptLine<'a> {
    condition: &'a str,
    seed: Option<u64>,
    id: u64,
    hash: &'a str,
    text: &'a str,
}

fn write_prompts(
    exp: &Experiment,
    dir: &Path,
    plans: &[Planned],
    queries: &[SampleRecord],
) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut rendered = Vec::new();
    for p in plans {
        let Ok(demos) = &p.demos else { continue };
        if let Some(d) = demos {
            exp.guard_demonstrations(d)?;
        }
        let records = demos.as_ref().map(DemonstrationSet::records).unwrap_or(&[]);
        let prompts = render_all(&exp.template, records, queries)?;
        rendered.push((p, prompts));
    }
    let lines: Vec<PromptLine> = rendered
        .iter()
        .flat_map(|(p, prompts)| {
            prompts.iter().map(|r| PromptLine {
                condition: &p.condition,
                seed: p.seed,
                id: r.payload.query.id,
                hash: &r.hash,
                text: &r.text,
            })
        })
        .collect();
    write_jsonl(&dir.join("prompts.jsonl"), &lines)
}

fn write_manifest(exp: &Experiment, dir: &Path, result: &RunResult) -> Result<(), PipelineError> {
    let manifest = serde_json::json!({
        "command": result.command,
        "config_hash": exp.config_hash,
        "config": exp.config,
        "cache": result.cache_totals(),
        "test_size": exp.test.len(),
        "dev_size": exp.dev.len(),
    });
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::io(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))
}

/// Run every planned condition. Failed conditions are recorded and skipped,
/// except contamination, which always aborts; with `strict` any failure aborts.
fn execute<B: Backend>(
    exp: &Experiment,
    backend: &CachedBackend<B>,
    command: &str,
    plans: Vec<Planned>,
    strict: bool,
) -> Result<RunResult, PipelineError> {
    let mut result = RunResult::new(command, &exp.config_hash);
    for plan in plans {
        let outcome = match plan.demos {
            Err(e) => Err(PipelineError::Config(e)),
            Ok(demos) => exp.run_condition(backend, &plan.condition, plan.seed, demos.as_ref()),
        };
        match outcome {
            Ok(run) => result.runs.push(run),
            Err(e @ PipelineError::Contamination(_)) => return Err(e),
            Err(e) if strict => return Err(e),
            Err(e) => {
                log::error!("{} failed: {e}", plan.condition);
                result.failures.push(Failure {
                    condition: plan.condition,
                    seed: plan.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(result)
}

fn finish<B: Backend>(
    exp: &Experiment,
    backend: &CachedBackend<B>,
    command: &str,
    plans: Vec<Planned>,
    strict: bool,
    aggregate: bool,
) -> Result<RunResult, PipelineError> {
    let mut result = execute(exp, backend, command, plans, strict)?;
    if aggregate {
        result.aggregate();
    }
    let dir = exp.command_dir(command);
    result.write(&dir)?;
    write_manifest(exp, &dir, &result)?;
    Ok(result)
}

#[derive(Serialize)]
struct SplitDoc {
    seed: u64,
    sizes: [usize; 3],
    /// Records per (z, y) cell, g1..g4, for train / dev / test.
    cells: [[usize; 4]; 3],
    dev_ids: Vec<u64>,
    test_ids: Vec<u64>,
}

/// Write `split.json` and a text summary of the split and the balanced
/// dev/test extractions.
pub fn cmd_split(exp: &Experiment) -> Result<String, PipelineError> {
    let s = &exp.split;
    let doc = SplitDoc {
        seed: s.seed,
        sizes: [s.train.len(), s.dev.len(), s.test.len()],
        cells: [
            partition_subgroups(&s.train).counts(),
            partition_subgroups(&exp.dev).counts(),
            partition_subgroups(&exp.test).counts(),
        ],
        dev_ids: exp.dev.iter().map(|r| r.id).collect(),
        test_ids: exp.test.iter().map(|r| r.id).collect(),
    };
    let dir = exp.command_dir("split");
    fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
    let path = dir.join("split.json");
    let text = serde_json::to_string_pretty(&doc).map_err(|e| PipelineError::io(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))?;

    let mut table = format!(
        "split seed {}: train {} / dev {} / test {}\n",
        s.seed, doc.sizes[0], doc.sizes[1], doc.sizes[2]
    );
    table.push_str("cells g1..g4  train: ");
    table.push_str(&format!("{:?}", doc.cells[0]));
    table.push_str(&format!(
        "  dev sample: {:?}  test sample: {:?}\n",
        doc.cells[1], doc.cells[2]
    ));
    let path = dir.join("tables.txt");
    fs::write(&path, &table).map_err(|e| PipelineError::io(&path, e))?;
    Ok(table)
}

/// Zero-shot predictions on the test sample. `None` on a dry run.
pub fn cmd_baseline(exp: &Experiment, dry_run: bool) -> Result<Option<RunResult>, PipelineError> {
    exp.check_disjoint()?;
    let plans = vec![Planned::zero_shot()];
    if dry_run {
        write_prompts(exp, &exp.command_dir("baseline"), &plans, &exp.test)?;
        return Ok(None);
    }
    let backend = exp.backend()?;
    finish(exp, &backend, "baseline", plans, true, false).map(Some)
}

fn sweep_plans(exp: &Experiment) -> Vec<Planned> {
    let cfg = &exp.config.strategies;
    let mut plans = Vec::new();
    for named in &cfg.specs {
        for &seed in &cfg.seeds {
            let spec = cfg.spec(named, seed);
            plans.push(Planned::with(
                named.name.clone(),
                Some(seed),
                select_random(&spec, &exp.split.train),
            ));
        }
    }
    plans
}

/// Every configured strategy under every seed, plus per-strategy aggregates.
pub fn cmd_strategy_sweep(exp: &Experiment, dry_run: bool) -> Result<Option<RunResult>, PipelineError> {
    exp.check_disjoint()?;
    let plans = sweep_plans(exp);
    if dry_run {
        write_prompts(exp, &exp.command_dir("sweep"), &plans, &exp.test)?;
        return Ok(None);
    }
    let backend = exp.backend()?;
    finish(exp, &backend, "sweep", plans, false, true).map(Some)
}

/// Condition names of the perturbation study, in output order.
pub const PERTURBATION_CONDITIONS: [&str; 12] = [
    "DataF-inc Raw",
    "DataF-inc r'y=1",
    "DataF-inc r'y=0",
    "DataM-inc Raw",
    "DataM-inc r'y=1",
    "DataM-inc r'y=0",
    "DataF-gen Raw",
    "DataF-gen r'z=0.5",
    "DataF-gen r'z=0",
    "DataM-gen Raw",
    "DataM-gen r'z=0.5",
    "DataM-gen r'z=1",
];

type Flip = (Axis, f64, f64);

fn perturbation_plans(exp: &Experiment) -> Vec<Planned> {
    let cfg = &exp.config.perturbation;
    let seed = cfg.seed;
    let (data_f, data_m) = match build_dataf_datam(&exp.split.train, cfg.k, seed) {
        Ok(pair) => pair,
        Err(e) => {
            return PERTURBATION_CONDITIONS
                .iter()
                .map(|c| Planned {
                    condition: c.to_string(),
                    seed: Some(seed),
                    demos: Err(e.to_string()),
                })
                .collect()
        }
    };
    // (base set, axis, source, target); None keeps the raw set
    let steps: [(&DemonstrationSet, Option<Flip>); 12] = [
        (&data_f, None),
        (&data_f, Some((Axis::Label, 0.5, 1.0))),
        (&data_f, Some((Axis::Label, 0.5, 0.0))),
        (&data_m, None),
        (&data_m, Some((Axis::Label, 0.5, 1.0))),
        (&data_m, Some((Axis::Label, 0.5, 0.0))),
        (&data_f, None),
        (&data_f, Some((Axis::Sensitive, 1.0, 0.5))),
        (&data_f, Some((Axis::Sensitive, 1.0, 0.0))),
        (&data_m, None),
        (&data_m, Some((Axis::Sensitive, 0.0, 0.5))),
        (&data_m, Some((Axis::Sensitive, 0.0, 1.0))),
    ];
    PERTURBATION_CONDITIONS
        .iter()
        .zip(steps)
        .map(|(name, (base, step))| {
            let demos = match step {
                None => Ok(base.clone()),
                Some((axis, source, target)) => perturb(
                    base,
                    &PerturbationSpec {
                        axis,
                        source,
                        target,
                        seed,
                    },
                ),
            };
            Planned::with(name.to_string(), Some(seed), demos)
        })
        .collect()
}

/// Raw and perturbed minority-only / majority-only sets.
pub fn cmd_perturbation(exp: &Experiment, dry_run: bool) -> Result<Option<RunResult>, PipelineError> {
    exp.check_disjoint()?;
    let plans = perturbation_plans(exp);
    if dry_run {
        write_prompts(exp, &exp.command_dir("perturb"), &plans, &exp.test)?;
        return Ok(None);
    }
    let backend = exp.backend()?;
    finish(exp, &backend, "perturb", plans, false, false).map(Some)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcgMode {
    /// Top-ranked sets for every configured grid point.
    Grid,
    /// Random versus full and partial top-ranked S2 sets.
    Ablation,
}

fn grid_name(k: usize, r_z: f64, r_y: f64) -> String {
    format!("K={k} r_z={r_z} r_y={r_y}")
}

fn fcg_plans(exp: &Experiment, tables: &FcgTables, mode: FcgMode) -> Vec<Planned> {
    let train = &exp.split.train;
    let fcg_seed = exp.config.fcg.params.seed;
    let mut plans = vec![Planned::zero_shot()];
    match mode {
        FcgMode::Grid => {
            for g in &exp.config.fcg.grid {
                let spec = StrategySpec {
                    r_z: g.r_z,
                    r_y: g.r_y,
                    k: g.k,
                    seed: fcg_seed,
                };
                let d = pick_top(&tables.tables, train, &spec, [CellFill::Top; 4], "top");
                plans.push(Planned::with(grid_name(g.k, g.r_z, g.r_y), None, d));
            }
        }
        FcgMode::Ablation => {
            let k = exp.config.strategies.k;
            let top = pick_top(
                &tables.tables,
                train,
                &StrategySpec::s2(k, fcg_seed),
                [CellFill::Top; 4],
                "top",
            );
            plans.push(Planned::with("FCG(both)".into(), None, top));
            use CellFill::{PoolRandom, Top};
            for &seed in &exp.config.strategies.seeds {
                let spec = StrategySpec::s2(k, seed);
                plans.push(Planned::with("Random".into(), Some(seed), select_random(&spec, train)));
                // fills are g1..g4; S2 only uses g3 (y=0) and g4 (y=1)
                let y0_top = pick_top(&tables.tables, train, &spec, [Top, Top, Top, PoolRandom], "y0_top");
                plans.push(Planned::with("FCG(y=0 top)".into(), Some(seed), y0_top));
                let y1_top = pick_top(&tables.tables, train, &spec, [Top, Top, PoolRandom, Top], "y1_top");
                plans.push(Planned::with("FCG(y=1 top)".into(), Some(seed), y1_top));
            }
        }
    }
    plans
}

fn load_or_run_fcg<B: Backend>(
    exp: &Experiment,
    backend: &CachedBackend<B>,
    dir: &Path,
) -> Result<FcgTables, PipelineError> {
    if let Some(path) = &exp.config.fcg.load_tables {
        let path = exp.base_dir.join(path);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let tables: FcgTables = serde_json::from_str(&text).map_err(|e| PipelineError::io(&path, e))?;
        return Ok(tables);
    }
    let outcome = run_fcg(
        &exp.split.train,
        &exp.dev,
        backend,
        &exp.template,
        &exp.config.fcg.params,
        exp.config.backend.max_in_flight,
    )?;
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    write_jsonl(&dir.join("fcg_iterations.jsonl"), &outcome.log)?;
    let tables = FcgTables::from(&outcome);
    let path = dir.join("fcg_tables.json");
    let text = serde_json::to_string_pretty(&tables).map_err(|e| PipelineError::io(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))?;
    Ok(tables)
}

/// Search (or load) ranked candidate tables, then evaluate the grid or the
/// ablation variants on the test sample. A dry run clusters and writes the
/// pool plus the zero-shot dev prompts used for the baseline.
pub fn cmd_fcg(exp: &Experiment, mode: FcgMode, dry_run: bool) -> Result<Option<RunResult>, PipelineError> {
    exp.check_disjoint()?;
    let command = match mode {
        FcgMode::Grid => "fcg",
        FcgMode::Ablation => "fcg-ablation",
    };
    let dir = exp.command_dir(command);
    if dry_run {
        let pool = build_pool(&exp.split.train, &exp.config.fcg.params)?;
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let path = dir.join("pool.json");
        let text = serde_json::to_string_pretty(&pool).map_err(|e| PipelineError::io(&path, e))?;
        fs::write(&path, text + "\n").map_err(|e| PipelineError::io(&path, e))?;
        write_prompts(exp, &dir, &[Planned::zero_shot()], &exp.dev)?;
        return Ok(None);
    }
    let backend = exp.backend()?;
    let tables = load_or_run_fcg(exp, &backend, &dir)?;
    let plans = fcg_plans(exp, &tables, mode);
    finish(exp, &backend, command, plans, false, mode == FcgMode::Ablation).map(Some)
}

/// Re-render the tables of every command found under `out_dir` into
/// `report.txt`, and return the text.
pub fn cmd_report(out_dir: &Path) -> Result<String, PipelineError> {
    let mut entries: Vec<_> = fs::read_dir(out_dir)
        .map_err(|e| PipelineError::io(out_dir, e))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("summary.jsonl").is_file())
        .collect();
    entries.sort();
    let mut text = String::new();
    for dir in entries {
        let lines: Vec<SummaryLine> = read_jsonl(&dir.join("summary.jsonl"))?;
        let command = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        text.push_str(&render_tables(&command, &lines));
        text.push('\n');
    }
    if text.is_empty() {
        return Err(PipelineError::Config(format!(
            "no summary.jsonl under {}",
            out_dir.display()
        )));
    }
    let path = out_dir.join("report.txt");
    fs::write(&path, &text).map_err(|e| PipelineError::io(&path, e))?;
    Ok(text)
}
