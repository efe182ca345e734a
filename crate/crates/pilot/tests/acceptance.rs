//! Acceptance checks. Prints one PASS or FAIL line per check and exits
//! non-zero if any fails.

use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use indexmap::IndexMap;
use pilot_core::agent::{write_trace, Budget};
use pilot_core::dataset::{self, generate_fixtures, to_eval_cases, Category, FIXTURE_SEED};
use pilot_core::eval::{aggregate, scale_bench, score_action, score_outcome, EvalError, SampleScore, ScaleConfig, ScaleMode};
use pilot_core::llm::{Matcher, ScriptStep, ScriptedBackend};
use pilot_core::parser::faults::mutations;
use pilot_core::parser::{parse_turn, ActionInput, Argument, ModelTurn};
use pilot_core::pmp::{MemoryPool, PoolError};
use pilot_core::tools::{execute, ToolRegistry, DRUG_GENERATION, DRUG_OPTIMIZATION, DRUG_PROPERTY, TOOL_NAMES};
use pilot_core::{Agent, AgentConfig, AgentEvent, Clock, Failure, ParameterValue, Session};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::{json, Value};

type Check = fn() -> Result<String, String>;

fn main() {
    let checks: [(&str, Check); 9] = [
        ("harness exactness", harness_exactness),
        ("score sequencing", score_sequencing),
        ("memory pool semantics", pool_semantics),
        ("scale crossover", scale_crossover),
        ("scale sweep", scale_sweep),
        ("error feedback convergence", fefo_convergence),
        ("parser tolerance", parser_tolerance),
        ("dataset round-trip", dataset_round_trip),
        ("end-to-end multi-turn", multi_turn_workflow),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {}. {name}: {detail} [{secs:.2} s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why} [{secs:.2} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn within(start: Instant, limit: f64) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < limit, || format!("took {secs:.2} s, limit {limit} s"))?;
    Ok(secs)
}

fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn harness_exactness() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let harness = fixtures_dir().join("harness");
    let mut reports = Vec::new();
    for run in 0..5 {
        let start = Instant::now();
        let report = dir.path().join(format!("run{run}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_pilot"))
            .args(["eval", "--category", "simple", "--cases"])
            .arg(harness.join("cases.json"))
            .arg("--backend")
            .arg(harness.join("backend.toml"))
            .arg("--report")
            .arg(&report)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("pilot eval failed: {}", String::from_utf8_lossy(&out.stderr)))?;
        within(start, 10.0)?;
        reports.push(std::fs::read(&report).map_err(|e| e.to_string())?);
    }
    ensure(reports.iter().all(|r| *r == reports[0]), || "reports differ between repeats".into())?;
    let v: Value = serde_json::from_slice(&reports[0]).map_err(|e| e.to_string())?;
    ensure(v["acc_f"] == json!(0.8) && v["acc_p"] == json!(0.7), || format!("acc_f={} acc_p={}", v["acc_f"], v["acc_p"]))?;
    Ok("acc_f=0.8 acc_p=0.7, 5 identical reports".into())
}

fn score_sequencing() -> Result<String, String> {
    let fx = generate_fixtures(FIXTURE_SEED);
    let mut cases = to_eval_cases(&fx.simple, Category::Simple).map_err(|e| e.to_string())?;
    cases.extend(to_eval_cases(&fx.multiple, Category::Multiple).map_err(|e| e.to_string())?);
    let pools: Vec<MemoryPool> = cases.iter().map(|c| c.preloaded_pool()).collect();
    let start = Instant::now();

    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let set = prop::collection::vec((0..cases.len(), 0..6usize, any::<prop::sample::Index>()), 1..16);
    runner
        .run(&set, |picks| {
            let scores: Vec<SampleScore> = picks
                .iter()
                .map(|&(i, how, at)| {
                    let expected = &cases[i].turns[0].expected;
                    let actual = perturb(expected, how, at);
                    let schema = cases[i].registry.get(&expected.tool).unwrap();
                    let (f, p, _) = score_action(&actual, expected, schema, &pools[i]);
                    SampleScore::single(f, p, 0.0, None)
                })
                .collect();
            prop_assert!(scores.iter().all(|s| s.p <= s.f));
            let report = aggregate(scores, Category::Simple).unwrap();
            prop_assert!(report.acc_p <= report.acc_f);
            Ok(())
        })
        .map_err(|e| e.to_string())?;

    let rejected = Cell::new(0usize);
    let mut runner = TestRunner::new(Config { cases: 1000, failure_persistence: None, ..Config::default() });
    let flags = prop::collection::vec((0u8..=1, 0u8..=1), 0..12);
    runner
        .run(&(flags, any::<prop::sample::Index>()), |(set, at)| {
            let mut scores: Vec<SampleScore> = set.iter().map(|&(f, p)| SampleScore::single(f, p & f, 0.0, None)).collect();
            let index = at.index(scores.len() + 1);
            scores.insert(index, SampleScore::single(0, 1, 0.0, None));
            prop_assert_eq!(aggregate(scores, Category::Simple), Err(EvalError::InvariantViolation { index }));
            rejected.set(rejected.get() + 1);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let secs = within(start, 1.0)?;
    Ok(format!("1000 score sets with Acc.P <= Acc.F, {} sets with f=0,p=1 rejected in {secs:.2} s", rejected.get()))
}

fn perturb(expected: &ActionInput, how: usize, at: prop::sample::Index) -> ActionInput {
    let mut a = expected.clone();
    let n = a.arguments.len();
    match how {
        1 => a.tool = TOOL_NAMES[at.index(TOOL_NAMES.len())].to_string(),
        2 if n > 0 => {
            a.arguments.shift_remove_index(at.index(n));
        }
        3 if n > 0 => {
            let (_, arg) = a.arguments.get_index_mut(at.index(n)).unwrap();
            *arg = Argument::Literal(ParameterValue::text("something else"));
        }
        4 => {
            a.arguments.insert("extra".into(), Argument::Literal(ParameterValue::Number(1.0)));
        }
        _ => {}
    }
    a
}

fn pool_semantics() -> Result<String, String> {
    const KEYS: [&str; 5] = ["user_smiles", "input_property", "result_drug_property", "k", "k_2"];
    const SMILES: [&str; 6] = ["C", "CCO", "c1ccccc1", "CC(=O)O", "[Na+].[Cl-]", "C1CC1"];
    let value = prop_oneof![
        "\\PC{0,16}".prop_map(ParameterValue::Text),
        (-1e9f64..1e9).prop_map(ParameterValue::Number),
        prop::collection::vec(prop::sample::select(&SMILES[..]), 0..8).prop_map(ParameterValue::drug_list),
        (any::<i64>(), "\\PC{0,6}").prop_map(|(n, s)| ParameterValue::ToolResult {
            tool: "drug_property".into(),
            payload: json!({"n": n, "s": s})
        }),
    ];
    let op = (0..6u8, 0..KEYS.len(), value);
    let ops_run = Cell::new(0usize);
    let start = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 64, failure_persistence: None, ..Config::default() });
    runner
        .run(&prop::collection::vec(op, 160..=200), |ops| {
            let mut pool = MemoryPool::new();
            let mut model: IndexMap<&str, Vec<ParameterValue>> = IndexMap::new();
            let bytes = |v: &ParameterValue| serde_json::to_string(v).unwrap();
            for (kind, k, v) in ops {
                let key = KEYS[k];
                match kind {
                    0 | 1 => {
                        pool.put_str(key, v.clone()).unwrap();
                        model.entry(key).or_default().push(v.clone());
                        prop_assert_eq!(bytes(pool.resolve(key).unwrap()), bytes(&v));
                    }
                    2 => match model.get_mut(key) {
                        Some(stack) => {
                            pool.update(key, v.clone()).unwrap();
                            *stack.last_mut().unwrap() = v;
                        }
                        None => prop_assert_eq!(pool.update(key, v), Err(PoolError::KeyNotFound(key.into()))),
                    },
                    3 => {
                        let existed = model.shift_remove(key).is_some();
                        prop_assert_eq!(pool.delete(key).is_ok(), existed);
                    }
                    4 => {
                        let doc = pool.persist();
                        let restored = MemoryPool::restore(&doc).unwrap();
                        prop_assert_eq!(&restored, &pool);
                        prop_assert_eq!(restored.persist(), doc);
                        pool = restored;
                    }
                    _ => match model.get(key) {
                        Some(stack) => prop_assert_eq!(bytes(pool.resolve(key).unwrap()), bytes(stack.last().unwrap())),
                        None => prop_assert!(pool.resolve(key).is_err()),
                    },
                }
                let keys: Vec<String> = pool.list_keys().into_iter().map(String::from).collect();
                prop_assert_eq!(keys, model.keys().map(|k| k.to_string()).collect::<Vec<_>>());
                for (k, stack) in &model {
                    let got: Vec<String> = pool.stack(k).unwrap().iter().map(bytes).collect();
                    prop_assert_eq!(got, stack.iter().map(bytes).collect::<Vec<_>>());
                }
                ops_run.set(ops_run.get() + 1);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let secs = within(start, 30.0)?;
    let n = ops_run.get();
    ensure(n >= 10_000, || format!("only {n} operations ran"))?;
    Ok(format!("{n} operations matched the reference model in {secs:.2} s"))
}

fn scale_crossover() -> Result<String, String> {
    let start = Instant::now();
    let counts = vec![1, 20, 50, 51, 52, 91];
    let report = scale_bench(&ScaleConfig::new(counts, 90, 50));
    within(start, 60.0)?;
    for r in &report.rows {
        ensure((90.0..=91.0).contains(&r.avg_len), || format!("avg length {} at count {}", r.avg_len, r.count))?;
        let want = r.mode == ScaleMode::Pmp || r.count <= 50;
        ensure(r.completed == want, || format!("{:?} at {} molecules: completed={}", r.mode, r.count, r.completed))?;
    }
    let lens: Vec<usize> = report.rows_for(ScaleMode::Pmp).map(|r| r.prompt_chars).collect();
    let spread = lens.iter().max().unwrap() - lens.iter().min().unwrap();
    ensure(spread <= "user_smiles".len(), || format!("pmp prompt length varies by {spread} characters"))?;
    let grid = |m| report.rows_for(m).map(|r| if r.completed { '✓' } else { '✗' }).collect::<String>();
    Ok(format!("pmp {} no_pmp {} over 1,20,50,51,52,91; pmp prompt {} chars", grid(ScaleMode::Pmp), grid(ScaleMode::NoPmp), lens[0]))
}

fn scale_sweep() -> Result<String, String> {
    let start = Instant::now();
    let cap = 10;
    let report = scale_bench(&ScaleConfig::new((2..=20).step_by(2).collect(), 90, cap));
    within(start, 120.0)?;
    let pmp: Vec<_> = report.rows_for(ScaleMode::Pmp).collect();
    let flat = |xs: Vec<f64>| {
        let (lo, hi) = xs.iter().fold((f64::MAX, f64::MIN), |(a, b), &x| (a.min(x), b.max(x)));
        hi <= lo * 1.10
    };
    ensure(flat(pmp.iter().map(|r| r.latency).collect()), || "pmp latency not flat within 10%".into())?;
    ensure(flat(pmp.iter().map(|r| r.acc_p).collect()) && pmp[0].acc_p == 1.0, || "pmp accuracy not flat".into())?;
    let no: Vec<_> = report.rows_for(ScaleMode::NoPmp).collect();
    ensure(no.windows(2).all(|w| w[1].latency > w[0].latency), || "no_pmp latency not monotonically increasing".into())?;
    for r in &no {
        let want = if r.count <= cap { 1.0 } else { 0.0 };
        ensure(r.acc_p == want, || format!("no_pmp accuracy {} at {} molecules", r.acc_p, r.count))?;
    }
    let table = report.to_table();
    ensure(table.starts_with("SMILES Count") && table.contains("no_pmp (cap=10)"), || "table layout".into())?;
    Ok(format!(
        "pmp latency {:.3}-{:.3} s, no_pmp {:.3}-{:.3} s, accuracy 1 -> 0 past {cap} molecules",
        pmp[0].latency,
        pmp.last().unwrap().latency,
        no[0].latency,
        no.last().unwrap().latency
    ))
}

const ESOL_REF: &str = r#"{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "esol"}}"#;

fn esol_agent(steps: Vec<ScriptStep>, config: AgentConfig) -> (Agent, Session) {
    let clock = Clock::system();
    let backend = Arc::new(ScriptedBackend::new(steps, clock.clone()));
    let agent = Agent::with_clock(backend, ToolRegistry::standard(), config, clock);
    let mut pool = MemoryPool::new();
    pool.put_str("user_smiles", ParameterValue::drug_list(["CCO", "c1ccccc1"])).unwrap();
    (agent, Session::with_pool(pool))
}

fn fefo_convergence() -> Result<String, String> {
    let faults = [
        ("UnparseableOutput", "I would probably look at solubility somehow."),
        ("UnknownTool", r#"{"name": "drug_solubility", "arguments": {"drug_smiles": "(user_smiles)"}}"#),
        ("MissingRequired", r#"{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)"}}"#),
        ("UnexpectedParameter", r#"{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "esol", "temperature": 298}}"#),
        ("TypeMismatch", r#"{"name": "drug_property", "arguments": {"drug_smiles": 42, "property": "esol"}}"#),
        ("NonexistentMemoryKey", r#"{"name": "drug_property", "arguments": {"drug_smiles": "(uploaded_molecules)", "property": "esol"}}"#),
        ("InvalidParameterValue", r#"{"name": "drug_property", "arguments": {"drug_smiles": ["C(("], "property": "esol"}}"#),
        ("ToolExecutionFailed", r#"{"name": "drug_property", "arguments": {"drug_smiles": "(user_smiles)", "property": "potency"}}"#),
    ];
    let question = "Predict the esol of my molecules.";
    let done = || ScriptStep::new(Matcher::Contains("\"status\":\"ok\"".into()), "Final Answer: done").repeating();
    for (class, bad) in faults {
        let steps = vec![
            done(),
            ScriptStep::new(Matcher::Contains(class.into()), ESOL_REF),
            ScriptStep::new(Matcher::Always, bad).repeating(),
        ];
        let (agent, mut session) = esol_agent(steps, AgentConfig::default());
        let mut seen = Vec::new();
        let outcome = agent.run_query_observed(&mut session, question, &mut |e| {
            if let AgentEvent::FefoFeedback { errors, .. } = e {
                seen.extend(errors.iter().map(|e| e.class_name()));
            }
        });
        ensure(seen == [class], || format!("{class}: feedback classes {seen:?}"))?;
        ensure(outcome.result.is_ok() && outcome.retries == 1, || format!("{class}: {:?} after {} retries", outcome.result, outcome.retries))?;
    }

    let expected = ActionInput::new(DRUG_PROPERTY)
        .memory_ref("drug_smiles", "user_smiles")
        .literal("property", ParameterValue::text("esol"));
    let registry = ToolRegistry::standard();
    let (agent, mut session) = esol_agent(vec![ScriptStep::new(Matcher::Always, faults[1].1).repeating()], AgentConfig::default());
    let pool = session.pool.snapshot();
    let outcome = agent.run_query(&mut session, question);
    ensure(
        matches!(outcome.result, Err(Failure::RetryBudgetExhausted { .. })) && outcome.retries == 3,
        || format!("never-correcting backend: {:?} after {} retries", outcome.result, outcome.retries),
    )?;
    let score = score_outcome(&outcome, &expected, &registry, &pool);
    ensure((score.f, score.p) == (0, 0), || format!("never-correcting backend scored {score:?}"))?;

    let scale = 0.2 / 120.0;
    let config = AgentConfig { budget: Budget::default().scaled(scale), ..AgentConfig::default() };
    let (agent, mut session) = esol_agent(vec![ScriptStep::new(Matcher::Always, ESOL_REF).delayed(30_000)], config);
    let start = Instant::now();
    let outcome = agent.run_query(&mut session, question);
    let cut = start.elapsed().as_secs_f64();
    ensure(outcome.result == Err(Failure::QueryTimeout), || format!("stalling backend: {:?}", outcome.result))?;
    ensure(cut < 1.0, || format!("stalling backend cut after {cut:.2} s"))?;
    let score = score_outcome(&outcome, &expected, &registry, &pool);
    ensure((score.f, score.p, score.fault.as_deref()) == (0, 0, Some("timeout")), || format!("timeout scored {score:?}"))?;
    Ok(format!("8/8 classes corrected in 1 retry; 3 retries exhausted; stall cut at {:.0} ms", cut * 1000.0))
}

fn parser_tolerance() -> Result<String, String> {
    let fx = generate_fixtures(FIXTURE_SEED);
    let mut clean = Vec::new();
    for (samples, category) in [(&fx.simple, Category::Simple), (&fx.multiple, Category::Multiple), (&fx.multi_turn, Category::MultiTurn)] {
        for case in to_eval_cases(samples, category).map_err(|e| e.to_string())? {
            clean.extend(case.turns.into_iter().map(|t| t.expected));
        }
    }
    let (mut ok, mut total) = (0, 0);
    let mut first_miss = None;
    for action in &clean {
        let corpus = mutations(action);
        ensure(corpus.len() >= 20, || format!("only {} mutations", corpus.len()))?;
        for (name, text) in corpus {
            total += 1;
            if parse_turn(&text) == ModelTurn::Action(action.clone()) {
                ok += 1;
            } else if first_miss.is_none() {
                first_miss = Some(format!("{name}: {text}"));
            }
        }
    }
    ensure(ok == total, || format!("{ok}/{total}; first miss {}", first_miss.unwrap_or_default()))?;
    Ok(format!("{ok}/{total} mutations of {} clean actions parsed identically", clean.len()))
}

fn dataset_round_trip() -> Result<String, String> {
    let dir = fixtures_dir();
    let files = [
        ("train.json", None),
        ("eval_simple.json", Some(Category::Simple)),
        ("eval_multiple.json", Some(Category::Multiple)),
        ("eval_multi_turn.json", Some(Category::MultiTurn)),
        ("harness/cases.json", Some(Category::Simple)),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut samples_seen = 0;
    for (name, category) in files {
        let path = dir.join(name);
        let samples = dataset::load(&path).map_err(|e| format!("{name}: {e}"))?;
        for (i, s) in samples.iter().enumerate() {
            dataset::validate(s).map_err(|e| format!("{name} sample {i}: {e}"))?;
        }
        if let Some(c) = category {
            to_eval_cases(&samples, c).map_err(|e| format!("{name}: {e}"))?;
        }
        let out = tmp.path().join("export.json");
        dataset::export(&samples, &out).map_err(|e| e.to_string())?;
        let reloaded = dataset::load(&out).map_err(|e| e.to_string())?;
        ensure(reloaded == samples, || format!("{name}: reload differs"))?;
        samples_seen += samples.len();
    }
    Ok(format!("{samples_seen} samples in 5 files load, validate, export and reload identically"))
}

fn multi_turn_workflow() -> Result<String, String> {
    let start = Instant::now();
    let registry = ToolRegistry::standard();
    let gen_call = r#"{"name": "drug_generation", "arguments": {"conditions": {"count": 3, "target_property": "esol", "direction": "maximize", "reference_smiles": "CCO"}}}"#;
    let prop_call = r#"{"name": "drug_property", "arguments": {"drug_smiles": "(result_drug_generation)", "property": "esol"}}"#;

    let ModelTurn::Action(gen_action) = parse_turn(gen_call) else { return Err("generation call does not parse".into()) };
    let resolved: IndexMap<String, ParameterValue> = gen_action
        .arguments
        .iter()
        .map(|(k, a)| match a {
            Argument::Literal(v) => (k.clone(), v.clone()),
            Argument::MemoryRef(_) => unreachable!(),
        })
        .collect();
    let generated = execute(registry.get(DRUG_GENERATION).unwrap(), &resolved);
    let first = serde_json::to_value(&generated).map_err(|e| e.to_string())?["payload"][0].as_str().unwrap_or_default().to_string();
    let opt_call = format!(
        r#"{{"name": "{DRUG_OPTIMIZATION}", "arguments": {{"drug_smiles": "{first}", "conditions": {{"target_property": "esol", "direction": "maximize"}}}}}}"#
    );

    let steps = vec![
        ScriptStep::new(Matcher::Contains("\"status\":\"ok\"".into()), "Final Answer: done").repeating(),
        ScriptStep::new(Matcher::Contains("Generate three".into()), gen_call),
        ScriptStep::new(Matcher::Contains("solubility of those".into()), prop_call),
        ScriptStep::new(Matcher::Contains("Optimize the first".into()), opt_call),
    ];
    let clock = Clock::system();
    let agent = Agent::with_clock(Arc::new(ScriptedBackend::new(steps, clock.clone())), registry, AgentConfig::default(), clock);
    let mut session = Session::new();
    let pool = session.pool.clone();
    let mut trace = Vec::new();
    let mut calls = 0;
    let mut mismatch = None;
    for turn in [
        "Generate three molecules with high solubility similar to CCO.",
        "Predict the aqueous solubility of those generated molecules.",
        "Optimize the first generated molecule for solubility.",
    ] {
        let outcome = agent.run_query_observed(&mut session, turn, &mut |e| {
            if let AgentEvent::ToolCall { action, resolved_args, .. } = e {
                calls += 1;
                let pool = pool.read();
                for (name, arg) in &action.arguments {
                    let key = match arg {
                        Argument::MemoryRef(k) => k.to_string(),
                        Argument::Literal(_) => format!("input_{name}"),
                    };
                    let stored = pool.resolve(&key).map(|v| v.to_json().to_string()).unwrap_or_default();
                    let given = serde_json::to_string(&resolved_args[name]).unwrap_or_default();
                    if given != stored && mismatch.is_none() {
                        mismatch = Some(format!("{} {name}: tool got {} but ({key}) holds {stored}", action.tool, resolved_args[name]));
                    }
                }
            }
        });
        ensure(outcome.result.is_ok(), || format!("{turn:?}: {:?}", outcome.result))?;
        write_trace(&mut trace, turn, &outcome).map_err(|e| e.to_string())?;
    }
    if let Some(m) = mismatch {
        return Err(m);
    }
    ensure(calls == 3, || format!("{calls} tool calls"))?;
    let lines: Vec<Value> = String::from_utf8(trace)
        .map_err(|e| e.to_string())?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let steps: Vec<&Value> = lines.iter().filter(|l| l["kind"] == "step").collect();
    ensure(steps.iter().all(|s| s["step"]["raw_output"].is_string()), || "trace step without raw output".into())?;
    let used_ref = steps.iter().any(|s| s["step"]["raw_output"].as_str().unwrap_or_default().contains("(result_drug_generation)"));
    ensure(used_ref, || "trace does not show the result reference".into())?;
    let pool = session.pool.read();
    let generated_list = pool.resolve("result_drug_generation").map_err(|e| e.to_string())?;
    ensure(generated_list.to_json()[0] == json!(first), || "generation result not stored".into())?;
    ensure(pool.contains("result_drug_property") && pool.contains("result_drug_optimization"), || "missing results".into())?;
    let secs = within(start, 5.0)?;
    Ok(format!("3 turns, {calls} tool calls, inputs byte-equal to the pool, {} trace lines in {secs:.2} s", lines.len()))
}
