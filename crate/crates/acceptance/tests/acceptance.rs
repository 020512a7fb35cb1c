//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any failed.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use letterlora::cli::{self, fresh_model, train_pipeline};
use letterlora::dataprep::{
    self, anonymize, format_example, render_letter, synthetic_records, AnonymizationPolicy, LetterRecord,
    PrepareOptions, Task, TrainingExample, CONSIDER_PHRASE, SCHEDULE_PHRASE,
};
use letterlora::eval::{self, aggregate_ratings, paired_t_test, rouge_n, Dimension, RatingSheet, RougeVariant};
use letterlora::lora::{lora_forward, lora_merge, AdapterVars, LoraAdapter, LoraConfig};
use letterlora::model::{
    AdapterSet, AdapterVarMap, EncodedExample, Model, ModelConfig, ModelError, Projection, ProjectionId,
};
use letterlora::quant::{dequantize, quantize_blockwise, BitWidth};
use letterlora::tensor::{grad_check, linear_forward, Matrix, TensorError};
use letterlora::trainer::{optimizer_state, train, MemoryBudget, TrainConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, fail: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(fail)
    }
}

fn c1_rouge_worked_example() -> Outcome {
    let s = rouge_n("I like machine learning very much", "I love machine learning", 1);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let got = format!("recall {} precision {} f1 {}", s.recall, s.precision, s.f1);
    check(close(s.recall, 0.75) && close(s.precision, 0.5) && close(s.f1, 0.6), got.clone(), got)
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 24,
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 24,
        max_seq_len: 16,
        lora_targets: Projection::ALL.into_iter().collect(),
        lora: LoraConfig {
            rank: 4,
            alpha: 8.0,
            dropout: 0.0,
        },
    }
}

fn c2_lora_gradients() -> Outcome {
    let cfg = tiny_config();
    let mut adapters = AdapterSet::init(&cfg, 21).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (_, ad) in adapters.iter_mut() {
        ad.b = Matrix::randn(ad.b.rows(), ad.b.cols(), 0.1, &mut rng);
    }
    let model = Model::new(cfg, 23)
        .and_then(|m| m.with_adapters(adapters))
        .map_err(|e| e.to_string())?;
    let targets: BTreeSet<Projection> = model.adapters.iter().map(|(id, _)| id.proj).collect();
    if targets.len() != 8 {
        return Err(format!("{} distinct targets attached", targets.len()));
    }
    let ids: Vec<ProjectionId> = model.adapters.iter().map(|(id, _)| id).collect();
    let params: Vec<Matrix> = model
        .adapters
        .iter()
        .flat_map(|(_, ad)| [ad.a.clone(), ad.b.clone()])
        .collect();
    let example = EncodedExample::new(&[5, 6, 7, 8], &[9, 10, 11]);
    let err = grad_check(
        |tape, vars| {
            let base = model.bind_base_owned(tape);
            let mut av = AdapterVarMap::new();
            for (i, id) in ids.iter().enumerate() {
                av.insert(*id, AdapterVars { a: vars[2 * i], b: vars[2 * i + 1] });
            }
            model
                .example_loss::<ChaCha8Rng>(tape, &base, &av, &example, None)
                .map_err(|e| match e {
                    ModelError::Tensor(t) => t,
                    other => panic!("{other}"),
                })
        },
        &params,
        1e-6,
    )
    .map_err(|e: TensorError| e.to_string())?;
    let n: usize = params.iter().map(Matrix::len).sum();
    let msg = format!("max relative error {err:.2e} over {n} adapter entries, {} adapters", ids.len());
    check(err < 1e-4, msg.clone(), msg)
}

fn c3_merge_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=48);
        let k = rng.random_range(1..=48);
        let rank = rng.random_range(1..=d.min(k));
        let config = LoraConfig {
            rank,
            alpha: rng.random_range(0.5..128.0),
            dropout: rng.random_range(0.0..0.5),
        };
        let mut ad = LoraAdapter::init(d, k, config, "w", &mut rng).map_err(|e| e.to_string())?;
        ad.b = Matrix::randn(d, rank, 0.5, &mut rng);
        let w0 = Matrix::randn(d, k, 1.0, &mut rng);
        let x = Matrix::randn(k, rng.random_range(1..=8), 1.0, &mut rng);
        let direct = lora_forward::<ChaCha8Rng>(&w0, &ad, &x, None).map_err(|e| e.to_string())?;
        let merged = lora_merge(&w0, &ad).map_err(|e| e.to_string())?;
        let via_merge = linear_forward(&merged, &x).map_err(|e| e.to_string())?;
        worst = worst.max(direct.max_abs_diff(&via_merge).map_err(|e| e.to_string())?);
    }
    let msg = format!("max |difference| {worst:.2e} over 100 instances");
    check(worst < 1e-10, msg.clone(), msg)
}

fn c4_zero_init_neutrality() -> Outcome {
    let cfg = ModelConfig {
        vocab_size: 300,
        ..ModelConfig::default()
    };
    let plain = Model::new(cfg.clone(), 41).map_err(|e| e.to_string())?;
    let adapted = plain
        .clone()
        .with_adapters(AdapterSet::init(&cfg, 42).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut compared = 0;
    for _ in 0..5 {
        let len = rng.random_range(1..60);
        let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..300)).collect();
        let a = plain.forward(&ids).map_err(|e| e.to_string())?;
        let b = adapted.forward(&ids).map_err(|e| e.to_string())?;
        if !a.bit_eq(&b) {
            return Err(format!("logits differ for a {len}-token input"));
        }
        compared += a.len();
    }
    Ok(format!("{} adapters attached, {compared} logits bit-identical", adapted.adapters.len()))
}

fn c5_quantization_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let block = 64;
    let mut worst_ratio = 0.0f64;
    for m in 0..1000 {
        let rows = rng.random_range(1..=40);
        let cols = rng.random_range(1..=40);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let w = Matrix::randn(rows, cols, scale, &mut rng);
        let mut block_err = Vec::new();
        for bits in [BitWidth::Four, BitWidth::Eight] {
            let q = quantize_blockwise(&w, bits, block).map_err(|e| e.to_string())?;
            let back = dequantize(&q);
            let errs: Vec<f64> = w.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).collect();
            let mut per_block = Vec::new();
            for (b, chunk) in errs.chunks(block).enumerate() {
                let half = q.step(b) / 2.0;
                let e = chunk.iter().cloned().fold(0.0, f64::max);
                if e > half {
                    return Err(format!("matrix {m} block {b} {bits:?}: error {e:e} > half step {half:e}"));
                }
                if half > 0.0 {
                    worst_ratio = worst_ratio.max(e / half);
                }
                per_block.push(e);
            }
            block_err.push(per_block);
        }
        for (b, (e4, e8)) in block_err[0].iter().zip(&block_err[1]).enumerate() {
            if e8 > e4 {
                return Err(format!("matrix {m} block {b}: 8-bit error {e8:e} > 4-bit error {e4:e}"));
            }
        }
    }
    Ok(format!("1000 matrices, worst error / half-step {worst_ratio:.4}"))
}

fn corpus_examples(seed: u64, n: usize) -> Result<Vec<TrainingExample>, String> {
    let raw = dataprep::generate_synthetic_corpus(seed, n);
    let opts = PrepareOptions {
        task: Task::Letter,
        anonymize: Some(seed),
        max_tokens: 2000,
    };
    dataprep::prepare_examples(&raw, &opts).map_err(|e| e.to_string())
}

fn c6_accumulation_equivalence() -> Outcome {
    let examples = corpus_examples(61, 8)?;
    let tokenizer = cli::build_tokenizer(&examples, 512).map_err(|e| e.to_string())?;
    let data = cli::encode_examples(&tokenizer, &examples);
    let run = |micro_batch, accumulation_steps| -> Result<Model, String> {
        let mut model = fresh_model(tokenizer.len(), 62, None).map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            micro_batch,
            accumulation_steps,
            total_steps: 1,
            seed: 63,
            ..TrainConfig::letter_task()
        };
        train(&mut model, &data, &cfg, &mut MemoryBudget::unbounded(), |_| {}).map_err(|e| e.to_string())?;
        Ok(model)
    };
    let a = run(1, 2)?;
    let b = run(2, 1)?;
    let before = fresh_model(tokenizer.len(), 62, None).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut moved = 0.0f64;
    for ((id, x), (_, y)) in a.adapters.iter().zip(b.adapters.iter()) {
        let z = before.adapters.get(id).expect("same layout");
        for (p, q, r) in [(&x.a, &y.a, &z.a), (&x.b, &y.b, &z.b)] {
            worst = worst.max(p.max_abs_diff(q).map_err(|e| e.to_string())?);
            moved = moved.max(p.max_abs_diff(r).map_err(|e| e.to_string())?);
        }
    }
    let msg = format!("max |difference| {worst:.2e} (largest update {moved:.2e})");
    check(worst <= 1e-10 && moved > 0.0, msg.clone(), msg)
}

fn c7_paging_invisibility() -> Outcome {
    let examples = corpus_examples(71, 16)?;
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        total_steps: 200,
        seed: 72,
        ..TrainConfig::letter_task()
    };
    let tokenizer = cli::build_tokenizer(&examples, 512).map_err(|e| e.to_string())?;
    let probe = fresh_model(tokenizer.len(), cfg.seed, Some(BitWidth::Four)).map_err(|e| e.to_string())?;
    let largest = optimizer_state(&probe, cfg.eight_bit_optimizer).largest_group_bytes();
    let budgets = [MemoryBudget::unbounded(), MemoryBudget::with_capacity(2 * largest), MemoryBudget::with_capacity(largest)];
    let mut bytes = Vec::new();
    let mut counts = Vec::new();
    for mut budget in budgets {
        let art = train_pipeline(&examples, &cfg, 512, Some(BitWidth::Four), &mut budget).map_err(|e| e.to_string())?;
        bytes.push(art.checkpoint.to_bytes().map_err(|e| e.to_string())?);
        counts.push(budget.events().len());
    }
    let identical = bytes.windows(2).all(|w| w[0] == w[1]);
    let increasing = counts.windows(2).all(|w| w[0] < w[1]);
    let msg = format!(
        "checkpoints identical: {identical}; events {counts:?} for capacities [unbounded, {}, {largest}]",
        2 * largest
    );
    check(identical && increasing, msg.clone(), msg)
}

struct FineTuneRun {
    prompts: Vec<String>,
    outputs: Vec<String>,
    base_f1: Vec<f64>,
    tuned_f1: Vec<f64>,
    seconds: f64,
}

fn dispatch(args: &[&str]) -> Result<(), String> {
    let argv: Vec<&str> = std::iter::once("letterlora").chain(args.iter().copied()).collect();
    match cli::dispatch(argv) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args.join(" "))),
    }
}

fn fine_tune_run(root: &Path) -> Result<FineTuneRun, String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let start = Instant::now();
    dispatch(&["synth", "--seed", "7", "--n", "520", "--run-dir", &p("synth")])?;
    dispatch(&[
        "prepare", "--input", &p("synth/corpus.jsonl"), "--task", "letter", "--anonymize", "--seed", "7",
        "--holdout", "20", "--run-dir", &p("prepare"),
    ])?;
    let cfg = TrainConfig {
        learning_rate: 2e-3,
        total_steps: 2000,
        seed: 7,
        ..TrainConfig::letter_task()
    };
    std::fs::write(root.join("train.toml"), cfg.to_toml()).map_err(|e| e.to_string())?;
    dispatch(&[
        "train", "--config", &p("train.toml"), "--data", &p("prepare/train.jsonl"), "--run-dir", &p("train"),
    ])?;
    let ckpt = p("train/checkpoint.llck");
    let test = p("prepare/test.jsonl");
    dispatch(&["eval", "--checkpoint", &ckpt, "--testset", &test, "--no-adapters", "--run-dir", &p("base")])?;
    dispatch(&["eval", "--checkpoint", &ckpt, "--testset", &test, "--run-dir", &p("tuned")])?;
    let seconds = start.elapsed().as_secs_f64();

    let f1 = |dir: &str| -> Result<Vec<f64>, String> {
        let rows = eval::read_case_csv(&root.join(dir).join("cases.csv")).map_err(|e| e.to_string())?;
        Ok(rows.iter().map(|r| r.f1(RougeVariant::N(1))).collect())
    };
    let prompts = cli::read_examples(Path::new(&test))
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|e| e.prompt)
        .collect();
    let outputs = std::fs::read_to_string(root.join("tuned/outputs.jsonl"))
        .map_err(|e| e.to_string())?
        .lines()
        .map(|l| {
            let row: eval::OutputRow = serde_json::from_str(l).map_err(|e| e.to_string())?;
            Ok(row.output)
        })
        .collect::<Result<Vec<_>, String>>()?;
    Ok(FineTuneRun {
        prompts,
        outputs,
        base_f1: f1("base")?,
        tuned_f1: f1("tuned")?,
        seconds,
    })
}

fn c8_fine_tuning_lift(run: &FineTuneRun) -> Outcome {
    let base = eval::mean(&run.base_f1);
    let tuned = eval::mean(&run.tuned_f1);
    let t = paired_t_test(&run.tuned_f1, &run.base_f1).map_err(|e| e.to_string())?;
    let p = t.p_value.unwrap_or(1.0);
    let msg = format!(
        "{} cases, ROUGE-1 f1 {base:.3} -> {tuned:.3} (lift {:.3}), p = {p:.2e}, pipeline {:.0} s",
        run.tuned_f1.len(),
        tuned - base,
        run.seconds
    );
    check(
        run.tuned_f1.len() == 20 && tuned - base >= 0.05 && p <= 0.05 && run.seconds < 600.0,
        msg.clone(),
        msg,
    )
}

/// Calendar days written exactly as dd.mm.yyyy. Run-on digit and dot
/// strings such as `06.06.06.2019` do not count.
fn strict_dates(text: &str) -> Vec<NaiveDate> {
    let run = Regex::new(r"[0-9.]+").unwrap();
    let exact = Regex::new(r"^(\d{2})\.(\d{2})\.(\d{4})$").unwrap();
    run.find_iter(text)
        .filter_map(|m| {
            let c = exact.captures(m.as_str().strip_suffix('.').unwrap_or(m.as_str()))?;
            let n = |i: usize| c[i].parse::<u32>().unwrap();
            NaiveDate::from_ymd_opt(n(3) as i32, n(2), n(1))
        })
        .collect()
}

fn c9_keyword_switch(run: &FineTuneRun) -> Outcome {
    let (mut planned, mut planned_ok, mut recommended, mut recommended_ok) = (0, 0, 0, 0);
    for (prompt, output) in run.prompts.iter().zip(&run.outputs) {
        if prompt.contains("Planned treatment:") {
            planned += 1;
            let scheduled = output
                .find(SCHEDULE_PHRASE)
                .is_some_and(|i| strict_dates(&output[i + SCHEDULE_PHRASE.len()..]).len() >= 2);
            planned_ok += scheduled as usize;
        } else if prompt.contains("Recommended treatment:") {
            recommended += 1;
            recommended_ok += output.contains(CONSIDER_PHRASE) as usize;
        }
    }
    let share = |ok: usize, n: usize| if n == 0 { 0.0 } else { ok as f64 / n as f64 };
    let msg = format!(
        "planned {planned_ok}/{planned} with scheduled dates, recommended {recommended_ok}/{recommended} with the consider-phrase"
    );
    check(
        planned > 0 && recommended > 0 && share(planned_ok, planned) >= 0.8 && share(recommended_ok, recommended) >= 0.8,
        msg.clone(),
        msg,
    )
}

fn identifier_strings(r: &LetterRecord) -> Vec<String> {
    let Some(p) = &r.patient else { return Vec::new() };
    let mut out = vec![p.name.clone()];
    out.extend(p.name.split_whitespace().filter(|s| s.chars().count() >= 2).map(str::to_string));
    out.extend(p.id.clone());
    out.extend(p.birth_date.clone());
    out
}

fn intervals_preserved(before: &[NaiveDate], after: &[NaiveDate]) -> bool {
    before.len() == after.len()
        && (0..before.len()).all(|i| {
            (0..before.len()).all(|j| before[j] - before[i] == after[j] - after[i])
        })
}

fn c10_anonymization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut leaks = 0;
    let mut broken = 0;
    let mut dates = 0;
    for i in 0..1000 {
        let record = synthetic_records(rng.random(), 1).remove(0);
        let shift = rng.random_range(-1000..=1000);
        let ids = identifier_strings(&record);
        if ids.is_empty() {
            return Err(format!("record {i} has no patient block"));
        }
        let mut original = render_letter(&record);
        if let Some(b) = record.patient.as_ref().and_then(|p| p.birth_date.as_ref()) {
            original = original.replace(b.as_str(), "");
        }
        let before = strict_dates(&original);
        dates += before.len();
        for policy in [AnonymizationPolicy::Display, AnonymizationPolicy::Summary] {
            let out = anonymize(&record, policy, shift);
            let text = match policy {
                AnonymizationPolicy::Display => render_letter(&out),
                AnonymizationPolicy::Summary => {
                    let ex = format_example(&out, Task::Summary).map_err(|e| e.to_string())?;
                    format!("{}\n{}", ex.prompt, ex.completion)
                }
            };
            leaks += ids.iter().filter(|id| text.contains(id.as_str())).count();
            let after = strict_dates(&text);
            let typed = intervals_preserved(&record.all_dates(), &out.all_dates());
            let shifted = after.len() == before.len()
                && before.iter().zip(&after).all(|(b, a)| (*a - *b).num_days() == shift);
            if !(typed && shifted && intervals_preserved(&before, &after)) {
                broken += 1;
            }
        }
    }
    let msg = format!("2000 anonymized renderings, {dates} scanned dates: {leaks} leaks, {broken} interval violations");
    check(leaks == 0 && broken == 0, msg.clone(), msg)
}

/// Per (case, dimension) score totals over five raters. Column totals are
/// 148, 142, 164 and 172; case 9 totals 50 over its twenty scores.
const FIXTURE: [[u8; 4]; 10] = [
    [13, 12, 16, 20],
    [14, 15, 14, 18],
    [20, 14, 20, 20],
    [15, 15, 16, 15],
    [15, 15, 15, 16],
    [16, 15, 15, 15],
    [15, 16, 15, 15],
    [11, 11, 20, 20],
    [12, 12, 13, 13],
    [17, 17, 20, 20],
];

fn rating_fixture() -> Vec<RatingSheet> {
    let mut sheets = Vec::new();
    for (c, totals) in FIXTURE.iter().enumerate() {
        for rater in 0..5u8 {
            let s = |t: u8| t / 5 + u8::from(rater < t % 5);
            sheets.push(RatingSheet {
                case_id: (c + 1).to_string(),
                rater_id: format!("r{}", rater + 1),
                correctness: s(totals[0]),
                comprehensiveness: s(totals[1]),
                style: s(totals[2]),
                practicality: s(totals[3]),
            });
        }
    }
    sheets
}

fn c11_rating_fixture() -> Outcome {
    let summary = aggregate_ratings(&rating_fixture()).map_err(|e| e.to_string())?;
    let targets = [
        (Dimension::Correctness, 2.96),
        (Dimension::Comprehensiveness, 2.84),
        (Dimension::Style, 3.29),
        (Dimension::Practicality, 3.44),
    ];
    let mut mismatches = Vec::new();
    let mut got = Vec::new();
    for (d, want) in targets {
        let m = summary.dimension(d).mean;
        got.push(format!("{d} {m:.4}"));
        if (m - want).abs() > 1e-12 {
            mismatches.push(format!("{d} {m} != {want}"));
        }
    }
    let lowest = summary.lowest_case().ok_or("no cases")?;
    if lowest.case_id != "9" || (lowest.mean - 2.5).abs() > 1e-12 {
        mismatches.push(format!("lowest case {} with mean {}", lowest.case_id, lowest.mean));
    }
    let msg = format!("{}; lowest case {} mean {}", got.join(", "), lowest.case_id, lowest.mean);
    if mismatches.is_empty() {
        Ok(msg)
    } else {
        Err(format!(
            "{msg}; {} (a mean over 50 integer scores is a multiple of 0.02)",
            mismatches.join("; ")
        ))
    }
}

/// Two-sided p by Simpson quadrature of the t density after substituting
/// `t = sqrt(df) tan(theta)`; the density is then proportional to
/// `cos(theta)^(df - 1)` on `[0, pi/2)`.
fn quadrature_p(t: f64, df: f64) -> f64 {
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }
    let f = |th: f64| th.cos().powf(df - 1.0);
    let half = std::f64::consts::FRAC_PI_2;
    let theta0 = (t.abs() / df.sqrt()).atan();
    simpson(f, theta0, half, 20_000) / simpson(f, 0.0, half, 20_000)
}

fn c12_t_test_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(121);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=40);
        let shift = rng.random_range(-1.0..1.0);
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + shift).collect();
        let r = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
        let (Some(t), Some(p)) = (r.t_statistic, r.p_value) else {
            return Err("degenerate random sample".into());
        };
        worst = worst.max((p - quadrature_p(t, r.degrees_of_freedom as f64)).abs());
    }
    let msg = format!("max |p - oracle| {worst:.2e} over 50 samples");
    check(worst < 1e-8, msg.clone(), msg)
}

fn main() {
    let root = tempfile::tempdir().expect("temporary directory");
    let run = fine_tune_run(root.path());
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 ROUGE worked example", Box::new(c1_rouge_worked_example)),
        ("2 LoRA gradient correctness", Box::new(c2_lora_gradients)),
        ("3 merge equivalence", Box::new(c3_merge_equivalence)),
        ("4 zero-init neutrality", Box::new(c4_zero_init_neutrality)),
        ("5 quantization bound", Box::new(c5_quantization_bound)),
        ("6 accumulation equivalence", Box::new(c6_accumulation_equivalence)),
        ("7 paging invisibility", Box::new(c7_paging_invisibility)),
        (
            "8 fine-tuning lifts ROUGE",
            Box::new(|| run.as_ref().map_err(Clone::clone).and_then(c8_fine_tuning_lift)),
        ),
        (
            "9 keyword-switch learning",
            Box::new(|| run.as_ref().map_err(Clone::clone).and_then(c9_keyword_switch)),
        ),
        ("10 anonymization", Box::new(c10_anonymization)),
        ("11 rating aggregation fixture", Box::new(c11_rating_fixture)),
        ("12 t-test oracle", Box::new(c12_t_test_oracle)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
