//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test -p dss-core --test acceptance -- 1 9`.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dss_core::ablation::{audit, run_family, variant_config, variants, Family};
use dss_core::checkpoint::Checkpoint;
use dss_core::pipeline::{datasets, fit, score, weight_split};
use dss_core::selfcheck::{gradcheck, identities, CheckResult};
use dss_core::train::{smoothed_endpoints, write_log_csv};
use dss_core::{Error, ModelConfig, ParamStore, Result, RunConfig, Tensor};

/// Held-out maxF floor for the smoke run, from the first recorded run (0.924).
const SMOKE_MAX_F_FIXTURE: f64 = 0.85;
/// Peak learning rate of the smoke run.
const SMOKE_LR_MAX: f64 = 3e-4;
const SMOKE_WINDOW: usize = 20;
const GRADIENT_BUDGET: Duration = Duration::from_secs(5 * 60);
const SMOKE_BUDGET: Duration = Duration::from_secs(15 * 60);

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        passed,
        detail: detail.into(),
    })
}

/// Passes when every result passes; the detail names failures or summarizes the worst case.
fn from_results(results: &[CheckResult], min_cases: usize) -> Result<Verdict> {
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed || r.cases < min_cases)
        .map(|r| format!("{} ({} cases, worst {:.3e}: {})", r.name, r.cases, r.worst, r.detail))
        .collect();
    if results.is_empty() {
        return verdict(false, "no checks ran");
    }
    if failed.is_empty() {
        let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
        verdict(true, format!("{} checks, worst {worst:.3e}", results.len()))
    } else {
        verdict(false, failed.join("; "))
    }
}

fn gradients() -> Result<Verdict> {
    let start = Instant::now();
    let mut results = gradcheck::operation_checks(7);
    results.extend(gradcheck::module_checks(7));
    results.extend(gradcheck::model_checks(7));
    let elapsed = start.elapsed();
    let mut v = from_results(&results, gradcheck::PROBES_PER_FAMILY)?;
    v.detail = format!("{}, {:.1}s", v.detail, elapsed.as_secs_f64());
    if elapsed > GRADIENT_BUDGET {
        v.passed = false;
        v.detail.push_str(" (over the 5 min budget)");
    }
    Ok(v)
}

fn smoke_config() -> RunConfig {
    RunConfig {
        lr_max: SMOKE_LR_MAX,
        out_dir: "runs/smoke".into(),
        ..RunConfig::default()
    }
}

struct Smoke {
    ratio: Option<f64>,
    max_f: f64,
    mae: f64,
    band: Option<(f64, f64)>,
    elapsed: Duration,
}

fn smoke_run() -> Result<Smoke> {
    let start = Instant::now();
    let cfg = smoke_config();
    let data = datasets(&cfg)?;
    let fitted = fit::<f32>(&cfg, &data.train, |_, _| Ok(()))?;
    let store = fitted.eval_store(cfg.use_ema)?;
    let summary = score(&fitted.net, &store, &data.val)?;
    let split = weight_split(&fitted.net, &store, &data.val, &cfg.supervision())?;
    Ok(Smoke {
        ratio: smoothed_endpoints(&fitted.log, SMOKE_WINDOW).map(|(a, b)| b / a),
        max_f: summary.max_f,
        mae: summary.mae,
        band: split.map(|s| (s.band, s.interior)),
        elapsed: start.elapsed(),
    })
}

fn smoke_training(smoke: &Result<Smoke>) -> Result<Verdict> {
    let s = smoke.as_ref().map_err(|e| Error::validation(format!("smoke run failed: {e}")))?;
    let Some(ratio) = s.ratio else {
        return verdict(false, "empty loss log");
    };
    let passed = ratio < 0.5 && s.max_f > SMOKE_MAX_F_FIXTURE && s.elapsed < SMOKE_BUDGET;
    verdict(
        passed,
        format!(
            "smoothed l_total ratio {ratio:.3} (< 0.5), held-out maxF {:.4} (> {SMOKE_MAX_F_FIXTURE}), MAE {:.4}, {:.0}s",
            s.max_f,
            s.mae,
            s.elapsed.as_secs_f64()
        ),
    )
}

fn specialization(smoke: &Result<Smoke>) -> Result<Verdict> {
    let s = smoke.as_ref().map_err(|e| Error::validation(format!("smoke run failed: {e}")))?;
    match s.band {
        Some((band, interior)) => verdict(
            band > interior,
            format!("mean w where R* > 0.5: {band:.4}, where R* = 0: {interior:.4}"),
        ),
        None => verdict(false, "no weight map or no image with both regions"),
    }
}

fn bits<T: dss_core::Scalar>(t: &Tensor<T>) -> Vec<u64> {
    t.data().iter().map(|v| v.to_f64().to_bits()).collect()
}

fn same_store<T: dss_core::Scalar>(a: &ParamStore<T>, b: &ParamStore<T>) -> bool {
    a.names() == b.names()
        && a.params().zip(b.params()).all(|((_, x), (_, y))| x.shape() == y.shape() && bits(x) == bits(y))
        && a.buffers().zip(b.buffers()).all(|((_, x), (_, y))| bits(x) == bits(y))
}

fn tiny_base() -> RunConfig {
    let mut cfg = RunConfig {
        image_size: 32,
        synth_train: 4,
        synth_val: 2,
        steps: 3,
        batch_size: 2,
        ..RunConfig::default()
    };
    cfg.set_model(&ModelConfig::tiny());
    cfg
}

fn log_bytes(cfg: &RunConfig) -> Result<(Vec<u8>, dss_core::pipeline::Fitted<f32>)> {
    let data = datasets(cfg)?;
    let fitted = fit::<f32>(cfg, &data.train, |_, _| Ok(()))?;
    let mut out = Vec::new();
    write_log_csv(&mut out, &fitted.log)?;
    Ok((out, fitted))
}

fn determinism() -> Result<Verdict> {
    let base = tiny_base();
    let (first, fitted) = log_bytes(&base)?;
    let (second, _) = log_bytes(&base)?;
    let mut notes = vec![format!("loss CSVs identical: {}", first == second)];
    let mut passed = first == second && !first.is_empty();

    let dir = tempfile::tempdir().map_err(|e| Error::io("temporary directory", e))?;
    let path = dir.path().join("state.ckpt");
    let ckpt = Checkpoint::from_state(&fitted.state, base.to_json());
    ckpt.save(&path)?;
    let loaded = Checkpoint::<f32>::load(&path)?;
    let round_trip = same_store(&ckpt.store, &loaded.store)
        && ckpt.ema.iter().zip(&loaded.ema).all(|((n, a), (m, b))| n == m && bits(a) == bits(b))
        && ckpt.adam == loaded.adam
        && loaded.to_bytes()? == ckpt.to_bytes()?;
    passed &= round_trip;
    notes.push(format!("checkpoint round trip bit-exact: {round_trip}"));

    let data = datasets(&base)?;
    let mut rows = Vec::new();
    let mut audited = 0;
    for family in Family::ALL {
        for v in variants(family) {
            let cfg = variant_config(&base, &v)?;
            audit(&base, &cfg, &v)?;
            audited += 1;
        }
        rows.extend(run_family(family, &base, &data.train, &data.val, |_| {}));
    }
    let failed: Vec<String> = rows.iter().filter(|r| !r.ok()).map(|r| format!("{}: {}", r.variant, r.status)).collect();
    let rows_ok = rows.len() == 15 && audited == 15 && failed.is_empty();
    passed &= rows_ok;
    notes.push(format!("ablation rows {} (audited {audited}) ok: {rows_ok}", rows.len()));
    if !failed.is_empty() {
        notes.push(failed.join("; "));
    }
    verdict(passed, notes.join(", "))
}

fn main() -> ExitCode {
    let wanted: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let kernel = dss_core::model::specialization::LAPLACIAN_KERNEL;
    let smoke = if want(6) || want(7) {
        Some(smoke_run())
    } else {
        None
    };

    type Criterion<'a> = (usize, &'static str, Box<dyn Fn() -> Result<Verdict> + 'a>);
    let criteria: Vec<Criterion> = vec![
        (1, "gradient correctness", Box::new(gradients)),
        (2, "operator oracles", Box::new(|| from_results(&identities::operator_oracles(7), 50))),
        (3, "structural identities", Box::new(move || from_results(&identities::structural_identities(7, &kernel), 1))),
        (4, "supervision identities", Box::new(|| from_results(&identities::supervision_identities(7), 1))),
        (5, "schedule and optimizer arithmetic", Box::new(|| from_results(&identities::optimizer_arithmetic(), 1))),
        (6, "desk-scale smoke training", Box::new(|| smoke_training(smoke.as_ref().expect("smoke run")))),
        (7, "specialization signal", Box::new(|| specialization(smoke.as_ref().expect("smoke run")))),
        (8, "metric oracles", Box::new(|| from_results(&identities::metric_oracles(7), 1))),
        (9, "determinism and persistence", Box::new(determinism)),
    ];

    let mut all = true;
    for (n, name, run) in criteria.iter().filter(|c| want(c.0)) {
        let (passed, detail) = match run() {
            Ok(v) => (v.passed, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        all &= passed;
        println!("{} {n} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
