//! Ablation families: declared config overrides, a diff audit, and a per-variant report.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::pipeline::{fit, score};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Branches,
    Coordination,
    Supervision,
    Decoder,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Branches, Family::Coordination, Family::Supervision, Family::Decoder];

    pub fn name(self) -> &'static str {
        match self {
            Family::Branches => "branches",
            Family::Coordination => "coordination",
            Family::Supervision => "supervision",
            Family::Decoder => "decoder",
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::config(format!("unknown ablation family `{s}`; valid: branches, coordination, supervision, decoder")))
    }
}

/// One variant: an id and the config keys it sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub family: Family,
    pub id: &'static str,
    pub overrides: Vec<(&'static str, toml::Value)>,
}

fn s(v: &str) -> toml::Value {
    toml::Value::String(v.to_string())
}

fn f(v: f64) -> toml::Value {
    toml::Value::Float(v)
}

pub fn variants(family: Family) -> Vec<Variant> {
    let table: Vec<(&'static str, Vec<(&'static str, toml::Value)>)> = match family {
        Family::Branches => vec![
            ("baseline", vec![("branches", s("baseline"))]),
            ("bs", vec![("branches", s("boundary"))]),
            ("rc", vec![("branches", s("region"))]),
            ("full", vec![("branches", s("full"))]),
        ],
        Family::Coordination => vec![
            ("fixed-average", vec![("branches", s("full")), ("coordination", s("fixed-average"))]),
            ("global-scalar", vec![("branches", s("full")), ("coordination", s("global-scalar"))]),
            ("concat-conv", vec![("branches", s("full")), ("coordination", s("concat-conv"))]),
            ("scm", vec![("branches", s("full")), ("coordination", s("spatial"))]),
        ],
        Family::Supervision => vec![
            ("wo-both", vec![("lambda_bs", f(0.0)), ("lambda_scm", f(0.0))]),
            ("wo-bnd", vec![("lambda_bs", f(0.0))]),
            ("wo-coord", vec![("lambda_scm", f(0.0))]),
            ("full", vec![]),
        ],
        Family::Decoder => vec![
            ("low-res", vec![("decoder", s("low-res"))]),
            ("coarse", vec![("decoder", s("coarse"))]),
            ("full", vec![("decoder", s("full"))]),
        ],
    };
    table
        .into_iter()
        .map(|(id, overrides)| Variant { family, id, overrides })
        .collect()
}

pub fn find_variant(family: Family, id: &str) -> Result<Variant> {
    let all = variants(family);
    let ids: Vec<&str> = all.iter().map(|v| v.id).collect();
    all.iter().find(|v| v.id == id).cloned().ok_or_else(|| {
        Error::config(format!(
            "unknown {} variant `{id}`; valid: {}",
            family.name(),
            ids.join(", ")
        ))
    })
}

/// The variant's config: `base` with the declared overrides applied.
pub fn variant_config(base: &RunConfig, variant: &Variant) -> Result<RunConfig> {
    let mut cfg = base.clone();
    for (key, value) in &variant.overrides {
        cfg.set_value(key, value.clone())?;
    }
    Ok(cfg)
}

/// Checks that `cfg` differs from `base` in exactly the declared keys whose values change.
/// Returns the differing keys.
pub fn audit(base: &RunConfig, cfg: &RunConfig, variant: &Variant) -> Result<Vec<String>> {
    let diff = cfg.diff(base)?;
    let mut expected = Vec::new();
    for (key, value) in &variant.overrides {
        let mut probe = base.clone();
        probe.set_value(key, value.clone())?;
        if probe != *base {
            expected.push(key.to_string());
        }
    }
    expected.sort();
    if diff != expected {
        return Err(Error::config(format!(
            "variant `{}` changes {:?} but declares {:?}",
            variant.id, diff, expected
        )));
    }
    Ok(diff)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub family: Family,
    pub variant: String,
    pub max_f: Option<f64>,
    pub mae: Option<f64>,
    pub params: Option<usize>,
    pub wall_clock_s: f64,
    pub overrides: Vec<String>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

impl ReportRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

fn run_variant(base: &RunConfig, variant: &Variant, train: &[Sample], val: &[Sample]) -> Result<(Vec<String>, usize, f64, f64)> {
    let cfg = variant_config(base, variant)?;
    let overrides = audit(base, &cfg, variant)?;
    let fitted = fit::<f32>(&cfg, train, |_, _| Ok(()))?;
    let store = fitted.eval_store(cfg.use_ema)?;
    let summary = score(&fitted.net, &store, val)?;
    Ok((overrides, fitted.state.store.num_params(), summary.max_f, summary.mae))
}

/// Trains and scores each variant of `family` in turn. A failing variant is recorded and the
/// family continues. `on_row` sees each row as it completes.
pub fn run_family(
    family: Family,
    base: &RunConfig,
    train: &[Sample],
    val: &[Sample],
    mut on_row: impl FnMut(&ReportRow),
) -> Vec<ReportRow> {
    variants(family)
        .iter()
        .map(|variant| {
            let start = Instant::now();
            let outcome = run_variant(base, variant, train, val);
            let wall_clock_s = start.elapsed().as_secs_f64();
            let row = match outcome {
                Ok((overrides, params, max_f, mae)) => ReportRow {
                    family,
                    variant: variant.id.to_string(),
                    max_f: Some(max_f),
                    mae: Some(mae),
                    params: Some(params),
                    wall_clock_s,
                    overrides,
                    status: "ok".into(),
                },
                Err(e) => ReportRow {
                    family,
                    variant: variant.id.to_string(),
                    max_f: None,
                    mae: None,
                    params: None,
                    wall_clock_s,
                    overrides: variant.overrides.iter().map(|(k, _)| k.to_string()).collect(),
                    status: format!("failed: {e}"),
                },
            };
            on_row(&row);
            row
        })
        .collect()
}

pub const REPORT_HEADER: [&str; 8] = ["family", "variant", "maxF", "MAE", "params", "wall_clock_s", "overrides", "status"];

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| Error::validation(format!("writing ablation report: {e}"));
    w.write_record(REPORT_HEADER).map_err(to_err)?;
    let opt = |v: Option<String>| v.unwrap_or_default();
    for r in rows {
        w.write_record([
            r.family.name().to_string(),
            r.variant.clone(),
            opt(r.max_f.map(|v| format!("{v:.6}"))),
            opt(r.mae.map(|v| format!("{v:.6}"))),
            opt(r.params.map(|v| v.to_string())),
            format!("{:.3}", r.wall_clock_s),
            r.overrides.join(";"),
            r.status.clone(),
        ])
        .map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("ablation report", e))
}

pub fn save_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_report_csv(std::io::BufWriter::new(file), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifteen_variants() {
        let n: usize = Family::ALL.iter().map(|&f| variants(f).len()).sum();
        assert_eq!(n, 15);
    }

    #[test]
    fn unknown_variant_lists_valid_ids() {
        let msg = find_variant(Family::Decoder, "hires").unwrap_err().to_string();
        assert!(msg.contains("low-res, coarse, full"), "{msg}");
        assert!(matches!("bogus".parse::<Family>(), Err(Error::Config(_))));
    }

    #[test]
    fn every_variant_passes_the_audit() {
        let base = RunConfig::default();
        for family in Family::ALL {
            for v in variants(family) {
                let cfg = variant_config(&base, &v).unwrap();
                cfg.validate().unwrap();
                audit(&base, &cfg, &v).unwrap();
            }
        }
        let v = find_variant(Family::Supervision, "wo-both").unwrap();
        let cfg = variant_config(&base, &v).unwrap();
        assert_eq!(audit(&base, &cfg, &v).unwrap(), vec!["lambda_bs", "lambda_scm"]);
    }

    #[test]
    fn undeclared_changes_fail_the_audit() {
        let base = RunConfig::default();
        let v = find_variant(Family::Decoder, "coarse").unwrap();
        let mut cfg = variant_config(&base, &v).unwrap();
        cfg.steps += 1;
        assert!(audit(&base, &cfg, &v).is_err());
    }
}
