use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use fairsim_core::metrics::BiasReport;
use fairsim_core::simcore::RecallReport;
use fairsim_core::Error;

use crate::artifact::{read_envelope, write_atomic};
use crate::error::{CliError, CliResult};

struct Point {
    label: String,
    bias: BiasReport,
    recall: RecallReport,
    config_hash: String,
}

fn load(label: &str, spec: &str) -> CliResult<Point> {
    let (b, r) = spec
        .split_once(',')
        .ok_or_else(|| CliError::Usage(format!("expected BIAS_JSON,RECALL_JSON, got {spec:?}")))?;
    let bias = read_envelope::<BiasReport>(Path::new(b), "bias_report")?;
    let recall = read_envelope::<RecallReport>(Path::new(r), "recall_report")?;
    Ok(Point { label: label.to_string(), bias: bias.payload, recall: recall.payload, config_hash: bias.config_hash })
}

fn words(r: &BiasReport) -> BTreeSet<&str> {
    r.per_query.keys().map(String::as_str).collect()
}

fn check_comparable(vanilla: &Point, p: &Point) -> CliResult<()> {
    if vanilla.bias.k != p.bias.k {
        return Err(Error::MismatchedQuerySets(format!("{}: k {} vs {}", p.label, p.bias.k, vanilla.bias.k)).into());
    }
    if words(&vanilla.bias) != words(&p.bias) {
        return Err(Error::MismatchedQuerySets(format!("{}: bias words differ", p.label)).into());
    }
    let ks = |r: &RecallReport| r.recall.keys().copied().collect::<Vec<_>>();
    if ks(&vanilla.recall) != ks(&p.recall) {
        return Err(Error::MismatchedQuerySets(format!("{}: recall k values differ", p.label)).into());
    }
    Ok(())
}

/// Relative change `(x − reference) / reference`; empty when the reference is zero.
fn relative(x: f64, reference: f64) -> String {
    if reference == 0.0 {
        String::new()
    } else {
        format!("{}", (x - reference) / reference)
    }
}

pub fn report(a: crate::cli::ReportArgs) -> CliResult<()> {
    let vanilla = load("vanilla", &a.vanilla)?;
    let points = a
        .point
        .iter()
        .map(|s| {
            let (label, spec) =
                s.split_once('=').ok_or_else(|| CliError::Usage(format!("expected LABEL=BIAS,RECALL, got {s:?}")))?;
            if label.contains(',') || label.contains('"') {
                return Err(CliError::Usage(format!("label {label:?} may not contain commas or quotes")));
            }
            load(label, spec)
        })
        .collect::<CliResult<Vec<_>>>()?;
    for p in &points {
        check_comparable(&vanilla, p)?;
    }
    let mut csv = String::from("point,k,mean_bias,mean_error,bias_change,error_change,config_hash\n");
    for p in &points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            p.label,
            p.bias.k,
            p.bias.mean_bias,
            p.recall.mean_error,
            relative(p.bias.mean_bias, vanilla.bias.mean_bias),
            relative(p.recall.mean_error, vanilla.recall.mean_error),
            p.config_hash
        );
    }
    write_atomic(&a.out, csv.as_bytes())?;
    log::info!("wrote {} points against vanilla mean bias {:.4}", points.len(), vanilla.bias.mean_bias);
    Ok(())
}
