use std::path::{Path, PathBuf};

use adamlab::signal::{
    check_properties, decay_blindness, filter_response, gen_signal, DecayReport, PropertyReport,
};
use adamlab::Execution;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, float, CsvOut};

#[derive(Debug, Clone)]
pub struct SignalOutput {
    pub properties: Vec<PropertyReport>,
    pub decay: Vec<DecayReport>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_signal(config: &ExperimentConfig, out: &Path, exec: Execution) -> Result<SignalOutput> {
    let s = &config.signal;
    if s.filters.is_empty() {
        return Err(CliError::Usage("signal needs at least one filter".into()));
    }
    let spec = s.spec();
    spec.validate()?;
    let g = gen_signal(&spec);

    ensure_dir(out)?;
    let mut response =
        CsvOut::create(out.join("response.csv"), &["filter", "beta", "k", "g", "d"])?;
    let mut properties = Vec::new();
    let mut decay = Vec::new();
    for &kind in &s.filters {
        let filter = s.filter(kind)?;
        let d = filter_response(&filter, &g)?;
        let beta = float(filter.beta);
        for (k, (gk, dk)) in g.iter().zip(&d).enumerate() {
            response.row([
                kind.name().to_string(),
                beta.clone(),
                k.to_string(),
                float(*gk),
                float(*dk),
            ])?;
        }
        properties.push(check_properties(
            &filter,
            s.property_trials,
            s.property_length,
            s.tolerance,
            config.seed,
            exec,
        )?);
        decay.push(decay_blindness(&filter, &spec, s.decay_tolerance)?);
    }
    let response = response.finish()?;

    let mut csv = CsvOut::create(
        out.join("properties.csv"),
        &["filter", "property", "value", "tolerance", "passed"],
    )?;
    for r in &properties {
        let rows = [
            ("causality", r.causality_gap, r.tolerance, r.causal()),
            (
                "positive_scaling",
                r.scaling_gap,
                r.tolerance,
                r.scale_invariant(),
            ),
            ("oddness", r.oddness_gap, r.tolerance, r.odd()),
            ("sup_norm", r.max_abs_output, 1.0 + r.tolerance, r.bounded()),
        ];
        for (name, value, tol, ok) in rows {
            csv.row([
                r.label.clone(),
                name.into(),
                float(value),
                float(tol),
                ok.to_string(),
            ])?;
        }
    }
    for r in &decay {
        csv.row([
            r.label.clone(),
            "decay_blindness".into(),
            float(r.max_gap),
            float(r.tolerance),
            r.passed.to_string(),
        ])?;
    }
    let props = csv.finish()?;
    Ok(SignalOutput {
        properties,
        decay,
        files: vec![response, props],
    })
}
