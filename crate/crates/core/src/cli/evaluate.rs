use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::{json, Value};

use cadenza_core::conditioners::{extract_dynamics, AttributeConditions, DynamicsConfig, RhythmConfig};
use cadenza_core::dataio::load_audio_44k;
use cadenza_core::dataio::tensor_file::write_atomic;
use cadenza_core::metrics::{
    dynamics_correlation, estimate_beats, melody_accuracy, rhythm_f1, smoothness_value, CHANCE_MELODY_ACCURACY,
};

use super::extract::wav_files;
use super::{require, usage};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Reference WAVs, paired with generated WAVs by file name.
    #[arg(long)]
    pub reference_dir: PathBuf,
    #[arg(long)]
    pub generated_dir: PathBuf,
    /// Optional `<name>/dynamics.cond` targets; defaults to the reference's curve.
    #[arg(long)]
    pub conditions_dir: Option<PathBuf>,
    /// Transition time in seconds for the smoothness value (repeatable).
    #[arg(long)]
    pub boundary: Vec<f64>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional per-clip CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

const METRICS: [&str; 4] = ["melody_accuracy", "dynamics_correlation", "rhythm_f1", "smoothness"];

fn names(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    Ok(wav_files(dir)?
        .into_iter()
        .filter_map(|p| Some((p.file_name()?.to_string_lossy().into_owned(), p)))
        .collect())
}

fn value(r: cadenza_core::Result<f64>) -> Value {
    match r {
        Ok(v) => json!(v),
        Err(e) => json!({ "undefined": e.to_string() }),
    }
}

fn score(reference: &Path, generated: &Path, conds: Option<&Path>, boundaries: &[f64]) -> anyhow::Result<Value> {
    let r = load_audio_44k(reference)?;
    let g = load_audio_44k(generated)?;
    let dyn_cfg = DynamicsConfig::default();
    let target = match conds.map(AttributeConditions::read_dir).transpose()?.and_then(|c| c.dynamics) {
        Some(d) => d,
        None => extract_dynamics(&r, &dyn_cfg)?,
    };
    let beats = estimate_beats(&r, &RhythmConfig::default())?;
    let smooth: Vec<Value> = boundaries
        .iter()
        .map(|b| json!({ "boundary_s": b, "value": value(smoothness_value(&g, *b)) }))
        .collect();
    let smooth_mean = {
        let v: Vec<f64> = smooth.iter().filter_map(|s| s["value"].as_f64()).collect();
        if v.is_empty() {
            Value::Null
        } else {
            json!(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(json!({
        "melody_accuracy": value(melody_accuracy(&r, &g)),
        "dynamics_correlation": value(dynamics_correlation(&g, &target, &dyn_cfg)),
        "rhythm_f1": value(rhythm_f1(&beats, &g, &RhythmConfig::default())),
        "smoothness": smooth_mean,
        "smoothness_at": smooth,
    }))
}

pub fn run(a: Args) -> anyhow::Result<()> {
    require(&a.reference_dir)?;
    require(&a.generated_dir)?;
    let refs = names(&a.reference_dir)?;
    let gens = names(&a.generated_dir)?;
    if refs.is_empty() && gens.is_empty() {
        return Err(usage("no WAV files to evaluate"));
    }
    let orphans: Vec<String> = refs
        .keys()
        .filter(|k| !gens.contains_key(*k))
        .map(|k| format!("reference/{k}"))
        .chain(gens.keys().filter(|k| !refs.contains_key(*k)).map(|k| format!("generated/{k}")))
        .collect();
    if !orphans.is_empty() {
        return Err(usage(format!("unpaired files: {}", orphans.join(", "))));
    }
    let mut clips = Vec::new();
    for (name, rp) in &refs {
        let stem = Path::new(name).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let cdir = a.conditions_dir.as_ref().map(|d| d.join(&stem)).filter(|d| d.is_dir());
        let mut s = score(rp, &gens[name], cdir.as_deref(), &a.boundary)?;
        s["clip"] = json!(name);
        info!("{name}: {s}");
        clips.push(s);
    }
    let mut means = serde_json::Map::new();
    for m in METRICS {
        let v: Vec<f64> = clips.iter().filter_map(|c| c[m].as_f64()).collect();
        means.insert(
            m.into(),
            if v.is_empty() { Value::Null } else { json!(v.iter().sum::<f64>() / v.len() as f64) },
        );
    }
    let report = json!({
        "clips": clips,
        "means": means,
        "chance_melody_accuracy": CHANCE_MELODY_ACCURACY,
        "note": "melody accuracy of unrelated audio is about 1/12",
    });
    write_atomic(&a.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    if let Some(p) = &a.csv {
        let mut text = format!("clip,{}\n", METRICS.join(","));
        for c in &clips {
            let row: Vec<String> = METRICS.iter().map(|m| c[*m].as_f64().map(|v| v.to_string()).unwrap_or_default()).collect();
            text.push_str(&format!("{},{}\n", c["clip"].as_str().unwrap_or(""), row.join(",")));
        }
        write_atomic(p, text.as_bytes())?;
    }
    Ok(())
}
