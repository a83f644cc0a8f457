//! Runs the synthetic melody benchmark and prints a JSON summary.
//! Usage: melody_bench [config.json]

use std::time::Instant;

use cadenza_core::bench::{evaluate, mean, pretrain_backbone, train_melody_adapter, BenchConfig, MelodyBench};

fn main() -> anyhow::Result<()> {
    let cfg: BenchConfig = match std::env::args().nth(1) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => BenchConfig::default(),
    };
    let start = Instant::now();
    let bench = MelodyBench::new(cfg)?;
    let every = |tag: &'static str| {
        move |i: usize, l: f64| {
            if i % 100 == 0 {
                eprintln!("{tag} step {i} loss {l:.4} ({:.0}s)", start.elapsed().as_secs_f64());
            }
        }
    };
    let (backbone, pre) = pretrain_backbone(&bench, every("pretrain"))?;
    eprintln!("pretrain probe {:.4} -> {:.4}", pre.probe_initial, pre.probe_final);
    let base = mean(&evaluate(&bench, &backbone, false)?);
    eprintln!("backbone accuracy {base:.3}");
    let mut report = serde_json::json!({ "backbone_accuracy": base });
    for rope in [true, false] {
        let (m, log) = train_melody_adapter(&bench, &backbone, rope, every(if rope { "rope" } else { "norope" }))?;
        let acc = mean(&evaluate(&bench, &m, true)?);
        let off = mean(&evaluate(&bench, &m, false)?);
        eprintln!("rope={rope} accuracy {acc:.3} adapter-off {off:.3} probe {:.4} -> {:.4}", log.probe_initial, log.probe_final);
        report[if rope { "rope" } else { "no_rope" }] = serde_json::json!({
            "accuracy": acc, "adapter_off": off,
            "probe_initial": log.probe_initial, "probe_final": log.probe_final,
        });
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!("total {:.0}s", start.elapsed().as_secs_f64());
    Ok(())
}
