//! Target mAP for each critic over a few seeds on the default shifted pair.
//!
//! `cargo run --release -p dfda-core --example ablation -- [seeds] [critic...]`

use std::time::Instant;

use dfda::critic::CriticKind;
use dfda::trainer::{run_experiment, ExperimentConfig};

fn parse_critic(s: &str) -> CriticKind {
    serde_json::from_str(&format!("\"{s}\"")).unwrap_or_else(|_| panic!("unknown critic {s}"))
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let mut critics: Vec<CriticKind> = args.map(|a| parse_critic(&a)).collect();
    if critics.is_empty() {
        critics = vec![CriticKind::None, CriticKind::W2, CriticKind::Kmeans, CriticKind::Kl];
    }
    println!("critic,seed,source_map,target_map,seconds");
    for critic in critics {
        let mut total = 0.0;
        for seed in 0..seeds {
            let base = match std::env::var("DFDA_CONFIG") {
                Ok(text) => ExperimentConfig::from_json(&text).expect("config"),
                Err(_) => ExperimentConfig::default(),
            };
            let cfg = ExperimentConfig { seed, critic, ..base };
            let start = Instant::now();
            let out = run_experiment(&cfg).expect("experiment");
            let secs = start.elapsed().as_secs_f64();
            total += out.target.map;
            println!("{},{seed},{:.4},{:.4},{secs:.2}", critic.name(), out.source.map, out.target.map);
        }
        eprintln!("{} mean target mAP {:.4}", critic.name(), total / seeds as f64);
    }
}
