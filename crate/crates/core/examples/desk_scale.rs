//! Baseline vs scheduled vs immediate adversarial training on the synthetic corpus.
//!
//! ```text
//! cargo run --release -p lane-core --example desk_scale [seed]
//! ```

use std::time::Instant;

use lane_core::corpus::{build_pairs, lexicographic_split_by_lemma, synth_corpus, SynthConfig};
use lane_core::eval::evaluate;
use lane_core::schedule::{ScheduleConfig, ScheduleMode};
use lane_core::train::{fit, TrainConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(17);
    let synth = SynthConfig {
        n_lemmas: 40,
        senses_per_lemma: 2,
        contexts_per_sense: 20,
        ambiguity: 0.8,
        seed,
        ..SynthConfig::default()
    };
    let usages = synth_corpus(&synth).unwrap();
    let pairs = build_pairs(&usages, Some(200), seed);
    let splits = lexicographic_split_by_lemma(&pairs, 500, seed).unwrap();
    println!("pairs: train {} dev {} test {}", splits.train.len(), splits.dev.len(), splits.test.len());

    let base = TrainConfig { lr: 3e-2, warmup_steps: 300, seed, ..TrainConfig::default() };
    let with_mode =
        |epochs, mode| TrainConfig { epochs, schedule: ScheduleConfig { mode, ..base.schedule }, ..base.clone() };
    let runs = [
        ("baseline", with_mode(10, ScheduleMode::None)),
        ("lane", with_mode(20, ScheduleMode::Linear)),
        ("immediate", with_mode(20, ScheduleMode::Immediate)),
    ];
    for (name, cfg) in runs {
        let t = Instant::now();
        let out = fit(&splits, &cfg).unwrap();
        let m = evaluate(&out.params, &splits.test, out.threshold, seed).unwrap();
        let last = out.log.epochs.last().unwrap();
        let norm: f64 = out.params.marker.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!(
            "{name:9} best_epoch {:2} test acc {:.3} f1 {:.3} collapse {:.3} aniso {:.3} | final dev acc {:.3} f1 {:.3} | |mu| {:.3} | {:.1}s",
            out.best_epoch, m.accuracy, m.f1, m.collapse_mean_cos, m.anisotropy, last.dev_acc, last.dev_f1, norm,
            t.elapsed().as_secs_f64()
        );
    }
}
