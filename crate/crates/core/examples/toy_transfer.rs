//! Trains the toy corpus in the given modes and prints prosody consistency.
//!
//! ```text
//! cargo run --release -p pvc-core --example toy_transfer -- none adpf
//! ```

use pvc_core::model::ProsodyMode;
use pvc_core::toy::{run_mode, ToyConfig, ToyData};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let modes: Vec<ProsodyMode> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let mut cfg = ToyConfig::default();
    if let Ok(e) = std::env::var("TOY_EPOCHS") {
        cfg.training.epochs = e.parse()?;
    }
    let data = ToyData::build(&cfg)?;
    let frames: usize = data.analyses.iter().map(|a| a.mel.num_frames()).sum();
    eprintln!("{} utterances, {frames} frames", data.analyses.len());
    for mode in modes {
        let r = run_mode(&cfg, &data, mode, &mut |l| eprintln!("{mode}\t{l}"))?;
        println!(
            "{mode}\tloss {:.4}\tconsistency {:.3}\t{:.0}s\t{:?}",
            r.final_loss,
            r.mean_consistency(),
            r.seconds,
            r.consistency.iter().map(|c| (c * 100.0).round() / 100.0).collect::<Vec<_>>()
        );
    }
    Ok(())
}
