//! End-to-end run on the synthetic smoke dataset: three teachers, their
//! diversity per checkpoint, and the full / no_dkc / rrd students.
//!
//! `cargo run --release -p hetcomp --example smoke`

use std::time::Instant;

use hetcomp::analysis::{trajectory_diversity, unpopular_items, UNPOPULAR_SHARE};
use hetcomp::data::{split, SplitRatios};
use hetcomp::distill::{distill_ablation, TrainConfig, Variant};
use hetcomp::synth::{generate, SynthConfig};
use hetcomp::teacher::{train_teacher, TeacherConfig};
use hetcomp::{EmbeddingModel, ModelKind};

fn main() -> hetcomp::Result<()> {
    let (ds, _) = split(&generate(&SynthConfig::default()), SplitRatios::default(), 0)?;
    println!("{} users, {} items, {} interactions", ds.num_users, ds.num_items, ds.num_interactions());
    let unpop = unpopular_items(&ds, UNPOPULAR_SHARE);

    let mut trajs = Vec::new();
    for kind in [ModelKind::Mf, ModelKind::Ml, ModelKind::Dnn] {
        let t0 = Instant::now();
        let run = train_teacher(&ds, &TeacherConfig::new(kind))?;
        let best = run.log[run.converged_epoch - 1].recall_valid;
        println!(
            "{kind}: T*={} of {} epochs, R@50 {best:.4}, {:.1}s",
            run.converged_epoch,
            run.log.len(),
            t0.elapsed().as_secs_f64()
        );
        for r in trajectory_diversity(&run.trajectory, &unpop, 50) {
            println!("  E{} unique {} unpopular {:.4}", r.checkpoint, r.unique, r.unpopular_fraction);
        }
        trajs.push(run.trajectory);
    }

    let cfg = TrainConfig {
        patience: None,
        eval_every: 1000,
        max_epochs: 300,
        ..Default::default()
    };
    for variant in [Variant::Full, Variant::NoDkc, Variant::Rrd] {
        let student = EmbeddingModel::new(ModelKind::Mf, ds.num_users, ds.num_items, 6, 0);
        let out = distill_ablation(variant, student, &trajs, &ds, &cfg)?;
        let last = out.log.last().expect("non-empty log");
        let converged = (0..ds.num_users).filter(|&u| out.state.all_converged(u)).count();
        println!(
            "{variant}: R@10 {:.4}  D@50 {:.4}  converged {converged}/{}",
            last.recall10_valid, last.d50, ds.num_users
        );
    }
    Ok(())
}
