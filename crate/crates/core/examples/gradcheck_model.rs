//! Finite-difference check of every parameter of the tiny model, then the
//! same check with the silu backward rule deliberately scaled by 1.1.

use mcst::commands::{gradcheck_model, GradcheckArgs};
use mcst::model::ModelConfig;

fn main() -> mcst::Result<()> {
    let args = GradcheckArgs::default();
    let clean = gradcheck_model(ModelConfig::tiny(4), &args)?;
    for g in &clean.groups {
        println!("{:<34} {:>6}  {:.2e}", g.name, g.numel, g.max_rel_err);
    }
    println!("all groups under {:e}: {}", clean.tol, clean.passed);

    let corrupted = gradcheck_model(
        ModelConfig::tiny(4),
        &GradcheckArgs {
            corrupt: Some("silu".into()),
            ..args
        },
    )?;
    let flagged = corrupted.groups.iter().filter(|g| !g.passes(corrupted.tol)).count();
    println!("with a corrupted silu rule: {flagged} groups flagged");
    Ok(())
}
